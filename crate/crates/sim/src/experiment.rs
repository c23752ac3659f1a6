//! Map, association and sweep experiments.

use std::path::{Path, PathBuf};

use cpgd_core::assoc::{
    iterative_rate_update, solve_ga, Association, AssociationProblem, UpdateResult, UserView,
};
use cpgd_core::channel::Point3;
use cpgd_core::decmap::{reduce_map, Clustering, DecodingMap, MapBuilder, MapSettings, Provenance};
use cpgd_core::rates::RateContext;
use cpgd_core::signaling::{build_layer_set, LayerSet};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, SweepPlane};
use crate::error::{SimError, SimResult};
use crate::mapfile::{scene_hash, MapFile};
use crate::output::{
    format_layer_rates, write_csv, write_json, ClusterRow, MapSummaryRow, RateRow, SweepRow, UserRow,
};
use crate::scene::{resolve_scene, LoadedScene};

/// Smallest GA-to-optimum ratio accepted when the exhaustive cross-check runs.
pub const GA_OPTIMUM_RATIO: f64 = 0.95;
/// Largest instance (in users) that gets the exhaustive cross-check.
pub const CROSS_CHECK_USERS: usize = 8;

/// A loaded scene with its layer set.
pub struct Setup {
    pub loaded: LoadedScene,
    pub layers: LayerSet,
    pub hash: String,
}

impl Setup {
    pub fn new(scene: &str) -> SimResult<Self> {
        Self::from_loaded(resolve_scene(scene)?)
    }

    pub fn from_loaded(loaded: LoadedScene) -> SimResult<Self> {
        let layers = build_layer_set(&loaded.scene, &loaded.layers_per_tx)?;
        let hash = scene_hash(&loaded.spec, loaded.scene.noise_std());
        Ok(Setup { loaded, layers, hash })
    }

    pub fn builder(&self, config: &ExperimentConfig, filter: usize) -> SimResult<MapBuilder<'_>> {
        let settings = MapSettings {
            filter,
            tau: config.map.tau,
            step: config.map.step,
            use_symmetry: config.map.symmetry,
        };
        Ok(MapBuilder::new(&self.loaded.scene, &self.layers, settings)?)
    }
}

/// Builds a map, solving the direct cells in parallel.
pub fn build_map_parallel(builder: &MapBuilder<'_>) -> SimResult<DecodingMap> {
    let solved = builder
        .direct_cells()
        .par_iter()
        .map(|&c| builder.solve_cell(c))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(builder.finish(solved)?)
}

pub struct MapOutcome {
    pub map: DecodingMap,
    pub clustering: Clustering,
    pub files: Vec<PathBuf>,
}

/// Builds and reduces one map per configured filter and writes
/// `map_f{k}.json`, `clusters_f{k}.csv`, `rates_f{k}.csv` and
/// `map_summary.csv` into `out`.
pub fn run_map_experiment(config: &ExperimentConfig, out: &Path) -> SimResult<Vec<MapOutcome>> {
    let setup = Setup::new(&config.scene)?;
    let mut outcomes = Vec::new();
    let mut summary = Vec::new();
    for &filter in &config.filters {
        let builder = setup.builder(config, filter)?;
        let map = build_map_parallel(&builder)?;
        let clustering = reduce_map(&map, config.map.tau_diff, config.map.tau_loss)?;
        let files = write_map_outputs(&map, &clustering, &setup.hash, config.map.tau_diff, config.map.tau_loss, out)?;
        summary.push(summary_row(&map, &clustering));
        outcomes.push(MapOutcome { map, clustering, files });
    }
    write_csv(&out.join("map_summary.csv"), &summary)?;
    Ok(outcomes)
}

pub fn summary_row(map: &DecodingMap, c: &Clustering) -> MapSummaryRow {
    MapSummaryRow {
        filter: map.settings().filter,
        cells: map.cells().len(),
        samples: c.samples,
        clusters: c.len(),
        compression_ratio: c.compression_ratio(),
        max_average_loss: c.max_average_loss,
        representative_loss: c.representative_loss,
        passes: c.passes,
    }
}

/// Writes the map file and its two CSV views; returns the paths.
pub fn write_map_outputs(
    map: &DecodingMap,
    clustering: &Clustering,
    hash: &str,
    tau_diff: f64,
    tau_loss: f64,
    out: &Path,
) -> SimResult<Vec<PathBuf>> {
    let k = map.settings().filter;
    let json = out.join(format!("map_f{k}.json"));
    MapFile::from_map(map, hash.to_string(), Some((clustering, tau_diff, tau_loss))).write(&json)?;
    let clusters = out.join(format!("clusters_f{k}.csv"));
    write_csv(&clusters, &cluster_rows(map, clustering))?;
    let rates = out.join(format!("rates_f{k}.csv"));
    write_csv(&rates, &rate_rows(map))?;
    Ok(vec![json, clusters, rates])
}

pub fn cluster_rows(map: &DecodingMap, c: &Clustering) -> Vec<ClusterRow> {
    let grid = map.grid();
    map.cells()
        .iter()
        .enumerate()
        .map(|(i, cell)| {
            let (ix, iy) = grid.coords(i);
            let cluster = c.labels[i];
            ClusterRow {
                cell: i,
                ix,
                iy,
                x: cell.position.x,
                y: cell.position.y,
                z: cell.position.z,
                outage: cell.is_outage(),
                cluster,
                representative: cluster.map(|k| c.representative(k)),
                derived_from: match cell.provenance {
                    Provenance::Derived { source, .. } => Some(source),
                    Provenance::Computed => None,
                },
            }
        })
        .collect()
}

pub fn rate_rows(map: &DecodingMap) -> Vec<RateRow> {
    map.cells()
        .iter()
        .enumerate()
        .map(|(i, cell)| {
            let (groups, min_rate, sum_rate) = match &cell.order {
                Some(o) => (o.len(), o.min_rate(), o.rates().finite_entries().map(|(_, r)| r).sum()),
                None => (0, 0.0, 0.0),
            };
            RateRow {
                cell: i,
                x: cell.position.x,
                y: cell.position.y,
                z: cell.position.z,
                outage: cell.is_outage(),
                groups,
                min_rate,
                sum_rate,
            }
        })
        .collect()
}

/// Builds user views from a map where positions fall on its grid and by
/// direct solves elsewhere.
pub struct Solver<'a> {
    pub builder: MapBuilder<'a>,
    pub map: Option<&'a DecodingMap>,
    pub config: &'a ExperimentConfig,
    noise_var: f64,
}

/// Association followed by the iterative rate update.
#[derive(Clone, Debug)]
pub struct AssociationRun {
    pub positions: Vec<Point3>,
    /// Indices (into `positions`) of users not in outage.
    pub served: Vec<usize>,
    /// Phase-one association of the served users.
    pub phase_one: Association,
    pub update: UpdateResult,
    /// Exhaustive optimum, when the cross-check ran.
    pub optimum: Option<f64>,
}

impl<'a> Solver<'a> {
    pub fn new(setup: &'a Setup, config: &'a ExperimentConfig, map: Option<&'a DecodingMap>) -> SimResult<Self> {
        let filter = map.map_or(config.filters[0], |m| m.settings().filter);
        let builder = setup.builder(config, filter)?;
        Ok(Solver {
            builder,
            map,
            config,
            noise_var: setup.loaded.scene.noise_var(),
        })
    }

    fn map_cell(&self, p: Point3) -> Option<usize> {
        let map = self.map?;
        let c = map.grid().nearest(p)?;
        let q = map.grid().position(c);
        ((q.x - p.x).abs() < 1e-9 && (q.y - p.y).abs() < 1e-9 && (q.z - p.z).abs() < 1e-9).then_some(c)
    }

    /// The user's view, or `None` in outage.
    pub fn view(&self, p: Point3) -> SimResult<Option<UserView>> {
        let ranks = self.builder.ranks_at(p);
        if let (Some(map), Some(c)) = (self.map, self.map_cell(p)) {
            let Some(order) = map.cell(c).order.clone() else {
                return Ok(None);
            };
            let ctx = map.context(c)?;
            return Ok(Some(UserView { position: p, ctx, order, ranks }));
        }
        let (gains, order) = self.builder.solve_position(p)?;
        let Some(order) = order else {
            return Ok(None);
        };
        let ctx = RateContext::new(&gains, self.builder.layout(), self.builder.stats(), self.noise_var)?;
        Ok(Some(UserView { position: p, ctx, order, ranks }))
    }

    /// Solves association and the rate update for users at `positions`.
    /// Outage users are left out; all-outage is infeasible.
    pub fn solve(&self, positions: &[Point3]) -> SimResult<AssociationRun> {
        let mut served = Vec::new();
        let mut views = Vec::new();
        for (j, &p) in positions.iter().enumerate() {
            if let Some(v) = self.view(p)? {
                served.push(j);
                views.push(v);
            }
        }
        if views.is_empty() {
            return Err(cpgd_core::Error::Infeasible("every user is in outage").into());
        }
        let layout = self.builder.layout();
        let problem = AssociationProblem::new(&views, layout)?;
        let phase_one = solve_ga(&problem, &self.config.ga_config())?;
        let mut optimum = None;
        if views.len() <= CROSS_CHECK_USERS {
            if let Some(best) = problem.exhaustive() {
                if phase_one.objective < GA_OPTIMUM_RATIO * best.objective - 1e-12 {
                    return Err(SimError::Check(format!(
                        "GA objective {} below {GA_OPTIMUM_RATIO} of the optimum {}",
                        phase_one.objective, best.objective
                    )));
                }
                optimum = Some(best.objective);
            }
        }
        let update = iterative_rate_update(
            &views,
            layout,
            &phase_one.assignment,
            &phase_one.global,
            &self.config.update_settings(),
        )?;
        Ok(AssociationRun {
            positions: positions.to_vec(),
            served,
            phase_one,
            update,
            optimum,
        })
    }

    pub fn layers_per_user(&self) -> usize {
        self.builder.layout().layers_of(0).len()
    }
}

impl AssociationRun {
    pub fn sum_rate(&self) -> f64 {
        *self.update.sum_history.last().expect("history starts with the phase-one sum")
    }

    /// Rate of served user `k` (an index into `served`).
    pub fn user_rate(&self, layout: &cpgd_core::signaling::LayerLayout, k: usize) -> f64 {
        layout.layers_of(self.phase_one.assignment[k]).map(|l| self.update.rate(l)).sum()
    }

    pub fn min_rate(&self, layout: &cpgd_core::signaling::LayerLayout) -> f64 {
        (0..self.served.len())
            .map(|k| self.user_rate(layout, k))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn user_rows(&self, layout: &cpgd_core::signaling::LayerLayout) -> Vec<UserRow> {
        let phase_one_rate = |tx: usize| -> f64 {
            layout
                .layers_of(tx)
                .map(|l| self.phase_one.global.get(l).finite().unwrap_or(0.0))
                .sum()
        };
        self.positions
            .iter()
            .enumerate()
            .map(|(j, p)| {
                let base = UserRow {
                    user: j,
                    x: p.x,
                    y: p.y,
                    z: p.z,
                    served: false,
                    tx: None,
                    depth: None,
                    phase_one_rate: 0.0,
                    rate: 0.0,
                    layer_rates: String::new(),
                };
                match self.served.binary_search(&j) {
                    Ok(k) => {
                        let tx = self.phase_one.assignment[k];
                        let layers: Vec<f64> = layout.layers_of(tx).map(|l| self.update.rate(l)).collect();
                        UserRow {
                            served: true,
                            tx: Some(tx),
                            depth: Some(self.phase_one.depths[k] + 1),
                            phase_one_rate: phase_one_rate(tx),
                            rate: layers.iter().sum(),
                            layer_rates: format_layer_rates(&layers),
                            ..base
                        }
                    }
                    Err(_) => base,
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct AssociationSummary {
    pub users: usize,
    pub served: usize,
    pub seed: u64,
    pub phase_one_sum: f64,
    pub sum_rate: f64,
    pub min_rate: f64,
    pub rounds: usize,
    pub converged: bool,
    pub exhaustive_optimum: Option<f64>,
}

impl AssociationSummary {
    pub fn new(run: &AssociationRun, layout: &cpgd_core::signaling::LayerLayout, seed: u64) -> Self {
        AssociationSummary {
            users: run.positions.len(),
            served: run.served.len(),
            seed,
            phase_one_sum: run.phase_one.objective,
            sum_rate: run.sum_rate(),
            min_rate: run.min_rate(layout),
            rounds: run.update.rounds,
            converged: run.update.converged,
            exhaustive_optimum: run.optimum,
        }
    }
}

/// Solves one association instance and writes `assoc_users.csv` and
/// `assoc_summary.json`.
pub fn run_association(
    config: &ExperimentConfig,
    positions: &[Point3],
    out: &Path,
) -> SimResult<(AssociationSummary, Vec<PathBuf>)> {
    let setup = Setup::new(&config.scene)?;
    let builder = setup.builder(config, config.filters[0])?;
    let map = build_map_parallel(&builder)?;
    let solver = Solver::new(&setup, config, Some(&map))?;
    let run = solver.solve(positions)?;
    let layout = solver.builder.layout();
    let summary = AssociationSummary::new(&run, layout, config.seed);
    let users = out.join("assoc_users.csv");
    write_csv(&users, &run.user_rows(layout))?;
    let json = out.join("assoc_summary.json");
    write_json(&json, &summary)?;
    Ok((summary, vec![users, json]))
}

/// Evaluates one sweep anchor.
pub fn sweep_anchor(solver: &Solver<'_>, plane: SweepPlane, u: f64, v: f64) -> SimResult<SweepRow> {
    let sweep = crate::config::SweepConfig {
        plane,
        ..solver.config.sweep
    };
    let anchor = sweep.anchor_point(u, v);
    let positions = solver.config.users.positions(plane, anchor);
    let mut row = SweepRow {
        plane: match plane {
            SweepPlane::Xy => "xy",
            SweepPlane::Yz => "yz",
        }
        .into(),
        u,
        v,
        x: anchor.x,
        y: anchor.y,
        z: anchor.z,
        users: positions.len(),
        served: 0,
        status: "outage".into(),
        phase_one_sum: 0.0,
        sum_rate: 0.0,
        min_rate: 0.0,
        rounds: 0,
        converged: true,
    };
    match solver.solve(&positions) {
        Ok(run) => {
            let layout = solver.builder.layout();
            row.served = run.served.len();
            row.status = "ok".into();
            row.phase_one_sum = run.phase_one.objective;
            row.sum_rate = run.sum_rate();
            row.min_rate = run.min_rate(layout);
            row.rounds = run.update.rounds;
            row.converged = run.update.converged;
        }
        Err(SimError::Model(cpgd_core::Error::Infeasible(_))) => {
            row.served = positions
                .iter()
                .map(|&p| solver.view(p).map(|v| v.is_some()))
                .collect::<SimResult<Vec<_>>>()?
                .into_iter()
                .filter(|&s| s)
                .count();
            if row.served > 0 {
                row.status = "infeasible".into();
            }
        }
        Err(e) => return Err(e),
    }
    Ok(row)
}

/// Runs the configured sweep and writes `sweep_{plane}.csv`.
pub fn run_sweep_experiment(config: &ExperimentConfig, out: &Path) -> SimResult<(Vec<SweepRow>, PathBuf)> {
    let setup = Setup::new(&config.scene)?;
    let builder = setup.builder(config, config.filters[0])?;
    let map = build_map_parallel(&builder)?;
    let solver = Solver::new(&setup, config, Some(&map))?;
    let plane = config.sweep.plane;
    let rows = config
        .sweep
        .anchors()
        .par_iter()
        .map(|&(u, v)| sweep_anchor(&solver, plane, u, v))
        .collect::<SimResult<Vec<_>>>()?;
    let name = match plane {
        SweepPlane::Xy => "sweep_xy.csv",
        SweepPlane::Yz => "sweep_yz.csv",
    };
    let path = out.join(name);
    write_csv(&path, &rows)?;
    Ok((rows, path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        let mut c = ExperimentConfig {
            scene: "corners_2x2".into(),
            ..ExperimentConfig::default()
        };
        c.map.step = 0.2;
        c.users.rows = 1;
        c.users.cols = 2;
        c.users.spacing = 0.6;
        c.ga.generations = 20;
        c
    }

    #[test]
    fn parallel_build_matches_sequential() {
        let c = small_config();
        let setup = Setup::new(&c.scene).unwrap();
        let b = setup.builder(&c, 0).unwrap();
        assert_eq!(build_map_parallel(&b).unwrap(), b.build().unwrap());
    }

    #[test]
    fn map_lookup_matches_direct_solve() {
        let c = small_config();
        let setup = Setup::new(&c.scene).unwrap();
        let b = setup.builder(&c, 0).unwrap();
        let map = build_map_parallel(&b).unwrap();
        let with_map = Solver::new(&setup, &c, Some(&map)).unwrap();
        let direct = Solver::new(&setup, &c, None).unwrap();
        for p in [Point3::new(0.2, 0.4, 2.0), Point3::new(-0.6, 1.0, 2.0)] {
            assert!(with_map.map_cell(p).is_some());
            assert_eq!(with_map.view(p).unwrap(), direct.view(p).unwrap());
        }
        assert!(with_map.map_cell(Point3::new(0.25, 0.4, 2.0)).is_none());
    }

    #[test]
    fn symmetric_pair_gets_equal_rates() {
        let c = small_config();
        let setup = Setup::new(&c.scene).unwrap();
        let solver = Solver::new(&setup, &c, None).unwrap();
        let positions = c.users.positions(SweepPlane::Xy, Point3::new(0.0, 0.3, 2.0));
        let run = solver.solve(&positions).unwrap();
        let layout = solver.builder.layout();
        assert_eq!(run.served, vec![0, 1]);
        assert!(run.optimum.is_some());
        let (a, b) = (run.user_rate(layout, 0), run.user_rate(layout, 1));
        assert!((a - b).abs() < 1e-9 * (1.0 + a), "{a} vs {b}");
        assert!(run.sum_rate() >= run.phase_one.objective - 1e-12);
    }

    #[test]
    fn far_away_users_are_in_outage() {
        let c = small_config();
        let setup = Setup::new(&c.scene).unwrap();
        let solver = Solver::new(&setup, &c, None).unwrap();
        let row = sweep_anchor(&solver, SweepPlane::Xy, 30.0, 30.0).unwrap();
        assert_eq!((row.status.as_str(), row.served, row.sum_rate), ("outage", 0, 0.0));
    }
}
