//! Experiment configuration (TOML).
//!
//! ```toml
//! scene = "array_4x4"        # bundled scene name or path to a scene file
//! out = "out"
//! seed = 1
//! filters = [0]
//!
//! [map]
//! step = 0.1
//! tau = 1
//! tau_diff = 1e-5
//! tau_loss = 0.1
//! symmetry = true
//!
//! [users]
//! rows = 4
//! cols = 4
//! spacing = 0.2
//!
//! [sweep]
//! plane = "xy"               # "xy": anchor (u, v, fixed); "yz": anchor (fixed, u, v)
//! u = [-1.0, 1.0]
//! v = [-1.0, 1.0]            # [1.0, 2.4] on "yz"
//! step = 0.1
//! fixed = 2.0                # z on "xy"; 0.3 (x) on "yz"
//!
//! [ga]
//! population = 64
//! generations = 200
//! crossover_rate = 0.8
//! mutation_rate = 0.05
//! elitism = 2
//!
//! [update]
//! epsilon = 1e-6
//! max_rounds = 50
//! ```
//!
//! Every section and field is optional; the values above are the defaults.

use std::path::{Path, PathBuf};

use cpgd_core::assoc::{GaConfig, UpdateSettings};
use cpgd_core::channel::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{SimError, SimResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scene: String,
    pub out: PathBuf,
    pub seed: u64,
    pub filters: Vec<usize>,
    pub map: MapConfig,
    pub users: UserGrid,
    pub sweep: SweepConfig,
    pub ga: GaSection,
    pub update: UpdateSection,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapConfig {
    pub step: f64,
    pub tau: usize,
    pub tau_diff: f64,
    pub tau_loss: f64,
    pub symmetry: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UserGrid {
    pub rows: usize,
    pub cols: usize,
    pub spacing: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepPlane {
    Xy,
    Yz,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub plane: SweepPlane,
    pub u: Option<[f64; 2]>,
    pub v: Option<[f64; 2]>,
    pub step: f64,
    pub fixed: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaSection {
    pub population: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub elitism: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UpdateSection {
    pub epsilon: f64,
    pub max_rounds: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scene: "array_4x4".into(),
            out: "out".into(),
            seed: 1,
            filters: vec![0],
            map: MapConfig::default(),
            users: UserGrid::default(),
            sweep: SweepConfig::default(),
            ga: GaSection::default(),
            update: UpdateSection::default(),
        }
    }
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig {
            step: 0.1,
            tau: 1,
            tau_diff: 1e-5,
            tau_loss: 0.1,
            symmetry: true,
        }
    }
}

impl Default for UserGrid {
    fn default() -> Self {
        UserGrid {
            rows: 4,
            cols: 4,
            spacing: 0.2,
        }
    }
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            plane: SweepPlane::Xy,
            u: None,
            v: None,
            step: 0.1,
            fixed: None,
        }
    }
}

impl Default for GaSection {
    fn default() -> Self {
        let d = GaConfig::default();
        GaSection {
            population: d.population,
            generations: d.generations,
            crossover_rate: d.crossover_rate,
            mutation_rate: d.mutation_rate,
            elitism: d.elitism,
        }
    }
}

impl Default for UpdateSection {
    fn default() -> Self {
        let d = UpdateSettings::default();
        UpdateSection {
            epsilon: d.epsilon,
            max_rounds: d.max_rounds,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> SimResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        toml::from_str(&text).map_err(|e| SimError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn validate(&self) -> SimResult<()> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if crate::scene::bundled_scene(&self.scene).is_none() && !Path::new(&self.scene).is_file() {
            return Err(SimError::Config(format!(
                "scene {:?} is neither a bundled scene nor a file",
                self.scene
            )));
        }
        if !(self.map.step > 0.0) || !(self.sweep.step > 0.0) || !(self.users.spacing > 0.0) {
            return bad("steps and spacings must be positive");
        }
        if !(self.map.tau_diff > 0.0 && self.map.tau_loss > 0.0) {
            return bad("clustering thresholds must be positive");
        }
        let (u, v) = (self.sweep.u_range(), self.sweep.v_range());
        if !(u[0] <= u[1] && v[0] <= v[1]) {
            return bad("sweep ranges must be ordered");
        }
        if self.users.rows == 0 || self.users.cols == 0 {
            return bad("user grid must be non-empty");
        }
        if self.filters.is_empty() {
            return bad("at least one filter is required");
        }
        if !(self.update.epsilon > 0.0) || self.update.max_rounds == 0 {
            return bad("update needs epsilon > 0 and max_rounds >= 1");
        }
        self.ga_config().validate()?;
        Ok(())
    }

    pub fn ga_config(&self) -> GaConfig {
        GaConfig {
            population: self.ga.population,
            generations: self.ga.generations,
            crossover_rate: self.ga.crossover_rate,
            mutation_rate: self.ga.mutation_rate,
            elitism: self.ga.elitism,
            seed: self.seed,
        }
    }

    pub fn update_settings(&self) -> UpdateSettings {
        UpdateSettings {
            tau: self.map.tau,
            epsilon: self.update.epsilon,
            max_rounds: self.update.max_rounds,
        }
    }
}

impl SweepConfig {
    /// Anchor range along the first in-plane axis (x on `xy`, y on `yz`).
    pub fn u_range(&self) -> [f64; 2] {
        self.u.unwrap_or([-1.0, 1.0])
    }

    /// Anchor range along the second in-plane axis (y on `xy`, z on `yz`).
    pub fn v_range(&self) -> [f64; 2] {
        self.v.unwrap_or(match self.plane {
            SweepPlane::Xy => [-1.0, 1.0],
            SweepPlane::Yz => [1.0, 2.4],
        })
    }

    /// The coordinate held fixed (z on `xy`, x on `yz`).
    pub fn fixed_coord(&self) -> f64 {
        self.fixed.unwrap_or(match self.plane {
            SweepPlane::Xy => 2.0,
            SweepPlane::Yz => 0.3,
        })
    }

    /// Anchor values along one axis, `lo..=hi` by `step`.
    pub fn axis(range: [f64; 2], step: f64) -> Vec<f64> {
        let n = ((range[1] - range[0]) / step + 1e-9).floor() as usize + 1;
        (0..n).map(|i| snap(range[0] + i as f64 * step)).collect()
    }

    /// `(u, v)` anchors, `v` outer and `u` inner.
    pub fn anchors(&self) -> Vec<(f64, f64)> {
        let us = Self::axis(self.u_range(), self.step);
        let vs = Self::axis(self.v_range(), self.step);
        vs.iter().flat_map(|&v| us.iter().map(move |&u| (u, v))).collect()
    }

    pub fn anchor_point(&self, u: f64, v: f64) -> Point3 {
        match self.plane {
            SweepPlane::Xy => Point3::new(u, v, self.fixed_coord()),
            SweepPlane::Yz => Point3::new(self.fixed_coord(), u, v),
        }
    }
}

impl UserGrid {
    /// User positions for an anchor (the lowest-coordinate user), row-major.
    /// On the `xy` plane the grid spans x and y; on `yz` it spans y and z.
    pub fn positions(&self, plane: SweepPlane, anchor: Point3) -> Vec<Point3> {
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                let (du, dv) = (c as f64 * self.spacing, r as f64 * self.spacing);
                out.push(match plane {
                    SweepPlane::Xy => Point3::new(snap(anchor.x + du), snap(anchor.y + dv), anchor.z),
                    SweepPlane::Yz => Point3::new(anchor.x, snap(anchor.y + du), snap(anchor.z + dv)),
                });
            }
        }
        out
    }
}

/// Rounds to 1e-9 so that sweep coordinates hit grid positions exactly.
fn snap(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}
