//! Position-indexed decoding maps over the receiver plane.

mod cluster;
mod symmetry;

pub use cluster::{reduce_map, reduce_points, Clustering};
pub use symmetry::{
    canonical_frame, centered_coords, layer_permutation, site_permutation, symmetry_transform,
    transmitter_permutation, IndexMatrix, Reflection, Symmetry, SymmetryTables,
};

use alloc::vec::Vec;

use crate::channel::{gain_vector, Point3, ReceiverPlane, Scene};
use crate::cpgd::{self, greedy_order_ranked, identity_ranks, DecodingOrder};
use crate::math;
use crate::rates::RateContext;
use crate::signaling::{LayerLayout, LayerSet, LayerStats};
use crate::{Error, Result};

/// Corner-inclusive sampling grid. Cell `iy * nx + ix` sits at
/// `(x0 + ix·step, y0 + iy·step, z)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub x0: f64,
    pub y0: f64,
    pub z: f64,
    pub step: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Grid {
    pub fn over_plane(plane: &ReceiverPlane, step: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidParameter("sampling gap must be positive"));
        }
        let count = |extent: f64| libm::floor(extent / step + 1e-9) as usize + 1;
        Ok(Grid {
            x0: plane.x0,
            y0: plane.y0,
            z: plane.z,
            step,
            nx: count(plane.width),
            ny: count(plane.length),
        })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn coords(&self, cell: usize) -> (usize, usize) {
        (cell % self.nx, cell / self.nx)
    }

    pub fn position(&self, cell: usize) -> Point3 {
        let (ix, iy) = self.coords(cell);
        Point3::new(
            self.x0 + ix as f64 * self.step,
            self.y0 + iy as f64 * self.step,
            self.z,
        )
    }

    /// The grid cell within `step/2` of `p` in `x` and `y`.
    pub fn nearest(&self, p: Point3) -> Option<usize> {
        let fx = (p.x - self.x0) / self.step;
        let fy = (p.y - self.y0) / self.step;
        let (ix, iy) = (libm::round(fx), libm::round(fy));
        if ix < 0.0 || iy < 0.0 || ix as usize >= self.nx || iy as usize >= self.ny {
            return None;
        }
        if math::fabs(fx - ix) > 1e-6 || math::fabs(fy - iy) > 1e-6 {
            return None;
        }
        Some(self.cell(ix as usize, iy as usize))
    }
}

/// How a map cell was obtained.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Provenance {
    Computed,
    /// Relabelled copy of `source` under `transform`.
    Derived { source: usize, transform: Symmetry },
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapCell {
    pub position: Point3,
    /// Per-transmitter gains after negligible-gain zeroing.
    pub gains: Vec<f64>,
    /// `None` marks an outage (no detectable layer).
    pub order: Option<DecodingOrder>,
    pub provenance: Provenance,
}

impl MapCell {
    pub fn is_outage(&self) -> bool {
        self.order.is_none()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapSettings {
    pub filter: usize,
    pub tau: usize,
    pub step: f64,
    pub use_symmetry: bool,
}

/// Decoding orders and local rates for every grid cell through one filter.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodingMap {
    settings: MapSettings,
    grid: Grid,
    noise_var: f64,
    layout: LayerLayout,
    stats: Vec<LayerStats>,
    cells: Vec<MapCell>,
}

impl DecodingMap {
    /// Reassembles a map, e.g. after deserialization.
    pub fn from_parts(
        settings: MapSettings,
        grid: Grid,
        noise_var: f64,
        layout: LayerLayout,
        stats: Vec<LayerStats>,
        cells: Vec<MapCell>,
    ) -> Result<Self> {
        if cells.len() != grid.len() || stats.len() != layout.len() {
            return Err(Error::InvalidArgument("map parts have inconsistent sizes"));
        }
        for cell in &cells {
            if cell.gains.len() != layout.transmitters() {
                return Err(Error::InvalidArgument("cell gain vector has the wrong length"));
            }
            if let Some(order) = &cell.order {
                if order.layer_count() != layout.len() {
                    return Err(Error::InvalidArgument("cell order has the wrong layer count"));
                }
            }
        }
        Ok(DecodingMap {
            settings,
            grid,
            noise_var,
            layout,
            stats,
            cells,
        })
    }

    pub fn settings(&self) -> &MapSettings {
        &self.settings
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn layout(&self) -> &LayerLayout {
        &self.layout
    }

    pub fn stats(&self) -> &[LayerStats] {
        &self.stats
    }

    pub fn cells(&self) -> &[MapCell] {
        &self.cells
    }

    pub fn cell(&self, index: usize) -> &MapCell {
        &self.cells[index]
    }

    /// Non-outage cell indices, ascending.
    pub fn solved_cells(&self) -> Vec<usize> {
        (0..self.cells.len())
            .filter(|&c| !self.cells[c].is_outage())
            .collect()
    }

    /// Rate context of a cell.
    pub fn context(&self, cell: usize) -> Result<RateContext> {
        RateContext::new(&self.cells[cell].gains, &self.layout, &self.stats, self.noise_var)
    }
}

/// Builds a map cell by cell. Direct cells can be solved independently (and in
/// parallel); [`MapBuilder::finish`] fills in the symmetry-derived rest.
pub struct MapBuilder<'a> {
    scene: &'a Scene,
    layout: LayerLayout,
    stats: Vec<LayerStats>,
    settings: MapSettings,
    grid: Grid,
    tables: Option<SymmetryTables>,
}

enum CellRole {
    Direct,
    Derived { source: usize, transform: Symmetry },
}

impl<'a> MapBuilder<'a> {
    pub fn new(scene: &'a Scene, layers: &LayerSet, settings: MapSettings) -> Result<Self> {
        if settings.filter >= scene.filters().len() {
            return Err(Error::InvalidArgument("filter index out of range"));
        }
        cpgd::check_tau(settings.tau)?;
        if layers.layout().transmitters() != scene.transmitters().len() {
            return Err(Error::InvalidArgument("layer set does not match the scene"));
        }
        let grid = Grid::over_plane(scene.plane(), settings.step)?;
        let tables = match scene.array() {
            Some(array) if scene.has_square_symmetry() && layers.layout().is_uniform() => {
                Some(SymmetryTables::new(array, layers.layout())?)
            }
            _ => None,
        };
        let builder = MapBuilder {
            scene,
            layout: layers.layout().clone(),
            stats: layers.stats(),
            settings,
            grid,
            tables,
        };
        if settings.use_symmetry && !builder.grid_is_symmetric() {
            return Err(Error::InvalidArgument(
                "symmetry reduction needs a square array centered on a square grid with uniform power",
            ));
        }
        Ok(builder)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn layout(&self) -> &LayerLayout {
        &self.layout
    }

    pub fn stats(&self) -> &[LayerStats] {
        &self.stats
    }

    fn grid_is_symmetric(&self) -> bool {
        let Some(tables) = &self.tables else {
            return false;
        };
        let g = &self.grid;
        let c = tables.center();
        let half = 0.5 * (g.nx - 1) as f64 * g.step;
        g.nx == g.ny
            && math::fabs(g.x0 + half - c.x) < 1e-9
            && math::fabs(g.y0 + half - c.y) < 1e-9
    }

    /// Cell coordinates about the grid center in half-steps.
    fn half_steps(&self, cell: usize) -> (i64, i64) {
        let (ix, iy) = self.grid.coords(cell);
        (
            2 * ix as i64 - (self.grid.nx as i64 - 1),
            2 * iy as i64 - (self.grid.ny as i64 - 1),
        )
    }

    fn role(&self, cell: usize) -> CellRole {
        if !self.settings.use_symmetry {
            return CellRole::Direct;
        }
        let (a, b) = self.half_steps(cell);
        let on_line = a == 0 || b == 0 || a.abs() == b.abs();
        if on_line || (0 < a && a < b) {
            return CellRole::Direct;
        }
        let src = (a.abs().min(b.abs()), a.abs().max(b.abs()));
        let transform = Symmetry::ALL
            .into_iter()
            .find(|s| s.apply(src) == (a, b))
            .expect("every off-line cell has a wedge preimage");
        let ix = ((src.0 + self.grid.nx as i64 - 1) / 2) as usize;
        let iy = ((src.1 + self.grid.ny as i64 - 1) / 2) as usize;
        CellRole::Derived {
            source: self.grid.cell(ix, iy),
            transform,
        }
    }

    /// Cells that must be solved directly, ascending.
    pub fn direct_cells(&self) -> Vec<usize> {
        (0..self.grid.len())
            .filter(|&c| matches!(self.role(c), CellRole::Direct))
            .collect()
    }

    /// Tie-break ranks for a receiver at `p`.
    pub fn ranks_at(&self, p: Point3) -> Vec<u32> {
        match &self.tables {
            Some(t) => t.ranks_at(p),
            None => identity_ranks(self.layout.len()),
        }
    }

    /// Gains and greedy order at an arbitrary position (`None` on outage).
    pub fn solve_position(&self, p: Point3) -> Result<(Vec<f64>, Option<DecodingOrder>)> {
        let gains = gain_vector(self.scene, p, self.settings.filter)?;
        let ctx = RateContext::new(&gains, &self.layout, &self.stats, self.scene.noise_var())?;
        let order = match greedy_order_ranked(&ctx, self.settings.tau, &self.ranks_at(p)) {
            Ok(order) => Some(order),
            Err(Error::Outage) => None,
            Err(e) => return Err(e),
        };
        Ok((gains, order))
    }

    pub fn solve_cell(&self, cell: usize) -> Result<MapCell> {
        let position = self.grid.position(cell);
        let (gains, order) = self.solve_position(position)?;
        Ok(MapCell {
            position,
            gains,
            order,
            provenance: Provenance::Computed,
        })
    }

    /// Assembles the map from the solved direct cells (in
    /// [`MapBuilder::direct_cells`] order).
    pub fn finish(&self, solved: Vec<MapCell>) -> Result<DecodingMap> {
        let direct = self.direct_cells();
        if solved.len() != direct.len() {
            return Err(Error::InvalidArgument("solved cells do not match the direct cells"));
        }
        let mut cells: Vec<Option<MapCell>> = alloc::vec![None; self.grid.len()];
        for (c, cell) in direct.into_iter().zip(solved) {
            cells[c] = Some(cell);
        }
        for c in 0..self.grid.len() {
            if let CellRole::Derived { source, transform } = self.role(c) {
                let tables = self.tables.as_ref().expect("symmetry tables");
                let src = cells[source].as_ref().expect("wedge cells are direct");
                let tx = tables.transmitters(transform);
                let mut gains = alloc::vec![0.0; src.gains.len()];
                for (t, &g) in src.gains.iter().enumerate() {
                    gains[tx[t]] = g;
                }
                let order = match &src.order {
                    Some(o) => Some(o.permuted(tables.layers(transform))?),
                    None => None,
                };
                cells[c] = Some(MapCell {
                    position: self.grid.position(c),
                    gains,
                    order,
                    provenance: Provenance::Derived { source, transform },
                });
            }
        }
        DecodingMap::from_parts(
            self.settings,
            self.grid,
            self.scene.noise_var(),
            self.layout.clone(),
            self.stats.clone(),
            cells.into_iter().map(|c| c.expect("every cell assigned")).collect(),
        )
    }

    /// Sequential build.
    pub fn build(&self) -> Result<DecodingMap> {
        let solved = self
            .direct_cells()
            .into_iter()
            .map(|c| self.solve_cell(c))
            .collect::<Result<Vec<_>>>()?;
        self.finish(solved)
    }
}

/// Builds the decoding map of `scene` through `settings.filter`.
pub fn build_map(scene: &Scene, layers: &LayerSet, settings: MapSettings) -> Result<DecodingMap> {
    MapBuilder::new(scene, layers, settings)?.build()
}

/// `‖r₂ − ψ(h₂, σ², Q¹)‖₂ / ‖r₂‖₂`: the relative rate change at cell `b` when
/// it uses the decoding order of cell `a`.
pub fn normalized_distance(map: &DecodingMap, a: usize, b: usize) -> Result<f64> {
    let (Some(qa), Some(qb)) = (&map.cell(a).order, &map.cell(b).order) else {
        return Err(Error::IncompatiblePositions);
    };
    if a == b {
        return Ok(0.0);
    }
    if qa.layers() != qb.layers() {
        return Err(Error::IncompatiblePositions);
    }
    let ctx = map.context(b)?;
    let psi = cpgd::rates_under_fixed_order(&ctx, qa.groups())?;
    Ok(relative_distance(qb, &psi))
}

pub(crate) fn relative_distance(own: &DecodingOrder, other: &crate::rates::RateVector) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (l, r) in own.rates().finite_entries() {
        let p = other.get(l).finite().unwrap_or(0.0);
        num += (r - p) * (r - p);
        den += r * r;
    }
    if den == 0.0 {
        return if num == 0.0 { 0.0 } else { f64::INFINITY };
    }
    math::sqrt(num) / math::sqrt(den)
}
