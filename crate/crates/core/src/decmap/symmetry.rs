//! Symmetries of a square transmitter array and the induced relabelling of
//! transmitters and layers.
//!
//! Coordinates are integers centered on the array center: sites use
//! half-spacing units, positions use [`GEOMETRY_QUANTUM`] units.

use alloc::vec::Vec;

use crate::channel::{Point3, TxArray, GEOMETRY_QUANTUM};
use crate::cpgd::DecodingOrder;
use crate::signaling::{LayerIndex, LayerLayout};
use crate::{Error, Result};

/// One of the eight symmetries of the square, as a signed permutation matrix
/// acting on `(u, v)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Symmetry {
    m: [[i8; 2]; 2],
}

impl Symmetry {
    pub const IDENTITY: Symmetry = Symmetry { m: [[1, 0], [0, 1]] };
    pub const ROTATE_90: Symmetry = Symmetry { m: [[0, -1], [1, 0]] };
    pub const ROTATE_180: Symmetry = Symmetry { m: [[-1, 0], [0, -1]] };
    pub const ROTATE_270: Symmetry = Symmetry { m: [[0, 1], [-1, 0]] };
    /// `(u, v) → (−u, v)`.
    pub const MIRROR_X: Symmetry = Symmetry { m: [[-1, 0], [0, 1]] };
    /// `(u, v) → (u, −v)`.
    pub const MIRROR_Y: Symmetry = Symmetry { m: [[1, 0], [0, -1]] };
    /// `(u, v) → (v, u)`.
    pub const DIAGONAL: Symmetry = Symmetry { m: [[0, 1], [1, 0]] };
    /// `(u, v) → (−v, −u)`.
    pub const ANTI_DIAGONAL: Symmetry = Symmetry { m: [[0, -1], [-1, 0]] };

    pub const ALL: [Symmetry; 8] = [
        Symmetry::IDENTITY,
        Symmetry::ROTATE_90,
        Symmetry::ROTATE_180,
        Symmetry::ROTATE_270,
        Symmetry::MIRROR_X,
        Symmetry::MIRROR_Y,
        Symmetry::DIAGONAL,
        Symmetry::ANTI_DIAGONAL,
    ];

    pub fn apply(self, (u, v): (i64, i64)) -> (i64, i64) {
        let [[a, b], [c, d]] = self.m;
        (a as i64 * u + b as i64 * v, c as i64 * u + d as i64 * v)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(self, other: Symmetry) -> Symmetry {
        let a = self.m;
        let b = other.m;
        let mut m = [[0i8; 2]; 2];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, x) in row.iter_mut().enumerate() {
                *x = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        Symmetry { m }
    }

    pub fn inverse(self) -> Symmetry {
        let [[a, b], [c, d]] = self.m;
        Symmetry { m: [[a, c], [b, d]] }
    }

    /// Whether the symmetry keeps the `u` and `v` axes (valid for rectangles).
    pub fn preserves_axes(self) -> bool {
        self.m[0][1] == 0
    }

    pub fn name(self) -> &'static str {
        match Symmetry::ALL.iter().position(|&s| s == self) {
            Some(0) => "identity",
            Some(1) => "rotate90",
            Some(2) => "rotate180",
            Some(3) => "rotate270",
            Some(4) => "mirror_x",
            Some(5) => "mirror_y",
            Some(6) => "diagonal",
            _ => "anti_diagonal",
        }
    }

    pub fn from_name(name: &str) -> Option<Symmetry> {
        Symmetry::ALL.into_iter().find(|s| s.name() == name)
    }
}

/// The three reflections used to relabel decoding orders through an index
/// matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reflection {
    /// About the main diagonal `y = x` through the array center.
    Diagonal,
    /// Left-right flip: columns reversed.
    Horizontal,
    /// Up-down flip: rows reversed.
    Vertical,
}

impl Reflection {
    /// The geometric transform of the receiver position.
    pub fn symmetry(self) -> Symmetry {
        match self {
            Reflection::Diagonal => Symmetry::DIAGONAL,
            Reflection::Horizontal => Symmetry::MIRROR_X,
            Reflection::Vertical => Symmetry::MIRROR_Y,
        }
    }
}

/// `N_h × N_v` matrix of 1-based site indices as laid out in the array:
/// row 1 is the highest `y`, column 1 the lowest `x`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<usize>,
}

impl IndexMatrix {
    pub fn from_array(array: &TxArray) -> Self {
        let (rows, cols) = (array.rows, array.cols);
        let mut data = Vec::with_capacity(rows * cols);
        for i in 1..=rows {
            for j in 1..=cols {
                data.push(array.site_at(j - 1, rows - i) + 1);
            }
        }
        IndexMatrix { rows, cols, data }
    }

    /// Builds a matrix from rows; entries must be a permutation of `1..=n`.
    pub fn from_rows(rows: &[Vec<usize>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
            return Err(Error::InvalidArgument("index matrix must be rectangular"));
        }
        let data: Vec<usize> = rows.iter().flatten().copied().collect();
        let mut seen = alloc::vec![false; data.len()];
        for &x in &data {
            if x == 0 || x > data.len() || seen[x - 1] {
                return Err(Error::InvalidArgument("index matrix entries must be 1..=n once each"));
            }
            seen[x - 1] = true;
        }
        Ok(IndexMatrix { rows: r, cols: c, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// `A(i, j)`, 1-based.
    pub fn get(&self, i: usize, j: usize) -> usize {
        self.data[(i - 1) * self.cols + (j - 1)]
    }

    /// `π_A⁻¹`: the 1-based `(i, j)` holding `index`.
    pub fn locate(&self, index: usize) -> Option<(usize, usize)> {
        self.data
            .iter()
            .position(|&x| x == index)
            .map(|p| (p / self.cols + 1, p % self.cols + 1))
    }

    /// `A_p` for a reflection.
    pub fn reflected(&self, reflection: Reflection) -> Result<IndexMatrix> {
        let (n, m) = (self.rows, self.cols);
        if reflection == Reflection::Diagonal && n != m {
            return Err(Error::InvalidArgument("diagonal reflection needs a square array"));
        }
        let mut data = alloc::vec![0; n * m];
        for i in 1..=n {
            for j in 1..=m {
                let v = match reflection {
                    Reflection::Diagonal => self.get(n + 1 - j, n + 1 - i),
                    Reflection::Horizontal => self.get(i, m + 1 - j),
                    Reflection::Vertical => self.get(n + 1 - i, j),
                };
                data[(i - 1) * m + (j - 1)] = v;
            }
        }
        Ok(IndexMatrix {
            rows: n,
            cols: m,
            data,
        })
    }

    /// 0-based site permutation `s → A_p(π_A⁻¹(s))`.
    pub fn site_permutation(&self, reflection: Reflection) -> Result<Vec<usize>> {
        let ap = self.reflected(reflection)?;
        Ok((1..=self.data.len())
            .map(|s| {
                let (i, j) = self.locate(s).expect("index matrix is a permutation");
                ap.get(i, j) - 1
            })
            .collect())
    }
}

/// Site permutation induced by moving every site `p` to `T(p)`.
pub fn site_permutation(array: &TxArray, sym: Symmetry) -> Result<Vec<usize>> {
    if !sym.preserves_axes() && !array.is_square() {
        return Err(Error::InvalidArgument("transform needs a square array"));
    }
    let (cols, rows) = (array.cols as i64, array.rows as i64);
    Ok((0..array.sites())
        .map(|site| {
            let (c, r) = array.site_cell(site);
            let (a, b) = sym.apply((2 * c as i64 - (cols - 1), 2 * r as i64 - (rows - 1)));
            array.site_at(((a + cols - 1) / 2) as usize, ((b + rows - 1) / 2) as usize)
        })
        .collect())
}

/// Lifts a site permutation to transmitters (`site * colors + slot`).
pub fn transmitter_permutation(site_perm: &[usize], colors: usize) -> Vec<usize> {
    (0..site_perm.len() * colors)
        .map(|tx| site_perm[tx / colors] * colors + tx % colors)
        .collect()
}

/// Lifts a transmitter permutation to layers, keeping the layer number.
pub fn layer_permutation(layout: &LayerLayout, tx_perm: &[usize]) -> Result<Vec<usize>> {
    if tx_perm.len() != layout.transmitters() {
        return Err(Error::InvalidArgument("permutation length mismatch"));
    }
    (0..layout.len())
        .map(|lin| {
            let LayerIndex { tx, layer } = layout.split(lin);
            let target = tx_perm[tx];
            if layout.layers_of(target).len() != layout.layers_of(tx).len() {
                return Err(Error::InvalidArgument("transmitters have different layer counts"));
            }
            Ok(layout.lin(LayerIndex { tx: target, layer }))
        })
        .collect()
}

/// Relabels a decoding order by an index-matrix reflection.
pub fn symmetry_transform(
    order: &DecodingOrder,
    matrix: &IndexMatrix,
    reflection: Reflection,
    layout: &LayerLayout,
    colors: usize,
) -> Result<DecodingOrder> {
    let sites = matrix.site_permutation(reflection)?;
    let txs = transmitter_permutation(&sites, colors);
    order.permuted(&layer_permutation(layout, &txs)?)
}

/// Position relative to `center` in quantum units.
pub fn centered_coords(center: Point3, p: Point3) -> (i64, i64) {
    let q = |d: f64| libm::round(d / GEOMETRY_QUANTUM) as i64;
    (q(p.x - center.x), q(p.y - center.y))
}

/// First symmetry (in [`Symmetry::ALL`] order) mapping `(u, v)` into the
/// fundamental wedge `0 ≤ u ≤ v`.
pub fn canonical_frame((u, v): (i64, i64)) -> Symmetry {
    Symmetry::ALL
        .into_iter()
        .find(|s| {
            let (a, b) = s.apply((u, v));
            0 <= a && a <= b
        })
        .expect("the wedge is a fundamental domain")
}

/// Every symmetry of a square array with its transmitter and layer
/// permutations precomputed.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetryTables {
    center: Point3,
    tx: Vec<Vec<usize>>,
    layers: Vec<Vec<usize>>,
}

impl SymmetryTables {
    pub fn new(array: &TxArray, layout: &LayerLayout) -> Result<Self> {
        if !array.is_square() {
            return Err(Error::InvalidArgument("symmetry tables need a square array"));
        }
        let colors = array.site_colors.len();
        let mut tx = Vec::with_capacity(8);
        let mut layers = Vec::with_capacity(8);
        for sym in Symmetry::ALL {
            let t = transmitter_permutation(&site_permutation(array, sym)?, colors);
            layers.push(layer_permutation(layout, &t)?);
            tx.push(t);
        }
        Ok(SymmetryTables {
            center: array.center(),
            tx,
            layers,
        })
    }

    fn slot(sym: Symmetry) -> usize {
        Symmetry::ALL.iter().position(|&s| s == sym).expect("group element")
    }

    pub fn center(&self) -> Point3 {
        self.center
    }

    pub fn transmitters(&self, sym: Symmetry) -> &[usize] {
        &self.tx[Self::slot(sym)]
    }

    pub fn layers(&self, sym: Symmetry) -> &[usize] {
        &self.layers[Self::slot(sym)]
    }

    /// Tie-break ranks at `p`: layer indices in the canonical frame of `p`.
    pub fn ranks_at(&self, p: Point3) -> Vec<u32> {
        let frame = canonical_frame(centered_coords(self.center, p));
        self.layers(frame).iter().map(|&l| l as u32).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::RateVector;
    use alloc::vec;

    fn fig2() -> IndexMatrix {
        IndexMatrix::from_rows(&[vec![2, 4], vec![1, 3]]).unwrap()
    }

    fn single_layer_order(txs: &[usize]) -> DecodingOrder {
        let groups = txs.iter().map(|&t| vec![t - 1]).collect();
        DecodingOrder::new(groups, RateVector::from_finite(&[1.0, 2.0, 3.0, 4.0])).unwrap()
    }

    fn txs_of(order: &DecodingOrder) -> Vec<usize> {
        order.groups().iter().map(|g| g[0] + 1).collect()
    }

    fn array(n: usize) -> TxArray {
        TxArray {
            rows: n,
            cols: n,
            spacing_x: 0.6,
            spacing_y: 0.6,
            origin: Point3::new(0.0, 0.0, 0.0),
            site_colors: vec![0],
        }
    }

    #[test]
    fn array_index_matrix_matches_the_two_by_two_example() {
        assert_eq!(IndexMatrix::from_array(&array(2)), fig2());
    }

    #[test]
    fn reflected_matrices() {
        let a = fig2();
        let rows = |m: IndexMatrix| [[m.get(1, 1), m.get(1, 2)], [m.get(2, 1), m.get(2, 2)]];
        assert_eq!(rows(a.reflected(Reflection::Diagonal).unwrap()), [[3, 4], [1, 2]]);
        assert_eq!(rows(a.reflected(Reflection::Horizontal).unwrap()), [[4, 2], [3, 1]]);
        assert_eq!(rows(a.reflected(Reflection::Vertical).unwrap()), [[1, 3], [2, 4]]);
    }

    #[test]
    fn worked_example_orders() {
        let a = fig2();
        let layout = LayerLayout::uniform(4, 1).unwrap();
        let q1 = single_layer_order(&[4, 2, 3, 1]);
        let q2 = symmetry_transform(&q1, &a, Reflection::Diagonal, &layout, 1).unwrap();
        assert_eq!(txs_of(&q2), vec![4, 3, 2, 1]);
        let q4 = symmetry_transform(&q1, &a, Reflection::Horizontal, &layout, 1).unwrap();
        assert_eq!(txs_of(&q4), vec![2, 4, 1, 3]);
        let q3 = symmetry_transform(&q2, &a, Reflection::Vertical, &layout, 1).unwrap();
        assert_eq!(txs_of(&q3), vec![3, 4, 1, 2]);
    }

    #[test]
    fn reflections_are_involutions() {
        let a = fig2();
        let layout = LayerLayout::uniform(4, 1).unwrap();
        let q = single_layer_order(&[4, 2, 3, 1]);
        for r in [Reflection::Diagonal, Reflection::Horizontal, Reflection::Vertical] {
            let back = symmetry_transform(
                &symmetry_transform(&q, &a, r, &layout, 1).unwrap(),
                &a,
                r,
                &layout,
                1,
            )
            .unwrap();
            assert_eq!(back, q);
        }
    }

    #[test]
    fn diagonal_needs_square_matrix() {
        let a = IndexMatrix::from_rows(&[vec![1, 2]]).unwrap();
        assert!(a.reflected(Reflection::Diagonal).is_err());
        assert!(a.reflected(Reflection::Horizontal).is_ok());
    }

    #[test]
    fn index_matrix_reflections_match_geometric_symmetries() {
        for n in [2, 3, 4] {
            let arr = array(n);
            let a = IndexMatrix::from_array(&arr);
            for r in [Reflection::Diagonal, Reflection::Horizontal, Reflection::Vertical] {
                assert_eq!(
                    a.site_permutation(r).unwrap(),
                    site_permutation(&arr, r.symmetry()).unwrap(),
                    "n={n} {r:?}"
                );
            }
        }
    }

    #[test]
    fn group_laws() {
        for s in Symmetry::ALL {
            assert_eq!(s.compose(s.inverse()), Symmetry::IDENTITY);
            assert_eq!(Symmetry::from_name(s.name()), Some(s));
            for t in Symmetry::ALL {
                let st = s.compose(t);
                assert!(Symmetry::ALL.contains(&st));
                assert_eq!(st.apply((3, 7)), s.apply(t.apply((3, 7))));
            }
        }
    }

    #[test]
    fn canonical_frame_lands_in_wedge() {
        for u in -4..=4 {
            for v in -4..=4 {
                let (a, b) = canonical_frame((u, v)).apply((u, v));
                assert!(0 <= a && a <= b);
            }
        }
        assert_eq!(canonical_frame((1, 3)), Symmetry::IDENTITY);
    }

    #[test]
    fn ranks_are_equivariant() {
        let arr = array(4);
        let layout = LayerLayout::uniform(16, 2).unwrap();
        let tables = SymmetryTables::new(&arr, &layout).unwrap();
        let c = arr.center();
        let s = Point3::new(c.x + 0.1, c.y + 0.3, 2.0);
        let rs = tables.ranks_at(s);
        for sym in Symmetry::ALL {
            let (u, v) = sym.apply((1, 3));
            let x = Point3::new(c.x + 0.1 * u as f64, c.y + 0.1 * v as f64, 2.0);
            let rx = tables.ranks_at(x);
            let perm = tables.layers(sym);
            for l in 0..layout.len() {
                assert_eq!(rx[perm[l]], rs[l]);
            }
        }
    }
}
