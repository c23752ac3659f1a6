//! Scene geometry and optical link gains.
//!
//! Coordinates are meters with `z` measured downwards from the transmitter
//! (ceiling) plane: transmitters emit towards `+z`, receivers look back
//! towards `-z`. With both normals vertical the radiance angle and the
//! incidence angle coincide.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::math::{self, cos, normal_interval_mass, sin, std_normal_quantile};
use crate::{Error, Result};

/// Gains below this fraction of the strongest gain at a position are zeroed.
pub const NEGLIGIBLE_GAIN_RATIO: f64 = 1e-6;

/// Displacements are snapped to this grid (meters) before evaluating gains, so
/// that mirrored geometries produce bit-identical gains.
pub const GEOMETRY_QUANTUM: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }
}

/// Wavelength interval in nm. Either bound may be infinite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Passband {
    pub lo_nm: f64,
    pub hi_nm: f64,
}

impl Passband {
    pub const fn new(lo_nm: f64, hi_nm: f64) -> Self {
        Passband { lo_nm, hi_nm }
    }

    pub const fn everything() -> Self {
        Passband::new(f64::NEG_INFINITY, f64::INFINITY)
    }
}

/// An LED color modeled as a Gaussian spectrum whose out-of-band leakage is
/// split evenly between both tails.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColorBand {
    pub band: Passband,
    pub leakage: f64,
    pub mean_nm: f64,
    pub std_nm: f64,
}

impl ColorBand {
    /// Builds the band and solves for the spectrum: `μ` is the band center and
    /// `σ` puts mass `leakage / 2` above the upper band edge.
    pub fn derive(lo_nm: f64, hi_nm: f64, leakage: f64) -> Result<Self> {
        if !(lo_nm.is_finite() && hi_nm.is_finite()) || lo_nm >= hi_nm {
            return Err(Error::InvalidParameter("color band must satisfy lo < hi"));
        }
        if !(leakage > 0.0 && leakage < 1.0) {
            return Err(Error::InvalidParameter("leakage must lie in (0, 1)"));
        }
        let mean_nm = 0.5 * (lo_nm + hi_nm);
        let z = std_normal_quantile(1.0 - 0.5 * leakage);
        if !z.is_finite() || z <= 0.0 {
            return Err(Error::InvalidParameter("leakage quantile is not finite"));
        }
        Ok(ColorBand {
            band: Passband::new(lo_nm, hi_nm),
            leakage,
            mean_nm,
            std_nm: (hi_nm - mean_nm) / z,
        })
    }

    /// Fraction of this color's power inside `filter`.
    pub fn mass_in(&self, filter: &Passband) -> f64 {
        normal_interval_mass(self.mean_nm, self.std_nm, filter.lo_nm, filter.hi_nm)
    }
}

/// `F[p][q]`: power ratio from color `p` through receiver filter `q`.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterGainMatrix {
    colors: usize,
    filters: usize,
    data: Vec<f64>,
}

impl FilterGainMatrix {
    pub fn get(&self, color: usize, filter: usize) -> f64 {
        self.data[color * self.filters + filter]
    }

    pub fn colors(&self) -> usize {
        self.colors
    }

    pub fn filters(&self) -> usize {
        self.filters
    }

    pub fn row(&self, color: usize) -> &[f64] {
        &self.data[color * self.filters..(color + 1) * self.filters]
    }
}

/// Integrates every color spectrum over every filter passband.
pub fn filter_gain_matrix(bands: &[ColorBand], filters: &[Passband]) -> FilterGainMatrix {
    let mut data = Vec::with_capacity(bands.len() * filters.len());
    for band in bands {
        for filter in filters {
            data.push(band.mass_in(filter));
        }
    }
    FilterGainMatrix {
        colors: bands.len(),
        filters: filters.len(),
        data,
    }
}

/// Receiver and emitter optics shared by every link.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Optics {
    /// Lambertian emission order `m1`.
    pub lambertian_order: f64,
    /// Photodiode area in m².
    pub pd_area: f64,
    /// Refractive index of the concentrator.
    pub refractive_index: f64,
    /// Field-of-view semi-angle in radians.
    pub fov: f64,
}

impl Optics {
    fn validate(&self) -> Result<()> {
        if !(self.lambertian_order > 0.0) {
            return Err(Error::InvalidParameter("Lambertian order must be positive"));
        }
        if !(self.pd_area > 0.0) {
            return Err(Error::InvalidParameter("photodiode area must be positive"));
        }
        if !(self.refractive_index > 0.0) {
            return Err(Error::InvalidParameter("refractive index must be positive"));
        }
        if !(self.fov > 0.0 && self.fov <= PI / 2.0) {
            return Err(Error::InvalidParameter("FOV must lie in (0, π/2]"));
        }
        Ok(())
    }

    fn concentrator_gain(&self) -> f64 {
        let s = sin(self.fov);
        self.refractive_index * self.refractive_index / (s * s)
    }
}

/// Lambertian order for an LED with half-power semi-angle `phi_half` (radians).
pub fn lambertian_order_from_half_power(phi_half: f64) -> Result<f64> {
    if !(phi_half > 0.0 && phi_half < PI / 2.0) {
        return Err(Error::InvalidParameter("half-power angle must lie in (0, π/2)"));
    }
    Ok(-core::f64::consts::LN_2 / math::log(cos(phi_half)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transmitter {
    pub position: Point3,
    /// Index into the scene's color bands.
    pub color: usize,
    /// Peak power `A_i`.
    pub peak: f64,
    /// Average power `ε_i`.
    pub average: f64,
}

/// Regular rectangular array of LED sites, every site carrying the same set of
/// colors.
///
/// Sites are numbered column by column starting at the lowest `x`, and within
/// a column by increasing `y`. Transmitter `site * colors + c` is the LED of
/// color slot `c` at that site, slots sorted by increasing wavelength.
#[derive(Clone, Debug, PartialEq)]
pub struct TxArray {
    /// Sites along `y`.
    pub rows: usize,
    /// Sites along `x`.
    pub cols: usize,
    pub spacing_x: f64,
    pub spacing_y: f64,
    /// Position of site 0 (lowest `x` and `y`).
    pub origin: Point3,
    /// Color index (into the scene bands) of each slot at a site.
    pub site_colors: Vec<usize>,
}

impl TxArray {
    pub fn sites(&self) -> usize {
        self.rows * self.cols
    }

    pub fn site_position(&self, site: usize) -> Point3 {
        let col = site / self.rows;
        let row = site % self.rows;
        Point3::new(
            self.origin.x + col as f64 * self.spacing_x,
            self.origin.y + row as f64 * self.spacing_y,
            self.origin.z,
        )
    }

    pub fn center(&self) -> Point3 {
        Point3::new(
            self.origin.x + 0.5 * (self.cols - 1) as f64 * self.spacing_x,
            self.origin.y + 0.5 * (self.rows - 1) as f64 * self.spacing_y,
            self.origin.z,
        )
    }

    /// `(col, row)` of a site, row counted from the lowest `y`.
    pub fn site_cell(&self, site: usize) -> (usize, usize) {
        (site / self.rows, site % self.rows)
    }

    pub fn site_at(&self, col: usize, row: usize) -> usize {
        col * self.rows + row
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols && self.spacing_x == self.spacing_y
    }
}

/// Rectangular receiver plane at depth `z`, sampled corner-inclusive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReceiverPlane {
    pub x0: f64,
    pub y0: f64,
    pub z: f64,
    /// Extent along `x`.
    pub width: f64,
    /// Extent along `y`.
    pub length: f64,
}

impl ReceiverPlane {
    pub fn center(&self) -> Point3 {
        Point3::new(self.x0 + 0.5 * self.width, self.y0 + 0.5 * self.length, self.z)
    }

    pub fn contains(&self, p: &Point3) -> bool {
        let eps = 1e-9;
        p.x >= self.x0 - eps
            && p.x <= self.x0 + self.width + eps
            && p.y >= self.y0 - eps
            && p.y <= self.y0 + self.length + eps
    }
}

/// The physical world: transmitters, colors, receiver filters and optics.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    transmitters: Vec<Transmitter>,
    bands: Vec<ColorBand>,
    filters: Vec<Passband>,
    filter_gains: FilterGainMatrix,
    optics: Optics,
    plane: ReceiverPlane,
    array: Option<TxArray>,
    noise_std: f64,
}

impl Scene {
    /// Free-form scene. `noise_std` starts at 1 and is usually set through
    /// [`Scene::with_noise_std`] after calibration.
    pub fn new(
        transmitters: Vec<Transmitter>,
        bands: Vec<ColorBand>,
        filters: Vec<Passband>,
        optics: Optics,
        plane: ReceiverPlane,
    ) -> Result<Self> {
        optics.validate()?;
        if transmitters.is_empty() {
            return Err(Error::InvalidParameter("scene has no transmitters"));
        }
        for tx in &transmitters {
            if tx.color >= bands.len() {
                return Err(Error::InvalidParameter("transmitter color has no band"));
            }
            if !(tx.average > 0.0 && tx.average <= tx.peak) {
                return Err(Error::InvalidParameter("need 0 < average power <= peak power"));
            }
        }
        if filters.is_empty() {
            return Err(Error::InvalidParameter("scene has no receiver filters"));
        }
        if !(plane.width >= 0.0 && plane.length >= 0.0) {
            return Err(Error::InvalidParameter("receiver plane extent must be non-negative"));
        }
        let filter_gains = filter_gain_matrix(&bands, &filters);
        Ok(Scene {
            transmitters,
            bands,
            filters,
            filter_gains,
            optics,
            plane,
            array: None,
            noise_std: 1.0,
        })
    }

    /// Scene built from a regular array with uniform per-LED power.
    pub fn from_array(
        array: TxArray,
        bands: Vec<ColorBand>,
        filters: Vec<Passband>,
        optics: Optics,
        plane: ReceiverPlane,
        peak: f64,
        average: f64,
    ) -> Result<Self> {
        if array.rows == 0 || array.cols == 0 || array.site_colors.is_empty() {
            return Err(Error::InvalidParameter("array must have sites and colors"));
        }
        let mut slots = array.site_colors.clone();
        for &c in &slots {
            if c >= bands.len() {
                return Err(Error::InvalidParameter("transmitter color has no band"));
            }
        }
        slots.sort_by(|&a, &b| bands[a].mean_nm.total_cmp(&bands[b].mean_nm));
        let mut array = array;
        array.site_colors = slots;
        let mut transmitters = Vec::with_capacity(array.sites() * array.site_colors.len());
        for site in 0..array.sites() {
            let position = array.site_position(site);
            for &color in &array.site_colors {
                transmitters.push(Transmitter {
                    position,
                    color,
                    peak,
                    average,
                });
            }
        }
        let mut scene = Scene::new(transmitters, bands, filters, optics, plane)?;
        scene.array = Some(array);
        Ok(scene)
    }

    pub fn with_noise_std(mut self, noise_std: f64) -> Result<Self> {
        if !(noise_std > 0.0 && noise_std.is_finite()) {
            return Err(Error::InvalidParameter("noise standard deviation must be positive"));
        }
        self.noise_std = noise_std;
        Ok(self)
    }

    pub fn transmitters(&self) -> &[Transmitter] {
        &self.transmitters
    }

    pub fn bands(&self) -> &[ColorBand] {
        &self.bands
    }

    pub fn filters(&self) -> &[Passband] {
        &self.filters
    }

    pub fn filter_gains(&self) -> &FilterGainMatrix {
        &self.filter_gains
    }

    pub fn optics(&self) -> &Optics {
        &self.optics
    }

    pub fn plane(&self) -> &ReceiverPlane {
        &self.plane
    }

    pub fn array(&self) -> Option<&TxArray> {
        self.array.as_ref()
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_std * self.noise_std
    }

    /// Number of LEDs per array site (1 for free-form scenes).
    pub fn colors_per_site(&self) -> usize {
        self.array.as_ref().map_or(1, |a| a.site_colors.len())
    }

    /// Whether the array is a square centered on the receiver plane, so that
    /// the eight symmetries of the square map the sampled plane onto itself.
    pub fn has_square_symmetry(&self) -> bool {
        let Some(array) = &self.array else {
            return false;
        };
        let c = array.center();
        let pc = self.plane.center();
        array.is_square()
            && self.plane.width == self.plane.length
            && (c.x - pc.x).abs() < 1e-9
            && (c.y - pc.y).abs() < 1e-9
            && self
                .transmitters
                .windows(2)
                .all(|w| w[0].peak == w[1].peak && w[0].average == w[1].average)
    }
}

fn quantize(d: f64) -> f64 {
    libm::round(d / GEOMETRY_QUANTUM) * GEOMETRY_QUANTUM
}

/// Lambertian line-of-sight gain from transmitter `tx` to a receiver at `rx`
/// looking through filter `filter`. Zero outside the receiver FOV.
pub fn link_gain(scene: &Scene, tx: usize, rx: Point3, filter: usize) -> Result<f64> {
    let t = scene
        .transmitters
        .get(tx)
        .ok_or(Error::InvalidArgument("transmitter index out of range"))?;
    if filter >= scene.filters.len() {
        return Err(Error::InvalidArgument("filter index out of range"));
    }
    let transmission = scene.filter_gains.get(t.color, filter);
    lambertian_gain(&scene.optics, t.position, rx, transmission)
}

/// Gain of a single link with filter transmission `transmission`.
pub fn lambertian_gain(optics: &Optics, tx: Point3, rx: Point3, transmission: f64) -> Result<f64> {
    let dx = quantize(rx.x - tx.x);
    let dy = quantize(rx.y - tx.y);
    let dz = quantize(rx.z - tx.z);
    let dist_sq = dx * dx + dy * dy + dz * dz;
    if dist_sq == 0.0 {
        return Err(Error::InvalidGeometry("receiver coincides with transmitter"));
    }
    if dz <= 0.0 {
        return Ok(0.0);
    }
    let cos_angle = dz / math::sqrt(dist_sq);
    if cos_angle < cos(optics.fov) {
        return Ok(0.0);
    }
    let m = optics.lambertian_order;
    Ok(optics.pd_area * (m + 1.0) / (2.0 * PI * dist_sq)
        * math::powf(cos_angle, m)
        * transmission
        * optics.concentrator_gain()
        * cos_angle)
}

/// Gains from every transmitter to `rx` through `filter`, with negligible
/// entries (below [`NEGLIGIBLE_GAIN_RATIO`] of the maximum) set to zero.
pub fn gain_vector(scene: &Scene, rx: Point3, filter: usize) -> Result<Vec<f64>> {
    let mut gains = (0..scene.transmitters.len())
        .map(|tx| link_gain(scene, tx, rx, filter))
        .collect::<Result<Vec<_>>>()?;
    zero_negligible(&mut gains);
    Ok(gains)
}

/// Zeroes gains below [`NEGLIGIBLE_GAIN_RATIO`] times the largest one.
pub fn zero_negligible(gains: &mut [f64]) {
    let max = gains.iter().copied().fold(0.0, f64::max);
    let floor = max * NEGLIGIBLE_GAIN_RATIO;
    for g in gains.iter_mut() {
        if *g < floor {
            *g = 0.0;
        }
    }
}

/// Noise standard deviation giving receiver-side SNR `peak * h_ref / σ` of
/// `snr_db` decibels.
pub fn noise_std_for_snr(peak: f64, reference_gain: f64, snr_db: f64) -> Result<f64> {
    if !(reference_gain > 0.0) {
        return Err(Error::InvalidGeometry("reference link has zero gain"));
    }
    Ok(peak * reference_gain / math::powf(10.0, snr_db / 20.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn optics() -> Optics {
        Optics {
            lambertian_order: 1.0,
            pd_area: 1e-4,
            refractive_index: 1.5,
            fov: 30f64.to_radians(),
        }
    }

    fn reference_bands() -> Vec<ColorBand> {
        vec![
            ColorBand::derive(380.0, 480.0, 0.1).unwrap(),
            ColorBand::derive(500.0, 550.0, 0.2).unwrap(),
            ColorBand::derive(560.0, 600.0, 0.2).unwrap(),
            ColorBand::derive(600.0, 680.0, 0.1).unwrap(),
        ]
    }

    #[test]
    fn spectrum_in_band_mass() {
        let b = ColorBand::derive(380.0, 480.0, 0.1).unwrap();
        assert_eq!(b.mean_nm, 430.0);
        assert!((b.mass_in(&b.band) - 0.9).abs() < 1e-12);
        let g = ColorBand::derive(500.0, 550.0, 0.2).unwrap();
        assert!((g.mass_in(&g.band) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn tiny_leakage_shrinks_spread() {
        let wide = ColorBand::derive(380.0, 480.0, 0.1).unwrap();
        let narrow = ColorBand::derive(380.0, 480.0, 1e-12).unwrap();
        assert!(narrow.std_nm < wide.std_nm);
        assert!((narrow.mass_in(&narrow.band) - 1.0).abs() < 1e-11);
    }

    #[test]
    fn degenerate_leakage_rejected() {
        assert!(ColorBand::derive(380.0, 480.0, 0.0).is_err());
        assert!(ColorBand::derive(380.0, 480.0, 1.0).is_err());
        assert!(ColorBand::derive(480.0, 380.0, 0.1).is_err());
    }

    #[test]
    fn filter_matrix_shape_and_limits() {
        let bands = reference_bands();
        let mut filters: Vec<Passband> = bands.iter().map(|b| b.band).collect();
        filters.push(Passband::everything());
        let f = filter_gain_matrix(&bands, &filters);
        for (p, b) in bands.iter().enumerate() {
            assert_eq!(f.get(p, 4), 1.0);
            assert!((f.get(p, p) - (1.0 - b.leakage)).abs() < 1e-12);
        }
        assert!(f.get(0, 3) < 1e-6);
    }

    #[test]
    fn normal_incidence_gain() {
        let o = optics();
        let h = lambertian_gain(&o, Point3::new(0.0, 0.0, 0.0), Point3::new(0.0, 0.0, 2.0), 0.9)
            .unwrap();
        let expected = 1e-4 * 2.0 / (2.0 * PI * 4.0) * 0.9 * (2.25 / 0.25);
        assert!((h - expected).abs() < 1e-18);
        assert!((h - 6.446e-5).abs() < 1e-8);
    }

    #[test]
    fn inverse_square_on_axis() {
        let o = optics();
        let tx = Point3::new(0.0, 0.0, 0.0);
        let near = lambertian_gain(&o, tx, Point3::new(0.0, 0.0, 1.0), 1.0).unwrap();
        let far = lambertian_gain(&o, tx, Point3::new(0.0, 0.0, 2.0), 1.0).unwrap();
        assert!((near / far - 4.0).abs() < 1e-12);
    }

    #[test]
    fn outside_fov_is_zero() {
        let o = optics();
        // 45° incidence, FOV is 30°.
        let h = lambertian_gain(&o, Point3::new(0.0, 0.0, 0.0), Point3::new(2.0, 0.0, 2.0), 1.0)
            .unwrap();
        assert_eq!(h, 0.0);
    }

    #[test]
    fn coincident_points_error() {
        let o = optics();
        let p = Point3::new(0.1, 0.2, 0.0);
        assert!(matches!(
            lambertian_gain(&o, p, p, 1.0),
            Err(Error::InvalidGeometry(_))
        ));
    }

    #[test]
    fn half_power_angle_of_sixty_degrees_is_order_one() {
        let m = lambertian_order_from_half_power(60f64.to_radians()).unwrap();
        assert!((m - 1.0).abs() < 1e-12);
    }

    #[test]
    fn snr_calibration() {
        assert_eq!(noise_std_for_snr(1.0, 2e-5, 0.0).unwrap(), 2e-5);
        assert!((noise_std_for_snr(1.0, 2e-5, 20.0).unwrap() - 2e-6).abs() < 1e-20);
        assert!(noise_std_for_snr(1.0, 0.0, 15.0).is_err());
    }

    fn grid_scene(rows: usize, spacing: f64) -> Scene {
        let bands = reference_bands();
        let filters = bands.iter().map(|b| b.band).collect();
        let array = TxArray {
            rows,
            cols: rows,
            spacing_x: spacing,
            spacing_y: spacing,
            origin: Point3::new(0.0, 0.0, 0.0),
            site_colors: vec![3, 0, 1, 2],
        };
        let extent = (rows - 1) as f64 * spacing;
        let plane = ReceiverPlane {
            x0: -1.0,
            y0: -1.0,
            z: 2.0,
            width: extent + 2.0,
            length: extent + 2.0,
        };
        Scene::from_array(array, bands, filters, optics(), plane, 1.0, 0.5).unwrap()
    }

    #[test]
    fn array_slots_sorted_by_wavelength() {
        let s = grid_scene(2, 0.6);
        let colors: Vec<usize> = s.transmitters().iter().take(4).map(|t| t.color).collect();
        assert_eq!(colors, vec![0, 1, 2, 3]);
        assert_eq!(s.transmitters().len(), 16);
        // Site 1 sits above site 0 (same x, larger y).
        assert_eq!(s.transmitters()[4].position, Point3::new(0.0, 0.6, 0.0));
        assert!(s.has_square_symmetry());
    }

    #[test]
    fn center_receiver_sees_symmetric_gains() {
        let s = grid_scene(2, 0.6);
        let g = gain_vector(&s, Point3::new(0.3, 0.3, 2.0), 0).unwrap();
        for slot in 0..4 {
            let first = g[slot];
            for site in 1..4 {
                assert_eq!(g[site * 4 + slot], first);
            }
        }
        // Colors [560,600] and [600,680] are negligible through the blue filter.
        assert_eq!(g[2], 0.0);
        assert_eq!(g[3], 0.0);
        assert!(g[1] > 0.0);
    }

    #[test]
    fn far_receiver_sees_nothing() {
        let s = grid_scene(2, 0.6);
        let g = gain_vector(&s, Point3::new(10.0, 10.0, 2.0), 0).unwrap();
        assert!(g.iter().all(|&h| h == 0.0));
    }

    #[test]
    fn mirrored_positions_give_permuted_gains_exactly() {
        let s = grid_scene(4, 0.2);
        let a = gain_vector(&s, Point3::new(-0.7, 0.1, 2.0), 0).unwrap();
        // Mirror x about the array center 0.3.
        let b = gain_vector(&s, Point3::new(1.3, 0.1, 2.0), 0).unwrap();
        let arr = s.array().unwrap();
        for site in 0..16 {
            let (col, row) = arr.site_cell(site);
            let mirror = arr.site_at(3 - col, row);
            for slot in 0..4 {
                assert_eq!(a[site * 4 + slot], b[mirror * 4 + slot]);
            }
        }
    }
}
