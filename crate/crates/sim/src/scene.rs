//! Scene files (TOML).
//!
//! ```toml
//! [array]
//! rows = 4                 # sites along y
//! cols = 4                 # sites along x
//! spacing = [0.2, 0.2]     # [x, y] in meters
//! origin = [0.0, 0.0]      # lowest site, transmitter plane at z = 0
//! margins = [1.0, 1.0]     # receiver plane overhang around the array
//! colors = [0, 1, 2, 3]    # band index of each LED at a site
//!
//! [[bands]]
//! lo = 380.0
//! hi = 480.0
//! leakage = 0.1
//!
//! [receiver]
//! depth = 2.0
//!
//! [optics]
//! half_power_angle_deg = 60.0   # or lambertian_order
//! pd_area = 1e-4
//! refractive_index = 1.5
//! fov_deg = 30.0
//!
//! [power]
//! peak = 1.0
//! average = 0.5
//! layers = 2
//!
//! [noise]
//! snr_db = 15.0
//! ```
//!
//! Receiver filters default to the band passbands. The receiver plane defaults
//! to the array footprint grown by the margins; `x0`, `y0`, `width` and
//! `length` override it.

use std::path::Path;

use cpgd_core::channel::{
    lambertian_gain, lambertian_order_from_half_power, noise_std_for_snr, ColorBand, Optics, Passband, Point3,
    ReceiverPlane, Scene, TxArray,
};
use serde::{Deserialize, Serialize};

use crate::error::{SimError, SimResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub array: ArraySpec,
    pub bands: Vec<BandSpec>,
    #[serde(default)]
    pub filters: Option<Vec<[f64; 2]>>,
    pub receiver: ReceiverSpec,
    pub optics: OpticsSpec,
    pub power: PowerSpec,
    pub noise: NoiseSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArraySpec {
    pub rows: usize,
    pub cols: usize,
    pub spacing: [f64; 2],
    #[serde(default)]
    pub origin: [f64; 2],
    #[serde(default)]
    pub margins: [f64; 2],
    pub colors: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandSpec {
    pub lo: f64,
    pub hi: f64,
    pub leakage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReceiverSpec {
    /// Vertical distance below the transmitter plane.
    pub depth: f64,
    pub x0: Option<f64>,
    pub y0: Option<f64>,
    pub width: Option<f64>,
    pub length: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticsSpec {
    pub lambertian_order: Option<f64>,
    pub half_power_angle_deg: Option<f64>,
    pub pd_area: f64,
    pub refractive_index: f64,
    pub fov_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerSpec {
    pub peak: f64,
    pub average: f64,
    pub layers: usize,
}

/// Either a fixed noise level or an SNR on a reference link.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub std: Option<f64>,
    pub snr_db: Option<f64>,
    /// Reference transmitter position.
    #[serde(default)]
    pub reference_tx: [f64; 3],
    /// Reference receiver position; defaults to straight below at the plane depth.
    pub reference_rx: Option<[f64; 3]>,
    #[serde(default)]
    pub reference_color: usize,
    #[serde(default)]
    pub reference_filter: usize,
}

/// A loaded scene with its layer count per transmitter.
#[derive(Clone, Debug)]
pub struct LoadedScene {
    pub spec: SceneFile,
    pub scene: Scene,
    pub layers_per_tx: Vec<usize>,
}

impl SceneFile {
    pub fn load(path: &Path) -> SimResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        toml::from_str(&text).map_err(|e| SimError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn optics(&self) -> SimResult<Optics> {
        let o = &self.optics;
        let lambertian_order = match (o.lambertian_order, o.half_power_angle_deg) {
            (Some(m), None) => m,
            (None, Some(deg)) => lambertian_order_from_half_power(deg.to_radians())?,
            _ => {
                return Err(SimError::Config(
                    "optics needs exactly one of lambertian_order and half_power_angle_deg".into(),
                ))
            }
        };
        Ok(Optics {
            lambertian_order,
            pd_area: o.pd_area,
            refractive_index: o.refractive_index,
            fov: o.fov_deg.to_radians(),
        })
    }

    pub fn bands(&self) -> SimResult<Vec<ColorBand>> {
        Ok(self
            .bands
            .iter()
            .map(|b| ColorBand::derive(b.lo, b.hi, b.leakage))
            .collect::<Result<_, _>>()?)
    }

    pub fn filters(&self) -> Vec<Passband> {
        match &self.filters {
            Some(f) => f.iter().map(|&[lo, hi]| Passband::new(lo, hi)).collect(),
            None => self.bands.iter().map(|b| Passband::new(b.lo, b.hi)).collect(),
        }
    }

    pub fn tx_array(&self) -> TxArray {
        let a = &self.array;
        TxArray {
            rows: a.rows,
            cols: a.cols,
            spacing_x: a.spacing[0],
            spacing_y: a.spacing[1],
            origin: Point3::new(a.origin[0], a.origin[1], 0.0),
            site_colors: a.colors.clone(),
        }
    }

    pub fn plane(&self) -> ReceiverPlane {
        let a = &self.array;
        let r = &self.receiver;
        let span_x = a.cols.saturating_sub(1) as f64 * a.spacing[0];
        let span_y = a.rows.saturating_sub(1) as f64 * a.spacing[1];
        ReceiverPlane {
            x0: r.x0.unwrap_or(a.origin[0] - a.margins[0]),
            y0: r.y0.unwrap_or(a.origin[1] - a.margins[1]),
            z: r.depth,
            width: r.width.unwrap_or(span_x + 2.0 * a.margins[0]),
            length: r.length.unwrap_or(span_y + 2.0 * a.margins[1]),
        }
    }

    /// Gain of the noise reference link.
    pub fn reference_gain(&self) -> SimResult<f64> {
        let n = &self.noise;
        let bands = self.bands()?;
        let filters = self.filters();
        let band = bands
            .get(n.reference_color)
            .ok_or_else(|| SimError::Config("reference_color out of range".into()))?;
        let filter = filters
            .get(n.reference_filter)
            .ok_or_else(|| SimError::Config("reference_filter out of range".into()))?;
        let [x, y, z] = n.reference_tx;
        let tx = Point3::new(x, y, z);
        let [rx, ry, rz] = n.reference_rx.unwrap_or([x, y, z + self.receiver.depth]);
        let rx = Point3::new(rx, ry, rz);
        Ok(lambertian_gain(&self.optics()?, tx, rx, band.mass_in(filter))?)
    }

    pub fn build(self) -> SimResult<LoadedScene> {
        if self.power.layers == 0 {
            return Err(SimError::Config("power.layers must be at least 1".into()));
        }
        let scene = Scene::from_array(
            self.tx_array(),
            self.bands()?,
            self.filters(),
            self.optics()?,
            self.plane(),
            self.power.peak,
            self.power.average,
        )?;
        let std = match (self.noise.std, self.noise.snr_db) {
            (Some(s), None) => s,
            (None, Some(db)) => calibrate_noise(self.power.peak, self.reference_gain()?, db)?,
            _ => return Err(SimError::Config("noise needs exactly one of std and snr_db".into())),
        };
        let scene = scene.with_noise_std(std)?;
        let layers_per_tx = vec![self.power.layers; scene.transmitters().len()];
        Ok(LoadedScene {
            spec: self,
            scene,
            layers_per_tx,
        })
    }
}

/// Noise standard deviation giving `peak · h_ref / σ` = `snr_db` dB.
pub fn calibrate_noise(peak: f64, reference_gain: f64, snr_db: f64) -> SimResult<f64> {
    Ok(noise_std_for_snr(peak, reference_gain, snr_db)?)
}

pub fn load_scene(path: &Path) -> SimResult<LoadedScene> {
    SceneFile::load(path)?.build()
}

/// Scene files shipped with the crate.
pub fn bundled_scene(name: &str) -> Option<&'static str> {
    match name {
        "array_4x4" => Some(include_str!("../scenes/array_4x4.toml")),
        "corners_2x2" => Some(include_str!("../scenes/corners_2x2.toml")),
        "pair_1x2" => Some(include_str!("../scenes/pair_1x2.toml")),
        _ => None,
    }
}

/// Loads a scene from a path, or a bundled scene by name.
pub fn resolve_scene(name_or_path: &str) -> SimResult<LoadedScene> {
    let spec: SceneFile = match bundled_scene(name_or_path) {
        Some(text) => toml::from_str(text).map_err(|e| SimError::Parse {
            path: name_or_path.into(),
            message: e.to_string(),
        })?,
        None => SceneFile::load(Path::new(name_or_path))?,
    };
    spec.build()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenes_load() {
        for name in ["array_4x4", "corners_2x2", "pair_1x2"] {
            let s = resolve_scene(name).unwrap();
            let p = s.scene.plane();
            assert_eq!((p.x0, p.y0, p.width, p.length, p.z), (-1.0, -1.0, 2.6, 2.6, 2.0));
            assert_eq!(s.layers_per_tx.len(), s.scene.transmitters().len());
        }
        assert_eq!(resolve_scene("array_4x4").unwrap().scene.transmitters().len(), 64);
    }

    #[test]
    fn reference_noise_round_trips_to_15_db() {
        let s = resolve_scene("array_4x4").unwrap();
        let h = s.spec.reference_gain().unwrap();
        assert!((h - 6.446e-5).abs() < 1e-8);
        let snr = 20.0 * (s.spec.power.peak * h / s.scene.noise_std()).log10();
        assert!((snr - 15.0).abs() < 1e-12);
    }

    #[test]
    fn calibration_limits() {
        assert_eq!(calibrate_noise(1.0, 2e-5, 0.0).unwrap(), 2e-5);
        assert!((calibrate_noise(1.0, 2e-5, 20.0).unwrap() - 2e-6).abs() < 1e-20);
        assert!(calibrate_noise(1.0, 0.0, 15.0).is_err());
    }

    #[test]
    fn noise_spec_must_be_unambiguous() {
        let mut spec: SceneFile = toml::from_str(bundled_scene("pair_1x2").unwrap()).unwrap();
        spec.noise.std = Some(1e-5);
        assert!(matches!(spec.build(), Err(SimError::Config(_))));
    }
}
