//! Versioned JSON map files.
//!
//! Layout (format `cpgd-map`, version 1):
//!
//! - `scene_hash`: SHA-256 of the scene description the map was built from.
//! - `settings`, `grid`, `noise_var`, `layers_per_tx`, `stats`: everything
//!   needed to rebuild rate contexts.
//! - `clustering`: thresholds and summary, when the map was reduced.
//! - `cells`: one record per grid cell, row-major (`iy * nx + ix`). An outage
//!   cell has `order: null`. Groups list linear layer indices in decoding
//!   order; `rates` holds one entry per layer, `null` for layers without a
//!   constraint.

use std::path::Path;

use cpgd_core::channel::Point3;
use cpgd_core::cpgd::DecodingOrder;
use cpgd_core::decmap::{Clustering, DecodingMap, Grid, MapCell, MapSettings, Provenance, Symmetry};
use cpgd_core::rates::{LayerRate, RateVector};
use cpgd_core::signaling::{LayerLayout, LayerStats};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{SimError, SimResult};
use crate::scene::SceneFile;

pub const FORMAT: &str = "cpgd-map";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapFile {
    pub format: String,
    pub version: u32,
    pub scene_hash: String,
    pub settings: SettingsRecord,
    pub grid: GridRecord,
    pub noise_var: f64,
    pub layers_per_tx: Vec<usize>,
    pub stats: Vec<StatsRecord>,
    pub clustering: Option<ClusteringRecord>,
    pub cells: Vec<CellRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SettingsRecord {
    pub filter: usize,
    pub tau: usize,
    pub step: f64,
    pub use_symmetry: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub x0: f64,
    pub y0: f64,
    pub z: f64,
    pub step: f64,
    pub nx: usize,
    pub ny: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsRecord {
    pub nu_sq: f64,
    pub var: f64,
    pub phi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusteringRecord {
    pub tau_diff: f64,
    pub tau_loss: f64,
    pub samples: usize,
    pub clusters: usize,
    pub compression_ratio: f64,
    pub max_average_loss: f64,
    pub representative_loss: f64,
    pub passes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub position: [f64; 3],
    pub gains: Vec<f64>,
    pub order: Option<OrderRecord>,
    pub cluster: Option<usize>,
    /// `None` for directly computed cells.
    pub derived: Option<DerivedRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderRecord {
    pub groups: Vec<Vec<usize>>,
    pub rates: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedRecord {
    pub source: usize,
    pub transform: String,
}

/// SHA-256 (hex) of a scene description and its resolved noise level.
pub fn scene_hash(spec: &SceneFile, noise_std: f64) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(spec).expect("scene description serializes"));
    h.update(noise_std.to_le_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl MapFile {
    pub fn from_map(map: &DecodingMap, scene_hash: String, clustering: Option<(&Clustering, f64, f64)>) -> Self {
        let s = map.settings();
        let g = map.grid();
        let layout = map.layout();
        let labels = clustering.map(|(c, _, _)| &c.labels);
        let cells = map
            .cells()
            .iter()
            .enumerate()
            .map(|(i, c)| CellRecord {
                position: [c.position.x, c.position.y, c.position.z],
                gains: c.gains.clone(),
                order: c.order.as_ref().map(|o| OrderRecord {
                    groups: o.groups().to_vec(),
                    rates: o.rates().as_slice().iter().map(|r| r.finite()).collect(),
                }),
                cluster: labels.and_then(|l| l[i]),
                derived: match c.provenance {
                    Provenance::Computed => None,
                    Provenance::Derived { source, transform } => Some(DerivedRecord {
                        source,
                        transform: transform.name().to_string(),
                    }),
                },
            })
            .collect();
        MapFile {
            format: FORMAT.to_string(),
            version: VERSION,
            scene_hash,
            settings: SettingsRecord {
                filter: s.filter,
                tau: s.tau,
                step: s.step,
                use_symmetry: s.use_symmetry,
            },
            grid: GridRecord {
                x0: g.x0,
                y0: g.y0,
                z: g.z,
                step: g.step,
                nx: g.nx,
                ny: g.ny,
            },
            noise_var: map.noise_var(),
            layers_per_tx: (0..layout.transmitters()).map(|t| layout.layers_of(t).len()).collect(),
            stats: map
                .stats()
                .iter()
                .map(|s| StatsRecord {
                    nu_sq: s.nu_sq,
                    var: s.var,
                    phi: s.phi,
                })
                .collect(),
            clustering: clustering.map(|(c, tau_diff, tau_loss)| ClusteringRecord {
                tau_diff,
                tau_loss,
                samples: c.samples,
                clusters: c.len(),
                compression_ratio: c.compression_ratio(),
                max_average_loss: c.max_average_loss,
                representative_loss: c.representative_loss,
                passes: c.passes,
            }),
            cells,
        }
    }

    pub fn to_map(&self) -> SimResult<DecodingMap> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(SimError::MapFile(format!(
                "unsupported format {} version {}",
                self.format, self.version
            )));
        }
        let layout = LayerLayout::new(&self.layers_per_tx)?;
        let stats = self
            .stats
            .iter()
            .map(|s| LayerStats {
                nu_sq: s.nu_sq,
                var: s.var,
                phi: s.phi,
            })
            .collect();
        let cells = self
            .cells
            .iter()
            .map(|c| {
                let order = match &c.order {
                    None => None,
                    Some(o) => {
                        let rates: Vec<LayerRate> = o
                            .rates
                            .iter()
                            .map(|r| r.map_or(LayerRate::Unconstrained, LayerRate::Finite))
                            .collect();
                        let mut v = RateVector::unconstrained(rates.len());
                        for (l, r) in rates.into_iter().enumerate() {
                            v.set(l, r);
                        }
                        Some(DecodingOrder::new(o.groups.clone(), v)?)
                    }
                };
                let provenance = match &c.derived {
                    None => Provenance::Computed,
                    Some(d) => Provenance::Derived {
                        source: d.source,
                        transform: Symmetry::from_name(&d.transform)
                            .ok_or_else(|| SimError::MapFile(format!("unknown transform {}", d.transform)))?,
                    },
                };
                let [x, y, z] = c.position;
                Ok(MapCell {
                    position: Point3::new(x, y, z),
                    gains: c.gains.clone(),
                    order,
                    provenance,
                })
            })
            .collect::<SimResult<Vec<_>>>()?;
        let s = self.settings;
        let g = self.grid;
        Ok(DecodingMap::from_parts(
            MapSettings {
                filter: s.filter,
                tau: s.tau,
                step: s.step,
                use_symmetry: s.use_symmetry,
            },
            Grid {
                x0: g.x0,
                y0: g.y0,
                z: g.z,
                step: g.step,
                nx: g.nx,
                ny: g.ny,
            },
            self.noise_var,
            layout,
            stats,
            cells,
        )?)
    }

    /// Cluster label per cell, as stored.
    pub fn labels(&self) -> Vec<Option<usize>> {
        self.cells.iter().map(|c| c.cluster).collect()
    }

    pub fn write(&self, path: &Path) -> SimResult<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| SimError::io(path, e))
    }

    pub fn read(path: &Path) -> SimResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
