//! Layered encoding bookkeeping and truncated-Gaussian (TG) layer inputs.
//!
//! Each transmitter `i` splits its stream into `L_i` layers that share its
//! peak and average power equally. Layers are addressed either by
//! `(transmitter, layer)` or by a linear index running over all layers of
//! transmitter 0, then transmitter 1, and so on. Both are 0-based here; files
//! written by the companion crate use 1-based linear indices.

use alloc::vec::Vec;
use core::ops::Range;

use crate::channel::Scene;
use crate::math::{self, std_normal_mass, std_normal_pdf};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LayerIndex {
    pub tx: usize,
    pub layer: usize,
}

/// Bijection between `(tx, layer)` pairs and linear layer indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerLayout {
    offsets: Vec<usize>,
}

impl LayerLayout {
    pub fn new(layers_per_tx: &[usize]) -> Result<Self> {
        if layers_per_tx.is_empty() {
            return Err(Error::InvalidArgument("no transmitters"));
        }
        let mut offsets = Vec::with_capacity(layers_per_tx.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for &l in layers_per_tx {
            if l == 0 {
                return Err(Error::InvalidArgument("every transmitter needs at least one layer"));
            }
            acc += l;
            offsets.push(acc);
        }
        Ok(LayerLayout { offsets })
    }

    pub fn uniform(transmitters: usize, layers: usize) -> Result<Self> {
        LayerLayout::new(&alloc::vec![layers; transmitters])
    }

    /// Total number of layers `L`.
    pub fn len(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn transmitters(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn layers_of(&self, tx: usize) -> Range<usize> {
        self.offsets[tx]..self.offsets[tx + 1]
    }

    pub fn lin(&self, index: LayerIndex) -> usize {
        debug_assert!(index.layer < self.offsets[index.tx + 1] - self.offsets[index.tx]);
        self.offsets[index.tx] + index.layer
    }

    pub fn split(&self, lin: usize) -> LayerIndex {
        let tx = self.tx_of(lin);
        LayerIndex {
            tx,
            layer: lin - self.offsets[tx],
        }
    }

    pub fn tx_of(&self, lin: usize) -> usize {
        debug_assert!(lin < self.len());
        // offsets is strictly increasing; find the last offset <= lin.
        self.offsets.partition_point(|&o| o <= lin) - 1
    }

    /// Whether every transmitter has the same number of layers.
    pub fn is_uniform(&self) -> bool {
        self.offsets.windows(3).all(|w| w[1] - w[0] == w[2] - w[1])
    }
}

/// `(μ, ν, A)` of a truncated Gaussian on `[0, A]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TgParams {
    pub mu: f64,
    pub nu: f64,
    pub peak: f64,
}

/// Derived TG quantities. `phi` is in nats.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TgMoments {
    /// Normalizer `ρ = 1 / (G(A) - G(0))`.
    pub rho: f64,
    /// Truncated mean `μ̂`.
    pub mean: f64,
    /// Truncated variance `ν̂²`.
    pub var: f64,
    /// Entropy correction: `h(X) = ½ ln(2πeν²) - φ`.
    pub phi: f64,
}

/// Mean, variance and entropy constant of a `(μ, ν, A)`-TG distribution.
pub fn tg_moments(mu: f64, nu: f64, peak: f64) -> Result<TgMoments> {
    if !(peak > 0.0 && nu > 0.0 && mu.is_finite()) {
        return Err(Error::InvalidParameter("TG needs A > 0, ν > 0 and finite μ"));
    }
    let alpha = -mu / nu;
    let beta = (peak - mu) / nu;
    let mass = std_normal_mass(alpha, beta);
    if !(mass >= 1e-300) {
        return Err(Error::InvalidParameter("TG truncation leaves no probability mass"));
    }
    let rho = 1.0 / mass;
    // Density of the truncated law at both ends of the support.
    let theta_0 = rho * std_normal_pdf(alpha) / nu;
    let theta_a = rho * std_normal_pdf(beta) / nu;

    let nu_sq = nu * nu;
    let mean = nu_sq * (theta_0 - theta_a) + mu;
    let var = nu_sq * (1.0 - peak * theta_a - mean * (theta_0 - theta_a));
    let phi = math::log(rho) + 0.5 * ((peak - mu) * theta_a + mu * theta_0);
    Ok(TgMoments {
        rho,
        mean,
        var,
        phi,
    })
}

/// Solves for `ν` (with `μ = 3ν`) such that the TG mean on `[0, peak / layers]`
/// hits the per-layer average-power cap `min(ε/L, A/(2L))`.
///
/// When even `ν = A_ik / 3` stays below the cap, that largest `ν` is used.
pub fn calibrate_layer(peak: f64, average: f64, layers: usize) -> Result<TgParams> {
    if layers == 0 {
        return Err(Error::InvalidArgument("a transmitter needs at least one layer"));
    }
    if !(peak > 0.0 && average > 0.0) {
        return Err(Error::InvalidParameter("powers must be positive"));
    }
    let l = layers as f64;
    let layer_peak = peak / l;
    let cap = (average / l).min(peak / (2.0 * l));
    let mean_at = |nu: f64| tg_moments(3.0 * nu, nu, layer_peak).map(|m| m.mean);

    let mut hi = layer_peak / 3.0;
    if mean_at(hi)? <= cap {
        return Ok(TgParams {
            mu: 3.0 * hi,
            nu: hi,
            peak: layer_peak,
        });
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mean_at(mid)? < cap {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let nu = 0.5 * (lo + hi);
    let reached = mean_at(nu)?;
    if !((reached - cap).abs() <= 1e-9 * cap.max(1.0)) {
        return Err(Error::CalibrationFailed {
            peak: layer_peak,
            cap,
        });
    }
    Ok(TgParams {
        mu: 3.0 * nu,
        nu,
        peak: layer_peak,
    })
}

/// The per-layer quantities the rate formula consumes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerStats {
    /// Untruncated variance `ν²`.
    pub nu_sq: f64,
    /// Truncated variance `ν̂²`.
    pub var: f64,
    /// Entropy constant `φ` in nats.
    pub phi: f64,
}

impl LayerStats {
    /// Gaussian input of variance `var`: `ν = ν̂`, `φ = 0`.
    pub fn gaussian(var: f64) -> Self {
        LayerStats {
            nu_sq: var,
            var,
            phi: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerSignal {
    pub index: LayerIndex,
    pub params: TgParams,
    pub moments: TgMoments,
    /// `min(ε_i/L_i, A_i/(2L_i))`.
    pub mean_cap: f64,
}

impl LayerSignal {
    pub fn stats(&self) -> LayerStats {
        LayerStats {
            nu_sq: self.params.nu * self.params.nu,
            var: self.moments.var,
            phi: self.moments.phi,
        }
    }
}

/// All layers of a scene, in linear-index order.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSet {
    layout: LayerLayout,
    signals: Vec<LayerSignal>,
}

impl LayerSet {
    pub fn layout(&self) -> &LayerLayout {
        &self.layout
    }

    pub fn signals(&self) -> &[LayerSignal] {
        &self.signals
    }

    pub fn len(&self) -> usize {
        self.signals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.is_empty()
    }

    pub fn stats(&self) -> Vec<LayerStats> {
        self.signals.iter().map(LayerSignal::stats).collect()
    }
}

/// Calibrates the TG input of every layer of every transmitter.
pub fn build_layer_set(scene: &Scene, layers_per_tx: &[usize]) -> Result<LayerSet> {
    let txs = scene.transmitters();
    if layers_per_tx.len() != txs.len() {
        return Err(Error::InvalidArgument("need one layer count per transmitter"));
    }
    let layout = LayerLayout::new(layers_per_tx)?;
    let mut signals = Vec::with_capacity(layout.len());
    for (tx, (t, &count)) in txs.iter().zip(layers_per_tx).enumerate() {
        let params = calibrate_layer(t.peak, t.average, count)?;
        let moments = tg_moments(params.mu, params.nu, params.peak)?;
        let l = count as f64;
        let mean_cap = (t.average / l).min(t.peak / (2.0 * l));
        for layer in 0..count {
            signals.push(LayerSignal {
                index: LayerIndex { tx, layer },
                params,
                moments,
                mean_cap,
            });
        }
    }
    Ok(LayerSet { layout, signals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    /// Composite Simpson quadrature of `f` over `[a, b]` with `n` (even) panels.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * h / 3.0
    }

    fn density(mu: f64, nu: f64, peak: f64) -> impl Fn(f64) -> f64 {
        let z = simpson(
            |x| (-(x - mu) * (x - mu) / (2.0 * nu * nu)).exp(),
            0.0,
            peak,
            20_000,
        );
        move |x| (-(x - mu) * (x - mu) / (2.0 * nu * nu)).exp() / z
    }

    #[test]
    fn symmetric_truncation_keeps_mean() {
        for &nu in &[0.01, 0.1, 0.3, 2.0] {
            let m = tg_moments(0.25, nu, 0.5).unwrap();
            assert!((m.mean - 0.25).abs() < 1e-14, "nu={nu}");
        }
    }

    #[test]
    fn vanishing_truncation() {
        let m = tg_moments(0.5, 1e-3, 1.0).unwrap();
        assert!((m.mean - 0.5).abs() < 1e-15);
        assert!((m.var - 1e-6).abs() < 1e-18);
        assert!((m.rho - 1.0).abs() < 1e-15);
        assert!(m.phi.abs() < 1e-15);
    }

    #[test]
    fn moments_match_quadrature() {
        let (mu, nu, peak) = (0.24, 0.08, 0.5);
        let m = tg_moments(mu, nu, peak).unwrap();
        let p = density(mu, nu, peak);
        let mean = simpson(|x| x * p(x), 0.0, peak, 20_000);
        let var = simpson(|x| (x - mean) * (x - mean) * p(x), 0.0, peak, 20_000);
        let entropy = simpson(|x| -p(x) * p(x).ln(), 0.0, peak, 20_000);
        assert!((m.mean - mean).abs() / mean < 1e-10);
        assert!((m.var - var).abs() / var < 1e-9);
        let h = 0.5 * (2.0 * PI * core::f64::consts::E * nu * nu).ln() - m.phi;
        assert!((h - entropy).abs() < 1e-9);
    }

    #[test]
    fn degenerate_truncation_is_rejected() {
        assert!(tg_moments(-100.0, 1.0, 0.5).is_err());
        assert!(tg_moments(0.1, 0.0, 0.5).is_err());
        assert!(tg_moments(0.1, 0.1, 0.0).is_err());
    }

    #[test]
    fn calibration_binds_average_cap() {
        let p = calibrate_layer(1.0, 0.5, 2).unwrap();
        let m = tg_moments(p.mu, p.nu, p.peak).unwrap();
        assert_eq!(p.peak, 0.5);
        assert!((m.mean - 0.25).abs() < 1e-9);
        assert!((p.mu - 3.0 * p.nu).abs() < 1e-15);

        let p = calibrate_layer(1.0, 0.5, 1).unwrap();
        let m = tg_moments(p.mu, p.nu, p.peak).unwrap();
        assert!((m.mean - 0.5).abs() < 1e-9);
    }

    #[test]
    fn calibration_uses_half_peak_when_average_is_loose() {
        let loose = calibrate_layer(1.0, 0.9, 2).unwrap();
        let tight = calibrate_layer(1.0, 0.5, 2).unwrap();
        assert_eq!(loose, tight);
        let low = calibrate_layer(1.0, 0.2, 2).unwrap();
        let m = tg_moments(low.mu, low.nu, low.peak).unwrap();
        assert!((m.mean - 0.1).abs() < 1e-9);
    }

    #[test]
    fn layout_bijection() {
        let layout = LayerLayout::new(&[2, 1, 3]).unwrap();
        assert_eq!(layout.len(), 6);
        for lin in 0..layout.len() {
            assert_eq!(layout.lin(layout.split(lin)), lin);
        }
        assert_eq!(layout.split(2), LayerIndex { tx: 1, layer: 0 });
        assert_eq!(layout.split(5), LayerIndex { tx: 2, layer: 2 });
        assert!(!layout.is_uniform());
        assert!(LayerLayout::new(&[1, 0]).is_err());
    }
}
