//! Closed-form achievable rate of the VLC multiple access channel under
//! truncated-Gaussian layer inputs, and the rate increment margin.
//!
//! For a signal set `V` (taken in ascending linear order `v_1..v_p`) and a
//! noise set `G`, with `P_l = h_l² ν̂_l²` and
//! `D_m = Σ_{ℓ≥m} P_{v_ℓ} + Σ_G P + σ²`,
//!
//! ```text
//! R(V, G) = ½ Σ_m [ ln ν²_{v_m} − ln(ν̂²_{v_m} − h²_{v_m} ν̂⁴_{v_m} / D_m) ] − Σ_m φ_{v_m}
//! ```
//!
//! Since `ν̂² − h²ν̂⁴/D_m = ν̂² D_{m+1} / D_m`, each term is evaluated as
//! `½ ln(ν²/ν̂²) − φ + ½ ln(1 + P_{v_m}/D_{m+1})`, which avoids cancellation
//! at high SNR. Results are returned in bits; negative values (possible at low
//! SNR, the bound is loose there) are clamped to zero by [`achievable_rate`].

use alloc::vec::Vec;

use crate::math::{self, nats_to_bits};
use crate::signaling::{LayerLayout, LayerStats};
use crate::{Error, Result};

/// Largest signal set the margin enumerates subsets of.
pub const MAX_SUBSET_LAYERS: usize = 20;

/// A per-layer rate, or no constraint at all (a layer the receiver discards or
/// cannot see). `Unconstrained` is the identity of [`LayerRate::min`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LayerRate {
    Finite(f64),
    Unconstrained,
}

impl LayerRate {
    pub fn min(self, other: LayerRate) -> LayerRate {
        match (self, other) {
            (LayerRate::Finite(a), LayerRate::Finite(b)) => LayerRate::Finite(a.min(b)),
            (LayerRate::Finite(a), LayerRate::Unconstrained)
            | (LayerRate::Unconstrained, LayerRate::Finite(a)) => LayerRate::Finite(a),
            (LayerRate::Unconstrained, LayerRate::Unconstrained) => LayerRate::Unconstrained,
        }
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            LayerRate::Finite(r) => Some(r),
            LayerRate::Unconstrained => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, LayerRate::Finite(_))
    }
}

/// Rates of all `L` layers, indexed by linear layer index.
#[derive(Clone, Debug, PartialEq)]
pub struct RateVector(Vec<LayerRate>);

impl RateVector {
    pub fn unconstrained(len: usize) -> Self {
        RateVector(alloc::vec![LayerRate::Unconstrained; len])
    }

    pub fn zeros(len: usize) -> Self {
        RateVector(alloc::vec![LayerRate::Finite(0.0); len])
    }

    pub fn from_finite(values: &[f64]) -> Self {
        RateVector(values.iter().map(|&r| LayerRate::Finite(r)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, layer: usize) -> LayerRate {
        self.0[layer]
    }

    pub fn set(&mut self, layer: usize, rate: LayerRate) {
        self.0[layer] = rate;
    }

    pub fn as_slice(&self) -> &[LayerRate] {
        &self.0
    }

    /// Element-wise minimum with `other`.
    pub fn min_with(&mut self, other: &RateVector) {
        for (a, &b) in self.0.iter_mut().zip(&other.0) {
            *a = a.min(b);
        }
    }

    /// Finite entries as `(layer, rate)` pairs.
    pub fn finite_entries(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter_map(|(l, r)| r.finite().map(|v| (l, v)))
    }
}

/// Everything the rate formula needs at one receiver position.
#[derive(Clone, Debug, PartialEq)]
pub struct RateContext {
    gains: Vec<f64>,
    /// `h² ν̂²` per layer.
    powers: Vec<f64>,
    /// `½ ln(ν²/ν̂²) − φ` per layer, nats.
    offsets: Vec<f64>,
    noise_var: f64,
}

impl RateContext {
    /// Builds the context from per-transmitter gains.
    pub fn new(
        tx_gains: &[f64],
        layout: &LayerLayout,
        stats: &[LayerStats],
        noise_var: f64,
    ) -> Result<Self> {
        if tx_gains.len() != layout.transmitters() || stats.len() != layout.len() {
            return Err(Error::InvalidArgument("gain/stat lengths do not match the layout"));
        }
        let mut layer_gains = Vec::with_capacity(layout.len());
        for (tx, &g) in tx_gains.iter().enumerate() {
            for _ in layout.layers_of(tx) {
                layer_gains.push(g);
            }
        }
        RateContext::from_layer_gains(layer_gains, stats, noise_var)
    }

    /// Builds the context from per-layer gains.
    pub fn from_layer_gains(gains: Vec<f64>, stats: &[LayerStats], noise_var: f64) -> Result<Self> {
        if gains.len() != stats.len() {
            return Err(Error::InvalidArgument("one gain per layer required"));
        }
        if !(noise_var > 0.0) {
            return Err(Error::InvalidParameter("noise variance must be positive"));
        }
        let powers = gains.iter().zip(stats).map(|(h, s)| h * h * s.var).collect();
        let offsets = stats
            .iter()
            .map(|s| 0.5 * (math::log(s.nu_sq) - math::log(s.var)) - s.phi)
            .collect();
        Ok(RateContext {
            gains,
            powers,
            offsets,
            noise_var,
        })
    }

    pub fn len(&self) -> usize {
        self.powers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.powers.is_empty()
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn gain(&self, layer: usize) -> f64 {
        self.gains[layer]
    }

    /// Received power `h² ν̂²` of a layer.
    pub fn power(&self, layer: usize) -> f64 {
        self.powers[layer]
    }

    /// Layers with a non-zero gain, ascending.
    pub fn detectable(&self) -> Vec<usize> {
        (0..self.len()).filter(|&l| self.gains[l] != 0.0).collect()
    }

    /// Unclamped rate in nats of `members` (ascending) against the total
    /// interference-plus-noise power `floor`.
    pub(crate) fn raw_nats(&self, members: &[usize], floor: f64) -> f64 {
        let mut tail = floor;
        let mut total = 0.0;
        for &l in members.iter().rev() {
            let p = self.powers[l];
            total += self.offsets[l] + 0.5 * math::log1p(p / tail);
            tail += p;
        }
        total
    }

    fn check_sets(&self, signal: &[usize], noise: &[usize]) -> Result<Vec<usize>> {
        if signal.is_empty() {
            return Err(Error::InvalidArgument("signal set is empty"));
        }
        let mut v = signal.to_vec();
        v.sort_unstable();
        if v.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("signal set has duplicates"));
        }
        if v.iter().chain(noise).any(|&l| l >= self.len()) {
            return Err(Error::InvalidArgument("layer index out of range"));
        }
        if noise.iter().any(|g| v.binary_search(g).is_ok()) {
            return Err(Error::InvalidArgument("signal and noise sets overlap"));
        }
        Ok(v)
    }
}

/// `σ² + Σ_{l ∈ remaining} h_l² ν̂_l²`: the effective AWGN variance while the
/// `remaining` layers are still undecoded.
pub fn stage_noise_variance(ctx: &RateContext, remaining: &[usize]) -> f64 {
    remaining
        .iter()
        .fold(ctx.noise_var, |acc, &l| acc + ctx.powers[l])
}

/// Signed closed-form rate in bits (no clamping).
pub fn achievable_rate_raw(ctx: &RateContext, signal: &[usize], noise: &[usize]) -> Result<f64> {
    let v = ctx.check_sets(signal, noise)?;
    let mut g = noise.to_vec();
    g.sort_unstable();
    let floor = stage_noise_variance(ctx, &g);
    Ok(nats_to_bits(ctx.raw_nats(&v, floor)))
}

/// Achievable rate `R(V, G)` in bits per channel use, clamped at zero.
pub fn achievable_rate(ctx: &RateContext, signal: &[usize], noise: &[usize]) -> Result<f64> {
    achievable_rate_raw(ctx, signal, noise).map(|r| r.max(0.0))
}

/// Rate increment margin: the largest uniform per-layer increase of `rates`
/// on `signal` that keeps decoding `signal` (with `noise` as noise) feasible,
/// `min_{∅≠D⊆V} (R(D, G) − ‖R_D‖₁) / |D|`.
pub fn rate_margin(
    ctx: &RateContext,
    signal: &[usize],
    noise: &[usize],
    rates: &RateVector,
) -> Result<f64> {
    let v = ctx.check_sets(signal, noise)?;
    if v.len() > MAX_SUBSET_LAYERS {
        return Err(Error::InvalidArgument("signal set too large for subset enumeration"));
    }
    if rates.len() != ctx.len() {
        return Err(Error::InvalidArgument("rate vector length mismatch"));
    }
    let mut current = Vec::with_capacity(v.len());
    for &l in &v {
        match rates.get(l) {
            LayerRate::Finite(r) => current.push(r),
            LayerRate::Unconstrained => {
                return Err(Error::InvalidArgument("unconstrained layer inside a margin query"))
            }
        }
    }
    let mut g = noise.to_vec();
    g.sort_unstable();
    let floor = stage_noise_variance(ctx, &g);
    Ok(margin_with_floor(ctx, &v, &current, floor).clamped)
}

/// Margin of `members` (ascending, with current rates `current`) at a given
/// interference floor. `raw` uses unclamped rates and is only used to rank
/// candidates; `clamped` is the margin value itself.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Margin {
    pub clamped: f64,
    pub raw: f64,
}

pub(crate) fn margin_with_floor(
    ctx: &RateContext,
    members: &[usize],
    current: &[f64],
    floor: f64,
) -> Margin {
    let n = members.len();
    let mut best = Margin {
        clamped: f64::INFINITY,
        raw: f64::INFINITY,
    };
    let mut subset = Vec::with_capacity(n);
    for mask in 1u32..(1u32 << n) {
        subset.clear();
        let mut used = 0.0;
        for (bit, &l) in members.iter().enumerate() {
            if mask & (1 << bit) != 0 {
                subset.push(l);
                used += current[bit];
            }
        }
        let size = subset.len() as f64;
        let raw = nats_to_bits(ctx.raw_nats(&subset, floor));
        let clamped = (raw.max(0.0) - used) / size;
        let raw = (raw - used) / size;
        if clamped < best.clamped {
            best.clamped = clamped;
        }
        if raw < best.raw {
            best.raw = raw;
        }
    }
    best
}
