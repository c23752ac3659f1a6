//! Iterative rate update for associated users.
//!
//! Each round rebuilds every user's order greedily by smallest rate margin
//! given the current global rates, records the margins from the moment a
//! layer of the user's transmitter has been extracted, and raises the global
//! rates by the per-layer minimum over users.

use alloc::vec::Vec;

use super::UserView;
use crate::cpgd::{check_tau, for_each_group, Argmin};
use crate::rates::{margin_with_floor, LayerRate, RateVector};
use crate::signaling::LayerLayout;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateSettings {
    pub tau: usize,
    /// Stop once the largest increment falls below this (bits).
    pub epsilon: f64,
    pub max_rounds: usize,
}

impl Default for UpdateSettings {
    fn default() -> Self {
        UpdateSettings {
            tau: 1,
            epsilon: 1e-6,
            max_rounds: 50,
        }
    }
}

/// A user's order after the update.
#[derive(Clone, Debug, PartialEq)]
pub struct UserDecoding {
    /// Groups the user decodes, in decoding order.
    pub decoded: Vec<Vec<usize>>,
    /// Layers left undecoded (ascending).
    pub discarded: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UpdateResult {
    /// Updated global rates `r̂`.
    pub rates: RateVector,
    pub orders: Vec<UserDecoding>,
    pub rounds: usize,
    pub converged: bool,
    /// Assigned-layer sum rate before the first round and after each round.
    pub sum_history: Vec<f64>,
    /// Smallest increment applied in each round.
    pub min_increment: Vec<f64>,
}

/// Runs rounds until the increments vanish or `max_rounds` is hit.
///
/// Layers no user records receive a zero increment. Unconstrained entries of
/// `initial` start at zero.
pub fn iterative_rate_update(
    users: &[UserView],
    layout: &LayerLayout,
    assignment: &[usize],
    initial: &RateVector,
    settings: &UpdateSettings,
) -> Result<UpdateResult> {
    check_tau(settings.tau)?;
    if users.len() != assignment.len() || users.is_empty() {
        return Err(Error::InvalidArgument("one assigned transmitter per user required"));
    }
    if initial.len() != layout.len() || users.iter().any(|u| u.ctx.len() != layout.len()) {
        return Err(Error::InvalidArgument("rate vector does not match the layout"));
    }
    for (u, &tx) in users.iter().zip(assignment) {
        if tx >= layout.transmitters() || layout.layers_of(tx).all(|l| u.ctx.gain(l) == 0.0) {
            return Err(Error::Infeasible("assigned transmitter is not detectable by the user"));
        }
    }

    let mut rates: Vec<f64> = initial
        .as_slice()
        .iter()
        .map(|r| r.finite().unwrap_or(0.0))
        .collect();
    let assigned_sum = |r: &[f64]| -> f64 {
        assignment
            .iter()
            .flat_map(|&tx| layout.layers_of(tx))
            .map(|l| r[l])
            .sum()
    };
    let mut sum_history = alloc::vec![assigned_sum(&rates)];
    let mut min_increment = Vec::new();
    let mut orders = Vec::new();
    let mut rounds = 0;
    let mut converged = false;

    while rounds < settings.max_rounds {
        rounds += 1;
        let mut increment = alloc::vec![f64::INFINITY; layout.len()];
        orders.clear();
        for (user, &tx) in users.iter().zip(assignment) {
            let (local, decoding) = user_round(user, layout, tx, &rates, settings.tau);
            for (inc, r) in increment.iter_mut().zip(local) {
                *inc = inc.min(r);
            }
            orders.push(decoding);
        }
        let mut largest: f64 = 0.0;
        let mut smallest = f64::INFINITY;
        for (r, inc) in rates.iter_mut().zip(increment) {
            let inc = if inc.is_finite() { inc } else { 0.0 };
            *r += inc;
            largest = largest.max(inc.abs());
            smallest = smallest.min(inc);
        }
        min_increment.push(smallest);
        sum_history.push(assigned_sum(&rates));
        if largest < settings.epsilon {
            converged = true;
            break;
        }
    }

    Ok(UpdateResult {
        rates: RateVector::from_finite(&rates),
        orders,
        rounds,
        converged,
        sum_history,
        min_increment,
    })
}

/// One user's pass: greedy extraction by smallest margin `Δ(V, G, r̂)` and the
/// recorded increments (`+∞` where nothing was recorded).
fn user_round(
    user: &UserView,
    layout: &LayerLayout,
    tx: usize,
    rates: &[f64],
    tau: usize,
) -> (Vec<f64>, UserDecoding) {
    let ctx = &user.ctx;
    let mut local = alloc::vec![f64::INFINITY; layout.len()];
    for l in layout.layers_of(tx) {
        local[l] = 0.0;
    }
    let signal = layout.layers_of(tx);
    let mut pending = ctx.detectable();
    let mut floor = ctx.noise_var();
    let mut extracted: Vec<Vec<usize>> = Vec::new();
    let mut first_recorded = None;
    let mut current = Vec::with_capacity(tau);
    while !pending.is_empty() {
        let mut best = Argmin::new();
        for_each_group(&pending, tau, |v| {
            current.clear();
            current.extend(v.iter().map(|&l| rates[l]));
            let m = margin_with_floor(ctx, v, &current, floor);
            best.offer(m.raw, m.clamped, v, &user.ranks);
        });
        let chosen = best.members().to_vec();
        for &l in &chosen {
            floor += ctx.power(l);
        }
        pending.retain(|l| chosen.binary_search(l).is_err());
        if first_recorded.is_none() && chosen.iter().any(|l| signal.contains(l)) {
            first_recorded = Some(extracted.len());
        }
        if first_recorded.is_some() {
            for &l in &chosen {
                local[l] = best.value;
            }
        }
        extracted.push(chosen);
    }
    let split = first_recorded.unwrap_or(extracted.len());
    let mut discarded: Vec<usize> = extracted[..split].iter().flatten().copied().collect();
    discarded.sort_unstable();
    let decoded = extracted[split..].iter().rev().cloned().collect();
    (local, UserDecoding { decoded, discarded })
}

/// Whether `rates` is decodable by every user in its updated order: each
/// decoded group's margin against the later groups (and the discarded
/// layers, which stay undecoded) is at least `-tolerance`.
pub fn is_decodable(
    users: &[UserView],
    orders: &[UserDecoding],
    rates: &RateVector,
    tolerance: f64,
) -> Result<bool> {
    for (user, decoding) in users.iter().zip(orders) {
        let mut noise = decoding.discarded.clone();
        for group in decoding.decoded.iter().rev() {
            let m = crate::rates::rate_margin(&user.ctx, group, &noise, rates)?;
            if m < -tolerance {
                return Ok(false);
            }
            noise.extend_from_slice(group);
        }
    }
    Ok(true)
}

impl UpdateResult {
    pub fn rate(&self, layer: usize) -> f64 {
        match self.rates.get(layer) {
            LayerRate::Finite(r) => r,
            LayerRate::Unconstrained => 0.0,
        }
    }
}
