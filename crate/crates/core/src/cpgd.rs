//! Greedy max-min decoding order for constrained partial group decoding.
//!
//! The greedy repeatedly extracts the group `V` (at most `τ` layers) with the
//! smallest per-layer rate `R(V, G)/|V|` among the layers still pending, where
//! `G` holds the groups extracted so far. Extracted groups are decoded last, so
//! the final order is the extraction sequence reversed.

use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::math::nats_to_bits;
use crate::rates::{margin_with_floor, LayerRate, RateContext, RateVector};
use crate::{Error, Result};

/// Largest group size the greedy accepts.
pub const MAX_GROUP_SIZE: usize = 4;

/// Ordered partition `Q_1..Q_p` of the detectable layers together with the
/// local rate of every layer. Layers outside the partition carry
/// [`LayerRate::Unconstrained`].
#[derive(Clone, Debug, PartialEq)]
pub struct DecodingOrder {
    groups: Vec<Vec<usize>>,
    rates: RateVector,
}

impl DecodingOrder {
    /// Wraps an order and its rates. Groups are stored with members ascending.
    pub fn new(mut groups: Vec<Vec<usize>>, rates: RateVector) -> Result<Self> {
        let mut seen = alloc::vec![false; rates.len()];
        for g in groups.iter_mut() {
            if g.is_empty() {
                return Err(Error::InvalidArgument("empty decoding group"));
            }
            g.sort_unstable();
            for &l in g.iter() {
                if l >= seen.len() || seen[l] {
                    return Err(Error::InvalidArgument("decoding groups are not a partition"));
                }
                seen[l] = true;
            }
        }
        for (l, covered) in seen.iter().enumerate() {
            if *covered != rates.get(l).is_finite() {
                return Err(Error::InvalidArgument("rates do not match the decoded layers"));
            }
        }
        Ok(DecodingOrder { groups, rates })
    }

    /// Groups in decoding order (`groups()[0]` is decoded first).
    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn rates(&self) -> &RateVector {
        &self.rates
    }

    /// Number of groups `p`.
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Total number of layers `L` the rate vector spans.
    pub fn layer_count(&self) -> usize {
        self.rates.len()
    }

    /// 0-based index of the group containing `layer`.
    pub fn group_of(&self, layer: usize) -> Option<usize> {
        self.groups.iter().position(|g| g.binary_search(&layer).is_ok())
    }

    /// Decoded layers, ascending.
    pub fn layers(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.groups.iter().flatten().copied().collect();
        all.sort_unstable();
        all
    }

    /// Smallest local rate (the max-min objective value).
    pub fn min_rate(&self) -> f64 {
        self.rates
            .finite_entries()
            .map(|(_, r)| r)
            .fold(f64::INFINITY, f64::min)
    }

    /// Relabels every layer `l` as `perm[l]`, keeping groups and rates.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.rates.len() {
            return Err(Error::InvalidArgument("permutation length mismatch"));
        }
        let groups = self
            .groups
            .iter()
            .map(|g| g.iter().map(|&l| perm[l]).collect())
            .collect();
        let mut rates = RateVector::unconstrained(self.rates.len());
        for (l, &p) in perm.iter().enumerate() {
            rates.set(p, self.rates.get(l));
        }
        DecodingOrder::new(groups, rates)
    }
}

/// `K_x`: layers with a non-zero gain at the position.
pub fn detectable_layers(ctx: &RateContext) -> Vec<usize> {
    ctx.detectable()
}

/// Candidate groups of size `1..=tau` drawn from `pool`, visited in
/// lexicographic order of positions within `pool`.
pub(crate) fn for_each_group(pool: &[usize], tau: usize, mut visit: impl FnMut(&[usize])) {
    let mut pick = [0usize; MAX_GROUP_SIZE];
    let mut members = [0usize; MAX_GROUP_SIZE];
    let n = pool.len();
    for k in 1..=tau.min(n) {
        for (j, p) in pick.iter_mut().enumerate().take(k) {
            *p = j;
        }
        'next: loop {
            for j in 0..k {
                members[j] = pool[pick[j]];
            }
            visit(&members[..k]);
            let mut j = k;
            while j > 0 {
                j -= 1;
                if pick[j] < n - k + j {
                    pick[j] += 1;
                    for t in j + 1..k {
                        pick[t] = pick[t - 1] + 1;
                    }
                    continue 'next;
                }
            }
            break;
        }
    }
}

/// Tie-break key of a group: member ranks sorted descending. Comparing keys
/// lexicographically is comparing the bitmasks `Σ 2^rank`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) struct GroupKey {
    ranks: [u32; MAX_GROUP_SIZE],
    len: usize,
}

impl GroupKey {
    pub(crate) fn new(members: &[usize], ranks: &[u32]) -> Self {
        let mut key = GroupKey {
            ranks: [0; MAX_GROUP_SIZE],
            len: members.len(),
        };
        for (slot, &l) in key.ranks.iter_mut().zip(members) {
            *slot = ranks[l];
        }
        key.ranks[..key.len].sort_unstable_by(|a, b| b.cmp(a));
        key
    }

    fn cmp_ranks(&self, other: &Self) -> Ordering {
        self.ranks[..self.len].cmp(&other.ranks[..other.len])
    }
}

/// Best candidate so far in an argmin scan.
pub(crate) struct Argmin {
    pub score: f64,
    pub value: f64,
    pub key: Option<GroupKey>,
    pub members: [usize; MAX_GROUP_SIZE],
    pub len: usize,
}

impl Argmin {
    pub(crate) fn new() -> Self {
        Argmin {
            score: f64::INFINITY,
            value: f64::INFINITY,
            key: None,
            members: [0; MAX_GROUP_SIZE],
            len: 0,
        }
    }

    pub(crate) fn offer(&mut self, score: f64, value: f64, members: &[usize], ranks: &[u32]) {
        let key = GroupKey::new(members, ranks);
        let better = match self.key {
            None => true,
            Some(best) => {
                score < self.score || (score == self.score && key.cmp_ranks(&best) == Ordering::Less)
            }
        };
        if better {
            self.score = score;
            self.value = value;
            self.key = Some(key);
            self.members[..members.len()].copy_from_slice(members);
            self.len = members.len();
        }
    }

    pub(crate) fn members(&self) -> &[usize] {
        &self.members[..self.len]
    }
}

pub(crate) fn check_tau(tau: usize) -> Result<()> {
    if tau == 0 || tau > MAX_GROUP_SIZE {
        return Err(Error::InvalidParameter("group size must be between 1 and 4"));
    }
    Ok(())
}

/// Identity tie-break ranks (`rank(l) = l`).
pub fn identity_ranks(len: usize) -> Vec<u32> {
    (0..len as u32).collect()
}

/// Greedy decoding order with ties broken by lowest linear index.
pub fn greedy_order(ctx: &RateContext, tau: usize) -> Result<DecodingOrder> {
    greedy_order_ranked(ctx, tau, &identity_ranks(ctx.len()))
}

/// Greedy decoding order with ties between equal-rate groups broken by the
/// lowest bitmask of `ranks`.
///
/// Groups are ranked by their unclamped rate; the recorded rate is the
/// clamped one. With clamping, every layer whose bound is negative would tie
/// at zero and the choice between them would be arbitrary.
pub fn greedy_order_ranked(ctx: &RateContext, tau: usize, ranks: &[u32]) -> Result<DecodingOrder> {
    check_tau(tau)?;
    if ranks.len() != ctx.len() {
        return Err(Error::InvalidArgument("one rank per layer required"));
    }
    let mut pending = ctx.detectable();
    if pending.is_empty() {
        return Err(Error::Outage);
    }
    let mut floor = ctx.noise_var();
    let mut extracted: Vec<Vec<usize>> = Vec::new();
    let mut rates = RateVector::unconstrained(ctx.len());
    while !pending.is_empty() {
        let mut best = Argmin::new();
        for_each_group(&pending, tau, |v| {
            let size = v.len() as f64;
            let raw = nats_to_bits(ctx.raw_nats(v, floor));
            best.offer(raw / size, raw.max(0.0) / size, v, ranks);
        });
        let chosen = best.members().to_vec();
        for &l in &chosen {
            rates.set(l, LayerRate::Finite(best.value));
            floor += ctx.power(l);
        }
        pending.retain(|l| chosen.binary_search(l).is_err());
        extracted.push(chosen);
    }
    extracted.reverse();
    DecodingOrder::new(extracted, rates)
}

/// Rates of a given order: group `Q_m` gets the margin
/// `Δ(Q_m, ∪_{ℓ>m} Q_ℓ, 0)`, shared by its layers.
pub fn rates_under_fixed_order(ctx: &RateContext, groups: &[Vec<usize>]) -> Result<RateVector> {
    let detectable = ctx.detectable();
    let mut seen = alloc::vec![false; ctx.len()];
    let mut count = 0;
    for g in groups {
        if g.is_empty() || g.len() > crate::rates::MAX_SUBSET_LAYERS {
            return Err(Error::InvalidArgument("invalid decoding group size"));
        }
        for &l in g {
            if l >= ctx.len() || seen[l] || ctx.gain(l) == 0.0 {
                return Err(Error::InvalidArgument("order is not a partition of the detectable layers"));
            }
            seen[l] = true;
            count += 1;
        }
    }
    if count != detectable.len() {
        return Err(Error::InvalidArgument("order does not cover the detectable layers"));
    }
    let mut rates = RateVector::unconstrained(ctx.len());
    let mut floor = ctx.noise_var();
    let mut members = Vec::new();
    for g in groups.iter().rev() {
        members.clear();
        members.extend_from_slice(g);
        members.sort_unstable();
        let zeros = alloc::vec![0.0; members.len()];
        let delta = margin_with_floor(ctx, &members, &zeros, floor).clamped;
        for &l in &members {
            rates.set(l, LayerRate::Finite(delta));
            floor += ctx.power(l);
        }
    }
    Ok(rates)
}

/// Minimum finite entry of a rate vector.
pub fn min_rate(rates: &RateVector) -> f64 {
    rates
        .finite_entries()
        .map(|(_, r)| r)
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::achievable_rate;
    use crate::signaling::LayerStats;
    use alloc::vec;
    use proptest::prelude::*;

    fn gaussian_ctx(gains: &[f64], noise_var: f64) -> RateContext {
        let stats = vec![LayerStats::gaussian(1.0); gains.len()];
        RateContext::from_layer_gains(gains.to_vec(), &stats, noise_var).unwrap()
    }

    /// Every ordered partition of `items` into groups of size at most `tau`.
    fn ordered_partitions(items: &[usize], tau: usize) -> Vec<Vec<Vec<usize>>> {
        if items.is_empty() {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        let n = items.len();
        for mask in 1u32..(1 << n) {
            if mask.count_ones() as usize > tau {
                continue;
            }
            let head: Vec<usize> = (0..n).filter(|b| mask & (1 << b) != 0).map(|b| items[b]).collect();
            let rest: Vec<usize> = (0..n).filter(|b| mask & (1 << b) == 0).map(|b| items[b]).collect();
            for tail in ordered_partitions(&rest, tau) {
                let mut order = vec![head.clone()];
                order.extend(tail);
                out.push(order);
            }
        }
        out
    }

    fn brute_force_max_min(ctx: &RateContext, tau: usize) -> f64 {
        ordered_partitions(&ctx.detectable(), tau)
            .iter()
            .map(|q| min_rate(&rates_under_fixed_order(ctx, q).unwrap()))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn group_enumeration_counts() {
        let pool = [3, 5, 8, 9, 11];
        let mut n = 0;
        for_each_group(&pool, 3, |g| {
            assert!(g.windows(2).all(|w| w[0] < w[1]));
            n += 1;
        });
        assert_eq!(n, 5 + 10 + 10);
    }

    #[test]
    fn strong_layer_decoded_first() {
        let ctx = gaussian_ctx(&[3.0, 0.5], 0.1);
        let order = greedy_order(&ctx, 1).unwrap();
        assert_eq!(order.groups(), &[vec![0], vec![1]]);
        let best = brute_force_max_min(&ctx, 1);
        assert!((order.min_rate() - best).abs() < 1e-14);
        let worst = rates_under_fixed_order(&ctx, &[vec![1], vec![0]]).unwrap();
        assert!(min_rate(&worst) < order.min_rate());
    }

    #[test]
    fn pair_greedy_misses_the_optimum_on_a_known_instance() {
        let ctx = gaussian_ctx(&[1.4102380090681044, 1.5454313627752552, 2.024897056294433], 0.01);
        let order = greedy_order(&ctx, 2).unwrap();
        assert_eq!(order.groups(), &[vec![2], vec![0, 1]]);
        let best = rates_under_fixed_order(&ctx, &[vec![1, 2], vec![0]]).unwrap();
        assert!((min_rate(&best) - brute_force_max_min(&ctx, 2)).abs() < 1e-14);
        assert!(min_rate(&best) > order.min_rate() + 0.04);
    }

    #[test]
    fn single_layer_order() {
        let ctx = gaussian_ctx(&[0.7], 0.1);
        let order = greedy_order(&ctx, 1).unwrap();
        assert_eq!(order.groups(), &[vec![0]]);
        let r = achievable_rate(&ctx, &[0], &[]).unwrap();
        assert_eq!(order.rates().get(0), LayerRate::Finite(r));
        assert_eq!(rates_under_fixed_order(&ctx, order.groups()).unwrap(), *order.rates());
    }

    #[test]
    fn outage_when_nothing_detectable() {
        let ctx = gaussian_ctx(&[0.0, 0.0], 0.1);
        assert_eq!(greedy_order(&ctx, 1), Err(Error::Outage));
        assert!(detectable_layers(&ctx).is_empty());
    }

    #[test]
    fn undetectable_layers_stay_unconstrained() {
        let ctx = gaussian_ctx(&[1.0, 0.0, 0.4], 0.1);
        let order = greedy_order(&ctx, 2).unwrap();
        assert_eq!(order.layers(), vec![0, 2]);
        assert_eq!(order.rates().get(1), LayerRate::Unconstrained);
    }

    #[test]
    fn invalid_partitions_rejected() {
        let ctx = gaussian_ctx(&[1.0, 0.5, 0.0], 0.1);
        assert!(rates_under_fixed_order(&ctx, &[vec![0]]).is_err());
        assert!(rates_under_fixed_order(&ctx, &[vec![0], vec![0, 1]]).is_err());
        assert!(rates_under_fixed_order(&ctx, &[vec![0], vec![1], vec![2]]).is_err());
        assert!(rates_under_fixed_order(&ctx, &[vec![0, 1]]).is_ok());
    }

    #[test]
    fn ties_follow_ranks() {
        let ctx = gaussian_ctx(&[1.0, 1.0], 0.1);
        let by_index = greedy_order(&ctx, 1).unwrap();
        assert_eq!(by_index.groups(), &[vec![1], vec![0]]);
        let flipped = greedy_order_ranked(&ctx, 1, &[1, 0]).unwrap();
        assert_eq!(flipped.groups(), &[vec![0], vec![1]]);
    }

    #[test]
    fn permutation_relabels() {
        let ctx = gaussian_ctx(&[2.0, 1.0, 0.5], 0.1);
        let order = greedy_order(&ctx, 1).unwrap();
        let p = order.permuted(&[2, 0, 1]).unwrap();
        assert_eq!(p.groups().len(), 3);
        for l in 0..3 {
            assert_eq!(p.rates().get([2, 0, 1][l]), order.rates().get(l));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn successive_greedy_is_max_min_optimal_for_gaussian_inputs(
            gains in proptest::collection::vec(0.05f64..3.0, 1..=5),
            noise in 0.01f64..1.0,
        ) {
            let ctx = gaussian_ctx(&gains, noise);
            let order = greedy_order(&ctx, 1).unwrap();
            let best = brute_force_max_min(&ctx, 1);
            prop_assert!((order.min_rate() - best).abs() <= 1e-12 * best.abs().max(1.0));
        }

        #[test]
        fn group_greedy_never_beats_exhaustive_search(
            gains in proptest::collection::vec(0.05f64..3.0, 1..=5),
            noise in 0.01f64..1.0,
        ) {
            let ctx = gaussian_ctx(&gains, noise);
            let order = greedy_order(&ctx, 2).unwrap();
            let best = brute_force_max_min(&ctx, 2);
            prop_assert!(order.min_rate() <= best + 1e-12 * best.abs().max(1.0));
        }

        #[test]
        fn greedy_is_a_bounded_partition(
            gains in proptest::collection::vec(prop_oneof![Just(0.0), 0.05f64..3.0], 1..=7),
            tau in 1usize..=3,
        ) {
            let ctx = gaussian_ctx(&gains, 0.2);
            match greedy_order(&ctx, tau) {
                Err(Error::Outage) => prop_assert!(gains.iter().all(|&g| g == 0.0)),
                Err(e) => prop_assert!(false, "{e}"),
                Ok(order) => {
                    prop_assert!(order.groups().iter().all(|g| !g.is_empty() && g.len() <= tau));
                    prop_assert_eq!(order.layers(), ctx.detectable());
                    let fixed = rates_under_fixed_order(&ctx, order.groups()).unwrap();
                    prop_assert_eq!(&fixed, order.rates());
                    for g in order.groups() {
                        let r0 = order.rates().get(g[0]);
                        prop_assert!(g.iter().all(|&l| order.rates().get(l) == r0));
                    }
                }
            }
        }
    }
}
