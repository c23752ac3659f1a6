//! Transmitter-user association maximizing the sum of global layer rates.
//!
//! Every user is served by exactly one transmitter and every transmitter by
//! at most one user. A user decodes its order only as deep as the last group
//! holding a layer of its transmitter; later groups are discarded and impose
//! no constraint. A layer's global rate is the minimum over all users that
//! decode it.

mod ga;
mod update;

pub use ga::{solve_ga, GaConfig};
pub use update::{is_decodable, iterative_rate_update, UpdateResult, UpdateSettings, UserDecoding};

use alloc::vec::Vec;

use crate::channel::Point3;
use crate::cpgd::DecodingOrder;
use crate::rates::{LayerRate, RateContext, RateVector};
use crate::signaling::LayerLayout;
use crate::{Error, Result};

/// Largest number of assignments the exhaustive search will enumerate.
pub const EXHAUSTIVE_LIMIT: u64 = 5_000_000;

/// What the association needs to know about one user.
#[derive(Clone, Debug, PartialEq)]
pub struct UserView {
    pub position: Point3,
    pub ctx: RateContext,
    /// Phase-one decoding order and local rates.
    pub order: DecodingOrder,
    /// Tie-break ranks for the iterative update.
    pub ranks: Vec<u32>,
}

/// `m_j`: 0-based index of the last group containing a layer of `tx`.
pub fn truncate_depth(order: &DecodingOrder, layout: &LayerLayout, tx: usize) -> Result<usize> {
    if tx >= layout.transmitters() {
        return Err(Error::InvalidArgument("transmitter index out of range"));
    }
    layout
        .layers_of(tx)
        .filter_map(|l| order.group_of(l))
        .max()
        .ok_or(Error::Infeasible("assigned transmitter is not detectable by the user"))
}

/// Local rates with every group after `m_j` discarded.
pub fn truncated_rates(order: &DecodingOrder, layout: &LayerLayout, tx: usize) -> Result<RateVector> {
    let depth = truncate_depth(order, layout, tx)?;
    let mut rates = order.rates().clone();
    for g in &order.groups()[depth + 1..] {
        for &l in g {
            rates.set(l, LayerRate::Unconstrained);
        }
    }
    Ok(rates)
}

/// Element-wise minimum over users.
pub fn global_rates(local: &[RateVector]) -> Result<RateVector> {
    let first = local.first().ok_or(Error::InvalidArgument("no users"))?;
    let mut out = first.clone();
    for r in &local[1..] {
        if r.len() != out.len() {
            return Err(Error::InvalidArgument("rate vectors differ in length"));
        }
        out.min_with(r);
    }
    Ok(out)
}

/// Sum of the global rates of every assigned transmitter's layers.
/// Layers no user constrains count as 0.
pub fn objective(assignment: &[usize], layout: &LayerLayout, global: &RateVector) -> f64 {
    assignment
        .iter()
        .flat_map(|&tx| layout.layers_of(tx))
        .map(|l| global.get(l).finite().unwrap_or(0.0))
        .sum()
}

/// 0-1 association matrix `η` (users × transmitters).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Eta {
    users: usize,
    transmitters: usize,
    data: Vec<u8>,
}

impl Eta {
    pub fn zeros(users: usize, transmitters: usize) -> Self {
        Eta {
            users,
            transmitters,
            data: alloc::vec![0; users * transmitters],
        }
    }

    pub fn from_assignment(assignment: &[usize], transmitters: usize) -> Result<Self> {
        let mut eta = Eta::zeros(assignment.len(), transmitters);
        for (j, &tx) in assignment.iter().enumerate() {
            if tx >= transmitters {
                return Err(Error::InvalidArgument("transmitter index out of range"));
            }
            eta.data[j * transmitters + tx] = 1;
        }
        Ok(eta)
    }

    pub fn get(&self, user: usize, tx: usize) -> u8 {
        self.data[user * self.transmitters + tx]
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn transmitters(&self) -> usize {
        self.transmitters
    }
}

/// Objective in its literal form `Σ_{i,j,ℓ} r̄[η_ji · lin(i, ℓ)]` with the
/// sentinel `r̄[0] = 0` (linear indices 1-based).
pub fn objective_eta(eta: &Eta, layout: &LayerLayout, global: &RateVector) -> Result<f64> {
    if eta.transmitters != layout.transmitters() || global.len() != layout.len() {
        return Err(Error::InvalidArgument("association does not match the layer layout"));
    }
    for j in 0..eta.users {
        if (0..eta.transmitters).map(|i| eta.get(j, i) as usize).sum::<usize>() > 1 {
            return Err(Error::InvalidArgument("a user is served by several transmitters"));
        }
    }
    for i in 0..eta.transmitters {
        if (0..eta.users).map(|j| eta.get(j, i) as usize).sum::<usize>() > 1 {
            return Err(Error::InvalidArgument("a transmitter serves several users"));
        }
    }
    let mut padded = Vec::with_capacity(global.len() + 1);
    padded.push(0.0);
    padded.extend(global.as_slice().iter().map(|r| r.finite().unwrap_or(0.0)));
    let mut total = 0.0;
    for i in 0..eta.transmitters {
        for j in 0..eta.users {
            for l in layout.layers_of(i) {
                total += padded[eta.get(j, i) as usize * (l + 1)];
            }
        }
    }
    Ok(total)
}

/// A solved association.
#[derive(Clone, Debug, PartialEq)]
pub struct Association {
    /// Transmitter serving each user.
    pub assignment: Vec<usize>,
    /// `m_j` per user (0-based group index).
    pub depths: Vec<usize>,
    /// Global rates `r̄`.
    pub global: RateVector,
    pub objective: f64,
}

/// Precomputed association instance.
#[derive(Clone, Debug)]
pub struct AssociationProblem {
    layout: LayerLayout,
    /// Detectable transmitters per user, ascending.
    candidates: Vec<Vec<usize>>,
    /// Group index of every layer per user (`usize::MAX` if undetectable).
    group_of: Vec<Vec<usize>>,
    rates: Vec<Vec<f64>>,
    /// `m_j` per user and transmitter (`usize::MAX` if undetectable).
    depth: Vec<Vec<usize>>,
}

impl AssociationProblem {
    pub fn new(users: &[UserView], layout: &LayerLayout) -> Result<Self> {
        if users.is_empty() {
            return Err(Error::InvalidArgument("no users"));
        }
        let mut candidates = Vec::with_capacity(users.len());
        let mut group_of = Vec::with_capacity(users.len());
        let mut rates = Vec::with_capacity(users.len());
        let mut depth = Vec::with_capacity(users.len());
        for u in users {
            if u.order.layer_count() != layout.len() {
                return Err(Error::InvalidArgument("user order does not match the layout"));
            }
            let mut g = alloc::vec![usize::MAX; layout.len()];
            for (m, group) in u.order.groups().iter().enumerate() {
                for &l in group {
                    g[l] = m;
                }
            }
            let d: Vec<usize> = (0..layout.transmitters())
                .map(|tx| layout.layers_of(tx).map(|l| g[l]).filter(|&m| m != usize::MAX).max().unwrap_or(usize::MAX))
                .collect();
            candidates.push((0..layout.transmitters()).filter(|&tx| d[tx] != usize::MAX).collect());
            rates.push(
                u.order
                    .rates()
                    .as_slice()
                    .iter()
                    .map(|r| r.finite().unwrap_or(f64::INFINITY))
                    .collect(),
            );
            group_of.push(g);
            depth.push(d);
        }
        let problem = AssociationProblem {
            layout: layout.clone(),
            candidates,
            group_of,
            rates,
            depth,
        };
        if problem.max_matching() < users.len() {
            return Err(Error::Infeasible("users cannot all be served by distinct detectable transmitters"));
        }
        Ok(problem)
    }

    pub fn users(&self) -> usize {
        self.candidates.len()
    }

    pub fn layout(&self) -> &LayerLayout {
        &self.layout
    }

    pub fn candidates(&self, user: usize) -> &[usize] {
        &self.candidates[user]
    }

    fn max_matching(&self) -> usize {
        let mut owner = alloc::vec![usize::MAX; self.layout.transmitters()];
        let mut matched = 0;
        for j in 0..self.users() {
            let mut seen = alloc::vec![false; owner.len()];
            if self.augment(j, &mut owner, &mut seen, 0) {
                matched += 1;
            }
        }
        matched
    }

    /// Kuhn augmenting path from user `j`, trying candidates starting at
    /// `offset` (cyclically).
    pub(crate) fn augment(&self, j: usize, owner: &mut [usize], seen: &mut [bool], offset: usize) -> bool {
        let cands = &self.candidates[j];
        for k in 0..cands.len() {
            let tx = cands[(k + offset) % cands.len()];
            if seen[tx] {
                continue;
            }
            seen[tx] = true;
            if owner[tx] == usize::MAX || self.augment(owner[tx], owner, seen, 0) {
                owner[tx] = j;
                return true;
            }
        }
        false
    }

    /// Global rates of an assignment (no validation).
    pub(crate) fn global_raw(&self, assignment: &[usize], out: &mut [f64]) {
        out.fill(f64::INFINITY);
        for (j, &tx) in assignment.iter().enumerate() {
            let depth = self.depth[j][tx];
            let groups = &self.group_of[j];
            let rates = &self.rates[j];
            for (l, slot) in out.iter_mut().enumerate() {
                if groups[l] <= depth && rates[l] < *slot {
                    *slot = rates[l];
                }
            }
        }
    }

    pub(crate) fn score(&self, assignment: &[usize], scratch: &mut [f64]) -> f64 {
        self.global_raw(assignment, scratch);
        assignment
            .iter()
            .flat_map(|&tx| self.layout.layers_of(tx))
            .map(|l| if scratch[l].is_finite() { scratch[l] } else { 0.0 })
            .sum()
    }

    /// Whether `assignment` serves every user with a distinct detectable
    /// transmitter.
    pub fn is_feasible(&self, assignment: &[usize]) -> bool {
        if assignment.len() != self.users() {
            return false;
        }
        let mut used = alloc::vec![false; self.layout.transmitters()];
        for (j, &tx) in assignment.iter().enumerate() {
            if tx >= used.len() || used[tx] || self.depth[j][tx] == usize::MAX {
                return false;
            }
            used[tx] = true;
        }
        true
    }

    /// Full evaluation of a feasible assignment.
    pub fn evaluate(&self, assignment: &[usize]) -> Result<Association> {
        if !self.is_feasible(assignment) {
            return Err(Error::InvalidArgument("assignment violates the association constraints"));
        }
        let mut raw = alloc::vec![0.0; self.layout.len()];
        let objective = self.score(assignment, &mut raw);
        let mut global = RateVector::unconstrained(raw.len());
        for (l, &r) in raw.iter().enumerate() {
            if r.is_finite() {
                global.set(l, LayerRate::Finite(r));
            }
        }
        Ok(Association {
            assignment: assignment.to_vec(),
            depths: assignment.iter().enumerate().map(|(j, &tx)| self.depth[j][tx]).collect(),
            global,
            objective,
        })
    }

    /// Number of assignments the exhaustive search would visit (an upper
    /// bound ignoring the distinctness constraint), saturating.
    pub fn search_space(&self) -> u64 {
        self.candidates
            .iter()
            .fold(1u64, |acc, c| acc.saturating_mul(c.len() as u64))
    }

    /// Best assignment by exhaustive enumeration, or `None` when the search
    /// space exceeds [`EXHAUSTIVE_LIMIT`]. Ties keep the first found.
    pub fn exhaustive(&self) -> Option<Association> {
        if self.search_space() > EXHAUSTIVE_LIMIT {
            return None;
        }
        let mut current = alloc::vec![0; self.users()];
        let mut used = alloc::vec![false; self.layout.transmitters()];
        let mut scratch = alloc::vec![0.0; self.layout.len()];
        let mut best: Option<(f64, Vec<usize>)> = None;
        self.search(0, &mut current, &mut used, &mut scratch, &mut best);
        best.map(|(_, a)| self.evaluate(&a).expect("search only visits feasible assignments"))
    }

    fn search(
        &self,
        j: usize,
        current: &mut Vec<usize>,
        used: &mut [bool],
        scratch: &mut [f64],
        best: &mut Option<(f64, Vec<usize>)>,
    ) {
        if j == self.users() {
            let s = self.score(current, scratch);
            if best.as_ref().is_none_or(|(b, _)| s > *b) {
                *best = Some((s, current.clone()));
            }
            return;
        }
        for &tx in &self.candidates[j] {
            if used[tx] {
                continue;
            }
            used[tx] = true;
            current[j] = tx;
            self.search(j + 1, current, used, scratch, best);
            used[tx] = false;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cpgd::greedy_order;
    use crate::signaling::LayerStats;
    use alloc::vec;

    fn order(groups: &[&[usize]], rates: &[f64]) -> DecodingOrder {
        DecodingOrder::new(
            groups.iter().map(|g| g.to_vec()).collect(),
            RateVector::from_finite(rates),
        )
        .unwrap()
    }

    fn user(gains: &[f64]) -> UserView {
        let stats = vec![LayerStats::gaussian(1.0); gains.len()];
        let ctx = RateContext::from_layer_gains(gains.to_vec(), &stats, 0.1).unwrap();
        let order = greedy_order(&ctx, 1).unwrap();
        UserView {
            position: Point3::new(0.0, 0.0, 2.0),
            ranks: (0..gains.len() as u32).collect(),
            ctx,
            order,
        }
    }

    #[test]
    fn depth_is_position_of_last_signal_group() {
        let layout = LayerLayout::uniform(4, 1).unwrap();
        let q = order(&[&[3], &[1], &[2], &[0]], &[1.0; 4]);
        assert_eq!(truncate_depth(&q, &layout, 2).unwrap(), 2);
        assert_eq!(truncate_depth(&q, &layout, 0).unwrap(), 3);
    }

    #[test]
    fn depth_with_split_layers() {
        let layout = LayerLayout::uniform(4, 2).unwrap();
        // tx 1 owns layers 2 and 3, placed in groups 2 and 5 (1-based) of 7.
        let q = order(&[&[0], &[2], &[1, 4], &[5], &[3], &[6], &[7]], &[1.0; 8]);
        assert_eq!(truncate_depth(&q, &layout, 1).unwrap() + 1, 5);
        let scan = q.groups().iter().rposition(|g| g.iter().any(|&l| l == 2 || l == 3)).unwrap();
        assert_eq!(truncate_depth(&q, &layout, 1).unwrap(), scan);
    }

    #[test]
    fn undetectable_assignment_is_infeasible() {
        let layout = LayerLayout::uniform(2, 1).unwrap();
        let mut rates = RateVector::from_finite(&[1.0, 0.0]);
        rates.set(1, LayerRate::Unconstrained);
        let q = DecodingOrder::new(vec![vec![0]], rates).unwrap();
        assert!(matches!(truncate_depth(&q, &layout, 1), Err(Error::Infeasible(_))));
    }

    #[test]
    fn global_rate_min_fold() {
        let mut a = RateVector::unconstrained(3);
        a.set(0, LayerRate::Finite(1.0));
        let mut b = RateVector::unconstrained(3);
        b.set(0, LayerRate::Finite(0.5));
        b.set(1, LayerRate::Finite(2.0));
        let g = global_rates(&[a, b]).unwrap();
        assert_eq!(g.get(0), LayerRate::Finite(0.5));
        assert_eq!(g.get(1), LayerRate::Finite(2.0));
        assert_eq!(g.get(2), LayerRate::Unconstrained);
    }

    #[test]
    fn sentinel_objective_matches_direct_sum() {
        let layout = LayerLayout::uniform(3, 2).unwrap();
        let global = RateVector::from_finite(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let eta = Eta::from_assignment(&[2, 0], 3).unwrap();
        assert_eq!(objective_eta(&eta, &layout, &global).unwrap(), 11.0 + 3.0);
        assert_eq!(objective(&[2, 0], &layout, &global), 14.0);
        assert_eq!(objective_eta(&Eta::zeros(2, 3), &layout, &global).unwrap(), 0.0);
        let twice = Eta::from_assignment(&[1, 1], 3).unwrap();
        assert!(objective_eta(&twice, &layout, &global).is_err());
    }

    #[test]
    fn single_user_picks_best_truncated_sum() {
        let layout = LayerLayout::uniform(3, 1).unwrap();
        let u = user(&[1.0, 0.5, 0.2]);
        let problem = AssociationProblem::new(core::slice::from_ref(&u), &layout).unwrap();
        let best = problem.exhaustive().unwrap();
        let manual = (0..3)
            .map(|tx| {
                let r = truncated_rates(&u.order, &layout, tx).unwrap();
                (objective(&[tx], &layout, &r), tx)
            })
            .fold((f64::NEG_INFINITY, 0), |a, b| if b.0 > a.0 { b } else { a });
        assert_eq!(best.assignment, vec![manual.1]);
        assert_eq!(best.objective, manual.0);
    }

    #[test]
    fn matching_feasibility() {
        let layout = LayerLayout::uniform(2, 1).unwrap();
        let a = user(&[1.0, 0.0]);
        let b = user(&[1.0, 0.0]);
        assert!(matches!(
            AssociationProblem::new(&[a.clone(), b], &layout),
            Err(Error::Infeasible(_))
        ));
        let c = user(&[1.0, 0.3]);
        let p = AssociationProblem::new(&[a, c], &layout).unwrap();
        assert_eq!(p.exhaustive().unwrap().assignment, vec![0, 1]);
    }

    #[test]
    fn evaluate_matches_fold_of_truncated_vectors() {
        let layout = LayerLayout::uniform(3, 1).unwrap();
        let users = [user(&[1.0, 0.5, 0.2]), user(&[0.3, 0.9, 0.4])];
        let p = AssociationProblem::new(&users, &layout).unwrap();
        let assoc = p.evaluate(&[0, 1]).unwrap();
        let locals: Vec<RateVector> = users
            .iter()
            .zip(&assoc.assignment)
            .map(|(u, &tx)| truncated_rates(&u.order, &layout, tx).unwrap())
            .collect();
        let g = global_rates(&locals).unwrap();
        assert_eq!(assoc.global, g);
        assert_eq!(assoc.objective, objective(&[0, 1], &layout, &g));
    }
}
