//! Genetic search over per-user transmitter choices.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Association, AssociationProblem};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub elitism: usize,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population: 64,
            generations: 200,
            crossover_rate: 0.8,
            mutation_rate: 0.05,
            elitism: 2,
            seed: 1,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 || self.generations == 0 {
            return Err(Error::InvalidParameter("GA needs population >= 2 and generations >= 1"));
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) || !(0.0..=1.0).contains(&self.mutation_rate) {
            return Err(Error::InvalidParameter("GA rates must lie in [0, 1]"));
        }
        if self.elitism >= self.population {
            return Err(Error::InvalidParameter("elitism must be smaller than the population"));
        }
        Ok(())
    }
}

/// Perturbation rounds after the generations.
pub const KICKS: usize = 16;
/// Users re-drawn per kick.
pub const KICK_SIZE: usize = 4;

struct Search<'a> {
    problem: &'a AssociationProblem,
    rng: ChaCha8Rng,
    scratch: Vec<f64>,
}

impl Search<'_> {
    fn random_gene(&mut self, user: usize) -> usize {
        let c = self.problem.candidates(user);
        c[self.rng.gen_range(0..c.len())]
    }

    /// Keeps the first claim on each transmitter and re-seats the displaced
    /// users along augmenting paths.
    fn repair(&mut self, genes: &mut [usize]) {
        let p = self.problem;
        let mut owner = alloc::vec![usize::MAX; p.layout().transmitters()];
        let mut displaced = Vec::new();
        for (j, &tx) in genes.iter().enumerate() {
            if p.candidates(j).binary_search(&tx).is_ok() && owner[tx] == usize::MAX {
                owner[tx] = j;
            } else {
                displaced.push(j);
            }
        }
        for j in displaced {
            let offset = self.rng.gen_range(0..p.candidates(j).len());
            let mut seen = alloc::vec![false; owner.len()];
            let ok = p.augment(j, &mut owner, &mut seen, offset);
            debug_assert!(ok, "feasibility was checked when the problem was built");
        }
        for (tx, &j) in owner.iter().enumerate() {
            if j != usize::MAX {
                genes[j] = tx;
            }
        }
    }

    fn tournament(&mut self, fitness: &[f64]) -> usize {
        let a = self.rng.gen_range(0..fitness.len());
        let b = self.rng.gen_range(0..fitness.len());
        if fitness[b] > fitness[a] {
            b
        } else {
            a
        }
    }
}

/// Seeded genetic search. Chromosomes hold one transmitter per user; children
/// come from tournament selection, uniform crossover and per-gene mutation,
/// followed by a repair that restores distinct transmitters. A child that
/// duplicates one already in the next generation is replaced by a random
/// immigrant. One initial individual lets every user pick its own best
/// transmitter. The final best is polished by [`local_search`] and then
/// gets [`KICKS`] random perturbations, each re-polished and kept if better.
pub fn solve_ga(problem: &AssociationProblem, config: &GaConfig) -> Result<Association> {
    config.validate()?;
    let users = problem.users();
    let mut s = Search {
        problem,
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        scratch: alloc::vec![0.0; problem.layout().len()],
    };

    let mut population: Vec<Vec<usize>> = Vec::with_capacity(config.population);
    let mut selfish: Vec<usize> = (0..users)
        .map(|j| {
            *problem
                .candidates(j)
                .iter()
                .max_by(|&&a, &&b| {
                    let fa = problem.score_single(j, a);
                    let fb = problem.score_single(j, b);
                    fa.total_cmp(&fb).then(b.cmp(&a))
                })
                .expect("every user has a candidate")
        })
        .collect();
    s.repair(&mut selfish);
    population.push(selfish);
    while population.len() < config.population {
        let mut genes: Vec<usize> = (0..users).map(|j| s.random_gene(j)).collect();
        s.repair(&mut genes);
        population.push(genes);
    }
    let mut fitness: Vec<f64> = population.iter().map(|g| problem.score(g, &mut s.scratch)).collect();
    let mut best = argmax(&fitness);
    let mut best_genes = population[best].clone();
    let mut best_fit = fitness[best];

    for _ in 0..config.generations {
        let mut ranked: Vec<usize> = (0..population.len()).collect();
        ranked.sort_by(|&a, &b| fitness[b].total_cmp(&fitness[a]).then(a.cmp(&b)));
        let mut next: Vec<Vec<usize>> = ranked[..config.elitism]
            .iter()
            .map(|&i| population[i].clone())
            .collect();
        let mut seen: BTreeSet<Vec<usize>> = next.iter().cloned().collect();
        while next.len() < config.population {
            let p1 = s.tournament(&fitness);
            let p2 = s.tournament(&fitness);
            let mut child = population[p1].clone();
            if s.rng.gen_bool(config.crossover_rate) {
                for (j, gene) in child.iter_mut().enumerate() {
                    if s.rng.gen_bool(0.5) {
                        *gene = population[p2][j];
                    }
                }
            }
            for (j, gene) in child.iter_mut().enumerate() {
                if s.rng.gen_bool(config.mutation_rate) {
                    *gene = s.random_gene(j);
                }
            }
            s.repair(&mut child);
            if seen.contains(&child) {
                for (j, gene) in child.iter_mut().enumerate() {
                    *gene = s.random_gene(j);
                }
                s.repair(&mut child);
            }
            seen.insert(child.clone());
            next.push(child);
        }
        population = next;
        fitness = population.iter().map(|g| problem.score(g, &mut s.scratch)).collect();
        best = argmax(&fitness);
        if fitness[best] > best_fit {
            best_fit = fitness[best];
            best_genes = population[best].clone();
        }
    }
    best_fit = local_search(problem, &mut best_genes, best_fit, &mut s.scratch);
    for _ in 0..KICKS {
        let mut trial = best_genes.clone();
        for _ in 0..KICK_SIZE.min(users) {
            let j = s.rng.gen_range(0..users);
            trial[j] = s.random_gene(j);
        }
        s.repair(&mut trial);
        let f = problem.score(&trial, &mut s.scratch);
        let f = local_search(problem, &mut trial, f, &mut s.scratch);
        if f > best_fit {
            best_fit = f;
            best_genes = trial;
        }
    }
    problem.evaluate(&best_genes)
}

/// First-improvement hill climbing over three moves: reseat one user on a free
/// candidate, swap the transmitters of two users, or rotate them among three.
/// Users and candidates are scanned in index order; stops at a local optimum.
/// Returns the final score.
pub fn local_search(problem: &AssociationProblem, genes: &mut [usize], score: f64, scratch: &mut [f64]) -> f64 {
    let users = genes.len();
    let mut used = alloc::vec![false; problem.layout().transmitters()];
    for &tx in genes.iter() {
        used[tx] = true;
    }
    let mut current = score;
    let mut improved = true;
    while improved {
        improved = false;
        for j in 0..users {
            for &tx in problem.candidates(j) {
                if used[tx] {
                    continue;
                }
                let old = genes[j];
                genes[j] = tx;
                let s = problem.score(genes, scratch);
                if s > current {
                    current = s;
                    used[old] = false;
                    used[tx] = true;
                    improved = true;
                } else {
                    genes[j] = old;
                }
            }
        }
        for j in 0..users {
            for k in j + 1..users {
                let (a, b) = (genes[j], genes[k]);
                if problem.candidates(j).binary_search(&b).is_err() || problem.candidates(k).binary_search(&a).is_err() {
                    continue;
                }
                genes.swap(j, k);
                let s = problem.score(genes, scratch);
                if s > current {
                    current = s;
                    improved = true;
                } else {
                    genes.swap(j, k);
                }
            }
        }
        for j in 0..users {
            for k in j + 1..users {
                for m in k + 1..users {
                    // Both directions of the cycle j -> k -> m.
                    for (a, b, c) in [(j, k, m), (j, m, k)] {
                        let (ta, tb, tc) = (genes[a], genes[b], genes[c]);
                        let fits = |u: usize, tx: usize| problem.candidates(u).binary_search(&tx).is_ok();
                        if !(fits(a, tb) && fits(b, tc) && fits(c, ta)) {
                            continue;
                        }
                        genes[a] = tb;
                        genes[b] = tc;
                        genes[c] = ta;
                        let s = problem.score(genes, scratch);
                        if s > current {
                            current = s;
                            improved = true;
                        } else {
                            genes[a] = ta;
                            genes[b] = tb;
                            genes[c] = tc;
                        }
                    }
                }
            }
        }
    }
    current
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

impl AssociationProblem {
    /// Objective if `user` were alone and served by `tx`.
    pub(crate) fn score_single(&self, user: usize, tx: usize) -> f64 {
        let depth = self.depth[user][tx];
        self.layout
            .layers_of(tx)
            .filter(|&l| self.group_of[user][l] <= depth)
            .map(|l| self.rates[user][l])
            .filter(|r| r.is_finite())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assoc::UserView;
    use crate::channel::Point3;
    use crate::cpgd::greedy_order;
    use crate::rates::RateContext;
    use crate::signaling::{LayerLayout, LayerStats};
    use alloc::vec;
    use proptest::prelude::*;

    fn user(gains: &[f64]) -> UserView {
        let stats = vec![LayerStats::gaussian(1.0); gains.len()];
        let ctx = RateContext::from_layer_gains(gains.to_vec(), &stats, 0.05).unwrap();
        let order = greedy_order(&ctx, 1).unwrap();
        UserView {
            position: Point3::new(0.0, 0.0, 2.0),
            ranks: (0..gains.len() as u32).collect(),
            ctx,
            order,
        }
    }

    #[test]
    fn config_validation() {
        assert!(GaConfig::default().validate().is_ok());
        let bad = GaConfig {
            mutation_rate: 1.5,
            ..GaConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn mirrored_pair_gets_nearest_transmitters() {
        let layout = LayerLayout::uniform(2, 1).unwrap();
        let users = [user(&[1.0, 0.3]), user(&[0.3, 1.0])];
        let p = AssociationProblem::new(&users, &layout).unwrap();
        let ga = solve_ga(&p, &GaConfig::default()).unwrap();
        assert_eq!(ga.assignment, vec![0, 1]);
        assert_eq!(ga.objective, p.exhaustive().unwrap().objective);
    }

    #[test]
    fn reproducible_with_fixed_seed() {
        let layout = LayerLayout::uniform(4, 1).unwrap();
        let users = [user(&[1.0, 0.3, 0.5, 0.2]), user(&[0.3, 1.0, 0.1, 0.7]), user(&[0.6, 0.6, 0.6, 0.1])];
        let p = AssociationProblem::new(&users, &layout).unwrap();
        let cfg = GaConfig {
            generations: 20,
            ..GaConfig::default()
        };
        assert_eq!(solve_ga(&p, &cfg).unwrap(), solve_ga(&p, &cfg).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn ga_matches_exhaustive_on_small_instances(
            users in 1usize..=4,
            gains in proptest::collection::vec(prop_oneof![1 => Just(0.0), 4 => 0.05f64..2.0], 16),
        ) {
            let layout = LayerLayout::uniform(4, 1).unwrap();
            let views: Vec<UserView> = (0..users)
                .map(|j| {
                    let mut g = gains[4 * j..4 * j + 4].to_vec();
                    g[j] = g[j].max(0.1);
                    user(&g)
                })
                .collect();
            let p = AssociationProblem::new(&views, &layout).unwrap();
            let ga = solve_ga(&p, &GaConfig { generations: 60, ..GaConfig::default() }).unwrap();
            let best = p.exhaustive().unwrap();
            prop_assert!(p.is_feasible(&ga.assignment));
            prop_assert_eq!(ga.objective, best.objective);
        }

        #[test]
        fn local_search_never_worsens(
            gains in proptest::collection::vec(0.05f64..2.0, 24),
            start in 0usize..720,
        ) {
            let layout = LayerLayout::uniform(6, 1).unwrap();
            let views: Vec<UserView> = (0..4).map(|j| user(&gains[6 * j..6 * j + 6])).collect();
            let p = AssociationProblem::new(&views, &layout).unwrap();
            // A start permutation of the transmitters, truncated to the users.
            let mut pool: Vec<usize> = (0..6).collect();
            let mut k = start;
            let mut genes = Vec::new();
            for n in (3..=6).rev() {
                genes.push(pool.remove(k % n));
                k /= n;
            }
            let mut scratch = vec![0.0; layout.len()];
            let before = p.score(&genes, &mut scratch);
            let after = local_search(&p, &mut genes, before, &mut scratch);
            prop_assert!(p.is_feasible(&genes));
            prop_assert!(after >= before);
            prop_assert_eq!(after, p.score(&genes, &mut scratch));
        }
    }
}
