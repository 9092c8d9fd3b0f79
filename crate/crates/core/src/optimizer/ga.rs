//! Genetic algorithm over integer genomes.
//!
//! Genes are movable services, alleles are region choices. Each offspring is
//! bred from its own RNG stream derived from `(seed, generation, slot)`, so
//! the outcome does not depend on whether fitness is evaluated in parallel.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::mix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub population: usize,
    pub max_generations: usize,
    /// Per-gene mutation probability; `None` means 1 / genes.
    pub mutation_rate: Option<f64>,
    pub crossover_rate: f64,
    pub elitism: usize,
    pub patience: usize,
    pub time_budget_s: f64,
    pub tournament: usize,
    pub seed: u64,
    pub parallel: bool,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population: 64,
            max_generations: 300,
            mutation_rate: None,
            crossover_rate: 0.9,
            elitism: 2,
            patience: 30,
            time_budget_s: 120.0,
            tournament: 3,
            seed: 0,
            parallel: false,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        let rate_ok = |r: f64| (0.0..=1.0).contains(&r);
        if self.population < 2
            || self.elitism >= self.population
            || self.tournament == 0
            || !rate_ok(self.crossover_rate)
            || !self.mutation_rate.is_none_or(rate_ok)
            || !(self.time_budget_s > 0.0)
        {
            return Err(Error::InvalidConfig(format!("ga config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxGenerations,
    TimeBudget,
    Trivial,
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaOutcome {
    pub best: Vec<usize>,
    pub fitness: f64,
    pub evaluations: usize,
    pub generations: usize,
    pub stop: StopReason,
}

fn tournament(rng: &mut ChaCha8Rng, fit: &[f64], k: usize) -> usize {
    let mut best = rng.random_range(0..fit.len());
    for _ in 1..k {
        let c = rng.random_range(0..fit.len());
        if fit[c] < fit[best] || (fit[c] == fit[best] && c < best) {
            best = c;
        }
    }
    best
}

fn evaluate<F>(genomes: &[Vec<usize>], parallel: bool, fitness: &F) -> Vec<f64>
where
    F: Fn(&[usize]) -> f64 + Sync,
{
    if parallel {
        genomes.par_iter().map(|g| fitness(g)).collect()
    } else {
        genomes.iter().map(|g| fitness(g)).collect()
    }
}

/// Minimizes `fitness` over genomes of `n_genes` values in `0..n_alleles`.
/// `seeds` are placed first in the initial population.
pub fn evolve<F>(n_genes: usize, n_alleles: usize, seeds: &[Vec<usize>], cfg: &GaConfig, fitness: F) -> GaOutcome
where
    F: Fn(&[usize]) -> f64 + Sync,
{
    let started = Instant::now();
    let p = cfg.population;
    let mut pop: Vec<Vec<usize>> = seeds.iter().take(p).cloned().collect();
    for i in pop.len()..p {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 0, i as u64));
        pop.push((0..n_genes).map(|_| rng.random_range(0..n_alleles)).collect());
    }
    let mut fit = evaluate(&pop, cfg.parallel, &fitness);
    let mut evaluations = p;

    let argmin = |fit: &[f64]| (0..fit.len()).fold(0, |b, i| if fit[i] < fit[b] { i } else { b });
    let b = argmin(&fit);
    let (mut best, mut best_fit) = (pop[b].clone(), fit[b]);

    let mutation = cfg.mutation_rate.unwrap_or(1.0 / n_genes.max(1) as f64);
    let mut generations = 0;
    let mut stall = 0;
    let stop = loop {
        if generations >= cfg.max_generations {
            break StopReason::MaxGenerations;
        }
        if stall >= cfg.patience {
            break StopReason::Patience;
        }
        if started.elapsed().as_secs_f64() >= cfg.time_budget_s {
            break StopReason::TimeBudget;
        }
        generations += 1;

        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| fit[a].total_cmp(&fit[b]).then(a.cmp(&b)));
        let breed = |slot: usize| -> Vec<usize> {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, generations as u64, slot as u64));
            let a = tournament(&mut rng, &fit, cfg.tournament);
            let b = tournament(&mut rng, &fit, cfg.tournament);
            let mut child = if rng.random::<f64>() < cfg.crossover_rate {
                pop[a].iter().zip(&pop[b]).map(|(x, y)| if rng.random::<bool>() { *x } else { *y }).collect()
            } else {
                pop[a].clone()
            };
            if n_alleles > 1 {
                for g in child.iter_mut() {
                    if rng.random::<f64>() < mutation {
                        let other = rng.random_range(0..n_alleles - 1);
                        *g = if other >= *g { other + 1 } else { other };
                    }
                }
            }
            child
        };
        let children: Vec<Vec<usize>> = if cfg.parallel {
            (cfg.elitism..p).into_par_iter().map(breed).collect()
        } else {
            (cfg.elitism..p).map(breed).collect()
        };
        let child_fit = evaluate(&children, cfg.parallel, &fitness);
        evaluations += children.len();

        let mut next_pop: Vec<Vec<usize>> = order[..cfg.elitism].iter().map(|&i| pop[i].clone()).collect();
        let mut next_fit: Vec<f64> = order[..cfg.elitism].iter().map(|&i| fit[i]).collect();
        next_pop.extend(children);
        next_fit.extend(child_fit);
        pop = next_pop;
        fit = next_fit;

        let b = argmin(&fit);
        if fit[b] < best_fit - 1e-12 * best_fit.abs().max(1e-12) {
            best = pop[b].clone();
            best_fit = fit[b];
            stall = 0;
        } else {
            stall += 1;
        }
    };
    GaOutcome { best, fitness: best_fit, evaluations, generations, stop }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn onemax(g: &[usize]) -> f64 {
        g.iter().filter(|&&x| x != 2).count() as f64
    }

    #[test]
    fn solves_onemax() {
        let out = evolve(30, 3, &[], &GaConfig { seed: 3, ..Default::default() }, onemax);
        assert_eq!(out.fitness, 0.0);
        assert_eq!(out.best, vec![2; 30]);
    }

    #[test]
    fn seeded_individual_survives() {
        let cfg = GaConfig { max_generations: 5, ..Default::default() };
        let out = evolve(10, 4, &[vec![2; 10]], &cfg, onemax);
        assert_eq!(out.fitness, 0.0);
    }

    #[test]
    fn parallel_matches_sequential() {
        let f = |g: &[usize]| g.iter().enumerate().map(|(i, &x)| ((i * 7 + x * 3) % 5) as f64).sum::<f64>();
        let seq = evolve(40, 5, &[], &GaConfig { seed: 11, ..Default::default() }, f);
        let par = evolve(40, 5, &[], &GaConfig { seed: 11, parallel: true, ..Default::default() }, f);
        assert_eq!(seq, par);
    }

    #[test]
    fn infeasible_never_wins() {
        let f = |g: &[usize]| if g[0] == 0 { f64::INFINITY } else { g.iter().sum::<usize>() as f64 };
        let out = evolve(6, 3, &[vec![1; 6]], &GaConfig::default(), f);
        assert!(out.fitness.is_finite());
        assert_ne!(out.best[0], 0);
    }

    #[test]
    fn config_validation() {
        assert!(GaConfig::default().validate().is_ok());
        assert!(GaConfig { population: 1, ..Default::default() }.validate().is_err());
        assert!(GaConfig { elitism: 64, ..Default::default() }.validate().is_err());
        assert!(GaConfig { crossover_rate: 1.5, ..Default::default() }.validate().is_err());
    }
}
