//! Real-coded genetic algorithm over a bounded box.
//!
//! Tournament selection, BLX-alpha blend crossover, per-gene Gaussian
//! mutation clamped to the bounds, and elitism. The RNG is owned by the
//! generation loop, so results depend only on the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub tournament: usize,
    pub crossover_rate: f64,
    /// BLX alpha: children are drawn from the parents' interval widened by
    /// this fraction on each side.
    pub blend: f64,
    pub mutation_prob: f64,
    /// Mutation standard deviation as a fraction of each gene's bound width.
    pub mutation_scale: f64,
    pub elite: usize,
    /// Stop after this many generations without improvement.
    pub stall_generations: usize,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 200,
            generations: 300,
            tournament: 3,
            crossover_rate: 0.9,
            blend: 0.5,
            mutation_prob: 0.1,
            mutation_scale: 0.1,
            elite: 2,
            stall_generations: 50,
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.population < 10 {
            return Err("GA population must be at least 10".into());
        }
        if self.tournament == 0 || self.tournament > self.population {
            return Err("GA tournament size must be in 1..=population".into());
        }
        if self.elite >= self.population {
            return Err("GA elite count must be below the population size".into());
        }
        for (name, r) in [("crossover_rate", self.crossover_rate), ("mutation_prob", self.mutation_prob)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(format!("GA {name} must be in [0, 1]"));
            }
        }
        if !(self.blend >= 0.0 && self.mutation_scale >= 0.0) {
            return Err("GA blend and mutation scale must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaOutcome {
    pub best: Vec<f64>,
    pub best_fitness: f64,
    /// Best fitness after each generation, starting with the initial population.
    pub history: Vec<f64>,
}

fn sanitize(f: f64) -> f64 {
    if f.is_nan() {
        f64::INFINITY
    } else {
        f
    }
}

/// Minimizes `fitness` over the box `bounds`. Individuals in `seeds` are
/// clamped into the box and placed in the initial population.
pub fn ga_minimize<F>(fitness: F, bounds: &[(f64, f64)], cfg: &GaConfig, seeds: &[Vec<f64>]) -> GaOutcome
where
    F: Fn(&[f64]) -> f64,
{
    assert!(bounds.iter().all(|(lo, hi)| lo < hi && lo.is_finite() && hi.is_finite()), "GA bounds must be finite with lower < upper");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pop_size = cfg.population.max(2);
    let clamp = |g: &mut [f64]| {
        for (x, (lo, hi)) in g.iter_mut().zip(bounds) {
            *x = x.clamp(*lo, *hi);
        }
    };

    let mut pop: Vec<Vec<f64>> = (0..pop_size)
        .map(|_| bounds.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect())
        .collect();
    for (slot, seed) in pop.iter_mut().zip(seeds) {
        slot.clone_from(seed);
        clamp(slot);
    }
    let mut fit: Vec<f64> = pop.iter().map(|g| sanitize(fitness(g))).collect();

    let mut history = Vec::with_capacity(cfg.generations + 1);
    let mut stall = 0usize;
    let mut order: Vec<usize> = (0..pop_size).collect();
    for generation in 0..=cfg.generations {
        order.sort_by(|&a, &b| fit[a].total_cmp(&fit[b]));
        let best = fit[order[0]];
        if let Some(&prev) = history.last() {
            if best < prev {
                stall = 0;
            } else {
                stall += 1;
            }
        }
        history.push(best);
        if generation == cfg.generations || (cfg.stall_generations > 0 && stall >= cfg.stall_generations) {
            break;
        }

        let mut next: Vec<Vec<f64>> = Vec::with_capacity(pop_size);
        let mut next_fit: Vec<f64> = Vec::with_capacity(pop_size);
        for &i in order.iter().take(cfg.elite) {
            next.push(pop[i].clone());
            next_fit.push(fit[i]);
        }
        let elite_count = next.len();
        let tournament = |rng: &mut ChaCha8Rng| {
            (0..cfg.tournament.max(1))
                .map(|_| rng.random_range(0..pop_size))
                .min_by(|&a, &b| fit[a].total_cmp(&fit[b]))
                .unwrap()
        };
        while next.len() < pop_size {
            let a = &pop[tournament(&mut rng)];
            let b = &pop[tournament(&mut rng)];
            let (mut c1, mut c2) = (a.clone(), b.clone());
            if rng.random::<f64>() < cfg.crossover_rate {
                for j in 0..bounds.len() {
                    let (lo, hi) = (a[j].min(b[j]), a[j].max(b[j]));
                    let ext = cfg.blend * (hi - lo);
                    c1[j] = lo - ext + rng.random::<f64>() * (hi - lo + 2.0 * ext);
                    c2[j] = lo - ext + rng.random::<f64>() * (hi - lo + 2.0 * ext);
                }
            }
            for child in [&mut c1, &mut c2] {
                for (x, &(lo, hi)) in child.iter_mut().zip(bounds) {
                    if rng.random::<f64>() < cfg.mutation_prob {
                        let z: f64 = rng.sample(StandardNormal);
                        *x += z * cfg.mutation_scale * (hi - lo);
                    }
                }
                clamp(child);
            }
            next.push(c1);
            if next.len() < pop_size {
                next.push(c2);
            }
        }
        next_fit.extend(next[elite_count..].iter().map(|g| sanitize(fitness(g))));
        pop = next;
        fit = next_fit;
    }

    let best_idx = (0..pop_size).min_by(|&a, &b| fit[a].total_cmp(&fit[b])).unwrap();
    GaOutcome { best: pop[best_idx].clone(), best_fitness: fit[best_idx], history }
}
