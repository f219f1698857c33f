//! Natural evolution strategies with rank-based utilities.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::smallnet::Genome;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NesConfig {
    pub population: usize,
    pub sigma: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub minibatch: usize,
    pub restart_window: usize,
    pub budget: usize,
    pub utility: Utility,
}

/// Shape of the rank-based utilities. Both are zero-sum and rank-monotone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Utility {
    /// `max(0, ln(P/2 + 1) - ln k)` for the k-th best, normalised.
    LogRank,
    /// `(r / (P - 1))^(2/gini - 1)` for ascending rank `r`, centred.
    SmoothGini { gini: f64 },
}

impl Default for NesConfig {
    fn default() -> Self {
        NesConfig {
            population: 20,
            sigma: 0.1,
            learning_rate: 0.01,
            weight_decay: 0.9995,
            minibatch: 20,
            restart_window: 2500,
            budget: 10_000,
            utility: Utility::SmoothGini { gini: 0.1 },
        }
    }
}

impl NesConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 1 || self.minibatch < 1 {
            return Err(Error::Config("population and minibatch must be at least 1".into()));
        }
        if let Utility::SmoothGini { gini } = self.utility {
            if !(gini > 0.0 && gini < 2.0) {
                return Err(Error::Config("gini must lie in (0, 2)".into()));
            }
        }
        if !(self.sigma > 0.0 && self.learning_rate > 0.0) {
            return Err(Error::Config("sigma and learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Log-rank utilities: the k-th best of `P` gets
/// `max(0, ln(P/2 + 1) - ln k)`, normalised to sum to one, minus `1/P`.
/// Tied fitnesses share the mean utility of their ranks.
pub fn rank_transform(fitness: &[f64]) -> Vec<f64> {
    shaped_utilities(fitness, Utility::LogRank)
}

/// Utility of each rank, best first, summing to zero.
fn rank_utilities(p: usize, shape: Utility) -> Vec<f64> {
    let raw: Vec<f64> = match shape {
        Utility::LogRank => (1..=p).map(|k| ((p as f64 / 2.0 + 1.0).ln() - (k as f64).ln()).max(0.0)).collect(),
        Utility::SmoothGini { gini } => {
            let exponent = 2.0 / gini - 1.0;
            let top = (p.max(2) - 1) as f64;
            (0..p).map(|k| ((p - 1 - k) as f64 / top).powf(exponent)).collect()
        }
    };
    match shape {
        Utility::LogRank => {
            let total: f64 = raw.iter().sum();
            raw.iter().map(|r| r / total - 1.0 / p as f64).collect()
        }
        Utility::SmoothGini { .. } => {
            let mean = raw.iter().sum::<f64>() / p as f64;
            raw.iter().map(|r| r - mean).collect()
        }
    }
}

/// Zero-sum utilities of the given shape; ties share the mean utility of
/// their ranks.
pub fn shaped_utilities(fitness: &[f64], shape: Utility) -> Vec<f64> {
    let p = fitness.len();
    if p == 0 {
        return Vec::new();
    }
    let by_rank = rank_utilities(p, shape);

    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| fitness[b].total_cmp(&fitness[a]));
    let mut out = vec![0.0; p];
    let mut i = 0;
    while i < p {
        let mut j = i + 1;
        while j < p && fitness[order[j]] == fitness[order[i]] {
            j += 1;
        }
        let group = &by_rank[i..j];
        let mean = if group[0] == group[j - i - 1] { group[0] } else { group.iter().sum::<f64>() / group.len() as f64 };
        for &idx in &order[i..j] {
            out[idx] = mean;
        }
        i = j;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NesStep<R> {
    /// Report for the unperturbed parameters.
    pub center: R,
    /// Offspring fitnesses; empty when no update happened.
    pub offspring: Vec<f64>,
    pub updated: bool,
}

/// One NES iteration. `evaluate` scores a parameter vector on the shared
/// minibatch and returns `(fitness, is_maximal, report)`. If the center is
/// maximal the genome is left untouched.
pub fn nes_iteration<R: Send, F>(
    genome: &mut Genome,
    config: &NesConfig,
    rng: &mut impl Rng,
    evaluate: F,
) -> Result<NesStep<R>>
where
    F: Fn(&[f64]) -> Result<(f64, bool, R)> + Sync,
{
    let (_, is_max, center) = evaluate(&genome.values)?;
    if is_max {
        return Ok(NesStep { center, offspring: Vec::new(), updated: false });
    }
    let n = genome.len();
    let noise: Vec<Vec<f64>> =
        (0..config.population).map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let theta = &genome.values;
    let offspring: Vec<f64> = noise
        .par_iter()
        .map(|eps| {
            let candidate: Vec<f64> = theta.iter().zip(eps).map(|(t, e)| t + config.sigma * e).collect();
            evaluate(&candidate).map(|(f, _, _)| f)
        })
        .collect::<Result<_>>()?;
    let utilities = shaped_utilities(&offspring, config.utility);
    let scale = config.learning_rate / (config.population as f64 * config.sigma);
    for (i, value) in genome.values.iter_mut().enumerate() {
        let step: f64 = utilities.iter().zip(&noise).map(|(u, eps)| u * eps[i]).sum();
        *value = (*value + scale * step) * config.weight_decay;
    }
    if !genome.is_finite() {
        return Err(Error::NonFinite("genome after NES update".into()));
    }
    Ok(NesStep { center, offspring, updated: true })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::core_layout;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn equal_fitness_gives_zero_utility() {
        assert!(rank_transform(&[3.0; 6]).iter().all(|&u| u.abs() < 1e-15));
    }

    #[test]
    fn best_gets_most() {
        let u = rank_transform(&[1.0, 5.0, 3.0, 0.0]);
        assert!(u[1] > u[2] && u[2] > u[0] && u[0] >= u[3]);
        // P = 4: only ranks 1 and 2 have positive raw utility.
        let r1 = 3f64.ln();
        let r2 = 3f64.ln() - 2f64.ln();
        assert!((u[1] - (r1 / (r1 + r2) - 0.25)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn zero_sum_and_monotone(f in proptest::collection::vec(-50i32..50, 2..40)) {
            let f: Vec<f64> = f.into_iter().map(f64::from).collect();
            let u = rank_transform(&f);
            prop_assert!(u.iter().sum::<f64>().abs() < 1e-12);
            for i in 0..f.len() {
                for j in 0..f.len() {
                    if f[i] > f[j] { prop_assert!(u[i] >= u[j]); }
                    if f[i] == f[j] { prop_assert!((u[i] - u[j]).abs() < 1e-15); }
                }
            }
        }

        #[test]
        fn gini_zero_sum_and_monotone(f in proptest::collection::vec(-50i32..50, 2..40), gini in 0.05f64..1.0) {
            let f: Vec<f64> = f.into_iter().map(f64::from).collect();
            let u = shaped_utilities(&f, Utility::SmoothGini { gini });
            prop_assert!(u.iter().sum::<f64>().abs() < 1e-9);
            for i in 0..f.len() {
                for j in 0..f.len() {
                    if f[i] > f[j] { prop_assert!(u[i] >= u[j]); }
                }
            }
        }

        #[test]
        fn permutation_equivariant(f in proptest::collection::vec(-50i32..50, 2..20), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let f: Vec<f64> = f.into_iter().map(f64::from).collect();
            let mut perm: Vec<usize> = (0..f.len()).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let g: Vec<f64> = perm.iter().map(|&i| f[i]).collect();
            let (uf, ug) = (rank_transform(&f), rank_transform(&g));
            for (k, &i) in perm.iter().enumerate() {
                prop_assert!((ug[k] - uf[i]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn max_center_leaves_genome_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = Genome::random(core_layout(), &mut rng);
        let before = g.clone();
        let step = nes_iteration(&mut g, &NesConfig::default(), &mut rng, |_| Ok((120.0, true, ()))).unwrap();
        assert!(!step.updated);
        assert_eq!(g.values, before.values);
    }

    #[test]
    fn flat_fitness_applies_only_decay() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut g = Genome::random(core_layout(), &mut rng);
        let before = g.clone();
        let config = NesConfig::default();
        nes_iteration(&mut g, &config, &mut rng, |_| Ok((50.0, false, ()))).unwrap();
        for (a, b) in g.values.iter().zip(&before.values) {
            assert!((a - b * config.weight_decay).abs() < 1e-15);
        }
    }

    #[test]
    fn dominant_offspring_sets_the_direction() {
        // Fitness rewards the first coordinate only, and only one offspring
        // in a population of two lands above the center: u = (+0.5, -0.5).
        let mut layout = crate::smallnet::GenomeLayout::default();
        layout.push_module("x", &[crate::smallnet::LayerSpec::new(1, 1, crate::smallnet::Activation::Linear)]);
        let mut g = Genome::zeros(layout);
        let config = NesConfig { population: 2, weight_decay: 1.0, ..NesConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut replay = rng.clone();
        let eps: Vec<f64> = (0..4).map(|_| replay.sample(StandardNormal)).collect();
        nes_iteration(&mut g, &config, &mut rng, |v| Ok((v[0], false, ()))).unwrap();
        let (a, b) = (&eps[0..2], &eps[2..4]);
        let (win, lose) = if a[0] > b[0] { (a, b) } else { (b, a) };
        let scale = config.learning_rate / (2.0 * config.sigma);
        for i in 0..2 {
            let expect = scale * (0.5 * win[i] - 0.5 * lose[i]);
            assert!((g.values[i] - expect).abs() < 1e-15);
        }
    }
}
