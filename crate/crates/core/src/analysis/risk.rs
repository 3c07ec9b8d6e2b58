//! Empirical versus Bayes-distilled risk on a finite toy distribution.
//!
//! For a fixed predictor with per-context loss vectors `L(x)` (one entry per
//! class), the empirical estimator averages `L(x_n)[y_n]` over a sample of
//! `(x, y)` pairs, while the distilled estimator averages `p*(x_n) . L(x_n)`
//! over the contexts alone. Both are unbiased for the population risk
//! `E_x[p*(x) . L(x)]`; the distilled one carries no label noise.

use std::fmt::Write as _;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;

use crate::error::{Error, Result};
use crate::rng;

const PROB_TOL: f64 = 1e-9;

fn check_prob(p: &[f64], what: &str) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if p.is_empty() || p.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > PROB_TOL {
        return Err(Error::invalid("risk", format!("{what} {p:?} is not a probability vector")));
    }
    Ok(())
}

/// Per-context Bayes class probabilities and context weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyDistribution {
    p_star: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl ToyDistribution {
    /// `weights` are normalized; they need not sum to one.
    pub fn new(p_star: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if p_star.is_empty() || p_star.len() != weights.len() {
            return Err(Error::invalid(
                "risk",
                format!("{} contexts but {} weights", p_star.len(), weights.len()),
            ));
        }
        let classes = p_star[0].len();
        for (i, p) in p_star.iter().enumerate() {
            if p.len() != classes {
                return Err(Error::invalid("risk", format!("context {i} has {} classes, expected {classes}", p.len())));
            }
            check_prob(p, &format!("p*(x{i})"))?;
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|&w| !(w >= 0.0)) || !(total > 0.0) {
            return Err(Error::invalid("risk", format!("context weights {weights:?} must be non-negative, not all zero")));
        }
        Ok(Self {
            p_star,
            weights: weights.iter().map(|w| w / total).collect(),
        })
    }

    /// Two equally likely contexts with `p* = (0.7, 0.3)` and `(0.2, 0.8)`.
    pub fn toy2() -> Self {
        Self::new(vec![vec![0.7, 0.3], vec![0.2, 0.8]], vec![1.0, 1.0]).expect("valid toy")
    }

    /// Loss vectors `(1, 0)` and `(0, 1)` paired with [`ToyDistribution::toy2`].
    pub fn toy2_losses() -> Vec<Vec<f64>> {
        vec![vec![1.0, 0.0], vec![0.0, 1.0]]
    }

    pub fn p_star(&self) -> &[Vec<f64>] {
        &self.p_star
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn num_classes(&self) -> usize {
        self.p_star[0].len()
    }

    /// Labels are a function of the context.
    pub fn is_deterministic(&self) -> bool {
        self.p_star.iter().all(|p| p.iter().all(|&v| v == 0.0 || v == 1.0))
    }

    fn check_losses(&self, losses: &[Vec<f64>]) -> Result<()> {
        check_losses(losses, self.p_star.len(), self.num_classes())
    }

    /// `sum_x w(x) p*(x) . L(x)`.
    pub fn population_risk(&self, losses: &[Vec<f64>]) -> Result<f64> {
        self.check_losses(losses)?;
        Ok(self
            .weights
            .iter()
            .zip(&self.p_star)
            .zip(losses)
            .map(|((w, p), l)| w * dot(p, l))
            .sum())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_losses(losses: &[Vec<f64>], contexts: usize, classes: usize) -> Result<()> {
    if losses.len() != contexts {
        return Err(Error::invalid("risk", format!("{} loss vectors for {contexts} contexts", losses.len())));
    }
    match losses.iter().position(|l| l.len() != classes) {
        Some(i) => Err(Error::invalid(
            "risk",
            format!("loss vector {i} has {} entries, expected {classes}", losses[i].len()),
        )),
        None => Ok(()),
    }
}

/// Mean of `L(x)[y]` over `(context, label)` pairs.
pub fn empirical_risk(sample: &[(usize, usize)], losses: &[Vec<f64>]) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::invalid("empirical_risk", "empty sample"));
    }
    let mut total = 0.0;
    for &(x, y) in sample {
        let l = losses
            .get(x)
            .ok_or_else(|| Error::invalid("empirical_risk", format!("context {x} has no loss vector")))?;
        total += *l
            .get(y)
            .ok_or_else(|| Error::invalid("empirical_risk", format!("label {y} out of range for {} classes", l.len())))?;
    }
    Ok(total / sample.len() as f64)
}

/// Mean of `p*(x) . L(x)` over the sampled contexts.
pub fn bayes_distilled_risk(contexts: &[usize], p_star: &[Vec<f64>], losses: &[Vec<f64>]) -> Result<f64> {
    if contexts.is_empty() {
        return Err(Error::invalid("bayes_distilled_risk", "empty sample"));
    }
    let classes = p_star.first().map_or(0, Vec::len);
    check_losses(losses, p_star.len(), classes)?;
    for (i, p) in p_star.iter().enumerate() {
        check_prob(p, &format!("p*(x{i})"))?;
    }
    let mut total = 0.0;
    for &x in contexts {
        let p = p_star
            .get(x)
            .ok_or_else(|| Error::invalid("bayes_distilled_risk", format!("context {x} has no p*")))?;
        total += dot(p, &losses[x]);
    }
    Ok(total / contexts.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RiskReport {
    pub n: usize,
    pub m: usize,
    pub population_risk: f64,
    pub empirical_mean: f64,
    /// Unbiased variance of the estimator over the `m` resamples.
    pub empirical_var: f64,
    pub distilled_mean: f64,
    pub distilled_var: f64,
    /// `distilled_var / empirical_var`; 1 when both vanish.
    pub variance_ratio: f64,
    /// Labels are deterministic given the context; the estimators coincide.
    pub degenerate: bool,
}

impl RiskReport {
    pub const CSV_HEADER: &'static str =
        "n,m,population_risk,empirical_mean,empirical_var,distilled_mean,distilled_var,variance_ratio,degenerate";

    pub fn empirical_stderr(&self) -> f64 {
        (self.empirical_var / self.m as f64).sqrt()
    }

    pub fn distilled_stderr(&self) -> f64 {
        (self.distilled_var / self.m as f64).sqrt()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        let _ = writeln!(
            out,
            "\n{},{},{},{},{},{},{},{},{}",
            self.n,
            self.m,
            self.population_risk,
            self.empirical_mean,
            self.empirical_var,
            self.distilled_mean,
            self.distilled_var,
            self.variance_ratio,
            self.degenerate
        );
        out
    }
}

fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Draw `m` independent samples of size `n` and evaluate both estimators
/// on each. Resample `r` uses its own generator derived from
/// `(seed, r)`, so the result does not depend on the worker count.
pub fn variance_experiment(dist: &ToyDistribution, losses: &[Vec<f64>], n: usize, m: usize, seed: u64) -> Result<RiskReport> {
    if n < 2 || m < 2 {
        return Err(Error::invalid("variance_experiment", format!("need n, m >= 2, got n={n} m={m}")));
    }
    let population_risk = dist.population_risk(losses)?;
    let contexts = WeightedIndex::new(&dist.weights).map_err(|e| Error::invalid("variance_experiment", e.to_string()))?;
    let labels: Vec<WeightedIndex<f64>> = dist
        .p_star
        .iter()
        .map(|p| WeightedIndex::new(p).map_err(|e| Error::invalid("variance_experiment", e.to_string())))
        .collect::<Result<_>>()?;

    let resample = |r: usize| -> (f64, f64) {
        let mut g = rng::stream(seed, r as u64);
        let (mut emp, mut dis) = (0.0, 0.0);
        for _ in 0..n {
            let x = contexts.sample(&mut g);
            let y = labels[x].sample(&mut g);
            emp += losses[x][y];
            dis += dot(&dist.p_star[x], &losses[x]);
        }
        (emp / n as f64, dis / n as f64)
    };

    let workers = std::thread::available_parallelism().map_or(1, |w| w.get()).min(m);
    let mut values = vec![(0.0, 0.0); m];
    let chunk = m.div_ceil(workers);
    std::thread::scope(|s| {
        for (k, part) in values.chunks_mut(chunk).enumerate() {
            let resample = &resample;
            s.spawn(move || {
                for (j, v) in part.iter_mut().enumerate() {
                    *v = resample(k * chunk + j);
                }
            });
        }
    });

    let (emp, dis): (Vec<f64>, Vec<f64>) = values.into_iter().unzip();
    let (empirical_mean, empirical_var) = mean_var(&emp);
    let (distilled_mean, distilled_var) = mean_var(&dis);
    let variance_ratio = if empirical_var == 0.0 && distilled_var == 0.0 {
        1.0
    } else {
        distilled_var / empirical_var
    };
    Ok(RiskReport {
        n,
        m,
        population_risk,
        empirical_mean,
        empirical_var,
        distilled_mean,
        distilled_var,
        variance_ratio,
        degenerate: dist.is_deterministic(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empirical_indexes_loss() {
        assert_eq!(empirical_risk(&[(0, 0)], &[vec![0.1, 0.9]]).unwrap(), 0.1);
        assert_eq!(empirical_risk(&[(0, 1), (0, 0)], &[vec![0.0, 0.0]]).unwrap(), 0.0);
        assert!(empirical_risk(&[(0, 2)], &[vec![0.1, 0.9]]).is_err());
        assert!(empirical_risk(&[], &[vec![0.1, 0.9]]).is_err());
    }

    #[test]
    fn toy2_per_context_values() {
        let d = ToyDistribution::toy2();
        let l = ToyDistribution::toy2_losses();
        assert!((bayes_distilled_risk(&[0], d.p_star(), &l).unwrap() - 0.7).abs() < 1e-15);
        assert!((bayes_distilled_risk(&[1], d.p_star(), &l).unwrap() - 0.8).abs() < 1e-15);
        assert!((d.population_risk(&l).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn invalid_probabilities() {
        assert!(ToyDistribution::new(vec![vec![0.5, 0.6]], vec![1.0]).is_err());
        assert!(ToyDistribution::new(vec![vec![1.5, -0.5]], vec![1.0]).is_err());
        assert!(bayes_distilled_risk(&[0], &[vec![0.2, 0.2]], &[vec![1.0, 1.0]]).is_err());
    }

    #[test]
    fn uniform_p_star_has_zero_variance() {
        let d = ToyDistribution::new(vec![vec![0.5, 0.5]; 3], vec![1.0, 2.0, 3.0]).unwrap();
        let l = vec![vec![0.2, 0.6]; 3];
        let r = variance_experiment(&d, &l, 10, 50, 1).unwrap();
        assert!(r.distilled_var < 1e-30);
        assert!((r.distilled_mean - 0.4).abs() < 1e-12);
    }

    #[test]
    fn experiment_is_seed_deterministic() {
        let d = ToyDistribution::toy2();
        let l = ToyDistribution::toy2_losses();
        let a = variance_experiment(&d, &l, 5, 40, 7).unwrap();
        assert_eq!(a, variance_experiment(&d, &l, 5, 40, 7).unwrap());
        assert!(a.to_csv().starts_with(RiskReport::CSV_HEADER));
    }
}
