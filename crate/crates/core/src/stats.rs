//! Classification metrics, bootstrap summaries, exact McNemar tests and
//! Holm step-down multiplicity control (plain and discrete).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::{Class, Prediction};
use crate::seed;

/// Test-set metrics of one session; AD is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub auc: f64,
}

/// Area under the ROC curve by the rank formula: the probability that a
/// random positive outscores a random negative, ties counting one half.
pub fn auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::ShapeMismatch("scores and labels differ in length".into()));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidSpec("AUC needs both classes".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("scores"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    // midranks over tie groups, 1-based
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if positive[k] {
                rank_sum_pos += mid;
            }
        }
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

pub fn performance(predictions: &[Prediction]) -> Result<Metrics> {
    let (mut tp, mut tn, mut fp, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for p in predictions {
        match (p.truth, p.predicted) {
            (Class::Ad, Class::Ad) => tp += 1,
            (Class::Ad, Class::Nc) => fn_ += 1,
            (Class::Nc, Class::Nc) => tn += 1,
            (Class::Nc, Class::Ad) => fp += 1,
        }
    }
    if tp + fn_ == 0 || tn + fp == 0 {
        return Err(Error::InvalidSpec("test set must contain both classes".into()));
    }
    let scores: Vec<f64> = predictions.iter().map(|p| p.score).collect();
    let positive: Vec<bool> = predictions.iter().map(|p| p.truth == Class::Ad).collect();
    Ok(Metrics {
        accuracy: (tp + tn) as f64 / predictions.len() as f64,
        sensitivity: tp as f64 / (tp + fn_) as f64,
        specificity: tn as f64 / (tn + fp) as f64,
        auc: auc(&scores, &positive)?,
    })
}

/// Mean, sample standard deviation and percentile-bootstrap 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// `None` with fewer than two values.
    pub sd: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

pub const BOOTSTRAP_RESAMPLES: usize = 10_000;

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = libm::floor(h) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(values: &[f64], resamples: usize, bootstrap_seed: u64) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::Empty("summary values"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("summary values"));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return Ok(Summary { n, mean, sd: None, ci_low: None, ci_high: None });
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    if resamples == 0 {
        return Err(Error::InvalidSpec("bootstrap needs resamples".into()));
    }
    let mut rng = seed::rng(bootstrap_seed);
    let mut means: Vec<f64> = (0..resamples).map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64).collect();
    means.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    Ok(Summary {
        n,
        mean,
        sd: Some(libm::sqrt(var)),
        ci_low: Some(quantile_sorted(&means, 0.025)),
        ci_high: Some(quantile_sorted(&means, 0.975)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub accuracy: Summary,
    pub sensitivity: Summary,
    pub specificity: Summary,
    pub auc: Summary,
}

/// Summaries of each metric over sessions. Each metric gets its own
/// bootstrap stream derived from `bootstrap_seed`.
pub fn summarize_metrics(sessions: &[Metrics], bootstrap_seed: u64) -> Result<MetricSummary> {
    let col = |f: fn(&Metrics) -> f64, k: u64| {
        let v: Vec<f64> = sessions.iter().map(f).collect();
        summarize(&v, BOOTSTRAP_RESAMPLES, seed::derive(bootstrap_seed, seed::stream::BOOTSTRAP, k))
    };
    Ok(MetricSummary {
        accuracy: col(|m| m.accuracy, 0)?,
        sensitivity: col(|m| m.sensitivity, 1)?,
        specificity: col(|m| m.specificity, 2)?,
        auc: col(|m| m.auc, 3)?,
    })
}

/// Discordance table of two classifiers on a shared test set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PairedOutcomes {
    /// Both correct.
    pub a: u64,
    /// Reference correct only.
    pub b: u64,
    /// Alternative correct only.
    pub c: u64,
    /// Both wrong.
    pub d: u64,
}

impl PairedOutcomes {
    pub fn from_correctness(reference: &[bool], alternative: &[bool]) -> Result<Self> {
        if reference.len() != alternative.len() {
            return Err(Error::ShapeMismatch(format!("paired outcomes of length {} and {}", reference.len(), alternative.len())));
        }
        let mut t = Self::default();
        for (&r, &s) in reference.iter().zip(alternative) {
            match (r, s) {
                (true, true) => t.a += 1,
                (true, false) => t.b += 1,
                (false, true) => t.c += 1,
                (false, false) => t.d += 1,
            }
        }
        Ok(t)
    }

    pub fn total(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }

    pub fn mcnemar(&self) -> f64 {
        mcnemar_exact(self.b, self.c)
    }
}

/// Largest discordant count handled with exact integer arithmetic.
const EXACT_LIMIT: u64 = 127;

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn binom_lower_tail_exact(n: u64, k: u64) -> f64 {
    // Σ_{i≤k} C(n, i), exactly, then scaled by 2^(1-n)
    let mut c: u128 = 1;
    let mut sum: u128 = 1;
    for i in 1..=k {
        // divide first so the product stays below 2^127
        let (num, den) = ((n - i + 1) as u128, i as u128);
        let g = gcd(num, den);
        c = c / (den / g) * (num / g);
        sum += c;
    }
    // 2·sum / 2^n; the division by a power of two is exact in binary
    libm::ldexp(sum as f64, 1 - n as i32)
}

fn ln_choose(n: u64, k: u64) -> f64 {
    libm::lgamma(n as f64 + 1.0) - libm::lgamma(k as f64 + 1.0) - libm::lgamma((n - k) as f64 + 1.0)
}

fn binom_lower_tail_log(n: u64, k: u64) -> f64 {
    let terms: Vec<f64> = (0..=k).map(|i| ln_choose(n, i)).collect();
    let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = terms.iter().map(|t| libm::exp(t - top)).sum();
    libm::exp(top + libm::log(s) + (1.0 - n as f64) * core::f64::consts::LN_2)
}

/// Two-sided exact McNemar p-value: `min(1, 2·P(X ≤ min(b, c)))` for
/// `X ~ Binomial(b + c, ½)`.
pub fn mcnemar_exact(b: u64, c: u64) -> f64 {
    let n = b + c;
    if n == 0 {
        return 1.0;
    }
    let k = b.min(c);
    let p = if n <= EXACT_LIMIT { binom_lower_tail_exact(n, k) } else { binom_lower_tail_log(n, k) };
    p.min(1.0)
}

/// Smallest p-value an exact McNemar test with `n` discordant pairs can
/// attain.
pub fn mcnemar_min_attainable(n: u64) -> f64 {
    mcnemar_exact(0, n)
}

/// Every attainable p-value for `n` discordant pairs, ascending.
pub fn mcnemar_support(n: u64) -> Vec<f64> {
    let mut s: Vec<f64> = (0..=n / 2).map(|k| mcnemar_exact(k, n - k)).collect();
    s.dedup();
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HolmVariant {
    Plain,
    Discrete,
}

/// One hypothesis: its p-value and the smallest p-value its test could
/// have produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscreteTest {
    pub p: f64,
    pub min_attainable: f64,
}

impl DiscreteTest {
    pub fn mcnemar(b: u64, c: u64) -> Self {
        Self { p: mcnemar_exact(b, c), min_attainable: mcnemar_min_attainable(b + c) }
    }

    /// A test with a continuous null distribution.
    pub fn continuous(p: f64) -> Self {
        Self { p, min_attainable: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolmResult {
    pub reject: Vec<bool>,
    /// Step-down adjusted p-values; for the discrete variant they are tied to
    /// the level `alpha` through the effective test counts.
    pub adjusted: Vec<f64>,
}

/// Effective number of tests among `remaining`: the smallest `k` such that
/// at most `k` of them could reach significance at level `alpha / k`.
pub fn tarone_count(remaining: &[DiscreteTest], alpha: f64) -> usize {
    let m = remaining.len();
    (1..=m).find(|&k| remaining.iter().filter(|t| t.min_attainable <= alpha / k as f64).count() <= k).unwrap_or(m)
}

/// Holm step-down at level `alpha`. The discrete variant replaces the
/// number of remaining hypotheses by [`tarone_count`] at every step.
pub fn holm(tests: &[DiscreteTest], alpha: f64, variant: HolmVariant) -> Result<HolmResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidSpec(format!("alpha {alpha} must lie in (0, 1)")));
    }
    if tests.iter().any(|t| !(0.0..=1.0).contains(&t.p) || !(t.min_attainable <= t.p)) {
        return Err(Error::InvalidSpec("p-values must lie in [min_attainable, 1]".into()));
    }
    let m = tests.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| tests[a].p.partial_cmp(&tests[b].p).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    let sorted: Vec<DiscreteTest> = order.iter().map(|&i| tests[i]).collect();
    let mut reject = vec![false; m];
    let mut adjusted = vec![1.0; m];
    let mut running = 0.0f64;
    let mut stopped = false;
    for step in 0..m {
        let k = match variant {
            HolmVariant::Plain => m - step,
            HolmVariant::Discrete => tarone_count(&sorted[step..], alpha),
        };
        let t = sorted[step];
        running = running.max((k as f64 * t.p).min(1.0));
        adjusted[order[step]] = running;
        if !stopped && t.p <= alpha / k as f64 {
            reject[order[step]] = true;
        } else {
            stopped = true;
        }
    }
    Ok(HolmResult { reject, adjusted })
}
