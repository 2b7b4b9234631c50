//! Agreement statistics between predicted and reference cellularity scores:
//! MSE, four-bin Cohen's kappa, ICC(2,1), and percentile bootstrap intervals.
//!
//! The ICC variant is ICC(2,1) — two-way random effects, absolute agreement,
//! single measurement — the standard choice for one automated rater scored
//! against one human on the same items; the confidence intervals use the
//! percentile bootstrap with a seeded generator. Both are fixed, documented
//! choices rather than properties inherited from any reference result.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::seeding::derive_rng;

/// Default number of bootstrap replicates.
pub const DEFAULT_N_BOOT: usize = 2000;

const BOOTSTRAP_STREAM: u64 = 0xB0_07;
/// Redraw budget per replicate when the metric is undefined on a resample;
/// globally this caps work at `10 * n_boot` attempts.
const MAX_ATTEMPTS_PER_REPLICATE: u64 = 10;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("empty score set")]
    Empty,
    #[error("score {value} at pair {index} outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("{ids} ids for {pairs} pairs")]
    IdCount { ids: usize, pairs: usize },
    #[error("score {0} outside [0, 1]")]
    BinOutOfRange(f64),
    #[error("category sequences have different lengths: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("need at least {required} pairs, got {n}")]
    TooFew { n: usize, required: usize },
    #[error("icc denominator degenerate (no variance structure)")]
    IccDegenerate,
    #[error("n_boot must be at least 100, got {0}")]
    TooFewReplicates(usize),
    #[error("bootstrap metric undefined after {attempts} redraws at replicate {replicate}")]
    BootstrapExhausted { replicate: usize, attempts: u64 },
}

/// One (predicted, reference) score pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScorePair {
    pub predicted: f64,
    pub reference: f64,
}

/// A validated set of score pairs, optionally tagged with patch ids.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorePairSet {
    pairs: Vec<ScorePair>,
    ids: Option<Vec<String>>,
}

impl ScorePairSet {
    /// Validates every score into `[0, 1]`.
    pub fn new(pairs: Vec<ScorePair>) -> Result<Self, MetricError> {
        for (index, p) in pairs.iter().enumerate() {
            for value in [p.predicted, p.reference] {
                if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                    return Err(MetricError::OutOfRange { index, value });
                }
            }
        }
        Ok(ScorePairSet { pairs, ids: None })
    }

    pub fn with_ids(pairs: Vec<ScorePair>, ids: Vec<String>) -> Result<Self, MetricError> {
        if ids.len() != pairs.len() {
            return Err(MetricError::IdCount {
                ids: ids.len(),
                pairs: pairs.len(),
            });
        }
        let mut s = ScorePairSet::new(pairs)?;
        s.ids = Some(ids);
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[ScorePair] {
        &self.pairs
    }

    pub fn ids(&self) -> Option<&[String]> {
        self.ids.as_deref()
    }

    fn resample(&self, rng: &mut impl Rng) -> ScorePairSet {
        let n = self.pairs.len();
        let pairs = (0..n).map(|_| self.pairs[rng.random_range(0..n)]).collect();
        ScorePairSet { pairs, ids: None }
    }
}

/// Mean squared error between predicted and reference scores.
pub fn mse(s: &ScorePairSet) -> Result<f64, MetricError> {
    if s.is_empty() {
        return Err(MetricError::Empty);
    }
    let sum: f64 = s
        .pairs
        .iter()
        .map(|p| (p.predicted - p.reference) * (p.predicted - p.reference))
        .sum();
    Ok(sum / s.len() as f64)
}

/// The four cellularity categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum CellularityBin {
    /// `[0, 0.25]`
    Bin1,
    /// `(0.25, 0.5]`
    Bin2,
    /// `(0.5, 0.75]`
    Bin3,
    /// `(0.75, 1]`
    Bin4,
}

impl CellularityBin {
    /// 1-based bin number.
    pub fn index(self) -> u8 {
        match self {
            CellularityBin::Bin1 => 1,
            CellularityBin::Bin2 => 2,
            CellularityBin::Bin3 => 3,
            CellularityBin::Bin4 => 4,
        }
    }
}

impl std::fmt::Display for CellularityBin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.index())
    }
}

/// Bins a score: right-closed quarters with 0 in bin 1.
pub fn bin4(score: f64) -> Result<CellularityBin, MetricError> {
    if !score.is_finite() || !(0.0..=1.0).contains(&score) {
        return Err(MetricError::BinOutOfRange(score));
    }
    Ok(if score <= 0.25 {
        CellularityBin::Bin1
    } else if score <= 0.5 {
        CellularityBin::Bin2
    } else if score <= 0.75 {
        CellularityBin::Bin3
    } else {
        CellularityBin::Bin4
    })
}

/// Cohen's kappa between two equally long category sequences:
/// `(p_o - p_e) / (1 - p_e)`, with `p_e` from the marginal products. When
/// `p_e = 1` both sequences are constant on the same category, so agreement
/// is perfect and kappa is defined as 1.
pub fn cohens_kappa<T: Ord + Copy>(a: &[T], b: &[T]) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch { a: a.len(), b: b.len() });
    }
    if a.len() < 2 {
        return Err(MetricError::TooFew { n: a.len(), required: 2 });
    }
    let n = a.len() as f64;
    let mut categories: Vec<T> = a.iter().chain(b).copied().collect();
    categories.sort_unstable();
    categories.dedup();

    let index_of = |t: T| categories.binary_search(&t).expect("category present");
    let mut marginal_a = vec![0u64; categories.len()];
    let mut marginal_b = vec![0u64; categories.len()];
    let mut agree = 0u64;
    for (&x, &y) in a.iter().zip(b) {
        marginal_a[index_of(x)] += 1;
        marginal_b[index_of(y)] += 1;
        if x == y {
            agree += 1;
        }
    }
    let p_o = agree as f64 / n;
    let p_e: f64 = marginal_a
        .iter()
        .zip(&marginal_b)
        .map(|(&ma, &mb)| (ma as f64 / n) * (mb as f64 / n))
        .sum();
    if p_e >= 1.0 {
        return Ok(1.0);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Kappa on the four cellularity bins of a score-pair set.
pub fn kappa4(s: &ScorePairSet) -> Result<f64, MetricError> {
    let mut a = Vec::with_capacity(s.len());
    let mut b = Vec::with_capacity(s.len());
    for p in s.pairs() {
        a.push(bin4(p.predicted)?);
        b.push(bin4(p.reference)?);
    }
    cohens_kappa(&a, &b)
}

/// ICC(2,1) from the two-way ANOVA of the `n x 2` rating matrix:
/// `(MSR - MSE) / (MSR + (k-1) MSE + (k/n)(MSC - MSE))` with `k = 2`.
/// All `2n` ratings identical counts as perfect agreement (1).
pub fn icc(s: &ScorePairSet) -> Result<f64, MetricError> {
    let n = s.len();
    if n < 3 {
        return Err(MetricError::TooFew { n, required: 3 });
    }
    let first = s.pairs[0].predicted;
    if s.pairs
        .iter()
        .all(|p| p.predicted == first && p.reference == first)
    {
        return Ok(1.0);
    }

    let nf = n as f64;
    let total: f64 = s.pairs.iter().map(|p| p.predicted + p.reference).sum();
    let grand = total / (2.0 * nf);
    let col_pred: f64 = s.pairs.iter().map(|p| p.predicted).sum::<f64>() / nf;
    let col_ref: f64 = s.pairs.iter().map(|p| p.reference).sum::<f64>() / nf;

    let mut ss_rows = 0.0f64;
    let mut ss_total = 0.0f64;
    for p in &s.pairs {
        let row_mean = (p.predicted + p.reference) / 2.0;
        ss_rows += (row_mean - grand) * (row_mean - grand);
        ss_total += (p.predicted - grand) * (p.predicted - grand)
            + (p.reference - grand) * (p.reference - grand);
    }
    let ssr = 2.0 * ss_rows;
    let ssc = nf * ((col_pred - grand) * (col_pred - grand) + (col_ref - grand) * (col_ref - grand));
    // Cancellation can push the residual a hair below zero; it is a sum of squares.
    let sse = (ss_total - ssr - ssc).max(0.0);

    let msr = ssr / (nf - 1.0);
    let msc = ssc; // k - 1 = 1
    let mse_resid = sse / (nf - 1.0);

    let denominator = msr + mse_resid + (2.0 / nf) * (msc - mse_resid);
    if denominator <= 0.0 {
        return Err(MetricError::IccDegenerate);
    }
    Ok((msr - mse_resid) / denominator)
}

/// Percentile-bootstrap 95% interval of `metric` on `s`: resample pairs with
/// replacement `n_boot` times and report the empirical 2.5% and 97.5%
/// quantiles (linear interpolation between order statistics). Replicates draw
/// from seeds derived per `(seed, replicate, attempt)`, so the result is
/// independent of thread scheduling; a resample on which the metric errors is
/// redrawn, up to 10 attempts per replicate.
pub fn bootstrap_ci(
    metric: impl Fn(&ScorePairSet) -> Result<f64, MetricError> + Sync,
    s: &ScorePairSet,
    n_boot: usize,
    seed: u64,
) -> Result<(f64, f64), MetricError> {
    if s.is_empty() {
        return Err(MetricError::Empty);
    }
    if n_boot < 100 {
        return Err(MetricError::TooFewReplicates(n_boot));
    }

    let replicates: Vec<Result<f64, MetricError>> = (0..n_boot)
        .into_par_iter()
        .map(|replicate| {
            for attempt in 0..MAX_ATTEMPTS_PER_REPLICATE {
                let mut rng = derive_rng(
                    seed,
                    BOOTSTRAP_STREAM,
                    (replicate as u64) * MAX_ATTEMPTS_PER_REPLICATE + attempt,
                );
                let resample = s.resample(&mut rng);
                match metric(&resample) {
                    Ok(v) => return Ok(v),
                    Err(_) => continue,
                }
            }
            Err(MetricError::BootstrapExhausted {
                replicate,
                attempts: MAX_ATTEMPTS_PER_REPLICATE,
            })
        })
        .collect();

    let mut values = Vec::with_capacity(n_boot);
    for r in replicates {
        values.push(r?);
    }
    values.sort_by(f64::total_cmp);
    Ok((quantile_sorted(&values, 0.025), quantile_sorted(&values, 0.975)))
}

/// Linear-interpolation quantile of an ascending slice.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Point estimate plus 95% bootstrap interval of one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricSummary {
    pub point: f64,
    pub ci95: [f64; 2],
}

/// The full agreement report between predictions and references.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub n: usize,
    pub mse: MetricSummary,
    pub kappa4: MetricSummary,
    pub icc21: MetricSummary,
}

/// Computes all three metrics with bootstrap intervals in one pass.
pub fn evaluate(s: &ScorePairSet, n_boot: usize, seed: u64) -> Result<EvalReport, MetricError> {
    let mse_point = mse(s)?;
    let kappa_point = kappa4(s)?;
    let icc_point = icc(s)?;
    let mse_ci = bootstrap_ci(mse, s, n_boot, seed)?;
    let kappa_ci = bootstrap_ci(kappa4, s, n_boot, seed.wrapping_add(1))?;
    let icc_ci = bootstrap_ci(icc, s, n_boot, seed.wrapping_add(2))?;
    Ok(EvalReport {
        n: s.len(),
        mse: MetricSummary {
            point: mse_point,
            ci95: [mse_ci.0, mse_ci.1],
        },
        kappa4: MetricSummary {
            point: kappa_point,
            ci95: [kappa_ci.0, kappa_ci.1],
        },
        icc21: MetricSummary {
            point: icc_point,
            ci95: [icc_ci.0, icc_ci.1],
        },
    })
}
