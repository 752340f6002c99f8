//! Ensemble statistics: compensated sums, importance weights, effective
//! sample size and a bootstrapped weighted two-sample Kolmogorov-Smirnov test.
//!
//! The KS null distribution is approximated by the centered bootstrap: each
//! arm is resampled with replacement (value and weight together) and the
//! statistic `sup |(F1* - F1) - (F2* - F2)|` is recorded. The p-value is
//! `(1 + #{D* >= D}) / (B + 1)`.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{LabError, Result};
use crate::grid::path_rng;

/// Neumaier compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    compensation: f64,
}

impl NeumaierSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = NeumaierSum::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// Sample mean and its standard error `s / sqrt(n)`.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = compensated_sum(values.iter().copied()) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean)));
    (mean, (ss / (n - 1) as f64 / n as f64).sqrt())
}

/// Exponentiates log-weights after subtracting their maximum and normalizes
/// them to sum to one.
pub fn normalized_weights(log_weights: &[f64]) -> Result<Vec<f64>> {
    if log_weights.is_empty() {
        return Err(LabError::DegenerateWeights("no weights".into()));
    }
    if log_weights.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
        return Err(LabError::DegenerateWeights(
            "log-weights contain NaN or +inf".into(),
        ));
    }
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(LabError::DegenerateWeights("all weights are zero".into()));
    }
    let raw: Vec<f64> = log_weights.iter().map(|w| (w - max).exp()).collect();
    let total = compensated_sum(raw.iter().copied());
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Effective sample size `(sum w)^2 / sum w^2`.
pub fn ess(weights: &[f64]) -> Result<f64> {
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(LabError::DegenerateWeights(format!(
            "weights must be finite and non-negative, found {w}"
        )));
    }
    let max = weights.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Err(LabError::DegenerateWeights("all weights are zero".into()));
    }
    // rescale so squares cannot overflow
    let sum = compensated_sum(weights.iter().map(|w| w / max));
    let sum_sq = compensated_sum(weights.iter().map(|w| (w / max) * (w / max)));
    Ok(sum * sum / sum_sq)
}

/// Effective sample size of `exp(log_weights)`.
pub fn ess_from_log_weights(log_weights: &[f64]) -> Result<f64> {
    ess(&normalized_weights(log_weights)?)
}

/// Self-normalized weighted mean `sum w x / sum w`.
pub fn weighted_mean(values: &[f64], weights: &[f64]) -> f64 {
    let num = compensated_sum(values.iter().zip(weights).map(|(x, w)| x * w));
    let den = compensated_sum(weights.iter().copied());
    num / den
}

/// Delta-method standard error of the self-normalized weighted mean.
pub fn weighted_mean_stderr(values: &[f64], weights: &[f64]) -> f64 {
    let den = compensated_sum(weights.iter().copied());
    let mean = weighted_mean(values, weights);
    let var = compensated_sum(
        values
            .iter()
            .zip(weights)
            .map(|(x, w)| (w / den) * (w / den) * (x - mean) * (x - mean)),
    );
    var.sqrt()
}

/// Ordering of the pooled values of two samples, with tie groups.
///
/// Each arm is sorted on its own; the pooled order then refers to positions
/// in `[a sorted, b sorted]`, so a sweep reads two monotone streams.
#[derive(Debug, Clone)]
struct PooledOrder {
    // original index at each rank, per arm
    perm_a: Vec<u32>,
    perm_b: Vec<u32>,
    // position in [a sorted, b sorted], in ascending pooled order
    order: Vec<u32>,
    // 1 where the entry belongs to arm b
    arm: Vec<u8>,
    // true where a tie group ends
    group_end: Vec<bool>,
}

fn sorted_perm(v: &[f64]) -> Vec<u32> {
    let mut perm: Vec<u32> = (0..v.len() as u32).collect();
    perm.sort_by(|&i, &j| v[i as usize].total_cmp(&v[j as usize]).then(i.cmp(&j)));
    perm
}

impl PooledOrder {
    fn new(a: &[f64], b: &[f64]) -> Self {
        let perm_a = sorted_perm(a);
        let perm_b = sorted_perm(b);
        let n = a.len() + b.len();
        let (mut order, mut arm, mut values) =
            (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        let (mut i, mut j) = (0, 0);
        // ties put arm a first
        while i < a.len() || j < b.len() {
            let take_a = j == b.len()
                || (i < a.len() && a[perm_a[i] as usize].total_cmp(&b[perm_b[j] as usize]).is_le());
            if take_a {
                order.push(i as u32);
                arm.push(0);
                values.push(a[perm_a[i] as usize]);
                i += 1;
            } else {
                order.push((a.len() + j) as u32);
                arm.push(1);
                values.push(b[perm_b[j] as usize]);
                j += 1;
            }
        }
        let group_end = (0..n)
            .map(|k| k + 1 == n || values[k + 1] != values[k])
            .collect();
        Self {
            perm_a,
            perm_b,
            order,
            arm,
            group_end,
        }
    }

    fn rank_order(perm: &[u32], v: &[f64]) -> Vec<f64> {
        perm.iter().map(|&i| v[i as usize]).collect()
    }

    /// Cumulative normalized masses `(Ca, Cb)` at every tie-group end, for
    /// masses given in rank order.
    fn cumulative(&self, mass_a: &[f64], mass_b: &[f64]) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        self.scan(mass_a, mass_b, |ca, cb| out.push((ca, cb)));
        out
    }

    fn scan(&self, mass_a: &[f64], mass_b: &[f64], at_group_end: impl FnMut(f64, f64)) {
        let mut pooled = Vec::with_capacity(mass_a.len() + mass_b.len());
        normalize_into(mass_a, &mut pooled);
        normalize_into(mass_b, &mut pooled);
        self.scan_pooled(&pooled, at_group_end);
    }

    /// Like [`Self::scan`] for masses already normalized per arm and stored
    /// as `[a ranks, b ranks]`.
    fn scan_pooled(&self, pooled: &[f64], mut at_group_end: impl FnMut(f64, f64)) {
        let (mut ca, mut cb) = (0.0, 0.0);
        for ((&g, &arm), &end) in self.order.iter().zip(&self.arm).zip(&self.group_end) {
            // adding an exact zero to the other arm keeps the loop branch-free
            let m = pooled[g as usize];
            let (da, db) = if arm == 0 { (m, 0.0) } else { (0.0, m) };
            ca += da;
            cb += db;
            if end {
                at_group_end(ca, cb);
            }
        }
    }

    fn sup_against(&self, pooled: &[f64], baseline: &[(f64, f64)]) -> f64 {
        let mut sup: f64 = 0.0;
        let mut g = 0;
        self.scan_pooled(pooled, |ca, cb| {
            let (ca0, cb0) = baseline[g];
            let d = ((ca - ca0) - (cb - cb0)).abs();
            // rarely taken, so no dependency chain through sup
            if d > sup {
                sup = d;
            }
            g += 1;
        });
        sup
    }

    /// `sup |(Ca - Ca0) - (Cb - Cb0)|` over tie-group ends, where `C` are the
    /// cumulative masses (in rank order) normalized by their totals and
    /// `(Ca0, Cb0)` is an optional baseline from [`Self::cumulative`]. With
    /// no baseline this is the plain two-sample KS distance.
    fn sweep(&self, mass_a: &[f64], mass_b: &[f64], baseline: Option<&[(f64, f64)]>) -> f64 {
        let mut sup: f64 = 0.0;
        let mut g = 0;
        self.scan(mass_a, mass_b, |ca, cb| {
            let (ca0, cb0) = baseline.map_or((0.0, 0.0), |b| b[g]);
            sup = sup.max(((ca - ca0) - (cb - cb0)).abs());
            g += 1;
        });
        sup
    }
}

fn normalize_into(mass: &[f64], out: &mut Vec<f64>) {
    let total: f64 = mass.iter().sum();
    out.extend(mass.iter().map(|m| m / total));
}

/// Weighted two-sample KS distance; weights need not be normalized.
pub fn weighted_ks_statistic(a: &[f64], wa: &[f64], b: &[f64], wb: &[f64]) -> f64 {
    let o = PooledOrder::new(a, b);
    let wa = PooledOrder::rank_order(&o.perm_a, wa);
    let wb = PooledOrder::rank_order(&o.perm_b, wb);
    o.sweep(&wa, &wb, None)
}

/// One arm of a two-sample comparison: several value columns sharing one
/// weight vector.
#[derive(Debug, Clone)]
pub struct ArmSample {
    pub columns: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl ArmSample {
    pub fn new(columns: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        let n = weights.len();
        if n == 0 {
            return Err(LabError::DegenerateWeights("empty sample".into()));
        }
        if columns.iter().any(|c| c.len() != n) {
            return Err(LabError::Dimension {
                expected: format!("{n} values per column"),
                got: "ragged columns".into(),
            });
        }
        let total = compensated_sum(weights.iter().copied());
        if !(total > 0.0 && total.is_finite()) {
            return Err(LabError::DegenerateWeights(format!(
                "weights sum to {total}"
            )));
        }
        Ok(Self {
            columns,
            weights: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    pub fn unweighted(columns: Vec<Vec<f64>>) -> Result<Self> {
        let n = columns.first().map_or(0, |c| c.len());
        Self::new(columns, vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn mean(&self, column: usize) -> f64 {
        weighted_mean(&self.columns[column], &self.weights)
    }
}

/// Per-column outcome of [`bootstrap_two_sample`].
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnComparison {
    pub ks_statistic: f64,
    pub ks_p_value: f64,
    pub mean_stderr_a: f64,
    pub mean_stderr_b: f64,
}

/// Per-column data in rank order.
struct RankedColumn {
    order: PooledOrder,
    values_a: Vec<f64>,
    values_b: Vec<f64>,
    baseline: Vec<(f64, f64)>,
    observed: f64,
}

impl RankedColumn {
    fn new(a: &ArmSample, b: &ArmSample, c: usize) -> Self {
        let order = PooledOrder::new(&a.columns[c], &b.columns[c]);
        let weights_a = PooledOrder::rank_order(&order.perm_a, &a.weights);
        let weights_b = PooledOrder::rank_order(&order.perm_b, &b.weights);
        Self {
            values_a: PooledOrder::rank_order(&order.perm_a, &a.columns[c]),
            values_b: PooledOrder::rank_order(&order.perm_b, &b.columns[c]),
            baseline: order.cumulative(&weights_a, &weights_b),
            observed: order.sweep(&weights_a, &weights_b, None),
            order,
        }
    }
}

/// Weighted KS test and bootstrap standard errors of the weighted means, for
/// every column. Deterministic in `seed` regardless of thread count.
///
/// Each replicate resamples whole paths, so all columns of a replicate see
/// the same draw.
pub fn bootstrap_two_sample(
    a: &ArmSample,
    b: &ArmSample,
    resamples: usize,
    seed: u64,
) -> Result<Vec<ColumnComparison>> {
    if a.columns.len() != b.columns.len() {
        return Err(LabError::Dimension {
            expected: format!("{} columns", a.columns.len()),
            got: format!("{} columns", b.columns.len()),
        });
    }
    let ncols = a.columns.len();
    let ranked: Vec<RankedColumn> = (0..ncols).map(|c| RankedColumn::new(a, b, c)).collect();

    // (ks, mean_a, mean_b) per column
    let replicates: Vec<Vec<(f64, f64, f64)>> = (0..resamples)
        .into_par_iter()
        .map_init(Scratch::default, |scratch, r| {
            let mut rng = path_rng(seed, r as u64);
            resample_into(&a.weights, &mut rng, &mut scratch.counts, &mut scratch.mass_a);
            resample_into(&b.weights, &mut rng, &mut scratch.counts, &mut scratch.mass_b);
            ranked
                .iter()
                .map(|col| {
                    let pooled = &mut scratch.pooled;
                    pooled.clear();
                    pooled.extend(col.order.perm_a.iter().map(|&i| scratch.mass_a[i as usize]));
                    pooled.extend(col.order.perm_b.iter().map(|&i| scratch.mass_b[i as usize]));
                    let (ma, mb) = scratch.pooled.split_at(a.len());
                    (
                        col.order.sup_against(&scratch.pooled, &col.baseline),
                        weighted_mean(&col.values_a, ma),
                        weighted_mean(&col.values_b, mb),
                    )
                })
                .collect()
        })
        .collect();

    let mut out = Vec::with_capacity(ncols);
    for (c, col) in ranked.iter().enumerate() {
        let exceed = replicates.iter().filter(|r| r[c].0 >= col.observed).count();
        let p = (1 + exceed) as f64 / (resamples + 1) as f64;
        let (se_a, se_b) = if resamples >= 2 {
            let ma: Vec<f64> = replicates.iter().map(|r| r[c].1).collect();
            let mb: Vec<f64> = replicates.iter().map(|r| r[c].2).collect();
            (spread(&ma), spread(&mb))
        } else {
            (
                weighted_mean_stderr(&a.columns[c], &a.weights),
                weighted_mean_stderr(&b.columns[c], &b.weights),
            )
        };
        out.push(ColumnComparison {
            ks_statistic: col.observed,
            ks_p_value: p.min(1.0),
            mean_stderr_a: se_a,
            mean_stderr_b: se_b,
        });
    }
    Ok(out)
}

/// Reusable buffers of one bootstrap worker.
#[derive(Default)]
struct Scratch {
    counts: Vec<u32>,
    mass_a: Vec<f64>,
    mass_b: Vec<f64>,
    pooled: Vec<f64>,
}

/// Multinomial resample of one arm's paths, written to `mass` as weight mass
/// normalized to unit total, in path order.
fn resample_into(weights: &[f64], rng: &mut impl Rng, counts: &mut Vec<u32>, mass: &mut Vec<f64>) {
    let n = weights.len() as u32;
    counts.clear();
    counts.resize(weights.len(), 0);
    for _ in 0..n {
        counts[rng.random_range(0..n) as usize] += 1;
    }
    mass.clear();
    mass.extend(counts.iter().zip(weights).map(|(&c, &w)| c as f64 * w));
    if mass.iter().all(|&m| m == 0.0) {
        // every drawn weight underflowed; fall back to the original sample
        mass.copy_from_slice(weights);
    }
    let total: f64 = mass.iter().sum();
    mass.iter_mut().for_each(|m| *m /= total);
}

fn spread(values: &[f64]) -> f64 {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let n = finite.len();
    if n < 2 {
        return 0.0;
    }
    let mean = compensated_sum(finite.iter().copied()) / n as f64;
    (compensated_sum(finite.iter().map(|v| (v - mean) * (v - mean))) / (n - 1) as f64).sqrt()
}

/// `(a - b) / sqrt(se_a^2 + se_b^2)`, with `0/0 = 0`.
pub fn z_score(mean_a: f64, se_a: f64, mean_b: f64, se_b: f64) -> f64 {
    let diff = mean_a - mean_b;
    let se = (se_a * se_a + se_b * se_b).sqrt();
    if diff == 0.0 {
        0.0
    } else {
        diff / se
    }
}
