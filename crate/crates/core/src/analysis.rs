//! Error metrics, the first-order error bound, the Jensen check on centroid
//! weights, the analytic FLOP model, and centroid-score histograms.

use rayon::prelude::*;
use serde::Serialize;

use crate::attention::AttentionConfig;
use crate::error::{PisaError, Result};
use crate::mat::{check_divisible, check_qkv, dot, Mat};
use crate::pisa::{pisa_reference, PisaOptions, PisaVariant};
use crate::router::SelectionPlan;
use crate::stats::BlockStatistics;

/// Slack allowed before a row counts as violating the error bound.
pub const BOUND_SLACK: f64 = 1e-9;
/// Relative tolerance of the Jensen check.
pub const JENSEN_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorReport {
    /// `sum|O_hat - O| / sum|O|`
    pub l1_rel: f64,
    /// Frobenius norm of the difference over that of the reference.
    pub l2_rel: f64,
    pub max_abs: f64,
    pub per_row_l2: Vec<f64>,
}

/// Compares an approximate output against a reference of the same shape.
pub fn compare_outputs(o_hat: &Mat, o_ref: &Mat) -> Result<ErrorReport> {
    if o_hat.rows() != o_ref.rows() || o_hat.cols() != o_ref.cols() {
        return Err(PisaError::InvalidDimension(format!(
            "cannot compare {}x{} with {}x{}",
            o_hat.rows(),
            o_hat.cols(),
            o_ref.rows(),
            o_ref.cols()
        )));
    }
    let (mut l1, mut l1_ref, mut sq, mut sq_ref, mut max_abs) = (0.0, 0.0, 0.0, 0.0, 0.0f64);
    let mut per_row_l2 = Vec::with_capacity(o_ref.rows());
    for (a, b) in o_hat.iter_rows().zip(o_ref.iter_rows()) {
        let mut row_sq = 0.0;
        for (x, y) in a.iter().zip(b) {
            let e = (x - y).abs();
            l1 += e;
            l1_ref += y.abs();
            row_sq += e * e;
            sq_ref += y * y;
            max_abs = max_abs.max(e);
        }
        sq += row_sq;
        per_row_l2.push(row_sq.sqrt());
    }
    Ok(ErrorReport {
        l1_rel: ratio(l1, l1_ref),
        l2_rel: ratio(sq.sqrt(), sq_ref.sqrt()),
        max_abs,
        per_row_l2,
    })
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

/// Per-row comparison of Hybrid against BlockFirst with the error bound
/// `C_q * M_max * rho_t / B`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub block_size: usize,
    /// `scale * max_t ||q_t||`
    pub c_q: f64,
    pub m_max: f64,
    /// `||o_hybrid_t - o_blockfirst_t||`
    pub actual_err: Vec<f64>,
    pub bound: Vec<f64>,
    /// Tail fraction `tau_t / (E_t + tau_t)`, with `E_t` the exact mass of
    /// the selected blocks and `tau_t` the exact mass of the unselected ones.
    pub rho: Vec<f64>,
    /// `sum_U alpha_{t,j}`
    pub alpha_sum: Vec<f64>,
    /// `tau_t / B`
    pub jensen_rhs: Vec<f64>,
    /// Rows with `actual_err > bound + BOUND_SLACK`.
    pub violations: Vec<usize>,
    /// Rows with `alpha_sum > jensen_rhs` beyond `JENSEN_RTOL`.
    pub jensen_violations: Vec<usize>,
    /// Largest `actual_err / bound` over rows with a positive bound.
    pub max_slack_ratio: f64,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.jensen_violations.is_empty()
    }
}

/// Evaluates the first-order error bound on every query row.
///
/// Both outputs share the piecewise denominator, so their difference is
/// `sum_U alpha_j (scale q)(H_j - H_bar) / D_t`. Its norm is at most
/// `C_q M_max sum_U alpha / D_t`, and since `B sum_U alpha <= tau_t` and
/// `x / (E + x)` is increasing, this is at most `C_q M_max rho_t / B`.
pub fn theorem1_check(
    q: &Mat,
    k: &Mat,
    v: &Mat,
    plan: &SelectionPlan,
    stats: &BlockStatistics,
    cfg: &AttentionConfig,
) -> Result<BoundReport> {
    let opts = PisaOptions::default();
    let exact = pisa_reference(q, k, v, plan, stats, PisaVariant::BlockFirst, cfg, &opts)?;
    let approx = pisa_reference(q, k, v, plan, stats, PisaVariant::Hybrid, cfg, &opts)?;
    let b = cfg.block_size;
    let scale = cfg.scale_for(q.cols());
    let c_q = scale * q.iter_rows().map(|r| dot(r, r).sqrt()).fold(0.0, f64::max);
    let m_max = stats.m_max;
    let rows_per_entry = plan.rows_per_entry(q.rows());

    let per_row: Vec<(f64, f64, f64, f64, bool)> = (0..q.rows())
        .into_par_iter()
        .map(|t| {
            let masses = row_masses(q.row(t), k, &stats.k_bar, plan, t / rows_per_entry, b, scale);
            let rho = masses.tau / (masses.exact + masses.tau);
            let alpha_sum = masses.alpha_sum * masses.shift.exp();
            let jensen_rhs = masses.tau / b as f64 * masses.shift.exp();
            let jensen_bad = masses.alpha_sum > masses.tau / b as f64 * (1.0 + JENSEN_RTOL);
            (rho, alpha_sum, jensen_rhs, c_q * m_max * rho / b as f64, jensen_bad)
        })
        .collect();

    let mut report = BoundReport {
        block_size: b,
        c_q,
        m_max,
        actual_err: Vec::with_capacity(q.rows()),
        bound: Vec::with_capacity(q.rows()),
        rho: Vec::with_capacity(q.rows()),
        alpha_sum: Vec::with_capacity(q.rows()),
        jensen_rhs: Vec::with_capacity(q.rows()),
        violations: Vec::new(),
        jensen_violations: Vec::new(),
        max_slack_ratio: 0.0,
    };
    for (t, (rho, alpha_sum, jensen_rhs, bound, jensen_bad)) in per_row.into_iter().enumerate() {
        let err: f64 = approx
            .o
            .row(t)
            .iter()
            .zip(exact.o.row(t))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if err > bound + BOUND_SLACK {
            report.violations.push(t);
        }
        if jensen_bad {
            report.jensen_violations.push(t);
        }
        if bound > 0.0 {
            report.max_slack_ratio = report.max_slack_ratio.max(err / bound);
        }
        report.actual_err.push(err);
        report.bound.push(bound);
        report.rho.push(rho);
        report.alpha_sum.push(alpha_sum);
        report.jensen_rhs.push(jensen_rhs);
    }
    Ok(report)
}

/// Exact and approximate masses of one query row, all shifted by `exp(-shift)`.
struct RowMasses {
    shift: f64,
    exact: f64,
    tau: f64,
    alpha_sum: f64,
}

fn row_masses(qt: &[f64], k: &Mat, k_bar: &Mat, plan: &SelectionPlan, entry: usize, b: usize, scale: f64) -> RowMasses {
    let mask = plan.mask(entry);
    let scores: Vec<f64> = k.iter_rows().map(|kr| scale * dot(qt, kr)).collect();
    let cent: Vec<f64> = (0..k_bar.rows())
        .filter(|&j| !mask[j])
        .map(|j| scale * dot(qt, k_bar.row(j)))
        .collect();
    let shift = scores.iter().chain(&cent).copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut exact, mut tau) = (0.0, 0.0);
    for (r, s) in scores.iter().enumerate() {
        let p = (s - shift).exp();
        if mask[r / b] {
            exact += p;
        } else {
            tau += p;
        }
    }
    RowMasses {
        shift,
        exact,
        tau,
        alpha_sum: cent.iter().map(|s| (s - shift).exp()).sum(),
    }
}

/// Counts (row, unselected block) pairs where the centroid weight exceeds
/// the block's mean exponential:
/// `exp(scale q_t . k_bar_j) > (1/B) sum_n exp(scale q_t . k_{j,n})`.
pub fn jensen_check(q: &Mat, k: &Mat, plan: &SelectionPlan, block_size: usize, scale: f64) -> Result<usize> {
    if q.cols() != k.cols() {
        return Err(PisaError::InvalidDimension(format!(
            "Q has head_dim {}, K has {}",
            q.cols(),
            k.cols()
        )));
    }
    check_divisible(k.rows(), block_size)?;
    let n = k.rows() / block_size;
    plan.validate(q.rows(), n)?;
    let k_bar = block_centroids(k, block_size);
    let rows_per_entry = plan.rows_per_entry(q.rows());
    Ok((0..q.rows())
        .into_par_iter()
        .map(|t| {
            let qt = q.row(t);
            plan.unselected(t / rows_per_entry)
                .into_iter()
                .filter(|&j| {
                    let scores: Vec<f64> = (j * block_size..(j + 1) * block_size)
                        .map(|r| scale * dot(qt, k.row(r)))
                        .collect();
                    let c = scale * dot(qt, k_bar.row(j));
                    let m = scores.iter().copied().fold(c, f64::max);
                    let mean = scores.iter().map(|s| (s - m).exp()).sum::<f64>() / block_size as f64;
                    (c - m).exp() > mean * (1.0 + JENSEN_RTOL)
                })
                .count()
        })
        .sum())
}

fn block_centroids(k: &Mat, b: usize) -> Mat {
    let n = k.rows() / b;
    let mut out = Mat::zeros(n, k.cols());
    for j in 0..n {
        let row = out.row_mut(j);
        for r in j * b..(j + 1) * b {
            row.iter_mut().zip(k.row(r)).for_each(|(a, x)| *a += x);
        }
        row.iter_mut().for_each(|x| *x /= b as f64);
    }
    out
}

/// Relative change of every row's piecewise denominator if the first-order
/// term `sum_U alpha_j (scale q_t) . sum_n (k_{j,n} - k_bar_j)` were added.
///
/// The deviations sum to zero within a block, so this only measures rounding.
pub fn denominator_first_order_shift(
    q: &Mat,
    k: &Mat,
    plan: &SelectionPlan,
    stats: &BlockStatistics,
    scale: f64,
) -> Result<Vec<f64>> {
    check_qkv(q, k, k)?;
    let b = stats.block_size;
    check_divisible(k.rows(), b)?;
    plan.validate(q.rows(), stats.num_blocks)?;
    let d = k.cols();
    let deviation_sums: Vec<Vec<f64>> = (0..stats.num_blocks)
        .map(|j| {
            let mut s = vec![0.0; d];
            for r in j * b..(j + 1) * b {
                for ((a, x), c) in s.iter_mut().zip(k.row(r)).zip(stats.k_bar.row(j)) {
                    *a += x - c;
                }
            }
            s
        })
        .collect();
    let rows_per_entry = plan.rows_per_entry(q.rows());
    Ok((0..q.rows())
        .into_par_iter()
        .map(|t| {
            let qt = q.row(t);
            let masses = row_masses(qt, k, &stats.k_bar, plan, t / rows_per_entry, b, scale);
            let denom = masses.exact + b as f64 * masses.alpha_sum;
            let extra: f64 = plan
                .unselected(t / rows_per_entry)
                .into_iter()
                .map(|j| {
                    let alpha = (scale * dot(qt, stats.k_bar.row(j)) - masses.shift).exp();
                    alpha * scale * dot(qt, &deviation_sums[j])
                })
                .sum();
            extra.abs() / denom
        })
        .collect())
}

/// Analytic FLOP counts, two flops per multiply-add, exp and division ignored.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlopReport {
    pub dense_flops: u64,
    /// Exact blocks only.
    pub sparse_flops: u64,
    /// Exact blocks plus whatever approximation the variant adds.
    pub pisa_flops: u64,
    pub sparse_ratio: f64,
    pub pisa_ratio: f64,
    /// `(pisa_flops - sparse_flops) / dense_flops`
    pub overhead_ratio: f64,
    /// Building centroids and first-order matrices.
    pub prepare: u64,
    /// Block routing scores; excluded from the totals, since block-sparse
    /// attention pays it too.
    pub select: u64,
    pub exact: u64,
    pub zeroth: u64,
    pub first_order: u64,
    pub normalize: u64,
}

/// FLOP model for one head with `L` rows, width `d`, block size `B` and
/// `k_selected` exact blocks per query block.
pub fn flop_model(seq_len: usize, head_dim: usize, block_size: usize, k_selected: usize, variant: PisaVariant) -> Result<FlopReport> {
    check_divisible(seq_len, block_size)?;
    if seq_len == 0 || head_dim == 0 {
        return Err(PisaError::InvalidDimension("seq_len and head_dim must be >= 1".into()));
    }
    let n = (seq_len / block_size) as u64;
    let k = k_selected as u64;
    if k == 0 || k > n {
        return Err(PisaError::InvalidSparsity(format!("k = {k} must be in [1, {n}]")));
    }
    let (l, d, b) = (seq_len as u64, head_dim as u64, block_size as u64);

    let dense = 4 * l * l * d;
    let exact = 4 * l * k * b * d;
    let centroid_prep = 2 * l * d;
    let h_prep = 2 * l * d * d;
    let tail = 4 * l * (n - k) * d;
    let (prepare, zeroth, first_order) = match variant {
        PisaVariant::SparseOnly => (0, 0, 0),
        PisaVariant::Zeroth => (centroid_prep, tail, 0),
        PisaVariant::BlockFirst => (centroid_prep + h_prep, tail, 2 * l * (n - k) * d * d),
        PisaVariant::Hybrid => (centroid_prep + h_prep, tail, 2 * l * d * d),
        PisaVariant::GlobalCentroid => (centroid_prep + h_prep, tail, 2 * l * d * d + 2 * l * d),
    };
    let pisa = exact + zeroth + first_order + prepare;
    Ok(FlopReport {
        dense_flops: dense,
        sparse_flops: exact,
        pisa_flops: pisa,
        sparse_ratio: exact as f64 / dense as f64,
        pisa_ratio: pisa as f64 / dense as f64,
        overhead_ratio: (pisa - exact) as f64 / dense as f64,
        prepare,
        select: 2 * n * n * d,
        exact,
        zeroth,
        first_order,
        normalize: 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassSummary {
    pub count: usize,
    /// Zero for an empty class.
    pub mean: f64,
    /// Population skewness; zero when the class has no spread.
    pub skew: f64,
}

/// Histograms of centroid scores `scale q_t . k_bar_j`, split by whether
/// block `j` is selected for row `t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreHistogram {
    /// `bins + 1` equally spaced edges.
    pub edges: Vec<f64>,
    pub count_selected: Vec<usize>,
    pub count_unselected: Vec<usize>,
    pub selected: ClassSummary,
    pub unselected: ClassSummary,
}

impl ScoreHistogram {
    /// CSV with columns `bin_left,bin_right,count_selected,count_unselected`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_left,bin_right,count_selected,count_unselected\n");
        for i in 0..self.count_selected.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.edges[i],
                self.edges[i + 1],
                self.count_selected[i],
                self.count_unselected[i]
            ));
        }
        out
    }
}

pub fn score_histogram(q: &Mat, k: &Mat, plan: &SelectionPlan, block_size: usize, scale: f64, bins: usize) -> Result<ScoreHistogram> {
    if bins == 0 {
        return Err(PisaError::InvalidDimension("bins must be >= 1".into()));
    }
    if q.cols() != k.cols() {
        return Err(PisaError::InvalidDimension("Q and K widths differ".into()));
    }
    check_divisible(k.rows(), block_size)?;
    let n = k.rows() / block_size;
    plan.validate(q.rows(), n)?;
    let k_bar = block_centroids(k, block_size);
    let rows_per_entry = plan.rows_per_entry(q.rows());

    let mut sel = Vec::new();
    let mut unsel = Vec::new();
    for t in 0..q.rows() {
        let mask = plan.mask(t / rows_per_entry);
        for j in 0..n {
            let s = scale * dot(q.row(t), k_bar.row(j));
            if mask[j] {
                sel.push(s);
            } else {
                unsel.push(s);
            }
        }
    }
    let lo = sel.iter().chain(&unsel).copied().fold(f64::INFINITY, f64::min);
    let hi = sel.iter().chain(&unsel).copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
    let count = |xs: &[f64]| {
        let mut c = vec![0usize; bins];
        for &x in xs {
            c[(((x - lo) / width) as usize).min(bins - 1)] += 1;
        }
        c
    };
    Ok(ScoreHistogram {
        edges,
        count_selected: count(&sel),
        count_unselected: count(&unsel),
        selected: summarize(&sel),
        unselected: summarize(&unsel),
    })
}

fn summarize(xs: &[f64]) -> ClassSummary {
    if xs.is_empty() {
        return ClassSummary { count: 0, mean: 0.0, skew: 0.0 };
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m3 = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
    let skew = if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 };
    ClassSummary {
        count: xs.len(),
        mean,
        skew,
    }
}
