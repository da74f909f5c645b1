//! Choosing which key blocks each query block computes exactly.
//!
//! Plain routing ranks blocks by the centroid score `scale * q_bar_i . k_bar_j`.
//! Covariance-aware routing adds `ln(M_j + eps)` so blocks whose first-order
//! statistics stray far from the global mean are kept exact. Only the ranking
//! matters, so no softmax is applied to the scores.

use serde::{Deserialize, Serialize};

use crate::error::{PisaError, Result};
use crate::mat::{dot, Mat};
use crate::stats::BlockStatistics;

pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Plain,
    CovarianceAware,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Plain => "plain",
            Strategy::CovarianceAware => "covariance_aware",
        }
    }
}

/// Whether routing scores use the block-mean query or every query row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    #[default]
    BlockMean,
    PerRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterConfig {
    pub strategy: Strategy,
    pub epsilon: f64,
    /// Always keep the query block's own key block exact.
    pub force_diagonal: bool,
    pub granularity: Granularity,
}

impl Default for RouterConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Plain,
            epsilon: DEFAULT_EPSILON,
            force_diagonal: false,
            granularity: Granularity::BlockMean,
        }
    }
}

/// Per query entry, the ascending list of key blocks computed exactly.
///
/// An entry covers `seq_len / selected.len()` consecutive query rows: a whole
/// query block for block-mean routing, a single row for per-row routing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionPlan {
    /// Key block count `N`.
    pub num_blocks: usize,
    pub k: usize,
    pub selected: Vec<Vec<usize>>,
    pub strategy: Strategy,
    pub epsilon: f64,
}

impl SelectionPlan {
    /// Every entry selects every block.
    pub fn full(num_entries: usize, num_blocks: usize) -> Self {
        Self {
            num_blocks,
            k: num_blocks,
            selected: vec![(0..num_blocks).collect(); num_entries],
            strategy: Strategy::Plain,
            epsilon: DEFAULT_EPSILON,
        }
    }

    /// The same selected set for every entry.
    pub fn uniform(num_entries: usize, num_blocks: usize, blocks: &[usize]) -> Self {
        let mut s = blocks.to_vec();
        s.sort_unstable();
        s.dedup();
        Self {
            num_blocks,
            k: s.len(),
            selected: vec![s; num_entries],
            strategy: Strategy::Plain,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn num_entries(&self) -> usize {
        self.selected.len()
    }

    /// Query rows covered by one entry.
    pub fn rows_per_entry(&self, seq_len: usize) -> usize {
        seq_len / self.selected.len().max(1)
    }

    /// Complement of entry `e`'s selection, ascending.
    pub fn unselected(&self, e: usize) -> Vec<usize> {
        let mask = self.mask(e);
        (0..self.num_blocks).filter(|&j| !mask[j]).collect()
    }

    pub fn mask(&self, e: usize) -> Vec<bool> {
        let mut m = vec![false; self.num_blocks];
        for &j in &self.selected[e] {
            m[j] = true;
        }
        m
    }

    pub fn realized_sparsity(&self) -> f64 {
        if self.num_blocks == 0 {
            return 0.0;
        }
        (self.num_blocks - self.k) as f64 / self.num_blocks as f64
    }

    /// Checks the plan against a query length and key block count.
    pub fn validate(&self, seq_len: usize, num_blocks: usize) -> Result<()> {
        if self.num_blocks != num_blocks {
            return Err(PisaError::InvalidPlan(format!(
                "plan has {} key blocks, input has {num_blocks}",
                self.num_blocks
            )));
        }
        let entries = self.selected.len();
        if entries == 0 || seq_len % entries != 0 {
            return Err(PisaError::InvalidPlan(format!(
                "{entries} plan entries do not tile {seq_len} query rows"
            )));
        }
        for (e, s) in self.selected.iter().enumerate() {
            if s.is_empty() {
                return Err(PisaError::EmptySelection { query_block: e });
            }
            if s.windows(2).any(|w| w[0] >= w[1]) || s.iter().any(|&j| j >= num_blocks) {
                return Err(PisaError::InvalidPlan(format!(
                    "entry {e} is not a strictly ascending list of blocks below {num_blocks}"
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plan serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| PisaError::InvalidPlan(e.to_string()))
    }
}

/// Number of exact blocks for sparsity `r`, and the sparsity actually realized.
pub fn sparsity_to_k(r: f64, num_blocks: usize) -> Result<(usize, f64)> {
    if !(0.0..1.0).contains(&r) {
        return Err(PisaError::InvalidSparsity(format!("sparsity must be in [0, 1), got {r}")));
    }
    if num_blocks == 0 {
        return Err(PisaError::InvalidDimension("no key blocks".into()));
    }
    let k = (((1.0 - r) * num_blocks as f64).round() as usize).clamp(1, num_blocks);
    Ok((k, (num_blocks - k) as f64 / num_blocks as f64))
}

/// Indices of the `k` largest scores, ties toward the lower index, returned ascending.
pub fn topk_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(PisaError::InvalidSparsity(format!("k = {k} must be in [1, {n}]")));
    }
    Ok(())
}

fn route(queries: &Mat, k_bar: &Mat, bias: Option<&[f64]>, k: usize, scale: f64, forced: Option<&dyn Fn(usize) -> usize>) -> Result<Vec<Vec<usize>>> {
    let n = k_bar.rows();
    check_k(k, n)?;
    if queries.cols() != k_bar.cols() {
        return Err(PisaError::InvalidDimension(format!(
            "query dim {} differs from centroid dim {}",
            queries.cols(),
            k_bar.cols()
        )));
    }
    let mut scores = vec![0.0; n];
    Ok((0..queries.rows())
        .map(|i| {
            let qi = queries.row(i);
            for (j, s) in scores.iter_mut().enumerate() {
                *s = scale * dot(qi, k_bar.row(j)) + bias.map_or(0.0, |b| b[j]);
            }
            match forced {
                Some(f) => {
                    let diag = f(i);
                    scores[diag] = f64::INFINITY;
                    topk_indices(&scores, k)
                }
                None => topk_indices(&scores, k),
            }
        })
        .collect())
}

/// Top-`k` blocks by `scale * q_bar_i . k_bar_j`.
pub fn select_topk_plain(q_bar: &Mat, k_bar: &Mat, k: usize, scale: f64) -> Result<SelectionPlan> {
    Ok(SelectionPlan {
        num_blocks: k_bar.rows(),
        k,
        selected: route(q_bar, k_bar, None, k, scale, None)?,
        strategy: Strategy::Plain,
        epsilon: DEFAULT_EPSILON,
    })
}

/// Top-`k` blocks by `scale * q_bar_i . k_bar_j + ln(M_j + epsilon)`.
pub fn select_topk_covariance(q_bar: &Mat, k_bar: &Mat, m: &[f64], epsilon: f64, k: usize, scale: f64) -> Result<SelectionPlan> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(PisaError::InvalidEpsilon(epsilon));
    }
    if m.len() != k_bar.rows() {
        return Err(PisaError::InvalidDimension(format!(
            "{} heterogeneity norms for {} blocks",
            m.len(),
            k_bar.rows()
        )));
    }
    let bias: Vec<f64> = m.iter().map(|&mj| (mj + epsilon).ln()).collect();
    Ok(SelectionPlan {
        num_blocks: k_bar.rows(),
        k,
        selected: route(q_bar, k_bar, Some(&bias), k, scale, None)?,
        strategy: Strategy::CovarianceAware,
        epsilon,
    })
}

/// Builds a plan from prepared statistics according to `cfg`.
///
/// Block-mean routing needs `stats.q_bar`; per-row routing scores the rows of `q`.
pub fn build_plan(q: &Mat, stats: &BlockStatistics, k: usize, scale: f64, cfg: &RouterConfig) -> Result<SelectionPlan> {
    if cfg.strategy == Strategy::CovarianceAware && !(cfg.epsilon > 0.0) {
        return Err(PisaError::InvalidEpsilon(cfg.epsilon));
    }
    let q_bar_owned;
    let (queries, rows_per_entry) = match cfg.granularity {
        Granularity::BlockMean => match &stats.q_bar {
            Some(qb) => (qb, stats.block_size),
            None => {
                q_bar_owned = crate::stats::query_block_means(q, stats.block_size)?;
                (&q_bar_owned, stats.block_size)
            }
        },
        Granularity::PerRow => (q, 1),
    };
    let bias: Option<Vec<f64>> = match cfg.strategy {
        Strategy::Plain => None,
        Strategy::CovarianceAware => {
            if !stats.has_global() {
                return Err(PisaError::InvalidDimension("covariance routing needs M_j".into()));
            }
            Some(stats.m.iter().map(|&mj| (mj + cfg.epsilon).ln()).collect())
        }
    };
    let b = stats.block_size;
    let n = stats.num_blocks;
    let diag = move |i: usize| ((i * rows_per_entry) / b).min(n - 1);
    let forced: Option<&dyn Fn(usize) -> usize> = if cfg.force_diagonal { Some(&diag) } else { None };
    Ok(SelectionPlan {
        num_blocks: n,
        k,
        selected: route(queries, &stats.k_bar, bias.as_deref(), k, scale, forced)?,
        strategy: cfg.strategy,
        epsilon: cfg.epsilon,
    })
}
