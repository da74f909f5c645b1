//! Prepare-phase statistics: block centroids, value sums, the per-block
//! first-order matrices `H_j`, their global mean, and the heterogeneity
//! norms `M_j = ||H_j - H_bar||_2`.
//!
//! Everything here is stored in f64 whatever the input precision.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{PisaError, Result};
use crate::mat::{check_divisible, Mat};

/// How `spectral_norm` evaluates the largest singular value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralMethod {
    /// Symmetric eigen-decomposition of `A^T A`.
    #[default]
    Exact,
    /// Power iteration on `A^T A` from the normalized all-ones vector.
    PowerIteration,
}

pub const POWER_TOL: f64 = 1e-8;
pub const POWER_MAX_ITERS: usize = 1000;

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct BlockStatistics {
    pub block_size: usize,
    /// Key/value block count `N = L / B`.
    pub num_blocks: usize,
    pub head_dim: usize,
    pub value_dim: usize,
    /// Block key centroids, `N x d`.
    pub k_bar: Mat,
    /// Block query means, `N_q x d` (filled by [`BlockStatistics::prepare`]).
    pub q_bar: Option<Mat>,
    /// Block value sums, `N x dv`.
    pub v_hat: Mat,
    /// `H_j`, stored back to back as `N` row-major `d x dv` matrices.
    pub h: Vec<f64>,
    /// Mean of all `H_j`, row-major `d x dv`; zero until the global pass runs.
    pub h_bar: Vec<f64>,
    /// `M_j`; empty until the global pass runs.
    pub m: Vec<f64>,
    pub m_max: f64,
    /// Mean of every key row.
    pub k_bar_global: Vec<f64>,
}

impl BlockStatistics {
    pub fn h_block(&self, j: usize) -> &[f64] {
        let sz = self.head_dim * self.value_dim;
        &self.h[j * sz..(j + 1) * sz]
    }

    pub fn has_global(&self) -> bool {
        self.m.len() == self.num_blocks
    }

    /// Mean of `H_j` over an arbitrary block subset (e.g. one query block's
    /// unselected set), as opposed to the all-block mean in `h_bar`.
    pub fn mean_h_over(&self, blocks: &[usize]) -> Vec<f64> {
        let sz = self.head_dim * self.value_dim;
        let mut out = vec![0.0; sz];
        if blocks.is_empty() {
            return out;
        }
        for &j in blocks {
            for (o, x) in out.iter_mut().zip(self.h_block(j)) {
                *o += x;
            }
        }
        let inv = 1.0 / blocks.len() as f64;
        out.iter_mut().for_each(|x| *x *= inv);
        out
    }

    /// The whole prepare phase: block statistics, global statistics and query means.
    pub fn prepare(q: &Mat, k: &Mat, v: &Mat, block_size: usize, method: SpectralMethod, deterministic: bool) -> Result<Self> {
        let partial = compute_block_stats(k, v, block_size)?;
        let mut stats = compute_global_stats(partial, method, deterministic)?;
        stats.q_bar = Some(query_block_means(q, block_size)?);
        Ok(stats)
    }
}

/// Per-block centroid `k_bar_j`, value sum `V_hat_j` and
/// `H_j = sum_n (k_{j,n} - k_bar_j)^T v_{j,n}`.
pub fn compute_block_stats(k: &Mat, v: &Mat, block_size: usize) -> Result<BlockStatistics> {
    if k.rows() != v.rows() {
        return Err(PisaError::InvalidDimension(format!(
            "K has {} rows, V has {}",
            k.rows(),
            v.rows()
        )));
    }
    check_divisible(k.rows(), block_size)?;
    let (d, dv) = (k.cols(), v.cols());
    let n = k.rows() / block_size;
    let b = block_size;

    let per_block: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut kb = vec![0.0; d];
            let mut vh = vec![0.0; dv];
            for r in j * b..(j + 1) * b {
                kb.iter_mut().zip(k.row(r)).for_each(|(a, x)| *a += x);
                vh.iter_mut().zip(v.row(r)).for_each(|(a, x)| *a += x);
            }
            kb.iter_mut().for_each(|x| *x /= b as f64);
            let mut h = vec![0.0; d * dv];
            let mut dev = vec![0.0; d];
            for r in j * b..(j + 1) * b {
                dev.iter_mut()
                    .zip(k.row(r))
                    .zip(&kb)
                    .for_each(|((e, x), m)| *e = x - m);
                let vr = v.row(r);
                for (a, &ea) in dev.iter().enumerate() {
                    crate::mat::axpy(ea, vr, &mut h[a * dv..(a + 1) * dv]);
                }
            }
            (kb, vh, h)
        })
        .collect();

    let mut k_bar = Vec::with_capacity(n * d);
    let mut v_hat = Vec::with_capacity(n * dv);
    let mut h = Vec::with_capacity(n * d * dv);
    for (kb, vh, hj) in per_block {
        k_bar.extend(kb);
        v_hat.extend(vh);
        h.extend(hj);
    }
    Ok(BlockStatistics {
        block_size,
        num_blocks: n,
        head_dim: d,
        value_dim: dv,
        k_bar: Mat::from_vec(n, d, k_bar)?,
        q_bar: None,
        v_hat: Mat::from_vec(n, dv, v_hat)?,
        h,
        h_bar: vec![0.0; d * dv],
        m: Vec::new(),
        m_max: 0.0,
        k_bar_global: vec![0.0; d],
    })
}

/// Adds `H_bar` (mean over all blocks), `M_j`, `M_max` and the global key centroid.
pub fn compute_global_stats(mut stats: BlockStatistics, method: SpectralMethod, deterministic: bool) -> Result<BlockStatistics> {
    let n = stats.num_blocks;
    let sz = stats.head_dim * stats.value_dim;
    if n == 0 || stats.h.len() != n * sz {
        return Err(PisaError::InvalidDimension("block statistics have no H matrices".into()));
    }
    let sum = if deterministic {
        let mut acc = vec![0.0; sz];
        for hj in stats.h.chunks_exact(sz) {
            acc.iter_mut().zip(hj).for_each(|(a, x)| *a += x);
        }
        acc
    } else {
        stats
            .h
            .par_chunks_exact(sz)
            .fold(
                || vec![0.0; sz],
                |mut acc, hj| {
                    acc.iter_mut().zip(hj).for_each(|(a, x)| *a += x);
                    acc
                },
            )
            .reduce(
                || vec![0.0; sz],
                |mut a, b| {
                    a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                    a
                },
            )
    };
    stats.h_bar = sum.into_iter().map(|x| x / n as f64).collect();

    let (d, dv) = (stats.head_dim, stats.value_dim);
    let h_bar = &stats.h_bar;
    stats.m = stats
        .h
        .par_chunks_exact(sz)
        .map(|hj| {
            let diff: Vec<f64> = hj.iter().zip(h_bar).map(|(a, b)| a - b).collect();
            spectral_norm_with(&diff, d, dv, method)
        })
        .collect();
    stats.m_max = stats.m.iter().copied().fold(0.0, f64::max);

    let mut kg = vec![0.0; d];
    for kb in stats.k_bar.iter_rows() {
        kg.iter_mut().zip(kb).for_each(|(a, x)| *a += x);
    }
    kg.iter_mut().for_each(|x| *x /= n as f64);
    stats.k_bar_global = kg;
    Ok(stats)
}

/// Block-wise mean of the query rows.
pub fn query_block_means(q: &Mat, block_size: usize) -> Result<Mat> {
    check_divisible(q.rows(), block_size)?;
    let (d, nq) = (q.cols(), q.rows() / block_size);
    let mut out = Mat::zeros(nq, d);
    for i in 0..nq {
        let row = out.row_mut(i);
        for r in i * block_size..(i + 1) * block_size {
            row.iter_mut().zip(q.row(r)).for_each(|(a, x)| *a += x);
        }
        row.iter_mut().for_each(|x| *x /= block_size as f64);
    }
    Ok(out)
}

/// Largest singular value of a square matrix.
pub fn spectral_norm(a: &Mat, method: SpectralMethod) -> f64 {
    spectral_norm_with(a.as_slice(), a.rows(), a.cols(), method)
}

/// Largest singular value of a row-major `rows x cols` matrix.
pub fn spectral_norm_with(a: &[f64], rows: usize, cols: usize, method: SpectralMethod) -> f64 {
    if a.iter().any(|x| !x.is_finite()) {
        return f64::INFINITY;
    }
    let gram = gram_matrix(a, rows, cols);
    let lambda = match method {
        SpectralMethod::Exact => top_eigenvalue_exact(&gram, cols),
        SpectralMethod::PowerIteration => {
            power_iteration(&gram, cols).unwrap_or_else(|| top_eigenvalue_exact(&gram, cols))
        }
    };
    lambda.max(0.0).sqrt()
}

/// `A^T A`, row-major `cols x cols`.
fn gram_matrix(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut g = vec![0.0; cols * cols];
    for r in 0..rows {
        let ar = &a[r * cols..(r + 1) * cols];
        for (i, &ai) in ar.iter().enumerate() {
            if ai != 0.0 {
                crate::mat::axpy(ai, ar, &mut g[i * cols..(i + 1) * cols]);
            }
        }
    }
    g
}

fn top_eigenvalue_exact(gram: &[f64], n: usize) -> f64 {
    let m = DMatrix::from_row_slice(n, n, gram);
    SymmetricEigen::new(m)
        .eigenvalues
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// Dominant eigenvalue of a PSD matrix, or `None` if it fails to converge.
fn power_iteration(gram: &[f64], n: usize) -> Option<f64> {
    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    let mut y = vec![0.0; n];
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        crate::mat::vec_mat(&x, gram, &mut y);
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Some(0.0);
        }
        if !norm.is_finite() {
            return None;
        }
        let converged = (norm - lambda).abs() <= POWER_TOL * norm;
        lambda = norm;
        x.iter_mut().zip(&y).for_each(|(xi, yi)| *xi = yi / norm);
        if converged {
            return Some(lambda);
        }
    }
    None
}
