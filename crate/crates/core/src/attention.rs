//! Exact attention: the dense oracle, block-streaming online softmax, and
//! masked block-sparse attention (selected blocks only, the rest dropped).

use num_traits::Float;
use rayon::prelude::*;

use crate::error::{PisaError, Result};
use crate::mat::{axpy, check_divisible, check_qkv, dot, Mat};
use crate::router::SelectionPlan;

/// Precision used by the streaming kernels. Oracles always accumulate in f64.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Accum {
    F32,
    #[default]
    F64,
}

/// Block-tiling and numeric settings shared by every attention path.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AttentionConfig {
    /// Rows per query/key block (`B`).
    pub block_size: usize,
    /// Centroids scanned per group in the approximate phase (`C`).
    pub group_size: usize,
    /// Score scale; `None` means `1 / sqrt(head_dim)`.
    pub scale: Option<f64>,
    pub accum: Accum,
    /// Fixed-order reductions everywhere, so results do not depend on thread count.
    pub deterministic: bool,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            block_size: 64,
            group_size: 8,
            scale: None,
            accum: Accum::F64,
            deterministic: true,
        }
    }
}

impl AttentionConfig {
    pub fn with_block(block_size: usize) -> Self {
        Self {
            block_size,
            ..Self::default()
        }
    }

    pub fn scale_for(&self, head_dim: usize) -> f64 {
        self.scale.unwrap_or_else(|| 1.0 / (head_dim as f64).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_size == 0 || self.group_size == 0 {
            return Err(PisaError::InvalidDimension(
                "block_size and group_size must be >= 1".into(),
            ));
        }
        if let Some(s) = self.scale {
            if !(s > 0.0) || !s.is_finite() {
                return Err(PisaError::InvalidDimension(format!("scale must be > 0, got {s}")));
            }
        }
        Ok(())
    }
}

/// Softmax attention with one max-subtraction per row, accumulated in f64.
pub fn dense_naive(q: &Mat, k: &Mat, v: &Mat, scale: f64) -> Result<Mat> {
    check_qkv(q, k, v)?;
    let (lq, d, dv) = (q.rows(), q.cols(), v.cols());
    let mut out = Mat::zeros(lq, dv);
    out.as_mut_slice()
        .par_chunks_mut(dv)
        .enumerate()
        .for_each(|(t, o)| {
            let qt = q.row(t);
            let scores: Vec<f64> = k.iter_rows().map(|kr| scale * dot(qt, kr)).collect();
            let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for (s, vr) in scores.iter().zip(v.iter_rows()) {
                let p = (s - m).exp();
                denom += p;
                axpy(p, vr, o);
            }
            o.iter_mut().for_each(|x| *x /= denom);
        });
    debug_assert_eq!(d, k.cols());
    Ok(out)
}

/// Flash-style attention: key blocks are streamed with a running max and
/// denominator per row, rescaling the accumulator whenever the max grows.
pub fn dense_online(q: &Mat, k: &Mat, v: &Mat, cfg: &AttentionConfig) -> Result<Mat> {
    check_qkv(q, k, v)?;
    cfg.validate()?;
    check_divisible(k.rows(), cfg.block_size)?;
    check_divisible(q.rows(), cfg.block_size)?;
    let n = k.rows() / cfg.block_size;
    let plan = SelectionPlan::full(q.rows() / cfg.block_size, n);
    match cfg.accum {
        Accum::F64 => exact_attention::<f64>(q, k, v, &plan, cfg),
        Accum::F32 => exact_attention::<f32>(q, k, v, &plan, cfg),
    }
}

/// Block-sparse attention: each query row attends only to the key rows of
/// its selected blocks, as if every other score were masked to `-inf`.
pub fn sparse_masked(q: &Mat, k: &Mat, v: &Mat, plan: &SelectionPlan, cfg: &AttentionConfig) -> Result<Mat> {
    check_qkv(q, k, v)?;
    cfg.validate()?;
    check_divisible(k.rows(), cfg.block_size)?;
    plan.validate(q.rows(), k.rows() / cfg.block_size)?;
    match cfg.accum {
        Accum::F64 => exact_attention::<f64>(q, k, v, plan, cfg),
        Accum::F32 => exact_attention::<f32>(q, k, v, plan, cfg),
    }
}

fn exact_attention<T: Float + Send + Sync>(
    q: &Mat,
    k: &Mat,
    v: &Mat,
    plan: &SelectionPlan,
    cfg: &AttentionConfig,
) -> Result<Mat> {
    let (d, dv, b) = (q.cols(), v.cols(), cfg.block_size);
    let scale = T::from(cfg.scale_for(d)).expect("finite scale");
    let qt: Vec<T> = q.to_precision();
    let kt: Vec<T> = k.to_precision();
    let vt: Vec<T> = v.to_precision();
    let rows = plan.rows_per_entry(q.rows());

    let mut out = vec![T::zero(); q.rows() * dv];
    out.par_chunks_mut(rows * dv)
        .enumerate()
        .for_each(|(e, o)| {
            let mut st = OnlineState::new(rows, dv);
            let q_rows = &qt[e * rows * d..(e + 1) * rows * d];
            let mut scratch = vec![T::zero(); b];
            for &j in &plan.selected[e] {
                st.absorb_exact(
                    q_rows,
                    &kt[j * b * d..(j + 1) * b * d],
                    &vt[j * b * dv..(j + 1) * b * dv],
                    scale,
                    &mut scratch,
                );
            }
            st.finish_into(o);
        });
    let out: Vec<f64> = out.iter().map(|x| x.to_f64().expect("float")).collect();
    check_output(&out, dv)?;
    Mat::from_vec(q.rows(), dv, out)
}

pub(crate) fn check_output(out: &[f64], cols: usize) -> Result<()> {
    match out.iter().position(|x| !x.is_finite()) {
        Some(idx) => Err(PisaError::NumericalOverflow { row: idx / cols.max(1) }),
        None => Ok(()),
    }
}

/// Per-row running max, shifted denominator and shifted numerator for a
/// group of query rows sharing one selection.
pub(crate) struct OnlineState<T> {
    pub rows: usize,
    pub dv: usize,
    pub m: Vec<T>,
    pub ell: Vec<T>,
    pub acc: Vec<T>,
}

impl<T: Float> OnlineState<T> {
    pub fn new(rows: usize, dv: usize) -> Self {
        Self {
            rows,
            dv,
            m: vec![T::neg_infinity(); rows],
            ell: vec![T::zero(); rows],
            acc: vec![T::zero(); rows * dv],
        }
    }

    /// Moves row `r` to the new max `m_new` and returns the rescale factor
    /// applied to everything accumulated so far.
    #[inline]
    pub fn rebase(&mut self, r: usize, m_new: T) -> T {
        let corr = (self.m[r] - m_new).exp();
        self.m[r] = m_new;
        self.ell[r] = self.ell[r] * corr;
        self.acc[r * self.dv..(r + 1) * self.dv]
            .iter_mut()
            .for_each(|a| *a = *a * corr);
        corr
    }

    /// Folds one exact key/value block into every row of the group.
    pub fn absorb_exact(&mut self, q_rows: &[T], k_blk: &[T], v_blk: &[T], scale: T, scores: &mut [T]) {
        let d = q_rows.len() / self.rows;
        let dv = self.dv;
        for r in 0..self.rows {
            let qr = &q_rows[r * d..(r + 1) * d];
            let mut bm = T::neg_infinity();
            for (s, kr) in scores.iter_mut().zip(k_blk.chunks_exact(d)) {
                *s = scale * dot(qr, kr);
                bm = bm.max(*s);
            }
            if bm > self.m[r] {
                self.rebase(r, bm);
            }
            let m = self.m[r];
            let acc = &mut self.acc[r * dv..(r + 1) * dv];
            let mut ell = self.ell[r];
            for (s, vr) in scores.iter().zip(v_blk.chunks_exact(dv)) {
                let p = (*s - m).exp();
                ell = ell + p;
                axpy(p, vr, acc);
            }
            self.ell[r] = ell;
        }
    }

    /// Writes `acc / ell` for every row.
    pub fn finish_into(&self, out: &mut [T]) {
        for r in 0..self.rows {
            let l = self.ell[r];
            for (o, a) in out[r * self.dv..(r + 1) * self.dv]
                .iter_mut()
                .zip(&self.acc[r * self.dv..(r + 1) * self.dv])
            {
                *o = *a / l;
            }
        }
    }
}
