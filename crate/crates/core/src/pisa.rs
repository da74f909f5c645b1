//! Piecewise sparse attention.
//!
//! For a query row `t` in query block `i`, key blocks are split into the
//! selected set `S_i` (computed exactly) and its complement `U_i`. Each block
//! `j` in `U_i` is replaced by a Taylor expansion of `exp(scale * q_t . k)`
//! around its centroid `k_bar_j`, with `alpha_{t,j} = exp(scale * q_t . k_bar_j)`:
//!
//! ```text
//! D_t = sum_{j in S} sum_n exp(scale q_t.k_{j,n}) + sum_{j in U} B * alpha_{t,j}
//! N_t = sum_{j in S} sum_n exp(scale q_t.k_{j,n}) v_{j,n}
//!     + sum_{j in U} alpha_{t,j} V_hat_j                      (zeroth order)
//!     + first-order term (depends on the variant)
//! o_t = N_t / D_t
//! ```
//!
//! The first-order term of the denominator vanishes identically because the
//! deviations `k_{j,n} - k_bar_j` sum to zero within each block.
//!
//! Two implementations are provided: [`pisa_reference`], a two-pass evaluation
//! with one global max per row, and [`pisa_streaming`], a fused four-phase
//! kernel (exact blocks, masked centroid scan in groups of `C`, global
//! first-order injection, normalization) built on the online softmax.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use num_traits::Float;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{check_output, AttentionConfig, Accum, OnlineState};
use crate::error::{PisaError, Result};
use crate::mat::{axpy, check_divisible, check_qkv, dot, vec_mat, Mat};
use crate::router::{build_plan, sparsity_to_k, RouterConfig, SelectionPlan};
use crate::stats::{BlockStatistics, SpectralMethod};
use crate::tensor_io::TensorBundle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PisaVariant {
    /// Unselected blocks are dropped (plain block-sparse attention).
    SparseOnly,
    /// Exact term plus block-wise zeroth-order tail.
    Zeroth,
    /// Zeroth plus the exact block-wise first-order term `sum_U alpha_j (scale q) H_j`.
    BlockFirst,
    /// Zeroth plus the shared correction `(sum_U alpha_j) (scale q) H_bar`.
    Hybrid,
    /// Like Hybrid but with slope `|U| exp(scale q . k_bar_global)`; a probe
    /// showing why a single global centroid underestimates the slope.
    GlobalCentroid,
}

impl PisaVariant {
    pub const ALL: [PisaVariant; 5] = [
        PisaVariant::SparseOnly,
        PisaVariant::Zeroth,
        PisaVariant::BlockFirst,
        PisaVariant::Hybrid,
        PisaVariant::GlobalCentroid,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PisaVariant::SparseOnly => "sparse_only",
            PisaVariant::Zeroth => "zeroth",
            PisaVariant::BlockFirst => "block_first",
            PisaVariant::Hybrid => "hybrid",
            PisaVariant::GlobalCentroid => "global_centroid",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s)
    }
}

impl std::fmt::Display for PisaVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which implementation evaluates the Hybrid variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecPath {
    #[default]
    Reference,
    /// Fused kernel; only Hybrid has one, other variants use the reference path.
    Streaming,
}

/// Constant applied to `H_bar` in the global first-order correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase3Scaling {
    /// `(sum_U alpha) (scale q) H_bar` with `H_bar` the mean of all `H_j`.
    #[default]
    MeanH,
    /// `ell_tail (scale q) (sum_j H_j) / L`, i.e. the mean form divided by `B`.
    SumOverLength,
}

/// Weight of a centroid exponential in the denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CentroidWeight {
    /// `B * alpha`: one centroid stands for `B` key rows.
    #[default]
    BlockSize,
    /// `alpha` alone. Wrong; kept so verification can show it is caught.
    Unit,
}

/// Diagnostic knobs for the piecewise paths. Defaults are the correct math.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PisaOptions {
    pub path: ExecPath,
    pub phase3: Phase3Scaling,
    pub centroid_weight: CentroidWeight,
    pub spectral: SpectralMethod,
}

/// Attention output plus the per-row quantities needed for bound checks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PisaOutput {
    pub o: Mat,
    /// Denominator `D_t`, un-shifted.
    pub denom: Vec<f64>,
    /// `sum_U B * alpha_{t,j}`, the tail's share of `D_t`.
    pub tail_mass: Vec<f64>,
    /// `sum_U alpha_{t,j}`.
    pub ell_tail: Vec<f64>,
    pub running_max_used: bool,
}

fn check_inputs(q: &Mat, k: &Mat, v: &Mat, plan: &SelectionPlan, stats: &BlockStatistics, cfg: &AttentionConfig) -> Result<()> {
    check_qkv(q, k, v)?;
    cfg.validate()?;
    check_divisible(k.rows(), cfg.block_size)?;
    check_divisible(q.rows(), cfg.block_size)?;
    if stats.block_size != cfg.block_size || stats.num_blocks != k.rows() / cfg.block_size {
        return Err(PisaError::InvalidDimension(format!(
            "statistics built for B={} with {} blocks, config has B={} over {} rows",
            stats.block_size,
            stats.num_blocks,
            cfg.block_size,
            k.rows()
        )));
    }
    if stats.head_dim != k.cols() || stats.value_dim != v.cols() {
        return Err(PisaError::InvalidDimension("statistics do not match K/V widths".into()));
    }
    plan.validate(q.rows(), stats.num_blocks)
}

fn centroid_weight(cfg: &AttentionConfig, opts: &PisaOptions) -> f64 {
    match opts.centroid_weight {
        CentroidWeight::BlockSize => cfg.block_size as f64,
        CentroidWeight::Unit => 1.0,
    }
}

fn phase3_factor(cfg: &AttentionConfig, opts: &PisaOptions) -> f64 {
    match opts.phase3 {
        Phase3Scaling::MeanH => 1.0,
        Phase3Scaling::SumOverLength => 1.0 / cfg.block_size as f64,
    }
}

/// Two-pass evaluation of any variant, in f64, with one max per row taken
/// over every exponent argument (exact scores and centroid scores alike).
pub fn pisa_reference(
    q: &Mat,
    k: &Mat,
    v: &Mat,
    plan: &SelectionPlan,
    stats: &BlockStatistics,
    variant: PisaVariant,
    cfg: &AttentionConfig,
    opts: &PisaOptions,
) -> Result<PisaOutput> {
    check_inputs(q, k, v, plan, stats, cfg)?;
    let needs_h_bar = matches!(variant, PisaVariant::Hybrid | PisaVariant::GlobalCentroid);
    if needs_h_bar && !stats.has_global() {
        return Err(PisaError::InvalidDimension("variant needs global statistics".into()));
    }
    let (lq, d, dv, b) = (q.rows(), q.cols(), v.cols(), cfg.block_size);
    let scale = cfg.scale_for(d);
    let rows_per_entry = plan.rows_per_entry(lq);
    let w = centroid_weight(cfg, opts);
    let p3 = phase3_factor(cfg, opts);

    let per_row: Vec<(Vec<f64>, f64, f64, f64)> = (0..lq)
        .into_par_iter()
        .map(|t| {
            let e = t / rows_per_entry;
            let sel = &plan.selected[e];
            let qt = q.row(t);
            let unsel = if variant == PisaVariant::SparseOnly {
                Vec::new()
            } else {
                plan.unselected(e)
            };

            let exact: Vec<f64> = sel
                .iter()
                .flat_map(|&j| (j * b..(j + 1) * b).map(move |r| scale * dot(qt, k.row(r))))
                .collect();
            let cent: Vec<f64> = unsel.iter().map(|&j| scale * dot(qt, stats.k_bar.row(j))).collect();
            let global_arg = (variant == PisaVariant::GlobalCentroid && !unsel.is_empty())
                .then(|| scale * dot(qt, &stats.k_bar_global));
            let m = exact
                .iter()
                .chain(&cent)
                .chain(global_arg.iter())
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);

            let mut num = vec![0.0; dv];
            let mut den = 0.0;
            let rows = sel.iter().flat_map(|&j| j * b..(j + 1) * b);
            for (s, r) in exact.iter().zip(rows) {
                let p = (s - m).exp();
                den += p;
                axpy(p, v.row(r), &mut num);
            }
            let alphas: Vec<f64> = cent.iter().map(|s| (s - m).exp()).collect();
            let alpha_sum: f64 = alphas.iter().sum();
            den += w * alpha_sum;
            for (&a, &j) in alphas.iter().zip(&unsel) {
                axpy(a, stats.v_hat.row(j), &mut num);
            }

            let sq: Vec<f64> = qt.iter().map(|x| scale * x).collect();
            let mut tmp = vec![0.0; dv];
            match variant {
                PisaVariant::SparseOnly | PisaVariant::Zeroth => {}
                PisaVariant::BlockFirst => {
                    for (&a, &j) in alphas.iter().zip(&unsel) {
                        vec_mat_rect(&sq, stats.h_block(j), &mut tmp);
                        axpy(a, &tmp, &mut num);
                    }
                }
                PisaVariant::Hybrid => {
                    vec_mat_rect(&sq, &stats.h_bar, &mut tmp);
                    axpy(alpha_sum * p3, &tmp, &mut num);
                }
                PisaVariant::GlobalCentroid => {
                    if let Some(g) = global_arg {
                        let beta = (g - m).exp();
                        vec_mat_rect(&sq, &stats.h_bar, &mut tmp);
                        axpy(beta * unsel.len() as f64 * p3, &tmp, &mut num);
                    }
                }
            }
            num.iter_mut().for_each(|x| *x /= den);
            let unshift = m.exp();
            (num, den * unshift, w * alpha_sum * unshift, alpha_sum * unshift)
        })
        .collect();

    assemble(per_row, lq, dv, false)
}

fn assemble(per_row: Vec<(Vec<f64>, f64, f64, f64)>, lq: usize, dv: usize, running_max_used: bool) -> Result<PisaOutput> {
    let mut o = Vec::with_capacity(lq * dv);
    let mut denom = Vec::with_capacity(lq);
    let mut tail_mass = Vec::with_capacity(lq);
    let mut ell_tail = Vec::with_capacity(lq);
    for (row, dt, tm, et) in per_row {
        o.extend(row);
        denom.push(dt);
        tail_mass.push(tm);
        ell_tail.push(et);
    }
    check_output(&o, dv)?;
    Ok(PisaOutput {
        o: Mat::from_vec(lq, dv, o)?,
        denom,
        tail_mass,
        ell_tail,
        running_max_used,
    })
}

/// `out = x . m` for a row-major `x.len() x out.len()` matrix.
fn vec_mat_rect(x: &[f64], m: &[f64], out: &mut [f64]) {
    if x.len() == out.len() {
        vec_mat(x, m, out);
        return;
    }
    let dv = out.len();
    out.fill(0.0);
    for (r, &xr) in x.iter().enumerate() {
        axpy(xr, &m[r * dv..(r + 1) * dv], out);
    }
}

/// Accumulated wall time of the streaming phases, summed over workers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PhaseTimes {
    pub exact: Duration,
    pub approx: Duration,
    pub normalize: Duration,
}

/// The fused Hybrid kernel.
///
/// Per query block: Phase 1 folds the selected key blocks into an online
/// softmax; Phase 2 scans centroids in groups of `C` with the selected columns
/// masked to `-inf`, adding `B * p` to the denominator, `p` to the tail sum and
/// `p * V_hat_j` to the numerator; Phase 3 adds `ell_tail * (scale q) H_bar`
/// in the same shifted domain and divides by the denominator.
pub fn pisa_streaming(q: &Mat, k: &Mat, v: &Mat, plan: &SelectionPlan, stats: &BlockStatistics, cfg: &AttentionConfig, opts: &PisaOptions) -> Result<PisaOutput> {
    pisa_streaming_timed(q, k, v, plan, stats, cfg, opts).map(|(o, _)| o)
}

pub fn pisa_streaming_timed(
    q: &Mat,
    k: &Mat,
    v: &Mat,
    plan: &SelectionPlan,
    stats: &BlockStatistics,
    cfg: &AttentionConfig,
    opts: &PisaOptions,
) -> Result<(PisaOutput, PhaseTimes)> {
    check_inputs(q, k, v, plan, stats, cfg)?;
    if !stats.has_global() {
        return Err(PisaError::InvalidDimension("streaming path needs global statistics".into()));
    }
    match cfg.accum {
        Accum::F64 => streaming::<f64>(q, k, v, plan, stats, cfg, opts),
        Accum::F32 => streaming::<f32>(q, k, v, plan, stats, cfg, opts),
    }
}

fn streaming<T: Float + Send + Sync>(
    q: &Mat,
    k: &Mat,
    v: &Mat,
    plan: &SelectionPlan,
    stats: &BlockStatistics,
    cfg: &AttentionConfig,
    opts: &PisaOptions,
) -> Result<(PisaOutput, PhaseTimes)> {
    let (lq, d, dv, b) = (q.rows(), q.cols(), v.cols(), cfg.block_size);
    let n = stats.num_blocks;
    let c = cfg.group_size.min(n).max(1);
    let cast = |x: f64| T::from(x).expect("finite");
    let scale = cast(cfg.scale_for(d));
    let w = cast(centroid_weight(cfg, opts));
    let p3 = cast(phase3_factor(cfg, opts));

    let qt: Vec<T> = q.to_precision();
    let kt: Vec<T> = k.to_precision();
    let vt: Vec<T> = v.to_precision();
    let k_bar: Vec<T> = stats.k_bar.to_precision();
    let v_hat: Vec<T> = stats.v_hat.to_precision();
    let h_bar: Vec<T> = stats.h_bar.iter().map(|&x| cast(x)).collect();
    let rows = plan.rows_per_entry(lq);

    let ns = [AtomicU64::new(0), AtomicU64::new(0), AtomicU64::new(0)];
    let per_entry: Vec<Vec<(Vec<f64>, f64, f64, f64)>> = (0..plan.num_entries())
        .into_par_iter()
        .map(|e| {
            let t0 = Instant::now();
            let q_rows = &qt[e * rows * d..(e + 1) * rows * d];
            let mut st = OnlineState::<T>::new(rows, dv);
            let mut scratch = vec![T::zero(); b.max(c)];
            for &j in &plan.selected[e] {
                st.absorb_exact(q_rows, &kt[j * b * d..(j + 1) * b * d], &vt[j * b * dv..(j + 1) * b * dv], scale, &mut scratch);
            }
            let t1 = Instant::now();

            let mask = plan.mask(e);
            let mut ell_tail = vec![T::zero(); rows];
            for g0 in (0..n).step_by(c) {
                let g1 = (g0 + c).min(n);
                let scores = &mut scratch[..g1 - g0];
                for r in 0..rows {
                    let qr = &q_rows[r * d..(r + 1) * d];
                    let mut gm = T::neg_infinity();
                    for (s, j) in scores.iter_mut().zip(g0..g1) {
                        *s = if mask[j] {
                            T::neg_infinity()
                        } else {
                            scale * dot(qr, &k_bar[j * d..(j + 1) * d])
                        };
                        gm = gm.max(*s);
                    }
                    if gm == T::neg_infinity() {
                        continue;
                    }
                    if gm > st.m[r] {
                        let corr = st.rebase(r, gm);
                        ell_tail[r] = ell_tail[r] * corr;
                    }
                    let m = st.m[r];
                    let mut psum = T::zero();
                    for (s, j) in scores.iter().zip(g0..g1) {
                        if mask[j] {
                            continue;
                        }
                        let p = (*s - m).exp();
                        psum = psum + p;
                        axpy(p, &v_hat[j * dv..(j + 1) * dv], &mut st.acc[r * dv..(r + 1) * dv]);
                    }
                    st.ell[r] = st.ell[r] + w * psum;
                    ell_tail[r] = ell_tail[r] + psum;
                }
            }
            let t2 = Instant::now();

            let mut corr = vec![T::zero(); dv];
            let mut sq = vec![T::zero(); d];
            let mut out = Vec::with_capacity(rows);
            for r in 0..rows {
                let qr = &q_rows[r * d..(r + 1) * d];
                sq.iter_mut().zip(qr).for_each(|(s, x)| *s = scale * *x);
                corr.fill(T::zero());
                for (a, &sa) in sq.iter().enumerate() {
                    axpy(sa, &h_bar[a * dv..(a + 1) * dv], &mut corr);
                }
                let acc = &mut st.acc[r * dv..(r + 1) * dv];
                axpy(ell_tail[r] * p3, &corr, acc);
                let l = st.ell[r];
                let o: Vec<f64> = acc.iter().map(|x| (*x / l).to_f64().expect("float")).collect();
                let unshift = st.m[r].to_f64().expect("float").exp();
                let l64 = l.to_f64().expect("float");
                let et = ell_tail[r].to_f64().expect("float");
                let w64 = w.to_f64().expect("float");
                out.push((o, l64 * unshift, w64 * et * unshift, et * unshift));
            }
            let t3 = Instant::now();
            ns[0].fetch_add((t1 - t0).as_nanos() as u64, Ordering::Relaxed);
            ns[1].fetch_add((t2 - t1).as_nanos() as u64, Ordering::Relaxed);
            ns[2].fetch_add((t3 - t2).as_nanos() as u64, Ordering::Relaxed);
            out
        })
        .collect();

    let times = PhaseTimes {
        exact: Duration::from_nanos(ns[0].load(Ordering::Relaxed)),
        approx: Duration::from_nanos(ns[1].load(Ordering::Relaxed)),
        normalize: Duration::from_nanos(ns[2].load(Ordering::Relaxed)),
    };
    let out = assemble(per_entry.into_iter().flatten().collect(), lq, dv, true)?;
    Ok((out, times))
}

/// Per-head result of [`pisa_multihead`].
#[derive(Debug, Clone)]
pub struct HeadRun {
    pub output: PisaOutput,
    pub plan: SelectionPlan,
    pub prepare: Duration,
    pub select: Duration,
    pub attend: Duration,
    /// Phase breakdown when the streaming path ran.
    pub phases: Option<PhaseTimes>,
}

#[derive(Debug, Clone)]
pub struct MultiheadRun {
    pub heads: Vec<HeadRun>,
    pub k: usize,
    pub realized_sparsity: f64,
}

/// Statistics, routing and one piecewise pass for every head of a bundle.
pub fn pisa_multihead(
    bundle: &TensorBundle,
    sparsity: f64,
    router: &RouterConfig,
    variant: PisaVariant,
    cfg: &AttentionConfig,
    opts: &PisaOptions,
) -> Result<MultiheadRun> {
    cfg.validate()?;
    check_divisible(bundle.seq_len(), cfg.block_size)?;
    let n = bundle.seq_len() / cfg.block_size;
    let (k, realized) = sparsity_to_k(sparsity, n)?;
    let heads = (0..bundle.num_heads())
        .into_par_iter()
        .map(|h| run_head(bundle, h, k, router, variant, cfg, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(MultiheadRun {
        heads,
        k,
        realized_sparsity: realized,
    })
}

fn run_head(
    bundle: &TensorBundle,
    h: usize,
    k: usize,
    router: &RouterConfig,
    variant: PisaVariant,
    cfg: &AttentionConfig,
    opts: &PisaOptions,
) -> Result<HeadRun> {
    let head = bundle.head(h);
    let t0 = Instant::now();
    let stats = BlockStatistics::prepare(&head.q, &head.k, &head.v, cfg.block_size, opts.spectral, cfg.deterministic)?;
    let t1 = Instant::now();
    let scale = cfg.scale_for(bundle.head_dim());
    let plan = build_plan(&head.q, &stats, k, scale, router)?;
    let t2 = Instant::now();
    let (output, phases) = if variant == PisaVariant::Hybrid && opts.path == ExecPath::Streaming {
        let (o, p) = pisa_streaming_timed(&head.q, &head.k, &head.v, &plan, &stats, cfg, opts)?;
        (o, Some(p))
    } else {
        (pisa_reference(&head.q, &head.k, &head.v, &plan, &stats, variant, cfg, opts)?, None)
    };
    let t3 = Instant::now();
    Ok(HeadRun {
        output,
        plan,
        prepare: t1 - t0,
        select: t2 - t1,
        attend: t3 - t2,
        phases,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::dense_naive;
    use crate::mat::rel_linf;
    use crate::tensor_io::gen_gaussian;

    fn setup(seed: u64, l: usize, d: usize, b: usize) -> (Mat, Mat, Mat, BlockStatistics, AttentionConfig) {
        let h = gen_gaussian(seed, 1, l, d, 1.0).unwrap().head(0);
        let stats = BlockStatistics::prepare(&h.q, &h.k, &h.v, b, SpectralMethod::Exact, true).unwrap();
        (h.q, h.k, h.v, stats, AttentionConfig::with_block(b))
    }

    #[test]
    fn full_plan_equals_dense_for_every_variant() {
        let (q, k, v, stats, cfg) = setup(0, 64, 8, 16);
        let plan = SelectionPlan::full(4, 4);
        let dense = dense_naive(&q, &k, &v, cfg.scale_for(8)).unwrap();
        for variant in PisaVariant::ALL {
            let out = pisa_reference(&q, &k, &v, &plan, &stats, variant, &cfg, &PisaOptions::default()).unwrap();
            assert!(rel_linf(out.o.as_slice(), dense.as_slice()) < 1e-10, "{variant}");
            assert!(out.tail_mass.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn sparse_only_has_no_tail() {
        let (q, k, v, stats, cfg) = setup(1, 64, 8, 16);
        let plan = SelectionPlan::uniform(4, 4, &[1]);
        let out = pisa_reference(&q, &k, &v, &plan, &stats, PisaVariant::SparseOnly, &cfg, &PisaOptions::default()).unwrap();
        assert!(out.tail_mass.iter().all(|&x| x == 0.0));
        assert!(out.denom.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn streaming_matches_reference() {
        let (q, k, v, stats, mut cfg) = setup(2, 128, 8, 16);
        let plan = crate::router::select_topk_plain(stats.q_bar.as_ref().unwrap(), &stats.k_bar, 2, cfg.scale_for(8)).unwrap();
        let reference = pisa_reference(&q, &k, &v, &plan, &stats, PisaVariant::Hybrid, &cfg, &PisaOptions::default()).unwrap();
        for c in [1, 3, 8] {
            cfg.group_size = c;
            let s = pisa_streaming(&q, &k, &v, &plan, &stats, &cfg, &PisaOptions::default()).unwrap();
            assert!(rel_linf(s.o.as_slice(), reference.o.as_slice()) < 1e-12);
            assert!(rel_linf(&s.denom, &reference.denom) < 1e-12);
            assert!(rel_linf(&s.ell_tail, &reference.ell_tail) < 1e-12);
            assert!(s.running_max_used);
        }
    }

    #[test]
    fn empty_selection_is_rejected() {
        let (q, k, v, stats, cfg) = setup(3, 32, 4, 8);
        let mut plan = SelectionPlan::full(4, 4);
        plan.selected[2].clear();
        let err = pisa_reference(&q, &k, &v, &plan, &stats, PisaVariant::Hybrid, &cfg, &PisaOptions::default()).unwrap_err();
        assert!(matches!(err, PisaError::EmptySelection { query_block: 2 }));
    }

    #[test]
    fn variant_names_round_trip() {
        for v in PisaVariant::ALL {
            assert_eq!(PisaVariant::parse(v.as_str()), Some(v));
        }
    }
}
