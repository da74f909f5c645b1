//! The invariant suite behind `pisa verify`. Every check generates its own
//! data from consecutive seeds and is deterministic.

use super::{VerifyArgs, EXIT_FAILURE, EXIT_OK, EXIT_USAGE};
use crate::analysis::{denominator_first_order_shift, jensen_check, theorem1_check};
use crate::attention::{dense_naive, dense_online, Accum, AttentionConfig};
use crate::error::Result;
use crate::mat::{rel_linf, Mat};
use crate::pisa::{pisa_reference, pisa_streaming, CentroidWeight, PisaOptions, PisaVariant};
use crate::router::{build_plan, select_topk_covariance, sparsity_to_k, topk_indices, RouterConfig, SelectionPlan};
use crate::stats::{BlockStatistics, SpectralMethod};
use crate::tensor_io::{gen_clustered, gen_gaussian, qk_normalize, NormalStream};

/// Check names with their default seed counts, in run order.
pub const CHECKS: [(&str, usize); 9] = [
    ("oracle", 50),
    ("full_coverage", 20),
    ("constant_key", 20),
    ("cancellation", 20),
    ("theorem1", 100),
    ("jensen", 100),
    ("streaming", 50),
    ("router", 20),
    ("mutation", 5),
];

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Runs one named check over `seeds` consecutive seeds starting at `first_seed`.
/// Returns `None` for an unknown name.
pub fn run_check(name: &str, first_seed: u64, seeds: Option<usize>) -> Option<Result<CheckResult>> {
    let &(name, default) = CHECKS.iter().find(|(n, _)| *n == name)?;
    let seeds: Vec<u64> = (first_seed..first_seed + seeds.unwrap_or(default) as u64).collect();
    let out = match name {
        "oracle" => oracle(&seeds),
        "full_coverage" => full_coverage(&seeds),
        "constant_key" => constant_key(&seeds, CentroidWeight::BlockSize).map(|e| (e <= 1e-6, format!("max rel Linf {e:.3e} (tol 1e-6)"))),
        "cancellation" => cancellation(&seeds),
        "theorem1" => theorem1(&seeds),
        "jensen" => jensen(&seeds),
        "streaming" => streaming(&seeds),
        "router" => router(&seeds),
        "mutation" => constant_key(&seeds, CentroidWeight::Unit).map(|e| {
            (
                e > 1e-6,
                format!("denominator without the block-size factor: constant-key error {e:.3e} (must exceed 1e-6)"),
            )
        }),
        _ => unreachable!("name comes from CHECKS"),
    };
    Some(out.map(|(passed, detail)| CheckResult { name, passed, detail }))
}

type Outcome = Result<(bool, String)>;

fn head(seed: u64, l: usize, d: usize) -> Result<(Mat, Mat, Mat)> {
    let h = gen_gaussian(seed, 1, l, d, 1.0)?.head(0);
    Ok((h.q, h.k, h.v))
}

fn oracle(seeds: &[u64]) -> Outcome {
    let (mut e64, mut e32) = (0.0f64, 0.0f64);
    for &s in seeds {
        for l in [64, 256, 1024] {
            let (q, k, v) = head(s, l, 32)?;
            let reference = dense_naive(&q, &k, &v, 1.0 / 32f64.sqrt())?;
            for accum in [Accum::F64, Accum::F32] {
                let cfg = AttentionConfig {
                    accum,
                    ..AttentionConfig::with_block(64)
                };
                let e = rel_linf(dense_online(&q, &k, &v, &cfg)?.as_slice(), reference.as_slice());
                match accum {
                    Accum::F64 => e64 = e64.max(e),
                    Accum::F32 => e32 = e32.max(e),
                }
            }
        }
    }
    Ok((
        e64 <= 1e-12 && e32 <= 1e-5,
        format!("max rel Linf f64 {e64:.3e} (tol 1e-12), f32 {e32:.3e} (tol 1e-5)"),
    ))
}

fn full_coverage(seeds: &[u64]) -> Outcome {
    let mut worst = 0.0f64;
    for &s in seeds {
        let (q, k, v) = head(s, 256, 16)?;
        let cfg = AttentionConfig::with_block(16);
        let stats = BlockStatistics::prepare(&q, &k, &v, 16, SpectralMethod::Exact, true)?;
        let dense = dense_naive(&q, &k, &v, cfg.scale_for(16))?;
        let plan = SelectionPlan::full(16, 16);
        for variant in PisaVariant::ALL {
            let out = pisa_reference(&q, &k, &v, &plan, &stats, variant, &cfg, &PisaOptions::default())?;
            worst = worst.max(rel_linf(out.o.as_slice(), dense.as_slice()));
        }
    }
    Ok((worst <= 1e-10, format!("max rel Linf {worst:.3e} over all variants (tol 1e-10)")))
}

/// Two blocks are computed exactly for every query block; they have varied
/// keys but constant values. Every other block has a single repeated key.
/// Then every `H_j` is zero and the piecewise output is exact.
pub fn constant_key_instance(seed: u64, l: usize, d: usize, b: usize) -> Result<(Mat, Mat, Mat, SelectionPlan)> {
    crate::mat::check_divisible(l, b)?;
    let n = l / b;
    if n < 3 {
        return Err(crate::error::PisaError::InvalidDimension(format!("need at least 3 blocks, got {n}")));
    }
    let (q, mut k, mut v) = head(seed, l, d)?;
    let mut rng = NormalStream::new(seed ^ 0x5eed);
    let first = rng.below(n);
    let second = (first + 1 + rng.below(n - 1)) % n;
    let selected = [first.min(second), first.max(second)];
    for j in 0..n {
        if selected.contains(&j) {
            let row = v.row(j * b).to_vec();
            for r in j * b..(j + 1) * b {
                v.row_mut(r).copy_from_slice(&row);
            }
        } else {
            let row = k.row(j * b).to_vec();
            for r in j * b..(j + 1) * b {
                k.row_mut(r).copy_from_slice(&row);
            }
        }
    }
    let plan = SelectionPlan::uniform(l / b, n, &selected);
    Ok((q, k, v, plan))
}

/// Largest error of Zeroth, BlockFirst and Hybrid against dense attention
/// on constant-key instances.
fn constant_key(seeds: &[u64], weight: CentroidWeight) -> Result<f64> {
    let opts = PisaOptions {
        centroid_weight: weight,
        ..PisaOptions::default()
    };
    let mut worst = 0.0f64;
    for &s in seeds {
        let (q, k, v, plan) = constant_key_instance(s, 256, 16, 16)?;
        let cfg = AttentionConfig::with_block(16);
        let stats = BlockStatistics::prepare(&q, &k, &v, 16, SpectralMethod::Exact, true)?;
        let dense = dense_naive(&q, &k, &v, cfg.scale_for(16))?;
        for variant in [PisaVariant::Zeroth, PisaVariant::BlockFirst, PisaVariant::Hybrid] {
            let out = pisa_reference(&q, &k, &v, &plan, &stats, variant, &cfg, &opts)?;
            worst = worst.max(rel_linf(out.o.as_slice(), dense.as_slice()));
        }
    }
    Ok(worst)
}

fn routed(q: &Mat, stats: &BlockStatistics, r: f64, scale: f64) -> Result<SelectionPlan> {
    let (k, _) = sparsity_to_k(r, stats.num_blocks)?;
    build_plan(q, stats, k, scale, &RouterConfig::default())
}

fn cancellation(seeds: &[u64]) -> Outcome {
    let mut worst = 0.0f64;
    for &s in seeds {
        let h = gen_clustered(s, 1, 512, 32, 16, 4.0, 0.3)?.head(0);
        let stats = BlockStatistics::prepare(&h.q, &h.k, &h.v, 16, SpectralMethod::Exact, true)?;
        let scale = 1.0 / 32f64.sqrt();
        let plan = routed(&h.q, &stats, 0.875, scale)?;
        let shift = denominator_first_order_shift(&h.q, &h.k, &plan, &stats, scale)?;
        worst = shift.into_iter().fold(worst, f64::max);
    }
    Ok((worst <= 1e-5, format!("max relative denominator change {worst:.3e} (tol 1e-5)")))
}

/// One instance of the error-bound suite: gaussian, Q and K rows rescaled to
/// norm `sqrt(d)`, `L = 512`, `B = 16`, `d = 32`, sparsity 0.875.
pub fn bound_instance(seed: u64) -> Result<(Mat, Mat, Mat, BlockStatistics, SelectionPlan, AttentionConfig)> {
    let d = 32;
    let bundle = qk_normalize(&gen_gaussian(seed, 1, 512, d, 1.0)?, (d as f64).sqrt())?;
    let h = bundle.head(0);
    let cfg = AttentionConfig::with_block(16);
    let stats = BlockStatistics::prepare(&h.q, &h.k, &h.v, 16, SpectralMethod::Exact, true)?;
    let plan = routed(&h.q, &stats, 0.875, cfg.scale_for(d))?;
    Ok((h.q, h.k, h.v, stats, plan, cfg))
}

fn theorem1(seeds: &[u64]) -> Outcome {
    let (mut violations, mut rows, mut slack) = (0usize, 0usize, 0.0f64);
    let mut first_bad = None;
    for &s in seeds {
        let (q, k, v, stats, plan, cfg) = bound_instance(s)?;
        let rep = theorem1_check(&q, &k, &v, &plan, &stats, &cfg)?;
        if let (None, Some(&t)) = (first_bad, rep.violations.first()) {
            first_bad = Some((s, t));
        }
        violations += rep.violations.len();
        rows += rep.actual_err.len();
        slack = slack.max(rep.max_slack_ratio);
    }
    let mut detail = format!("{violations} violations in {rows} rows, max actual/bound {slack:.3}");
    if let Some((s, t)) = first_bad {
        detail.push_str(&format!(", first at seed {s} row {t}"));
    }
    Ok((violations == 0, detail))
}

fn jensen(seeds: &[u64]) -> Outcome {
    let (mut pairs, mut rows) = (0usize, 0usize);
    for &s in seeds {
        let (q, k, v, stats, plan, cfg) = bound_instance(s)?;
        pairs += jensen_check(&q, &k, &plan, 16, cfg.scale_for(q.cols()))?;
        rows += theorem1_check(&q, &k, &v, &plan, &stats, &cfg)?.jensen_violations.len();
    }
    Ok((
        pairs == 0 && rows == 0,
        format!("{pairs} block violations, {rows} row-sum violations"),
    ))
}

fn streaming(seeds: &[u64]) -> Outcome {
    let (mut e64, mut e32) = (0.0f64, 0.0f64);
    for &s in seeds {
        let (q, k, v) = head(s, 256, 16)?;
        let mut cfg = AttentionConfig::with_block(16);
        let stats = BlockStatistics::prepare(&q, &k, &v, 16, SpectralMethod::Exact, true)?;
        let plan = routed(&q, &stats, 0.75, cfg.scale_for(16))?;
        let reference = pisa_reference(&q, &k, &v, &plan, &stats, PisaVariant::Hybrid, &cfg, &PisaOptions::default())?;
        for c in [1, 4, stats.num_blocks] {
            for accum in [Accum::F64, Accum::F32] {
                cfg.group_size = c;
                cfg.accum = accum;
                let out = pisa_streaming(&q, &k, &v, &plan, &stats, &cfg, &PisaOptions::default())?;
                let e = rel_linf(out.o.as_slice(), reference.o.as_slice());
                match accum {
                    Accum::F64 => e64 = e64.max(e),
                    Accum::F32 => e32 = e32.max(e),
                }
            }
        }
    }
    Ok((
        e64 <= 1e-10 && e32 <= 1e-4,
        format!("max rel Linf f64 {e64:.3e} (tol 1e-10), f32 {e32:.3e} (tol 1e-4)"),
    ))
}

fn router(seeds: &[u64]) -> Outcome {
    let mut failures = Vec::new();
    for &s in seeds {
        let h = gen_clustered(s, 1, 512, 32, 16, 4.0, 0.3)?.head(0);
        let stats = BlockStatistics::prepare(&h.q, &h.k, &h.v, 16, SpectralMethod::Exact, true)?;
        let q_bar = stats.q_bar.as_ref().expect("prepare fills q_bar");
        let scale = 1.0 / 32f64.sqrt();
        let eps = 1e-6;
        let base = select_topk_covariance(q_bar, &stats.k_bar, &stats.m, eps, 4, scale)?;

        let monotone = (0..q_bar.rows()).all(|i| {
            let raw: Vec<f64> = (0..stats.num_blocks)
                .map(|j| scale * crate::mat::dot(q_bar.row(i), stats.k_bar.row(j)) + (stats.m[j] + eps).ln())
                .collect();
            let transformed: Vec<f64> = raw.iter().map(|x| 3.0 * x.tanh() + x.powi(3)).collect();
            topk_indices(&transformed, 4) == base.selected[i]
        });
        if !monotone {
            failures.push(format!("monotone transform changed the plan at seed {s}"));
        }
        for c in [1e-3, 10.0, 1e4] {
            let m: Vec<f64> = stats.m.iter().map(|x| x * c).collect();
            if select_topk_covariance(q_bar, &stats.k_bar, &m, eps * c, 4, scale)?.selected != base.selected {
                failures.push(format!("joint (M, eps) scaling by {c} changed the plan at seed {s}"));
            }
        }
    }
    let q = Mat::from_rows(&[vec![0.5, -1.0], vec![0.0, 0.0]])?;
    let k_bar = Mat::from_rows(&vec![vec![1.0, 1.0]; 6])?;
    let tie = select_topk_covariance(&q, &k_bar, &[2.0; 6], 1e-6, 3, 1.0)?;
    if tie.selected != vec![vec![0, 1, 2]; 2] {
        failures.push(format!("tied scores selected {:?}", tie.selected));
    }
    if topk_indices(&[0.0, 1.0, 1.0, 1.0, -1.0], 2) != vec![1, 2] {
        failures.push("partial tie not resolved toward lower indices".into());
    }
    Ok(match failures.first() {
        None => (true, format!("{} instances, plans stable", seeds.len())),
        Some(f) => (false, f.clone()),
    })
}

pub(super) fn cmd_verify(args: &VerifyArgs) -> Result<i32> {
    if args.list {
        for (name, seeds) in CHECKS {
            println!("{name}\t{seeds} seeds");
        }
        return Ok(EXIT_OK);
    }
    let names: Vec<&str> = if args.only.is_empty() {
        CHECKS.iter().map(|(n, _)| *n).collect()
    } else {
        args.only.iter().map(String::as_str).collect()
    };
    if let Some(bad) = names.iter().find(|n| !CHECKS.iter().any(|(c, _)| c == *n)) {
        eprintln!("error: unknown check '{bad}'");
        return Ok(EXIT_USAGE);
    }
    println!("{:<14} {:<6} detail", "check", "status");
    let mut all_ok = true;
    for name in names {
        let res = run_check(name, args.seed, args.seeds).expect("name validated");
        let (ok, detail) = match res {
            Ok(r) => (r.passed, r.detail),
            Err(e) => (false, format!("error: {e} ({})", e.name())),
        };
        all_ok &= ok;
        println!("{:<14} {:<6} {}", name, if ok { "pass" } else { "FAIL" }, detail);
    }
    Ok(if all_ok { EXIT_OK } else { EXIT_FAILURE })
}
