use std::time::{Duration, Instant};

use serde_json::Map;

use super::{print_json, BenchArgs, Kind, EXIT_OK};
use crate::attention::{dense_online, sparse_masked};
use crate::error::{PisaError, Result};
use crate::pisa::{pisa_streaming_timed, PisaOptions};
use crate::router::{build_plan, sparsity_to_k};
use crate::stats::{BlockStatistics, SpectralMethod};
use crate::tensor_io::{gen_clustered, gen_gaussian, ClusterParams};

#[derive(Debug, Default, Clone, Copy)]
struct Sample {
    dense: Duration,
    sparse: Duration,
    prepare: Duration,
    select: Duration,
    exact: Duration,
    approx: Duration,
    normalize: Duration,
    hybrid: Duration,
}

fn median(mut xs: Vec<Duration>) -> f64 {
    xs.sort();
    let n = xs.len();
    let mid = if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2
    };
    mid.as_secs_f64() * 1e3
}

pub(super) fn cmd_bench(args: &BenchArgs) -> Result<i32> {
    if args.reps < 5 {
        return Err(PisaError::InvalidDimension(format!("reps must be >= 5, got {}", args.reps)));
    }
    let cp = ClusterParams::default();
    let bundle = match args.kind {
        Kind::Gaussian => gen_gaussian(args.seed, 1, args.seq_len, args.head_dim, 1.0)?,
        Kind::Clustered => gen_clustered(
            args.seed,
            1,
            args.seq_len,
            args.head_dim,
            cp.n_clusters,
            cp.concentration,
            cp.noise_std,
        )?,
    }
    .into_dtype(args.dtype.dtype());
    let h = bundle.head(0);
    let cfg = args.attn.attention(args.dtype.accum());
    crate::mat::check_divisible(args.seq_len, cfg.block_size)?;
    let (k_sel, realized) = sparsity_to_k(args.sparsity, args.seq_len / cfg.block_size)?;
    let scale = cfg.scale_for(args.head_dim);
    let router = args.attn.router();

    let once = || -> Result<Sample> {
        let mut s = Sample::default();
        let t = Instant::now();
        dense_online(&h.q, &h.k, &h.v, &cfg)?;
        s.dense = t.elapsed();

        let t = Instant::now();
        let stats = BlockStatistics::prepare(&h.q, &h.k, &h.v, cfg.block_size, SpectralMethod::Exact, cfg.deterministic)?;
        s.prepare = t.elapsed();
        let t = Instant::now();
        let plan = build_plan(&h.q, &stats, k_sel, scale, &router)?;
        s.select = t.elapsed();

        let t = Instant::now();
        sparse_masked(&h.q, &h.k, &h.v, &plan, &cfg)?;
        s.sparse = t.elapsed() + s.select;

        let t = Instant::now();
        let (_, phases) = pisa_streaming_timed(&h.q, &h.k, &h.v, &plan, &stats, &cfg, &PisaOptions::default())?;
        let kernel = t.elapsed();
        s.exact = phases.exact;
        s.approx = phases.approx;
        s.normalize = phases.normalize;
        s.hybrid = s.prepare + s.select + kernel;
        Ok(s)
    };

    once()?;
    let samples = (0..args.reps).map(|_| once()).collect::<Result<Vec<_>>>()?;
    let col = |f: fn(&Sample) -> Duration| median(samples.iter().map(f).collect());
    let dense = col(|s| s.dense);
    let hybrid = col(|s| s.hybrid);
    let approx = col(|s| s.approx);
    let phase_total = col(|s| s.exact) + approx + col(|s| s.normalize);

    let mut obj = Map::new();
    obj.insert("seq_len".into(), args.seq_len.into());
    obj.insert("head_dim".into(), args.head_dim.into());
    obj.insert("block_size".into(), cfg.block_size.into());
    obj.insert("dtype".into(), format!("{:?}", args.dtype).to_lowercase().into());
    obj.insert("sparsity_realized".into(), realized.into());
    obj.insert("reps".into(), args.reps.into());
    obj.insert("threads".into(), rayon::current_num_threads().into());
    obj.insert("dense_online_ms".into(), dense.into());
    obj.insert("sparse_only_ms".into(), col(|s| s.sparse).into());
    obj.insert("hybrid_ms".into(), hybrid.into());
    obj.insert("hybrid_prepare_ms".into(), col(|s| s.prepare).into());
    obj.insert("hybrid_select_ms".into(), col(|s| s.select).into());
    obj.insert("hybrid_exact_ms".into(), col(|s| s.exact).into());
    obj.insert("hybrid_approx_ms".into(), approx.into());
    obj.insert("hybrid_normalize_ms".into(), col(|s| s.normalize).into());
    let share = if phase_total > 0.0 { 100.0 * approx / phase_total } else { 0.0 };
    obj.insert("approx_share_pct".into(), share.into());
    obj.insert("speedup_vs_dense".into(), (dense / hybrid).into());

    eprintln!("{:<22} {:>12}", "phase", "median ms");
    for key in [
        "dense_online_ms",
        "sparse_only_ms",
        "hybrid_ms",
        "hybrid_prepare_ms",
        "hybrid_select_ms",
        "hybrid_exact_ms",
        "hybrid_approx_ms",
        "hybrid_normalize_ms",
    ] {
        eprintln!("{:<22} {:>12.3}", key.trim_end_matches("_ms"), obj[key].as_f64().unwrap_or(0.0));
    }
    eprintln!("approx share {share:.1}%, hybrid speedup vs dense {:.2}x", dense / hybrid);
    print_json(obj);
    Ok(EXIT_OK)
}
