use std::time::{Duration, Instant};

use serde_json::Map;

use super::{ms, open_bundle, print_json, RunArgs, EXIT_OK};
use crate::analysis::{compare_outputs, flop_model};
use crate::attention::dense_naive;
use crate::error::Result;
use crate::pisa::{pisa_multihead, ExecPath, PisaOptions};

pub(super) fn cmd_run(args: &RunArgs) -> Result<i32> {
    let bundle = match &args.input {
        Some(p) => open_bundle(p)?,
        None => args.data.generate(args.data.seed, args.data.seq_len)?,
    };
    let det = args.attn.deterministic;
    let cfg = args.attn.attention(args.data.dtype.accum());
    let opts = PisaOptions {
        path: if args.streaming { ExecPath::Streaming } else { ExecPath::Reference },
        ..PisaOptions::default()
    };
    let t0 = Instant::now();
    let run = pisa_multihead(&bundle, args.sparsity, &args.attn.router(), args.variant, &cfg, &opts)?;
    let total = t0.elapsed();

    let scale = cfg.scale_for(bundle.head_dim());
    let (mut l1, mut l2, mut max_abs, mut l1_max) = (0.0, 0.0, 0.0f64, 0.0f64);
    let t1 = Instant::now();
    for (h, hr) in run.heads.iter().enumerate() {
        let head = bundle.head(h);
        let dense = dense_naive(&head.q, &head.k, &head.v, scale)?;
        let e = compare_outputs(&hr.output.o, &dense)?;
        l1 += e.l1_rel;
        l2 += e.l2_rel;
        max_abs = max_abs.max(e.max_abs);
        l1_max = l1_max.max(e.l1_rel);
    }
    let dense_time = t1.elapsed();
    let nh = run.heads.len() as f64;
    let flops = flop_model(bundle.seq_len(), bundle.head_dim(), cfg.block_size, run.k, args.variant)?;

    let sum = |f: fn(&crate::pisa::HeadRun) -> Duration| run.heads.iter().map(f).sum::<Duration>();
    let mut obj = Map::new();
    obj.insert("variant".into(), args.variant.as_str().into());
    obj.insert("strategy".into(), args.attn.router().strategy.as_str().into());
    obj.insert("num_heads".into(), bundle.num_heads().into());
    obj.insert("seq_len".into(), bundle.seq_len().into());
    obj.insert("head_dim".into(), bundle.head_dim().into());
    obj.insert("block_size".into(), cfg.block_size.into());
    obj.insert("k_selected".into(), run.k.into());
    obj.insert("sparsity_requested".into(), args.sparsity.into());
    obj.insert("sparsity_realized".into(), run.realized_sparsity.into());
    obj.insert("l1_rel".into(), (l1 / nh).into());
    obj.insert("l1_rel_max".into(), l1_max.into());
    obj.insert("l2_rel".into(), (l2 / nh).into());
    obj.insert("max_abs".into(), max_abs.into());
    obj.insert("flops_ratio".into(), flops.pisa_ratio.into());
    obj.insert("sparse_flops_ratio".into(), flops.sparse_ratio.into());
    obj.insert("overhead_ratio".into(), flops.overhead_ratio.into());
    obj.insert("wall_ms".into(), ms(total, det).into());
    obj.insert("wall_ms_prepare".into(), ms(sum(|h| h.prepare), det).into());
    obj.insert("wall_ms_select".into(), ms(sum(|h| h.select), det).into());
    obj.insert("wall_ms_attend".into(), ms(sum(|h| h.attend), det).into());
    if run.heads.iter().all(|h| h.phases.is_some()) {
        let phase = |f: fn(&crate::pisa::PhaseTimes) -> Duration| {
            run.heads.iter().filter_map(|h| h.phases.as_ref()).map(f).sum::<Duration>()
        };
        obj.insert("wall_ms_exact".into(), ms(phase(|p| p.exact), det).into());
        obj.insert("wall_ms_approx".into(), ms(phase(|p| p.approx), det).into());
        obj.insert("wall_ms_normalize".into(), ms(phase(|p| p.normalize), det).into());
    }
    obj.insert("wall_ms_dense_reference".into(), ms(dense_time, det).into());
    print_json(obj);
    Ok(EXIT_OK)
}
