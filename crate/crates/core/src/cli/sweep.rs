use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::{create_file, open_bundle, parse_seeds, SweepArgs, EXIT_OK};
use crate::analysis::{compare_outputs, flop_model};
use crate::attention::{dense_naive, AttentionConfig};
use crate::error::{PisaError, Result};
use crate::mat::{check_divisible, Mat};
use crate::pisa::{pisa_multihead, PisaOptions, PisaVariant};
use crate::router::RouterConfig;
use crate::tensor_io::TensorBundle;

/// CSV header, in column order.
pub const SWEEP_COLUMNS: [&str; 14] = [
    "seed",
    "head",
    "method",
    "strategy",
    "seq_len",
    "block_size",
    "sparsity_requested",
    "sparsity_realized",
    "l1_rel",
    "l2_rel",
    "max_abs",
    "flops_ratio",
    "wall_ms",
    "status",
];

/// A full sweep grid. Data for each (seed, length) comes from `data`, unless
/// `pinned` supplies a single bundle.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub lengths: Vec<usize>,
    pub sparsities: Vec<f64>,
    pub variants: Vec<PisaVariant>,
    pub seeds: Vec<u64>,
    pub attention: AttentionConfig,
    pub router: RouterConfig,
    pub data: super::DataArgs,
    pub pinned: Option<TensorBundle>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        self.attention.validate()?;
        if self.variants.is_empty() || self.sparsities.is_empty() || self.seeds.is_empty() {
            return Err(PisaError::InvalidDimension("empty sweep axis".into()));
        }
        for &r in &self.sparsities {
            if !(0.0..1.0).contains(&r) {
                return Err(PisaError::InvalidSparsity(format!("sparsity must be in [0, 1), got {r}")));
            }
        }
        match &self.pinned {
            Some(b) => check_divisible(b.seq_len(), self.attention.block_size),
            None => {
                if self.lengths.is_empty() {
                    return Err(PisaError::InvalidDimension("no lengths".into()));
                }
                self.lengths
                    .iter()
                    .try_for_each(|&l| check_divisible(l, self.attention.block_size))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub seed: u64,
    pub head: usize,
    pub method: &'static str,
    pub strategy: &'static str,
    pub seq_len: usize,
    pub block_size: usize,
    pub sparsity_requested: f64,
    pub sparsity_realized: Option<f64>,
    pub l1_rel: Option<f64>,
    pub l2_rel: Option<f64>,
    pub max_abs: Option<f64>,
    pub flops_ratio: Option<f64>,
    pub wall_ms: Option<f64>,
    /// `ok`, or the name of the error that stopped the cell.
    pub status: &'static str,
}

/// Runs every cell of the grid. Rows come back ordered by seed, length,
/// sparsity, variant and head, whatever order the cells finished in.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let units: Vec<(u64, usize)> = match &spec.pinned {
        Some(b) => vec![(spec.seeds[0], b.seq_len())],
        None => spec
            .seeds
            .iter()
            .flat_map(|&s| spec.lengths.iter().map(move |&l| (s, l)))
            .collect(),
    };
    let rows: Vec<Vec<SweepRow>> = units
        .par_iter()
        .map(|&(seed, len)| {
            let bundle = match &spec.pinned {
                Some(b) => Ok(b.clone()),
                None => spec.data.generate(seed, len),
            };
            sweep_unit(spec, seed, len, bundle)
        })
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

fn sweep_unit(spec: &SweepSpec, seed: u64, len: usize, bundle: Result<TensorBundle>) -> Vec<SweepRow> {
    let cfg = &spec.attention;
    let heads = spec.pinned.as_ref().map_or(spec.data.heads, |b| b.num_heads());
    let blank = |r: f64, v: PisaVariant, h: usize, status: &'static str| SweepRow {
        seed,
        head: h,
        method: v.as_str(),
        strategy: spec.router.strategy.as_str(),
        seq_len: len,
        block_size: cfg.block_size,
        sparsity_requested: r,
        sparsity_realized: None,
        l1_rel: None,
        l2_rel: None,
        max_abs: None,
        flops_ratio: None,
        wall_ms: None,
        status,
    };
    let failed_all = |e: &PisaError| {
        let mut out = Vec::new();
        for &r in &spec.sparsities {
            for &v in &spec.variants {
                out.extend((0..heads).map(|h| blank(r, v, h, e.name())));
            }
        }
        out
    };

    let bundle = match bundle {
        Ok(b) => b,
        Err(e) => return failed_all(&e),
    };
    let scale = cfg.scale_for(bundle.head_dim());
    let dense: Result<Vec<Mat>> = bundle
        .heads()
        .iter()
        .map(|h| dense_naive(&h.q, &h.k, &h.v, scale))
        .collect();
    let dense = match dense {
        Ok(d) => d,
        Err(e) => return failed_all(&e),
    };

    let mut out = Vec::new();
    for &r in &spec.sparsities {
        for &v in &spec.variants {
            match pisa_multihead(&bundle, r, &spec.router, v, cfg, &PisaOptions::default()) {
                Ok(run) => {
                    let flops = flop_model(len, bundle.head_dim(), cfg.block_size, run.k, v).ok();
                    for (h, hr) in run.heads.iter().enumerate() {
                        let mut row = blank(r, v, h, "ok");
                        match compare_outputs(&hr.output.o, &dense[h]) {
                            Ok(e) => {
                                row.sparsity_realized = Some(run.realized_sparsity);
                                row.l1_rel = Some(e.l1_rel);
                                row.l2_rel = Some(e.l2_rel);
                                row.max_abs = Some(e.max_abs);
                                row.flops_ratio = flops.as_ref().map(|f| f.pisa_ratio);
                                row.wall_ms =
                                    Some(super::ms(hr.prepare + hr.select + hr.attend, cfg.deterministic));
                            }
                            Err(e) => row.status = e.name(),
                        }
                        out.push(row);
                    }
                }
                Err(e) => out.extend((0..heads).map(|h| blank(r, v, h, e.name()))),
            }
        }
    }
    out
}

/// Writes rows as CSV with the fixed header.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], sink: W) -> Result<()> {
    let io = |e: csv::Error| PisaError::Io {
        offset: 0,
        source: std::io::Error::other(e.to_string()),
    };
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(sink);
    w.write_record(SWEEP_COLUMNS).map_err(io)?;
    for row in rows {
        w.serialize(row).map_err(io)?;
    }
    w.flush().map_err(|e| PisaError::Io { offset: 0, source: e })
}

pub(super) fn cmd_sweep(args: &SweepArgs) -> Result<i32> {
    let spec = SweepSpec {
        lengths: args.lengths.clone(),
        sparsities: args.sparsities.clone(),
        variants: args.variants.clone(),
        seeds: parse_seeds(&args.seeds)?,
        attention: args.attn.attention(args.data.dtype.accum()),
        router: args.attn.router(),
        data: args.data.clone(),
        pinned: args.input.as_deref().map(open_bundle).transpose()?,
    };
    let rows = run_sweep(&spec)?;
    write_sweep_csv(&rows, create_file(&args.out)?)?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    let mut obj = serde_json::Map::new();
    obj.insert("path".into(), args.out.display().to_string().into());
    obj.insert("rows".into(), rows.len().into());
    obj.insert("failed_rows".into(), failed.into());
    super::print_json(obj);
    Ok(EXIT_OK)
}
