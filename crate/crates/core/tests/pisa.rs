mod common;

use common::*;
use pisa_core::analysis::{compare_outputs, theorem1_check};
use pisa_core::attention::{dense_naive, Accum, AttentionConfig};
use pisa_core::pisa::{CentroidWeight, ExecPath, Phase3Scaling};
use pisa_core::router::{build_plan, sparsity_to_k, RouterConfig};
use pisa_core::stats::{BlockStatistics, SpectralMethod};
use pisa_core::tensor_io::{gen_clustered, gen_gaussian, Dtype, Head, TensorBundle};
use pisa_core::{pisa_multihead, pisa_reference, pisa_streaming, Mat, PisaError, PisaOptions, PisaVariant, SelectionPlan};
use proptest::prelude::*;

const OPTS: PisaOptions = PisaOptions {
    path: ExecPath::Reference,
    phase3: Phase3Scaling::MeanH,
    centroid_weight: CentroidWeight::BlockSize,
    spectral: SpectralMethod::Exact,
};

fn gaussian(seed: u64, l: usize, d: usize) -> Head {
    gen_gaussian(seed, 1, l, d, 1.0).unwrap().head(0)
}

fn prepared(h: &Head, b: usize) -> BlockStatistics {
    BlockStatistics::prepare(&h.q, &h.k, &h.v, b, SpectralMethod::Exact, true).unwrap()
}

fn routed(h: &Head, st: &BlockStatistics, r: f64) -> SelectionPlan {
    let (k, _) = sparsity_to_k(r, st.num_blocks).unwrap();
    build_plan(&h.q, st, k, 1.0 / (h.q.cols() as f64).sqrt(), &RouterConfig::default()).unwrap()
}

fn run(h: &Head, st: &BlockStatistics, plan: &SelectionPlan, variant: PisaVariant, cfg: &AttentionConfig) -> Mat {
    pisa_reference(&h.q, &h.k, &h.v, plan, st, variant, cfg, &OPTS).unwrap().o
}

fn l1_vs_dense(h: &Head, o: &Mat) -> f64 {
    let dense = dense_naive(&h.q, &h.k, &h.v, 1.0 / (h.q.cols() as f64).sqrt()).unwrap();
    compare_outputs(o, &dense).unwrap().l1_rel
}

#[test]
fn every_variant_matches_literal_formulas() {
    for seed in 0..4 {
        let h = gaussian(seed, 128, 8);
        let st = prepared(&h, 16);
        let plan = routed(&h, &st, 0.75);
        let cfg = AttentionConfig::with_block(16);
        let scale = cfg.scale_for(8);
        for variant in PisaVariant::ALL {
            let got = pisa_reference(&h.q, &h.k, &h.v, &plan, &st, variant, &cfg, &OPTS).unwrap();
            let (want, denom) = piecewise_oracle(&h.q, &h.k, &h.v, &plan.selected, 16, variant, scale);
            assert!(max_rel(got.o.as_slice(), &flat(&want)) < 1e-10, "{variant} seed {seed}");
            assert!(max_rel(&got.denom, &denom) < 1e-10, "{variant} seed {seed}");
            if variant == PisaVariant::SparseOnly {
                assert!(got.tail_mass.iter().all(|&t| t == 0.0));
            }
            assert!(got.denom.iter().all(|&d| d > 0.0));
        }
    }
}

#[test]
fn full_plan_is_dense_for_every_variant() {
    let h = gaussian(1, 256, 16);
    let st = prepared(&h, 32);
    let plan = SelectionPlan::full(8, 8);
    let dense = dense_naive(&h.q, &h.k, &h.v, 0.25).unwrap();
    for variant in PisaVariant::ALL {
        let o = run(&h, &st, &plan, variant, &AttentionConfig::with_block(32));
        assert!(max_rel(o.as_slice(), dense.as_slice()) < 1e-10, "{variant}");
    }
    let s = pisa_streaming(&h.q, &h.k, &h.v, &plan, &st, &AttentionConfig::with_block(32), &OPTS).unwrap();
    assert!(max_rel(s.o.as_slice(), dense.as_slice()) < 1e-10);
}

#[test]
fn constant_key_tails_are_exact() {
    let (l, d, b) = (128, 8, 16);
    let mut h = gaussian(2, l, d);
    let selected = [1usize, 5];
    // Hybrid uses the all-block mean of H_j, so selected blocks get constant
    // values to keep their H_j at zero as well.
    for j in 0..l / b {
        let (src, row) = if selected.contains(&j) { (&mut h.v, j * b) } else { (&mut h.k, j * b) };
        let fixed = src.row(row).to_vec();
        for r in j * b..(j + 1) * b {
            src.row_mut(r).copy_from_slice(&fixed);
        }
    }
    let st = prepared(&h, b);
    let plan = SelectionPlan::uniform(l / b, l / b, &selected);
    let dense = dense_naive(&h.q, &h.k, &h.v, 1.0 / (d as f64).sqrt()).unwrap();
    for variant in [PisaVariant::Zeroth, PisaVariant::BlockFirst, PisaVariant::Hybrid] {
        let o = run(&h, &st, &plan, variant, &AttentionConfig::with_block(b));
        assert!(max_rel(o.as_slice(), dense.as_slice()) < 1e-6, "{variant}");
    }
    let sparse = run(&h, &st, &plan, PisaVariant::SparseOnly, &AttentionConfig::with_block(b));
    assert!(max_rel(sparse.as_slice(), dense.as_slice()) > 1e-3);
    let unit = PisaOptions {
        centroid_weight: CentroidWeight::Unit,
        ..OPTS
    };
    let wrong = pisa_reference(&h.q, &h.k, &h.v, &plan, &st, PisaVariant::Zeroth, &AttentionConfig::with_block(b), &unit).unwrap();
    assert!(max_rel(wrong.o.as_slice(), dense.as_slice()) > 1e-3);
}

#[test]
fn clustered_error_ordering_on_seed_zero() {
    let h = gen_clustered(0, 1, 512, 32, 16, 4.0, 0.3).unwrap().head(0);
    let st = prepared(&h, 16);
    let plan = routed(&h, &st, 0.875);
    let cfg = AttentionConfig::with_block(16);
    let err = |v| l1_vs_dense(&h, &run(&h, &st, &plan, v, &cfg));
    let (hy, ze, sp) = (err(PisaVariant::Hybrid), err(PisaVariant::Zeroth), err(PisaVariant::SparseOnly));
    assert!(hy < ze && ze < sp, "hybrid {hy}, zeroth {ze}, sparse {sp}");
}

#[test]
fn streaming_matches_reference_on_fifty_seeds() {
    let cfg = AttentionConfig {
        group_size: 4,
        ..AttentionConfig::with_block(16)
    };
    for seed in 0..50 {
        let h = gaussian(seed, 256, 16);
        let st = prepared(&h, 16);
        let plan = routed(&h, &st, 0.75);
        let want = run(&h, &st, &plan, PisaVariant::Hybrid, &cfg);
        let got = pisa_streaming(&h.q, &h.k, &h.v, &plan, &st, &cfg, &OPTS).unwrap();
        assert!(max_rel(got.o.as_slice(), want.as_slice()) <= 1e-10, "seed {seed}");
    }
}

#[test]
fn group_size_does_not_change_the_result() {
    let h = gen_clustered(3, 1, 512, 16, 16, 4.0, 0.3).unwrap().head(0);
    let st = prepared(&h, 16);
    let plan = routed(&h, &st, 0.875);
    let with_group = |c| {
        let cfg = AttentionConfig {
            group_size: c,
            ..AttentionConfig::with_block(16)
        };
        pisa_streaming(&h.q, &h.k, &h.v, &plan, &st, &cfg, &OPTS).unwrap().o
    };
    let one = with_group(1);
    let all = with_group(32);
    assert!(max_rel(one.as_slice(), all.as_slice()) <= 1e-10);
}

#[test]
fn large_exponent_arguments_stay_finite_in_f32() {
    let (l, d, b) = (64, 4, 8);
    let mut h = gaussian(4, l, d);
    h.q.row_mut(3).copy_from_slice(&[8.0, 0.0, 0.0, 0.0]);
    h.k.row_mut(40).copy_from_slice(&[20.0, 0.0, 0.0, 0.0]);
    let st = prepared(&h, b);
    let plan = SelectionPlan::uniform(l / b, l / b, &[0, 2]);
    let f64_cfg = AttentionConfig::with_block(b);
    let f32_cfg = AttentionConfig {
        accum: Accum::F32,
        ..f64_cfg.clone()
    };
    let want = run(&h, &st, &plan, PisaVariant::Hybrid, &f64_cfg);
    let got = pisa_streaming(&h.q, &h.k, &h.v, &plan, &st, &f32_cfg, &OPTS).unwrap();
    assert!(got.o.is_finite());
    assert!(max_rel(got.o.as_slice(), want.as_slice()) <= 1e-4);
}

#[test]
fn invalid_plans_and_shapes_are_rejected() {
    let h = gaussian(5, 64, 4);
    let st = prepared(&h, 16);
    let cfg = AttentionConfig::with_block(16);
    let mut plan = SelectionPlan::full(4, 4);
    plan.selected[2].clear();
    plan.k = 0;
    let err = pisa_reference(&h.q, &h.k, &h.v, &plan, &st, PisaVariant::Hybrid, &cfg, &OPTS).unwrap_err();
    assert!(matches!(err, PisaError::EmptySelection { .. } | PisaError::InvalidPlan(_)), "{err:?}");
    let other = AttentionConfig::with_block(8);
    assert!(pisa_reference(&h.q, &h.k, &h.v, &SelectionPlan::full(4, 4), &st, PisaVariant::Hybrid, &other, &OPTS).is_err());
}

#[test]
fn multihead_behaviour() {
    let one = gen_gaussian(6, 1, 256, 16, 1.0).unwrap().head(0);
    let twin = TensorBundle::from_heads(Dtype::F64, &[one.clone(), one.clone()]).unwrap();
    let cfg = AttentionConfig::with_block(32);
    let r = pisa_multihead(&twin, 0.75, &RouterConfig::default(), PisaVariant::Hybrid, &cfg, &OPTS).unwrap();
    assert_eq!(r.heads[0].output.o, r.heads[1].output.o);
    assert_eq!(r.realized_sparsity, 0.75);

    let bundle = gen_gaussian(7, 3, 256, 16, 1.0).unwrap();
    let dense = pisa_multihead(&bundle, 0.0, &RouterConfig::default(), PisaVariant::Hybrid, &cfg, &OPTS).unwrap();
    for (h, run) in dense.heads.iter().enumerate() {
        let hd = bundle.head(h);
        let want = dense_naive(&hd.q, &hd.k, &hd.v, 0.25).unwrap();
        assert!(max_rel(run.output.o.as_slice(), want.as_slice()) < 1e-10);
    }
}

#[test]
fn deterministic_multihead_errors_are_bit_identical() {
    let bundle = gen_gaussian(0, 4, 1024, 64, 1.0).unwrap();
    let cfg = AttentionConfig::with_block(64);
    let errors = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                let r = pisa_multihead(&bundle, 0.875, &RouterConfig::default(), PisaVariant::Hybrid, &cfg, &OPTS).unwrap();
                r.heads
                    .iter()
                    .enumerate()
                    .map(|(h, run)| l1_vs_dense(&bundle.head(h), &run.output.o).to_bits())
                    .collect::<Vec<_>>()
            })
    };
    let a = errors(1);
    assert_eq!(a, errors(1));
    assert_eq!(a, errors(4));
}

#[test]
fn zeroth_keeps_constant_columns_and_hybrid_stays_within_bound() {
    let (l, d, b) = (256, 16, 16);
    let mut h = gen_clustered(8, 1, l, d, 8, 4.0, 0.3).unwrap().head(0);
    for r in 0..l {
        h.v.set(r, 3, 1.75);
    }
    let st = prepared(&h, b);
    let plan = routed(&h, &st, 0.875);
    let cfg = AttentionConfig::with_block(b);
    let zeroth = run(&h, &st, &plan, PisaVariant::Zeroth, &cfg);
    for t in 0..l {
        assert!((zeroth.get(t, 3) - 1.75).abs() < 1e-12);
    }
    let hybrid = run(&h, &st, &plan, PisaVariant::Hybrid, &cfg);
    let block_first = run(&h, &st, &plan, PisaVariant::BlockFirst, &cfg);
    let report = theorem1_check(&h.q, &h.k, &h.v, &plan, &st, &cfg).unwrap();
    for t in 0..l {
        let drift = (hybrid.get(t, 3) - block_first.get(t, 3)).abs();
        assert!(drift <= report.bound[t] + 1e-9, "row {t}: {drift} > {}", report.bound[t]);
    }
}

#[test]
fn diagnostic_options_change_the_answer() {
    let h = gen_clustered(9, 1, 256, 16, 8, 4.0, 0.3).unwrap().head(0);
    let st = prepared(&h, 16);
    let plan = routed(&h, &st, 0.75);
    let cfg = AttentionConfig::with_block(16);
    let base = run(&h, &st, &plan, PisaVariant::Hybrid, &cfg);
    let alt = PisaOptions {
        phase3: Phase3Scaling::SumOverLength,
        ..OPTS
    };
    let o = pisa_reference(&h.q, &h.k, &h.v, &plan, &st, PisaVariant::Hybrid, &cfg, &alt).unwrap().o;
    assert!(max_rel(o.as_slice(), base.as_slice()) > 1e-8);
    let s = pisa_streaming(&h.q, &h.k, &h.v, &plan, &st, &cfg, &alt).unwrap().o;
    assert!(max_rel(s.as_slice(), o.as_slice()) <= 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn streaming_equals_reference_for_random_shapes(
        seed in 0u64..10_000,
        n in 2usize..10,
        b in 1usize..9,
        d in 1usize..9,
        c in 1usize..12,
        frac in 0.0f64..1.0,
    ) {
        let h = gaussian(seed, n * b, d);
        let st = prepared(&h, b);
        let k = ((frac * n as f64) as usize).clamp(1, n);
        let plan = build_plan(&h.q, &st, k, 1.0 / (d as f64).sqrt(), &RouterConfig::default()).unwrap();
        let cfg = AttentionConfig { group_size: c, ..AttentionConfig::with_block(b) };
        let want = run(&h, &st, &plan, PisaVariant::Hybrid, &cfg);
        let got = pisa_streaming(&h.q, &h.k, &h.v, &plan, &st, &cfg, &OPTS).unwrap();
        prop_assert!(max_rel(got.o.as_slice(), want.as_slice()) <= 1e-10);
        prop_assert!(got.denom.iter().all(|&x| x > 0.0));
    }
}
