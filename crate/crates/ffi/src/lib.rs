//! C ABI over `pisa-core`.
//!
//! Bundles and results are opaque pointers handed out by the `gen`, `read`,
//! `from_data`, `run` and `dense` functions and released with the matching
//! `*_free`. Every fallible function
//! returns a [`PisaStatus`]; on failure, [`pisa_last_error_message`] returns a
//! description for the calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use pisa_core::analysis::compare_outputs;
use pisa_core::attention::{dense_naive, Accum, AttentionConfig};
use pisa_core::pisa::{pisa_multihead, ExecPath, PisaOptions, PisaVariant};
use pisa_core::router::{RouterConfig, Strategy, DEFAULT_EPSILON};
use pisa_core::tensor_io::{gen_clustered, gen_gaussian, read_bundle, write_bundle, Dtype, TensorBundle};
use pisa_core::{Mat, PisaError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PisaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Validation = 5,
    EmptySelection = 6,
    NumericalOverflow = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PisaVariantCode {
    SparseOnly = 0,
    Zeroth = 1,
    BlockFirst = 2,
    Hybrid = 3,
    GlobalCentroid = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PisaStrategyCode {
    Plain = 0,
    CovarianceAware = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PisaDtypeCode {
    F32 = 1,
    F64 = 2,
}

/// Settings for [`pisa_run`]; start from [`pisa_run_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PisaRunOptions {
    pub variant: PisaVariantCode,
    pub strategy: PisaStrategyCode,
    /// Fraction of key blocks approximated, in `[0, 1)`.
    pub sparsity: f64,
    pub block_size: usize,
    pub group_size: usize,
    pub epsilon: f64,
    /// Use the fused kernel (Hybrid only).
    pub streaming: bool,
    /// Accumulate the fused kernel in f32.
    pub accum_f32: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PisaErrorMetrics {
    pub l1_rel: f64,
    pub l2_rel: f64,
    pub max_abs: f64,
}

/// Opaque multi-head Q/K/V bundle.
pub struct PisaBundle(TensorBundle);

/// Opaque per-head attention outputs.
pub struct PisaResult {
    outputs: Vec<Mat>,
    denominators: Vec<Vec<f64>>,
    realized_sparsity: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &PisaError) -> PisaStatus {
    match e {
        PisaError::Io { .. } => PisaStatus::Io,
        PisaError::BadMagic { .. }
        | PisaError::UnsupportedVersion(_)
        | PisaError::UnsupportedDtype(_)
        | PisaError::MalformedFile { .. } => PisaStatus::Format,
        PisaError::EmptySelection { .. } => PisaStatus::EmptySelection,
        PisaError::NumericalOverflow { .. } => PisaStatus::NumericalOverflow,
        _ => PisaStatus::Validation,
    }
}

impl From<PisaError> for Failure {
    fn from(e: PisaError) -> Self {
        Failure(status_of(&e), format!("{e} ({})", e.name()))
    }
}

struct Failure(PisaStatus, String);

fn fail<T>(status: PisaStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PisaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PisaStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            PisaStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(PisaStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure(PisaStatus::NullPointer, format!("{what} is null")))
}

unsafe fn path_arg(p: *const c_char) -> Result<String, Failure> {
    if p.is_null() {
        return fail(PisaStatus::NullPointer, "path is null");
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(s.to_owned()),
        Err(_) => fail(PisaStatus::InvalidArgument, "path is not valid UTF-8"),
    }
}

fn io_err(e: std::io::Error) -> Failure {
    PisaError::Io { offset: 0, source: e }.into()
}

/// Null-terminated library version; static storage, do not free.
#[no_mangle]
pub extern "C" fn pisa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated and
/// always null-terminated when `len > 0`). Returns the full message length
/// in bytes, excluding the terminator.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn pisa_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Defaults: Hybrid, plain routing, sparsity 0.875, `B = 64`, `C = 8`.
#[no_mangle]
pub extern "C" fn pisa_run_options_default() -> PisaRunOptions {
    PisaRunOptions {
        variant: PisaVariantCode::Hybrid,
        strategy: PisaStrategyCode::Plain,
        sparsity: 0.875,
        block_size: 64,
        group_size: 8,
        epsilon: DEFAULT_EPSILON,
        streaming: false,
        accum_f32: false,
    }
}

fn store<T>(out: &mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// I.i.d. normal bundle, stored as f64.
///
/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn pisa_bundle_gen_gaussian(
    seed: u64,
    heads: usize,
    seq_len: usize,
    head_dim: usize,
    std: f64,
    out: *mut *mut PisaBundle,
) -> PisaStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        store(out, PisaBundle(gen_gaussian(seed, heads, seq_len, head_dim, std)?));
        Ok(())
    })
}

/// Clustered-key bundle, stored as f64.
///
/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn pisa_bundle_gen_clustered(
    seed: u64,
    heads: usize,
    seq_len: usize,
    head_dim: usize,
    n_clusters: usize,
    concentration: f64,
    noise_std: f64,
    out: *mut *mut PisaBundle,
) -> PisaStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let b = gen_clustered(seed, heads, seq_len, head_dim, n_clusters, concentration, noise_std)?;
        store(out, PisaBundle(b));
        Ok(())
    })
}

/// Copies caller-owned row-major `[heads][seq_len][head_dim]` arrays into a bundle.
///
/// # Safety
/// `q`, `k`, `v` must each be valid for `heads * seq_len * head_dim` reads;
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn pisa_bundle_from_data(
    heads: usize,
    seq_len: usize,
    head_dim: usize,
    dtype: PisaDtypeCode,
    q: *const f64,
    k: *const f64,
    v: *const f64,
    out: *mut *mut PisaBundle,
) -> PisaStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let n = heads
            .checked_mul(seq_len)
            .and_then(|x| x.checked_mul(head_dim))
            .ok_or_else(|| Failure(PisaStatus::InvalidArgument, "shape overflows".into()))?;
        let copy = |p: *const f64, name: &str| -> Result<Vec<f64>, Failure> {
            if p.is_null() {
                return fail(PisaStatus::NullPointer, format!("{name} is null"));
            }
            Ok(std::slice::from_raw_parts(p, n).to_vec())
        };
        let dtype = match dtype {
            PisaDtypeCode::F32 => Dtype::F32,
            PisaDtypeCode::F64 => Dtype::F64,
        };
        let b = TensorBundle::new(heads, seq_len, head_dim, dtype, copy(q, "q")?, copy(k, "k")?, copy(v, "v")?)?;
        store(out, PisaBundle(b));
        Ok(())
    })
}

/// Reads a PQKV file.
///
/// # Safety
/// `path` must be a null-terminated string; `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn pisa_bundle_read(path: *const c_char, out: *mut *mut PisaBundle) -> PisaStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let path = path_arg(path)?;
        let f = File::open(path).map_err(io_err)?;
        store(out, PisaBundle(read_bundle(&mut BufReader::new(f))?));
        Ok(())
    })
}

/// Writes a PQKV file.
///
/// # Safety
/// `bundle` must come from this library; `path` must be null-terminated.
#[no_mangle]
pub unsafe extern "C" fn pisa_bundle_write(bundle: *const PisaBundle, path: *const c_char) -> PisaStatus {
    guard(|| {
        let b = deref(bundle, "bundle")?;
        let path = path_arg(path)?;
        let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
        write_bundle(&b.0, &mut w)?;
        w.flush().map_err(io_err)
    })
}

/// # Safety
/// `bundle` must come from this library; the out pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn pisa_bundle_shape(
    bundle: *const PisaBundle,
    heads: *mut usize,
    seq_len: *mut usize,
    head_dim: *mut usize,
) -> PisaStatus {
    guard(|| {
        let b = &deref(bundle, "bundle")?.0;
        for (p, x) in [(heads, b.num_heads()), (seq_len, b.seq_len()), (head_dim, b.head_dim())] {
            if let Some(p) = p.as_mut() {
                *p = x;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `bundle` must be null or come from this library, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pisa_bundle_free(bundle: *mut PisaBundle) {
    if !bundle.is_null() {
        drop(Box::from_raw(bundle));
    }
}

fn variant(code: PisaVariantCode) -> PisaVariant {
    match code {
        PisaVariantCode::SparseOnly => PisaVariant::SparseOnly,
        PisaVariantCode::Zeroth => PisaVariant::Zeroth,
        PisaVariantCode::BlockFirst => PisaVariant::BlockFirst,
        PisaVariantCode::Hybrid => PisaVariant::Hybrid,
        PisaVariantCode::GlobalCentroid => PisaVariant::GlobalCentroid,
    }
}

/// Block statistics, routing and one piecewise pass on every head.
///
/// # Safety
/// `bundle` must come from this library; `opts` must be valid or null for
/// defaults; `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn pisa_run(
    bundle: *const PisaBundle,
    opts: *const PisaRunOptions,
    out: *mut *mut PisaResult,
) -> PisaStatus {
    guard(|| {
        let b = &deref(bundle, "bundle")?.0;
        let out = out_ptr(out, "out")?;
        let o = opts.as_ref().copied().unwrap_or_else(|| pisa_run_options_default());
        let cfg = AttentionConfig {
            block_size: o.block_size,
            group_size: o.group_size,
            scale: None,
            accum: if o.accum_f32 { Accum::F32 } else { Accum::F64 },
            deterministic: true,
        };
        let router = RouterConfig {
            strategy: match o.strategy {
                PisaStrategyCode::Plain => Strategy::Plain,
                PisaStrategyCode::CovarianceAware => Strategy::CovarianceAware,
            },
            epsilon: o.epsilon,
            ..RouterConfig::default()
        };
        let popts = PisaOptions {
            path: if o.streaming { ExecPath::Streaming } else { ExecPath::Reference },
            ..PisaOptions::default()
        };
        let run = pisa_multihead(b, o.sparsity, &router, variant(o.variant), &cfg, &popts)?;
        let (outputs, denominators) = run.heads.into_iter().map(|h| (h.output.o, h.output.denom)).unzip();
        store(
            out,
            PisaResult {
                outputs,
                denominators,
                realized_sparsity: run.realized_sparsity,
            },
        );
        Ok(())
    })
}

/// Exact softmax attention on every head.
///
/// # Safety
/// `bundle` must come from this library; `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn pisa_dense(bundle: *const PisaBundle, out: *mut *mut PisaResult) -> PisaStatus {
    guard(|| {
        let b = &deref(bundle, "bundle")?.0;
        let out = out_ptr(out, "out")?;
        let scale = 1.0 / (b.head_dim() as f64).sqrt();
        let mut outputs = Vec::with_capacity(b.num_heads());
        for h in b.heads() {
            outputs.push(dense_naive(&h.q, &h.k, &h.v, scale)?);
        }
        store(
            out,
            PisaResult {
                denominators: Vec::new(),
                outputs,
                realized_sparsity: 0.0,
            },
        );
        Ok(())
    })
}

unsafe fn head_of<'a>(result: *const PisaResult, head: usize) -> Result<(&'a PisaResult, &'a Mat), Failure> {
    let r = deref(result, "result")?;
    match r.outputs.get(head) {
        Some(m) => Ok((r, m)),
        None => fail(
            PisaStatus::InvalidArgument,
            format!("head {head} out of range ({} heads)", r.outputs.len()),
        ),
    }
}

/// # Safety
/// `result` must come from this library; the out pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn pisa_result_shape(
    result: *const PisaResult,
    heads: *mut usize,
    rows: *mut usize,
    cols: *mut usize,
    realized_sparsity: *mut f64,
) -> PisaStatus {
    guard(|| {
        let (r, m) = head_of(result, 0)?;
        for (p, x) in [(heads, r.outputs.len()), (rows, m.rows()), (cols, m.cols())] {
            if let Some(p) = p.as_mut() {
                *p = x;
            }
        }
        if let Some(p) = realized_sparsity.as_mut() {
            *p = r.realized_sparsity;
        }
        Ok(())
    })
}

/// Copies one head's `rows x cols` output, row-major, into `buf`.
///
/// # Safety
/// `result` must come from this library; `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn pisa_result_output(result: *const PisaResult, head: usize, buf: *mut f64, len: usize) -> PisaStatus {
    guard(|| {
        let (_, m) = head_of(result, head)?;
        copy_out(m.as_slice(), buf, len)
    })
}

/// Copies one head's per-row denominators `D_t` into `buf` (not available
/// for results of [`pisa_dense`]).
///
/// # Safety
/// `result` must come from this library; `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn pisa_result_denominators(result: *const PisaResult, head: usize, buf: *mut f64, len: usize) -> PisaStatus {
    guard(|| {
        let (r, _) = head_of(result, head)?;
        match r.denominators.get(head) {
            Some(d) => copy_out(d, buf, len),
            None => fail(PisaStatus::InvalidArgument, "result has no denominators"),
        }
    })
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> Result<(), Failure> {
    if buf.is_null() {
        return fail(PisaStatus::NullPointer, "buf is null");
    }
    if len != src.len() {
        return fail(
            PisaStatus::InvalidArgument,
            format!("buffer holds {len} values, need {}", src.len()),
        );
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, len);
    Ok(())
}

/// Error metrics of one head of `approx` against the same head of `reference`.
///
/// # Safety
/// Both results must come from this library; `metrics` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn pisa_compare(
    approx: *const PisaResult,
    reference: *const PisaResult,
    head: usize,
    metrics: *mut PisaErrorMetrics,
) -> PisaStatus {
    guard(|| {
        let (_, a) = head_of(approx, head)?;
        let (_, r) = head_of(reference, head)?;
        let out = out_ptr(metrics, "metrics")?;
        let e = compare_outputs(a, r)?;
        *out = PisaErrorMetrics {
            l1_rel: e.l1_rel,
            l2_rel: e.l2_rel,
            max_abs: e.max_abs,
        };
        Ok(())
    })
}

/// # Safety
/// `result` must be null or come from this library, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pisa_result_free(result: *mut PisaResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}
