//! Multi-head Q/K/V bundles, the PQKV binary format, and synthetic generators.
//!
//! # PQKV, version 1
//!
//! Little-endian throughout. A 24-byte header followed by the Q, K and V
//! payloads, each row-major `[heads][seq_len][head_dim]`:
//!
//! | offset | size | field                                 |
//! |--------|------|---------------------------------------|
//! | 0      | 4    | magic `b"PQKV"`                       |
//! | 4      | 4    | version, `u32` = 1                    |
//! | 8      | 4    | dtype, `u32` (1 = f32, 2 = f64)       |
//! | 12     | 4    | num_heads, `u32`                      |
//! | 16     | 4    | head_dim, `u32`                       |
//! | 20     | 4    | seq_len, `u32`                        |
//!
//! # Random streams
//!
//! All generators draw from ChaCha8 (the 8-round ChaCha stream cipher used as
//! a counter-based generator) keyed with the 32-byte key
//! `seed.to_le_bytes() || [0u8; 24]`, stream 0. Standard normals come from the
//! Box-Muller transform applied to consecutive pairs of 53-bit uniforms
//! `u = ((x >> 11) + 1) * 2^-53` in `(0, 1]`, emitting the cosine branch then
//! the sine branch. This construction is fixed so that generated files are
//! reproducible from other languages.

use std::io::{Read, Write};

use rand_chacha::ChaCha8Rng;
use rand_core::{Rng, SeedableRng};

use crate::error::{PisaError, Result, TensorRole};
use crate::mat::Mat;

pub const MAGIC: &[u8; 4] = b"PQKV";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u32 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            1 => Ok(Dtype::F32),
            2 => Ok(Dtype::F64),
            other => Err(PisaError::UnsupportedDtype(other)),
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    fn round(self, x: f64) -> f64 {
        match self {
            Dtype::F32 => x as f32 as f64,
            Dtype::F64 => x,
        }
    }
}

/// One head's Q, K, V as owned matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub q: Mat,
    pub k: Mat,
    pub v: Mat,
}

/// Multi-head Q/K/V tensors of shape `[num_heads][seq_len][head_dim]`.
///
/// Values are held as `f64`; an `F32` bundle only ever holds values that are
/// exactly representable in `f32`, so the on-disk round trip is lossless.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBundle {
    num_heads: usize,
    seq_len: usize,
    head_dim: usize,
    dtype: Dtype,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
}

impl TensorBundle {
    /// Builds a bundle, rounding values to `dtype` and checking every invariant.
    pub fn new(
        num_heads: usize,
        seq_len: usize,
        head_dim: usize,
        dtype: Dtype,
        q: Vec<f64>,
        k: Vec<f64>,
        v: Vec<f64>,
    ) -> Result<Self> {
        check_dims(num_heads, seq_len, head_dim)?;
        let n = num_heads * seq_len * head_dim;
        for (role, t) in [(TensorRole::Q, &q), (TensorRole::K, &k), (TensorRole::V, &v)] {
            if t.len() != n {
                return Err(PisaError::InvalidDimension(format!(
                    "{role} has {} values, expected {n}",
                    t.len()
                )));
            }
        }
        let mut b = Self {
            num_heads,
            seq_len,
            head_dim,
            dtype,
            q,
            k,
            v,
        };
        b.round_to_dtype();
        b.check_finite()?;
        Ok(b)
    }

    /// Builds a bundle from per-head matrices.
    pub fn from_heads(dtype: Dtype, heads: &[Head]) -> Result<Self> {
        let first = heads
            .first()
            .ok_or_else(|| PisaError::InvalidDimension("no heads".into()))?;
        let (l, d) = (first.q.rows(), first.q.cols());
        let mut q = Vec::new();
        let mut k = Vec::new();
        let mut v = Vec::new();
        for h in heads {
            for m in [&h.q, &h.k, &h.v] {
                if m.rows() != l || m.cols() != d {
                    return Err(PisaError::InvalidDimension(format!(
                        "head shape {}x{} differs from {l}x{d}",
                        m.rows(),
                        m.cols()
                    )));
                }
            }
            q.extend_from_slice(h.q.as_slice());
            k.extend_from_slice(h.k.as_slice());
            v.extend_from_slice(h.v.as_slice());
        }
        Self::new(heads.len(), l, d, dtype, q, k, v)
    }

    pub fn num_heads(&self) -> usize {
        self.num_heads
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn k(&self) -> &[f64] {
        &self.k
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    fn head_len(&self) -> usize {
        self.seq_len * self.head_dim
    }

    pub fn head(&self, h: usize) -> Head {
        assert!(h < self.num_heads, "head {h} out of range");
        let n = self.head_len();
        let slice = |t: &[f64]| {
            Mat::from_vec(self.seq_len, self.head_dim, t[h * n..(h + 1) * n].to_vec())
                .expect("shape is consistent by construction")
        };
        Head {
            q: slice(&self.q),
            k: slice(&self.k),
            v: slice(&self.v),
        }
    }

    pub fn heads(&self) -> Vec<Head> {
        (0..self.num_heads).map(|h| self.head(h)).collect()
    }

    /// Same values re-tagged (and rounded) to another dtype.
    pub fn into_dtype(mut self, dtype: Dtype) -> Self {
        self.dtype = dtype;
        self.round_to_dtype();
        self
    }

    /// Total size of the serialized form.
    pub fn encoded_len(&self) -> u64 {
        HEADER_LEN as u64 + 3 * (self.q.len() * self.dtype.size()) as u64
    }

    fn round_to_dtype(&mut self) {
        if self.dtype == Dtype::F32 {
            for x in self.q.iter_mut().chain(&mut self.k).chain(&mut self.v) {
                *x = *x as f32 as f64;
            }
        }
    }

    fn check_finite(&self) -> Result<()> {
        let n = self.head_len();
        for (role, t) in [(TensorRole::Q, &self.q), (TensorRole::K, &self.k), (TensorRole::V, &self.v)] {
            if let Some(idx) = t.iter().position(|x| !x.is_finite()) {
                return Err(PisaError::NonFiniteValue {
                    tensor: role,
                    head: idx / n,
                    row: (idx % n) / self.head_dim,
                    col: idx % self.head_dim,
                });
            }
        }
        Ok(())
    }
}

fn check_dims(heads: usize, seq_len: usize, head_dim: usize) -> Result<()> {
    if heads == 0 || seq_len == 0 || head_dim == 0 {
        return Err(PisaError::InvalidDimension(format!(
            "heads={heads}, seq_len={seq_len}, head_dim={head_dim}: all must be >= 1"
        )));
    }
    if heads > u32::MAX as usize || head_dim > u32::MAX as usize || seq_len > u32::MAX as usize {
        return Err(PisaError::InvalidDimension(
            "num_heads, seq_len and head_dim must fit in u32".into(),
        ));
    }
    Ok(())
}

/// Serializes `bundle` as PQKV v1 and returns the number of bytes written.
pub fn write_bundle<W: Write>(bundle: &TensorBundle, mut sink: W) -> Result<u64> {
    let mut header = Vec::with_capacity(HEADER_LEN);
    header.extend_from_slice(MAGIC);
    header.extend_from_slice(&VERSION.to_le_bytes());
    header.extend_from_slice(&bundle.dtype.code().to_le_bytes());
    header.extend_from_slice(&(bundle.num_heads as u32).to_le_bytes());
    header.extend_from_slice(&(bundle.head_dim as u32).to_le_bytes());
    header.extend_from_slice(&(bundle.seq_len as u32).to_le_bytes());

    let mut offset = 0u64;
    let mut emit = |bytes: &[u8], offset: &mut u64| -> Result<()> {
        sink.write_all(bytes).map_err(|source| PisaError::Io {
            offset: *offset,
            source,
        })?;
        *offset += bytes.len() as u64;
        Ok(())
    };
    emit(&header, &mut offset)?;

    const CHUNK: usize = 8192;
    let mut buf = Vec::with_capacity(CHUNK * 8);
    for t in [&bundle.q, &bundle.k, &bundle.v] {
        for chunk in t.chunks(CHUNK) {
            buf.clear();
            match bundle.dtype {
                Dtype::F32 => chunk
                    .iter()
                    .for_each(|&x| buf.extend_from_slice(&(x as f32).to_le_bytes())),
                Dtype::F64 => chunk
                    .iter()
                    .for_each(|&x| buf.extend_from_slice(&x.to_le_bytes())),
            }
            emit(&buf, &mut offset)?;
        }
    }
    sink.flush().map_err(|source| PisaError::Io { offset, source })?;
    Ok(offset)
}

/// Reads as many bytes as the source yields, up to `buf.len()`.
fn read_full<R: Read>(src: &mut R, buf: &mut [u8], offset: u64) -> Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match src.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(source) => {
                return Err(PisaError::Io {
                    offset: offset + got as u64,
                    source,
                })
            }
        }
    }
    Ok(got)
}

/// Parses a PQKV v1 stream into a bundle.
pub fn read_bundle<R: Read>(mut source: R) -> Result<TensorBundle> {
    let mut header = [0u8; HEADER_LEN];
    let got = read_full(&mut source, &mut header, 0)?;
    if got >= 4 && &header[..4] != MAGIC {
        return Err(PisaError::BadMagic {
            found: header[..4].try_into().expect("4 bytes"),
        });
    }
    if got < HEADER_LEN {
        return Err(PisaError::MalformedFile {
            expected: HEADER_LEN as u64,
            actual: got as u64,
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().expect("4 bytes"));
    let version = u32_at(4);
    if version != VERSION {
        return Err(PisaError::UnsupportedVersion(version));
    }
    let dtype = Dtype::from_code(u32_at(8))?;
    let heads = u32_at(12) as usize;
    let head_dim = u32_at(16) as usize;
    let seq_len = u32_at(20) as usize;
    check_dims(heads, seq_len, head_dim)?;

    let per_tensor = heads
        .checked_mul(seq_len)
        .and_then(|x| x.checked_mul(head_dim))
        .ok_or_else(|| PisaError::InvalidDimension("tensor size overflows".into()))?;
    let payload = (per_tensor as u64)
        .checked_mul(3 * dtype.size() as u64)
        .ok_or_else(|| PisaError::InvalidDimension("payload size overflows".into()))?;
    let expected = HEADER_LEN as u64 + payload;

    let mut bytes = Vec::new();
    (&mut source)
        .take(payload)
        .read_to_end(&mut bytes)
        .map_err(|source| PisaError::Io {
            offset: HEADER_LEN as u64,
            source,
        })?;
    if (bytes.len() as u64) < payload {
        return Err(PisaError::MalformedFile {
            expected,
            actual: HEADER_LEN as u64 + bytes.len() as u64,
        });
    }
    let mut rest = Vec::new();
    source.read_to_end(&mut rest).map_err(|source| PisaError::Io {
        offset: expected,
        source,
    })?;
    if !rest.is_empty() {
        return Err(PisaError::MalformedFile {
            expected,
            actual: expected + rest.len() as u64,
        });
    }

    let decode = |raw: &[u8]| -> Vec<f64> {
        match dtype {
            Dtype::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
            Dtype::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        }
    };
    let stride = per_tensor * dtype.size();
    let q = decode(&bytes[..stride]);
    let k = decode(&bytes[stride..2 * stride]);
    let v = decode(&bytes[2 * stride..]);
    TensorBundle::new(heads, seq_len, head_dim, dtype, q, k, v)
}

/// Standard-normal sampler over a ChaCha8 stream (see the module docs).
pub struct NormalStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(seed: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        Self {
            rng: ChaCha8Rng::from_seed(key),
            spare: None,
        }
    }

    /// Uniform in `(0, 1]` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Uniform integer in `0..n` (multiply-shift; `n` must be > 0).
    pub fn below(&mut self, n: usize) -> usize {
        ((self.rng.next_u64() as u128 * n as u128) >> 64) as usize
    }
}

/// I.i.d. `N(0, std^2)` entries for Q, then K, then V.
pub fn gen_gaussian(seed: u64, heads: usize, seq_len: usize, head_dim: usize, std: f64) -> Result<TensorBundle> {
    check_dims(heads, seq_len, head_dim)?;
    if !(std > 0.0) || !std.is_finite() {
        return Err(PisaError::DegenerateScale(std));
    }
    let n = heads * seq_len * head_dim;
    let mut rng = NormalStream::new(seed);
    let mut draw = |_| std * rng.next_normal();
    let q: Vec<f64> = (0..n).map(&mut draw).collect();
    let k: Vec<f64> = (0..n).map(&mut draw).collect();
    let v: Vec<f64> = (0..n).map(&mut draw).collect();
    TensorBundle::new(heads, seq_len, head_dim, Dtype::F64, q, k, v)
}

/// Parameters of the clustered generator besides the shape and seed.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClusterParams {
    pub n_clusters: usize,
    pub concentration: f64,
    pub noise_std: f64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            n_clusters: 16,
            concentration: 4.0,
            noise_std: 0.3,
        }
    }
}

/// Number of cluster centers each query run is aligned with.
const QUERY_SUBSET: usize = 2;

/// Keys grouped into contiguous per-cluster runs, queries aligned with a few centers.
///
/// Per head: `n_clusters` centers `c_m ~ N(0, I_d)`; key row `t` belongs to
/// cluster `floor(t * n_clusters / L)` and equals `c_m + noise_std * z`. Query
/// rows are split into the same runs; each run picks `min(2, n_clusters)`
/// distinct centers `A` and its rows are `(concentration / sqrt(d)) * sum_{m in A} c_m + z`.
/// Values are i.i.d. `N(0, 1)`. With `concentration = 0` the queries are plain
/// standard normals.
pub fn gen_clustered(
    seed: u64,
    heads: usize,
    seq_len: usize,
    head_dim: usize,
    n_clusters: usize,
    concentration: f64,
    noise_std: f64,
) -> Result<TensorBundle> {
    check_dims(heads, seq_len, head_dim)?;
    if n_clusters == 0 || n_clusters > seq_len {
        return Err(PisaError::InvalidDimension(format!(
            "n_clusters must be in [1, seq_len={seq_len}], got {n_clusters}"
        )));
    }
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(PisaError::DegenerateScale(noise_std));
    }
    if !(concentration >= 0.0) || !concentration.is_finite() {
        return Err(PisaError::InvalidDimension(format!(
            "concentration must be finite and >= 0, got {concentration}"
        )));
    }

    let d = head_dim;
    let n = heads * seq_len * d;
    let mut q = Vec::with_capacity(n);
    let mut k = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    let mut rng = NormalStream::new(seed);
    let align = concentration / (d as f64).sqrt();
    let run_of = |t: usize| t * n_clusters / seq_len;

    for _ in 0..heads {
        let centers: Vec<f64> = (0..n_clusters * d).map(|_| rng.next_normal()).collect();
        let center = |m: usize| &centers[m * d..(m + 1) * d];

        for t in 0..seq_len {
            let c = center(run_of(t));
            for &cj in c {
                k.push(cj + noise_std * rng.next_normal());
            }
        }

        let subset_len = QUERY_SUBSET.min(n_clusters);
        let mut subsets = Vec::with_capacity(n_clusters);
        for _ in 0..n_clusters {
            let mut picked: Vec<usize> = Vec::with_capacity(subset_len);
            while picked.len() < subset_len {
                let m = rng.below(n_clusters);
                if !picked.contains(&m) {
                    picked.push(m);
                }
            }
            subsets.push(picked);
        }
        let mut base = vec![0.0; d];
        for t in 0..seq_len {
            base.fill(0.0);
            for &m in &subsets[run_of(t)] {
                for (b, &cj) in base.iter_mut().zip(center(m)) {
                    *b += align * cj;
                }
            }
            for &b in &base {
                q.push(b + rng.next_normal());
            }
        }

        for _ in 0..seq_len * d {
            v.push(rng.next_normal());
        }
    }
    TensorBundle::new(heads, seq_len, d, Dtype::F64, q, k, v)
}

/// Rescales every Q and K row to Euclidean norm `target_norm`; V is untouched.
pub fn qk_normalize(bundle: &TensorBundle, target_norm: f64) -> Result<TensorBundle> {
    if !(target_norm > 0.0) || !target_norm.is_finite() {
        return Err(PisaError::DegenerateScale(target_norm));
    }
    let d = bundle.head_dim;
    let l = bundle.seq_len;
    let normalize = |t: &[f64], role: TensorRole| -> Result<Vec<f64>> {
        let mut out = t.to_vec();
        for (idx, row) in out.chunks_exact_mut(d).enumerate() {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(PisaError::ZeroRow {
                    tensor: role,
                    head: idx / l,
                    row: idx % l,
                });
            }
            let s = target_norm / norm;
            row.iter_mut().for_each(|x| *x = bundle.dtype.round(*x * s));
        }
        Ok(out)
    };
    let q = normalize(&bundle.q, TensorRole::Q)?;
    let k = normalize(&bundle.k, TensorRole::K)?;
    TensorBundle::new(bundle.num_heads, l, d, bundle.dtype, q, k, bundle.v.clone())
}

/// `max_t ||q_t||_2` over one head's queries.
pub fn max_row_norm(m: &Mat) -> f64 {
    m.iter_rows()
        .map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_bundle() -> TensorBundle {
        let vals: Vec<f64> = (0..4).map(|i| i as f64 + 0.5).collect();
        TensorBundle::new(1, 2, 2, Dtype::F32, vals.clone(), vals.clone(), vals).unwrap()
    }

    #[test]
    fn header_plus_payload_size() {
        let mut buf = Vec::new();
        let n = write_bundle(&small_bundle(), &mut buf).unwrap();
        assert_eq!(n, 72);
        assert_eq!(buf.len(), 72);
        assert_eq!(&buf[..4], b"PQKV");
    }

    #[test]
    fn round_trip_gaussian() {
        let b = gen_gaussian(0, 2, 64, 16, 1.0).unwrap();
        let mut buf = Vec::new();
        write_bundle(&b, &mut buf).unwrap();
        assert_eq!(read_bundle(buf.as_slice()).unwrap(), b);
        let b32 = b.into_dtype(Dtype::F32);
        buf.clear();
        write_bundle(&b32, &mut buf).unwrap();
        assert_eq!(read_bundle(buf.as_slice()).unwrap(), b32);
    }

    #[test]
    fn truncated_payload_is_malformed() {
        let mut buf = Vec::new();
        write_bundle(&small_bundle(), &mut buf).unwrap();
        buf.truncate(60);
        match read_bundle(buf.as_slice()) {
            Err(PisaError::MalformedFile { expected, actual }) => {
                assert_eq!((expected, actual), (72, 60));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn trailing_bytes_are_malformed() {
        let mut buf = Vec::new();
        write_bundle(&small_bundle(), &mut buf).unwrap();
        buf.push(0);
        assert!(matches!(
            read_bundle(buf.as_slice()),
            Err(PisaError::MalformedFile { expected: 72, actual: 73 })
        ));
    }

    #[test]
    fn bad_magic() {
        let mut buf = Vec::new();
        write_bundle(&small_bundle(), &mut buf).unwrap();
        buf[0] = b'X';
        assert!(matches!(read_bundle(buf.as_slice()), Err(PisaError::BadMagic { .. })));
    }

    #[test]
    fn bad_version_and_dtype() {
        let mut buf = Vec::new();
        write_bundle(&small_bundle(), &mut buf).unwrap();
        let mut v2 = buf.clone();
        v2[4] = 2;
        assert!(matches!(read_bundle(v2.as_slice()), Err(PisaError::UnsupportedVersion(2))));
        let mut d3 = buf;
        d3[8] = 3;
        assert!(matches!(read_bundle(d3.as_slice()), Err(PisaError::UnsupportedDtype(3))));
    }

    #[test]
    fn infinity_is_located() {
        let mut buf = Vec::new();
        write_bundle(&small_bundle(), &mut buf).unwrap();
        // K payload starts after 24 + 16 bytes; element 3 is row 1, col 1.
        let off = 24 + 16 + 3 * 4;
        buf[off..off + 4].copy_from_slice(&f32::INFINITY.to_le_bytes());
        match read_bundle(buf.as_slice()) {
            Err(PisaError::NonFiniteValue { tensor, head, row, col }) => {
                assert_eq!((tensor, head, row, col), (TensorRole::K, 0, 1, 1));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn write_failure_reports_offset() {
        struct Limited(usize);
        impl Write for Limited {
            fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
                if self.0 == 0 {
                    return Err(std::io::Error::other("full"));
                }
                let n = buf.len().min(self.0);
                self.0 -= n;
                Ok(n)
            }
            fn flush(&mut self) -> std::io::Result<()> {
                Ok(())
            }
        }
        let err = write_bundle(&small_bundle(), Limited(24)).unwrap_err();
        assert!(matches!(err, PisaError::Io { offset: 24, .. }), "{err:?}");
    }

    #[test]
    fn gaussian_is_deterministic() {
        let a = gen_gaussian(0, 1, 128, 32, 1.0).unwrap();
        let b = gen_gaussian(0, 1, 128, 32, 1.0).unwrap();
        let bits = |x: &TensorBundle| x.q().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(gen_gaussian(1, 1, 128, 32, 1.0).unwrap(), a);
    }

    #[test]
    fn gaussian_sample_mean_near_zero() {
        let b = gen_gaussian(0, 1, 4096, 64, 1.0).unwrap();
        let mean = b.q().iter().sum::<f64>() / b.q().len() as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        let var = b.q().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / b.q().len() as f64;
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn gaussian_rejects_degenerate_input() {
        assert!(matches!(gen_gaussian(0, 1, 8, 4, 0.0), Err(PisaError::DegenerateScale(_))));
        assert!(matches!(gen_gaussian(0, 1, 0, 4, 1.0), Err(PisaError::InvalidDimension(_))));
    }

    #[test]
    fn clustered_single_cluster_without_noise() {
        let b = gen_clustered(3, 1, 32, 4, 1, 2.0, 0.0).unwrap();
        let h = b.head(0);
        for r in 1..32 {
            assert_eq!(h.k.row(r), h.k.row(0));
        }
    }

    #[test]
    fn clustered_rejects_too_many_clusters() {
        assert!(matches!(
            gen_clustered(0, 1, 8, 4, 9, 1.0, 0.1),
            Err(PisaError::InvalidDimension(_))
        ));
    }

    #[test]
    fn qk_normalize_analytic_row() {
        let b = TensorBundle::new(1, 1, 2, Dtype::F64, vec![3.0, 4.0], vec![3.0, 4.0], vec![1.0, 1.0]).unwrap();
        let n = qk_normalize(&b, 1.0).unwrap();
        assert!((n.q()[0] - 0.6).abs() < 1e-15 && (n.q()[1] - 0.8).abs() < 1e-15);
        assert_eq!(n.v(), b.v());
    }

    #[test]
    fn qk_normalize_norms_and_idempotence() {
        let b = gen_gaussian(5, 2, 32, 8, 2.0).unwrap();
        let once = qk_normalize(&b, 3.0).unwrap();
        let twice = qk_normalize(&once, 3.0).unwrap();
        for row in once.q().chunks(8).chain(once.k().chunks(8)) {
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 3.0).abs() <= 3.0 * 1e-6);
        }
        for (a, b) in once.q().iter().zip(twice.q()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn qk_normalize_zero_row() {
        let b = TensorBundle::new(1, 2, 2, Dtype::F64, vec![1.0, 0.0, 0.0, 0.0], vec![1.0; 4], vec![1.0; 4]).unwrap();
        assert!(matches!(
            qk_normalize(&b, 1.0),
            Err(PisaError::ZeroRow { tensor: TensorRole::Q, head: 0, row: 1 })
        ));
    }
}
