//! Independent oracles for integration tests. Nothing here calls into the
//! library's numeric kernels; the code is deliberately plain loops.
#![allow(dead_code)]

use pisa_core::{Mat, PisaVariant};

pub fn rows(m: &Mat) -> Vec<Vec<f64>> {
    m.iter_rows().map(<[f64]>::to_vec).collect()
}

pub fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for i in 0..a.len() {
        num = num.max((a[i] - b[i]).abs());
        den = den.max(b[i].abs());
    }
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

pub fn flat(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter().flatten().copied().collect()
}

/// Softmax attention with the full score matrix materialized. `allowed(t, s)`
/// masks key `s` out of row `t` when false.
pub fn attention_oracle(q: &Mat, k: &Mat, v: &Mat, scale: f64, allowed: &dyn Fn(usize, usize) -> bool) -> Vec<Vec<f64>> {
    let (l, lk, d, dv) = (q.rows(), k.rows(), q.cols(), v.cols());
    let mut scores = vec![vec![f64::NEG_INFINITY; lk]; l];
    for t in 0..l {
        for s in 0..lk {
            if allowed(t, s) {
                let mut acc = 0.0;
                for c in 0..d {
                    acc += q.get(t, c) * k.get(s, c);
                }
                scores[t][s] = scale * acc;
            }
        }
    }
    let mut out = vec![vec![0.0; dv]; l];
    for t in 0..l {
        let m = scores[t].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = scores[t].iter().map(|s| (s - m).exp()).collect();
        let z: f64 = w.iter().sum();
        for s in 0..lk {
            for c in 0..dv {
                out[t][c] += w[s] / z * v.get(s, c);
            }
        }
    }
    out
}

pub fn dense_oracle(q: &Mat, k: &Mat, v: &Mat, scale: f64) -> Vec<Vec<f64>> {
    attention_oracle(q, k, v, scale, &|_, _| true)
}

/// Largest singular value by one-sided Jacobi rotations on the columns.
pub fn svd_max(a: &[Vec<f64>]) -> f64 {
    let m = a.len();
    let n = a[0].len();
    let mut u: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| a[i][j]).collect()).collect();
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                let alpha: f64 = u[p].iter().map(|x| x * x).sum();
                let beta: f64 = u[q].iter().map(|x| x * x).sum();
                let gamma: f64 = u[p].iter().zip(&u[q]).map(|(x, y)| x * y).sum();
                if gamma.abs() <= 1e-300 {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt());
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let (x, y) = (u[p][i], u[q][i]);
                    u[p][i] = c * x - s * y;
                    u[q][i] = s * x + c * y;
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    u.iter()
        .map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

/// Block statistics by hand: centroids, value sums, `H_j` (d x dv) and their mean.
pub struct HandStats {
    pub k_bar: Vec<Vec<f64>>,
    pub v_hat: Vec<Vec<f64>>,
    pub h: Vec<Vec<Vec<f64>>>,
    pub h_bar: Vec<Vec<f64>>,
    pub k_global: Vec<f64>,
}

pub fn hand_stats(k: &Mat, v: &Mat, b: usize) -> HandStats {
    let (d, dv, n) = (k.cols(), v.cols(), k.rows() / b);
    let mut k_bar = vec![vec![0.0; d]; n];
    let mut v_hat = vec![vec![0.0; dv]; n];
    let mut h = vec![vec![vec![0.0; dv]; d]; n];
    for j in 0..n {
        for r in 0..b {
            for c in 0..d {
                k_bar[j][c] += k.get(j * b + r, c) / b as f64;
            }
            for c in 0..dv {
                v_hat[j][c] += v.get(j * b + r, c);
            }
        }
        for r in 0..b {
            for a in 0..d {
                for c in 0..dv {
                    h[j][a][c] += (k.get(j * b + r, a) - k_bar[j][a]) * v.get(j * b + r, c);
                }
            }
        }
    }
    let mut h_bar = vec![vec![0.0; dv]; d];
    for hj in &h {
        for a in 0..d {
            for c in 0..dv {
                h_bar[a][c] += hj[a][c] / n as f64;
            }
        }
    }
    let mut k_global = vec![0.0; d];
    for r in 0..k.rows() {
        for c in 0..d {
            k_global[c] += k.get(r, c) / k.rows() as f64;
        }
    }
    HandStats {
        k_bar,
        v_hat,
        h,
        h_bar,
        k_global,
    }
}

/// The piecewise formulas evaluated literally, without any max shift.
/// `selected[e]` lists the exact blocks of query entry `e`; entries split the
/// query rows evenly. Only safe for moderate score magnitudes.
pub fn piecewise_oracle(
    q: &Mat,
    k: &Mat,
    v: &Mat,
    selected: &[Vec<usize>],
    b: usize,
    variant: PisaVariant,
    scale: f64,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let st = hand_stats(k, v, b);
    let (l, d, dv, n) = (q.rows(), q.cols(), v.cols(), k.rows() / b);
    let per_entry = l / selected.len();
    let mut out = vec![vec![0.0; dv]; l];
    let mut denoms = vec![0.0; l];
    for t in 0..l {
        let sel = &selected[t / per_entry];
        let qt: Vec<f64> = (0..d).map(|c| q.get(t, c)).collect();
        let sq: Vec<f64> = qt.iter().map(|x| scale * x).collect();
        let dotp = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
        let mut num = vec![0.0; dv];
        let mut den = 0.0;
        for &j in sel {
            for r in j * b..(j + 1) * b {
                let kr: Vec<f64> = (0..d).map(|c| k.get(r, c)).collect();
                let p = (scale * dotp(&qt, &kr)).exp();
                den += p;
                for c in 0..dv {
                    num[c] += p * v.get(r, c);
                }
            }
        }
        let unsel: Vec<usize> = if variant == PisaVariant::SparseOnly {
            vec![]
        } else {
            (0..n).filter(|j| !sel.contains(j)).collect()
        };
        let mut alpha_sum = 0.0;
        for &j in &unsel {
            let a = (scale * dotp(&qt, &st.k_bar[j])).exp();
            alpha_sum += a;
            den += b as f64 * a;
            for c in 0..dv {
                num[c] += a * st.v_hat[j][c];
            }
            if variant == PisaVariant::BlockFirst {
                for c in 0..dv {
                    num[c] += a * (0..d).map(|r| sq[r] * st.h[j][r][c]).sum::<f64>();
                }
            }
        }
        let slope = match variant {
            PisaVariant::Hybrid => alpha_sum,
            PisaVariant::GlobalCentroid if !unsel.is_empty() => {
                unsel.len() as f64 * (scale * dotp(&qt, &st.k_global)).exp()
            }
            _ => 0.0,
        };
        if slope != 0.0 {
            for c in 0..dv {
                num[c] += slope * (0..d).map(|r| sq[r] * st.h_bar[r][c]).sum::<f64>();
            }
        }
        for c in 0..dv {
            out[t][c] = num[c] / den;
        }
        denoms[t] = den;
    }
    (out, denoms)
}
