//! Independent oracles shared by the integration tests. Nothing here calls
//! the library's norm, LMI or interconnection code.
#![allow(dead_code)]

use nalgebra::{DMatrix, Matrix2};
use nalgebra::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use softlimb::lti::StateSpace;

pub type C64 = Complex<f64>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `C (jw I - A)^-1 B + D` by complex Gaussian elimination.
pub fn response(sys: &StateSpace, w: f64) -> DMatrix<C64> {
    let n = sys.a.nrows();
    let m = sys.b.ncols();
    let mut lhs = DMatrix::<C64>::from_fn(n, n, |i, j| {
        let diag = if i == j { C64::new(0.0, w) } else { C64::new(0.0, 0.0) };
        diag - C64::new(sys.a[(i, j)], 0.0)
    });
    let mut rhs = DMatrix::<C64>::from_fn(n, m, |i, j| C64::new(sys.b[(i, j)], 0.0));
    for col in 0..n {
        let piv = (col..n).max_by(|&a, &b| lhs[(a, col)].norm().total_cmp(&lhs[(b, col)].norm())).unwrap();
        lhs.swap_rows(col, piv);
        rhs.swap_rows(col, piv);
        let p = lhs[(col, col)];
        for r in 0..n {
            if r != col {
                let f = lhs[(r, col)] / p;
                for c in 0..n {
                    let v = lhs[(col, c)];
                    lhs[(r, c)] -= f * v;
                }
                for c in 0..m {
                    let v = rhs[(col, c)];
                    rhs[(r, c)] -= f * v;
                }
            }
        }
    }
    for r in 0..n {
        let p = lhs[(r, r)];
        for c in 0..m {
            rhs[(r, c)] /= p;
        }
    }
    let c = sys.c.map(|v| C64::new(v, 0.0));
    let d = sys.d.map(|v| C64::new(v, 0.0));
    c * rhs + d
}

/// Largest singular value via the top eigenvalue of `M^H M` (power-free:
/// Hermitian eigen of the real embedding).
pub fn sigma_max(m: &DMatrix<C64>) -> f64 {
    let (r, c) = m.shape();
    let mut emb = DMatrix::<f64>::zeros(2 * r, 2 * c);
    for i in 0..r {
        for j in 0..c {
            let z = m[(i, j)];
            emb[(i, j)] = z.re;
            emb[(i, c + j)] = -z.im;
            emb[(r + i, j)] = z.im;
            emb[(r + i, c + j)] = z.re;
        }
    }
    let g = emb.transpose() * &emb;
    g.symmetric_eigen().eigenvalues.max().max(0.0).sqrt()
}

/// Brute-force `sup_w sigma_max` on a log grid over `[1e-3, 1e5]` plus
/// `w = 0`, then golden-section refinement around the best grid points.
pub fn grid_hinf(sys: &StateSpace, points: usize) -> f64 {
    let f = |w: f64| sigma_max(&response(sys, w));
    let (lo, hi) = (-3.0f64, 5.0f64);
    let grid: Vec<f64> = (0..points).map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (points - 1) as f64)).collect();
    let vals: Vec<f64> = grid.iter().map(|&w| f(w)).collect();
    let mut best = f(0.0).max(f(1e9));
    let mut idx: Vec<usize> = (0..points).collect();
    idx.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
    for &i in idx.iter().take(5) {
        best = best.max(vals[i]);
        let a0 = grid[i.saturating_sub(1)];
        let b0 = grid[(i + 1).min(points - 1)];
        let (mut a, mut b) = (a0.ln(), b0.ln());
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..80 {
            let x1 = b - g * (b - a);
            let x2 = a + g * (b - a);
            if f(x1.exp()) > f(x2.exp()) {
                b = x2;
            } else {
                a = x1;
            }
        }
        best = best.max(f((0.5 * (a + b)).exp()));
    }
    best
}

/// Random stable system with well-separated, not lightly damped poles.
pub fn random_stable(r: &mut ChaCha8Rng, n: usize, m: usize, p: usize) -> StateSpace {
    // block-diagonal real / complex-pair modes in a random orthogonal basis
    let mut a = DMatrix::zeros(n, n);
    let mut i = 0;
    while i < n {
        let sigma: f64 = -r.random_range(0.1..10.0);
        if i + 1 < n && r.random_bool(0.5) {
            let wn = r.random_range(0.1..10.0) * sigma.abs().max(0.5);
            a[(i, i)] = sigma;
            a[(i + 1, i + 1)] = sigma;
            a[(i, i + 1)] = wn;
            a[(i + 1, i)] = -wn;
            i += 2;
        } else {
            a[(i, i)] = sigma;
            i += 1;
        }
    }
    let q = DMatrix::from_fn(n, n, |_, _| r.random_range(-1.0..1.0)).qr().q();
    let a = &q * a * q.transpose();
    let b = DMatrix::from_fn(n, m, |_, _| r.random_range(-1.0..1.0));
    let c = DMatrix::from_fn(p, n, |_, _| r.random_range(-1.0..1.0));
    let d = DMatrix::from_fn(p, m, |_, _| r.random_range(-0.5..0.5));
    StateSpace::new(a, b, c, d).unwrap()
}

/// Beam-structured gain `[[a, a], [b, -b]]` with positive random entries.
pub fn random_beam_gain(r: &mut ChaCha8Rng) -> Matrix2<f64> {
    let a = 10f64.powf(r.random_range(-2.0..1.0));
    let b = 10f64.powf(r.random_range(-2.0..1.0));
    Matrix2::new(a, a, b, -b)
}

/// Closed-form saturation-loop transfer `m(s)`, scalar part of `M11`.
pub fn m11_closed_form(kp: f64, ki: f64, w: f64) -> C64 {
    let s = C64::new(0.0, w);
    let pole = ki * kp / (1.0 + kp);
    C64::new(kp / (1.0 + kp), 0.0) - C64::new(ki / (1.0 + kp).powi(2), 0.0) / (s + pole)
}

/// Block matrix of the multiplier LMI, assembled entry by entry.
pub fn lmi_block_oracle(sys: &StateSpace, q: &DMatrix<f64>, w: &DMatrix<f64>, delta: f64) -> DMatrix<f64> {
    let n = sys.a.nrows();
    let m = sys.b.ncols();
    let mut out = DMatrix::zeros(n + m, n + m);
    for i in 0..n {
        for j in 0..n {
            let mut v = 0.0;
            for k in 0..n {
                v += sys.a[(k, i)] * q[(k, j)] + q[(i, k)] * sys.a[(k, j)];
            }
            out[(i, j)] = v;
        }
        for j in 0..m {
            let mut v = 0.0;
            for k in 0..n {
                v += q[(i, k)] * sys.b[(k, j)];
            }
            for k in 0..m {
                v -= sys.c[(k, i)] * w[(k, j)];
            }
            out[(i, n + j)] = v;
            out[(n + j, i)] = v;
        }
    }
    for i in 0..m {
        for j in 0..m {
            let mut v = if i == j { delta } else { 0.0 } - 2.0 * w[(i, j)];
            for k in 0..m {
                v -= w[(i, k)] * sys.d[(k, j)] + sys.d[(k, i)] * w[(k, j)];
            }
            out[(n + i, n + j)] = v;
        }
    }
    out
}

pub fn sym_max_eig(m: &DMatrix<f64>) -> f64 {
    ((m + m.transpose()) * 0.5).symmetric_eigen().eigenvalues.max()
}

pub fn sym_min_eig(m: &DMatrix<f64>) -> f64 {
    ((m + m.transpose()) * 0.5).symmetric_eigen().eigenvalues.min()
}
