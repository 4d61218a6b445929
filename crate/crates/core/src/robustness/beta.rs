//! Scaled H-infinity bound `inf_W ||W M W^-1||_inf` over a structured
//! constant scaling class.

use nalgebra::{DMatrix, DVector};

use super::interconnection::{DeltaStructure, ScalingClass};
use crate::error::{Error, Result};
use crate::lti::{hinf_norm, similarity_scale, StateSpace};

/// Relative bisection tolerance used for every norm evaluation here.
pub const BETA_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct BetaResult {
    pub beta: f64,
    pub scaling: DMatrix<f64>,
    /// Value with `W = I`, for reference.
    pub beta_identity: f64,
}

/// `||W M W^-1||_inf` for one fixed scaling.
pub fn scaled_norm(m11: &StateSpace, w: &DMatrix<f64>) -> Result<f64> {
    hinf_norm(&similarity_scale(m11, w)?, BETA_TOL)
}

/// Parametrization of the scaling class: full blocks use raw entries,
/// diagonal and scalar blocks use logarithms.
struct Param<'a> {
    structure: &'a DeltaStructure,
}

impl Param<'_> {
    fn to_matrix(&self, x: &[f64]) -> DMatrix<f64> {
        let m = self.structure.channels();
        let mut w = DMatrix::zeros(m, m);
        let mut k = 0;
        for (off, b) in self.structure.offsets() {
            match b.scaling {
                ScalingClass::Full => {
                    for i in 0..b.size {
                        for j in 0..b.size {
                            w[(off + i, off + j)] = x[k];
                            k += 1;
                        }
                    }
                }
                ScalingClass::Diagonal => {
                    for i in 0..b.size {
                        w[(off + i, off + i)] = x[k].exp();
                        k += 1;
                    }
                }
                ScalingClass::ScalarIdentity => {
                    for i in 0..b.size {
                        w[(off + i, off + i)] = x[k].exp();
                    }
                    k += 1;
                }
            }
        }
        w
    }

    /// Projects a block-diagonal `W` into parameters.
    fn from_matrix(&self, w: &DMatrix<f64>) -> Vec<f64> {
        let mut x = Vec::new();
        for (off, b) in self.structure.offsets() {
            let diag_log = |i: usize| w[(off + i, off + i)].abs().max(1e-12).ln();
            match b.scaling {
                ScalingClass::Full => {
                    for i in 0..b.size {
                        for j in 0..b.size {
                            x.push(w[(off + i, off + j)]);
                        }
                    }
                }
                ScalingClass::Diagonal => x.extend((0..b.size).map(diag_log)),
                ScalingClass::ScalarIdentity => {
                    x.push((0..b.size).map(diag_log).sum::<f64>() / b.size as f64);
                }
            }
        }
        x
    }

    fn steps(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::new();
        let mut k = 0;
        for b in &self.structure.blocks {
            let count = match b.scaling {
                ScalingClass::Full => b.size * b.size,
                ScalingClass::Diagonal => b.size,
                ScalingClass::ScalarIdentity => 1,
            };
            let mag = x[k..k + count].iter().fold(0.0f64, |a, v| a.max(v.abs()));
            for _ in 0..count {
                out.push(match b.scaling {
                    ScalingClass::Full => 0.25 * mag.max(1e-3),
                    _ => 0.5,
                });
            }
            k += count;
        }
        out
    }
}

/// Minimizes `f` by Nelder-Mead from `x0` with per-coordinate initial
/// steps. Returns the best point and value.
pub(crate) fn nelder_mead(f: &mut dyn FnMut(&[f64]) -> f64, x0: &[f64], steps: &[f64], max_evals: usize) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += steps[i];
        let v = f(&x);
        simplex.push((x, v));
    }
    let mut evals = n + 1;
    let lerp = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p + t * (q - p)).collect() };
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (lo, hi) = (simplex[0].1, simplex[n].1);
        if (hi - lo).abs() <= 1e-12 * (1.0 + lo.abs()) {
            break;
        }
        let centroid: Vec<f64> =
            (0..n).map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64).collect();
        let worst = simplex[n].0.clone();
        let xr = lerp(&centroid, &worst, -1.0);
        let fr = f(&xr);
        evals += 1;
        if fr < simplex[0].1 {
            let xe = lerp(&centroid, &worst, -2.0);
            let fe = f(&xe);
            evals += 1;
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let xc = lerp(&centroid, &xr, 0.5);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = lerp(&centroid, &worst, 0.5);
                let fc = f(&xc);
                (xc, fc)
            };
            evals += 1;
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for s in simplex.iter_mut().skip(1) {
                    s.0 = lerp(&best, &s.0, 0.5);
                    s.1 = f(&s.0);
                }
                evals += n;
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0)
}

/// Best scaled norm found starting from `w`: the minimum over `W = I`,
/// `w` itself and a local refinement of `w` within the structure class.
pub fn compute_beta(m11: &StateSpace, structure: &DeltaStructure, w: &DMatrix<f64>) -> Result<BetaResult> {
    let m = structure.channels();
    if w.shape() != (m, m) {
        return Err(Error::Dimension(format!("scaling is {:?}, expected {m}x{m}", w.shape())));
    }
    let start = scaled_norm(m11, w)?;
    let identity = DMatrix::identity(m, m);
    let beta_identity = scaled_norm(m11, &identity)?;

    let param = Param { structure };
    let mut cost = |x: &[f64]| -> f64 {
        let wx = param.to_matrix(x);
        scaled_norm(m11, &wx).unwrap_or(f64::INFINITY)
    };
    let mut best = (start, w.clone());
    if beta_identity < best.0 {
        best = (beta_identity, identity.clone());
    }
    let mut x = param.from_matrix(&best.1);
    if !x.is_empty() {
        for _ in 0..3 {
            let steps = param.steps(&x);
            let (xr, fr) = nelder_mead(&mut cost, &x, &steps, 60 * (x.len() + 1));
            if fr < best.0 {
                best = (fr, param.to_matrix(&xr));
                x = xr;
            } else {
                break;
            }
        }
    }
    Ok(BetaResult { beta: best.0, scaling: best.1, beta_identity })
}

/// Symmetric square root of a symmetric positive definite matrix.
pub fn sqrtm_spd(w: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let s = ((w + w.transpose()) * 0.5).symmetric_eigen();
    if s.eigenvalues.iter().any(|l| !(*l > 0.0)) {
        return None;
    }
    let d = DMatrix::from_diagonal(&DVector::from_iterator(s.eigenvalues.len(), s.eigenvalues.iter().map(|l| l.sqrt())));
    Some(&s.eigenvectors * d * s.eigenvectors.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::robustness::interconnection::DeltaBlock;

    #[test]
    fn nelder_mead_quadratic() {
        let mut f = |x: &[f64]| (x[0] - 1.0).powi(2) + 10.0 * (x[1] + 2.0).powi(2);
        let (x, v) = nelder_mead(&mut f, &[0.0, 0.0], &[0.5, 0.5], 2000);
        assert!(v < 1e-10 && (x[0] - 1.0).abs() < 1e-4 && (x[1] + 2.0).abs() < 1e-4);
    }

    #[test]
    fn diagonal_scaling_removes_skew() {
        // static M = [[0, 4], [0.25, 0]] has norm 4 but scaled norm 1
        let d = DMatrix::from_row_slice(2, 2, &[0.0, 4.0, 0.25, 0.0]);
        let sys = StateSpace::static_gain(d);
        let s = DeltaStructure::new(vec![DeltaBlock::lti_full(1), DeltaBlock::lti_full(1)]).unwrap();
        let r = compute_beta(&sys, &s, &DMatrix::identity(2, 2)).unwrap();
        assert!((r.beta_identity - 4.0).abs() < 1e-8);
        assert!((r.beta - 1.0).abs() < 1e-4, "{}", r.beta);
    }

    #[test]
    fn sqrtm_roundtrip() {
        let w = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let s = sqrtm_spd(&w).unwrap();
        assert!((&s * &s - w).norm() < 1e-12);
        assert!(sqrtm_spd(&DMatrix::from_row_slice(1, 1, &[-1.0])).is_none());
    }
}
