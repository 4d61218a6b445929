//! Feasibility search for the cone-bounded multiplier LMI
//!
//! ```text
//! [ A'Q + QA      QB - C'W          ]
//! [ B'Q - WC      dI - 2W - WD - D'W ]  <= 0,   Q > 0, d > 0
//! ```
//!
//! on a system whose Delta channels close as `p = -phi(q)`, `phi` in the
//! sector `[0, 1]`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::interconnection::{DeltaStructure, ScalingClass};
use crate::error::{Error, Result};
use crate::lti::StateSpace;

/// Lower bound on `lambda_min(Q)` and on `delta` for an accepted certificate.
pub const POSITIVITY_FLOOR: f64 = 1e-9;
/// Default bound on `lambda_max` of the block matrix.
pub const FEASIBILITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LmiCertificate {
    pub q: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub delta: f64,
    /// Largest eigenvalue of the block matrix.
    pub residual: f64,
    pub q_min_eig: f64,
    pub feasible: bool,
    pub diagnostics: String,
}

/// Assembles the block matrix for given `(Q, W, delta)`.
pub fn lmi_block(sys: &StateSpace, q: &DMatrix<f64>, w: &DMatrix<f64>, delta: f64) -> DMatrix<f64> {
    let (n, m) = (sys.nstates(), sys.ninputs());
    let (a, b, c, d) = (&sys.a, &sys.b, &sys.c, &sys.d);
    let mut out = DMatrix::zeros(n + m, n + m);
    out.view_mut((0, 0), (n, n)).copy_from(&(a.transpose() * q + q * a));
    let off = q * b - c.transpose() * w;
    out.view_mut((0, n), (n, m)).copy_from(&off);
    out.view_mut((n, 0), (m, n)).copy_from(&off.transpose());
    let lower = DMatrix::identity(m, m) * delta - w * 2.0 - w * d - d.transpose() * w;
    out.view_mut((n, n), (m, m)).copy_from(&lower);
    out
}

fn sym_eigs(m: &DMatrix<f64>) -> nalgebra::SymmetricEigen<f64, nalgebra::Dyn> {
    let s = (m + m.transpose()) * 0.5;
    s.symmetric_eigen()
}

fn lambda_max(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return f64::NEG_INFINITY;
    }
    sym_eigs(m).eigenvalues.max()
}

fn lambda_min(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return f64::INFINITY;
    }
    sym_eigs(m).eigenvalues.min()
}

/// Re-evaluates a candidate from scratch and fills in the certificate.
pub fn certify(sys: &StateSpace, q: DMatrix<f64>, w: DMatrix<f64>, delta: f64, eps: f64) -> LmiCertificate {
    let residual = lambda_max(&lmi_block(sys, &q, &w, delta));
    let q_min_eig = lambda_min(&q);
    let w_ok = w.clone().try_inverse().is_some() && lambda_min(&w) > 0.0;
    let mut why = Vec::new();
    if !(residual <= eps) {
        why.push(format!("lambda_max = {residual:e} > {eps:e}"));
    }
    if !(q_min_eig >= POSITIVITY_FLOOR) {
        why.push(format!("lambda_min(Q) = {q_min_eig:e}"));
    }
    if !(delta >= POSITIVITY_FLOOR) {
        why.push(format!("delta = {delta:e}"));
    }
    if !w_ok {
        why.push("W not positive definite".into());
    }
    let feasible = why.is_empty();
    LmiCertificate { q, w, delta, residual, q_min_eig, feasible, diagnostics: why.join("; ") }
}

/// A backend that searches for a certificate. `warm` is an optional
/// initial scaling.
pub trait LmiSolver {
    fn solve(
        &self,
        sys: &StateSpace,
        structure: &DeltaStructure,
        eps: f64,
        warm: Option<&DMatrix<f64>>,
    ) -> Result<LmiCertificate>;
}

/// Minimizes a log-sum-exp smoothing of `lambda_max` of
/// `diag(LMI, e I - Q, e - delta, e I - W)` with quasi-Newton steps, under
/// `tr W = channels`, lowering the smoothing width in stages and
/// restarting from several initial points. Stops at the first strictly
/// negative point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralSearch {
    pub starts: usize,
    pub iters_per_stage: usize,
    pub seed: u64,
}

impl Default for SpectralSearch {
    fn default() -> Self {
        Self { starts: 4, iters_per_stage: 150, seed: 7 }
    }
}

/// Symmetric-parameter bookkeeping. Each parameter owns a list of matrix
/// entries it writes with coefficient one.
struct Layout {
    n: usize,
    m: usize,
    q_params: Vec<(usize, usize)>,
    w_params: Vec<Vec<(usize, usize)>>,
}

const MARGIN: f64 = 10.0 * POSITIVITY_FLOOR;

impl Layout {
    fn new(n: usize, structure: &DeltaStructure) -> Self {
        let q_params = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
        let mut w_params = Vec::new();
        for (off, b) in structure.offsets() {
            match b.scaling {
                ScalingClass::Full => {
                    for i in 0..b.size {
                        for j in i..b.size {
                            w_params.push(vec![(off + i, off + j)]);
                        }
                    }
                }
                ScalingClass::Diagonal => {
                    for i in 0..b.size {
                        w_params.push(vec![(off + i, off + i)]);
                    }
                }
                ScalingClass::ScalarIdentity => {
                    w_params.push((0..b.size).map(|i| (off + i, off + i)).collect());
                }
            }
        }
        Self { n, m: structure.channels(), q_params, w_params }
    }

    fn len(&self) -> usize {
        self.q_params.len() + self.w_params.len() + 1
    }

    fn unpack(&self, theta: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>, f64) {
        let mut q = DMatrix::zeros(self.n, self.n);
        for (k, &(i, j)) in self.q_params.iter().enumerate() {
            q[(i, j)] = theta[k];
            q[(j, i)] = theta[k];
        }
        let base = self.q_params.len();
        let mut w = DMatrix::zeros(self.m, self.m);
        for (k, entries) in self.w_params.iter().enumerate() {
            for &(i, j) in entries {
                w[(i, j)] = theta[base + k];
                w[(j, i)] = theta[base + k];
            }
        }
        (q, w, theta[self.len() - 1])
    }

    /// Least-squares projection of `(Q, W, delta)` onto the parameter set.
    fn pack(&self, q: &DMatrix<f64>, w: &DMatrix<f64>, delta: f64) -> DVector<f64> {
        let mut t = DVector::zeros(self.len());
        for (k, &(i, j)) in self.q_params.iter().enumerate() {
            t[k] = 0.5 * (q[(i, j)] + q[(j, i)]);
        }
        let base = self.q_params.len();
        for (k, entries) in self.w_params.iter().enumerate() {
            let s: f64 = entries.iter().map(|&(i, j)| 0.5 * (w[(i, j)] + w[(j, i)])).sum();
            t[base + k] = s / entries.len() as f64;
        }
        t[self.len() - 1] = delta;
        t
    }

    fn augmented(&self, sys: &StateSpace, theta: &DVector<f64>) -> DMatrix<f64> {
        let (q, w, delta) = self.unpack(theta);
        let (n, m) = (self.n, self.m);
        let lmi = lmi_block(sys, &q, &w, delta);
        let size = (n + m) + n + 1 + m;
        let mut out = DMatrix::zeros(size, size);
        out.view_mut((0, 0), (n + m, n + m)).copy_from(&lmi);
        let o = n + m;
        out.view_mut((o, o), (n, n)).copy_from(&(DMatrix::identity(n, n) * MARGIN - q));
        out[(o + n, o + n)] = MARGIN - delta;
        let o = o + n + 1;
        out.view_mut((o, o), (m, m)).copy_from(&(DMatrix::identity(m, m) * MARGIN - w));
        out
    }

    /// Gradient of `tr W` in parameter space.
    fn trace_direction(&self) -> DVector<f64> {
        let mut a = DVector::zeros(self.len());
        let base = self.q_params.len();
        for (k, entries) in self.w_params.iter().enumerate() {
            a[base + k] = entries.iter().filter(|(i, j)| i == j).count() as f64;
        }
        a
    }
}

/// Affine map `theta -> F0 + sum theta_k F_k` with a smoothed top eigenvalue.
struct Objective {
    f0: DMatrix<f64>,
    fk: Vec<DMatrix<f64>>,
}

impl Objective {
    fn new(layout: &Layout, sys: &StateSpace) -> Self {
        let zero = DVector::zeros(layout.len());
        let f0 = layout.augmented(sys, &zero);
        let fk = (0..layout.len())
            .map(|k| {
                let mut e = zero.clone();
                e[k] = 1.0;
                layout.augmented(sys, &e) - &f0
            })
            .collect();
        Self { f0, fk }
    }

    fn matrix(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let mut m = self.f0.clone();
        for (t, f) in theta.iter().zip(&self.fk) {
            m += f * *t;
        }
        m
    }

    fn lambda_max(&self, theta: &DVector<f64>) -> f64 {
        lambda_max(&self.matrix(theta))
    }

    /// Value and gradient of `mu log sum exp(lambda_i / mu)`.
    fn smoothed(&self, theta: &DVector<f64>, mu: f64) -> (f64, DVector<f64>) {
        let eig = sym_eigs(&self.matrix(theta));
        let top = eig.eigenvalues.max();
        let wts: Vec<f64> = eig.eigenvalues.iter().map(|l| ((l - top) / mu).exp()).collect();
        let total: f64 = wts.iter().sum();
        let value = top + mu * total.ln();
        let dim = eig.eigenvalues.len();
        let mut p = DMatrix::zeros(dim, dim);
        for (i, w) in wts.iter().enumerate() {
            if *w > 1e-300 {
                let v = eig.eigenvectors.column(i);
                p += v * v.transpose() * (*w / total);
            }
        }
        let grad = DVector::from_iterator(self.fk.len(), self.fk.iter().map(|f| f.component_mul(&p).sum()));
        (value, grad)
    }
}

/// Solves `A'Q + QA = -I` by Kronecker vectorization.
fn lyapunov(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let i = DMatrix::<f64>::identity(n, n);
    let at = a.transpose();
    let op = i.kronecker(&at) + at.kronecker(&i);
    let rhs = DVector::from_iterator(n * n, (-i).iter().copied());
    let v = op.lu().solve(&rhs)?;
    let q = DMatrix::from_iterator(n, n, v.iter().copied());
    Some((&q + q.transpose()) * 0.5)
}

impl SpectralSearch {
    fn descend(&self, obj: &Objective, proj: &DMatrix<f64>, theta0: DVector<f64>) -> DVector<f64> {
        let mut theta = theta0;
        let scale = 1.0 + obj.matrix(&theta).norm();
        let mut mu = 0.1 * scale;
        while mu > 1e-9 * scale {
            let k = theta.len();
            let mut hinv = DMatrix::<f64>::identity(k, k);
            let (mut f, g) = obj.smoothed(&theta, mu);
            let mut g = proj * g;
            for _ in 0..self.iters_per_stage {
                if obj.lambda_max(&theta) < 0.0 || g.norm() < 1e-13 * scale {
                    break;
                }
                let mut d = -(proj * &hinv * &g);
                if d.dot(&g) >= 0.0 {
                    hinv = DMatrix::identity(k, k);
                    d = -g.clone();
                }
                let slope = d.dot(&g);
                let mut t = 1.0;
                let mut accepted = None;
                for _ in 0..50 {
                    let cand = &theta + &d * t;
                    let (fc, gc) = obj.smoothed(&cand, mu);
                    if fc <= f + 1e-4 * t * slope {
                        accepted = Some((cand, fc, proj * gc));
                        break;
                    }
                    t *= 0.5;
                }
                let Some((cand, fc, gc)) = accepted else { break };
                let s = &cand - &theta;
                let y = &gc - &g;
                let sy = s.dot(&y);
                if sy > 1e-16 {
                    let rho = 1.0 / sy;
                    let i = DMatrix::<f64>::identity(k, k);
                    let left = &i - &s * y.transpose() * rho;
                    let right = &i - &y * s.transpose() * rho;
                    hinv = &left * &hinv * &right + &s * s.transpose() * rho;
                }
                theta = cand;
                f = fc;
                g = gc;
            }
            if obj.lambda_max(&theta) < 0.0 {
                break;
            }
            mu *= 0.1;
        }
        theta
    }
}

impl LmiSolver for SpectralSearch {
    fn solve(
        &self,
        sys: &StateSpace,
        structure: &DeltaStructure,
        eps: f64,
        warm: Option<&DMatrix<f64>>,
    ) -> Result<LmiCertificate> {
        let m = structure.channels();
        if sys.ninputs() != m || sys.noutputs() != m {
            return Err(Error::Dimension(format!(
                "system is {}x{}, structure has {m} channels",
                sys.noutputs(),
                sys.ninputs()
            )));
        }
        let layout = Layout::new(sys.nstates(), structure);
        let obj = Objective::new(&layout, sys);
        let a = layout.trace_direction();
        let proj = DMatrix::identity(layout.len(), layout.len()) - &a * a.transpose() / a.norm_squared();
        let q0 = lyapunov(&sys.a).unwrap_or_else(|| DMatrix::identity(sys.nstates(), sys.nstates()));

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut inits = Vec::new();
        if let Some(w) = warm {
            inits.push(w.clone());
        }
        inits.push(DMatrix::identity(m, m));
        for _ in 0..self.starts.saturating_sub(inits.len()) {
            let r = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
            inits.push(&r * r.transpose() + DMatrix::identity(m, m) * 0.1);
        }

        let mut best: Option<(f64, DVector<f64>)> = None;
        for w0 in inits {
            let tr = w0.trace();
            if !(tr > 0.0) {
                continue;
            }
            let w0 = w0 * (m as f64 / tr);
            let theta0 = layout.pack(&q0, &w0, 1e-3);
            // restore the trace lost by projecting onto the structure
            let theta0 = &theta0 + &a * ((m as f64 - a.dot(&theta0)) / a.norm_squared());
            let theta = self.descend(&obj, &proj, theta0);
            let lm = obj.lambda_max(&theta);
            if best.as_ref().is_none_or(|(b, _)| lm < *b) {
                best = Some((lm, theta));
            }
            if lm < 0.0 {
                break;
            }
        }
        let (_, theta) = best.ok_or_else(|| Error::domain("scaling", "no admissible initial point"))?;
        let (q, w, delta) = layout.unpack(&theta);
        Ok(certify(sys, q, w, delta, eps))
    }
}

/// Runs the default search with the plug-back check.
pub fn solve_cone_lmi(sys: &StateSpace, structure: &DeltaStructure, eps: f64) -> Result<LmiCertificate> {
    SpectralSearch::default().solve(sys, structure, eps, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::robustness::interconnection::DeltaBlock;

    #[test]
    fn no_feedthrough_example() {
        let sys = StateSpace::new(
            -DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 2),
        )
        .unwrap();
        let s = DeltaStructure::new(vec![DeltaBlock::cone(2)]).unwrap();
        let c = certify(&sys, DMatrix::identity(2, 2), DMatrix::identity(2, 2), 1.0, FEASIBILITY_TOL);
        assert!(c.feasible, "{}", c.diagnostics);
        assert!((c.residual + 1.0).abs() < 1e-12);
        let found = solve_cone_lmi(&sys, &s, FEASIBILITY_TOL).unwrap();
        assert!(found.feasible, "{}", found.diagnostics);
    }

    #[test]
    fn too_much_gain_is_infeasible() {
        // p = -phi(q) with q = -3 p / (s + 1) style positive feedback
        let sys = StateSpace::new(
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::from_element(1, 1, -3.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        let s = DeltaStructure::new(vec![DeltaBlock::cone(1)]).unwrap();
        // the loop with phi = 1 has pole -1 + 3 > 0
        let c = solve_cone_lmi(&sys, &s, FEASIBILITY_TOL).unwrap();
        assert!(!c.feasible);
        assert!(!c.diagnostics.is_empty());
    }

    #[test]
    fn lyapunov_solution() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, 0.0, -3.0]);
        let q = lyapunov(&a).unwrap();
        let r = a.transpose() * &q + &q * &a + DMatrix::identity(2, 2);
        assert!(r.norm() < 1e-12);
    }
}
