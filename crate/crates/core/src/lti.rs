//! Dense continuous-time LTI state-space algebra.
//!
//! Everything here is sized for small systems (at most a handful of
//! states), so plain dense factorizations are used throughout.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

/// Default stability margin for [`is_hurwitz`].
pub const HURWITZ_MARGIN: f64 = 1e-9;

/// `x' = A x + B u`, `y = C x + D u`. With zero states this is the static
/// gain `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl StateSpace {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension(format!("A is {}x{}", n, a.ncols())));
        }
        if b.nrows() != n {
            return Err(Error::Dimension(format!("B has {} rows, A has {}", b.nrows(), n)));
        }
        if c.ncols() != n {
            return Err(Error::Dimension(format!("C has {} columns, A has {}", c.ncols(), n)));
        }
        if d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(Error::Dimension(format!(
                "D is {}x{}, expected {}x{}",
                d.nrows(),
                d.ncols(),
                c.nrows(),
                b.ncols()
            )));
        }
        Ok(Self { a, b, c, d })
    }

    pub fn static_gain(d: DMatrix<f64>) -> Self {
        let (p, m) = d.shape();
        Self { a: DMatrix::zeros(0, 0), b: DMatrix::zeros(0, m), c: DMatrix::zeros(p, 0), d }
    }

    pub fn nstates(&self) -> usize {
        self.a.nrows()
    }

    pub fn ninputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn noutputs(&self) -> usize {
        self.c.nrows()
    }

    /// `C (sI - A)^-1 B + D` at an arbitrary complex point.
    pub fn eval(&self, s: C64) -> Option<DMatrix<C64>> {
        let d = self.d.map(C64::from);
        let n = self.nstates();
        if n == 0 {
            return Some(d);
        }
        let resolvent = DMatrix::<C64>::identity(n, n) * s - self.a.map(C64::from);
        let x = resolvent.lu().solve(&self.b.map(C64::from))?;
        if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return None;
        }
        Some(self.c.map(C64::from) * x + d)
    }

    pub fn freq_response(&self, omega: f64) -> Result<DMatrix<C64>> {
        self.eval(C64::new(0.0, omega)).ok_or(Error::Evaluation { omega })
    }

    /// Cascade: the output of `self` drives `next`.
    pub fn series(&self, next: &StateSpace) -> Result<StateSpace> {
        if self.noutputs() != next.ninputs() {
            return Err(Error::Dimension(format!(
                "series: {} outputs into {} inputs",
                self.noutputs(),
                next.ninputs()
            )));
        }
        let (n1, n2) = (self.nstates(), next.nstates());
        let n = n1 + n2;
        let mut a = DMatrix::zeros(n, n);
        a.view_mut((0, 0), (n1, n1)).copy_from(&self.a);
        a.view_mut((n1, 0), (n2, n1)).copy_from(&(&next.b * &self.c));
        a.view_mut((n1, n1), (n2, n2)).copy_from(&next.a);
        let mut b = DMatrix::zeros(n, self.ninputs());
        b.view_mut((0, 0), (n1, self.ninputs())).copy_from(&self.b);
        b.view_mut((n1, 0), (n2, self.ninputs())).copy_from(&(&next.b * &self.d));
        let mut c = DMatrix::zeros(next.noutputs(), n);
        c.view_mut((0, 0), (next.noutputs(), n1)).copy_from(&(&next.d * &self.c));
        c.view_mut((0, n1), (next.noutputs(), n2)).copy_from(&next.c);
        let d = &next.d * &self.d;
        StateSpace::new(a, b, c, d)
    }

    /// Block-diagonal stacking of independent systems.
    pub fn block_diag(systems: &[StateSpace]) -> StateSpace {
        let n: usize = systems.iter().map(|s| s.nstates()).sum();
        let m: usize = systems.iter().map(|s| s.ninputs()).sum();
        let p: usize = systems.iter().map(|s| s.noutputs()).sum();
        let mut out = StateSpace {
            a: DMatrix::zeros(n, n),
            b: DMatrix::zeros(n, m),
            c: DMatrix::zeros(p, n),
            d: DMatrix::zeros(p, m),
        };
        let (mut i, mut j, mut k) = (0, 0, 0);
        for s in systems {
            let (ns, ms, ps) = (s.nstates(), s.ninputs(), s.noutputs());
            out.a.view_mut((i, i), (ns, ns)).copy_from(&s.a);
            out.b.view_mut((i, j), (ns, ms)).copy_from(&s.b);
            out.c.view_mut((k, i), (ps, ns)).copy_from(&s.c);
            out.d.view_mut((k, j), (ps, ms)).copy_from(&s.d);
            i += ns;
            j += ms;
            k += ps;
        }
        out
    }

    /// Square system only. Closes part of the loop: with `p = diag(k) q +
    /// diag(r) p_new`, returns the map `p_new -> q`.
    pub fn loop_shift(&self, k: &DVector<f64>, r: &DVector<f64>) -> Result<StateSpace> {
        let m = self.ninputs();
        if self.noutputs() != m || k.len() != m || r.len() != m {
            return Err(Error::Dimension("loop_shift needs a square system and matching k, r".into()));
        }
        let kd = DMatrix::from_diagonal(k);
        let rd = DMatrix::from_diagonal(r);
        let x = (DMatrix::identity(m, m) - &self.d * &kd)
            .try_inverse()
            .ok_or_else(|| Error::Interconnection("I - D K is singular".into()))?;
        let bk = &self.b * &kd;
        let a = &self.a + &bk * &x * &self.c;
        let b = &bk * &x * &self.d * &rd + &self.b * &rd;
        let c = &x * &self.c;
        let d = &x * &self.d * &rd;
        StateSpace::new(a, b, c, d)
    }
}

pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<C64> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    a.clone().complex_eigenvalues().iter().copied().collect()
}

/// True iff every eigenvalue has real part `< -margin`.
pub fn is_hurwitz(a: &DMatrix<f64>, margin: f64) -> bool {
    eigenvalues(a).iter().all(|l| l.re < -margin)
}

fn sigma_max(m: &DMatrix<C64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Largest singular value of the frequency response.
pub fn sigma_max_at(sys: &StateSpace, omega: f64) -> Result<f64> {
    Ok(sigma_max(&sys.freq_response(omega)?))
}

/// Imaginary-axis eigenvalue frequencies (>= 0) of the Hamiltonian
/// associated with level `gamma`. Requires `gamma > sigma_max(D)`.
fn hamiltonian_crossings(sys: &StateSpace, gamma: f64) -> Option<Vec<f64>> {
    let n = sys.nstates();
    let m = sys.ninputs();
    let p = sys.noutputs();
    let (a, b, c, d) = (&sys.a, &sys.b, &sys.c, &sys.d);
    let r = DMatrix::identity(m, m) * (gamma * gamma) - d.transpose() * d;
    let r_inv = r.try_inverse()?;
    let ae = a + b * &r_inv * d.transpose() * c;
    let q = c.transpose() * (DMatrix::identity(p, p) + d * &r_inv * d.transpose()) * c;
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(&ae);
    h.view_mut((0, n), (n, n)).copy_from(&(b * &r_inv * b.transpose()));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-ae.transpose()));
    let scale = 1.0 + h.norm();
    let mut freqs: Vec<f64> = eigenvalues(&h)
        .into_iter()
        .filter(|l| l.re.abs() <= 1e-8 * scale && l.im >= 0.0)
        .map(|l| l.im)
        .collect();
    freqs.sort_by(f64::total_cmp);
    Some(freqs)
}

/// H-infinity norm by bisection on the Hamiltonian imaginary-axis test.
///
/// Returns the upper end of the final bracket, which is within `tol`
/// (relative) of the supremum. The lower end is raised using singular
/// values at the crossing frequencies, so it is always an attained value.
pub fn hinf_norm(sys: &StateSpace, tol: f64) -> Result<f64> {
    if sys.nstates() == 0 {
        return Ok(sigma_max(&sys.d.map(C64::from)));
    }
    let poles = eigenvalues(&sys.a);
    if poles.iter().any(|l| l.re >= 0.0) {
        return Err(Error::Unstable);
    }
    let mut lo = sigma_max(&sys.d.map(C64::from)).max(sigma_max_at(sys, 0.0)?);
    for l in &poles {
        if let Ok(s) = sigma_max_at(sys, l.norm()) {
            lo = lo.max(s);
        }
    }
    if lo == 0.0 {
        // G(0) = 0 and D = 0; try a few more points before declaring zero
        for w in [1e-3, 1e-1, 1.0, 10.0, 1e3] {
            lo = lo.max(sigma_max_at(sys, w)?);
        }
        if lo == 0.0 {
            return Ok(0.0);
        }
    }
    let raise = |lo: &mut f64, freqs: &[f64]| -> Result<()> {
        for (i, &w) in freqs.iter().enumerate() {
            *lo = lo.max(sigma_max_at(sys, w)?);
            if let Some(&w2) = freqs.get(i + 1) {
                *lo = lo.max(sigma_max_at(sys, 0.5 * (w + w2))?);
            }
        }
        Ok(())
    };

    let mut hi = 2.0 * lo;
    loop {
        match hamiltonian_crossings(sys, hi) {
            Some(f) if f.is_empty() => break,
            Some(f) => {
                raise(&mut lo, &f)?;
                hi = 2.0 * hi.max(lo);
            }
            None => hi *= 2.0,
        }
        if hi > 1e15 {
            return Err(Error::Unstable);
        }
    }
    while hi - lo > tol * lo {
        let gamma = 0.5 * (lo + hi);
        match hamiltonian_crossings(sys, gamma) {
            Some(f) if f.is_empty() => hi = gamma,
            Some(f) => {
                lo = lo.max(gamma);
                raise(&mut lo, &f)?;
            }
            None => lo = gamma,
        }
    }
    Ok(hi)
}

/// Computes `W M W^-1` as a realization: `(A, B W^-1, W C, W D W^-1)`.
pub fn similarity_scale(sys: &StateSpace, w: &DMatrix<f64>) -> Result<StateSpace> {
    let p = sys.noutputs();
    if sys.ninputs() != p || w.shape() != (p, p) {
        return Err(Error::Dimension(format!("scaling {:?} for {}x{} system", w.shape(), p, sys.ninputs())));
    }
    let w_inv = w
        .clone()
        .try_inverse()
        .filter(|wi| wi.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Singular("scaling matrix".into()))?;
    StateSpace::new(sys.a.clone(), &sys.b * &w_inv, w * &sys.c, w * &sys.d * &w_inv)
}

/// Multiplicative uncertainty weight `(tau s + r0) / ((tau / r_inf) s + 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertaintyWeight {
    pub r0: f64,
    pub r_inf: f64,
    pub tau: f64,
}

impl Default for UncertaintyWeight {
    fn default() -> Self {
        Self { r0: 0.1, r_inf: 1.5, tau: 0.1 }
    }
}

impl UncertaintyWeight {
    pub fn new(r0: f64, r_inf: f64, tau: f64) -> Result<Self> {
        let w = Self { r0, r_inf, tau };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r0 > 0.0 && self.r0 < self.r_inf && self.r_inf.is_finite()) {
            return Err(Error::domain("r0/r_inf", format!("need 0 < r0 < r_inf, got {} / {}", self.r0, self.r_inf)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::domain("tau", format!("must be > 0, got {}", self.tau)));
        }
        Ok(())
    }

    /// Single-state realization, `w(s) = r_inf + (r0 - r_inf) / (a s + 1)`
    /// with `a = tau / r_inf`.
    pub fn realize(&self) -> StateSpace {
        let a = self.tau / self.r_inf;
        StateSpace {
            a: DMatrix::from_element(1, 1, -1.0 / a),
            b: DMatrix::from_element(1, 1, 1.0),
            c: DMatrix::from_element(1, 1, (self.r0 - self.r_inf) / a),
            d: DMatrix::from_element(1, 1, self.r_inf),
        }
    }

    /// `w(s) I_k`.
    pub fn realize_diag(&self, k: usize) -> StateSpace {
        let w = self.realize();
        StateSpace::block_diag(&vec![w; k])
    }
}

/// Zero-order-hold discretization.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteStateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub dt: f64,
}

impl DiscreteStateSpace {
    pub fn nstates(&self) -> usize {
        self.a.nrows()
    }

    pub fn output(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.c * x + &self.d * u
    }

    pub fn advance(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }

    /// `C (z I - A_d)^-1 B_d + D` at `z = exp(j omega dt)`.
    pub fn freq_response(&self, omega: f64) -> Result<DMatrix<C64>> {
        let z = C64::from_polar(1.0, omega * self.dt);
        let n = self.nstates();
        let d = self.d.map(C64::from);
        if n == 0 {
            return Ok(d);
        }
        let m = DMatrix::<C64>::identity(n, n) * z - self.a.map(C64::from);
        let x = m.lu().solve(&self.b.map(C64::from)).ok_or(Error::Evaluation { omega })?;
        Ok(self.c.map(C64::from) * x + d)
    }
}

/// Exact ZOH equivalent through the exponential of `[[A, B], [0, 0]] dt`.
pub fn discretize(sys: &StateSpace, dt: f64) -> Result<DiscreteStateSpace> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::domain("dt", format!("must be > 0, got {dt}")));
    }
    let n = sys.nstates();
    let m = sys.ninputs();
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(&sys.a * dt));
    aug.view_mut((0, n), (n, m)).copy_from(&(&sys.b * dt));
    let e = if n + m == 0 { aug } else { aug.exp() };
    Ok(DiscreteStateSpace {
        a: e.view((0, 0), (n, n)).into_owned(),
        b: e.view((0, n), (n, m)).into_owned(),
        c: sys.c.clone(),
        d: sys.d.clone(),
        dt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn lag() -> StateSpace {
        StateSpace::new(dmatrix![-1.0], dmatrix![1.0], dmatrix![1.0], dmatrix![0.0]).unwrap()
    }

    #[test]
    fn rejects_inconsistent_dimensions() {
        assert!(StateSpace::new(dmatrix![-1.0], dmatrix![1.0, 2.0], dmatrix![1.0], dmatrix![0.0]).is_err());
        assert!(StateSpace::new(DMatrix::zeros(2, 3), DMatrix::zeros(2, 1), DMatrix::zeros(1, 2), DMatrix::zeros(1, 1)).is_err());
    }

    #[test]
    fn static_system_response_is_d() {
        let d = dmatrix![1.0, 2.0; 3.0, 4.0];
        let s = StateSpace::static_gain(d.clone());
        for w in [0.0, 1.0, 1e6] {
            assert_eq!(s.freq_response(w).unwrap(), d.map(C64::from));
        }
        let n = hinf_norm(&s, 1e-9).unwrap();
        assert!((n - d.singular_values().max()).abs() < 1e-12);
    }

    #[test]
    fn lag_dc_gain() {
        let g = lag().freq_response(0.0).unwrap();
        assert!((g[(0, 0)] - C64::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn integrator_response_at_zero_is_error() {
        let s = StateSpace::new(dmatrix![0.0], dmatrix![1.0], dmatrix![1.0], dmatrix![0.0]).unwrap();
        assert!(matches!(s.freq_response(0.0), Err(Error::Evaluation { .. })));
    }

    #[test]
    fn hurwitz_cases() {
        assert!(is_hurwitz(&dmatrix![-1.0, 0.0; 0.0, -2.0], 0.0));
        assert!(!is_hurwitz(&dmatrix![0.0], HURWITZ_MARGIN));
        assert!(is_hurwitz(&DMatrix::zeros(0, 0), HURWITZ_MARGIN));
        // oscillatory but stable
        assert!(is_hurwitz(&dmatrix![-0.1, 5.0; -5.0, -0.1], HURWITZ_MARGIN));
    }

    #[test]
    fn weight_realization() {
        let w = UncertaintyWeight::default();
        let s = w.realize();
        assert!((s.freq_response(0.0).unwrap()[(0, 0)].re - 0.1).abs() < 1e-14);
        assert!((s.d[(0, 0)] - 1.5).abs() < 1e-15);
        assert!((s.freq_response(1e9).unwrap()[(0, 0)].norm() - 1.5).abs() < 1e-6);
        assert!((s.a[(0, 0)] + 15.0).abs() < 1e-12);
        // transfer function check at a complex point
        let z = C64::new(0.3, 2.0);
        let want = (z * 0.1 + 0.1) / (z * (0.1 / 1.5) + 1.0);
        assert!((s.eval(z).unwrap()[(0, 0)] - want).norm() < 1e-14);
        assert!((hinf_norm(&s, 1e-10).unwrap() - 1.5).abs() < 1e-8);
    }

    #[test]
    fn weight_invariants() {
        assert!(UncertaintyWeight::new(1.5, 0.1, 0.1).is_err());
        assert!(UncertaintyWeight::new(0.1, 1.5, 0.0).is_err());
        assert!(UncertaintyWeight::new(0.0, 1.5, 0.1).is_err());
    }

    #[test]
    fn hinf_unstable_errors() {
        let s = StateSpace::new(dmatrix![1.0], dmatrix![1.0], dmatrix![1.0], dmatrix![0.0]).unwrap();
        assert!(matches!(hinf_norm(&s, 1e-6), Err(Error::Unstable)));
    }

    #[test]
    fn hinf_resonant_peak() {
        // w_n = 1, zeta = 0.05: peak 1 / (2 zeta sqrt(1 - zeta^2))
        let z: f64 = 0.05;
        let s = StateSpace::new(dmatrix![0.0, 1.0; -1.0, -2.0 * z], dmatrix![0.0; 1.0], dmatrix![1.0, 0.0], dmatrix![0.0]).unwrap();
        let want = 1.0 / (2.0 * z * (1.0 - z * z).sqrt());
        let got = hinf_norm(&s, 1e-10).unwrap();
        assert!((got - want).abs() < 1e-8 * want, "{got} vs {want}");
    }

    #[test]
    fn similarity_identity_and_scalar() {
        let s = StateSpace::new(
            dmatrix![-1.0, 0.5; 0.0, -2.0],
            dmatrix![1.0, 0.0; 0.3, 1.0],
            dmatrix![1.0, 1.0; 0.0, 2.0],
            dmatrix![0.1, 0.0; 0.2, 0.0],
        )
        .unwrap();
        let g = s.freq_response(1.3).unwrap();
        for w in [DMatrix::identity(2, 2), DMatrix::identity(2, 2) * 3.7] {
            let t = similarity_scale(&s, &w).unwrap();
            assert!((t.freq_response(1.3).unwrap() - &g).norm() < 1e-12);
        }
        assert!(similarity_scale(&s, &dmatrix![1.0, 2.0; 2.0, 4.0]).is_err());
    }

    #[test]
    fn discretize_integrator_bank() {
        let s = StateSpace::new(DMatrix::zeros(2, 2), dmatrix![1.0, 2.0; 3.0, 4.0], DMatrix::identity(2, 2), DMatrix::zeros(2, 2)).unwrap();
        let d = discretize(&s, 0.01).unwrap();
        assert!((d.a.clone() - DMatrix::identity(2, 2)).norm() < 1e-15);
        assert!((d.b.clone() - &s.b * 0.01).norm() < 1e-15);
    }

    #[test]
    fn discretize_scalar_decay() {
        let s = StateSpace::new(dmatrix![-1.0], dmatrix![1.0], dmatrix![1.0], dmatrix![0.5]).unwrap();
        let d = discretize(&s, 0.1).unwrap();
        assert!((d.a[(0, 0)] - (-0.1f64).exp()).abs() < 1e-14);
        assert!((d.b[(0, 0)] - (1.0 - (-0.1f64).exp())).abs() < 1e-14);
        assert_eq!(d.d[(0, 0)], 0.5);
        let small = discretize(&s, 1e-6).unwrap();
        assert!((small.a[(0, 0)] - (1.0 - 1e-6)).abs() < 1e-11);
        assert!(discretize(&s, 0.0).is_err());
    }

    #[test]
    fn series_of_lags() {
        let two = lag().series(&lag()).unwrap();
        let w = 0.7;
        let one = C64::new(1.0, 0.0) / C64::new(1.0, w);
        assert!((two.freq_response(w).unwrap()[(0, 0)] - one * one).norm() < 1e-14);
    }

    #[test]
    fn loop_shift_scalar() {
        // q = g p with g = 1/(s+1); p = k q + r p'
        let g = lag();
        let (k, r) = (0.5, 2.0);
        let t = g.loop_shift(&DVector::from_element(1, k), &DVector::from_element(1, r)).unwrap();
        let s = C64::new(0.0, 0.8);
        let gs = C64::new(1.0, 0.0) / (s + 1.0);
        let want = gs * r / (C64::new(1.0, 0.0) - gs * k);
        assert!((t.eval(s).unwrap()[(0, 0)] - want).norm() < 1e-14);
    }
}
