//! SVD-decoupling PI controller.
//!
//! With `G = U S V^T`, the controller `K(s) = V l(s) S^-1 U^T`,
//! `l(s) = kp (1 + ki / s)`, gives `G K = l(s) I`: each singular direction
//! sees the same scalar PI loop.

use nalgebra::{DMatrix, Matrix2};

use crate::error::{Error, Result};
use crate::lti::StateSpace;
use crate::model::StaticGain;

/// Smallest admissible `sigma2 / sigma1`.
pub const MIN_SINGULAR_RATIO: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiGains {
    pub kp: f64,
    pub ki: f64,
}

impl PiGains {
    pub fn new(kp: f64, ki: f64) -> Result<Self> {
        if !(kp > 0.0 && kp.is_finite()) {
            return Err(Error::domain("kp", format!("must be > 0, got {kp}")));
        }
        if !(ki > 0.0 && ki.is_finite()) {
            return Err(Error::domain("ki", format!("must be > 0, got {ki}")));
        }
        Ok(Self { kp, ki })
    }

    /// Closed-loop pole of each decoupled channel around a static plant.
    pub fn nominal_pole(&self) -> f64 {
        -self.kp * self.ki / (1.0 + self.kp)
    }
}

/// `G = U diag(sigma) V^T`, `sigma[0] >= sigma[1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvdFactors {
    pub u: Matrix2<f64>,
    pub sigma: [f64; 2],
    pub v: Matrix2<f64>,
}

impl SvdFactors {
    pub fn sigma_matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.sigma[0], 0.0, 0.0, self.sigma[1])
    }

    pub fn sigma_inv(&self) -> Matrix2<f64> {
        Matrix2::new(1.0 / self.sigma[0], 0.0, 0.0, 1.0 / self.sigma[1])
    }

    pub fn reconstruct(&self) -> Matrix2<f64> {
        self.u * self.sigma_matrix() * self.v.transpose()
    }
}

/// SVD of a 2x2 static gain with a deterministic sign convention: in each
/// column of `U` the entry of largest magnitude is made positive (on the
/// diagonal when `U` is near identity). Repeated singular values pick
/// `U = I`.
pub fn svd_2x2(g: &StaticGain) -> Result<SvdFactors> {
    let m = *g.matrix();
    let svd = m.svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::Singular("SVD did not converge".into())),
    };
    let s = svd.singular_values;
    let (i0, i1) = if s[0] >= s[1] { (0, 1) } else { (1, 0) };
    let sigma = [s[i0], s[i1]];
    if sigma[0] == 0.0 || sigma[1] < MIN_SINGULAR_RATIO * sigma[0] {
        let ratio = if sigma[0] == 0.0 { 0.0 } else { sigma[1] / sigma[0] };
        return Err(Error::NearSingularPlant { ratio });
    }

    if (sigma[0] - sigma[1]).abs() <= 1e-12 * sigma[0] {
        let v = m.transpose() / sigma[0];
        return Ok(SvdFactors { u: Matrix2::identity(), sigma, v });
    }

    let v_full = vt.transpose();
    let mut u = Matrix2::from_columns(&[u.column(i0), u.column(i1)]);
    let mut v = Matrix2::from_columns(&[v_full.column(i0), v_full.column(i1)]);
    for j in 0..2 {
        let pivot = if u[(j, j)].abs() >= u[(1 - j, j)].abs() { u[(j, j)] } else { u[(1 - j, j)] };
        if pivot < 0.0 {
            u.column_mut(j).neg_mut();
            v.column_mut(j).neg_mut();
        }
    }
    Ok(SvdFactors { u, sigma, v })
}

/// `U^T G V S^-1`; identity for correctly paired factors.
pub fn dc_decoupling_matrix(f: &SvdFactors, g: &StaticGain) -> Matrix2<f64> {
    f.u.transpose() * g.matrix() * f.v * f.sigma_inv()
}

/// The nominal controller, realized per channel as `x' = ki e_s`,
/// `u_s = kp (x + e_s)` and rotated by the SVD factors:
/// `A = 0`, `B = ki S^-1 U^T`, `C = kp V`, `D = kp V S^-1 U^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NominalController {
    pub a: Matrix2<f64>,
    pub b: Matrix2<f64>,
    pub c: Matrix2<f64>,
    pub d: Matrix2<f64>,
    pub factors: SvdFactors,
    pub gains: PiGains,
}

impl NominalController {
    pub fn state_space(&self) -> StateSpace {
        StateSpace {
            a: to_dynamic(&self.a),
            b: to_dynamic(&self.b),
            c: to_dynamic(&self.c),
            d: to_dynamic(&self.d),
        }
    }
}

pub(crate) fn to_dynamic(m: &Matrix2<f64>) -> DMatrix<f64> {
    DMatrix::from_iterator(2, 2, m.iter().copied())
}

pub fn build_nominal_controller(f: &SvdFactors, g: &PiGains) -> Result<NominalController> {
    if !(f.sigma[1] > 0.0) {
        return Err(Error::Singular("Sigma has a zero singular value".into()));
    }
    let s_inv_ut = f.sigma_inv() * f.u.transpose();
    Ok(NominalController {
        a: Matrix2::zeros(),
        b: s_inv_ut * g.ki,
        c: f.v * g.kp,
        d: f.v * s_inv_ut * g.kp,
        factors: *f,
        gains: *g,
    })
}

/// Convenience: SVD the plant and build the controller in one go.
pub fn synthesize(g: &StaticGain, gains: &PiGains) -> Result<NominalController> {
    build_nominal_controller(&svd_2x2(g)?, gains)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::C64;
    use crate::model::{static_gain_matrix, LimbParams};
    use std::f64::consts::SQRT_2;

    fn sg(a: f64, b: f64, c: f64, d: f64) -> StaticGain {
        StaticGain::new(Matrix2::new(a, b, c, d)).unwrap()
    }

    #[test]
    fn identity_plant() {
        let f = svd_2x2(&sg(1.0, 0.0, 0.0, 1.0)).unwrap();
        assert_eq!(f.u, Matrix2::identity());
        assert_eq!(f.v, Matrix2::identity());
        assert_eq!(f.sigma, [1.0, 1.0]);
        assert!((dc_decoupling_matrix(&f, &sg(1.0, 0.0, 0.0, 1.0)) - Matrix2::identity()).norm() < 1e-15);
    }

    #[test]
    fn beam_example() {
        let g = sg(2.0, 2.0, 1.0, -1.0);
        let f = svd_2x2(&g).unwrap();
        assert!((f.sigma[0] - 2.0 * SQRT_2).abs() < 1e-14);
        assert!((f.sigma[1] - SQRT_2).abs() < 1e-14);
        assert!((f.u - Matrix2::identity()).norm() < 1e-14);
        let v = Matrix2::new(1.0, 1.0, 1.0, -1.0) / SQRT_2;
        assert!((f.v - v).norm() < 1e-14);
        assert!((f.reconstruct() - g.matrix()).norm() < 1e-14);
    }

    #[test]
    fn yaw_dominant_plant_gives_permutation() {
        let g = sg(0.5, 0.5, 2.0, -2.0);
        let f = svd_2x2(&g).unwrap();
        assert!((f.u.abs() - Matrix2::new(0.0, 1.0, 1.0, 0.0)).norm() < 1e-12);
        assert!(f.u.iter().all(|&x| x >= -1e-15));
        assert!((dc_decoupling_matrix(&f, &g) - Matrix2::identity()).norm() < 1e-12);
    }

    #[test]
    fn near_singular_rejected() {
        let g = sg(1.0, 1.0, 0.0, 0.0);
        assert!(matches!(svd_2x2(&g), Err(Error::NearSingularPlant { .. })));
        assert!(svd_2x2(&sg(0.0, 0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn mispaired_factors_detected() {
        let g = sg(0.5, 0.5, 2.0, -2.0);
        let mut f = svd_2x2(&g).unwrap();
        f.u = Matrix2::identity();
        assert!((dc_decoupling_matrix(&f, &g) - Matrix2::identity()).norm() > 0.1);
    }

    #[test]
    fn controller_structure() {
        let g = static_gain_matrix(&LimbParams::default()).unwrap();
        let gains = PiGains::new(2.0, 1.5).unwrap();
        let k = synthesize(&g, &gains).unwrap();
        assert_eq!(k.a, Matrix2::zeros());
        assert!(k.d.determinant().abs() > 0.0);
        // D is the high-frequency limit of K(jw)
        let ss = k.state_space();
        let hf = ss.freq_response(1e9).unwrap();
        assert!((hf - to_dynamic(&k.d).map(C64::from)).norm() < 1e-8);
        // G D = kp I
        assert!((g.matrix() * k.d - Matrix2::identity() * 2.0).norm() < 1e-12);
        // two integrators
        let poles = crate::lti::eigenvalues(&ss.a);
        assert_eq!(poles.len(), 2);
        assert!(poles.iter().all(|p| p.norm() == 0.0));
    }

    #[test]
    fn loop_is_decoupled() {
        let g = static_gain_matrix(&LimbParams { length: 0.1, ..LimbParams::default() }).unwrap();
        let gains = PiGains::new(2.0, 1.5).unwrap();
        let ss = synthesize(&g, &gains).unwrap().state_space();
        let gd = to_dynamic(g.matrix()).map(C64::from);
        for &w in &[1e-3, 0.1, 1.0, 7.0, 1e3] {
            let s = C64::new(0.0, w);
            let l = (C64::new(1.0, 0.0) + C64::new(1.5, 0.0) / s) * 2.0;
            let loop_tf = &gd * ss.freq_response(w).unwrap();
            let want = DMatrix::<C64>::identity(2, 2) * l;
            assert!((loop_tf - &want).norm() <= 1e-10 * want.norm());
        }
    }

    #[test]
    fn gains_validated() {
        assert!(PiGains::new(0.0, 1.0).is_err());
        assert!(PiGains::new(1.0, -1.0).is_err());
        assert!((PiGains::new(2.0, 1.5).unwrap().nominal_pole() + 1.0).abs() < 1e-15);
    }
}
