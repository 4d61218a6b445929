//! Static beam-bending model of the limb.
//!
//! The limb is a cantilevered Euler-Bernoulli beam under a constant end
//! moment `M = F d`. Each diagonal SMA pair is one signed input, and the
//! commanded PWM duty is taken directly as the force `F`.

use std::f64::consts::FRAC_PI_4;

use nalgebra::Matrix2;

use crate::error::{Error, Result};

/// Young's modulus of the elastomer body, Pa.
pub const ELASTOMER_MODULUS: f64 = 0.19e6;
/// Young's modulus of the SMA sheath tubing, Pa.
pub const TUBING_MODULUS: f64 = 1.4e6;
/// Rectangular approximation of the cross section, m.
pub const SECTION_WIDTH: f64 = 16.4e-3;
pub const SECTION_HEIGHT: f64 = 8.0e-3;

/// Geometry and material constants of the limb. SI units throughout.
///
/// `cross_width_b` runs along the x axis and `cross_height_h` along y, so
/// pitch (moment arm `d_x`) bends against `I_y = h b^3 / 12` and yaw
/// (moment arm `d_y`) against `I_x = b h^3 / 12`.
#[derive(Debug, Clone, PartialEq)]
pub struct LimbParams {
    pub length: f64,
    pub moduli: Vec<f64>,
    pub cross_width_b: f64,
    pub cross_height_h: f64,
    pub moment_arm_dx: f64,
    pub moment_arm_dy: f64,
    pub sma_angle_phi: f64,
}

impl Default for LimbParams {
    /// Section and moduli are the measured limb values. Length, moment arms
    /// and SMA angle are not measured; the defaults here are chosen so that
    /// a 60 degree command in both axes is reachable with |u| <= 1.
    fn default() -> Self {
        Self {
            length: 0.7,
            moduli: vec![ELASTOMER_MODULUS, TUBING_MODULUS],
            cross_width_b: SECTION_WIDTH,
            cross_height_h: SECTION_HEIGHT,
            moment_arm_dx: 0.005,
            moment_arm_dy: 0.0025,
            sma_angle_phi: FRAC_PI_4,
        }
    }
}

impl LimbParams {
    pub fn validate(&self) -> Result<()> {
        positive("length", self.length)?;
        positive("cross_width_b", self.cross_width_b)?;
        positive("cross_height_h", self.cross_height_h)?;
        positive("moment_arm_dx", self.moment_arm_dx)?;
        positive("moment_arm_dy", self.moment_arm_dy)?;
        effective_modulus(&self.moduli)?;
        let phi = self.sma_angle_phi;
        if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&phi) {
            return Err(Error::domain("sma_angle_phi", format!("{phi} outside [0, pi/2]")));
        }
        Ok(())
    }

    /// Second moment about the x axis (yaw bending).
    pub fn inertia_x(&self) -> Result<f64> {
        rect_moment_of_inertia(self.cross_width_b, self.cross_height_h)
    }

    /// Second moment about the y axis (pitch bending).
    pub fn inertia_y(&self) -> Result<f64> {
        rect_moment_of_inertia(self.cross_height_h, self.cross_width_b)
    }
}

fn positive(field: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::domain(field, format!("must be finite and > 0, got {v}")))
    }
}

/// Static input-to-bend-angle map. Row 0 is pitch, row 1 is yaw; columns
/// are the two diagonal SMA pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticGain(Matrix2<f64>);

impl StaticGain {
    /// Wraps an arbitrary finite 2x2 matrix. The beam structure is not
    /// enforced here, so tests can feed generic plants through the SVD.
    pub fn new(m: Matrix2<f64>) -> Result<Self> {
        if m.iter().all(|v| v.is_finite()) {
            Ok(Self(m))
        } else {
            Err(Error::domain("static gain", "entries must be finite"))
        }
    }

    pub fn matrix(&self) -> &Matrix2<f64> {
        &self.0
    }

    /// True when row 0 has equal entries and row 1 entries are negatives.
    pub fn has_beam_structure(&self) -> bool {
        let m = &self.0;
        m[(0, 0)] == m[(0, 1)] && m[(1, 0)] == -m[(1, 1)]
    }
}

/// `b h^3 / 12`, bending about the axis parallel to `b`.
pub fn rect_moment_of_inertia(b: f64, h: f64) -> Result<f64> {
    positive("b", b)?;
    positive("h", h)?;
    Ok(b * h.powi(3) / 12.0)
}

/// Arithmetic mean of the constituent moduli.
pub fn effective_modulus(moduli: &[f64]) -> Result<f64> {
    if moduli.is_empty() {
        return Err(Error::domain("moduli", "list is empty"));
    }
    for &e in moduli {
        positive("moduli", e)?;
    }
    Ok(moduli.iter().sum::<f64>() / moduli.len() as f64)
}

/// Tip bend angle of a cantilever under end moment `F d`.
pub fn bend_angle(force: f64, d: f64, length: f64, modulus: f64, inertia: f64) -> Result<f64> {
    positive("d", d)?;
    positive("length", length)?;
    positive("modulus", modulus)?;
    positive("inertia", inertia)?;
    Ok(force * d * length / (modulus * inertia))
}

pub fn static_gain_matrix(p: &LimbParams) -> Result<StaticGain> {
    p.validate()?;
    let e = effective_modulus(&p.moduli)?;
    let pitch = bend_angle(p.sma_angle_phi.cos(), p.moment_arm_dx, p.length, e, p.inertia_y()?)?;
    let yaw = bend_angle(p.sma_angle_phi.sin(), p.moment_arm_dy, p.length, e, p.inertia_x()?)?;
    StaticGain::new(Matrix2::new(pitch, pitch, yaw, -yaw))
}
