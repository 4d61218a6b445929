//! Hanus conditioning, actuator saturation and direction-preserving
//! scaling of the nominal controller.

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::synthesis::NominalController;

/// Largest condition number of `D` for which `H = B D^-1` is formed.
pub const MAX_D_CONDITION: f64 = 1e9;

/// Component-wise clamp to the normalized duty range `[-1, 1]`.
pub fn saturate(u: &Vector2<f64>) -> Vector2<f64> {
    u.map(|v| v.clamp(-1.0, 1.0))
}

/// Scales `u` back into the unit box along its own direction.
pub fn preserve_direction(u: &Vector2<f64>) -> Vector2<f64> {
    let m = u.amax();
    if m <= 1.0 {
        *u
    } else {
        u / m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepOptions {
    pub antiwindup: bool,
    pub direction_scaling: bool,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self { antiwindup: true, direction_scaling: true }
    }
}

impl StepOptions {
    /// The memoryless map from commanded to applied input.
    pub fn apply(&self, u_c: &Vector2<f64>) -> Vector2<f64> {
        if self.direction_scaling {
            saturate(&preserve_direction(u_c))
        } else {
            saturate(u_c)
        }
    }
}

/// Nominal controller plus the anti-windup gain `H = B D^-1`.
///
/// Continuous conditioned dynamics:
/// `x' = (A - H C) x + (B - H D) e + H u_a`, `u_c = C x + D e`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionedController {
    pub nominal: NominalController,
    pub h: Matrix2<f64>,
}

pub fn hanus_condition(nc: &NominalController) -> Result<ConditionedController> {
    let sv = nc.d.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > 0.0) || smax / smin > MAX_D_CONDITION {
        return Err(Error::Singular(format!("controller D is ill-conditioned (cond = {:e})", smax / smin)));
    }
    let d_inv = nc.d.try_inverse().ok_or_else(|| Error::Singular("controller D".into()))?;
    Ok(ConditionedController { nominal: nc.clone(), h: nc.b * d_inv })
}

impl ConditionedController {
    /// `A - H C`.
    pub fn conditioned_a(&self) -> Matrix2<f64> {
        self.nominal.a - self.h * self.nominal.c
    }

    /// `B - H D`, zero up to rounding.
    pub fn conditioned_b(&self) -> Matrix2<f64> {
        self.nominal.b - self.h * self.nominal.d
    }

    pub fn output(&self, state: &ControllerState, e: &Vector2<f64>) -> Vector2<f64> {
        self.nominal.c * state.x + self.nominal.d * e
    }

    /// Sampled form for a fixed period.
    pub fn at(&self, dt: f64) -> Result<DiscreteController> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::domain("dt", format!("must be > 0, got {dt}")));
        }
        let nc = &self.nominal;
        let (a_d, b_d) = zoh2(&nc.a, &nc.b, dt);
        let d_inv = nc.d.try_inverse().ok_or_else(|| Error::Singular("controller D".into()))?;
        let h_d = b_d * d_inv;
        Ok(DiscreteController {
            a_nom: a_d,
            b_nom: b_d,
            a_cond: a_d - h_d * nc.c,
            h_cond: h_d,
            c: nc.c,
            d: nc.d,
            dt,
        })
    }
}

/// ZOH of a 2-state, 2-input system via the 4x4 augmented exponential.
fn zoh2(a: &Matrix2<f64>, b: &Matrix2<f64>, dt: f64) -> (Matrix2<f64>, Matrix2<f64>) {
    let mut aug = nalgebra::Matrix4::<f64>::zeros();
    aug.fixed_view_mut::<2, 2>(0, 0).copy_from(&(a * dt));
    aug.fixed_view_mut::<2, 2>(0, 2).copy_from(&(b * dt));
    let e = aug.exp();
    (e.fixed_view::<2, 2>(0, 0).into_owned(), e.fixed_view::<2, 2>(0, 2).into_owned())
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ControllerState {
    pub x: Vector2<f64>,
}

/// Sampled controller. The nominal law is discretized by ZOH first and the
/// Hanus gain is formed on the sampled matrices, `H_d = B_d D^-1`, so the
/// conditioned update reproduces the nominal one exactly whenever the
/// actuator is not limiting.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteController {
    pub a_nom: Matrix2<f64>,
    pub b_nom: Matrix2<f64>,
    pub a_cond: Matrix2<f64>,
    pub h_cond: Matrix2<f64>,
    pub c: Matrix2<f64>,
    pub d: Matrix2<f64>,
    pub dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    pub u_commanded: Vector2<f64>,
    pub u_applied: Vector2<f64>,
    pub state: ControllerState,
}

impl DiscreteController {
    pub fn step(&self, state: &ControllerState, e: &Vector2<f64>, opts: StepOptions) -> StepOutput {
        let u_c = self.c * state.x + self.d * e;
        let u_a = opts.apply(&u_c);
        let x = if opts.antiwindup {
            self.a_cond * state.x + self.h_cond * u_a
        } else {
            self.a_nom * state.x + self.b_nom * e
        };
        StepOutput { u_commanded: u_c, u_applied: u_a, state: ControllerState { x } }
    }
}

/// One sample of the controller: output from the current state, then
/// direction scaling, then saturation, then the state update driven by the
/// same-sample applied input.
pub fn controller_step(
    cc: &ConditionedController,
    state: &ControllerState,
    e: &Vector2<f64>,
    dt: f64,
    opts: StepOptions,
) -> Result<StepOutput> {
    Ok(cc.at(dt)?.step(state, e, opts))
}
