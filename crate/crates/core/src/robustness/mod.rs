//! Robust stability of the saturated, conditioned loop.
//!
//! Condition 1 is the Hurwitz test on the normalized interconnection.
//! Condition 2 is `inf_W ||W M W^-1||_inf < 1`, with `W` seeded by the
//! multiplier LMI certificate and refined locally.

mod beta;
mod interconnection;
mod lmi;

pub use beta::{compute_beta, scaled_norm, sqrtm_spd, BetaResult, BETA_TOL};
pub use interconnection::{
    build_m_mixed, build_m_sat, BlockKind, DeltaBlock, DeltaStructure, InterconnectionM, ScalingClass,
};
pub use lmi::{certify, lmi_block, solve_cone_lmi, LmiCertificate, LmiSolver, SpectralSearch, FEASIBILITY_TOL, POSITIVITY_FLOOR};

use nalgebra::DMatrix;

use crate::antiwindup::hanus_condition;
use crate::error::{Error, Result};
use crate::lti::{is_hurwitz, UncertaintyWeight, HURWITZ_MARGIN};
use crate::model::StaticGain;
use crate::synthesis::{synthesize, PiGains};

/// Published reference for the dynamic-uncertainty case at `K_P = 2`,
/// `K_I = 1.5`, printed next to computed values for comparison.
pub const REFERENCE_BETA: f64 = 4.7793;

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessReport {
    pub m_stable: bool,
    pub beta: f64,
    pub robustly_stable: bool,
    pub gains: PiGains,
    pub with_dynamics: bool,
    /// `beta` with unit scaling.
    pub beta_identity: f64,
    pub scaling: DMatrix<f64>,
    pub certificate: Option<LmiCertificate>,
}

/// Per-block symmetric square root of the LMI multiplier: the scaling
/// under which the certificate is a unit-gain bound.
fn scaling_from_multiplier(w: &DMatrix<f64>, structure: &DeltaStructure) -> Option<DMatrix<f64>> {
    let m = structure.channels();
    let mut s = DMatrix::zeros(m, m);
    for (off, b) in structure.offsets() {
        let block = w.view((off, off), (b.size, b.size)).into_owned();
        s.view_mut((off, off), (b.size, b.size)).copy_from(&sqrtm_spd(&block)?);
    }
    Some(s)
}

/// Robust-stability test with the default LMI backend: `M` Hurwitz and
/// `beta < 1`.
pub fn verify_robust_stability(
    g: &StaticGain,
    gains: &PiGains,
    with_dynamics: bool,
    w: &UncertaintyWeight,
) -> Result<RobustnessReport> {
    verify_with(&SpectralSearch::default(), g, gains, with_dynamics, w)
}

pub fn verify_with(
    solver: &dyn LmiSolver,
    g: &StaticGain,
    gains: &PiGains,
    with_dynamics: bool,
    w: &UncertaintyWeight,
) -> Result<RobustnessReport> {
    let cc = hanus_condition(&synthesize(g, gains)?)?;
    let raw = if with_dynamics { build_m_mixed(&cc, g, w)? } else { build_m_sat(&cc, g)? };
    let m = raw.normalized()?;
    let channels = m.structure.channels();
    let m_stable = is_hurwitz(&m.ss.a, HURWITZ_MARGIN);
    if !m_stable {
        return Ok(RobustnessReport {
            m_stable,
            beta: f64::INFINITY,
            robustly_stable: false,
            gains: *gains,
            with_dynamics,
            beta_identity: f64::INFINITY,
            scaling: DMatrix::identity(channels, channels),
            certificate: None,
        });
    }

    let sector = m.sector_form().ok();
    let mut certificate = match &sector {
        Some(s) => Some(solver.solve(s, &m.structure, FEASIBILITY_TOL, None)?),
        None => None,
    };
    let seed = certificate
        .as_ref()
        .filter(|c| c.feasible)
        .and_then(|c| scaling_from_multiplier(&c.w, &m.structure))
        .unwrap_or_else(|| DMatrix::identity(channels, channels));
    let b = compute_beta(&m.ss, &m.structure, &seed)?;

    // a strict beta bound implies a strictly feasible multiplier W = S'S
    if b.beta < 1.0 && !certificate.as_ref().is_some_and(|c| c.feasible) {
        if let Some(s) = &sector {
            let warm = b.scaling.transpose() * &b.scaling;
            certificate = Some(solver.solve(s, &m.structure, FEASIBILITY_TOL, Some(&warm))?);
        }
    }
    Ok(RobustnessReport {
        m_stable,
        beta: b.beta,
        robustly_stable: m_stable && b.beta < 1.0,
        gains: *gains,
        with_dynamics,
        beta_identity: b.beta_identity,
        scaling: b.scaling,
        certificate,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainSearch {
    pub max_kp: f64,
    /// True when no failing gain was met before `kp_limit`.
    pub hit_limit: bool,
    /// Every evaluated `(K_P, beta, robustly_stable)`, in ascending `K_P`.
    pub table: Vec<(f64, f64, bool)>,
}

/// Scans `K_P = grid, 2 grid, ...` up to `kp_limit`. At the first failure
/// the last step is bisected to `grid / 64` and the largest passing gain
/// is returned.
pub fn max_stable_gain(
    ki: f64,
    with_dynamics: bool,
    w: &UncertaintyWeight,
    g: &StaticGain,
    grid: f64,
    kp_limit: f64,
) -> Result<GainSearch> {
    if !(grid > 0.0 && grid.is_finite()) {
        return Err(Error::domain("grid", format!("must be > 0, got {grid}")));
    }
    if !(kp_limit >= grid) {
        return Err(Error::domain("kp_limit", format!("must be >= grid, got {kp_limit}")));
    }
    let eval = |kp: f64| -> Result<(f64, bool)> {
        let r = verify_robust_stability(g, &PiGains::new(kp, ki)?, with_dynamics, w)?;
        Ok((r.beta, r.robustly_stable))
    };
    let mut table = Vec::new();
    let steps = (kp_limit / grid + 1e-9).floor() as usize;
    let mut last_pass: Option<f64> = None;
    for i in 1..=steps {
        let kp = grid * i as f64;
        let (beta, ok) = eval(kp)?;
        table.push((kp, beta, ok));
        if ok {
            last_pass = Some(kp);
            continue;
        }
        let Some(mut lo) = last_pass else {
            return Err(Error::NoStableGain(kp));
        };
        let mut hi = kp;
        while hi - lo > grid / 64.0 {
            let mid = 0.5 * (lo + hi);
            if eval(mid)?.1 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        return Ok(GainSearch { max_kp: lo, hit_limit: false, table });
    }
    match last_pass {
        Some(kp) => Ok(GainSearch { max_kp: kp, hit_limit: true, table }),
        None => Err(Error::NoStableGain(grid)),
    }
}
