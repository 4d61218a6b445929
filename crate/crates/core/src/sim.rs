//! Sampled closed-loop simulation of the limb with the conditioned
//! controller.
//!
//! The truth plant is `G L(s) (I + w(s) Delta(s))` at the actuator input,
//! where `L` is an optional first-order unit-DC lag and `Delta` an optional
//! random stable mismatch with `||Delta||_inf = 1`. Both are held by ZOH at
//! the controller period.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::antiwindup::{ConditionedController, ControllerState, StepOptions};
use crate::error::{Error, Result};
use crate::lti::{discretize, hinf_norm, DiscreteStateSpace, StateSpace, UncertaintyWeight};
use crate::model::StaticGain;
use crate::synthesis::to_dynamic;

/// Output magnitude beyond which a run is declared divergent, rad.
pub const DIVERGENCE_LIMIT: f64 = 1e3;
pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_LAG: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthOptions {
    pub lag_time_constant: Option<f64>,
    pub mismatch_seed: Option<u64>,
    pub weight: UncertaintyWeight,
}

impl Default for TruthOptions {
    fn default() -> Self {
        Self { lag_time_constant: None, mismatch_seed: None, weight: UncertaintyWeight::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthPlant {
    pub gain: StaticGain,
    pub lag: Option<StateSpace>,
    pub mismatch: Option<StateSpace>,
    pub weight: UncertaintyWeight,
}

impl TruthPlant {
    /// Continuous realization from actuator input to bend angles.
    pub fn realization(&self) -> Result<StateSpace> {
        let mut sys = StateSpace::static_gain(DMatrix::identity(2, 2));
        if let Some(delta) = &self.mismatch {
            let wd = delta.series(&self.weight.realize_diag(2))?;
            sys = StateSpace::new(wd.a, wd.b, wd.c, wd.d + DMatrix::identity(2, 2))?;
        }
        if let Some(lag) = &self.lag {
            sys = sys.series(lag)?;
        }
        sys.series(&StateSpace::static_gain(to_dynamic(self.gain.matrix())))
    }
}

/// Diagonal first-order lag `1 / (tau s + 1)` on both channels.
pub fn first_order_lag(tau: f64) -> Result<StateSpace> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::domain("lag_time_constant", format!("must be > 0, got {tau}")));
    }
    let i = DMatrix::identity(2, 2);
    StateSpace::new(&i * (-1.0 / tau), &i * (1.0 / tau), i.clone(), DMatrix::zeros(2, 2))
}

/// Random stable, strictly proper 2x2 system with two states, scaled to
/// unit H-infinity norm.
pub fn random_mismatch(seed: u64) -> Result<StateSpace> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 2;
    let poles: Vec<f64> = (0..n).map(|_| -rng.random_range(0.5f64.ln()..50.0f64.ln()).exp()).collect();
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (s, c) = angle.sin_cos();
    let t = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
    let a = &t * DMatrix::from_diagonal(&DVector::from_vec(poles)) * t.transpose();
    let mut uni = |r, c| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
    let b = uni(n, 2);
    let cm = uni(2, n);
    let sys = StateSpace::new(a, b, cm, DMatrix::zeros(2, 2))?;
    let norm = hinf_norm(&sys, 1e-9)?;
    if !(norm > 0.0) {
        return Err(Error::Singular("sampled mismatch has zero gain".into()));
    }
    StateSpace::new(sys.a, sys.b, sys.c / norm, sys.d)
}

pub fn build_truth_plant(g: &StaticGain, opts: &TruthOptions) -> Result<TruthPlant> {
    opts.weight.validate()?;
    let lag = opts.lag_time_constant.map(first_order_lag).transpose()?;
    let mismatch = opts.mismatch_seed.map(random_mismatch).transpose()?;
    Ok(TruthPlant { gain: *g, lag, mismatch, weight: opts.weight })
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrajectoryKind {
    Step,
    HoldSequence,
    Waypoints(std::path::PathBuf),
}

/// Piecewise-linear reference, held after the last sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `(t, pitch, yaw)` in s and rad.
    pub samples: Vec<(f64, f64, f64)>,
    pub duration: f64,
}

/// Shape of the sequence, in units of the amplitude, as `(pitch, yaw)`.
const SEQUENCE: [(f64, f64); 6] = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (-1.0, 0.0), (0.0, 0.0)];

impl Trajectory {
    pub fn new(samples: Vec<(f64, f64, f64)>, duration: f64) -> Result<Self> {
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(Error::domain("duration", format!("must be > 0, got {duration}")));
        }
        if samples.is_empty() {
            return Err(Error::domain("trajectory", "no samples"));
        }
        if samples.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::domain("trajectory", "times must be strictly increasing"));
        }
        if samples.iter().any(|s| !(s.0.is_finite() && s.1.is_finite() && s.2.is_finite())) {
            return Err(Error::domain("trajectory", "non-finite sample"));
        }
        Ok(Self { samples, duration })
    }

    /// Reference `(pitch, yaw)` at time `t`.
    pub fn at(&self, t: f64) -> Vector2<f64> {
        let s = &self.samples;
        let first = s[0];
        if t <= first.0 {
            return Vector2::new(first.1, first.2);
        }
        let i = s.partition_point(|p| p.0 <= t);
        if i >= s.len() {
            let l = s[s.len() - 1];
            return Vector2::new(l.1, l.2);
        }
        let (a, b) = (s[i - 1], s[i]);
        let f = (t - a.0) / (b.0 - a.0);
        Vector2::new(a.1 + f * (b.1 - a.1), a.2 + f * (b.2 - a.2))
    }
}

pub fn make_trajectory(kind: &TrajectoryKind, amplitude: f64, duration: f64, dt: f64) -> Result<Trajectory> {
    if !(dt > 0.0 && duration > dt) {
        return Err(Error::domain("duration", format!("need duration > dt > 0, got {duration} and {dt}")));
    }
    if !amplitude.is_finite() {
        return Err(Error::domain("amplitude", "must be finite"));
    }
    match kind {
        TrajectoryKind::Step => Trajectory::new(vec![(0.0, amplitude, amplitude)], duration),
        TrajectoryKind::HoldSequence => {
            let seg = duration / (SEQUENCE.len() - 1) as f64;
            let samples =
                SEQUENCE.iter().enumerate().map(|(i, (p, y))| (i as f64 * seg, p * amplitude, y * amplitude)).collect();
            Trajectory::new(samples, duration)
        }
        TrajectoryKind::Waypoints(path) => read_waypoints(path, duration),
    }
}

/// Reads `t, pitch_deg, yaw_deg` lines. Blank lines, `#` comments and a
/// non-numeric header line are skipped.
pub fn read_waypoints(path: &Path, duration: f64) -> Result<Trajectory> {
    let text = std::fs::read_to_string(path)?;
    let name = path.display().to_string();
    let err = |line: usize, msg: String| Error::Parse { path: name.clone(), line, msg };
    let mut samples: Vec<(f64, f64, f64)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let fields: Vec<&str> = body.split(',').map(str::trim).collect();
        let parsed: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        let v = match parsed {
            Ok(v) => v,
            Err(_) if samples.is_empty() && fields.iter().all(|f| f.parse::<f64>().is_err()) => continue,
            Err(e) => return Err(err(line, format!("bad number: {e}"))),
        };
        if v.len() != 3 {
            return Err(err(line, format!("expected 3 fields (t, pitch_deg, yaw_deg), got {}", v.len())));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(err(line, "non-finite value".into()));
        }
        if let Some(last) = samples.last() {
            if !(v[0] > last.0) {
                return Err(err(line, format!("time {} does not increase", v[0])));
            }
        }
        samples.push((v[0], v[1].to_radians(), v[2].to_radians()));
    }
    if samples.is_empty() {
        return Err(err(text.lines().count().max(1), "no waypoints".into()));
    }
    Trajectory::new(samples, duration)
}

pub const CSV_HEADER: &str = "t,r_pitch,r_yaw,y_pitch,y_yaw,u1_c,u2_c,u1_a,u2_a,x1,x2";

/// Fixed-step record; one row per controller sample.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimTrace {
    pub dt: f64,
    /// Columns as in [`CSV_HEADER`].
    pub rows: Vec<[f64; 11]>,
}

impl SimTrace {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for r in &self.rows {
            let line: Vec<String> = r.iter().map(|v| format!("{v:.10e}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn applied(&self, i: usize) -> Vector2<f64> {
        Vector2::new(self.rows[i][7], self.rows[i][8])
    }

    pub fn commanded(&self, i: usize) -> Vector2<f64> {
        Vector2::new(self.rows[i][5], self.rows[i][6])
    }
}

/// Solves `z = phi(c - P z)` where `phi` is the actuator map.
fn solve_applied(c: &Vector2<f64>, p: &Matrix2<f64>, opts: StepOptions) -> Vector2<f64> {
    if p.norm() == 0.0 {
        return opts.apply(c);
    }
    let kappa = 0.5 * p.trace();
    if kappa >= 0.0 && (p - Matrix2::identity() * kappa).norm() <= 1e-12 * p.norm() {
        let lim = 1.0 + kappa;
        return if opts.direction_scaling {
            let m = c.amax();
            if m <= lim {
                c / lim
            } else {
                c / m
            }
        } else {
            c.map(|v| if v.abs() <= lim { v / lim } else { v.signum() })
        };
    }
    solve_by_cases(c, p, opts).unwrap_or_else(|| opts.apply(c))
}

/// Exact solution of `z = phi(c - P z)` by enumerating the actuator's
/// linear pieces and keeping the first self-consistent one.
fn solve_by_cases(c: &Vector2<f64>, p: &Matrix2<f64>, opts: StepOptions) -> Option<Vector2<f64>> {
    let tol = 1e-12;
    let consistent = |z: &Vector2<f64>| (z - opts.apply(&(c - p * z))).amax() <= 1e-10 * (1.0 + c.amax());
    if let Some(z) = (Matrix2::identity() + p).try_inverse().map(|m| m * c) {
        if (c - p * z).amax() <= 1.0 + tol && consistent(&z) {
            return Some(z);
        }
    }
    if !opts.direction_scaling {
        // each component either linear (z_i = u_i) or pinned at +-1
        for mode in 0..9usize {
            let pick = [mode % 3, mode / 3];
            let mut m = Matrix2::zeros();
            let mut rhs = Vector2::zeros();
            for i in 0..2 {
                match pick[i] {
                    0 => {
                        // z_i + (P z)_i = c_i
                        m[(i, i)] = 1.0;
                        m[(i, 0)] += p[(i, 0)];
                        m[(i, 1)] += p[(i, 1)];
                        rhs[i] = c[i];
                    }
                    k => {
                        m[(i, i)] = 1.0;
                        rhs[i] = if k == 1 { 1.0 } else { -1.0 };
                    }
                }
            }
            if let Some(z) = m.try_inverse().map(|mi| mi * rhs) {
                if consistent(&z) {
                    return Some(z);
                }
            }
        }
        return None;
    }
    // scaled: z_j = s and z_o = t with u = c - P z and t = s u_o / u_j
    for j in 0..2 {
        let o = 1 - j;
        for s in [1.0, -1.0] {
            let mut zj = Vector2::zeros();
            zj[j] = s;
            let mut eo = Vector2::zeros();
            eo[o] = 1.0;
            let u0 = c - p * zj;
            let v = -(p * eo);
            // s v_j t^2 + (s u0_j - v_o) t - u0_o = 0
            let (qa, qb, qc) = (s * v[j], s * u0[j] - v[o], -u0[o]);
            let roots: Vec<f64> = if qa.abs() < 1e-300 {
                if qb.abs() < 1e-300 {
                    vec![]
                } else {
                    vec![-qc / qb]
                }
            } else {
                let disc = qb * qb - 4.0 * qa * qc;
                if disc < 0.0 {
                    vec![]
                } else {
                    let sq = disc.sqrt();
                    vec![(-qb + sq) / (2.0 * qa), (-qb - sq) / (2.0 * qa)]
                }
            };
            for t in roots {
                let z = zj + eo * t;
                if t.abs() <= 1.0 + tol && consistent(&z) {
                    return Some(z);
                }
            }
        }
    }
    None
}

/// Runs the loop for `round(duration / dt)` samples from rest. The plant
/// output may depend on the same-sample input; that algebraic loop is
/// solved exactly each sample.
pub fn run_closed_loop(
    cc: &ConditionedController,
    plant: &TruthPlant,
    traj: &Trajectory,
    dt: f64,
    opts: StepOptions,
) -> Result<SimTrace> {
    if !(dt > 0.0 && dt <= traj.duration / 100.0) {
        return Err(Error::domain("dt", format!("must be in (0, duration / 100], got {dt}")));
    }
    let ctrl = cc.at(dt)?;
    let pd: DiscreteStateSpace = discretize(&plant.realization()?, dt)?;
    let dp = Matrix2::from_iterator(pd.d.iter().copied());
    let p = ctrl.d * dp;
    let steps = (traj.duration / dt).round() as usize;
    let mut xp = DVector::zeros(pd.nstates());
    let mut state = ControllerState::default();
    let mut rows = Vec::with_capacity(steps);
    for k in 0..steps {
        let t = k as f64 * dt;
        let r = traj.at(t);
        let y_free = Vector2::from_iterator((&pd.c * &xp).iter().copied());
        let c = ctrl.c * state.x + ctrl.d * (r - y_free);
        let ua = solve_applied(&c, &p, opts);
        let y = y_free + dp * ua;
        let out = ctrl.step(&state, &(r - y), opts);
        let row = [
            t,
            r[0],
            r[1],
            y[0],
            y[1],
            out.u_commanded[0],
            out.u_commanded[1],
            out.u_applied[0],
            out.u_applied[1],
            state.x[0],
            state.x[1],
        ];
        rows.push(row);
        if !(y.amax() <= DIVERGENCE_LIMIT) {
            return Err(Error::Diverged { t, limit: DIVERGENCE_LIMIT, trace: Box::new(SimTrace { dt, rows }) });
        }
        xp = pd.advance(&xp, &DVector::from_column_slice(out.u_applied.as_slice()));
        state = out.state;
    }
    Ok(SimTrace { dt, rows })
}

/// Mean absolute tracking error over `t >= skip`, in degrees, as
/// `(yaw, pitch)`.
pub fn tracking_errors(trace: &SimTrace, skip: f64) -> Result<(f64, f64)> {
    let window: Vec<&[f64; 11]> = trace.rows.iter().filter(|r| r[0] >= skip).collect();
    if window.is_empty() {
        return Err(Error::domain("skip", format!("no samples at or after t = {skip}")));
    }
    let n = window.len() as f64;
    let pitch = window.iter().map(|r| (r[1] - r[3]).abs()).sum::<f64>() / n;
    let yaw = window.iter().map(|r| (r[2] - r[4]).abs()).sum::<f64>() / n;
    Ok((yaw.to_degrees(), pitch.to_degrees()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::antiwindup::hanus_condition;
    use crate::model::{static_gain_matrix, LimbParams};
    use crate::synthesis::{synthesize, PiGains};
    use std::f64::consts::FRAC_PI_6;

    fn controller(kp: f64) -> (ConditionedController, StaticGain) {
        let g = static_gain_matrix(&LimbParams::default()).unwrap();
        let cc = hanus_condition(&synthesize(&g, &PiGains::new(kp, 1.5).unwrap()).unwrap()).unwrap();
        (cc, g)
    }

    #[test]
    fn nominal_plant_is_static_gain() {
        let (_, g) = controller(1.0);
        let p = build_truth_plant(&g, &TruthOptions::default()).unwrap();
        let r = p.realization().unwrap();
        assert_eq!(r.nstates(), 0);
        assert!((r.d - to_dynamic(g.matrix())).norm() < 1e-15);
    }

    #[test]
    fn lag_reaches_63_percent_at_tau() {
        let lag = first_order_lag(0.5).unwrap();
        let d = discretize(&lag, 1e-3).unwrap();
        let mut x = DVector::zeros(2);
        let u = DVector::from_vec(vec![1.0, 1.0]);
        for _ in 0..500 {
            x = d.advance(&x, &u);
        }
        let y = d.output(&x, &u);
        assert!((y[0] - (1.0 - (-1.0f64).exp())).abs() < 1e-9, "{}", y[0]);
    }

    #[test]
    fn mismatch_is_seeded_and_normalized() {
        let a = random_mismatch(11).unwrap();
        let b = random_mismatch(11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, random_mismatch(12).unwrap());
        assert!((hinf_norm(&a, 1e-9).unwrap() - 1.0).abs() < 1e-6);
        assert_eq!(a.d, DMatrix::zeros(2, 2));
    }

    #[test]
    fn step_and_sequence_shapes() {
        let s = make_trajectory(&TrajectoryKind::Step, FRAC_PI_6, 20.0, 1e-3).unwrap();
        for t in [0.0, 1.0, 19.9] {
            assert_eq!(s.at(t), Vector2::new(FRAC_PI_6, FRAC_PI_6));
        }
        let a = make_trajectory(&TrajectoryKind::HoldSequence, FRAC_PI_6, 120.0, 1e-3).unwrap();
        let b = make_trajectory(&TrajectoryKind::HoldSequence, FRAC_PI_6, 60.0, 1e-3).unwrap();
        for t in [0.0, 7.0, 31.3, 59.0, 100.0] {
            assert!((a.at(t) - b.at(t / 2.0)).norm() < 1e-14);
        }
        let z = make_trajectory(&TrajectoryKind::HoldSequence, 0.0, 10.0, 1e-3).unwrap();
        assert_eq!(z.at(3.3), Vector2::zeros());
    }

    #[test]
    fn closed_form_loop_solution_matches_newton() {
        let p = Matrix2::identity() * 2.0;
        for c in [Vector2::new(0.5, -0.2), Vector2::new(5.0, 1.0), Vector2::new(-4.0, 3.5)] {
            for ds in [true, false] {
                let opts = StepOptions { antiwindup: true, direction_scaling: ds };
                let z = solve_applied(&c, &p, opts);
                assert!((z - opts.apply(&(c - p * z))).norm() < 1e-12);
                // perturb P off the scalar form to exercise the iterative branch
                let pp = p + Matrix2::new(0.0, 1e-9, 0.0, 0.0);
                let zn = solve_applied(&c, &pp, opts);
                assert!((zn - opts.apply(&(c - pp * zn))).norm() < 1e-9);
                assert!((zn - z).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_reference_gives_zero_trace() {
        let (cc, g) = controller(2.0);
        let plant = build_truth_plant(&g, &TruthOptions { lag_time_constant: Some(0.5), ..Default::default() }).unwrap();
        let traj = make_trajectory(&TrajectoryKind::Step, 0.0, 2.0, 1e-3).unwrap();
        let tr = run_closed_loop(&cc, &plant, &traj, 1e-3, StepOptions::default()).unwrap();
        assert_eq!(tr.rows.len(), 2000);
        assert!(tr.rows.iter().all(|r| r[1..].iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn metric_examples() {
        let rows: Vec<[f64; 11]> = (0..10)
            .map(|i| {
                let mut r = [0.0; 11];
                r[0] = i as f64 * 0.1;
                r[2] = 0.3;
                r[4] = 0.3 - 2f64.to_radians();
                r
            })
            .collect();
        let (yaw, pitch) = tracking_errors(&SimTrace { dt: 0.1, rows }, 0.0).unwrap();
        assert!((yaw - 2.0).abs() < 1e-12 && pitch == 0.0);
        assert!(tracking_errors(&SimTrace { dt: 0.1, rows: vec![] }, 0.0).is_err());
    }

    #[test]
    fn waypoint_errors_carry_line_numbers() {
        let dir = std::env::temp_dir().join(format!("wp-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let f = dir.join("bad.csv");
        std::fs::write(&f, "t,pitch,yaw\n0,0,0\n1,10,x\n").unwrap();
        match read_waypoints(&f, 5.0) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        std::fs::write(&f, "0,0,0\n2,30,15\n").unwrap();
        let t = read_waypoints(&f, 5.0).unwrap();
        assert!((t.at(1.0)[0] - 15f64.to_radians()).abs() < 1e-12);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
