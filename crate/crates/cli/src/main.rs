//! `softlimb` command-line tool.
//!
//! Exit codes: 0 success, 1 domain or numerical error, 2 usage error.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, Matrix2};

use softlimb::antiwindup::hanus_condition;
use softlimb::config::{parse_config, trajectory_kind, ToolConfig};
use softlimb::model::static_gain_matrix;
use softlimb::robustness::{max_stable_gain, verify_robust_stability, RobustnessReport, REFERENCE_BETA};
use softlimb::sim::{build_truth_plant, make_trajectory, run_closed_loop, tracking_errors, TruthOptions};
use softlimb::synthesis::{svd_2x2, synthesize, PiGains};
use softlimb::{Error, Result};

#[derive(Parser)]
#[command(name = "softlimb", version, about = "SVD-PI synthesis, robust-stability certification and simulation for a 2x2 soft limb")]
struct Cli {
    /// TOML configuration file; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct GainOverride {
    /// Proportional gain, overrides the config.
    #[arg(long)]
    kp: Option<f64>,
    /// Integral gain in 1/s, overrides the config.
    #[arg(long)]
    ki: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Print the static gain matrix and its SVD factors.
    LimbInfo,
    /// Print the nominal and conditioned controller matrices.
    Synthesize {
        #[command(flatten)]
        gains: GainOverride,
    },
    /// Check robust stability of the saturated loop.
    Verify {
        #[command(flatten)]
        gains: GainOverride,
        /// Include the multiplicative unmodelled-dynamics block.
        #[arg(long)]
        with_dynamics: bool,
    },
    /// Sweep K_P and report beta and the largest certified gain.
    SweepKp {
        #[arg(long)]
        with_dynamics: bool,
        /// Gain step.
        #[arg(long, default_value_t = 0.1)]
        grid: f64,
        /// Upper end of the scan.
        #[arg(long, default_value_t = 5.0)]
        kp_max: f64,
        /// Integral gain in 1/s, overrides the config.
        #[arg(long)]
        ki: Option<f64>,
    },
    /// Simulate the closed loop and write a CSV trace.
    Simulate {
        #[command(flatten)]
        gains: GainOverride,
        /// `step`, `sequence` or a waypoint CSV (t, pitch_deg, yaw_deg).
        #[arg(long)]
        traj: Option<String>,
        /// Seconds.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        amplitude_deg: Option<f64>,
        /// Seed of the random plant mismatch.
        #[arg(long)]
        seed: Option<u64>,
        /// Actuator lag time constant in s; 0 disables.
        #[arg(long)]
        lag: Option<f64>,
        #[arg(long)]
        no_antiwindup: bool,
        #[arg(long)]
        no_direction_scaling: bool,
        /// Seconds excluded from the error metric.
        #[arg(long, default_value_t = 0.0)]
        skip: f64,
        /// CSV destination; stdout when omitted (the summary then goes to
        /// stderr).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn fmt_mat(m: &DMatrix<f64>) -> String {
    let rows: Vec<String> = (0..m.nrows())
        .map(|i| {
            let r: Vec<String> = (0..m.ncols()).map(|j| format!("{:.9e}", m[(i, j)])).collect();
            format!("[{}]", r.join(","))
        })
        .collect();
    format!("[{}]", rows.join(","))
}

fn fmt2(m: &Matrix2<f64>) -> String {
    fmt_mat(&DMatrix::from_iterator(2, 2, m.iter().copied()))
}

struct Report<W: Write> {
    out: W,
}

impl<W: Write> Report<W> {
    fn kv(&mut self, k: &str, v: impl std::fmt::Display) -> io::Result<()> {
        writeln!(self.out, "{k}={v}")
    }

    fn config(&mut self, cfg: &ToolConfig) -> io::Result<()> {
        for (k, v) in cfg.resolved() {
            self.kv(&format!("config.{k}"), v)?;
        }
        Ok(())
    }
}

fn apply_gains(cfg: &mut ToolConfig, g: GainOverride) -> Result<()> {
    cfg.gains = PiGains::new(g.kp.unwrap_or(cfg.gains.kp), g.ki.unwrap_or(cfg.gains.ki))?;
    Ok(())
}

fn write_verdict<W: Write>(rep: &mut Report<W>, r: &RobustnessReport) -> io::Result<()> {
    rep.kv("kp", r.gains.kp)?;
    rep.kv("ki", r.gains.ki)?;
    rep.kv("with_dynamics", r.with_dynamics)?;
    rep.kv("m_stable", r.m_stable)?;
    rep.kv("beta", format!("{:.9}", r.beta))?;
    rep.kv("beta_unit_scaling", format!("{:.9}", r.beta_identity))?;
    rep.kv("beta_reference", REFERENCE_BETA)?;
    rep.kv("scaling", fmt_mat(&r.scaling))?;
    match &r.certificate {
        Some(c) => {
            rep.kv("lmi_feasible", c.feasible)?;
            rep.kv("lmi_residual", format!("{:e}", c.residual))?;
            rep.kv("lmi_delta", format!("{:e}", c.delta))?;
            rep.kv("lmi_q_min_eig", format!("{:e}", c.q_min_eig))?;
            if !c.diagnostics.is_empty() {
                rep.kv("lmi_diagnostics", &c.diagnostics)?;
            }
        }
        None => rep.kv("lmi_feasible", false)?,
    }
    rep.kv("robustly_stable", r.robustly_stable)?;
    rep.kv("verdict", if r.robustly_stable { "robustly stable" } else { "not certified" })
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => parse_config(p)?,
        None => ToolConfig::default(),
    };
    let stdout = io::stdout();
    let mut rep = Report { out: BufWriter::new(stdout.lock()) };
    match cli.command {
        Command::LimbInfo => {
            let g = static_gain_matrix(&cfg.limb)?;
            let f = svd_2x2(&g)?;
            rep.config(&cfg)?;
            rep.kv("inertia_x", cfg.limb.inertia_x()?)?;
            rep.kv("inertia_y", cfg.limb.inertia_y()?)?;
            rep.kv("G", fmt2(g.matrix()))?;
            rep.kv("U", fmt2(&f.u))?;
            rep.kv("sigma", format!("[{:.9e},{:.9e}]", f.sigma[0], f.sigma[1]))?;
            rep.kv("V", fmt2(&f.v))?;
        }
        Command::Synthesize { gains } => {
            apply_gains(&mut cfg, gains)?;
            let g = static_gain_matrix(&cfg.limb)?;
            let cc = hanus_condition(&synthesize(&g, &cfg.gains)?)?;
            rep.config(&cfg)?;
            let n = &cc.nominal;
            rep.kv("A", fmt2(&n.a))?;
            rep.kv("B", fmt2(&n.b))?;
            rep.kv("C", fmt2(&n.c))?;
            rep.kv("D", fmt2(&n.d))?;
            rep.kv("H", fmt2(&cc.h))?;
            rep.kv("A_minus_HC", fmt2(&cc.conditioned_a()))?;
            rep.kv("nominal_pole", cfg.gains.nominal_pole())?;
        }
        Command::Verify { gains, with_dynamics } => {
            apply_gains(&mut cfg, gains)?;
            let g = static_gain_matrix(&cfg.limb)?;
            let r = verify_robust_stability(&g, &cfg.gains, with_dynamics, &cfg.weight)?;
            rep.config(&cfg)?;
            write_verdict(&mut rep, &r)?;
        }
        Command::SweepKp { with_dynamics, grid, kp_max, ki } => {
            if let Some(ki) = ki {
                cfg.gains = PiGains::new(cfg.gains.kp, ki)?;
            }
            let g = static_gain_matrix(&cfg.limb)?;
            let s = max_stable_gain(cfg.gains.ki, with_dynamics, &cfg.weight, &g, grid, kp_max)?;
            rep.config(&cfg)?;
            rep.kv("with_dynamics", with_dynamics)?;
            rep.kv("grid", grid)?;
            writeln!(rep.out, "# kp beta robustly_stable")?;
            for (kp, beta, ok) in &s.table {
                writeln!(rep.out, "{kp:.6} {beta:.9} {ok}")?;
            }
            rep.kv("max_kp", format!("{:.6}", s.max_kp))?;
            rep.kv("max_kp_at_scan_limit", s.hit_limit)?;
            rep.kv("max_kp_reference", if with_dynamics { 0.5 } else { 2.0 })?;
        }
        Command::Simulate {
            gains,
            traj,
            duration,
            amplitude_deg,
            seed,
            lag,
            no_antiwindup,
            no_direction_scaling,
            skip,
            out,
        } => {
            apply_gains(&mut cfg, gains)?;
            let s = &mut cfg.simulation;
            if let Some(t) = traj {
                s.trajectory = trajectory_kind(&t);
            }
            if let Some(d) = duration {
                s.duration = d;
            }
            if let Some(a) = amplitude_deg {
                s.amplitude = a.to_radians();
            }
            if seed.is_some() {
                s.mismatch_seed = seed;
            }
            match lag {
                Some(l) if l == 0.0 => s.lag_time_constant = None,
                Some(l) => s.lag_time_constant = Some(l),
                None => {}
            }
            s.options.antiwindup &= !no_antiwindup;
            s.options.direction_scaling &= !no_direction_scaling;
            s.validate()?;
            let s = cfg.simulation.clone();

            let g = static_gain_matrix(&cfg.limb)?;
            let cc = hanus_condition(&synthesize(&g, &cfg.gains)?)?;
            let plant = build_truth_plant(
                &g,
                &TruthOptions { lag_time_constant: s.lag_time_constant, mismatch_seed: s.mismatch_seed, weight: cfg.weight },
            )?;
            let trajectory = make_trajectory(&s.trajectory, s.amplitude, s.duration, s.dt)?;
            let result = run_closed_loop(&cc, &plant, &trajectory, s.dt, s.options);
            let (trace, failure) = match result {
                Ok(t) => (t, None),
                Err(Error::Diverged { t, limit, trace }) => (*trace, Some(Error::Diverged { t, limit, trace: Box::default() })),
                Err(e) => return Err(e),
            };
            let summary: Box<dyn Write> = match &out {
                Some(path) => {
                    trace.write_csv(BufWriter::new(File::create(path)?))?;
                    Box::new(io::stdout())
                }
                None => {
                    trace.write_csv(&mut rep.out)?;
                    Box::new(io::stderr())
                }
            };
            rep.out.flush()?;
            let mut sum = Report { out: BufWriter::new(summary) };
            sum.config(&cfg)?;
            sum.kv("rows", trace.rows.len())?;
            if let Some(p) = &out {
                sum.kv("csv", p.display())?;
            }
            if let Some(e) = failure {
                sum.out.flush()?;
                return Err(e);
            }
            let (yaw, pitch) = tracking_errors(&trace, skip)?;
            sum.kv("mae_yaw_deg", format!("{yaw:.6}"))?;
            sum.kv("mae_pitch_deg", format!("{pitch:.6}"))?;
            let last = trace.rows.last().map(|r| ((r[1] - r[3]).abs().to_degrees(), (r[2] - r[4]).abs().to_degrees()));
            if let Some((p, y)) = last {
                sum.kv("final_error_pitch_deg", format!("{p:.6}"))?;
                sum.kv("final_error_yaw_deg", format!("{y:.6}"))?;
            }
            sum.out.flush()?;
        }
    }
    rep.out.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
