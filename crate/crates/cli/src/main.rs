use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use myoarm::canonical::build_handle_rig;
use myoarm::control::hold_pose_winds;
use myoarm::elasticity::{
    identify_combined, identify_dyneema, synthetic_log, write_report, ElasticForm, ElasticParams, LogModel, LogSource,
    MeasurementLog,
};
use myoarm::experiment::{run_handle_learning_experiment, write_metrics_csv, ExperimentConfig};
use myoarm::kinematics::JointAngles;
use myoarm::model::{load_description, DescriptionDoc, RobotDescription};
use myoarm::statics::{equilibrium, write_trace_csv, Environment, MotorWinds, SolverOptions};

/// Statics, identification and body-image learning for tendon-driven arms.
///
/// Angles on the command line are in degrees; lengths in mm, forces in N.
#[derive(Parser, Debug)]
#[command(name = "myoarm", version)]
struct Cli {
    /// Seed for stochastic commands (`exp-handle`, noisy `gen-log`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; created if missing.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Equilibrium gradient tolerance, N·mm/rad.
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a description file. Exit 0 if valid, 2 on rule violations,
    /// 1 if the file does not parse.
    Validate { file: PathBuf },
    /// Fit elastic parameters to a `l_abs_mm,dl_mm,T_N` log; writes
    /// `identify.csv`.
    Identify {
        log: PathBuf,
        #[arg(long, value_enum, default_value_t = FitForm::ExpShifted)]
        form: FitForm,
        /// Tensions come from the muscle's own loadcell instead of a force gauge.
        #[arg(long)]
        sensor: bool,
    },
    /// Solve one static equilibrium; writes `equilibrium.csv` in trace format.
    SimEq {
        file: PathBuf,
        /// Motor winds, mm, one per muscle.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "hold_deg")]
        winds: Option<Vec<f64>>,
        /// Compute the winds that hold these joint angles (deg) against
        /// gravity and payload with least tension.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        hold_deg: Option<Vec<f64>>,
        /// Smallest tension for `--hold-deg`, N.
        #[arg(long, default_value_t = 5.0)]
        f_min: f64,
        /// Starting joint angles, deg; defaults to the hold pose or zeros.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        theta0_deg: Option<Vec<f64>>,
        /// `LINK:KG` or `LINK:KG:X,Y,Z` with the offset in mm.
        #[arg(long)]
        payload: Option<String>,
    },
    /// Run the handle-turning learning experiment; writes `metrics.csv` and
    /// `trace.csv`.
    ExpHandle {
        /// Description file; the built-in handle rig when omitted.
        #[arg(long)]
        file: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        epochs: usize,
        /// Relative spread of the plant's elastic parameters.
        #[arg(long)]
        mismatch: Option<f64>,
        /// Crank resistance, N·mm.
        #[arg(long)]
        resistance: Option<f64>,
    },
    /// Write a synthetic identification log to `log.csv`.
    GenLog {
        #[arg(long, value_enum, default_value_t = LogKind::Combined)]
        model: LogKind,
        #[arg(long, value_enum, default_value_t = Unit::Grommet)]
        unit: Unit,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        /// Additive tension noise, N.
        #[arg(long, default_value_t = 0.0)]
        noise_sd: f64,
        /// Elongation range `LO,HI`, mm.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [0.0, 25.0])]
        range: Vec<f64>,
        /// Wire length for `--model dyneema`, mm.
        #[arg(long, default_value_t = 480.0)]
        l_abs: f64,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FitForm {
    Dyneema,
    Exp,
    ExpShifted,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LogKind {
    Dyneema,
    Combined,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Unit {
    Grommet,
    Oring,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Validate { file } => return validate(file),
        Command::Identify { log, form, sensor } => identify(&cli, log, *form, *sensor),
        Command::SimEq {
            file,
            winds,
            hold_deg,
            f_min,
            theta0_deg,
            payload,
        } => sim_eq(&cli, file, winds.as_deref(), hold_deg.as_deref(), *f_min, theta0_deg.as_deref(), payload.as_deref()),
        Command::ExpHandle {
            file,
            epochs,
            mismatch,
            resistance,
        } => exp_handle(&cli, file.as_deref(), *epochs, *mismatch, *resistance),
        Command::GenLog {
            model,
            unit,
            samples,
            noise_sd,
            range,
            l_abs,
        } => match range[..] {
            [lo, hi] => gen_log(&cli, *model, *unit, *samples, *noise_sd, (lo, hi), *l_abs),
            _ => Err(anyhow!("--range takes two values, LO,HI")),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn validate(file: &Path) -> ExitCode {
    let text = match fs::read_to_string(file) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {}: {e}", file.display());
            return ExitCode::FAILURE;
        }
    };
    let doc: DescriptionDoc = match serde_json::from_str(&text) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error: {}: {e}", file.display());
            return ExitCode::FAILURE;
        }
    };
    let violations = doc.violations();
    if violations.is_empty() {
        println!("ok: {} links, {} joints, {} muscles", doc.links.len(), doc.joints.len(), doc.muscles.len());
        ExitCode::SUCCESS
    } else {
        for v in &violations {
            println!("{v}");
        }
        ExitCode::from(2)
    }
}

fn identify(cli: &Cli, log: &Path, form: FitForm, sensor: bool) -> Result<()> {
    let source = if sensor { LogSource::Sensor } else { LogSource::ForceGauge };
    let file = fs::File::open(log).with_context(|| format!("opening {}", log.display()))?;
    let log = MeasurementLog::read_csv(file, source)?;
    let rows = match form {
        FitForm::Dyneema => identify_dyneema(&log)?.report(),
        FitForm::Exp => identify_combined(&log, ElasticForm::Exp)?.report(),
        FitForm::ExpShifted => identify_combined(&log, ElasticForm::ExpShifted)?.report(),
    };
    for r in &rows {
        println!("{} = {} (stderr {})", r.param, r.value, r.stderr);
    }
    write_atomic(&cli.out, "identify.csv", |w| Ok(write_report(&rows, w)?))
}

fn load(file: &Path) -> Result<RobotDescription> {
    let text = fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    load_description(&text).with_context(|| format!("loading {}", file.display()))
}

fn degrees(robot: &RobotDescription, deg: &[f64], what: &str) -> Result<JointAngles> {
    if deg.len() != robot.dof() {
        bail!("{what}: expected {} angles, got {}", robot.dof(), deg.len());
    }
    Ok(JointAngles::from_slice(&deg.iter().map(|d| d.to_radians()).collect::<Vec<_>>()))
}

fn parse_payload(env: Environment, spec: &str) -> Result<Environment> {
    let mut parts = spec.splitn(3, ':');
    let link = parts.next().filter(|s| !s.is_empty()).ok_or_else(|| anyhow!("payload needs a link"))?;
    let mass: f64 = parts
        .next()
        .ok_or_else(|| anyhow!("payload needs a mass: LINK:KG"))?
        .parse()
        .context("payload mass")?;
    let offset = match parts.next() {
        None => [0.0; 3],
        Some(o) => {
            let v = o.split(',').map(str::parse).collect::<Result<Vec<f64>, _>>().context("payload offset")?;
            <[f64; 3]>::try_from(v).map_err(|_| anyhow!("payload offset needs 3 values"))?
        }
    };
    Ok(env.with_payload(link, mass, offset))
}

fn sim_eq(
    cli: &Cli,
    file: &Path,
    winds: Option<&[f64]>,
    hold_deg: Option<&[f64]>,
    f_min: f64,
    theta0_deg: Option<&[f64]>,
    payload: Option<&str>,
) -> Result<()> {
    let robot = load(file)?;
    let mut env = Environment::for_robot(&robot);
    if let Some(p) = payload {
        env = parse_payload(env, p)?;
    }
    let hold = hold_deg.map(|d| degrees(&robot, d, "--hold-deg")).transpose()?;
    let winds = match (winds, &hold) {
        (Some(w), _) => MotorWinds::from_slice(w),
        (None, Some(theta)) => hold_pose_winds(&robot, &env, theta, f_min)?,
        (None, None) => MotorWinds::zeros(robot.muscle_count()),
    };
    let theta0 = match (theta0_deg, hold) {
        (Some(d), _) => degrees(&robot, d, "--theta0-deg")?,
        (None, Some(h)) => h,
        (None, None) => JointAngles::zeros(robot.dof()),
    };
    let opts = SolverOptions {
        tol: cli.tol.unwrap_or(SolverOptions::default().tol),
        ..SolverOptions::default()
    };
    let state = equilibrium(&robot, &winds, &env, &theta0, &opts)?;
    let deg: Vec<String> = state.theta.iter().map(|t| format!("{:.4}", t.to_degrees())).collect();
    println!(
        "{} after {} iterations, |grad| {:.3e}; theta_deg [{}]; peak sensor tension {:.2} N",
        if state.converged { "converged" } else { "NOT converged" },
        state.iterations,
        state.grad_norm,
        deg.join(", "),
        state.sensor_tensions.amax(),
    );
    write_atomic(&cli.out, "equilibrium.csv", |w| Ok(write_trace_csv(&robot, std::slice::from_ref(&state), w)?))?;
    if !state.converged {
        bail!("equilibrium did not converge");
    }
    Ok(())
}

fn exp_handle(cli: &Cli, file: Option<&Path>, epochs: usize, mismatch: Option<f64>, resistance: Option<f64>) -> Result<()> {
    let seed = cli.seed.ok_or_else(|| anyhow!("exp-handle is stochastic: --seed is required"))?;
    let robot = match file {
        Some(f) => load(f)?,
        None => build_handle_rig(),
    };
    let mut cfg = ExperimentConfig::handle_rig();
    cfg.epochs = epochs;
    if let Some(m) = mismatch {
        cfg.mismatch = m;
    }
    if let Some(r) = resistance {
        cfg.handle.resistance_nmm = r;
    }
    if let Some(t) = cli.tol {
        cfg.solver_tol = t;
    }
    let run = run_handle_learning_experiment(&robot, &cfg, seed)?;
    for m in &run.metrics {
        println!(
            "epoch {:2}: peak {:7.2} N, rotation {:6.2} deg, prediction error {:.3} mm",
            m.epoch, m.peak_t_n, m.rotation_deg, m.pred_err_mm
        );
    }
    write_atomic(&cli.out, "metrics.csv", |w| Ok(write_metrics_csv(&run.metrics, w)?))?;
    write_atomic(&cli.out, "trace.csv", |w| Ok(write_trace_csv(&run.plant, &run.trace, w)?))
}

fn gen_log(cli: &Cli, model: LogKind, unit: Unit, samples: usize, noise_sd: f64, range: (f64, f64), l_abs: f64) -> Result<()> {
    let seed = match cli.seed {
        Some(s) => s,
        None if noise_sd > 0.0 => bail!("a noisy log is stochastic: --seed is required"),
        None => 0,
    };
    let params = match unit {
        Unit::Grommet => ElasticParams::GROMMET,
        Unit::Oring => ElasticParams::ORING,
    };
    let model = match model {
        LogKind::Dyneema => LogModel::Dyneema { l_abs_mm: l_abs },
        LogKind::Combined => LogModel::Combined,
    };
    let log = synthetic_log(&params, model, range, samples, noise_sd, seed)?;
    write_atomic(&cli.out, "log.csv", |w| Ok(log.write_csv(w)?))
}

/// Writes `dir/name` through a temporary file in the same directory and a
/// rename, so a failed run never leaves a half-written file behind.
fn write_atomic(dir: &Path, name: &str, body: impl FnOnce(&mut fs::File) -> Result<()>) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let target = dir.join(name);
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let result = (|| -> Result<()> {
        let mut f = fs::File::create(&tmp)?;
        body(&mut f)?;
        f.flush()?;
        f.sync_all()?;
        fs::rename(&tmp, &target)?;
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.with_context(|| format!("writing {}", target.display()))
}
