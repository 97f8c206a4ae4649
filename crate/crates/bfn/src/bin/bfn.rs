//! Command-line front end: verification suites and the reference
//! experiments, driven by a flat key-value config file with flag overrides.
//!
//! `BFN_THREADS` caps the parallel fan-out (sweep points, finite-difference
//! probes).

use bfn::config::RunConfig;
use bfn::error::Result;
use bfn::experiments::{oscillator, wave};
use bfn::linear::{history_to_csv, oracle_minimize, run_linear, CostSpec, GainSchedule, StopRule};
use bfn::noise::{sample_ou, NoiseStream};
use bfn::report::{sweep_to_csv, wave_to_csv, RunMetadata};
use bfn::space::InnerProductSpace;
use bfn::synth;
use bfn::verify::{run_verification, Fault, VerifyConfig};
use clap::{Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::io::Write;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "bfn",
    about = "Joint state and parameter estimation by back-and-forth nudging with Gauss-Newton updates",
    version
)]
struct Cli {
    /// Config file (flat [section] key = value format).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the randomized verification suites and emit a JSON report.
    Verify {
        /// Run a single suite (adjoint, observability, coercivity,
        /// spectral-radius, fixed-point, contraction).
        #[arg(long)]
        only: Option<String>,
    },
    /// Oscillator source-estimation gain sweep (CSV: kappa, err, seed).
    Sweep,
    /// Wave-equation inverse potential run (CSV: iteration, errors).
    Wave,
    /// Small linear joint-estimation demo against the direct oracle
    /// (CSV history per iteration).
    LinearDemo,
}

fn init_threads() {
    if let Ok(raw) = std::env::var("BFN_THREADS") {
        if let Ok(n) = raw.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    // Flags override file values in every section they may touch.
    for section in ["verify", "sweep", "wave", "linear-demo"] {
        if let Some(seed) = cli.seed {
            cfg.set(section, "seed", seed.to_string());
        }
        if let Some(out) = &cli.out {
            cfg.set(section, "out", out.display().to_string());
        }
    }
    Ok(cfg)
}

fn write_output(path: &PathBuf, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

fn cmd_verify(cfg: &RunConfig, only: Option<String>) -> Result<i32> {
    let seed = cfg.get_or("verify", "seed", 0u64)?;
    let only = only.or_else(|| cfg.get("verify", "only").map(str::to_string));
    let report = run_verification(&VerifyConfig {
        seed,
        only,
        fault: Fault::None,
    })?;
    print!("{}", report.render_table());
    let out = cfg
        .get("verify", "out")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("verify-report.json"));
    write_output(&out, report.to_json().as_bytes())?;
    eprintln!("report written to {}", out.display());
    Ok(if report.passed { 0 } else { 1 })
}

fn cmd_sweep(cfg: &RunConfig) -> Result<i32> {
    let seed = cfg.get_or("sweep", "seed", 0u64)?;
    let noise = cfg.get_or("sweep", "noise", false)?;
    let default_gains: Vec<f64> = (0..=50).map(|i| 0.1 * i as f64).collect();
    let gains = cfg.gains("sweep", "gains", &default_gains)?;
    let rows = oscillator::run_oscillator_sweep(seed, &gains, noise)?;

    let setup = oscillator::OscillatorSetup::new(seed, true)?;
    let (margin_gain, margin) = oscillator::spectral_margin_gain(&setup)?;
    let critical = oscillator::critical_damping_gain(&setup)?;
    eprintln!(
        "closed-loop diagnostics: max spectral margin {margin:.4} at gain {margin_gain:.3}, \
         first mode critically damped at gain {critical:.4}"
    );

    let mut buf = Vec::new();
    sweep_to_csv(&rows, &mut buf)?;
    let out = cfg
        .get("sweep", "out")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("sweep.csv"));
    write_output(&out, &buf)?;
    RunMetadata {
        command: "sweep".into(),
        seed,
        config_hash: cfg.hash(),
        parameters: serde_json::json!({
            "gains": gains,
            "noise": noise,
            "spectral_margin_gain": margin_gain,
            "critical_damping_gain": critical,
        }),
    }
    .write(&out)?;
    eprintln!("sweep written to {}", out.display());
    Ok(0)
}

fn cmd_wave(cfg: &RunConfig) -> Result<i32> {
    let seed = cfg.get_or("wave", "seed", 0u64)?;
    let n_iters = cfg.get_or("wave", "iters", 4usize)?;
    let mesh_elems = cfg.get_or("wave", "mesh_elems", 100usize)?;
    let t_final = cfg.get_or("wave", "t_final", 16.0f64)?;
    let dt = cfg.get_or("wave", "dt", 2.0e-3f64)?;
    let noise_scale = cfg.get_or("wave", "noise_scale", 0.1f64)?;
    let n_modes = cfg.get_or("wave", "noise_modes", 10usize)?;
    let warmup = cfg.get_or("wave", "warmup", 0usize)?;
    let kappa = cfg.get_or("wave", "kappa", 2.0f64)?;
    let schedule = match cfg.get("wave", "gain_schedule") {
        Some("harmonic") => GainSchedule::Harmonic { kappa1: kappa },
        Some("constant") | None => GainSchedule::Constant(kappa),
        Some(other) => {
            return Err(bfn::error::Error::Config(format!(
                "[wave] gain_schedule: unknown value {other:?}"
            )))
        }
    };
    if kappa < 0.0 {
        return Err(bfn::error::Error::InvalidArgument(
            "observer gain must be nonnegative".into(),
        ));
    }
    let n_steps = (t_final / dt).round().max(1.0) as usize;
    let wave_cfg = wave::WaveExperimentConfig {
        seed,
        n_iters,
        gains: schedule,
        mesh_elems,
        t_final,
        n_steps,
        noise_scale,
        n_noise_modes: n_modes,
        warmup_sweeps: warmup,
        ..Default::default()
    };
    let rows = wave::run_wave_experiment(&wave_cfg)?;
    for r in &rows {
        eprintln!(
            "iteration {}: param {:.4e}  displ {:.4e}  vel {:.4e}",
            r.iteration, r.param_err, r.displ_err, r.vel_err
        );
    }
    let mut buf = Vec::new();
    wave_to_csv(&rows, &mut buf)?;
    let out = cfg
        .get("wave", "out")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("wave.csv"));
    write_output(&out, &buf)?;
    RunMetadata {
        command: "wave".into(),
        seed,
        config_hash: cfg.hash(),
        parameters: serde_json::json!({
            "iters": n_iters,
            "mesh_elems": mesh_elems,
            "t_final": t_final,
            "dt": dt,
            "noise_scale": noise_scale,
            "noise_modes": n_modes,
            "warmup": warmup,
            "kappa": kappa,
        }),
    }
    .write(&out)?;
    eprintln!("table written to {}", out.display());
    Ok(0)
}

fn cmd_linear_demo(cfg: &RunConfig) -> Result<i32> {
    let seed = cfg.get_or("linear-demo", "seed", 0u64)?;
    let kappa = cfg.get_or("linear-demo", "kappa", 0.5f64)?;
    let iters = cfg.get_or("linear-demo", "iters", 60usize)?;
    let grid = bfn::TimeGrid::new(3.0, 300)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let sys = synth::random_skew_system(&mut rng, 4..=4, 2..=2);
    let p = sys.param_dim();
    let z0 = synth::random_vector(&mut rng, sys.state_dim());
    let theta_true = synth::random_vector(&mut rng, p);
    let truth = sys.simulate(&z0, &theta_true, None, None, &grid)?;
    let mut y = truth.outputs;
    for row in 0..sys.output_dim() {
        let ou = sample_ou(NoiseStream::new(seed, 40 + row as u64), &grid, 0.25);
        for (i, v) in y.iter_mut().enumerate() {
            v[row] += ou.scalar(i);
        }
    }
    let spec = CostSpec::new(
        DVector::zeros(p),
        DMatrix::identity(p, p) * 0.2,
        0.2,
        y,
        kappa,
        InnerProductSpace::standard(p),
    )?;
    let sol = oracle_minimize(&spec, &sys, &grid)?;
    let (end, history) = run_linear(
        &spec,
        &sys,
        &GainSchedule::Constant(kappa),
        &StopRule {
            max_iters: iters,
            tol: 0.0,
        },
        &grid,
        &DVector::zeros(sys.state_dim()),
        Some((&sol.zeta, &sol.theta)),
    )?;
    eprintln!(
        "final distance to oracle: state {:.3e}, parameter {:.3e}",
        (&end.zeta_hat - &sol.zeta).norm(),
        (&end.theta_hat - &sol.theta).norm()
    );
    let mut buf = Vec::new();
    history_to_csv(&history, &mut buf)?;
    let out = cfg
        .get("linear-demo", "out")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("linear-demo.csv"));
    write_output(&out, &buf)?;
    RunMetadata {
        command: "linear-demo".into(),
        seed,
        config_hash: cfg.hash(),
        parameters: serde_json::json!({ "kappa": kappa, "iters": iters }),
    }
    .write(&out)?;
    eprintln!("history written to {}", out.display());
    Ok(0)
}

fn main() {
    init_threads();
    let cli = Cli::parse();
    let run = || -> Result<i32> {
        let cfg = load_config(&cli)?;
        match &cli.command {
            Command::Verify { only } => cmd_verify(&cfg, only.clone()),
            Command::Sweep => cmd_sweep(&cfg),
            Command::Wave => cmd_wave(&cfg),
            Command::LinearDemo => cmd_linear_demo(&cfg),
        }
    };
    match run() {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    }
}
