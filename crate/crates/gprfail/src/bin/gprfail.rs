//! Command-line front end: material-point experiments, integrator
//! validation, 2D scenario simulation and the distortion initializer.
//!
//! Exit codes: 0 success, 2 configuration/argument error, 3 numerical
//! failure, 1 I/O failure.

use clap::{Args, Parser, Subcommand};
use gprfail::expint::{
    expint_integrate, implicit_euler_integrate, oracle_rk4_integrate, Tolerances, Trajectory,
};
use gprfail::material_point::{
    fatigue_test, rest_state, stress_strain_test, wohler_curve, DamageKinetics, StrainDrive,
    FAILURE_XI,
};
use gprfail::materials::{builtin_material_names, material_by_name, MaterialParams};
use gprfail::scenario::{
    init_a_from_stress, parse_config_str, preset_config, preset_names, run_scenario,
    ScenarioConfig,
};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

const EXIT_IO: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "gprfail",
    about = "Hyperbolic solver for hyperelasticity with material failure",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Drive a homogeneous sample and record stress-strain, fatigue, or
    /// durability (Wöhler) data as CSV.
    MaterialPoint(MaterialPointArgs),
    /// Compare the adaptive exponential integrator against fixed-step RK4
    /// and backward Euler on one constant-rate experiment.
    ValidateOde(ValidateOdeArgs),
    /// Run a 2D scenario from a preset and/or a config file.
    Simulate(SimulateArgs),
    /// Invert the stress map: print the distortion realizing a stress.
    InitA(InitAArgs),
    /// List the shipped scenario presets and built-in materials.
    List,
}

#[derive(Args)]
struct MaterialPointArgs {
    /// Built-in material name.
    #[arg(long)]
    material: String,
    /// Constant strain rate of the stress-strain experiment [1/s].
    #[arg(long, allow_hyphen_values = true)]
    rate: Option<f64>,
    /// Experiment horizon [s].
    #[arg(long, default_value_t = 20.0)]
    t_end: f64,
    /// Samples in the stress-strain CSV.
    #[arg(long, default_value_t = 400)]
    samples: usize,
    /// Cyclic preloading cycle count (fatigue mode; needs --amplitude and
    /// --frequency).
    #[arg(long)]
    cycles: Option<usize>,
    /// Strain amplitude of the cyclic load.
    #[arg(long, allow_hyphen_values = true)]
    amplitude: Option<f64>,
    /// Cycle frequency [Hz].
    #[arg(long)]
    frequency: Option<f64>,
    /// Strain rate of the destructive phase after cycling [1/s].
    #[arg(long, default_value_t = -1.0e-5, allow_hyphen_values = true)]
    destructive_rate: f64,
    /// Comma-separated cycle counts; runs one fatigue experiment per entry
    /// and writes a durability curve (Wöhler mode).
    #[arg(long, value_name = "N1,N2,...")]
    wohler: Option<String>,
    /// Output CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateOdeArgs {
    /// Built-in material name.
    #[arg(long)]
    material: String,
    /// Constant strain rate [1/s].
    #[arg(long, allow_hyphen_values = true)]
    rate: f64,
    /// Horizon [s].
    #[arg(long, default_value_t = 20.0)]
    t_end: f64,
    /// Steps of the backward-Euler reference.
    #[arg(long, default_value_t = 10_000)]
    euler_steps: usize,
    /// Steps of the RK4 oracle.
    #[arg(long, default_value_t = 1_000_000)]
    rk4_steps: usize,
    /// Output CSV path, or a directory to place `validate_ode.csv` in.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Config file; may itself start from a preset via `preset = <name>`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Shipped preset to start from (the config file's keys overlay it).
    #[arg(long)]
    preset: Option<String>,
    /// Output directory for snapshots and probe CSVs; no files without it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Suppress per-step progress lines.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct InitAArgs {
    /// Built-in material name.
    #[arg(long)]
    material: String,
    /// Total stress components [Pa].
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    sxx: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    syy: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    szz: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    sxy: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    syz: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    sxz: f64,
    /// Principal-direction angle [rad].
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    theta: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::MaterialPoint(a) => material_point(a),
        Command::ValidateOde(a) => validate_ode(a),
        Command::Simulate(a) => simulate(a),
        Command::InitA(a) => init_a(a),
        Command::List => list(),
    }
}

fn lookup_material(name: &str) -> Result<MaterialParams, ExitCode> {
    material_by_name(name).ok_or_else(|| {
        eprintln!(
            "error: unknown material `{name}` (built in: {})",
            builtin_material_names().join(", ")
        );
        ExitCode::from(EXIT_CONFIG)
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), ExitCode> {
    fs::write(path, text).map_err(|e| {
        eprintln!("error: cannot write {}: {e}", path.display());
        ExitCode::from(EXIT_IO)
    })
}

fn material_point(a: MaterialPointArgs) -> ExitCode {
    let mat = match lookup_material(&a.material) {
        Ok(m) => m,
        Err(c) => return c,
    };
    if let Some(list) = &a.wohler {
        let nlist: Result<Vec<usize>, _> = list
            .split(',')
            .map(|t| t.trim().parse::<usize>())
            .collect();
        let Ok(mut nlist) = nlist else {
            eprintln!("error: --wohler expects comma-separated cycle counts, got `{list}`");
            return ExitCode::from(EXIT_CONFIG);
        };
        nlist.sort_unstable();
        nlist.dedup();
        let (Some(amplitude), Some(frequency)) = (a.amplitude, a.frequency) else {
            eprintln!("error: --wohler needs --amplitude and --frequency");
            return ExitCode::from(EXIT_CONFIG);
        };
        let curve = match wohler_curve(&mat, &nlist, amplitude, frequency, a.destructive_rate) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: durability curve failed: {e}");
                return ExitCode::from(EXIT_NUMERICAL);
            }
        };
        let mut text = String::from("n_cycles,residual_strength\n");
        for (n, s) in &curve {
            text.push_str(&format!("{n},{s:.12e}\n"));
            println!("N = {n:>8}: residual strength {s:.6e} Pa");
        }
        if let Some(out) = &a.out {
            if let Err(c) = write_text(out, &text) {
                return c;
            }
            println!("wrote {}", out.display());
        }
        return ExitCode::SUCCESS;
    }
    if let Some(cycles) = a.cycles {
        let (Some(amplitude), Some(frequency)) = (a.amplitude, a.frequency) else {
            eprintln!("error: --cycles needs --amplitude and --frequency");
            return ExitCode::from(EXIT_CONFIG);
        };
        let outcome = match fatigue_test(&mat, amplitude, frequency, cycles, a.destructive_rate) {
            Ok(o) => o,
            Err(e) => {
                eprintln!("error: fatigue experiment failed: {e}");
                return ExitCode::from(EXIT_NUMERICAL);
            }
        };
        println!(
            "{} cycles at amplitude {amplitude:e}, frequency {frequency:e} Hz:",
            cycles
        );
        println!("  residual strength {:.6e} Pa", outcome.residual_strength);
        if let Some((t, xi)) = outcome.xi_history.last() {
            println!("  final damage xi = {xi:.6e} at t = {t:.6e} s");
        }
        if let Some(out) = &a.out {
            let mut text = String::from("t,xi\n");
            for (t, xi) in &outcome.xi_history {
                text.push_str(&format!("{t:.12e},{xi:.12e}\n"));
            }
            if let Err(c) = write_text(out, &text) {
                return c;
            }
            println!("wrote {}", out.display());
        }
        return ExitCode::SUCCESS;
    }
    let Some(rate) = a.rate else {
        eprintln!("error: pass --rate for a stress-strain run, --cycles for fatigue, or --wohler");
        return ExitCode::from(EXIT_CONFIG);
    };
    let diagram = match stress_strain_test(&mat, rate, a.t_end, a.samples) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error: stress-strain experiment failed: {e}");
            return ExitCode::from(EXIT_NUMERICAL);
        }
    };
    let failure = diagram
        .samples
        .iter()
        .find(|s| s.xi >= FAILURE_XI)
        .map(|s| s.t);
    println!(
        "{} at rate {rate:e} for {} s: peak equivalent stress {:.6e} Pa",
        a.material,
        a.t_end,
        diagram.peak_y()
    );
    match failure {
        Some(t) => println!("  failure (xi >= {FAILURE_XI}) near t = {t:.6} s"),
        None => println!("  no failure within the horizon"),
    }
    if let Some(out) = &a.out {
        let mut buf = Vec::new();
        diagram.write_csv(&mut buf).expect("in-memory write");
        let text = String::from_utf8(buf).expect("CSV is ASCII");
        if let Err(c) = write_text(out, &text) {
            return c;
        }
        println!("wrote {}", out.display());
    }
    ExitCode::SUCCESS
}

fn validate_ode(a: ValidateOdeArgs) -> ExitCode {
    let mat = match lookup_material(&a.material) {
        Ok(m) => m,
        Err(c) => return c,
    };
    if a.rate == 0.0 {
        eprintln!("error: --rate must be nonzero");
        return ExitCode::from(EXIT_CONFIG);
    }
    let drive = StrainDrive::Constant { rate: a.rate };
    let ode = DamageKinetics::laboratory(mat, &drive);
    let q0 = rest_state();

    let t = Instant::now();
    let exp = match expint_integrate(&ode, &q0, 0.0, a.t_end, &Tolerances::default(), 1e-3) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: exponential integrator failed: {e}");
            return ExitCode::from(EXIT_NUMERICAL);
        }
    };
    let exp_time = t.elapsed();
    let t = Instant::now();
    let rk4 = oracle_rk4_integrate(&ode, &q0, 0.0, a.t_end, a.rk4_steps);
    let rk4_time = t.elapsed();
    let t = Instant::now();
    let euler = match implicit_euler_integrate(&ode, &q0, 0.0, a.t_end, a.euler_steps) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: backward Euler failed: {e}");
            return ExitCode::from(EXIT_NUMERICAL);
        }
    };
    let euler_time = t.elapsed();

    // Accuracy against the oracle: max relative equivalent-stress error over
    // the pre-failure window, and the failure-time offset.
    let t_ref_fail = rk4.failure_time(FAILURE_XI);
    let window = t_ref_fail.unwrap_or(a.t_end);
    let max_rel = |traj: &Trajectory| {
        let mut worst: f64 = 0.0;
        for s in traj.samples.iter().filter(|s| s.t <= 0.95 * window) {
            let y_ref = rk4.y_at(s.t);
            if y_ref.abs() > 1e-6 {
                worst = worst.max((s.y - y_ref).abs() / y_ref.abs());
            }
        }
        worst
    };
    println!(
        "exponential integrator: {} accepted steps in {:.3} s",
        exp.samples.len(),
        exp_time.as_secs_f64()
    );
    println!(
        "RK4 oracle ({} steps): {:.3} s; backward Euler ({} steps): {:.3} s",
        a.rk4_steps,
        rk4_time.as_secs_f64(),
        a.euler_steps,
        euler_time.as_secs_f64()
    );
    println!(
        "max relative Y error vs oracle (pre-failure): expint {:.3e}, euler {:.3e}",
        max_rel(&exp),
        max_rel(&euler)
    );
    match (t_ref_fail, exp.failure_time(FAILURE_XI), euler.failure_time(FAILURE_XI)) {
        (Some(tr), te, tu) => {
            println!("failure time (oracle): {tr:.9} s");
            if let Some(te) = te {
                println!(
                    "  expint: {te:.9} s (offset {:+.3e} rel)",
                    (te - tr) / tr
                );
            }
            if let Some(tu) = tu {
                println!(
                    "  euler:  {tu:.9} s (offset {:+.3e} rel)",
                    (tu - tr) / tr
                );
            }
        }
        _ => println!("no failure within the horizon"),
    }

    if let Some(out) = &a.out {
        let path = if out.is_dir() {
            out.join("validate_ode.csv")
        } else {
            out.clone()
        };
        let mut text = String::from("t,strain,Y_vonMises,xi,integrator\n");
        for (label, traj) in [("expint", &exp), ("euler", &euler), ("rk4", &rk4)] {
            for s in &traj.samples {
                text.push_str(&format!(
                    "{:.12e},{:.12e},{:.12e},{:.12e},{label}\n",
                    s.t,
                    drive.strain_at(s.t),
                    s.y,
                    s.q[0]
                ));
            }
        }
        if let Err(c) = write_text(&path, &text) {
            return c;
        }
        println!("wrote {}", path.display());
    }
    ExitCode::SUCCESS
}

fn load_config(a: &SimulateArgs) -> Result<ScenarioConfig, ExitCode> {
    let cfg = match (&a.config, &a.preset) {
        (None, None) => {
            eprintln!("error: pass --preset <name>, --config <file>, or both");
            return Err(ExitCode::from(EXIT_CONFIG));
        }
        (None, Some(p)) => preset_config(p),
        (Some(path), preset) => {
            let text = match fs::read_to_string(path) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: cannot read {}: {e}", path.display());
                    return Err(ExitCode::from(EXIT_CONFIG));
                }
            };
            // A --preset flag acts as the file's default base; an explicit
            // `preset =` line inside the file takes precedence.
            let text = match preset {
                Some(p) => format!("preset = {p}\n{text}"),
                None => text,
            };
            parse_config_str(&text, &path.display().to_string())
        }
    };
    cfg.map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(EXIT_CONFIG)
    })
}

fn simulate(a: SimulateArgs) -> ExitCode {
    let cfg = match load_config(&a) {
        Ok(c) => c,
        Err(c) => return c,
    };
    println!(
        "scenario `{}`: {}x{} cells, degree {}, t_end = {:.6e} s",
        cfg.name, cfg.nx, cfg.ny, cfg.degree, cfg.t_end
    );
    let started = Instant::now();
    let quiet = a.quiet;
    let mut last_print = Instant::now();
    let result = run_scenario(&cfg, a.out.as_deref(), |step, rep| {
        if !quiet && (last_print.elapsed().as_secs_f64() > 2.0 || step == 1) {
            println!(
                "  step {step}: dt = {:.3e}, limited cells = {}, stiff substeps = {}",
                rep.dt, rep.limited, rep.stiff
            );
            let _ = std::io::stdout().flush();
            last_print = Instant::now();
        }
    });
    let (_, summary) = match result {
        Ok(r) => r,
        Err(e @ gprfail::scenario::RunError::Io { .. }) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_IO);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_NUMERICAL);
        }
    };
    println!(
        "done: {} steps to t = {:.6e} s in {:.1} s (peak limited cells {})",
        summary.steps,
        summary.t,
        started.elapsed().as_secs_f64(),
        summary.max_limited
    );
    println!(
        "conservation drift (rho, mom, rhoE): {:.3e} {:.3e} {:.3e} {:.3e} {:.3e}",
        summary.conservation_drift[0],
        summary.conservation_drift[1],
        summary.conservation_drift[2],
        summary.conservation_drift[3],
        summary.conservation_drift[4]
    );
    for p in summary.snapshots.iter().chain(summary.probe_files.iter()) {
        println!("wrote {}", p.display());
    }
    ExitCode::SUCCESS
}

fn init_a(a: InitAArgs) -> ExitCode {
    let mat = match lookup_material(&a.material) {
        Ok(m) => m,
        Err(c) => return c,
    };
    let sigma0 = [a.sxx, a.syy, a.szz, a.sxy, a.syz, a.sxz];
    match init_a_from_stress(&sigma0, a.theta, &mat) {
        Ok(out) => {
            println!(
                "converged in {} iterations, residual {:.3e} Pa",
                out.iterations, out.residual
            );
            for r in 0..3 {
                println!(
                    "  [{:+.12e} {:+.12e} {:+.12e}]",
                    out.a[(r, 0)],
                    out.a[(r, 1)],
                    out.a[(r, 2)]
                );
            }
            println!("rho = rho0 * det A = {:.12e} kg/m^3", out.rho);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_NUMERICAL)
        }
    }
}

fn list() -> ExitCode {
    println!("presets:");
    for p in preset_names() {
        println!("  {p}");
    }
    println!("materials:");
    for m in builtin_material_names() {
        println!("  {m}");
    }
    ExitCode::SUCCESS
}
