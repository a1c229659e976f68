//! `stalr` command-line front end. All subcommands return an [`Outcome`]
//! instead of printing, so tests can drive them in-process.

// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod output;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::DVector;

use stalr_core::control::{sta_gains, ControllerSpec};
use stalr_core::dde::{simulate, SimError, SimResult};
use stalr_core::fmt_f64;
use stalr_core::lyapunov::{
    certify_assumption1, nominal_runs, random_constant_phis, reaching_time_bound, LyapunovError, StaCertificate,
};
use stalr_core::model::DelayedStates;
use stalr_core::reduced_oracle::{
    comparison_excess, random_scenario, simulate_reduced, OracleError, RandomConfig, DEFAULT_STEP as ORACLE_STEP,
};
use stalr_core::scenario::{BuiltScenario, Scenario, ScenarioError};

pub const OUT_DIR_ENV: &str = "STALR_OUT_DIR";

pub const EXIT_OK: u8 = 0;
pub const EXIT_OTHER: u8 = 1;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_DIVERGED: u8 = 3;
pub const EXIT_CERTIFICATION: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "stalr", version, about = "Super-twisting Lyapunov redesign for linear time-delay systems")]
pub struct Cli {
    /// Scenario file (TOML); the built-in example is used when omitted.
    #[arg(long, global = true)]
    pub scenario: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = "stalr-out")]
    pub out: PathBuf,
    /// Overrides the integration step.
    #[arg(long, global = true)]
    pub step: Option<f64>,
    /// Overrides the final time.
    #[arg(long = "t-final", global = true)]
    pub t_final: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one closed-loop simulation and write trajectory.csv and report.txt.
    Simulate {
        /// none, unit, boundary_layer or sta_lr; defaults to the scenario's controller.
        #[arg(long)]
        controller: Option<String>,
    },
    /// Run several controllers on identical data and write summary.csv.
    Compare {
        #[arg(long, value_delimiter = ',', default_value = "unit,boundary_layer,sta_lr")]
        controllers: Vec<String>,
        /// Also write a gnuplot script.
        #[arg(long)]
        plot_script: bool,
    },
    /// Print the derived constants and certify the functional on nominal runs.
    Verify {
        /// Number of random constant initial functions.
        #[arg(long, default_value_t = 10)]
        phis: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Entries of the initial functions are drawn from [-scale, scale].
        #[arg(long, default_value_t = 1.0)]
        phi_scale: f64,
        #[arg(long, default_value_t = 1e-2)]
        cert_step: f64,
        #[arg(long, default_value_t = 60.0)]
        cert_t_final: f64,
    },
    /// Check the reaching-time bound on random reduced systems.
    Oracle {
        #[arg(long, default_value_t = 100)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        first_seed: u64,
        #[arg(long, default_value_t = 1.0)]
        k3: f64,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long, default_value_t = 0.3)]
        eps: f64,
        #[arg(long, default_value_t = 1.5)]
        delta_g: f64,
        #[arg(long, default_value_t = 0.5)]
        rho1_max: f64,
        #[arg(long, default_value_t = 0.5)]
        rho2_max: f64,
    },
    /// Print the reaching-time bound T.
    Bound {
        #[arg(long)]
        eta1: f64,
        #[arg(long)]
        eta2: f64,
        #[arg(long)]
        vst0: f64,
    },
}

/// Text for stdout and stderr plus the process exit code.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Outcome {
    pub stdout: String,
    pub stderr: String,
    pub code: u8,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        let code = match e {
            ScenarioError::Io { .. } => EXIT_OTHER,
            _ => EXIT_VALIDATION,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        let code = match e {
            SimError::StepInvalid(_) | SimError::InvalidConfig(_) => EXIT_VALIDATION,
            SimError::Diverged { .. } => EXIT_DIVERGED,
            _ => EXIT_OTHER,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::new(EXIT_OTHER, format!("cannot write output: {e}"))
    }
}

pub fn run(cli: &Cli) -> Outcome {
    let mut stdout = String::new();
    let result = match &cli.command {
        Command::Simulate { controller } => cmd_simulate(cli, controller.as_deref(), &mut stdout),
        Command::Compare {
            controllers,
            plot_script,
        } => cmd_compare(cli, controllers, *plot_script, &mut stdout),
        Command::Verify {
            phis,
            seed,
            phi_scale,
            cert_step,
            cert_t_final,
        } => {
            let opts = VerifyOptions {
                phis: *phis,
                seed: *seed,
                phi_scale: *phi_scale,
                cert_step: *cert_step,
                cert_t_final: *cert_t_final,
            };
            load_scenario(cli).map_err(Failure::from).and_then(|sc| verify(&sc, &opts, &mut stdout))
        }
        Command::Oracle {
            seeds,
            first_seed,
            k3,
            beta,
            eps,
            delta_g,
            rho1_max,
            rho2_max,
        } => {
            let cfg = RandomConfig {
                k3: *k3,
                beta: *beta,
                eps: *eps,
                delta_g: *delta_g,
                rho1_max: *rho1_max,
                rho2_max: *rho2_max,
                step: cli.step.unwrap_or(ORACLE_STEP),
                t_final: cli.t_final.unwrap_or(40.0),
                ..RandomConfig::default()
            };
            cmd_oracle(&cli.out, &cfg, *first_seed, *seeds, &mut stdout)
        }
        Command::Bound { eta1, eta2, vst0 } => cmd_bound(*eta1, *eta2, *vst0, &mut stdout),
    };
    match result {
        Ok(()) => Outcome {
            stdout,
            stderr: String::new(),
            code: EXIT_OK,
        },
        Err(f) => Outcome {
            stdout,
            stderr: format!("error: {}\n", f.message),
            code: f.code,
        },
    }
}

/// Loads `--scenario` (or the built-in example) and applies the step and
/// final-time overrides.
pub fn load_scenario(cli: &Cli) -> Result<Scenario, ScenarioError> {
    let mut sc = match &cli.scenario {
        Some(path) => Scenario::load(path)?,
        None => Scenario::example(),
    };
    if let Some(step) = cli.step {
        sc.sim.step = step;
    }
    if let Some(t_final) = cli.t_final {
        sc.sim.t_final = t_final;
    }
    Ok(sc)
}

fn run_controller(built: &BuiltScenario, spec: ControllerSpec) -> Result<SimResult, SimError> {
    simulate(
        &built.system,
        &built.law,
        built.uncertainty.as_ref(),
        spec,
        &built.lkf,
        &built.sim,
    )
}

fn write_run(dir: &Path, run: &SimResult) -> std::io::Result<()> {
    output::write(&dir.join("trajectory.csv"), &output::trajectory_csv(run))?;
    output::write(&dir.join("report.txt"), &output::report_text(run))
}

fn cmd_simulate(cli: &Cli, controller: Option<&str>, stdout: &mut String) -> Result<(), Failure> {
    let sc = load_scenario(cli)?;
    let built = sc.build()?;
    let spec = match controller {
        Some(kind) => sc.controller_spec(kind)?,
        None => built.controller,
    };
    let run = run_controller(&built, spec)?;
    write_run(&cli.out, &run)?;
    stdout.push_str(&output::report_text(&run));
    let _ = writeln!(stdout, "wrote {}", cli.out.join("trajectory.csv").display());
    Ok(())
}

/// Runs each controller on the same scenario in parallel; results come back
/// in the order given.
pub fn compare_runs(sc: &Scenario, controllers: &[String]) -> Result<Vec<SimResult>, String> {
    compare_inner(sc, controllers).map_err(|f| f.message)
}

fn compare_inner(sc: &Scenario, controllers: &[String]) -> Result<Vec<SimResult>, Failure> {
    let built = sc.build()?;
    let specs = controllers
        .iter()
        .map(|c| sc.controller_spec(c))
        .collect::<Result<Vec<_>, _>>()?;
    let mut seen = std::collections::BTreeSet::new();
    for c in controllers {
        if !seen.insert(c.as_str()) {
            return Err(Failure::new(EXIT_VALIDATION, format!("controller `{c}` listed twice")));
        }
    }
    let results: Vec<Result<SimResult, SimError>> = std::thread::scope(|s| {
        let handles: Vec<_> = specs
            .iter()
            .map(|&spec| {
                let built = &built;
                s.spawn(move || run_controller(built, spec))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect()
    });
    results
        .into_iter()
        .zip(controllers)
        .map(|(r, name)| {
            r.map_err(|e| {
                let f = Failure::from(e);
                Failure::new(f.code, format!("{name}: {}", f.message))
            })
        })
        .collect()
}

fn cmd_compare(cli: &Cli, controllers: &[String], plot_script: bool, stdout: &mut String) -> Result<(), Failure> {
    let sc = load_scenario(cli)?;
    let runs = compare_inner(&sc, controllers)?;
    let mut summary = String::from(output::SUMMARY_HEADER);
    summary.push('\n');
    for (name, run) in controllers.iter().zip(&runs) {
        write_run(&cli.out.join(name), run)?;
        summary.push_str(&output::summary_row(name, &run.diagnostics));
        summary.push('\n');
    }
    output::write(&cli.out.join("summary.csv"), &summary)?;
    if plot_script {
        let n = sc.system.n;
        let k = sc.system.k;
        output::write(&cli.out.join("plot.gp"), &output::gnuplot_script(controllers, n, k))?;
    }
    stdout.push_str(&summary);
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub phis: usize,
    pub seed: u64,
    pub phi_scale: f64,
    pub cert_step: f64,
    pub cert_t_final: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            phis: 10,
            seed: 7,
            phi_scale: 1.0,
            cert_step: 1e-2,
            cert_t_final: 60.0,
        }
    }
}

fn kv(out: &mut String, key: &str, value: f64) {
    let _ = writeln!(out, "{key}={}", fmt_f64(value));
}

fn indexed_key(name: &str, i: usize, j: usize, rows: usize) -> String {
    if rows == 1 {
        format!("{name}_{}", j + 1)
    } else {
        format!("{name}_{}_{}", i + 1, j + 1)
    }
}

/// Writes the derived constants as `key=value` lines (comments start with
/// `#`) and then certifies the functional on nominal runs. Certification
/// failure, including a diverging nominal run, maps to exit code 4.
pub fn verify_report(sc: &Scenario, opts: &VerifyOptions) -> Outcome {
    let mut stdout = String::new();
    match verify(sc, opts, &mut stdout) {
        Ok(()) => Outcome {
            stdout,
            stderr: String::new(),
            code: EXIT_OK,
        },
        Err(f) => Outcome {
            stdout,
            stderr: format!("error: {}\n", f.message),
            code: f.code,
        },
    }
}

fn verify(sc: &Scenario, opts: &VerifyOptions, out: &mut String) -> Result<(), Failure> {
    let built = sc.build()?;
    let sys = &built.system;
    let p = built.lkf.p();
    let b = sys.b();
    let k = sys.k();

    let _ = writeln!(out, "scenario={}", sc.metadata.name);
    let _ = writeln!(out, "# sliding variable w = 2 B^T P x");
    let map = b.transpose() * p * 2.0;
    for i in 0..map.nrows() {
        for j in 0..map.ncols() {
            kv(out, &indexed_key("w_coeff", i, j, k), map[(i, j)]);
        }
    }
    let btpb = b.transpose() * p * b;
    for i in 0..k {
        for j in 0..k {
            let key = if k == 1 { "btpb".to_owned() } else { indexed_key("btpb", i, j, k) };
            kv(out, &key, btpb[(i, j)]);
        }
    }
    if k == 1 && built.uncertainty.name() == "example" {
        kv(out, "c", 2.0 / 3.0 * btpb[(0, 0)]);
    }

    // initial data of the reduced system
    let lattice = sys.lattice();
    let h_max = sys.max_delay();
    let phi = &built.sim.phi;
    let states: Vec<DVector<f64>> = lattice.sums().iter().map(|&s| phi.value((-s).max(-h_max))).collect();
    let states = DelayedStates::new(&lattice, states);
    let x0 = states.current().clone();
    let w0 = &map * &x0;
    let z0 = DVector::from_column_slice(&built.sim.rho0) + built.uncertainty.delta_z(0.0, &states);
    let _ = writeln!(out, "phi={}", phi.describe());
    for i in 0..k {
        kv(out, &indexed_key("w0", 0, i, 1), w0[i]);
        kv(out, &indexed_key("z0", 0, i, 1), z0[i]);
    }

    match sc.controller_spec("sta_lr") {
        Ok(ControllerSpec::StaLr(params)) => {
            let rho1 = built.uncertainty.rho1(0.0, &x0);
            let rho2 = built.uncertainty.rho2(0.0, &states);
            let (k1, k2) = sta_gains(&params, rho1, rho2);
            kv(out, "rho1_0", rho1);
            kv(out, "rho2_0", rho2);
            kv(out, "k1_0", k1);
            kv(out, "k2_0", k2);
            let cert = StaCertificate::new(&params, &w0, &z0);
            kv(out, "pst_lambda_min", cert.pst.lambda_min);
            kv(out, "pst_lambda_max", cert.pst.lambda_max);
            kv(out, "eta1", cert.eta1);
            kv(out, "eta2", cert.eta2);
            kv(out, "vst0", cert.vst0);
            kv(out, "T_bound", cert.t_bound);
        }
        _ => {
            let _ = writeln!(out, "# no super-twisting parameters; reaching bound skipped");
        }
    }

    let _ = writeln!(
        out,
        "# functional certification: {} constant initial functions, step {}, t_final {}",
        opts.phis, opts.cert_step, opts.cert_t_final
    );
    kv(out, "alpha1", p.clone().symmetric_eigenvalues().min());
    let phis = random_constant_phis(opts.seed, opts.phis, sys.n(), opts.phi_scale);
    let runs = match nominal_runs(sys, &built.law, &built.lkf, &phis, opts.cert_step, opts.cert_t_final) {
        Ok(runs) => runs,
        Err(SimError::Diverged { t, norm }) => {
            let _ = writeln!(out, "certification=failed");
            let _ = writeln!(out, "# a nominal run diverged at t = {t} (norm {norm:e})");
            return Err(Failure::new(
                EXIT_CERTIFICATION,
                format!("nominal closed loop diverged at t = {t}"),
            ));
        }
        Err(e) => return Err(e.into()),
    };
    match certify_assumption1(&built.lkf, sys, &built.law, &runs) {
        Ok(c) => {
            let _ = writeln!(out, "certification=passed");
            kv(out, "alpha1_observed", c.alpha1_observed);
            kv(out, "alpha2", c.alpha2);
            kv(out, "alpha3", c.alpha3);
            let _ = writeln!(out, "samples={}", c.sample_count);
            Ok(())
        }
        Err(LyapunovError::CertificationFailed { trajectory, t, ratio }) => {
            let _ = writeln!(out, "certification=failed");
            let _ = writeln!(out, "worst_trajectory={trajectory}");
            kv(out, "worst_t", t);
            kv(out, "worst_decay_ratio", ratio);
            Err(Failure::new(
                EXIT_CERTIFICATION,
                format!("functional increases along trajectory {trajectory} at t = {t} (ratio {ratio:e})"),
            ))
        }
        Err(e) => Err(Failure::new(EXIT_CERTIFICATION, e.to_string())),
    }
}

pub const ORACLE_HEADER: &str = "seed,vst0,T_bound,t_reach,pass,k,comparison_excess";

fn cmd_oracle(out_dir: &Path, cfg: &RandomConfig, first: u64, count: u64, stdout: &mut String) -> Result<(), Failure> {
    let (csv, failed) = oracle_table(cfg, first, count).map_err(|e| {
        let code = match e {
            OracleError::Invalid(_) => EXIT_VALIDATION,
            OracleError::Diverged { .. } => EXIT_DIVERGED,
            OracleError::BoundViolated { .. } => EXIT_OTHER,
        };
        Failure::new(code, e.to_string())
    })?;
    output::write(&out_dir.join("oracle.csv"), &csv)?;
    let _ = writeln!(stdout, "scenarios={count}");
    let _ = writeln!(stdout, "failed={failed}");
    if failed > 0 {
        return Err(Failure::new(
            EXIT_CERTIFICATION,
            format!("{failed} of {count} reduced runs violate the reaching bound"),
        ));
    }
    Ok(())
}

/// One CSV row per seed; a row passes when the run reaches within `T` and
/// stays below the comparison solution up to one step.
pub fn oracle_table(cfg: &RandomConfig, first: u64, count: u64) -> Result<(String, usize), OracleError> {
    let mut csv = String::from(ORACLE_HEADER);
    csv.push('\n');
    let mut failed = 0;
    for seed in first..first + count {
        let sc = random_scenario(seed, cfg)?;
        let run = simulate_reduced(&sc)?;
        let t_bound = run.certificate.t_bound;
        let excess = comparison_excess(&run);
        let pass = run.t_reach.is_some_and(|t| t <= t_bound) && excess <= sc.step;
        if !pass {
            failed += 1;
        }
        let _ = writeln!(
            csv,
            "{seed},{},{},{},{pass},{},{}",
            fmt_f64(run.certificate.vst0),
            fmt_f64(t_bound),
            run.t_reach.map_or_else(|| "none".to_owned(), fmt_f64),
            sc.k(),
            fmt_f64(excess)
        );
    }
    Ok((csv, failed))
}

fn cmd_bound(eta1: f64, eta2: f64, vst0: f64, stdout: &mut String) -> Result<(), Failure> {
    if !(eta1 > 0.0) || !(eta2 >= 0.0) || !(vst0 >= 0.0) || !eta2.is_finite() || !vst0.is_finite() {
        return Err(Failure::new(
            EXIT_VALIDATION,
            "bound needs eta1 > 0, eta2 >= 0 and vst0 >= 0",
        ));
    }
    kv(stdout, "T", reaching_time_bound(eta1, eta2, vst0));
    Ok(())
}
