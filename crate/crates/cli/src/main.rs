use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use polyspike::fluct::EntryLaw;
use polyspike::freeprob::DysonConfig;
use polyspike::pipeline::{
    certify, prepare_targets, predict_outliers, verify_example, CoefficientsReport, ModelConfig,
    PipelineOptions, VerificationReport,
};
use polyspike::simulate::{
    ks_matched_gaussian, ks_statistic, lilliefors_critical_5pct, run_trials, Moments, TargetSamples,
};
use polyspike::Linearization;

/// Residual above which a linearization is rejected.
const SCHUR_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Core(#[from] polyspike::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
    #[error("linearization residual {0:.3e} exceeds {SCHUR_TOL:e}")]
    Certification(f64),
    #[error("KS distance above the acceptance threshold for {0} outlier(s)")]
    KsRejected(usize),
    #[error("closed-form verification failed")]
    Verification,
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use polyspike::Error as E;
        match self {
            CliError::Usage(_) | CliError::Io { .. } => 2,
            CliError::Certification(_) => 6,
            CliError::KsRejected(_) => 5,
            CliError::Verification => 6,
            CliError::Core(e) => match e {
                E::Json(_)
                | E::InvalidInput(_)
                | E::NotSelfAdjoint
                | E::DimensionMismatch(_)
                | E::NonFinite
                | E::NotHermitian(_) => 2,
                E::Multiplicity { .. } => 4,
                E::ExcludedFraction { .. } => 5,
                _ => 3,
            },
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(name = "polyspike", version, about = "Outliers of spiked polynomial random matrix models and their fluctuations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a linear pencil for the model polynomial and certify it.
    Linearize(Common),
    /// Scan the limiting support and locate the outliers.
    Outliers(Common),
    /// Fluctuation coefficients and limit law of every outlier.
    Fluct(Common),
    /// Monte Carlo comparison of outlier fluctuations with the prediction.
    Simulate(SimulateArgs),
    /// Compare the general machinery with the worked example's closed forms.
    VerifyExample(VerifyArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// Model file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Matrix size used for the finite-N centering ρ_N.
    #[arg(long)]
    n: Option<usize>,
    /// Smallest η of the continuation ladder.
    #[arg(long, default_value_t = DysonConfig::default().eta_floor)]
    eta_min: f64,
    /// Dyson self-consistency tolerance.
    #[arg(long, default_value_t = DysonConfig::default().tol)]
    tol: f64,
    /// Support scan grid points.
    #[arg(long, default_value_t = 2000)]
    grid: usize,
    /// Eigenvalue window half-width around each outlier.
    #[arg(long)]
    window: Option<f64>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    /// Only simulate the outlier with this index (ascending order).
    #[arg(long)]
    outlier: Option<usize>,
    /// KS distance below which a run is accepted.
    #[arg(long, default_value_t = 0.10)]
    ks_threshold: f64,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, allow_hyphen_values = true)]
    theta: f64,
    #[arg(long, default_value_t = DysonConfig::default().eta_floor)]
    eta_min: f64,
    #[arg(long, default_value_t = DysonConfig::default().tol)]
    tol: f64,
    #[arg(long, default_value_t = 2000)]
    grid: usize,
    /// Also write verify.json to this directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn options(&self) -> CliResult<PipelineOptions> {
        if !(self.tol > 0.0) || !(self.eta_min > 0.0) {
            return Err(CliError::Usage("--tol and --eta-min must be positive".into()));
        }
        let dyson = DysonConfig {
            tol: self.tol,
            eta_floor: self.eta_min,
            ..DysonConfig::default()
        };
        let mut opts = PipelineOptions::default().with_dyson(dyson);
        opts.scan.grid_points = self.grid;
        Ok(opts)
    }

    fn settings(&self) -> serde_json::Value {
        let opts = PipelineOptions::default();
        json!({
            "eta_min": self.eta_min,
            "tol": self.tol,
            "grid": self.grid,
            "scan_eta": opts.scan.eta,
            "scan_threshold": opts.scan.threshold,
            "root_tol": opts.outliers.root_tol,
            "contour_radius": opts.outliers.radius,
            "seed": self.seed,
            "window": self.window,
        })
    }
}

fn init_threads(threads: Option<usize>) -> CliResult<()> {
    if let Some(t) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Usage(format!("--threads: {e}")))?;
    }
    Ok(())
}

fn load_config(path: &Path) -> CliResult<ModelConfig> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ModelConfig::from_json(&text).map_err(|e| match e {
        polyspike::Error::Json(j) => CliError::Usage(format!("{}: {j}", path.display())),
        other => other.into(),
    })
}

fn write_file(dir: &Path, name: &str, contents: &str) -> CliResult<PathBuf> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| CliError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

fn write_json<T: Serialize + ?Sized>(dir: &Path, name: &str, value: &T) -> CliResult<PathBuf> {
    let mut text = serde_json::to_string_pretty(value).map_err(polyspike::Error::from)?;
    text.push('\n');
    write_file(dir, name, &text)
}

fn cmd_linearize(args: &Common) -> CliResult<()> {
    let cfg = load_config(&args.config)?;
    let l: Linearization = match &cfg.linearization {
        Some(l) => l.clone(),
        None => polyspike::linearize::linearize(&cfg.polynomial)?,
    };
    let residual = certify(&l, &cfg.polynomial, 6, args.seed)?;
    write_json(&args.out, "linearization.json", &l)?;
    let report = json!({
        "m": l.m(),
        "degenerate": l.is_degenerate(),
        "schur_residual": residual,
        "tolerance": SCHUR_TOL,
        "probe_size": 6,
        "seed": args.seed,
    });
    println!("{}", serde_json::to_string_pretty(&report).map_err(polyspike::Error::from)?);
    if l.is_degenerate() {
        println!("note: the polynomial has degree 1; the pencil has size m = {}", l.m());
    }
    if residual < SCHUR_TOL {
        Ok(())
    } else {
        Err(CliError::Certification(residual))
    }
}

fn cmd_outliers(args: &Common) -> CliResult<()> {
    let cfg = load_config(&args.config)?;
    let l = cfg.linearization()?;
    let pred = predict_outliers(&cfg, &l, &args.options()?)?;
    write_json(&args.out, "support.json", &pred.scan)?;
    write_json(&args.out, "outliers.json", &pred.outliers)?;
    println!("support intervals: {:?}", pred.scan.support_intervals);
    for o in &pred.outliers {
        println!("outlier ρ = {:.12}  multiplicity {}  |det| {:.2e}", o.rho, o.multiplicity, o.residual);
    }
    if pred.outliers.is_empty() {
        println!("no outliers");
    }
    Ok(())
}

fn cmd_fluct(args: &Common) -> CliResult<()> {
    let cfg = load_config(&args.config)?;
    let l = cfg.linearization()?;
    let opts = args.options()?;
    let pred = predict_outliers(&cfg, &l, &opts)?;
    write_json(&args.out, "outliers.json", &pred.outliers)?;
    let reports: Vec<CoefficientsReport> = match args.n {
        Some(n) => prepare_targets(&cfg, &l, &pred, n, args.window, opts.dyson())?
            .iter()
            .map(|t| CoefficientsReport::new(&t.coefficients))
            .collect::<Result<_, _>>()?,
        None => pred
            .outliers
            .iter()
            .map(|o| {
                let c = polyspike::pipeline::coefficients_for(&cfg, &l, o, o.rho, opts.dyson())?;
                CoefficientsReport::new(&c)
            })
            .collect::<Result<_, _>>()?,
    };
    write_json(&args.out, "coefficients.json", &reports)?;
    for r in &reports {
        println!(
            "ρ = {:.10}  C1 = {:.10}  C2 = {:.10}  v = {:.10}  ṽ = {:.10}",
            r.rho, r.c1, r.c2, r.v, r.v_tilde
        );
    }
    Ok(())
}

fn samples_csv(n: usize, trials: usize, seed: u64, s: &TargetSamples) -> CliResult<String> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Usage(format!("csv: {e}"));
    w.write_record(["N", "trials", "seed", "rho", "rho_N", "C1"]).map_err(io)?;
    w.write_record([
        n.to_string(),
        trials.to_string(),
        seed.to_string(),
        s.target.rho.to_string(),
        s.target.rho_n.to_string(),
        s.target.c1.to_string(),
    ])
    .map_err(io)?;
    for x in &s.samples {
        w.write_record([x.to_string()]).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Usage(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    let common = &args.common;
    let cfg = load_config(&common.config)?;
    let l = cfg.linearization()?;
    let opts = common.options()?;
    let n = common.n.unwrap_or(300);
    let pred = predict_outliers(&cfg, &l, &opts)?;
    let mut targets = prepare_targets(&cfg, &l, &pred, n, common.window, opts.dyson())?;
    if let Some(k) = args.outlier {
        if k >= targets.len() {
            return Err(CliError::Usage(format!("--outlier {k}: only {} outlier(s)", targets.len())));
        }
        targets = vec![targets.swap_remove(k)];
    }
    if targets.is_empty() {
        return Err(CliError::Usage("the model has no outliers to simulate".into()));
    }
    let runs = run_trials(
        &cfg.model_spec(),
        &cfg.entry_law,
        n,
        args.trials,
        common.seed,
        &targets.iter().map(|t| t.target).collect::<Vec<_>>(),
    )?;

    let mut rejected = 0;
    let mut entries = Vec::new();
    for (k, (t, s)) in targets.iter().zip(&runs).enumerate() {
        let name = if runs.len() == 1 {
            "samples.csv".to_string()
        } else {
            format!("samples_{}.csv", k + 1)
        };
        write_file(&common.out, &name, &samples_csv(n, args.trials, common.seed, s)?)?;
        let law = t.coefficients.scaled_limit_law()?;
        let (ks, ks_gauss) = if s.samples.is_empty() {
            (None, None)
        } else {
            (Some(ks_statistic(&s.samples, &law)?), Some(ks_matched_gaussian(&s.samples)?))
        };
        let pass = ks.is_none_or(|d| d < args.ks_threshold);
        if !pass {
            rejected += 1;
        }
        println!(
            "ρ = {:.8}: {} kept, {} excluded, KS {}  (matched Gaussian {})",
            t.target.rho,
            s.samples.len(),
            s.excluded,
            ks.map_or("n/a".into(), |d| format!("{d:.4}")),
            ks_gauss.map_or("n/a".into(), |d| format!("{d:.4}")),
        );
        entries.push(json!({
            "samples_file": name,
            "rho": t.target.rho,
            "rho_N": t.target.rho_n,
            "window": t.target.window,
            "C1": t.coefficients.c1,
            "C2": t.coefficients.c2,
            "v": t.coefficients.v,
            "v_tilde": t.coefficients.v_tilde,
            "predicted_law": law.to_json(),
            "predicted_variance": law.variance(),
            "kept": s.samples.len(),
            "excluded": s.excluded,
            "excluded_fraction": s.excluded_fraction(),
            "moments": (!s.samples.is_empty()).then(|| Moments::of(&s.samples)),
            "ks": ks,
            "ks_threshold": args.ks_threshold,
            "ks_pass": pass,
            "ks_matched_gaussian": ks_gauss,
            "lilliefors_critical_5pct": (!s.samples.is_empty()).then(|| lilliefors_critical_5pct(s.samples.len())),
        }));
    }
    let mut annotations = Vec::new();
    if matches!(cfg.entry_law, EntryLaw::CustomAtoms { .. }) {
        annotations.push("discrete entry law: outside the Poincaré-inequality hypothesis, comparisons are indicative only");
    }
    if common.window.is_none() && cfg.window.is_none() {
        annotations.push("window: gap-geometry default (half the distance to the support or to the nearest outlier, at most 0.5)");
    }
    let report = json!({
        "N": n,
        "trials": args.trials,
        "seed": common.seed,
        "entry_law": cfg.entry_law,
        "settings": common.settings(),
        "annotations": annotations,
        "targets": entries,
    });
    write_json(&common.out, "report.json", &report)?;
    if rejected > 0 {
        Err(CliError::KsRejected(rejected))
    } else {
        Ok(())
    }
}

fn print_verification(r: &VerificationReport) {
    println!("θ = {}", r.theta);
    println!("{:<6} {:<14} {:>22} {:>22} {:>10}  ", "branch", "quantity", "computed", "closed form", "rel err");
    for row in &r.rows {
        println!(
            "{:<6} {:<14} {:>22.14} {:>22.14} {:>10.2e}  {}",
            row.branch,
            row.quantity,
            row.computed,
            row.expected,
            row.rel_error,
            if row.pass { "ok" } else { "MISMATCH" }
        );
    }
    for d in &r.diagnostics {
        println!("note: {d}");
    }
    println!("{}", if r.passed { "PASS" } else { "FAIL" });
}

fn cmd_verify_example(args: &VerifyArgs) -> CliResult<()> {
    if args.theta == 0.0 || !args.theta.is_finite() {
        return Err(CliError::Usage("--theta must be finite and nonzero".into()));
    }
    let dyson = DysonConfig {
        tol: args.tol,
        eta_floor: args.eta_min,
        ..DysonConfig::default()
    };
    let mut opts = PipelineOptions::default().with_dyson(dyson);
    opts.scan.grid_points = args.grid;
    let report = verify_example(args.theta, &opts)?;
    print_verification(&report);
    if let Some(dir) = &args.out {
        write_json(dir, "verify.json", &report)?;
    }
    if report.passed {
        Ok(())
    } else {
        Err(CliError::Verification)
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::Linearize(a) => {
            init_threads(a.threads)?;
            cmd_linearize(a)
        }
        Command::Outliers(a) => {
            init_threads(a.threads)?;
            cmd_outliers(a)
        }
        Command::Fluct(a) => {
            init_threads(a.threads)?;
            cmd_fluct(a)
        }
        Command::Simulate(a) => {
            init_threads(a.common.threads)?;
            cmd_simulate(a)
        }
        Command::VerifyExample(a) => {
            init_threads(a.threads)?;
            cmd_verify_example(a)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
