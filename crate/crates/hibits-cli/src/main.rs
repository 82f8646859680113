//! Batch CLI for the hybrid binary time-series estimator: simulate, fit,
//! predict, bootstrap, select and evaluate as reproducible seeded runs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;

use hibits::config::{RunConfig, SplitConfig};
use hibits::data::{load_csv, save_csv, split_data, write_atomic, BinarySeriesDataset};
use hibits::error::Error;
use hibits::kernels::KernelParams;
use hibits::links::LinkKind;
use hibits::model::{classify, fit_hibits, predict, HibitsModel};
use hibits::simulate::{generate, Scenario, ScenarioConfig};

#[derive(Parser)]
#[command(name = "hibits", version, about = "Hybrid estimator for binary time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic series under one of the benchmark scenarios.
    Simulate(SimulateArgs),
    /// Fit the two-stage model and write a model file plus a report.
    Fit(FitArgs),
    /// Predictive probabilities and classifications for new rows.
    Predict(PredictArgs),
    /// Bootstrap point and interval estimates of the linear effects.
    Bootstrap(BootstrapArgs),
    /// Signal-variance selection trace without fitting the full model.
    Select(SelectArgs),
    /// Paired Bonferroni comparison of per-replicate error rates.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// JSON run-configuration file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed for every random choice in the run.
    #[arg(long)]
    seed: Option<u64>,
    /// Link function (logit or probit).
    #[arg(long)]
    link: Option<LinkKind>,
    /// Signal-variance bounds for selection, as `lo,hi`.
    #[arg(long, value_parser = parse_bounds)]
    lambda_bounds: Option<(f64, f64)>,
    /// Fix the signal variance instead of selecting it.
    #[arg(long)]
    lambda: Option<f64>,
    /// Disable marginal-likelihood selection of the signal variance.
    #[arg(long)]
    no_select: bool,
    /// Kernel noise standard deviation.
    #[arg(long)]
    sigma: Option<f64>,
    /// Kernel inverse squared length-scale.
    #[arg(long)]
    rho: Option<f64>,
    /// Mixture weight on the squared-exponential component.
    #[arg(long)]
    eta: Option<f64>,
    /// Cauchy scale of the mixture component.
    #[arg(long)]
    tau: Option<f64>,
    /// Keep GP inputs on their raw scale instead of rescaling to [0, 1].
    #[arg(long)]
    x2_raw: bool,
    /// Missing-data mode: drop the lag column and split randomly.
    #[arg(long)]
    missing_data: bool,
    /// Training rows for the split.
    #[arg(long)]
    train: Option<usize>,
    /// Test rows for the split.
    #[arg(long)]
    test: Option<usize>,
    /// Use a random (rather than sequential) train/test split.
    #[arg(long)]
    random_split: bool,
}

fn parse_bounds(s: &str) -> Result<(f64, f64), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected `lo,hi`, got '{s}'"));
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| format!("bad bound '{}'", parts[0]))?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| format!("bad bound '{}'", parts[1]))?;
    Ok((lo, hi))
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
                RunConfig::from_json(&text)?
            }
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(link) = self.link {
            cfg.link = link;
        }
        if let Some(b) = self.lambda_bounds {
            cfg.lambda_bounds = b;
        }
        if let Some(l) = self.lambda {
            cfg.lambda = l;
            cfg.select_lambda = false;
        }
        if self.no_select {
            cfg.select_lambda = false;
        }
        if let Some(v) = self.sigma {
            cfg.sigma = v;
        }
        if let Some(v) = self.rho {
            cfg.rho = v;
        }
        if let Some(v) = self.eta {
            cfg.eta = v;
        }
        if let Some(v) = self.tau {
            cfg.tau = v;
        }
        if self.x2_raw {
            cfg.rescale_x2 = false;
        }
        if self.missing_data {
            cfg.missing_data = true;
        }
        match (self.train, self.test) {
            (Some(train), Some(test)) => {
                cfg.split = Some(if self.random_split {
                    SplitConfig::Random { train, test }
                } else {
                    SplitConfig::Sequential { train, test }
                });
            }
            (None, None) => {}
            _ => {
                return Err(Error::InvalidInput(
                    "--train and --test must be given together".into(),
                ));
            }
        }
        if cfg.missing_data {
            if let Some(SplitConfig::Sequential { train, test }) = cfg.split {
                cfg.split = Some(SplitConfig::Random { train, test });
            }
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: ConfigArgs,
    /// Scenario (s1..s5).
    #[arg(long)]
    scenario: Scenario,
    /// Series length.
    #[arg(long)]
    n: usize,
    /// Exogenous coefficient.
    #[arg(long, default_value_t = 0.5)]
    beta0: f64,
    /// Lag coefficient.
    #[arg(long, default_value_t = 3.0)]
    beta1: f64,
    /// Initial state conditioning the first lag.
    #[arg(long, default_value_t = 1)]
    y_init: u8,
    /// Output dataset CSV.
    #[arg(long)]
    out: PathBuf,
    /// Also write the latent process values.
    #[arg(long)]
    latent_out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: ConfigArgs,
    /// Training dataset CSV.
    #[arg(long)]
    data: PathBuf,
    /// Output model file (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Human-readable fit report.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write the held-out test rows (requires a split).
    #[arg(long)]
    test_out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    /// Fitted model file.
    #[arg(long)]
    model: PathBuf,
    /// Dataset CSV with the rows to predict.
    #[arg(long)]
    data: PathBuf,
    /// Output CSV of predictive quantities.
    #[arg(long)]
    out: PathBuf,
    /// Classification threshold.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

#[derive(Args)]
struct BootstrapArgs {
    #[command(flatten)]
    common: ConfigArgs,
    /// Fitted model file.
    #[arg(long)]
    model: PathBuf,
    /// Dataset CSV to resample against; defaults to the training rows
    /// embedded in the model file.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Bootstrap iterations.
    #[arg(long)]
    iters: Option<usize>,
    /// Output summary CSV.
    #[arg(long)]
    out: PathBuf,
    /// Also write every coefficient draw.
    #[arg(long)]
    draws_out: Option<PathBuf>,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    common: ConfigArgs,
    /// Training dataset CSV.
    #[arg(long)]
    data: PathBuf,
    /// Output CSV of the selection trace.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// CSV of error rates: one row per replicate, one column per method.
    #[arg(long)]
    errors: PathBuf,
    /// Column of the proposed method (differences are baseline minus other).
    #[arg(long, default_value_t = 0)]
    baseline_col: usize,
    /// Simultaneous confidence level.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Output CSV of the comparison table.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    if let Ok(workers) = std::env::var("HIBITS_WORKERS") {
        if let Ok(n) = workers.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Schema(_) | Error::Load { .. } | Error::InvalidInput(_) => {
                    ExitCode::from(2)
                }
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Bootstrap(args) => cmd_bootstrap(args),
        Command::Select(args) => cmd_select(args),
        Command::Evaluate(args) => cmd_evaluate(args),
    }
}

fn scenario_kernel(cfg: &RunConfig, scenario: Scenario) -> KernelParams {
    // S5 uses the mixture as configured; the others are squared-exponential.
    match scenario {
        Scenario::S5 => cfg.kernel(),
        _ => KernelParams::squared_exp(cfg.lambda, cfg.rho, cfg.sigma * cfg.sigma),
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), Error> {
    let cfg = args.common.resolve()?;
    let sc = ScenarioConfig {
        scenario: args.scenario,
        beta: (args.beta0, args.beta1),
        kernel: scenario_kernel(&cfg, args.scenario),
        n: args.n,
        y_init: args.y_init,
        seed: cfg.seed,
    };
    let out = generate(&sc)?;
    save_csv(&out.data, &args.out)?;
    println!(
        "simulate: scenario {} n {} seed {} -> {}",
        args.scenario,
        args.n,
        cfg.seed,
        args.out.display()
    );
    if let Some(path) = args.latent_out {
        let mut text = String::from("t,f\n");
        match &out.latent {
            Some(f) => {
                for (i, v) in f.iter().enumerate() {
                    text.push_str(&format!("{},{}\n", out.data.t[i], v));
                }
            }
            None => {
                for t in &out.data.t {
                    text.push_str(&format!("{t},0.0\n"));
                }
            }
        }
        write_atomic(&path, text.as_bytes())?;
        println!("simulate: latent process -> {}", path.display());
    }
    Ok(())
}

/// Load, apply lag policy, and split per the configuration.
fn prepare_data(
    path: &Path,
    cfg: &RunConfig,
) -> Result<(BinarySeriesDataset, Option<BinarySeriesDataset>), Error> {
    let mut data = load_csv(path)?;
    if cfg.missing_data {
        if data.lag_col.is_some() {
            data = data.drop_lag_column()?;
        }
    } else if cfg.add_lag && data.lag_col.is_none() {
        data = data.add_lag_column()?;
    }
    if !data.gap_rows.is_empty() {
        println!(
            "note: {} row(s) follow a time gap (first at data row {})",
            data.gap_rows.len(),
            data.gap_rows[0] + 1
        );
    }
    match cfg.split {
        Some(split) => {
            let (train, test) = split_data(&data, split.to_spec(cfg.seed))?;
            Ok((train, Some(test)))
        }
        None => Ok((data, None)),
    }
}

fn cmd_fit(args: FitArgs) -> Result<(), Error> {
    let cfg = args.common.resolve()?;
    let (train, test) = prepare_data(&args.data, &cfg)?;
    if args.test_out.is_some() && test.is_none() {
        return Err(Error::InvalidInput(
            "--test-out needs a train/test split".into(),
        ));
    }
    let model = fit_hibits(&train, &cfg.fit_options())?;
    let hash = cfg.hash()?;
    let config_json: serde_json::Value = serde_json::from_str(&cfg.to_json()?)?;
    model.save(&args.out, config_json, &hash, cfg.seed)?;
    println!(
        "fit: n_train {} lambda {} log_marginal {:.6} -> {}",
        train.len(),
        model.kernel.lambda,
        model.laplace.log_marginal,
        args.out.display()
    );
    if let Some(path) = &args.report {
        write_atomic(path, fit_report(&model, &cfg, &hash, &train)?.as_bytes())?;
        println!("fit: report -> {}", path.display());
    }
    if let (Some(path), Some(test)) = (&args.test_out, &test) {
        save_csv(test, path)?;
        println!("fit: test rows -> {}", path.display());
    }
    Ok(())
}

fn fit_report(
    model: &HibitsModel,
    cfg: &RunConfig,
    hash: &str,
    train: &BinarySeriesDataset,
) -> Result<String, Error> {
    use std::fmt::Write;
    let mut s = String::new();
    let mut w = |line: String| {
        let _ = writeln!(s, "{line}");
    };
    w("hibits fit report".into());
    w(format!("version: {}", env!("CARGO_PKG_VERSION")));
    w(format!("config_hash: {hash}"));
    w(format!("seed: {}", cfg.seed));
    w(format!("rows: {}", train.len()));
    w(format!("link: {}", model.link));
    w(format!(
        "kernel: lambda={} rho={} sigma2={} eta={} tau={}",
        model.kernel.lambda, model.kernel.rho, model.kernel.sigma2, model.kernel.eta, model.kernel.tau
    ));
    match &model.lambda_trace {
        Some(trace) => w(format!(
            "lambda selection: {} evaluations on [{}, {}], lambda_hat={}",
            trace.len(),
            cfg.lambda_bounds.0,
            cfg.lambda_bounds.1,
            model.kernel.lambda
        )),
        None => w("lambda selection: disabled".into()),
    }
    w(format!("log_marginal: {}", model.laplace.log_marginal));
    w(format!(
        "stage1: converged={} iterations={} loglik={} aic={} bic={}",
        model.stage1.converged,
        model.stage1.iterations,
        model.stage1.loglik,
        model.stage1.aic,
        model.stage1.bic
    ));
    w("coefficients (95% Wald):".into());
    let ci = hibits::glm::wald_ci(&model.stage1, 0.95)?;
    let names: Vec<String> = std::iter::once("(intercept)".to_string())
        .chain(model.x1_names.iter().cloned())
        .collect();
    for (j, name) in names.iter().enumerate() {
        w(format!(
            "  {:<16} {:>12.6}  ({:.6}, {:.6})",
            name, model.stage1.beta[j], ci[j].0, ci[j].1
        ));
    }
    w(format!("laplace iterations: {}", model.laplace.iterations));
    w(format!("gap rows: {}", train.gap_rows.len()));
    Ok(s)
}

fn cmd_predict(args: PredictArgs) -> Result<(), Error> {
    let model = HibitsModel::load(&args.model)?;
    let mut data = load_csv(&args.data)?;
    // Mirror the training lag policy so the covariate schema matches.
    if model.lag_col.is_some() && data.lag_col.is_none() {
        data = data.add_lag_column()?;
    }
    if model.lag_col.is_none() && data.lag_col.is_some() {
        data = data.drop_lag_column()?;
    }
    if data.x1_names != model.x1_names {
        return Err(Error::Schema(format!(
            "data covariates {:?} do not match the model schema {:?}",
            data.x1_names, model.x1_names
        )));
    }
    let dist = predict(&model, &data.x1, &data.x2)?;
    let y_hat = classify(&dist, args.threshold)?;

    let mut text = String::from("t,y,pi_bar,f_bar,v,y_hat\n");
    for (i, &label) in y_hat.iter().enumerate() {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            data.t[i], data.y[i], dist.pi_bar[i], dist.f_bar[i], dist.v[i], label
        ));
    }
    write_atomic(&args.out, text.as_bytes())?;

    let err = hibits::eval::error_rate(&data.y, &y_hat)?;
    println!(
        "predict: {} rows, threshold {}, error rate {:.4} -> {}",
        data.len(),
        args.threshold,
        err,
        args.out.display()
    );
    Ok(())
}

fn cmd_bootstrap(args: BootstrapArgs) -> Result<(), Error> {
    let cfg = args.common.resolve()?;
    let iters = args.iters.unwrap_or(cfg.bootstrap_iters);
    let model = HibitsModel::load(&args.model)?;
    let data = match &args.data {
        Some(path) => {
            let mut data = load_csv(path)?;
            if model.lag_col.is_some() && data.lag_col.is_none() {
                data = data.add_lag_column()?;
            }
            if model.lag_col.is_none() && data.lag_col.is_some() {
                data = data.drop_lag_column()?;
            }
            data
        }
        None => BinarySeriesDataset::new(
            model.train_t.clone(),
            model.train_y.clone(),
            model.train_x1.clone(),
            model.x1_names.clone(),
            model.train_x2.clone(),
            model.x2_names.clone(),
            model.lag_col,
        )?,
    };
    let summary = hibits::bootstrap::bootstrap_beta(&model, &data, iters, cfg.seed)?;

    let mut text = String::from("coef,point,ci_lower,ci_upper\n");
    for j in 0..summary.beta_star.len() {
        text.push_str(&format!(
            "{},{},{},{}\n",
            summary.coef_names[j], summary.beta_star[j], summary.ci_lower[j], summary.ci_upper[j]
        ));
    }
    write_atomic(&args.out, text.as_bytes())?;
    println!(
        "bootstrap: {} iterations, {} failed, reliable={} -> {}",
        iters,
        summary.n_failed,
        summary.reliable,
        args.out.display()
    );

    if let Some(path) = &args.draws_out {
        let mut text = String::from("iter");
        for name in &summary.coef_names {
            text.push(',');
            text.push_str(name);
        }
        text.push('\n');
        for i in 0..summary.draws.nrows() {
            text.push_str(&i.to_string());
            for j in 0..summary.draws.ncols() {
                text.push_str(&format!(",{}", summary.draws[(i, j)]));
            }
            text.push('\n');
        }
        write_atomic(path, text.as_bytes())?;
        println!("bootstrap: draws -> {}", path.display());
    }
    Ok(())
}

fn cmd_select(args: SelectArgs) -> Result<(), Error> {
    let cfg = args.common.resolve()?;
    let (train, _) = prepare_data(&args.data, &cfg)?;
    let stage1 = hibits::glm::fit_glm(&train.x1, &train.y, cfg.link, None, true)?;
    let offset = &train.x1 * stage1.slopes();
    let transform = if cfg.rescale_x2 {
        hibits::model::X2Transform::unit_interval(&train.x2)
    } else {
        hibits::model::X2Transform::identity(train.x2.ncols())
    };
    let x2t = transform.apply(&train.x2)?;
    let sel = hibits::select::optimize_lambda(
        &x2t,
        &train.y,
        &offset,
        &cfg.kernel(),
        cfg.link,
        cfg.lambda_bounds,
        None,
    )?;

    let mut text = String::from("eval,lambda,log_marginal\n");
    for (i, (l, v)) in sel.trace.iter().enumerate() {
        text.push_str(&format!("{},{},{}\n", i + 1, l, v));
    }
    write_atomic(&args.out, text.as_bytes())?;
    println!(
        "select: lambda_hat {} log_marginal {:.6} after {} evaluations -> {}",
        sel.lambda,
        sel.log_marginal,
        sel.evaluations,
        args.out.display()
    );
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), Error> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(&args.errors)
        .map_err(|e| Error::Io(format!("{}: {e}", args.errors.display())))?;
    let methods: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let mut row = Vec::with_capacity(methods.len());
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Load {
                row: i + 1,
                column: methods.get(j).cloned().unwrap_or_default(),
                message: format!("malformed error rate '{field}'"),
            })?;
            row.push(v);
        }
        if row.len() != methods.len() {
            return Err(Error::Load {
                row: i + 1,
                column: String::new(),
                message: "ragged row".into(),
            });
        }
        rows.push(row);
    }
    let m = DMatrix::from_fn(rows.len(), methods.len(), |i, j| rows[i][j]);
    let table = hibits::eval::paired_bonferroni_ci(&m, args.baseline_col, args.level)?;

    let mut text = String::from("method,mean_diff,lower,upper\n");
    for iv in &table {
        text.push_str(&format!(
            "{},{},{},{}\n",
            methods[iv.method], iv.mean_diff, iv.lower, iv.upper
        ));
    }
    write_atomic(&args.out, text.as_bytes())?;
    for iv in &table {
        println!(
            "evaluate: {} - {}: mean {:+.4} interval ({:+.4}, {:+.4})",
            methods[args.baseline_col], methods[iv.method], iv.mean_diff, iv.lower, iv.upper
        );
    }
    println!("evaluate: table -> {}", args.out.display());
    Ok(())
}
