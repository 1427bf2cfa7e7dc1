//! `splinenet` command line: datasets, fitting, conversion, verification,
//! cost reports and timing benchmarks.

mod csvio;
mod manifest;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use splinenet::convert::{kan_to_powermlp, powermlp_to_kan, verify_equivalence, BoxDomain, ConvertError, ConvertOptions};
use splinenet::data::{gen_function_dataset, DataError, Dataset};
use splinenet::flops::{self, CostReport, FlopsError, DEFAULT_LAMBDA, REFERENCE_NOTE};
use splinenet::model_io::{from_json, parse_model_spec, to_json};
use splinenet::train::{curve_csv, default_lr_grid, grid_search, loss_svg, timing_bench, train, BatchMode, TrainConfig, TrainError};
use splinenet::{Network, NetworkKind};

use manifest::{manifest_path_for, write_atomic, RunManifest};

const EXIT_VERIFY: u8 = 2;
const EXIT_INPUT: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Debug)]
enum Failure {
    Input(String),
    Numeric(String),
    Verify(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Verify(_) => EXIT_VERIFY,
            Failure::Input(_) => EXIT_INPUT,
            Failure::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

fn input<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Input(e.to_string())
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } | TrainError::AllDiverged(_) => Failure::Numeric(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

impl From<ConvertError> for Failure {
    fn from(e: ConvertError) -> Self {
        match e {
            ConvertError::Unbounded { .. } => Failure::Numeric(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        input(e)
    }
}

impl From<FlopsError> for Failure {
    fn from(e: FlopsError) -> Self {
        input(e)
    }
}

#[derive(Parser)]
#[command(name = "splinenet", version, about = "KAN / PowerMLP toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a built-in target function into train and test CSV files.
    GenData {
        #[arg(long = "fn")]
        function: String,
        /// Number of training rows (test rows default to the same).
        #[arg(long)]
        n: usize,
        #[arg(long)]
        n_test: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Half-width E of the input box [-E, E]^2.
        #[arg(long = "box", default_value_t = 1.0)]
        half_width: f64,
        #[arg(long)]
        out: PathBuf,
        /// Test split path; defaults to `<out stem>.test.csv`.
        #[arg(long)]
        test_out: Option<PathBuf>,
    },
    /// Train a model (JSON file or shorthand such as `powermlp:[2,4,1]:k=3`).
    Fit {
        #[arg(long)]
        model: String,
        #[arg(long)]
        data: PathBuf,
        /// Test split; defaults to `<data stem>.test.csv`.
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        epochs: usize,
        #[arg(long, conflicts_with = "lr_grid")]
        lr: Option<f64>,
        /// Comma-separated rates, or `default` for ten log-spaced rates in [1e-4, 1e-1].
        #[arg(long)]
        lr_grid: Option<String>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long, default_value_t = 0.1)]
        warmup: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Convert between KAN and PowerMLP.
    Convert {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        to: Target,
        /// Box half-width E for PowerMLP to KAN.
        #[arg(long = "box")]
        half_width: Option<f64>,
        #[arg(long, default_value_t = 65_536)]
        max_width: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two models on [-E, E]^n; exits 2 when they differ by more than tol.
    Verify {
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
        #[arg(long = "box", default_value_t = 1.0)]
        half_width: f64,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// FLOPs and parameter report.
    Flops {
        /// Model JSON or shorthand; omit with --reference.
        #[arg(long, required_unless_present = "reference")]
        model: Option<String>,
        /// Cost of one basis evaluation; integer, decimal or fraction.
        #[arg(long = "lambda", default_value_t = DEFAULT_LAMBDA.to_string())]
        lambda: String,
        /// Report the three small reference shapes with the reconciliation note.
        #[arg(long)]
        reference: bool,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Training wall-clock benchmark.
    Bench {
        #[arg(long, value_enum, default_value_t = Suite::Table3)]
        suite: Suite,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-2)]
        lr: f64,
        /// Also time the KAN shape (slow).
        #[arg(long)]
        with_kan: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    Kan,
    Powermlp,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Table3,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors are input errors; keep 2 for failed verification
            return if e.use_stderr() { ExitCode::from(EXIT_INPUT) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Verify(m) => eprintln!("verification failed: {m}"),
                Failure::Input(m) => eprintln!("error: {m}"),
                Failure::Numeric(m) => eprintln!("numeric failure: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::GenData { function, n, n_test, seed, half_width, out, test_out } => gen_data(&function, n, n_test.unwrap_or(n), seed, half_width, &out, test_out),
        Command::Fit { model, data, test, epochs, lr, lr_grid, batch, warmup, seed, out_dir } => {
            let config = TrainConfig {
                epochs,
                batch: batch.map_or(BatchMode::Full, BatchMode::Mini),
                lr: lr.unwrap_or(1e-2),
                warmup_fraction: warmup,
                seed,
                lr_grid: match lr_grid.as_deref() {
                    None => Vec::new(),
                    Some("default") => default_lr_grid(),
                    Some(list) => parse_list(list)?,
                },
                track_test: true,
                ..TrainConfig::default()
            };
            fit(&model, &data, test, config, &out_dir)
        }
        Command::Convert { input: path, to, half_width, max_width, out } => convert(&path, to, half_width, max_width, &out),
        Command::Verify { a, b, half_width, samples, tol, out } => verify(&a, &b, half_width, samples, tol, out),
        Command::Flops { model, lambda, reference, csv } => flops_cmd(model.as_deref(), &lambda, reference, csv),
        Command::Bench { suite: Suite::Table3, repeats, epochs, lr, with_kan, seed, out } => bench(repeats, epochs, lr, with_kan, seed, &out),
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>, Failure> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().ok().filter(|x| *x > 0.0 && x.is_finite()).ok_or_else(|| Failure::Input(format!("--lr-grid: {v:?} is not a positive rate"))))
        .collect()
}

fn sibling_test_path(p: &Path) -> PathBuf {
    let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    p.with_file_name(format!("{stem}.test.csv"))
}

/// Model JSON path, or shorthand for a fresh model.
fn load_model(arg: &str, seed: u64) -> Result<Network, Failure> {
    let path = Path::new(arg);
    if path.exists() {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Input(format!("{arg}: {e}")))?;
        return from_json(&text).map_err(|e| Failure::Input(format!("{arg}: {e}")));
    }
    if arg.contains(':') {
        return parse_model_spec(arg, seed).map_err(input);
    }
    Err(Failure::Input(format!("{arg}: no such model file and not a model spec")))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    write_atomic(path, bytes).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn gen_data(function: &str, n: usize, n_test: usize, seed: u64, e: f64, out: &Path, test_out: Option<PathBuf>) -> Result<(), Failure> {
    let domain = BoxDomain::symmetric(2, e).map_err(|err| Failure::Input(format!("--box: {err}")))?;
    let mut m = RunManifest::begin("gen-data", json!({ "fn": function, "n": n, "n_test": n_test, "box": e }), Some(seed));
    let data = gen_function_dataset(function, n, n_test, seed, &domain)?;
    let test_path = test_out.unwrap_or_else(|| sibling_test_path(out));
    csvio::write_dataset(out, &data.x_train, &data.y_train).map_err(input)?;
    csvio::write_dataset(&test_path, &data.x_test, &data.y_test).map_err(input)?;
    m.outputs = vec![out.to_path_buf(), test_path.clone()];
    m.finish(&manifest_path_for(out)).map_err(input)?;
    println!("wrote {} train rows to {} and {} test rows to {}", n, out.display(), n_test, test_path.display());
    Ok(())
}

fn fit(model: &str, data_path: &Path, test: Option<PathBuf>, config: TrainConfig, out_dir: &Path) -> Result<(), Failure> {
    let mut m = RunManifest::begin("fit", json!({ "model": model, "data": data_path, "test": test, "train": config }), Some(config.seed));
    let test_path = test.unwrap_or_else(|| sibling_test_path(data_path));
    let (x_train, y_train) = csvio::read_dataset(data_path).map_err(input)?;
    let (x_test, y_test) = csvio::read_dataset(&test_path).map_err(input)?;
    let data = Dataset::new(x_train, y_train, x_test, y_test)?;
    let template = load_model(model, config.seed)?;

    let (net, fit, outcomes) = if config.lr_grid.is_empty() {
        let mut net = template;
        let fit = train(&mut net, &data, &config)?;
        (net, fit, Vec::new())
    } else {
        let res = grid_search(|| Ok(template.clone()), &data, &config)?;
        (res.network, res.fit, res.outcomes)
    };

    std::fs::create_dir_all(out_dir).map_err(|e| Failure::Input(format!("{}: {e}", out_dir.display())))?;
    let model_path = out_dir.join("model.json");
    write_file(&model_path, to_json(&net).map_err(|e| Failure::Numeric(e.to_string()))?.as_bytes())?;
    let results_path = out_dir.join("results.csv");
    let results = format!(
        "model,params,epochs,lr,train_rmse,test_rmse,seconds\n{},{},{},{},{},{},{}\n",
        net.name,
        net.param_count(),
        config.epochs,
        fit.lr,
        fit.train_rmse,
        fit.test_rmse,
        fit.seconds
    );
    write_file(&results_path, results.as_bytes())?;
    let curve_path = out_dir.join("curve.csv");
    write_file(&curve_path, curve_csv(&fit, &config).as_bytes())?;
    let svg_path = out_dir.join("loss.svg");
    write_file(&svg_path, loss_svg(&[(net.name.as_str(), &fit)]).as_bytes())?;
    m.outputs = vec![model_path, results_path, curve_path, svg_path];
    if !outcomes.is_empty() {
        let mut grid = String::from("lr,train_rmse,test_rmse,error\n");
        for o in &outcomes {
            let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            let _ = writeln!(grid, "{},{},{},{}", o.lr, f(o.train_rmse), f(o.test_rmse), o.error.as_deref().unwrap_or("").replace(',', ";"));
        }
        let grid_path = out_dir.join("grid.csv");
        write_file(&grid_path, grid.as_bytes())?;
        m.outputs.push(grid_path);
    }
    m.finish(&out_dir.join("manifest.json")).map_err(input)?;
    println!("{}: lr={} train_rmse={:.6e} test_rmse={:.6e} ({:.3}s)", net.name, fit.lr, fit.train_rmse, fit.test_rmse, fit.seconds);
    Ok(())
}

fn convert(path: &Path, to: Target, half_width: Option<f64>, max_width: usize, out: &Path) -> Result<(), Failure> {
    let mut m = RunManifest::begin("convert", json!({ "in": path, "to": matches!(to, Target::Kan).then_some("kan").unwrap_or("powermlp"), "box": half_width, "max_width": max_width }), None);
    let net = load_model(&path.display().to_string(), 0)?;
    let converted = match to {
        Target::Powermlp => kan_to_powermlp(&net, ConvertOptions { max_width })?,
        Target::Kan => {
            let e = half_width.ok_or_else(|| Failure::Input("--box is required when converting to kan".into()))?;
            let domain = BoxDomain::symmetric(net.input_dim, e).map_err(|err| Failure::Input(format!("--box: {err}")))?;
            let conv = powermlp_to_kan(&net, &domain)?;
            eprintln!("grid radii per KAN layer: {:?}", conv.grid_radii);
            conv.network
        }
    };
    write_file(out, to_json(&converted).map_err(|e| Failure::Numeric(e.to_string()))?.as_bytes())?;
    m.outputs = vec![out.to_path_buf()];
    m.finish(&manifest_path_for(out)).map_err(input)?;
    println!("{} -> {} (depth {}, width {}, {} parameters)", net.name, converted.name, converted.depth(), converted.width(), converted.param_count());
    Ok(())
}

fn verify(a: &str, b: &str, e: f64, samples: usize, tol: f64, out: Option<PathBuf>) -> Result<(), Failure> {
    let mut m = RunManifest::begin("verify", json!({ "a": a, "b": b, "box": e, "samples": samples, "tol": tol }), None);
    let (na, nb) = (load_model(a, 0)?, load_model(b, 0)?);
    if na.input_dim != nb.input_dim {
        return Err(Failure::Input(format!("input_dim differs: {} vs {}", na.input_dim, nb.input_dim)));
    }
    let domain = BoxDomain::symmetric(na.input_dim, e).map_err(|err| Failure::Input(format!("--box: {err}")))?;
    let report = verify_equivalence(&na, &nb, &domain, samples, tol).map_err(input)?;
    let text = serde_json::to_string_pretty(&report).map_err(input)?;
    println!("{text}");
    if let Some(path) = out {
        write_file(&path, text.as_bytes())?;
        m.outputs = vec![path.clone()];
        m.finish(&manifest_path_for(&path)).map_err(input)?;
    }
    if report.pass {
        Ok(())
    } else {
        Err(Failure::Verify(format!("max deviation {:e} > tol {:e} at {:?}", report.max_abs_deviation, tol, report.argmax)))
    }
}

fn flops_cmd(model: Option<&str>, lambda: &str, reference: bool, csv_path: Option<PathBuf>) -> Result<(), Failure> {
    let lambda = flops::parse_rational(lambda)?;
    let mut reports = Vec::new();
    if reference {
        reports.push(CostReport::for_shape(NetworkKind::Kan, &[2, 1, 1], 3, 3, lambda)?);
        reports.push(CostReport::for_shape(NetworkKind::Mlp, &[2, 6, 1], 1, 0, lambda)?);
        reports.push(CostReport::for_shape(NetworkKind::PowerMlp, &[2, 4, 1], 3, 0, lambda)?);
    }
    if let Some(spec) = model {
        reports.push(CostReport::for_network(&load_model(spec, 0)?, lambda)?);
    }
    let mut csv = String::new();
    for (i, r) in reports.iter().enumerate() {
        println!("{}", r.to_table());
        let body = r.to_csv();
        csv.push_str(if i == 0 { &body } else { body.split_once('\n').map_or("", |(_, rest)| rest) });
    }
    if reference {
        println!("{REFERENCE_NOTE}");
    }
    if let Some(path) = csv_path {
        write_file(&path, csv.as_bytes())?;
        let mut m = RunManifest::begin("flops", json!({ "model": model, "lambda": lambda.to_string(), "reference": reference }), None);
        m.outputs = vec![path.clone()];
        m.finish(&manifest_path_for(&path)).map_err(input)?;
    } else {
        print!("{csv}");
    }
    Ok(())
}

fn bench(repeats: usize, epochs: usize, lr: f64, with_kan: bool, seed: u64, out: &Path) -> Result<(), Failure> {
    let mut m = RunManifest::begin("bench", json!({ "suite": "table3", "repeats": repeats, "epochs": epochs, "lr": lr, "with_kan": with_kan }), Some(seed));
    let config = TrainConfig { epochs, lr, seed, ..TrainConfig::default() };
    let lambda = flops::Q::from_integer(DEFAULT_LAMBDA);
    let kan_cost = CostReport::for_shape(NetworkKind::Kan, &[2, 1, 1], 3, 3, lambda)?.total_flops().at(lambda);
    let pm_cost = CostReport::for_shape(NetworkKind::PowerMlp, &[2, 4, 1], 3, 0, lambda)?.total_flops().at(lambda);
    let mut csv = String::from("task,model,params,repeats,mean_seconds,min_seconds,max_seconds,flops_per_sample\n");
    for task in ["bessel_j0", "ellipk", "ellipe"] {
        let data = gen_function_dataset(task, 1000, 1000, seed, &splinenet::data::default_domain())?;
        let mut nets = vec![Network::mlp(&[2, 6, 1], seed).map_err(input)?, Network::powermlp(&[2, 4, 1], 3, seed).map_err(input)?];
        if with_kan {
            nets.push(Network::kan(&[2, 1, 1], 3, 3, seed).map_err(input)?);
        }
        let results = timing_bench(&nets, &data, &config, repeats)?;
        for (net, r) in nets.iter().zip(&results) {
            let cost = CostReport::for_network(net, lambda)?.total_flops().at(lambda);
            let (lo, hi) = r.runs.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &t| (a.min(t), b.max(t)));
            let _ = writeln!(csv, "{task},{},{},{},{},{},{},{}", r.name, r.params, r.runs.len(), r.mean_seconds, lo, hi, cost);
            println!("{task:>10} {:<18} {:>4} params  {:.4}s", r.name, r.params, r.mean_seconds);
        }
        let ratio = results[1].mean_seconds / results[0].mean_seconds;
        println!("{task:>10} powermlp/mlp wall-clock ratio {ratio:.3}");
    }
    println!("predicted KAN/PowerMLP cost ratio (lambda = {DEFAULT_LAMBDA}): {} = {:.2}", kan_cost / pm_cost, flops::to_f64(kan_cost / pm_cost));
    write_file(out, csv.as_bytes())?;
    m.outputs = vec![out.to_path_buf()];
    m.finish(&manifest_path_for(out)).map_err(input)?;
    Ok(())
}
