//! Argument parsing and the subcommands.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use btgp::encoding::default_precision;
use btgp::gp::{train_ensemble, EnsembleConfig, FitConfig, TrainOptions, TrainedModel, TrainingData};
use clap::{Args, Parser, Subcommand};
use ndarray::Axis;
use serde::Serialize;

use crate::bench::{run_bench, BenchConfig};
use crate::dataset::{parse_split, read_csv, split_indices, Dataset, TargetSpec};
use crate::eda::eda;
use crate::error::{CliError, CliResult};
use crate::metrics::{score, MetricsReport, PhaseTimer, Scores, SplitInfo, Timing};
use crate::model::{Model, ModelFile, OutOfBox};

#[derive(Debug, Parser)]
#[command(name = "btgp", version, about = "GP regression with the binary tree kernel")]
pub struct Cli {
    /// Print one JSON record instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model (or ensemble) and save it.
    Train(TrainArgs),
    /// Write predictive means and variances for a feature CSV.
    Predict(PredictArgs),
    /// Score a model on a labelled CSV.
    Eval(EvalArgs),
    /// Report how many inputs stay distinct after encoding.
    Eda(EdaArgs),
    /// Time the main phases on synthetic data.
    Bench(BenchArgs),
    /// Train and score at several precisions.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Target column name; defaults to the last column.
    #[arg(long)]
    pub target: Option<String>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Train fraction (`0.8`) or ratio (`80:20`) for a seeded shuffle split.
    #[arg(long, value_parser = parse_split)]
    pub split: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct HyperArgs {
    /// Bits per input dimension.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=32))]
    pub precision: Option<u32>,
    /// Noise variance in standardized units; defaults to 1/n.
    #[arg(long, value_parser = positive)]
    pub lambda: Option<f64>,
    /// Apply the per-dimension ECDF transform before rescaling.
    #[arg(long)]
    pub ecdf: bool,
    /// Train an ensemble with this many members.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub ensemble: Option<u32>,
    /// Initializations evaluated before sampling ensemble members.
    #[arg(long, default_value_t = 480, value_parser = clap::value_parser!(u32).range(1..))]
    pub inits: u32,
    #[arg(long, default_value_t = 0.01, value_parser = positive)]
    pub temperature: f64,
    #[arg(long, default_value_t = 200)]
    pub max_iters: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Where to write the model.
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutOfBox::Zero)]
    pub out_of_box: OutOfBox,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long, value_enum, default_value_t = OutOfBox::Zero)]
    pub out_of_box: OutOfBox,
}

#[derive(Debug, Args)]
pub struct EdaArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Precisions to try; defaults to 2, 4, 8 and the default for this dimension.
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u32).range(1..=32))]
    pub precision: Vec<u32>,
    /// Also report uniqueness after the ECDF transform.
    #[arg(long)]
    pub ecdf: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 10)]
    pub min_log2: u32,
    #[arg(long, default_value_t = 17)]
    pub max_log2: u32,
    #[arg(long, default_value_t = 2)]
    pub dims: usize,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u32).range(1..=16))]
    pub precision: u32,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_delimiter = ',', default_value = "2,4,8", value_parser = clap::value_parser!(u32).range(1..=32))]
    pub precisions: Vec<u32>,
    #[arg(long, value_parser = parse_split, default_value = "0.8")]
    pub split: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_parser = positive)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub ecdf: bool,
    #[arg(long, default_value_t = 200)]
    pub max_iters: usize,
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a positive number, got {s:?}")),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    0
                }
                _ => {
                    let _ = e.print();
                    1
                }
            };
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("btgp: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> CliResult<()> {
    match &cli.command {
        Command::Train(a) => cmd_train(a, cli.json, out),
        Command::Predict(a) => cmd_predict(a, out),
        Command::Eval(a) => cmd_eval(a, cli.json, out),
        Command::Eda(a) => cmd_eda(a, cli.json, out),
        Command::Bench(a) => cmd_bench(a, cli.json, out),
        Command::Sweep(a) => cmd_sweep(a, cli.json, out),
    }
}

fn emit<T: Serialize>(out: &mut dyn Write, json: bool, record: &T, text: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> CliResult<()> {
    if json {
        let line = serde_json::to_string(record).map_err(|e| CliError::Data(e.to_string()))?;
        writeln!(out, "{line}")?;
    } else {
        text(out)?;
    }
    Ok(())
}

fn load_labelled(args: &DataArgs) -> CliResult<Dataset> {
    read_csv(&args.data, &TargetSpec::Column(args.target.clone()))
}

/// Applies a split, returning (train, test, info).
fn apply_split(ds: Dataset, split: &SplitArgs) -> (Dataset, Option<Dataset>, Option<SplitInfo>) {
    match split.split {
        None => (ds, None, None),
        Some(frac) => {
            let (tr, te) = split_indices(ds.n(), frac, split.seed);
            let info = SplitInfo {
                train_fraction: frac,
                seed: split.seed,
                train_rows: tr.len(),
                test_rows: te.len(),
            };
            (ds.select_rows(&tr), Some(ds.select_rows(&te)), Some(info))
        }
    }
}

#[derive(Debug, Serialize)]
pub struct TrainRecord {
    pub command: &'static str,
    pub n: usize,
    pub d: usize,
    pub precision: usize,
    pub q: usize,
    pub lambda: f64,
    pub members: usize,
    /// Training NLL in standardized units (best member for ensembles).
    pub train_nll: f64,
    pub train_nll_per_point: f64,
    pub iterations: usize,
    pub degenerate_dims: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitInfo>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<Scores>,
    pub timings: Vec<Timing>,
}

/// Fits a single model or an ensemble from hyperparameter flags.
pub fn fit_model(train: &Dataset, hyper: &HyperArgs, seed: u64) -> CliResult<Model> {
    let y = train.targets()?;
    if train.n() < 2 {
        return Err(CliError::Data(format!("need at least 2 training rows, got {}", train.n())));
    }
    let opts = TrainOptions {
        max_iters: hyper.max_iters,
        seed,
        ..TrainOptions::default()
    };
    let precision = hyper.precision.map(|p| p as usize);
    match hyper.ensemble {
        None => {
            let cfg = FitConfig {
                precision,
                lambda: hyper.lambda,
                use_ecdf: hyper.ecdf,
                phi0: None,
                train: opts,
            };
            Ok(Model::Single(TrainedModel::fit(train.x.view(), y, &cfg)?))
        }
        Some(k) => {
            let data = TrainingData::new(train.x.view(), y, precision, hyper.ecdf)?;
            let cfg = EnsembleConfig {
                members: k as usize,
                temperature: hyper.temperature,
                lambda: hyper.lambda,
                train: opts,
                seed,
                ..EnsembleConfig::default()
            }
            .with_inits(hyper.inits as usize);
            Ok(Model::Ensemble(train_ensemble(data, &cfg)?))
        }
    }
}

fn cmd_train(a: &TrainArgs, json: bool, out: &mut dyn Write) -> CliResult<()> {
    let mut timer = PhaseTimer::default();
    let ds = load_labelled(&a.data)?;
    let (train, test, split) = apply_split(ds, &a.split);
    timer.mark("load");
    let model = fit_model(&train, &a.hyper, a.split.seed)?;
    timer.mark("train");
    let file = ModelFile {
        feature_names: train.feature_names.clone(),
        target_name: train.target_name.clone().unwrap_or_default(),
        model,
    };
    file.save(&a.model)?;
    timer.mark("save");
    let test_scores = match &test {
        Some(t) => {
            let pred = file.model.predict(t.x.view(), OutOfBox::Zero)?;
            let s = score(&pred, t.targets()?)?;
            timer.mark("evaluate");
            Some(s)
        }
        None => None,
    };
    let data = file.model.data();
    if data.encoding.has_degenerate() {
        log::warn!("some input dimensions are constant in the training data and carry no information");
    }
    let (iterations, members, lambda) = match &file.model {
        Model::Single(m) => (m.report.as_ref().map_or(0, |r| r.iterations), 1, m.params().lambda),
        Model::Ensemble(e) => (
            e.members.iter().filter_map(|m| m.report.as_ref()).map(|r| r.iterations).sum(),
            e.members.len(),
            e.members[0].posterior.params.lambda,
        ),
    };
    let train_nll = file.model.train_nll();
    let record = TrainRecord {
        command: "train",
        n: data.n(),
        d: data.encoding.dims,
        precision: data.encoding.precision,
        q: data.encoding.q(),
        lambda,
        members,
        train_nll,
        train_nll_per_point: train_nll / data.n() as f64,
        iterations,
        degenerate_dims: data.encoding.degenerate.iter().filter(|&&d| d).count(),
        split,
        test: test_scores,
        timings: timer.finish(),
    };
    emit(out, json, &record, |o| {
        writeln!(o, "trained on {} rows, {} bits ({} per dimension), lambda {:.3e}", record.n, record.q, record.precision, record.lambda)?;
        writeln!(o, "members: {}, optimizer iterations: {}", record.members, record.iterations)?;
        writeln!(o, "train NLL: {:.6} ({:.6} per point)", record.train_nll, record.train_nll_per_point)?;
        if let Some(s) = &record.test {
            writeln!(o, "test NLL: {:.6}  RMSE: {:.6} (standardized {:.6})", s.nll, s.rmse, s.rmse_standardized)?;
        }
        for t in &record.timings {
            writeln!(o, "  {:<10} {:.3}s", t.phase, t.seconds)?;
        }
        Ok(())
    })
}

/// Reads query features, matching the model's feature columns by name when
/// possible and by position otherwise.
fn load_features(path: &std::path::Path, file: &ModelFile) -> CliResult<Dataset> {
    let ds = read_csv(path, &TargetSpec::None)?;
    let d = file.feature_names.len();
    let by_name: Option<Vec<usize>> = file
        .feature_names
        .iter()
        .map(|name| ds.feature_names.iter().position(|h| h == name))
        .collect();
    let cols = match by_name {
        Some(cols) => cols,
        None if ds.d() == d => (0..d).collect(),
        None => {
            return Err(CliError::Data(format!("model expects {d} features, file has {} columns", ds.d())));
        }
    };
    Ok(Dataset {
        feature_names: cols.iter().map(|&c| ds.feature_names[c].clone()).collect(),
        target_name: None,
        x: ds.x.select(Axis(1), &cols),
        y: None,
    })
}

fn cmd_predict(a: &PredictArgs, out: &mut dyn Write) -> CliResult<()> {
    let file = ModelFile::load(&a.model)?;
    let ds = load_features(&a.data, &file)?;
    let pred = file.model.predict(ds.x.view(), a.out_of_box)?;
    match &a.out {
        Some(p) => write_predictions(std::fs::File::create(p)?, &pred.output),
        None => write_predictions(out, &pred.output),
    }
}

pub fn write_predictions(sink: impl Write, output: &btgp::gp::PredictiveOutput) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["mu", "sigma2", "out_of_box"])?;
    for k in 0..output.len() {
        w.write_record([
            output.mean[k].to_string(),
            output.variance[k].to_string(),
            output.out_of_box[k].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_eval(a: &EvalArgs, json: bool, out: &mut dyn Write) -> CliResult<()> {
    let mut timer = PhaseTimer::default();
    let file = ModelFile::load(&a.model)?;
    let target = a.data.target.clone().or_else(|| Some(file.target_name.clone()).filter(|t| !t.is_empty()));
    let ds = read_csv(&a.data.data, &TargetSpec::Column(target))?;
    let (_, held_out, split) = apply_split(ds.clone(), &a.split);
    let eval_set = held_out.unwrap_or(ds);
    timer.mark("load");
    let features = reorder_features(&eval_set, &file)?;
    let pred = file.model.predict(features.view(), a.out_of_box)?;
    timer.mark("predict");
    let scores = score(&pred, eval_set.targets()?)?;
    timer.mark("score");
    let report = MetricsReport {
        command: "eval",
        scores,
        split,
        out_of_box: pred.output.out_of_box.iter().filter(|&&f| f).count(),
        timings: timer.finish(),
    };
    emit(out, json, &report, |o| {
        let s = &report.scores;
        writeln!(o, "rows: {}  out of box: {}", s.n, report.out_of_box)?;
        writeln!(o, "NLL (standardized, per point): {:.6}", s.nll)?;
        writeln!(o, "RMSE: {:.6}  (standardized {:.6})", s.rmse, s.rmse_standardized)
    })
}

fn reorder_features(ds: &Dataset, file: &ModelFile) -> CliResult<ndarray::Array2<f64>> {
    let d = file.feature_names.len();
    let by_name: Option<Vec<usize>> = file
        .feature_names
        .iter()
        .map(|name| ds.feature_names.iter().position(|h| h == name))
        .collect();
    match by_name {
        Some(cols) => Ok(ds.x.select(Axis(1), &cols)),
        None if ds.d() == d => Ok(ds.x.clone()),
        None => Err(CliError::Data(format!("model expects {d} features, file has {}", ds.d()))),
    }
}

fn cmd_eda(a: &EdaArgs, json: bool, out: &mut dyn Write) -> CliResult<()> {
    let ds = load_labelled(&a.data)?;
    let mut precisions: Vec<usize> = if a.precision.is_empty() {
        vec![2, 4, 8, default_precision(ds.d())]
    } else {
        a.precision.iter().map(|&p| p as usize).collect()
    };
    precisions.sort_unstable();
    precisions.dedup();
    let report = eda(ds.x.view(), &precisions, a.ecdf)?;
    emit(out, json, &report, |o| {
        writeln!(o, "{} rows, {} features; {:.2}% of rows unique", report.n, report.d, report.pct_unique_rows)?;
        for r in &report.rows {
            let tag = if r.ecdf { " (ecdf)" } else { "" };
            writeln!(o, "  p = {:>2}{tag}: {:.2}% unique bit strings", r.precision, r.pct_unique_bitstrings)?;
        }
        if let Some(adv) = &report.advisory {
            writeln!(o, "advisory: {adv}")?;
        }
        Ok(())
    })
}

fn cmd_bench(a: &BenchArgs, json: bool, out: &mut dyn Write) -> CliResult<()> {
    if a.min_log2 > a.max_log2 || a.max_log2 > 24 || a.dims == 0 {
        return Err(CliError::Usage("need 0 < dims and min-log2 <= max-log2 <= 24".into()));
    }
    let cfg = BenchConfig {
        log2_sizes: (a.min_log2..=a.max_log2).collect(),
        dims: a.dims,
        precision: a.precision as usize,
        repeats: a.repeats,
        seed: a.seed,
        ..BenchConfig::default()
    };
    let report = run_bench(&cfg)?;
    emit(out, json, &report, |o| {
        writeln!(o, "{:>8} {:>4} {:>10} {:>10} {:>10} {:>10}", "n", "q", "encode", "nll", "grad", "predict")?;
        for r in &report.rows {
            writeln!(o, "{:>8} {:>4} {:>10.4} {:>10.4} {:>10.4} {:>10.4}", r.n, r.q, r.encode_s, r.nll_s, r.grad_s, r.predict_s)?;
        }
        let s = &report.slopes;
        writeln!(o, "log-log slopes: encode {:.3}, nll {:.3}, grad {:.3}, predict {:.3}, nll+predict {:.3}", s.encode, s.nll, s.grad, s.predict, s.nll_plus_predict)?;
        let q = &report.q_doubling;
        writeln!(o, "q {} -> {} at n = {}: nll x{:.2}, grad x{:.2}", q.q, 2 * q.q, q.n, q.nll_ratio, q.grad_ratio)
    })
}

#[derive(Debug, Serialize)]
pub struct SweepRow {
    pub precision: usize,
    #[serde(flatten)]
    pub scores: Scores,
    pub train_nll_per_point: f64,
}

#[derive(Debug, Serialize)]
pub struct SweepReport {
    pub command: &'static str,
    pub split: SplitInfo,
    pub rows: Vec<SweepRow>,
}

/// Test metrics of single models trained at each precision on one split.
pub fn precision_sweep(ds: &Dataset, precisions: &[usize], split: f64, seed: u64, lambda: Option<f64>, ecdf: bool, max_iters: usize) -> CliResult<SweepReport> {
    let (tr, te) = split_indices(ds.n(), split, seed);
    let (train, test) = (ds.select_rows(&tr), ds.select_rows(&te));
    let rows = precisions
        .iter()
        .map(|&p| {
            let hyper = HyperArgs {
                precision: Some(p as u32),
                lambda,
                ecdf,
                ensemble: None,
                inits: 3,
                temperature: 0.01,
                max_iters,
            };
            let model = fit_model(&train, &hyper, seed)?;
            let pred = model.predict(test.x.view(), OutOfBox::Zero)?;
            Ok(SweepRow {
                precision: p,
                scores: score(&pred, test.targets()?)?,
                train_nll_per_point: model.train_nll() / train.n() as f64,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(SweepReport {
        command: "sweep",
        split: SplitInfo {
            train_fraction: split,
            seed,
            train_rows: tr.len(),
            test_rows: te.len(),
        },
        rows,
    })
}

fn cmd_sweep(a: &SweepArgs, json: bool, out: &mut dyn Write) -> CliResult<()> {
    let ds = load_labelled(&a.data)?;
    let precisions: Vec<usize> = a.precisions.iter().map(|&p| p as usize).collect();
    let report = precision_sweep(&ds, &precisions, a.split, a.seed, a.lambda, a.ecdf, a.max_iters)?;
    emit(out, json, &report, |o| {
        writeln!(o, "{:>4} {:>12} {:>12} {:>12}", "p", "test NLL", "RMSE", "train NLL/n")?;
        for r in &report.rows {
            writeln!(o, "{:>4} {:>12.6} {:>12.6} {:>12.6}", r.precision, r.scores.nll, r.scores.rmse, r.train_nll_per_point)?;
        }
        Ok(())
    })
}
