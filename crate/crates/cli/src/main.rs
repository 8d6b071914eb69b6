use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use diffstream::estimator::FullParamSet;
use diffstream::io::{self, Dataset, LoggedForecast, Metadata, ModelDocument};
use diffstream::stream::{self, RankGrid, StreamConfig};
use diffstream::{Error, Result};

/// Environment variable consulted when `--out-dir` is not given.
const OUT_DIR_ENV: &str = "DIFFSTREAM_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "diffstream",
    version,
    about = "Streaming reaction-diffusion tensor forecasting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one window with a grid search over ranks and save the model.
    Fit(FitArgs),
    /// Run the sliding-window stream loop, logging forecasts and switches.
    Stream(StreamArgs),
    /// Forecast from a saved model.
    Forecast(ForecastArgs),
    /// Score a forecast log against the data.
    Eval(EvalArgs),
    /// Re-export a saved model and write plot tables.
    Export(ExportArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Long-format CSV: timestamp,keyword,location,value.
    #[arg(long)]
    data: PathBuf,
    /// JSON metadata sidecar with keywords, locations and period.
    #[arg(long)]
    meta: PathBuf,
}

#[derive(Args)]
struct ModelArgs {
    /// Window length in samples.
    #[arg(long, default_value_t = 104)]
    window: usize,
    /// Seasonal period; defaults to the metadata's.
    #[arg(long)]
    period: Option<usize>,
    /// Rank ranges `dk,dl,ds`, each `lo-hi` or a single value.
    #[arg(long, default_value = "2-4,2-4,0-4")]
    rank_grid: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct OutArgs {
    /// Output directory; falls back to $DIFFSTREAM_OUT_DIR, then `out`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl OutArgs {
    fn resolve(&self) -> Result<PathBuf> {
        let dir = self
            .out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"));
        std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        Ok(dir)
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// First sample of the window.
    #[arg(long, default_value_t = 0)]
    start: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct StreamArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Forecast horizon in samples.
    #[arg(long, default_value_t = 13)]
    horizon: usize,
    /// Steps between candidate estimations.
    #[arg(long, default_value_t = 1)]
    refit_stride: usize,
    /// Suppress per-step progress on stderr.
    #[arg(long)]
    quiet: bool,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct ForecastArgs {
    /// Model document written by `fit`, `stream` or `export`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 13)]
    horizon: usize,
    /// Write values on the original data scale.
    #[arg(long)]
    denormalize: bool,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Forecast log written by `stream`.
    #[arg(long)]
    forecasts: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Skip forecasts whose targets run past the data instead of failing.
    #[arg(long)]
    realized_only: bool,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    model: PathBuf,
    /// Optional forecast log for the series table.
    #[arg(long)]
    forecasts: Option<PathBuf>,
    #[arg(long, requires = "meta")]
    data: Option<PathBuf>,
    #[arg(long, requires = "data")]
    meta: Option<PathBuf>,
    #[command(flatten)]
    out: OutArgs,
}

fn stream_config(
    model: &ModelArgs,
    meta: &Metadata,
    horizon: usize,
    stride: usize,
) -> Result<StreamConfig> {
    let period = model.period.unwrap_or(meta.period);
    let mut cfg = StreamConfig::new(model.window, horizon, period);
    cfg.rank_grid = RankGrid::parse(&model.rank_grid)?;
    cfg.refit_stride = stride;
    cfg.seed = model.seed;
    cfg.estimation.seed = model.seed;
    cfg.validate()?;
    Ok(cfg)
}

fn save_model(doc: &ModelDocument, dir: &Path) -> Result<PathBuf> {
    let path = dir.join("model.json");
    io::export_model(doc, &path)?;
    Ok(path)
}

fn fit(args: &FitArgs) -> Result<()> {
    let ds = io::ingest(&args.data.data, &args.data.meta)?;
    let cfg = stream_config(&args.model, &ds.meta, 1, 1)?;
    let n = ds.data.dims().len;
    let end = args.start + cfg.window;
    if end > n {
        return Err(Error::InvalidInput(format!(
            "window [{}, {end}) runs past the {n} samples of the data",
            args.start
        )));
    }
    let x = ds.data.time_range(args.start, end)?;
    let mut init = stream::initialize(&x, &cfg)?;
    init.model.window_start = args.start;
    for (r, c) in &init.candidates {
        match c {
            Ok(bits) => println!("ranks {r}: {bits:.1} bits"),
            Err(e) => println!("ranks {r}: failed ({e})"),
        }
    }
    let f = FullParamSet::new(init.model, args.start);
    let doc =
        ModelDocument::from_params(&f, end, Some(&x), Some(&ds.meta), Some(ds.normalization))?;
    let dir = args.out.resolve()?;
    let path = save_model(&doc, &dir)?;
    let cost = doc.window_cost.expect("window supplied");
    println!(
        "selected ranks {} on [{}, {end}): model {:.1} + coding {:.1} = {:.1} bits, {} outliers",
        init.ranks,
        args.start,
        cost.model_bits,
        cost.coding_bits,
        cost.total_bits,
        doc.models[0].outliers.len()
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn write_steps(path: &Path, steps: &[stream::StepRecord]) -> Result<()> {
    let mut s = String::from("time,seconds,switched,rank_search,total_bits,error\n");
    for r in steps {
        let err = r.error.as_deref().unwrap_or("").replace(['"', '\n'], " ");
        let _ = writeln!(
            s,
            "{},{},{},{},{},\"{}\"",
            r.time,
            r.elapsed.as_secs_f64(),
            r.switched,
            r.rank_search,
            r.total_bits,
            err
        );
    }
    std::fs::write(path, s).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_report(dir: &Path, report: &io::MetricReport) -> Result<()> {
    let json = dir.join("metrics.json");
    std::fs::write(&json, serde_json::to_string_pretty(report)? + "\n").map_err(|e| Error::Io {
        path: json,
        source: e,
    })?;
    let txt = dir.join("metrics.txt");
    std::fs::write(&txt, report.to_string()).map_err(|e| Error::Io {
        path: txt,
        source: e,
    })
}

fn run_stream(args: &StreamArgs) -> Result<()> {
    let ds = io::ingest(&args.data.data, &args.data.meta)?;
    let cfg = stream_config(&args.model, &ds.meta, args.horizon, args.refit_stride)?;
    let n = ds.data.dims().len;
    let quiet = args.quiet;
    let run = stream::run_stream_with(&ds.data, &cfg, |s| {
        if quiet {
            return;
        }
        if s.switched || s.error.is_some() || s.time % 10 == 0 || s.time == n {
            eprintln!(
                "t={} {:.2}s bits={:.0}{}{}",
                s.time,
                s.elapsed.as_secs_f64(),
                s.total_bits,
                if s.switched { " switch" } else { "" },
                s.error
                    .as_deref()
                    .map(|e| format!(" error: {e}"))
                    .unwrap_or_default()
            );
        }
    })?;
    let dir = args.out.resolve()?;
    let last = ds.data.time_range(n - cfg.window, n)?;
    let doc = ModelDocument::from_params(
        &run.params,
        n,
        Some(&last),
        Some(&ds.meta),
        Some(ds.normalization),
    )?;
    save_model(&doc, &dir)?;
    let log: Vec<LoggedForecast> = run.forecasts.iter().map(LoggedForecast::from).collect();
    io::write_forecasts(&dir.join("forecasts.csv"), &log, &ds.meta)?;
    write_steps(&dir.join("steps.csv"), &run.steps)?;
    io::export_plotdata(
        &run.params,
        &log,
        Some(&ds.data),
        Some(&ds.meta),
        &dir.join("plot"),
    )?;

    println!(
        "initial ranks {}, final ranks {}",
        run.initial_ranks, run.ranks
    );
    for s in &run.switches {
        println!(
            "switch at t={}: model {} ranks {} -> {} ({:.0} -> {:.0} bits)",
            s.time, s.model, s.ranks_before, s.ranks_after, s.bits_without, s.bits_with
        );
    }
    println!(
        "{} models, {} flagged outliers",
        run.params.len(),
        run.outlier_log.len()
    );
    let scored = io::realized(&log, n);
    if scored.is_empty() {
        println!("no forecast target lies inside the data; nothing to score");
    } else {
        let report = io::evaluate(&scored, &ds.data, &ds.meta.keywords)?;
        write_report(&dir, &report)?;
        print!("{report}");
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn forecast(args: &ForecastArgs) -> Result<()> {
    let doc = io::import_model(&args.model)?;
    let f = doc.to_params()?;
    let fc = stream::forecast(&f, args.horizon)?;
    let meta = doc.metadata.clone().unwrap_or_else(|| Metadata {
        keywords: (0..f.active().keys()).map(|i| i.to_string()).collect(),
        locations: (0..f.active().locs()).map(|i| i.to_string()).collect(),
        period: f.active().seasonal.period,
        sampling: String::new(),
    });
    let values = match (args.denormalize, doc.normalization) {
        (true, Some(n)) => n.invert_tensor(&fc.values),
        (true, None) => {
            return Err(Error::InvalidInput(
                "the model carries no normalisation to invert".into(),
            ))
        }
        (false, _) => fc.values.clone(),
    };
    let dir = args.out.resolve()?;
    let path = dir.join("forecast.csv");
    io::write_records(&path, &values, &meta, fc.start)?;
    if fc.fallback {
        eprintln!("warning: latent dynamics diverged; the trend holds its last value");
    }
    println!(
        "forecast of {} samples from t={} with model {}; wrote {}",
        args.horizon,
        fc.start,
        fc.model,
        path.display()
    );
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let ds: Dataset = io::ingest(&args.data.data, &args.data.meta)?;
    let mut log = io::read_forecasts(&args.forecasts, &ds.meta)?;
    if args.realized_only {
        log = io::realized(&log, ds.data.dims().len);
    }
    let report = io::evaluate(&log, &ds.data, &ds.meta.keywords)?;
    let dir = args.out.resolve()?;
    write_report(&dir, &report)?;
    print!("{report}");
    Ok(())
}

fn export(args: &ExportArgs) -> Result<()> {
    let doc = io::import_model(&args.model)?;
    let f = doc.to_params()?;
    let ds = match (&args.data, &args.meta) {
        (Some(d), Some(m)) => Some(io::ingest(d, m)?),
        _ => None,
    };
    let meta = ds.as_ref().map(|d| d.meta.clone()).or(doc.metadata.clone());
    let log = match (&args.forecasts, &meta) {
        (Some(p), Some(m)) => io::read_forecasts(p, m)?,
        (Some(_), None) => {
            return Err(Error::InvalidInput(
                "reading a forecast log needs metadata (--data/--meta or a labelled model)".into(),
            ))
        }
        (None, _) => Vec::new(),
    };
    let dir = args.out.resolve()?;
    save_model(&doc, &dir)?;
    let files = io::export_plotdata(&f, &log, ds.as_ref().map(|d| &d.data), meta.as_ref(), &dir)?;
    for p in files {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        "input" => 3,
        "parse" => 4,
        "model" => 5,
        "evaluation" => 6,
        _ => 7,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Fit(a) => fit(a),
        Command::Stream(a) => run_stream(a),
        Command::Forecast(a) => forecast(a),
        Command::Eval(a) => eval(a),
        Command::Export(a) => export(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}
