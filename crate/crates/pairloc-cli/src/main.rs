use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use pairloc_core::ensemble::{
    log_spaced_grid, run_ensemble, variance_peak_fit, write_records_csv, write_records_json,
    write_spectra_csv, EnsembleConfig,
};
use pairloc_core::geometry::{coupling_matrix, PositionSample};
use pairloc_core::pairmodel::{
    exact_separated_pair_entropy, greedy_pairing, predicted_entropy, predicted_pr_zbasis,
};
use pairloc_core::spectrum::default_n_up;

#[derive(Parser)]
#[command(name = "pairloc", about = "Disorder sweeps and pair-model predictions for blockaded XXZ chains", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a disorder-ensemble sweep and write per-realization observables.
    Run(RunArgs),
    /// Pair-model predictions for a single position sample.
    Predict(PredictArgs),
    /// Fit the entropy-variance peak of a finished sweep.
    FitPeak(FitPeakArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Number of spins (even).
    #[arg(long)]
    n: usize,
    /// Lower end of the log-spaced disorder grid.
    #[arg(long, default_value_t = 0.5)]
    w_min: f64,
    /// Upper end of the log-spaced disorder grid.
    #[arg(long, default_value_t = 3.0)]
    w_max: f64,
    /// Number of grid points.
    #[arg(long, default_value_t = 21)]
    w_steps: usize,
    /// Explicit comma-separated disorder values; overrides the grid flags.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["w_min", "w_max", "w_steps"])]
    w_list: Option<Vec<f64>>,
    /// Power-law exponent of the couplings.
    #[arg(long, default_value_t = 6.0)]
    alpha: f64,
    /// Ising anisotropy.
    #[arg(long, default_value_t = -0.73, allow_hyphen_values = true)]
    delta: f64,
    /// Disorder realizations per grid point.
    #[arg(long, default_value_t = 2000)]
    realizations: usize,
    /// Master seed; every realization derives its own stream from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path for the per-realization records.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Also write one eigenvalue CSV per grid point next to the output.
    #[arg(long)]
    dump_spectra: bool,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct PredictArgs {
    /// Position-sample JSON file.
    #[arg(long)]
    positions: PathBuf,
    #[arg(long, default_value_t = 6.0)]
    alpha: f64,
}

#[derive(Args)]
struct FitPeakArgs {
    /// Records CSV produced by `run`.
    #[arg(long = "in")]
    input: PathBuf,
    /// Number of grid points in the quadratic fit window.
    #[arg(long, default_value_t = 5)]
    window: usize,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::Predict(args) => predict(args),
        Command::FitPeak(args) => fit_peak(args),
    }
}

fn run(args: RunArgs) -> Result<()> {
    if let Some(workers) = args.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .context("building worker pool")?;
    }
    let w_values = match args.w_list {
        Some(list) => list,
        None => log_spaced_grid(args.w_min, args.w_max, args.w_steps),
    };
    let mut config = EnsembleConfig::new(args.n, w_values, args.seed);
    config.alpha = args.alpha;
    config.delta = args.delta;
    config.n_realizations = args.realizations;
    config.dump_spectra = args.dump_spectra;

    let run = run_ensemble(&config).context("ensemble sweep failed")?;

    let out = File::create(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    match args.format {
        Format::Csv => write_records_csv(&run.records, BufWriter::new(out))?,
        Format::Json => write_records_json(&config, &run, BufWriter::new(out))?,
    }
    if args.dump_spectra {
        for (wi, _) in config.w_values.iter().enumerate() {
            let path = spectra_path(&args.out, wi);
            let file = File::create(&path)
                .with_context(|| format!("creating {}", path.display()))?;
            write_spectra_csv(&run.spectra, wi, BufWriter::new(file))?;
        }
    }

    let mut stderr = std::io::stderr().lock();
    for s in &run.stats.per_w {
        writeln!(
            stderr,
            "w={:.4} count={} skipped={} lsr={:.4} entropy={:.4} var(entropy)={:.5}",
            s.w, s.count, s.skipped, s.lsr.mean, s.entropy.mean, s.entropy_variance
        )?;
    }
    Ok(())
}

fn spectra_path(out: &Path, w_index: usize) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("records");
    out.with_file_name(format!("{stem}_spectra_w{w_index:02}.csv"))
}

fn predict(args: PredictArgs) -> Result<()> {
    let file = File::open(&args.positions)
        .with_context(|| format!("opening {}", args.positions.display()))?;
    let sample: PositionSample = serde_json::from_reader(BufReader::new(file))?;
    sample.validate()?;
    let coupling = coupling_matrix(&sample, args.alpha, 1.0)?;
    let pairset = greedy_pairing(&coupling)?;
    let n = sample.n_spins;
    let r = default_n_up(n) as i64 - (n / 2) as i64;

    #[derive(serde::Serialize)]
    struct Prediction {
        n: usize,
        r: i64,
        pairs: pairloc_core::PairSet,
        predicted_entropy: f64,
        exact_separated_pair_entropy: f64,
        predicted_pr_zbasis: f64,
    }
    let report = Prediction {
        n,
        r,
        predicted_entropy: predicted_entropy(&pairset, r)?,
        exact_separated_pair_entropy: exact_separated_pair_entropy(&pairset, r)?,
        predicted_pr_zbasis: predicted_pr_zbasis(pairset.n_pairs(), r)?,
        pairs: pairset,
    };
    serde_json::to_writer_pretty(std::io::stdout().lock(), &report)?;
    println!();
    Ok(())
}

fn fit_peak(args: FitPeakArgs) -> Result<()> {
    let file = File::open(&args.input)
        .with_context(|| format!("opening {}", args.input.display()))?;
    let records = pairloc_core::ensemble::read_records_csv(BufReader::new(file))?;
    if records.is_empty() {
        bail!("no records in {}", args.input.display());
    }

    // Regroup entropies per (n, w); w keyed by bit pattern to stay exact.
    let mut groups: BTreeMap<usize, BTreeMap<u64, (f64, Vec<f64>)>> = BTreeMap::new();
    for r in &records {
        groups
            .entry(r.n)
            .or_default()
            .entry(r.w.to_bits())
            .or_insert((r.w, Vec::new()))
            .1
            .push(r.entropy);
    }

    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "n,w_star,w_star_err")?;
    for (n, by_w) in groups {
        let mut ws = Vec::new();
        let mut variances = Vec::new();
        for (_, (w, entropies)) in by_w {
            if entropies.len() < 2 {
                bail!("need >= 2 realizations per grid point (n={n}, w={w})");
            }
            let mean = entropies.iter().sum::<f64>() / entropies.len() as f64;
            let var = entropies.iter().map(|e| (e - mean).powi(2)).sum::<f64>()
                / (entropies.len() - 1) as f64;
            ws.push(w);
            variances.push(var);
        }
        let (w_star, err) = variance_peak_fit(&ws, &variances, args.window)
            .with_context(|| format!("fitting variance peak for n={n}"))?;
        writeln!(stdout, "{n},{w_star},{err}")?;
    }
    Ok(())
}
