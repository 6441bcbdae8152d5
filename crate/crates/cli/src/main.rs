//! `dinglab` command-line harness.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dinglab_core::config::ExperimentConfig;
use dinglab_core::error::{Error, Result};
use dinglab_core::experiment::{build_problem, draw_samples, run_experiment, RESULT_HEADER};
use dinglab_core::io;
use dinglab_core::masklift::{leakage_report, lift_mask, Factors, MaskGrid};
use dinglab_core::metrics::{cpsnr_pooled, sliced_w2, DEFAULT_PROJECTIONS};
use dinglab_core::oracle::exact_posterior;
use dinglab_core::problem::MaskOperator;

const THREADS_ENV: &str = "DINGLAB_THREADS";

#[derive(Parser)]
#[command(name = "dinglab", version, about = "Masked posterior sampling over Gaussian-mixture priors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured method and write results.csv plus sample files.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the master seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the output directory from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// What to echo on stdout once the run finishes.
        #[arg(long, value_enum, default_value_t = RunFormat::Csv)]
        format: RunFormat,
    },
    /// Dump the exact posterior mixture and oracle samples.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Posterior mixture CSV; samples go next to it as `<stem>_samples.<ext>`.
        #[arg(long)]
        out: PathBuf,
        /// Format of the oracle sample file.
        #[arg(long, value_enum, default_value_t = SampleFormat::Csv)]
        format: SampleFormat,
        /// Number of oracle samples (defaults to the config's oracle.samples).
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Lift a pixel mask to latent resolution and report leakage as CSV.
    Masklift {
        /// PGM (P5, one or more frames) or DMSK input.
        #[arg(long = "in")]
        input: PathBuf,
        /// `f_h,f_w` or `f_t,f_h,f_w`.
        #[arg(long)]
        factors: String,
        /// Spatial dilation radius; defaults to floor(f_h / 2).
        #[arg(long)]
        dilate: Option<usize>,
        /// Temporal dilation radius.
        #[arg(long = "dilate-t", default_value_t = 0)]
        dilate_t: usize,
        /// Latent mask output; defaults to `<input stem>_latent.<ext>`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<MaskFormat>,
    },
    /// Compare two sample files and print one CSV row: metric,value,n,seed.
    Metrics {
        #[arg(long)]
        a: PathBuf,
        /// Second sample set (sw2) or reference signal in its first row (cpsnr).
        #[arg(long)]
        b: PathBuf,
        #[arg(long, value_enum, default_value_t = Metric::Sw2)]
        metric: Metric,
        #[arg(long, default_value_t = DEFAULT_PROJECTIONS)]
        projections: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Observation mask for cpsnr (PGM or DMSK).
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        peak: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum RunFormat {
    Csv,
    Quiet,
}

#[derive(Clone, Copy, ValueEnum)]
enum SampleFormat {
    Csv,
    Dsmp,
}

#[derive(Clone, Copy, ValueEnum)]
enum MaskFormat {
    Pgm,
    Dmsk,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Sw2,
    Cpsnr,
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn stdout_err(e: std::io::Error) -> Error {
    Error::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    }
}

fn run(config: &Path, seed: Option<u64>, out: Option<PathBuf>, format: RunFormat) -> Result<()> {
    let mut cfg = load_config(config, seed)?;
    if let Some(dir) = out {
        cfg.output = dir;
    }
    let rows = run_experiment(&cfg)?;
    if let RunFormat::Csv = format {
        let mut w = csv::Writer::from_writer(std::io::stdout().lock());
        let to_err = |e: csv::Error| stdout_err(std::io::Error::other(e.to_string()));
        w.write_record(RESULT_HEADER).map_err(to_err)?;
        for row in &rows {
            w.write_record(row.record()).map_err(to_err)?;
        }
        w.flush().map_err(stdout_err)?;
    }
    Ok(())
}

fn oracle(config: &Path, seed: Option<u64>, out: &Path, format: SampleFormat, samples: Option<usize>) -> Result<()> {
    let cfg = load_config(config, seed)?;
    let problem = build_problem(&cfg)?;
    let posterior = exact_posterior(&problem, &cfg.prior)?;
    io::write_mixture_csv(out, &posterior)?;
    let n = samples.unwrap_or(cfg.oracle_samples);
    if n == 0 {
        return Err(Error::InvalidParameter("--samples must be at least 1".into()));
    }
    let draws = draw_samples(&posterior, n, cfg.seed, "oracle/cli")?;
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let (ext, write): (&str, fn(&Path, &_) -> Result<()>) = match format {
        SampleFormat::Csv => ("csv", io::write_samples_csv),
        SampleFormat::Dsmp => ("dsmp", io::write_samples),
    };
    write(&out.with_file_name(format!("{stem}_samples.{ext}")), &draws)
}

fn parse_factors(s: &str) -> Result<Factors> {
    let parts: std::result::Result<Vec<usize>, _> = s.split(',').map(|p| p.trim().parse()).collect();
    match parts.map_err(|_| Error::InvalidParameter(format!("bad --factors '{s}'")))?.as_slice() {
        [h, w] => Factors::spatial(*h, *w),
        [t, h, w] => Factors::new(*t, *h, *w),
        _ => Err(Error::InvalidParameter(format!("--factors needs 2 or 3 values, got '{s}'"))),
    }
}

fn is_dmsk(path: &Path) -> Result<bool> {
    let mut head = [0u8; 4];
    let mut f = std::fs::File::open(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let n = std::io::Read::read(&mut f, &mut head).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(n == 4 && &head == io::MASK_MAGIC)
}

fn read_mask(path: &Path) -> Result<MaskGrid> {
    if is_dmsk(path)? {
        io::read_dmsk(path)
    } else {
        io::read_pgm(path)
    }
}

fn masklift(
    input: &Path,
    factors: &str,
    dilate: Option<usize>,
    dilate_t: usize,
    out: Option<PathBuf>,
    format: Option<MaskFormat>,
) -> Result<()> {
    let factors = parse_factors(factors)?;
    let dmsk_in = is_dmsk(input)?;
    let mask = read_mask(input)?;
    let r = dilate.unwrap_or_else(|| factors.default_radius());
    let latent = lift_mask(&mask, factors, r, dilate_t)?;
    let report = leakage_report(&mask, &latent)?;

    let format = format.unwrap_or(if dmsk_in { MaskFormat::Dmsk } else { MaskFormat::Pgm });
    let ext = match format {
        MaskFormat::Pgm => "pgm",
        MaskFormat::Dmsk => "dmsk",
    };
    let out = out.unwrap_or_else(|| {
        let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        input.with_file_name(format!("{stem}_latent.{ext}"))
    });
    match format {
        MaskFormat::Pgm => io::write_pgm(&out, &latent.grid)?,
        MaskFormat::Dmsk => io::write_dmsk(&out, &latent.grid)?,
    }

    let (t, h, w) = latent.shape();
    let mut stdout = std::io::stdout().lock();
    writeln!(
        stdout,
        "edited_pixels_in_observed_cells,observed_pixels_in_edited_cells,latent_t,latent_h,latent_w,radius,radius_t"
    )
    .and_then(|_| {
        writeln!(
            stdout,
            "{},{},{t},{h},{w},{r},{dilate_t}",
            report.edited_pixels_in_observed_cells, report.observed_pixels_in_edited_cells
        )
    })
    .map_err(stdout_err)
}

fn metrics(
    a: &Path,
    b: &Path,
    metric: Metric,
    projections: usize,
    seed: u64,
    mask: Option<PathBuf>,
    peak: f64,
) -> Result<()> {
    let samples = io::read_samples(a)?;
    let other = io::read_samples(b)?;
    let (name, value) = match metric {
        Metric::Sw2 => {
            if projections == 0 {
                return Err(Error::InvalidParameter("--projections must be at least 1".into()));
            }
            ("sw2", sliced_w2(&samples, &other, projections, seed)?)
        }
        Metric::Cpsnr => {
            let path = mask.ok_or_else(|| Error::InvalidParameter("cpsnr needs --mask".into()))?;
            let mask = MaskOperator::new(read_mask(&path)?.as_slice().to_vec());
            let rows: Vec<_> = (0..samples.len()).map(|i| samples.row_vector(i)).collect();
            ("cpsnr", cpsnr_pooled(&rows, &other.row_vector(0), &mask, peak)?)
        }
    };
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "metric,value,n,seed")
        .and_then(|_| writeln!(stdout, "{name},{value},{},{seed}", samples.len()))
        .map_err(stdout_err)
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("{THREADS_ENV} must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidParameter(format!("{THREADS_ENV}: {e}")))
}

fn dispatch(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            format,
        } => run(&config, seed, out, format),
        Command::Oracle {
            config,
            seed,
            out,
            format,
            samples,
        } => oracle(&config, seed, &out, format, samples),
        Command::Masklift {
            input,
            factors,
            dilate,
            dilate_t,
            out,
            format,
        } => masklift(&input, &factors, dilate, dilate_t, out, format),
        Command::Metrics {
            a,
            b,
            metric,
            projections,
            seed,
            mask,
            peak,
        } => metrics(&a, &b, metric, projections, seed, mask, peak),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dinglab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
