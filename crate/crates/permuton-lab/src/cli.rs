//! Command-line front end: reproducible experiment orchestration over the
//! library, with CSV or JSON-lines output.
//!
//! Exit codes: 0 on success, 1 on usage/configuration errors, 2 when a
//! deterministic invariant or a concentration bound is violated (which
//! signals a bug, not a statistical fluctuation).

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::core::PointSet;
use crate::densities::DensityFamily;
use crate::gridcheck::{sandwich_check, GridError};
use crate::lis::lis_fast_with_witness;
use crate::samplers::{RngStream, Sampler};
use crate::stats::{
    concentration_report, default_lambdas, estimate, fit_exponent, EstimateRecord,
};
use crate::suite;

/// Environment variable supplying the default worker count.
pub const THREADS_ENV: &str = "PERMUTON_LAB_THREADS";

const ABOUT: &str = "Sample planar densities, measure longest increasing subsequences, \
and verify growth rates and concentration bounds.";

#[derive(Debug, Parser)]
#[command(name = "permuton-lab", about = ABOUT, version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args, Default)]
struct Common {
    /// Base seed; replicate r uses RNG stream id r of this seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path; `-` writes to standard output (the default).
    #[arg(long)]
    out: Option<String>,
    /// Emit JSON lines instead of CSV.
    #[arg(long)]
    json: bool,
    /// Worker threads (default: PERMUTON_LAB_THREADS or all cores).
    /// Outputs are identical for any value.
    #[arg(long)]
    threads: Option<usize>,
    /// JSON config file mirroring the flags; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw one point set and write it as `x,y` CSV.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Density family, e.g. `uniform`, `ref:beta=1.5,gamma=0`,
        /// `corner-radial:alpha=-1`, `corner-pinched:beta=1.5,c=1`,
        /// `diag-power:alpha=-0.5`.
        #[arg(long)]
        family: Option<String>,
        /// Number of points.
        #[arg(long)]
        n: Option<u64>,
        /// RNG stream id within the seed.
        #[arg(long)]
        stream: Option<u64>,
    },
    /// Monte Carlo mean-LIS estimates over one size or a size grid.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        family: Option<String>,
        /// Single size N (alternative to --n-grid).
        #[arg(long)]
        n: Option<u64>,
        /// Size grid `start:stop:geometric[:points]`, e.g.
        /// `4096:524288:geometric:8`.
        #[arg(long)]
        n_grid: Option<String>,
        #[arg(long)]
        replicates: Option<u32>,
    },
    /// Fit the growth exponent from an estimates CSV.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Estimates CSV produced by `estimate` (`-` for stdin).
        #[arg(long)]
        input: Option<String>,
        /// Also include a log log N regressor.
        #[arg(long)]
        with_log_correction: bool,
    },
    /// Sample sets and report the grid occupancy bounds around the LIS.
    GridCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        family: Option<String>,
        #[arg(long)]
        n: Option<u64>,
        /// Exponent choosing the grid side b = floor(N^(1/(alpha+2))).
        #[arg(long, allow_negative_numbers = true)]
        alpha: Option<f64>,
        /// Number of independent sets (streams 0..sets).
        #[arg(long)]
        sets: Option<u64>,
        /// Append the LIS witness indices to each row.
        #[arg(long)]
        emit_witness: bool,
    },
    /// Empirical deviation tails against the concentration bounds.
    Concentration {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        family: Option<String>,
        #[arg(long)]
        n: Option<u64>,
        #[arg(long)]
        replicates: Option<u32>,
        /// Comma-separated deviations; default is a sqrt(N)-scaled grid.
        #[arg(long)]
        lambdas: Option<String>,
    },
    /// Run the verification suite and print one line per criterion.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Criteria set to run (only `primary` exists).
        #[arg(long, default_value = "primary")]
        suite: String,
    },
}

/// Optional JSON config mirroring the flags; flag values override.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    family: Option<String>,
    n: Option<u64>,
    n_grid: Option<String>,
    replicates: Option<u32>,
    seed: Option<u64>,
    stream: Option<u64>,
    lambdas: Option<Vec<f64>>,
    alpha: Option<f64>,
    sets: Option<u64>,
    input: Option<String>,
    out: Option<String>,
    json: Option<bool>,
    threads: Option<usize>,
    with_log_correction: Option<bool>,
    emit_witness: Option<bool>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Io(io::Error),
    Invariant(String),
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e)
    }
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
}

/// Parses `args` (including the program name) and runs; returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders --help/--version through the error path too.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Io(e)) => {
            eprintln!("io error: {e}");
            1
        }
        Err(CliError::Invariant(msg)) => {
            eprintln!("invariant violated: {msg}");
            2
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Sample {
            common,
            family,
            n,
            stream,
        } => {
            let cfg = load_config(&common)?;
            init_threads(common.threads.or(cfg.threads));
            let family = parse_family(family.or(cfg.family))?;
            let n = n
                .or(cfg.n)
                .ok_or_else(|| CliError::usage("sample requires --n"))?;
            let seed = common.seed.or(cfg.seed).unwrap_or(1);
            let stream = stream.or(cfg.stream).unwrap_or(0);
            let sampler = Sampler::new(&family).map_err(|e| CliError::usage(e.to_string()))?;
            let ps = sampler.sample_set(n as usize, &mut RngStream::new(seed, stream));
            let json = common.json || cfg.json.unwrap_or(false);
            with_output(common.out.or(cfg.out), |out| {
                if json {
                    for p in ps.points() {
                        writeln!(out, "{}", serde_json::json!({ "x": p.x, "y": p.y }))?;
                    }
                    Ok(())
                } else {
                    ps.write_csv(out)
                }
            })
        }
        Command::Estimate {
            common,
            family,
            n,
            n_grid,
            replicates,
        } => {
            let cfg = load_config(&common)?;
            init_threads(common.threads.or(cfg.threads));
            let family = parse_family(family.or(cfg.family))?;
            let seed = common.seed.or(cfg.seed).unwrap_or(1);
            let replicates = replicates.or(cfg.replicates).unwrap_or(64);
            let sizes = match (n, n_grid.or(cfg.n_grid.clone())) {
                (Some(_), Some(_)) => {
                    return Err(CliError::usage("use either --n or --n-grid, not both"))
                }
                (Some(n), None) => vec![n],
                (None, Some(spec)) => parse_n_grid(&spec)?,
                (None, None) => match cfg.n {
                    Some(n) => vec![n],
                    None => return Err(CliError::usage("estimate requires --n or --n-grid")),
                },
            };
            let mut records = Vec::with_capacity(sizes.len());
            for n in sizes {
                let rec = estimate(&family, n, replicates, seed)
                    .map_err(|e| CliError::usage(e.to_string()))?;
                records.push(rec);
            }
            let json = common.json || cfg.json.unwrap_or(false);
            with_output(common.out.or(cfg.out), |out| {
                write_estimates(out, &records, json)
            })
        }
        Command::Fit {
            common,
            input,
            with_log_correction,
        } => {
            let cfg = load_config(&common)?;
            init_threads(common.threads.or(cfg.threads));
            let input = input
                .or(cfg.input)
                .ok_or_else(|| CliError::usage("fit requires --input"))?;
            let with_log = with_log_correction || cfg.with_log_correction.unwrap_or(false);
            let records = read_estimates(&input)?;
            // One fit per family present, in first-appearance order.
            let mut families: Vec<DensityFamily> = Vec::new();
            for r in &records {
                if !families.contains(&r.family) {
                    families.push(r.family);
                }
            }
            let mut fits = Vec::new();
            for fam in families {
                let group: Vec<EstimateRecord> = records
                    .iter()
                    .filter(|r| r.family == fam)
                    .cloned()
                    .collect();
                let fit =
                    fit_exponent(&group, with_log).map_err(|e| CliError::usage(e.to_string()))?;
                fits.push(fit);
            }
            let json = common.json || cfg.json.unwrap_or(false);
            with_output(common.out.or(cfg.out), |out| {
                if json {
                    for f in &fits {
                        writeln!(out, "{}", serde_json::to_string(f).expect("serialize"))?;
                    }
                } else {
                    writeln!(out, "family,exponent,log_coeff,intercept,r_squared,n_points")?;
                    for f in &fits {
                        writeln!(
                            out,
                            "{},{},{},{},{},{}",
                            csv_field(&f.family.to_string()),
                            f.exponent,
                            f.log_coeff,
                            f.intercept,
                            f.r_squared,
                            f.n_points
                        )?;
                    }
                }
                Ok(())
            })
        }
        Command::GridCheck {
            common,
            family,
            n,
            alpha,
            sets,
            emit_witness,
        } => {
            let cfg = load_config(&common)?;
            init_threads(common.threads.or(cfg.threads));
            let family = parse_family(family.or(cfg.family))?;
            let n = n
                .or(cfg.n)
                .ok_or_else(|| CliError::usage("grid-check requires --n"))?;
            let alpha = alpha.or(cfg.alpha).unwrap_or(-0.5);
            let sets = sets.or(cfg.sets).unwrap_or(1);
            let seed = common.seed.or(cfg.seed).unwrap_or(1);
            let emit_witness = emit_witness || cfg.emit_witness.unwrap_or(false);
            let sampler = Sampler::new(&family).map_err(|e| CliError::usage(e.to_string()))?;
            let json = common.json || cfg.json.unwrap_or(false);

            let mut rows = Vec::new();
            for stream in 0..sets {
                let ps = sampler.sample_set(n as usize, &mut RngStream::new(seed, stream));
                let report = match sandwich_check(&ps, alpha) {
                    Ok(r) => r,
                    Err(GridError::InvariantViolation { lower, lis, upper }) => {
                        return Err(CliError::Invariant(format!(
                            "sandwich failed for {family} N={n} stream={stream}: lower={lower} lis={lis} upper={upper}"
                        )))
                    }
                    Err(e) => return Err(CliError::usage(e.to_string())),
                };
                let witness = emit_witness.then(|| witness_string(&ps));
                rows.push((stream, report, witness));
            }
            with_output(common.out.or(cfg.out), |out| {
                if json {
                    for (stream, r, witness) in &rows {
                        let mut v = serde_json::to_value(r).expect("serialize");
                        v["seed"] = serde_json::json!(seed);
                        v["stream"] = serde_json::json!(stream);
                        if let Some(w) = witness {
                            v["witness"] = serde_json::json!(w);
                        }
                        writeln!(out, "{v}")?;
                    }
                } else {
                    if emit_witness {
                        writeln!(out, "N,alpha,b,lower,lis,upper,chain_cap,seed,stream,witness")?;
                    } else {
                        writeln!(out, "N,alpha,b,lower,lis,upper,chain_cap,seed,stream")?;
                    }
                    for (stream, r, witness) in &rows {
                        write!(
                            out,
                            "{},{},{},{},{},{},{},{},{}",
                            r.n, r.alpha, r.b, r.lower, r.lis, r.upper, r.chain_cap, seed, stream
                        )?;
                        if let Some(w) = witness {
                            write!(out, ",{}", csv_field(w))?;
                        }
                        writeln!(out)?;
                    }
                }
                Ok(())
            })
        }
        Command::Concentration {
            common,
            family,
            n,
            replicates,
            lambdas,
        } => {
            let cfg = load_config(&common)?;
            init_threads(common.threads.or(cfg.threads));
            let family = parse_family(family.or(cfg.family))?;
            let n = n
                .or(cfg.n)
                .ok_or_else(|| CliError::usage("concentration requires --n"))?;
            let replicates = replicates.or(cfg.replicates).unwrap_or(1000);
            let seed = common.seed.or(cfg.seed).unwrap_or(1);
            let lambdas = match lambdas {
                Some(s) => parse_lambdas(&s)?,
                None => cfg.lambdas.clone().unwrap_or_else(|| default_lambdas(n)),
            };
            let report = concentration_report(&family, n, replicates, &lambdas, seed)
                .map_err(|e| CliError::usage(e.to_string()))?;
            let json = common.json || cfg.json.unwrap_or(false);
            with_output(common.out.or(cfg.out), |out| {
                if json {
                    for row in &report.rows {
                        let mut v = serde_json::to_value(row).expect("serialize");
                        v["family"] = serde_json::json!(report.family.to_string());
                        v["N"] = serde_json::json!(report.n);
                        v["median"] = serde_json::json!(report.median);
                        writeln!(out, "{v}")?;
                    }
                } else {
                    writeln!(
                        out,
                        "family,N,lambda,empirical_tail,mcdiarmid,talagrand_up,talagrand_down,median"
                    )?;
                    for row in &report.rows {
                        writeln!(
                            out,
                            "{},{},{},{},{},{},{},{}",
                            csv_field(&report.family.to_string()),
                            report.n,
                            row.lambda,
                            row.empirical_tail,
                            row.mcdiarmid,
                            row.talagrand_up,
                            row.talagrand_down,
                            report.median
                        )?;
                    }
                }
                Ok(())
            })?;
            if !report.violations.is_empty() {
                return Err(CliError::Invariant(report.violations.join("; ")));
            }
            Ok(())
        }
        Command::Verify { common, suite: which } => {
            let cfg = load_config(&common)?;
            init_threads(common.threads.or(cfg.threads));
            if which != "primary" {
                return Err(CliError::usage(format!(
                    "unknown suite `{which}` (only `primary` exists)"
                )));
            }
            let seed = common.seed.or(cfg.seed).unwrap_or(1);
            let json = common.json || cfg.json.unwrap_or(false);
            let outcomes = suite::run_all(seed);
            let all = outcomes.iter().all(|o| o.passed);
            with_output(common.out.or(cfg.out), |out| {
                for o in &outcomes {
                    if json {
                        writeln!(out, "{}", serde_json::to_string(o).expect("serialize"))?;
                    } else {
                        writeln!(out, "{}", o.line())?;
                    }
                }
                Ok(())
            })?;
            if all {
                Ok(())
            } else {
                Err(CliError::Invariant(
                    "one or more verification criteria failed".to_string(),
                ))
            }
        }
    }
}

fn witness_string(ps: &PointSet) -> String {
    let perm = crate::core::perm_of_points(ps).expect("sampled sets have distinct coords");
    let w = lis_fast_with_witness(&perm).witness.unwrap_or_default();
    w.iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn parse_family(spec: Option<String>) -> Result<DensityFamily, CliError> {
    let spec = spec.ok_or_else(|| {
        CliError::usage(
            "missing --family; accepted grammar: uniform | ref:beta=B,gamma=G | \
             corner-radial:alpha=A | corner-pinched:beta=B,c=C | diag-power:alpha=A",
        )
    })?;
    spec.parse().map_err(|e| CliError::usage(format!("{e}")))
}

fn parse_lambdas(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|e| CliError::usage(format!("bad --lambdas entry `{p}`: {e}")))
        })
        .collect()
}

/// `start:stop:geometric[:points]` with rounded geometric interpolation.
fn parse_n_grid(spec: &str) -> Result<Vec<u64>, CliError> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 && parts.len() != 4 {
        return Err(CliError::usage(format!(
            "bad --n-grid `{spec}`; expected start:stop:geometric[:points]"
        )));
    }
    let start: u64 = parts[0]
        .parse()
        .map_err(|e| CliError::usage(format!("bad --n-grid start: {e}")))?;
    let stop: u64 = parts[1]
        .parse()
        .map_err(|e| CliError::usage(format!("bad --n-grid stop: {e}")))?;
    if parts[2] != "geometric" {
        return Err(CliError::usage(format!(
            "bad --n-grid spacing `{}`; only `geometric` is supported",
            parts[2]
        )));
    }
    if start == 0 || stop < start {
        return Err(CliError::usage("--n-grid needs 1 <= start <= stop"));
    }
    let points: usize = if parts.len() == 4 {
        parts[3]
            .parse()
            .map_err(|e| CliError::usage(format!("bad --n-grid points: {e}")))?
    } else {
        8
    };
    if points < 1 || (points > 1 && stop == start) {
        return Err(CliError::usage("--n-grid points inconsistent with range"));
    }
    let mut sizes = Vec::with_capacity(points);
    if points == 1 {
        sizes.push(start);
    } else {
        let ratio = stop as f64 / start as f64;
        for i in 0..points {
            let v = (start as f64 * ratio.powf(i as f64 / (points - 1) as f64)).round() as u64;
            sizes.push(v);
        }
    }
    sizes.dedup();
    Ok(sizes)
}

fn load_config(common: &Common) -> Result<FileConfig, CliError> {
    match &common.config {
        None => Ok(FileConfig::default()),
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::usage(format!("bad config {}: {e}", path.display())))
        }
    }
}

fn init_threads(requested: Option<usize>) {
    let threads = requested.or_else(|| {
        std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(t) = threads {
        // The global pool can only be set once; later calls keep the first
        // configuration, which is fine since outputs are thread-count
        // independent.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build_global();
    }
}

fn with_output<F>(out: Option<String>, write: F) -> Result<(), CliError>
where
    F: FnOnce(&mut dyn Write) -> io::Result<()>,
{
    match out.as_deref() {
        None | Some("-") => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock)?;
            lock.flush()?;
            Ok(())
        }
        Some(path) => {
            let mut file = BufWriter::new(File::create(Path::new(path))?);
            write(&mut file)?;
            file.flush()?;
            Ok(())
        }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn write_estimates(
    out: &mut dyn Write,
    records: &[EstimateRecord],
    json: bool,
) -> io::Result<()> {
    if json {
        for r in records {
            writeln!(out, "{}", serde_json::to_string(r).expect("serialize"))?;
        }
        return Ok(());
    }
    writeln!(out, "family,N,replicates,mean_lis,std_lis,stderr,seed")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            csv_field(&r.family.to_string()),
            r.n,
            r.replicates,
            r.mean_lis,
            r.std_lis,
            r.stderr,
            r.seed
        )?;
    }
    Ok(())
}

fn read_estimates(input: &str) -> Result<Vec<EstimateRecord>, CliError> {
    let reader: Box<dyn io::Read> = if input == "-" {
        Box::new(io::stdin())
    } else {
        Box::new(File::open(input)?)
    };
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = csv_reader
        .headers()
        .map_err(|e| CliError::usage(format!("bad estimates CSV: {e}")))?
        .clone();
    let mut records = Vec::new();
    for row in csv_reader.records() {
        let row = row.map_err(|e| CliError::usage(format!("bad estimates CSV: {e}")))?;
        let get = |name: &str| -> Result<&str, CliError> {
            let idx = headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| CliError::usage(format!("estimates CSV missing column {name}")))?;
            row.get(idx)
                .ok_or_else(|| CliError::usage(format!("estimates CSV row missing {name}")))
        };
        let family: DensityFamily = get("family")?
            .parse()
            .map_err(|e| CliError::usage(format!("{e}")))?;
        let parse_f64 = |name: &str| -> Result<f64, CliError> {
            get(name)?
                .parse()
                .map_err(|e| CliError::usage(format!("bad {name}: {e}")))
        };
        records.push(EstimateRecord {
            family,
            n: get("N")?
                .parse()
                .map_err(|e| CliError::usage(format!("bad N: {e}")))?,
            replicates: get("replicates")?
                .parse()
                .map_err(|e| CliError::usage(format!("bad replicates: {e}")))?,
            mean_lis: parse_f64("mean_lis")?,
            std_lis: parse_f64("std_lis")?,
            stderr: parse_f64("stderr")?,
            seed: get("seed")?
                .parse()
                .map_err(|e| CliError::usage(format!("bad seed: {e}")))?,
        });
    }
    Ok(records)
}
