//! The `kgsim` command line.
//!
//! Exit status: 0 success, 1 usage or configuration error, 2 numerical
//! failure, 3 failed acceptance check.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use kg_core::diagnostics::decay_fit;
use kg_core::harness::{
    convergence_study, decay_acceptable, read_diagnostics, read_manifest, run_scan, run_single,
    RunConfig,
};
use kg_core::identities::{run_identity_suite, DEFAULT_PAIRS, DEFAULT_SEED};
use kg_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_ACCEPTANCE: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "kgsim",
    version,
    about = "Klein-Gordon null-form simulator and checks"
)]
struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one configuration.
    Run {
        config: PathBuf,
        /// Output directory; overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every mass of `scan.masses`.
    Scan {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Vanishing-mass convergence orders over a scan directory.
    Converge {
        scan_dir: PathBuf,
        /// Vector-field order k, 0 or 1.
        #[arg(long, default_value_t = 1)]
        order: usize,
    },
    /// Null-form and commutator identities on analytic test pairs.
    VerifyIdentities {
        #[arg(long, default_value_t = DEFAULT_PAIRS)]
        pairs: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
    /// Fit the decay of sup|v| in a finished run.
    FitDecay {
        run_dir: PathBuf,
        /// Fit window `a,b`.
        #[arg(long, value_parser = parse_window)]
        window: (f64, f64),
    },
}

fn parse_window(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected a,b")?;
    let a: f64 = a.trim().parse().map_err(|_| format!("bad number '{a}'"))?;
    let b: f64 = b.trim().parse().map_err(|_| format!("bad number '{b}'"))?;
    if !(a < b) {
        return Err("window needs a < b".into());
    }
    Ok((a, b))
}

fn exit_for(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_CONFIG
    }
}

fn output_dir(config: &RunConfig, path: &Path, out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| {
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned());
            PathBuf::from(format!("{}.out", stem.unwrap_or_else(|| "run".into())))
        })
}

fn cmd_run(config: PathBuf, out: Option<PathBuf>) -> Result<i32, Error> {
    let cfg = RunConfig::from_file(&config)?;
    let dir = output_dir(&cfg, &config, out);
    let o = run_single(&cfg, &dir)?;
    println!("run directory: {}", dir.display());
    println!(
        "saves: {}, dt: {}, elapsed: {:.2} s",
        o.records.len(),
        o.dt,
        o.elapsed_seconds
    );
    for (i, f) in o.decay.iter().enumerate() {
        match f {
            Ok(f) => println!(
                "decay species {i}: slope {:.4}, C {:.4e}, max ratio {:.4}",
                f.slope, f.c_fit, f.max_ratio
            ),
            Err(e) => println!("decay species {i}: {e}"),
        }
    }
    if let Some(r) = &o.inequality {
        println!(
            "energy inequality: min slack {:.3e} at t = {}",
            r.min_slack, r.t_at_min
        );
    }
    if let Some(f) = &o.failure {
        eprintln!("numerical failure at t = {}: {}", f.t, f.message);
        return Ok(EXIT_NUMERICAL);
    }
    Ok(EXIT_OK)
}

fn cmd_scan(config: PathBuf, out: Option<PathBuf>) -> Result<i32, Error> {
    let cfg = RunConfig::from_file(&config)?;
    let dir = output_dir(&cfg, &config, out);
    let runs = run_scan(&cfg, &dir)?;
    let mut code = EXIT_OK;
    for (m, o) in &runs {
        match &o.failure {
            None => println!("m = {m}: completed in {:.2} s", o.elapsed_seconds),
            Some(f) => {
                println!("m = {m}: failed at t = {}: {}", f.t, f.message);
                code = EXIT_NUMERICAL;
            }
        }
    }
    println!("scan directory: {}", dir.display());
    Ok(code)
}

fn cmd_converge(scan_dir: PathBuf, order: usize) -> Result<i32, Error> {
    let table = convergence_study(&scan_dir, order)?;
    println!("{:>8} {:>8} {:>14} {:>14} {:>8}", "m", "t", "D", "D/t", "p");
    for r in &table.rows {
        let p = r
            .order
            .map(|p| format!("{p:.3}"))
            .unwrap_or_else(|| "-".into());
        println!(
            "{:>8} {:>8} {:>14.6e} {:>14.6e} {:>8}",
            r.m,
            r.t,
            r.d,
            r.d / r.t,
            p
        );
    }
    for (m, g) in &table.growth {
        println!("m = {m}: D grows like t^{g:.3}");
    }
    Ok(if table.orders_in_band() {
        EXIT_OK
    } else {
        EXIT_ACCEPTANCE
    })
}

fn cmd_identities(pairs: usize, seed: u64) -> Result<i32, Error> {
    let report = run_identity_suite(pairs, seed);
    println!("{} analytic test pairs", report.pairs);
    for c in &report.checks {
        let tag = if c.passed() { "PASS" } else { "FAIL" };
        println!(
            "{tag} {:<40} residual {:.3e} (tol {:.0e})",
            c.name, c.max_residual, c.tolerance
        );
    }
    println!(
        "observed null-bound constant: {:.4}",
        report.observed_null_constant
    );
    Ok(if report.passed() {
        EXIT_OK
    } else {
        EXIT_ACCEPTANCE
    })
}

fn cmd_fit_decay(run_dir: PathBuf, window: (f64, f64)) -> Result<i32, Error> {
    let manifest = read_manifest(&run_dir)?;
    let records = read_diagnostics(&run_dir.join(kg_core::harness::run::DIAGNOSTICS_FILE))?;
    let m = manifest.config.mass;
    let mut ok = true;
    for i in 0..manifest.config.species {
        let f = decay_fit(&records, i, window, m)?;
        let pass = decay_acceptable(&f, m);
        ok &= pass;
        println!(
            "{} species {i}: slope {:.4}, C {:.4e}, residual {:.3e}, max ratio {:.4}, {} samples",
            if pass { "PASS" } else { "FAIL" },
            f.slope,
            f.c_fit,
            f.residual,
            f.max_ratio,
            f.samples
        );
    }
    Ok(if ok { EXIT_OK } else { EXIT_ACCEPTANCE })
}

/// Runs the command line and returns the exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    if let Some(n) = cli.threads {
        // Fails only if a pool already exists, in which case it is kept.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
    let result = match cli.command {
        Command::Run { config, out } => cmd_run(config, out),
        Command::Scan { config, out } => cmd_scan(config, out),
        Command::Converge { scan_dir, order } => cmd_converge(scan_dir, order),
        Command::VerifyIdentities { pairs, seed } => cmd_identities(pairs, seed),
        Command::FitDecay { run_dir, window } => cmd_fit_decay(run_dir, window),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_for(&e)
        }
    }
}
