use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rrsc::calibration::CalibrationCache;
use rrsc::harness::{calibrate_config, fmt_g9, run_sweep_to_file, SweepConfig};
use rrsc::mechanisms::LdpMechanism;
use rrsc::{selftest, Error};

#[derive(Parser)]
#[command(name = "rrsc", version, about = "Private, communication-constrained mean estimation simulator")]
struct Cli {
    /// Root seed; overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "calib_cache.json")]
    calib_cache: PathBuf,
    /// Output CSV; overrides the config's `out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Populate the calibration cache for every cell of a sweep config.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a sweep and write its CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the built-in invariant checks.
    Selftest,
    /// Print the cached calibrations.
    ShowCalib,
}

fn load_config(cli: &Cli, path: &PathBuf) -> Result<SweepConfig, Error> {
    let mut config = SweepConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    Ok(config)
}

fn report_cache(cache: &CalibrationCache) {
    let s = cache.stats();
    eprintln!("calibration cache: {} hits, {} misses", s.hits, s.misses);
}

fn run(cli: &Cli) -> Result<bool, Error> {
    match &cli.command {
        Command::Calibrate { config } => {
            let config = load_config(cli, config)?;
            let mut cache = CalibrationCache::open(&cli.calib_cache)?;
            let built = calibrate_config(&config, &mut cache);
            cache.save()?;
            for (cell, mech) in built? {
                let k = mech.k().map(|k| k.to_string()).unwrap_or_else(|| "-".into());
                let scale = mech.scale().map(fmt_g9).unwrap_or_else(|| "-".into());
                let bits = cell.bits.map(|b| b.to_string()).unwrap_or_else(|| "-".into());
                println!("{} eps={} bits={bits} k={k} scale={scale}", mech.kind(), fmt_g9(cell.eps));
            }
            report_cache(&cache);
            Ok(true)
        }
        Command::Sweep { config } => {
            let config = load_config(cli, config)?;
            let mut cache = CalibrationCache::open(&cli.calib_cache)?;
            let records = run_sweep_to_file(&config, &mut cache)?;
            report_cache(&cache);
            eprintln!("wrote {} rows to {}", records.len(), config.out.display());
            Ok(true)
        }
        Command::Selftest => {
            let checks = selftest::run_all()?;
            let mut ok = true;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                ok &= c.passed;
            }
            Ok(ok)
        }
        Command::ShowCalib => {
            let cache = CalibrationCache::open(&cli.calib_cache)?;
            println!("variant,M,d,eps,k,trials,seed,ck_value,ck_stderr,r_k");
            for r in cache.records() {
                println!(
                    "{},{},{},{},{},{},{},{},{},{}",
                    r.variant,
                    r.m,
                    r.d,
                    fmt_g9(r.eps),
                    r.k,
                    r.trials,
                    r.seed,
                    fmt_g9(r.ck_value),
                    fmt_g9(r.ck_stderr),
                    fmt_g9(r.r_k)
                );
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        eprintln!("error: cannot start thread pool: {e}");
        return ExitCode::from(2);
    }
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
