use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dqme::harness::config::FieldOutput;
use dqme::harness::run::{self, OutputSet};
use dqme::harness::sweep::{self, SweepConfig};
use dqme::harness::{self, oracle, RunConfig};
use dqme::{Error, Result};

#[derive(Parser)]
#[command(name = "dqme", version, about = "Dissipaton equation of motion solver with hybrid bath-mode statistics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Reserved; the dynamics are deterministic.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct WithSweep {
    #[command(flatten)]
    common: Common,
    /// Hierarchy depths to compare, e.g. `12,13`.
    #[arg(long, value_delimiter = ',')]
    l_sweep: Option<Vec<usize>>,
}

#[derive(Subcommand)]
enum Command {
    /// Exponential decomposition of the bath correlation (modes.json).
    Decompose(Common),
    /// Propagate and write moments, reduced density matrix and summary.
    Run(WithSweep),
    /// Compare a pure-dephasing run with the exact coherence decay.
    Oracle(Common),
    /// Run and reconstruct the dissipaton field (defaults to mode 0).
    Field(WithSweep),
    /// Parameter sweep; every point runs as an independent job.
    Sweep(WithSweep),
}

fn report(inconclusive: &[String]) -> Result<()> {
    if inconclusive.is_empty() {
        return Ok(());
    }
    Err(Error::Inconclusive(inconclusive.join("; ")))
}

fn decompose(c: &Common) -> Result<()> {
    let cfg = RunConfig::load(&c.config)?;
    let (modes, rep) = harness::decompose(&cfg)?;
    let mut files = OutputSet::new(&c.out)?;
    files.write("modes.json", |w| {
        use std::io::Write;
        writeln!(w, "{}", modes.to_json()?)?;
        Ok(())
    })?;
    files.write("decomposition.json", |w| run::write_summary(&rep, w))?;
    if let Some(e) = rep.reconstruction_error {
        println!("{} modes, reconstruction error {e:.3e}", modes.len());
    } else {
        println!("{} modes", modes.len());
    }
    files.keep();
    Ok(())
}

fn run_config(cfg: &RunConfig, out: &Path, l_sweep: Option<&[usize]>) -> Result<()> {
    let summary = run::run(cfg, out, l_sweep)?;
    println!(
        "{} samples, max trace error {:.3e}, max Hermiticity defect {:.3e}",
        summary.samples, summary.max_trace_error, summary.max_hermiticity_defect
    );
    report(&summary.inconclusive)
}

fn oracle_cmd(c: &Common) -> Result<()> {
    let cfg = RunConfig::load(&c.config)?;
    let cmp = oracle::compare_pure_dephasing(&cfg)?;
    let mut files = OutputSet::new(&c.out)?;
    files.write("oracle.csv", |w| oracle::write_comparison_csv(&cmp, w))?;
    files.write("oracle.json", |w| {
        run::write_summary(
            &serde_json::json!({
                "max_deviation": cmp.max_deviation,
                "max_trace_error": cmp.max_trace_error,
                "max_hermiticity_defect": cmp.max_hermiticity_defect,
            }),
            w,
        )
    })?;
    files.keep();
    println!("max |rho01| deviation from the exact decay: {:.3e}", cmp.max_deviation);
    Ok(())
}

fn field_cmd(a: &WithSweep) -> Result<()> {
    let mut cfg = RunConfig::load(&a.common.config)?;
    if cfg.outputs.field.is_none() {
        cfg.outputs.field = Some(FieldOutput {
            dims: vec![0],
            points: dqme::field::DEFAULT_POINTS,
            half_width: dqme::field::DEFAULT_HALF_WIDTH,
            keep_operator: false,
            balance_tolerance: Some(5e-3),
        });
        cfg.validate()?;
    }
    run_config(&cfg, &a.common.out, a.l_sweep.as_deref())
}

fn sweep_cmd(a: &WithSweep) -> Result<()> {
    let cfg = SweepConfig::load(&a.common.config)?;
    let rep = sweep::run_sweep(&cfg, Some(&a.common.out), a.l_sweep.as_deref())?;
    for r in &rep.rows {
        println!(
            "{:>10.4}  mean {:>12.6e}  sigma ratio {:>10.6}  skewness {:>12.4e}  kurtosis {:>12.4e}",
            r.value,
            r.mean.unwrap_or(f64::NAN),
            r.sigma_ratio.unwrap_or(f64::NAN),
            r.skewness.unwrap_or(f64::NAN),
            r.kurtosis.unwrap_or(f64::NAN)
        );
    }
    report(&rep.inconclusive())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let seed = match &cli.command {
        Command::Decompose(c) | Command::Oracle(c) => c.seed,
        Command::Run(a) | Command::Field(a) | Command::Sweep(a) => a.common.seed,
    };
    if let Some(s) = seed {
        eprintln!("dqme: --seed {s} has no effect, the dynamics are deterministic");
    }
    let result = match &cli.command {
        Command::Decompose(c) => decompose(c),
        Command::Run(a) => RunConfig::load(&a.common.config)
            .and_then(|cfg| run_config(&cfg, &a.common.out, a.l_sweep.as_deref())),
        Command::Oracle(c) => oracle_cmd(c),
        Command::Field(a) => field_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dqme: {e}");
            ExitCode::from(harness::exit_code(&e) as u8)
        }
    }
}
