use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use lincon::config::ExperimentConfig;
use lincon::external::{analyze, synthetic_fixture, ExternalAnalysis, ExternalMode, ExternalVectorFile, FixtureKind, FixtureSpec};
use lincon::reproduce::{reproduce, write_reproduce, ReproduceOptions, Target};
use lincon::runner::{aggregate_header, aggregate_row, run_experiment, write_run, OutputSink};
use lincon::verify::{verify, VerifySettings, VerifyTarget};

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_VERIFY: u8 = 3;

#[derive(Parser)]
#[command(name = "lincon", version, about = "Train and analyze latent-concept embedding models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Output directory; defaults to the config's output_dir or runs/<config stem>.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run a bundled table or figure experiment.
    Reproduce {
        target: String,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a property-verification suite.
    Verify {
        target: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare steering directions between two exported vector files.
    AnalyzeExternal {
        a: PathBuf,
        b: PathBuf,
        /// `mean` (cosine of mean steering vectors) or `pairwise`.
        #[arg(long, default_value = "mean")]
        mode: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a pair of synthetic vector files.
    Fixture {
        /// `orthogonal` or `correlated`.
        #[arg(long, default_value = "orthogonal")]
        kind: String,
        #[arg(long, default_value_t = 27)]
        labels: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 20)]
        pairs: usize,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out_a: PathBuf,
        #[arg(long)]
        out_b: PathBuf,
    },
}

/// Error carrying the process exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure { code: EXIT_CONFIG, error: e.into() }
}

fn runtime_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure { code: EXIT_RUNTIME, error: e.into() }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { config, out } => cmd_run(&config, out),
        Command::Reproduce {
            target,
            variant,
            replicates,
            max_steps,
            out,
        } => cmd_reproduce(&target, ReproduceOptions { variant, replicates, max_steps }, out),
        Command::Verify { target, out } => cmd_verify(&target, out),
        Command::AnalyzeExternal { a, b, mode, out } => cmd_external(&a, &b, &mode, out),
        Command::Fixture {
            kind,
            labels,
            dim,
            pairs,
            noise,
            seed,
            out_a,
            out_b,
        } => {
            let kind: FixtureKind = kind.parse().map_err(|e: String| config_err(anyhow::anyhow!(e)))?;
            let spec = FixtureSpec { kind, labels, dim, pairs, noise, seed };
            let (a, b) = synthetic_fixture(&spec).map_err(config_err)?;
            std::fs::write(&out_a, a).with_context(|| format!("writing {}", out_a.display())).map_err(runtime_err)?;
            std::fs::write(&out_b, b).with_context(|| format!("writing {}", out_b.display())).map_err(runtime_err)?;
            Ok(())
        }
    }
}

fn cmd_run(path: &Path, out: Option<PathBuf>) -> Result<(), Failure> {
    let cfg = ExperimentConfig::load(path).map_err(config_err)?;
    let dir = out.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| {
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
        PathBuf::from("runs").join(stem)
    });
    let outcome = run_experiment(&cfg);
    let manifest = write_run(&outcome, &dir)
        .with_context(|| format!("writing outputs to {}", dir.display()))
        .map_err(runtime_err)?;
    println!("{}\n{}", aggregate_header(), aggregate_row(&outcome));
    for e in outcome.errors() {
        eprintln!("replicate {} failed: {e}", e.replicate);
    }
    println!("manifest: {}", manifest.join("manifest.toml").display());
    if outcome.successes().next().is_none() {
        return Err(runtime_err(anyhow::anyhow!("every replicate failed")));
    }
    Ok(())
}

fn cmd_reproduce(target: &str, opts: ReproduceOptions, out: Option<PathBuf>) -> Result<(), Failure> {
    let target: Target = target.parse().map_err(config_err)?;
    let outcome = reproduce(target, &opts).map_err(|e| config_err(anyhow::anyhow!(e)))?;
    let dir = out.unwrap_or_else(|| PathBuf::from("runs").join(target.name()));
    let manifest = write_reproduce(&outcome, &dir)
        .with_context(|| format!("writing outputs to {}", dir.display()))
        .map_err(runtime_err)?;
    print!("{}", outcome.table_csv());
    println!("manifest: {}", manifest.join("manifest.toml").display());
    if outcome.failures() > 0 {
        return Err(runtime_err(anyhow::anyhow!("{} replicate(s) failed", outcome.failures())));
    }
    Ok(())
}

fn cmd_verify(target: &str, out: Option<PathBuf>) -> Result<(), Failure> {
    let target: VerifyTarget = target.parse().map_err(config_err)?;
    let outcome = verify(target, &VerifySettings::default()).map_err(runtime_err)?;
    let dir = out.unwrap_or_else(|| PathBuf::from("runs").join(format!("verify-{}", target.name())));
    let rendered = outcome.render();
    let mut sink = OutputSink::new(&dir).map_err(runtime_err)?;
    let write = |sink: &mut OutputSink| -> std::io::Result<()> {
        sink.write("report.txt", &rendered)?;
        for (name, contents) in &outcome.files {
            sink.write(name, contents)?;
        }
        Ok(())
    };
    write(&mut sink).map_err(runtime_err)?;
    sink.finish(&format!("target = \"{}\"\n", target.name()), &[]).map_err(runtime_err)?;
    print!("{rendered}");
    if !outcome.passed() {
        return Err(Failure {
            code: EXIT_VERIFY,
            error: anyhow::anyhow!("verification {} failed", target.name()),
        });
    }
    Ok(())
}

fn load_vectors(path: &Path) -> Result<ExternalVectorFile, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(config_err)?;
    ExternalVectorFile::parse(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(config_err)
}

fn cmd_external(a: &Path, b: &Path, mode: &str, out: Option<PathBuf>) -> Result<(), Failure> {
    let mode: ExternalMode = mode.parse().map_err(|e: String| config_err(anyhow::anyhow!(e)))?;
    let (fa, fb) = (load_vectors(a)?, load_vectors(b)?);
    let result = analyze(&fa, &fb, mode).map_err(config_err)?;
    let dir = out.unwrap_or_else(|| PathBuf::from("runs").join("external"));
    let mut sink = OutputSink::new(&dir).map_err(runtime_err)?;
    let files = [
        ("similarity.csv", result.similarity_csv()),
        ("ranks.csv", result.ranks_csv()),
        ("heatmap_a.csv", ExternalAnalysis::heatmap_csv(&result.labels_a, &result.heatmap_a)),
        ("heatmap_b.csv", ExternalAnalysis::heatmap_csv(&result.labels_b, &result.heatmap_b)),
    ];
    for (name, contents) in &files {
        sink.write(name, contents).map_err(runtime_err)?;
    }
    let settings = format!("a = {:?}\nb = {:?}\nmode = \"{mode}\"\n", a.display().to_string(), b.display().to_string());
    sink.finish(&settings, &[]).map_err(runtime_err)?;
    let top1 = result.ranks.iter().filter(|r| r.rank == 1).count();
    println!(
        "labels: {} / {}; matching label ranked first for {top1} of {}",
        result.labels_a.len(),
        result.labels_b.len(),
        result.ranks.len()
    );
    println!("max off-label |cos| = {:.4}", result.max_off_diagonal());
    println!("skipped incomplete pairs: a {}, b {}", result.skipped_a, result.skipped_b);
    Ok(())
}

