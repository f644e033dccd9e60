//! Command-line interface. `run` returns the process exit code: 0 on
//! success, 1 on validation or runtime failure, 2 on usage errors.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use bifta_core::geometry::fill_view_queue;
use bifta_core::rng::CropRng;
use bifta_core::DedupMode;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::bench::{bench, DEFAULT_CANDIDATES, MIN_REPETITIONS};
use crate::config::{DrStrategy, ExperimentConfig, Mode, ViewSource, VrStrategy};
use crate::error::{Error, Result};
use crate::experiment::{run_experiment, RunOptions};
use crate::fixture::{build_dataset, FixtureSpec};
use crate::manifest::Dataset;
use crate::pools::{parse_pools, refine_pool};
use crate::sweep::{parse_axis, sweep, write_csv};

#[derive(Debug, Parser)]
#[command(name = "bifta", version, about = "Refined view and description cross-alignment for zero-shot classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic world, its archives and dataset.json
    Synth(SynthArgs),
    /// Refine description pools from a JSON file
    RefineText(RefineArgs),
    /// Run view refinement alone and dump the queues
    CropSim(CropSimArgs),
    /// Run an experiment and write report.json and predictions.jsonl
    Classify(ClassifyArgs),
    /// Evaluate a Cartesian grid of config overrides and write a CSV
    Sweep(SweepArgs),
    /// Time crop generation and IoU filtering
    Bench(BenchArgs),
    /// Check a dataset manifest against its archives
    Validate(ValidateArgs),
}

/// Config file plus per-field overrides, shared by every subcommand.
#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// JSON file with ExperimentConfig keys
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Single seed (replaces the configured seed list)
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Comma-separated seed list
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, value_parser = parse_enum::<Mode>)]
    pub mode: Option<Mode>,
    #[arg(long, value_parser = parse_strategy)]
    pub vr_strategy: Option<VrStrategy>,
    #[arg(long, value_parser = parse_enum::<DrStrategy>)]
    pub dr_strategy: Option<DrStrategy>,
    #[arg(long, value_parser = parse_enum::<ViewSource>)]
    pub view_source: Option<ViewSource>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub capacity: Option<usize>,
    #[arg(long)]
    pub max_attempts: Option<usize>,
    #[arg(long)]
    pub s_th: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub vr_cos_threshold: Option<f64>,
    #[arg(long)]
    pub include_full_view: bool,
}

fn parse_enum<T: serde::de::DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn parse_strategy(s: &str) -> std::result::Result<VrStrategy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f.clone() { c.$f = v; })* };
        }
        set!(
            seeds,
            mode,
            vr_strategy,
            dr_strategy,
            view_source,
            alpha,
            beta,
            eta,
            capacity,
            s_th,
            k,
            tau,
            vr_cos_threshold
        );
        if let Some(s) = self.seed {
            c.seeds = vec![s];
        }
        if self.max_attempts.is_some() {
            c.max_attempts = self.max_attempts;
        }
        c.include_full_view |= self.include_full_view;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Built-in fixture: redundancy or separable
    #[arg(long, default_value = "redundancy", conflicts_with = "spec")]
    pub preset: String,
    /// JSON fixture specification
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Fixture seed override
    #[arg(long)]
    pub seed: Option<u64>,
    /// Precomputed candidate crops per image
    #[arg(long)]
    pub pool_size: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Pool JSON (one object or an array)
    #[arg(long)]
    pub input: PathBuf,
    /// Text archive directory holding description embeddings
    #[arg(long)]
    pub texts: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CropSimArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Queues per seed
    #[arg(long, default_value_t = 1)]
    pub images: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// dataset.json or the directory containing it
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
    /// Record wall-clock timing in the report
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Axis as key=v1,v2,...; repeat for a product
    #[arg(long)]
    pub grid: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Synthetic dataset; defaults to the redundancy fixture
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = MIN_REPETITIONS)]
    pub repetitions: usize,
    #[arg(long, default_value_t = DEFAULT_CANDIDATES)]
    pub candidates: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn write_output(out: Option<&Path>, file: &str, bytes: &[u8]) -> Result<()> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let p = dir.join(file);
            fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
            println!("wrote {}", p.display());
            Ok(())
        }
        None => std::io::stdout().write_all(bytes).map_err(|e| Error::io("<stdout>", e)),
    }
}

fn pretty<T: Serialize>(v: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(v).expect("serializable output");
    bytes.push(b'\n');
    bytes
}

fn execute(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Synth(a) => {
            let mut spec = match &a.spec {
                Some(p) => {
                    let text =
                        fs::read(p).map_err(|e| Error::Config(format!("cannot read spec {}: {e}", p.display())))?;
                    serde_json::from_slice(&text)
                        .map_err(|e| Error::Config(format!("invalid spec {}: {e}", p.display())))?
                }
                None => FixtureSpec::preset(&a.preset)
                    .ok_or_else(|| Error::Config(format!("unknown preset '{}' (redundancy, separable)", a.preset)))?,
            };
            if let Some(s) = a.seed {
                spec.seed = s;
            }
            if let Some(n) = a.pool_size {
                spec.pool_size = n;
            }
            let ds = build_dataset(&spec)?;
            let path = ds.save(&a.out)?;
            println!(
                "wrote {} ({} classes, {} images)",
                path.display(),
                ds.manifest.classes.len(),
                ds.manifest.images.len()
            );
            Ok(0)
        }
        Command::RefineText(a) => {
            let cfg = a.config.resolve()?;
            let mode = match cfg.dr_strategy {
                DrStrategy::EmbedCosine => DedupMode::EmbeddingCosine,
                DrStrategy::Tfidf => DedupMode::Tfidf,
                DrStrategy::None => {
                    return Err(Error::Config("refine-text needs dr_strategy embed_cosine or tfidf".into()))
                }
            };
            let texts = a.texts.as_ref().map(crate::archive::read_archive).transpose()?;
            let input = fs::read(&a.input).map_err(|e| Error::io(&a.input, e))?;
            let refined = parse_pools(&input)?
                .iter()
                .map(|p| refine_pool(p, texts.as_ref(), cfg.s_th, cfg.k, mode))
                .collect::<Result<Vec<_>>>()?;
            write_output(a.out.as_deref(), "refined.json", &pretty(&refined))?;
            Ok(0)
        }
        Command::CropSim(a) => {
            #[derive(Serialize)]
            struct QueueDump {
                seed: u64,
                index: usize,
                boxes: Vec<[f64; 4]>,
                fallback_count: usize,
                attempts_used: usize,
            }
            let cfg = a.config.resolve()?;
            let window = cfg.window()?;
            let mut dumps = Vec::new();
            for &seed in &cfg.seeds {
                for i in 0..a.images {
                    let mut rng = CropRng::derived(seed, i as u64);
                    let q = fill_view_queue(&mut rng, &window, cfg.eta, cfg.capacity, cfg.attempts())?;
                    dumps.push(QueueDump {
                        seed,
                        index: i,
                        boxes: q.boxes.iter().map(|b| b.to_array()).collect(),
                        fallback_count: q.fallback_count,
                        attempts_used: q.attempts_used,
                    });
                }
            }
            write_output(a.out.as_deref(), "queues.json", &pretty(&dumps))?;
            Ok(0)
        }
        Command::Classify(a) => {
            let cfg = a.config.resolve()?;
            let ds = Dataset::load(&a.manifest)?.validated()?;
            let out = run_experiment(&cfg, &ds, RunOptions { timing: a.timing, predictions: true })?;
            let mut lines = Vec::new();
            for p in &out.predictions {
                serde_json::to_writer(&mut lines, p).expect("serializable prediction");
                lines.push(b'\n');
            }
            write_output(Some(&a.out), "report.json", &pretty(&out.report))?;
            write_output(Some(&a.out), "predictions.jsonl", &lines)?;
            println!(
                "mean accuracy {:.4} (std {:.4}) over {} seed(s)",
                out.report.mean,
                out.report.std,
                out.report.seeds.len()
            );
            Ok(0)
        }
        Command::Sweep(a) => {
            let cfg = a.config.resolve()?;
            let axes = a.grid.iter().map(|g| parse_axis(g)).collect::<Result<Vec<_>>>()?;
            let ds = Dataset::load(&a.manifest)?.validated()?;
            let rows = sweep(&cfg, &axes, &ds)?;
            let mut csv = Vec::new();
            write_csv(&rows, &axes, &mut csv)?;
            write_output(a.out.as_deref(), "sweep.csv", &csv)?;
            Ok(0)
        }
        Command::Bench(a) => {
            let cfg = a.config.resolve()?;
            let ds = match &a.manifest {
                Some(p) => Dataset::load(p)?.validated()?,
                None => build_dataset(&FixtureSpec::redundancy())?,
            };
            let rt = ds.synthetic.as_ref().ok_or_else(|| Error::Data("bench needs a synthetic dataset".into()))?;
            let report = bench(&cfg, rt, a.repetitions, a.candidates, cfg.seeds[0])?;
            write_output(a.out.as_deref(), "bench.json", &pretty(&report))?;
            Ok(0)
        }
        Command::Validate(a) => {
            let ds = Dataset::load(&a.manifest)?;
            let diags = ds.diagnostics();
            if diags.is_empty() {
                println!(
                    "ok: {} classes, {} images, no diagnostics",
                    ds.manifest.classes.len(),
                    ds.manifest.images.len()
                );
                Ok(0)
            } else {
                for d in &diags {
                    println!("{d}");
                }
                eprintln!("{} diagnostic(s)", diags.len());
                Ok(1)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply_over_defaults() {
        let cli = Cli::try_parse_from([
            "bifta",
            "crop-sim",
            "--eta",
            "0.5",
            "--seeds",
            "1,2",
            "--mode",
            "wca",
            "--vr-strategy",
            "grid:3",
        ])
        .unwrap();
        let Command::CropSim(a) = cli.command else { panic!() };
        let c = a.config.resolve().unwrap();
        assert_eq!(c.eta, 0.5);
        assert_eq!(c.seeds, [1, 2]);
        assert_eq!(c.mode, Mode::Wca);
        assert_eq!(c.vr_strategy, VrStrategy::Grid(3));
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["bifta", "classify", "--bogus"]), 2);
        assert_eq!(run(["bifta", "crop-sim", "--mode", "nope"]), 2);
        assert_eq!(run(["bifta", "crop-sim", "--alpha", "0.9", "--beta", "0.5"]), 2);
    }
}
