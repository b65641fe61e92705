use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kan_ausculta::config::{Preset, RunConfig};
use kan_ausculta::dataset::{ingest, DatasetIndex};
use kan_ausculta::error::{Error, Result};
use kan_ausculta::features::cache::cache_path;
use kan_ausculta::model::{Checkpoint, HybridModel, ModelConfig};
use kan_ausculta::optim::{finite_diff_check, FocalParams, GradCheckOptions};
use kan_ausculta::pipeline::{run_cv, AudioSource, FeatureSource, RunOutcome};
use kan_ausculta::report::{fmt_f64, splines_csv, write_atomic};
use kan_ausculta::synthetic::ClusterSpec;
use kan_ausculta::{CLASS_NAMES, NUM_CLASSES};

#[derive(Parser)]
#[command(name = "kan-ausculta", version, about = "Respiratory sound classification with a BiLSTM + KAN model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Directory of WAV recordings.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Delimited `patient_id diagnosis` table.
    #[arg(long)]
    diagnosis: Option<PathBuf>,
    /// Use a generated Gaussian-cluster dataset instead of audio.
    #[arg(long, conflicts_with_all = ["data", "diagnosis"])]
    synthetic: bool,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    folds: Option<usize>,
    /// Worker threads for feature extraction and folds (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Join recordings with diagnoses and write `index.json`.
    Ingest {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        diagnosis: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract and cache feature vectors.
    Extract {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        diagnosis: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Cross-validated training with one preset.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        preset: Option<String>,
    },
    /// Run all five ablation presets.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Dump the learned edge functions of a saved model as CSV.
    ExportSplines {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 101)]
        samples: usize,
    },
    /// Compare analytic and finite-difference gradients on random models.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        instances: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest { data, diagnosis, out } => {
            let index = ingest_to(&data, &diagnosis, &out)?;
            println!("{} recordings indexed", index.len());
            Ok(())
        }
        Command::Extract {
            data,
            diagnosis,
            out,
            config,
            jobs,
        } => {
            let cfg = load_config(config.as_deref())?;
            let index = ingest_to(&data, &diagnosis, &out)?;
            let cache = cache_path(&out.join("features.bin"));
            let source = with_pool(jobs, || AudioSource::build(index, cfg.features.clone(), Some(&cache)))??;
            println!(
                "{} x {} features cached at {} (layout {})",
                source.len(),
                source.dim(),
                cache.display(),
                source.fingerprint()
            );
            Ok(())
        }
        Command::Train { run, preset } => {
            let mut cfg = run_config(&run)?;
            if let Some(p) = preset {
                cfg.apply_preset(p.parse()?);
            }
            let source = build_source(&run, &cfg)?;
            let outcome = run_cv(&cfg, source.as_ref(), jobs(run.jobs))?;
            finish(&outcome, &run.out)
        }
        Command::Ablate { run } => {
            let base = run_config(&run)?;
            let source = build_source(&run, &base)?;
            let mut table = String::from("preset,macro_f1,accuracy,weighted_f1");
            for c in CLASS_NAMES {
                let _ = write!(table, ",f1_{}", c.to_ascii_lowercase());
            }
            table.push('\n');
            let mut first_err = None;
            for p in Preset::ALL {
                let mut cfg = base.clone();
                cfg.apply_preset(p);
                log::info!("running preset {p}");
                let outcome = run_cv(&cfg, source.as_ref(), jobs(run.jobs))?;
                let m = &outcome.report.pooled;
                let _ = write!(
                    table,
                    "{p},{},{},{}",
                    fmt_f64(m.macro_f1),
                    fmt_f64(m.accuracy),
                    fmt_f64(m.weighted_f1)
                );
                for c in &m.per_class {
                    let _ = write!(table, ",{}", fmt_f64(c.f1));
                }
                table.push('\n');
                if let Err(e) = finish(&outcome, &run.out.join(p.name())) {
                    first_err.get_or_insert(e);
                }
            }
            write_atomic(&run.out.join("ablation.csv"), table.as_bytes())?;
            print!("{table}");
            first_err.map_or(Ok(()), Err)
        }
        Command::ExportSplines { model, out, samples } => {
            let ck = Checkpoint::load(&model, None)?;
            let dump = ck.model.kan().export_splines(samples)?;
            std::fs::create_dir_all(&out)?;
            let path = out.join("splines.csv");
            write_atomic(&path, splines_csv(&dump).as_bytes())?;
            println!("{} curves written to {}", dump.curves.len(), path.display());
            Ok(())
        }
        Command::Gradcheck { seed, instances } => gradcheck(seed, instances),
    }
}

fn jobs(j: Option<usize>) -> usize {
    j.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn with_pool<T: Send>(j: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs(j))
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(pool.install(f))
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn run_config(run: &RunArgs) -> Result<RunConfig> {
    let mut cfg = load_config(run.config.as_deref())?;
    if let Some(s) = run.seed {
        cfg.seed = s;
    }
    if let Some(k) = run.folds {
        cfg.cv.folds = k;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn ingest_to(data: &Path, diagnosis: &Path, out: &Path) -> Result<DatasetIndex> {
    let summary = ingest(data, diagnosis)?;
    std::fs::create_dir_all(out)?;
    summary.index.save(&out.join("index.json"))?;
    for r in &summary.rejects {
        log::warn!("rejected {}: {}", r.item, r.reason);
    }
    for (name, n) in &summary.dropped {
        log::warn!("dropped class {name} ({n} recordings, below the minimum)");
    }
    for (name, n) in &summary.histogram {
        println!("{name:>15} {n}");
    }
    Ok(summary.index)
}

fn build_source(run: &RunArgs, cfg: &RunConfig) -> Result<Box<dyn FeatureSource>> {
    if run.data.synthetic {
        let spec = ClusterSpec {
            seed: cfg.seed,
            ..ClusterSpec::default()
        };
        return Ok(Box::new(spec.generate()));
    }
    let (Some(data), Some(diagnosis)) = (&run.data.data, &run.data.diagnosis) else {
        return Err(Error::InvalidArgument("--data and --diagnosis are required (or --synthetic)".into()));
    };
    let index = ingest_to(data, diagnosis, &run.out)?;
    let cache = cache_path(&run.out.join("features.bin"));
    let source = with_pool(run.jobs, || AudioSource::build(index, cfg.features.clone(), Some(&cache)))??;
    Ok(Box::new(source))
}

fn finish(outcome: &RunOutcome, out: &Path) -> Result<()> {
    let files = outcome.export(out)?;
    let r = &outcome.report;
    println!("preset {}: d_feat {}", r.config.preset, r.feature_dim);
    for f in &r.folds {
        println!(
            "  fold {}: macro F1 {:.4}  accuracy {:.4}",
            f.fold + 1,
            f.macro_f1,
            f.accuracy
        );
    }
    println!(
        "  fold mean macro F1 {:.4} (std {:.4}); pooled macro F1 {:.4}, accuracy {:.4}",
        r.fold_macro_f1.mean, r.fold_macro_f1.std, r.pooled.macro_f1, r.pooled.accuracy
    );
    println!("  {} files written to {}", files.len(), out.display());
    match outcome.errors.first() {
        // Report what ran, then surface the first fold failure's exit status.
        Some((fold, e)) => Err(match e {
            Error::TrainingAbort { param } => Error::TrainingAbort { param: param.clone() },
            other => Error::ContractViolation(format!("fold {fold} failed: {other}")),
        }),
        None => Ok(()),
    }
}

fn gradcheck(seed: u64, instances: usize) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let d = rng.gen_range(2..6);
        let cfg = ModelConfig {
            lstm_hidden: rng.gen_range(2..5),
            kan_hidden: rng.gen_range(2..5),
            ..ModelConfig::with_feature_dim(d)
        };
        let model = HybridModel::init(cfg, &mut rng)?;
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let target = rng.gen_range(0..NUM_CLASSES);
        let opts = GradCheckOptions {
            per_tensor: usize::MAX,
            training: i % 2 == 1,
            seed: rng.gen(),
            ..GradCheckOptions::default()
        };
        let rep = finite_diff_check(&model, &x, target, &FocalParams::default(), &opts)?;
        println!(
            "instance {i}: {} entries, max relative error {:.3e} ({}[{}])",
            rep.checked, rep.max_rel_error, rep.worst_tensor, rep.worst_index
        );
        worst = worst.max(rep.max_rel_error);
    }
    if worst < 1e-4 {
        println!("gradient check passed (worst {worst:.3e})");
        Ok(())
    } else {
        Err(Error::ContractViolation(format!("gradient check failed: worst relative error {worst:.3e}")))
    }
}
