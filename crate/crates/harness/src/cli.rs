//! The `pulsebench` command line.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use pulsebench_core::mstmap::{build_bvpmap_for, build_mstmap, stack_square, window_samples, write_map, MapFile};
use pulsebench_core::rppg::Method;
use pulsebench_core::synth::{gen_benchmark, read_benchmark, write_benchmark, Benchmark};
use pulsebench_model::{checkpoint, Model};

use crate::ablation::{run_ablation, Suite};
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::experiment::{eval_checkpoint, load_benchmark, run_baseline, run_supervised, RunSpec};
use crate::report::{write_metrics_csv, RunReport};
use crate::selfsup::{linear_probe, pretrain, transfer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    /// Published training settings and the default model profile.
    Full,
    /// Small benchmark and model for a single CPU.
    Desk,
}

#[derive(Debug, Parser)]
#[command(name = "pulsebench", version, about = "Remote heart-rate estimation from spatial-temporal maps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment configuration (TOML, or JSON by extension).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Built-in profile used when no configuration file is given.
    #[arg(long, global = true, value_enum, default_value_t = Profile::Full)]
    pub profile: Profile,
    /// Overrides the training, model and (for `synth`) generator seeds.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Benchmark directory written by `synth`.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    #[arg(long, global = true, default_value = "pulsebench-out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic benchmark.
    Synth,
    /// Write stacked MSTmaps and BVPmaps for every non-overlapping window.
    Preprocess,
    /// Score the traditional methods.
    Baseline,
    /// Supervised training over subject-exclusive folds.
    Train,
    /// Self-supervised pre-training.
    Pretrain,
    /// Linear probe of a pre-trained checkpoint.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Fine-tune a pre-trained checkpoint.
    Transfer {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Score a checkpoint on every subject.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run an ablation suite.
    Ablate {
        #[arg(long, value_enum)]
        suite: Suite,
    },
}

/// Configuration after applying the file or profile and the overrides.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match (&cli.config, cli.profile) {
        (Some(p), _) => ExperimentConfig::load(p)?,
        (None, Profile::Full) => ExperimentConfig::default(),
        (None, Profile::Desk) => ExperimentConfig::desk(),
    };
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
        cfg.model.seed = s;
        if matches!(cli.command, Command::Synth) {
            cfg.benchmark.seed = s;
        }
    }
    if let Some(d) = &cli.data {
        cfg.data_dir = Some(d.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Run id of the pre-training report next to `ckpt`, or a digest of the
/// checkpoint bytes when there is none.
fn checkpoint_provenance(ckpt: &Path) -> Result<String> {
    let sibling = ckpt.with_file_name("report.json");
    if let Ok(bytes) = std::fs::read(&sibling) {
        if let Ok(r) = serde_json::from_slice::<RunReport>(&bytes) {
            if r.kind == "pretrain" {
                return Ok(r.run_id);
            }
        }
    }
    let bytes = std::fs::read(ckpt)?;
    Ok(format!("checkpoint:{}", &hex::encode(Sha256::digest(&bytes))[..16]))
}

fn pretrain_benchmark(cfg: &ExperimentConfig) -> Result<Benchmark> {
    match &cfg.data_dir {
        Some(d) => Ok(read_benchmark(d)?),
        None => Ok(gen_benchmark(&cfg.pretrain_benchmark())?),
    }
}

fn preprocess(b: &Benchmark, cfg: &ExperimentConfig, out: &Path) -> Result<usize> {
    let dir = out.join("maps");
    std::fs::create_dir_all(&dir)?;
    let mut index = csv::Writer::from_path(out.join("maps.csv"))?;
    index.write_record(["subject", "start", "mst", "bvp", "hr_bpm"])?;
    let mut n = 0;
    for rec in &b.subjects {
        let t = cfg.train.window;
        let fold = cfg.data.rows_mode.fold(rec.traces.n_channels());
        let wins = window_samples(&rec.traces, t, t)?;
        for (win, &start) in wins.windows.iter().zip(&wins.starts) {
            let id = &rec.labels.subject_id;
            let mst = build_mstmap(win, cfg.data.band)?;
            let bvp = build_bvpmap_for(&rec.labels.bvp_window(start, t)?, &mst, cfg.data.band)?;
            let mst_name = format!("{id}_{start}.mst.map");
            let bvp_name = format!("{id}_{start}.bvp.map");
            write_map(&dir.join(&mst_name), &MapFile::Stacked(stack_square(&mst, cfg.data.chunks, fold)?))?;
            write_map(&dir.join(&bvp_name), &MapFile::Stacked(stack_square(&bvp, cfg.data.chunks, fold)?))?;
            let hr = rec.labels.window_hr(start, t).map_or(String::new(), |h| h.to_string());
            index.write_record([id.clone(), start.to_string(), mst_name, bvp_name, hr])?;
            n += 1;
        }
    }
    index.flush()?;
    Ok(n)
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    let out = cli.out.as_path();
    std::fs::create_dir_all(out)?;
    match &cli.command {
        Command::Synth => {
            let b = gen_benchmark(&cfg.benchmark)?;
            write_benchmark(out, &b)?;
            println!("wrote {} subjects to {}", b.subjects.len(), out.display());
        }
        Command::Preprocess => {
            let n = preprocess(&load_benchmark(&cfg)?, &cfg, out)?;
            println!("wrote {n} map pairs to {}", out.join("maps").display());
        }
        Command::Baseline => {
            let r = run_baseline(&load_benchmark(&cfg)?, cfg.train.window, &Method::ALL)?;
            std::fs::write(out.join("baseline.json"), serde_json::to_vec_pretty(&r)?)?;
            let rows: Vec<_> = r.rows.iter().map(|x| (x.method.to_string(), "all".to_string(), x.metrics)).collect();
            write_metrics_csv(&out.join("baseline.csv"), &rows)?;
            for x in &r.rows {
                println!("{:<6} MAE {:.2} RMSE {:.2}", x.method.to_string(), x.metrics.mae, x.metrics.rmse);
            }
        }
        Command::Train => {
            let b = load_benchmark(&cfg)?;
            let r = run_supervised(&b, &cfg, RunSpec::scratch(&cfg), Some(out))?;
            finish(&r, out)?;
        }
        Command::Pretrain => {
            let (_, r) = pretrain(&pretrain_benchmark(&cfg)?, &cfg, Some(out))?;
            finish(&r, out)?;
        }
        Command::Probe { checkpoint: ckpt } | Command::Transfer { checkpoint: ckpt } | Command::Eval { checkpoint: ckpt } => {
            let model: Model = checkpoint::load(ckpt)?;
            let prov = checkpoint_provenance(ckpt)?;
            let b = load_benchmark(&cfg)?;
            let r = match &cli.command {
                Command::Probe { .. } => linear_probe(&b, &cfg, &model, &prov, Some(out))?,
                Command::Transfer { .. } => transfer(&b, &cfg, &model, &prov, Some(out))?,
                _ => eval_checkpoint(&b, &cfg, &model, vec![prov])?,
            };
            finish(&r, out)?;
        }
        Command::Ablate { suite } => {
            let b = load_benchmark(&cfg)?;
            let pb = gen_benchmark(&cfg.pretrain_benchmark())?;
            let t = run_ablation(&b, &pb, &cfg, *suite)?;
            t.write(out)?;
            for r in &t.rows {
                match r.test {
                    Some(m) => println!("{:<14} MAE {:.2} RMSE {:.2}", r.name, m.mae, m.rmse),
                    None => println!("{:<14} no test metrics", r.name),
                }
            }
        }
    }
    Ok(())
}

fn finish(r: &RunReport, out: &Path) -> Result<()> {
    r.write(out)?;
    match r.pooled {
        Some(m) => println!("{} {}: MAE {:.2} RMSE {:.2} (n = {})", r.kind, r.run_id, m.mae, m.rmse, m.n),
        None => println!("{} {}: done", r.kind, r.run_id),
    }
    Ok(())
}
