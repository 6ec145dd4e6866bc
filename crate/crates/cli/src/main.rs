use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use conflict_heads::model::PositionScope;
use conflict_heads::pipeline::{io, run_pipeline, Artifacts, PipelineError, RunConfig, Stage, CONFIG_ENV};
use conflict_heads::synth::TypeMix;

/// Head-level analysis of premise-following hallucination on a miniature
/// multimodal transformer.
#[derive(Parser, Debug)]
#[command(name = "conflict-heads", version, about)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// TOML run configuration; built-in reference config when absent.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Override a setting, e.g. `--set train.steps=400` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic conflict dataset (unassigned).
    Gen {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n: Option<usize>,
        /// Object,attribute,relation proportions, e.g. `1,0,0`.
        #[arg(long)]
        mix: Option<TypeMix>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Assign disjoint split tags to a generated dataset.
    Split {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Explicit prototype sample ids, comma separated.
        #[arg(long, value_delimiter = ',')]
        proto_ids: Option<Vec<u64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the model on the training portion of a split dataset.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        curve: Option<PathBuf>,
        #[arg(long)]
        result: Option<PathBuf>,
    },
    /// Per-head importance over the prototype split.
    Patch {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Split dataset; its prototype samples are used.
        #[arg(long)]
        proto: Option<PathBuf>,
        /// `last` or `all`.
        #[arg(long)]
        scope: Option<PositionScope>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        result: Option<PathBuf>,
    },
    /// Pick the driving and resisting head groups from an importance map.
    Select {
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long)]
        k_plus: Option<usize>,
        #[arg(long)]
        k_minus: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        result: Option<PathBuf>,
    },
    /// Base, drive, resist, joint and random ablations on the test split.
    Ablate {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        groups: Option<PathBuf>,
        #[arg(long)]
        result: Option<PathBuf>,
    },
    /// Fit the resisting-head probe, choosing lambda on validation.
    ProbeTrain {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        groups: Option<PathBuf>,
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        result: Option<PathBuf>,
    },
    /// Select the probe threshold on validation.
    Threshold {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        probe: Option<PathBuf>,
        /// Defaults to overwriting `--probe`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        result: Option<PathBuf>,
    },
    /// Probe-gated ablation on the test split.
    Maci {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        probe: Option<PathBuf>,
        #[arg(long)]
        groups: Option<PathBuf>,
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Merge stage results and write report rows, plot data and a summary.
    Report {
        #[arg(long = "in", num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every stage in order.
    Pipeline {
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn load_config(g: &Global) -> conflict_heads::Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &g.overrides {
        cfg.set(o)?;
    }
    if g.workers.is_some() {
        cfg.workers = g.workers;
    }
    Ok(cfg)
}

fn or(flag: Option<PathBuf>, default: &Path) -> PathBuf {
    flag.unwrap_or_else(|| default.to_path_buf())
}

fn stage<T>(stage: Stage, r: conflict_heads::Result<T>) -> Result<T> {
    r.map_err(|cause| PipelineError::Stage { stage, cause }.into())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli.global).map_err(PipelineError::Config)?;
    // Flags that change hashed settings are applied before anything is stamped.
    match &cli.command {
        Command::Gen { seed, n, mix, .. } => {
            cfg.data.seed = seed.unwrap_or(cfg.data.seed);
            cfg.data.n = n.unwrap_or(cfg.data.n);
            cfg.data.mix = mix.unwrap_or(cfg.data.mix);
        }
        Command::Split { seed, proto_ids, .. } => {
            cfg.split.seed = seed.unwrap_or(cfg.split.seed);
            if proto_ids.is_some() {
                cfg.split.proto_ids = proto_ids.clone();
            }
        }
        Command::Patch { scope: Some(s), .. } => cfg.analysis.scope = *s,
        Command::Select { k_plus, k_minus, .. } => {
            cfg.analysis.k_plus = k_plus.unwrap_or(cfg.analysis.k_plus);
            cfg.analysis.k_minus = k_minus.unwrap_or(cfg.analysis.k_minus);
        }
        Command::Pipeline { out_dir: Some(d) } => cfg.paths.out_dir = d.clone(),
        _ => {}
    }
    cfg.validate().map_err(PipelineError::Config)?;
    if let Command::Pipeline { .. } = cli.command {
        let report = run_pipeline(&cfg)?;
        let a = Artifacts::new(&cfg);
        println!("config {}: report written to {}", report.config_hash, a.reports.display());
        return Ok(());
    }
    if let Some(n) = cfg.workers {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring worker threads")?;
    }

    let a = Artifacts::new(&cfg);
    match cli.command {
        Command::Gen { out, .. } => {
            let out = out.unwrap_or_else(|| a.out_dir.join("dataset.unassigned.jsonl"));
            let file = stage(Stage::Gen, io::gen(&cfg, &out))?;
            println!("{} samples -> {}", file.records.len(), out.display());
        }
        Command::Split { input, out, .. } => {
            let out = or(out, &a.dataset);
            let file = stage(Stage::Split, io::split(&cfg, &input, &out))?;
            let s = stage(Stage::Split, file.splits())?;
            println!(
                "train {} proto {} train-probe {} validation {} test {} -> {}",
                s.train.len(),
                s.proto.len(),
                s.train_probe.len(),
                s.validation.len(),
                s.test.len(),
                out.display()
            );
        }
        Command::Train { data, out, curve, result } => {
            let out = or(out, &a.checkpoint);
            let o = stage(
                Stage::Train,
                io::train(
                    &cfg,
                    &or(data, &a.dataset),
                    &out,
                    &or(curve, &a.curve),
                    &or(result, &a.result(Stage::Train)),
                ),
            )?;
            let last = o.curve.iter().rev().find(|p| p.hall_rate.is_some());
            if let Some(p) = last {
                println!(
                    "validation clean acc {:.4} hall rate {:.4}",
                    p.clean_acc.unwrap_or_default(),
                    p.hall_rate.unwrap_or_default()
                );
            }
            println!("checkpoint -> {}", out.display());
        }
        Command::Patch { ckpt, proto, out, result, .. } => {
            let out = or(out, &a.importance);
            let imp = stage(
                Stage::Patch,
                io::patch(
                    &cfg,
                    &or(ckpt, &a.checkpoint),
                    &or(proto, &a.dataset),
                    &out,
                    &or(result, &a.result(Stage::Patch)),
                ),
            )?;
            println!("importance over {} prototype samples -> {}", imp.n_samples, out.display());
        }
        Command::Select { map, out, result, .. } => {
            let out = or(out, &a.groups);
            let g = stage(
                Stage::Select,
                io::select(&cfg, &or(map, &a.importance), &out, &or(result, &a.result(Stage::Select))),
            )?;
            println!("driving {:?} resisting {:?} -> {}", labels(&g.driving), labels(&g.resisting), out.display());
        }
        Command::Ablate { ckpt, data, groups, result } => {
            let result = or(result, &a.result(Stage::Ablate));
            let r = stage(
                Stage::Ablate,
                io::ablate(&cfg, &or(ckpt, &a.checkpoint), &or(data, &a.dataset), &or(groups, &a.groups), &result),
            )?;
            for c in &r.conditions {
                println!("{:<10} hall {:.4} clean {:.4}", c.label, c.hall_rate, c.clean_acc);
            }
            println!("results -> {}", result.display());
        }
        Command::ProbeTrain { ckpt, data, groups, map, out, result } => {
            let out = or(out, &a.probe);
            let p = stage(
                Stage::ProbeTrain,
                io::probe_train(
                    &cfg,
                    &or(ckpt, &a.checkpoint),
                    &or(data, &a.dataset),
                    &or(groups, &a.groups),
                    &or(map, &a.importance),
                    &out,
                    &or(result, &a.result(Stage::ProbeTrain)),
                ),
            )?;
            println!("lambda {} -> {}", p.lambda, out.display());
        }
        Command::Threshold { ckpt, data, probe, out, result } => {
            let probe = or(probe, &a.probe);
            let out = out.unwrap_or_else(|| probe.clone());
            let p = stage(
                Stage::Threshold,
                io::threshold(
                    &cfg,
                    &or(ckpt, &a.checkpoint),
                    &or(data, &a.dataset),
                    &probe,
                    &out,
                    &or(result, &a.result(Stage::Threshold)),
                ),
            )?;
            println!("tau {:?} -> {}", p.tau.unwrap_or_default(), out.display());
        }
        Command::Maci { ckpt, probe, groups, input, report } => {
            let report = or(report, &a.result(Stage::Maci));
            let r = stage(
                Stage::Maci,
                io::maci(
                    &cfg,
                    &or(ckpt, &a.checkpoint),
                    &or(probe, &a.probe),
                    &or(groups, &a.groups),
                    &or(input, &a.dataset),
                    &report,
                ),
            )?;
            if let Some(m) = r.maci {
                println!(
                    "hall {:.4} clean {:.4} fired {:.4}/{:.4}",
                    m.hall_rate, m.clean_acc, m.fire_rate_conflict, m.fire_rate_clean
                );
            }
            println!("results -> {}", report.display());
        }
        Command::Report { inputs, out } => {
            let inputs =
                if inputs.is_empty() { a.result_files().into_iter().filter(|p| p.exists()).collect() } else { inputs };
            let out = or(out, &a.reports);
            stage(Stage::Report, io::report(&inputs, &out))?;
            println!("report -> {}", out.display());
        }
        Command::Pipeline { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn labels(heads: &[conflict_heads::model::HeadId]) -> Vec<String> {
    heads.iter().map(|h| h.to_string()).collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<PipelineError>().map_or(1, PipelineError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
