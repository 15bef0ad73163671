use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use tmaxer::eval::{
    cosine_similarity_matrix, infer_videos, mean_adjacent_similarity, mean_ap, run_ablation, run_kernel_sweep,
    ResultTable,
};
use tmaxer::io::{
    load_dataset, load_feature_files, parse_annotations, read_checkpoint, read_feature_file, read_predictions,
    write_annotations, write_checkpoint, write_dataset, write_predictions, Checkpoint, PipelineConfig,
};
use tmaxer::model::{count_params, init_params, mac_breakdown, ModelConfig, TcmVariant};
use tmaxer::trainer::{generate_synthetic_dataset, train};
use tmaxer::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "tmaxer",
    version,
    about = "Temporal action localization with a max-pooling feature pyramid"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Seed overriding the config's data and training seeds.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML pipeline config; missing keys take defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output file or directory (meaning depends on the command).
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic feature files and annotations.
    Synth,
    /// Train on a feature directory and write a checkpoint plus loss log.
    Train {
        #[arg(long, value_name = "DIR")]
        features: PathBuf,
        #[arg(long, value_name = "PATH")]
        annotations: PathBuf,
    },
    /// Predict segments for a feature file or directory.
    Infer {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "PATH")]
        features: PathBuf,
    },
    /// Score predictions against annotations.
    Eval {
        #[arg(long, value_name = "PATH")]
        predictions: PathBuf,
        #[arg(long, value_name = "PATH")]
        annotations: PathBuf,
        /// Comma-separated tIoU thresholds.
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
    },
    /// Compare TCM variants on the synthetic benchmark.
    Ablate {
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<TcmVariant>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Compare max-pooling kernel sizes on the synthetic benchmark.
    Sweep {
        #[arg(long, value_delimiter = ',')]
        kernels: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Dump the clip cosine-similarity matrix of a feature file.
    Diag {
        #[arg(long, value_name = "PATH")]
        features: PathBuf,
    },
    /// Print parameter and MAC counts per TCM variant.
    Count {
        #[arg(long)]
        variant: Option<TcmVariant>,
        /// Input length for MAC counting.
        #[arg(long, default_value_t = 2304)]
        length: usize,
    },
}

fn out_or(common: &Common, default: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let cfg = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    }
    .with_seed(common.seed);
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    let common = &cli.common;
    match cli.command {
        Command::Synth => synth(&cfg, &out_or(common, "synth")),
        Command::Train { features, annotations } => train_cmd(&cfg, &features, &annotations, &out_or(common, "run")),
        Command::Infer { checkpoint, features } => {
            infer_cmd(&cfg, &checkpoint, &features, &out_or(common, "predictions.json"))
        }
        Command::Eval {
            predictions,
            annotations,
            thresholds,
        } => eval_cmd(&cfg, &predictions, &annotations, thresholds, common.out.as_deref()),
        Command::Ablate { variants, seeds } => {
            let variants = variants.unwrap_or_else(|| cfg.benchmark.variants.clone());
            let seeds = seeds.unwrap_or_else(|| cfg.benchmark.seeds.clone());
            let table = run_ablation(&cfg.experiment_setup(), &cfg.model, &variants, &seeds)?;
            emit_table(&table, &out_or(common, "ablation"))
        }
        Command::Sweep { kernels, seeds } => {
            let kernels = kernels.unwrap_or_else(|| cfg.benchmark.kernels.clone());
            let seeds = seeds.unwrap_or_else(|| cfg.benchmark.seeds.clone());
            let table = run_kernel_sweep(&cfg.experiment_setup(), &cfg.model, &kernels, &seeds)?;
            emit_table(&table, &out_or(common, "sweep"))
        }
        Command::Diag { features } => diag(&features, &out_or(common, "similarity.csv")),
        Command::Count { variant, length } => count(&cfg.model, variant, length, common.out.as_deref()),
    }
}

fn synth(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let videos = generate_synthetic_dataset(&cfg.data)?;
    let classes = (0..cfg.data.num_classes).map(|c| format!("class_{c}")).collect();
    let set = write_dataset(&out.join("features"), &videos, classes)?;
    write_annotations(out.join("annotations.json"), &set)?;
    println!(
        "wrote {} videos ({} clips x {} channels) to {}",
        videos.len(),
        cfg.data.length,
        cfg.data.input_dim,
        out.display()
    );
    Ok(())
}

fn train_cmd(cfg: &PipelineConfig, features: &Path, annotations: &Path, out: &Path) -> Result<()> {
    let set = parse_annotations(annotations)?;
    let videos = load_dataset(features, &set)?;
    let first = videos
        .first()
        .ok_or_else(|| Error::invalid(format!("{} lists no videos", annotations.display())))?;
    let model = ModelConfig {
        input_dim: first.features.channels(),
        num_classes: set.classes.len(),
        ..cfg.model.clone()
    };
    let outcome = train(&videos, &model, &cfg.train, &cfg.assign, &cfg.loss)?;
    create_dir(out)?;
    write_checkpoint(
        out.join("model.ckpt"),
        &Checkpoint {
            config: model,
            params: outcome.ema,
        },
    )?;
    let mut log = String::from("step,loss\n");
    for (i, l) in outcome.losses.iter().enumerate() {
        let _ = writeln!(log, "{},{l}", i + 1);
    }
    write_text(&out.join("losses.csv"), &log)?;
    write_text(&out.join("config.toml"), &cfg.to_toml_string())?;
    println!(
        "trained {} steps on {} videos, final loss {:.6}; wrote {}",
        outcome.losses.len(),
        videos.len(),
        outcome.losses.last().copied().unwrap_or(f64::NAN),
        out.join("model.ckpt").display()
    );
    Ok(())
}

fn infer_cmd(cfg: &PipelineConfig, checkpoint: &Path, features: &Path, out: &Path) -> Result<()> {
    let ckpt = read_checkpoint(checkpoint)?;
    let videos = load_feature_files(features)?;
    if videos.is_empty() {
        return Err(Error::invalid(format!("no .tmxf files under {}", features.display())));
    }
    let segments = infer_videos(
        videos.iter().map(|(id, x)| (id.as_str(), x)).collect::<Vec<_>>(),
        &ckpt.params,
        &ckpt.config,
        &cfg.infer(),
    )?;
    write_predictions(out, &segments)?;
    println!(
        "wrote {} segments for {} videos to {}",
        segments.len(),
        videos.len(),
        out.display()
    );
    Ok(())
}

fn eval_cmd(
    cfg: &PipelineConfig,
    predictions: &Path,
    annotations: &Path,
    thresholds: Option<Vec<f64>>,
    out: Option<&Path>,
) -> Result<()> {
    let thresholds = thresholds.unwrap_or_else(|| cfg.eval.thresholds.clone());
    if thresholds.is_empty() || thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::invalid("thresholds must be a non-empty list in [0, 1]"));
    }
    let preds = read_predictions(predictions)?;
    let set = parse_annotations(annotations)?;
    let report = mean_ap(&preds, &set.ground_truth(), &thresholds);
    for (t, m) in report.thresholds.iter().zip(&report.map_per_threshold) {
        println!("mAP@{t:.2}: {m:.4}");
    }
    println!("average mAP: {:.4}", report.average_map);
    if let Some(out) = out {
        let mut text = serde_json::to_string_pretty(&report).expect("serializable report");
        text.push('\n');
        write_text(out, &text)?;
    }
    Ok(())
}

fn emit_table(table: &ResultTable, out: &Path) -> Result<()> {
    create_dir(out)?;
    let text = table.to_text();
    write_text(&out.join("table.csv"), &table.to_csv())?;
    write_text(&out.join("table.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn diag(features: &Path, out: &Path) -> Result<()> {
    let x = read_feature_file(features)?;
    let s = cosine_similarity_matrix(&x);
    let mut text = String::new();
    for row in s.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        let _ = writeln!(text, "{}", cells.join(","));
    }
    write_text(out, &text)?;
    println!(
        "{} clips, mean adjacent cosine similarity {:.4}; wrote {}",
        x.len(),
        mean_adjacent_similarity(&x),
        out.display()
    );
    Ok(())
}

fn count(model: &ModelConfig, variant: Option<TcmVariant>, length: usize, out: Option<&Path>) -> Result<()> {
    let variants = match variant {
        Some(v) => vec![v],
        None => TcmVariant::ALL.to_vec(),
    };
    let mut csv = String::from("variant,params,macs,projection_macs,tcm_macs,head_macs\n");
    println!("{:<10} {:>12} {:>16}", "variant", "params", "MACs");
    for v in variants {
        let cfg = ModelConfig {
            tcm_variant: v,
            ..model.clone()
        };
        let params = count_params(&init_params(&cfg, 0));
        let macs = mac_breakdown(&cfg, length)?;
        println!("{:<10} {:>12} {:>16}", v.name(), params, macs.total());
        let _ = writeln!(
            csv,
            "{},{params},{},{},{},{}",
            v.name(),
            macs.total(),
            macs.projection,
            macs.tcm,
            macs.heads
        );
    }
    if let Some(out) = out {
        write_text(out, &csv)?;
    }
    Ok(())
}

/// Source chain of an error on one line.
pub fn one_line(err: &Error) -> String {
    let mut msg = err.to_string();
    let mut source = std::error::Error::source(err);
    while let Some(s) = source {
        let s_text = s.to_string();
        if !msg.contains(&s_text) {
            msg.push_str(": ");
            msg.push_str(&s_text);
        }
        source = s.source();
    }
    msg.replace('\n', " ")
}
