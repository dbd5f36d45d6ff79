use std::path::PathBuf;

use clap::Args;
use streampoint_core::train::{preset_overfit, preset_smoke, preset_tiny, train};

use crate::config;
use crate::errors::AppError;
use crate::manifest::ManifestBuilder;

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset directory produced by `gen`.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoints and the training log.
    #[arg(long)]
    pub out: PathBuf,
    /// Base configuration: overfit | smoke | tiny.
    #[arg(long, default_value = "smoke")]
    pub preset: String,
    /// Base seed (rebases each stage's seed).
    #[arg(long)]
    pub seed: Option<u64>,
    /// key=value config file; overrides the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Inline overrides applied after the config file (repeatable).
    #[arg(long = "set")]
    pub sets: Vec<String>,
    /// Resume from a checkpoint directory.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

pub fn run(args: TrainArgs) -> Result<(), AppError> {
    let seed = args.seed.unwrap_or(0);
    let mut run_cfg = match args.preset.as_str() {
        "overfit" => preset_overfit(seed),
        "smoke" => preset_smoke(seed),
        "tiny" => preset_tiny(seed),
        other => {
            return Err(AppError::Usage(format!(
                "--preset must be overfit|smoke|tiny, got {other:?}"
            )))
        }
    };
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        config::apply(&mut run_cfg, &config::parse_kv(&text)?)?;
    }
    if !args.sets.is_empty() {
        let joined = args.sets.join("\n");
        config::apply(&mut run_cfg, &config::parse_kv(&joined)?)?;
    }
    if let Some(s) = args.seed {
        // Explicit seed wins over file values.
        for (i, st) in run_cfg.stages.iter_mut().enumerate() {
            st.seed = s + i as u64;
        }
    }

    let mut manifest = ManifestBuilder::new("train");
    manifest.config = serde_json::to_value(&run_cfg).unwrap_or(serde_json::Value::Null);
    manifest.seed = Some(run_cfg.stages[0].seed);
    manifest.input(&args.data);

    let outcome = train(&run_cfg, &args.data, &args.out, args.resume.as_deref())?;
    if let Some(last) = outcome.records.last() {
        println!(
            "finished at step {} (stage {}), loss {:.4}",
            last.step, last.stage, last.loss_total
        );
    }
    println!("final checkpoint: {}", outcome.final_checkpoint.display());
    manifest.output(&outcome.final_checkpoint);
    manifest.write(&args.out)
}
