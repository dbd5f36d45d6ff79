use std::path::PathBuf;

use clap::Args;
use streampoint_core::synth::read_sequence;

use crate::errors::AppError;
use crate::manifest::ManifestBuilder;

#[derive(Args)]
pub struct InferArgs {
    /// Checkpoint directory.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Sequence directory.
    #[arg(long)]
    pub seq: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Confidence threshold for the merged cloud.
    #[arg(long, default_value_t = 1.0)]
    pub conf_threshold: f64,
}

pub fn run(args: InferArgs) -> Result<(), AppError> {
    let model = super::load_model(&args.checkpoint)?;
    let sample = read_sequence(&args.seq)?;
    let inputs = super::sequence_inputs(&sample);
    let (preds, state) = model.run_sequence(&inputs)?;

    std::fs::create_dir_all(&args.out).map_err(|e| AppError::io(&args.out, e))?;
    for (i, pred) in preds.iter().enumerate() {
        super::write_prediction(&args.out.join(format!("frame_{i:03}")), pred)?;
    }
    super::write_poses(&args.out.join("poses.json"), &preds)?;
    super::write_cloud(&args.out.join("cloud.ply"), &preds, &sample, args.conf_threshold)?;

    println!(
        "{} frames processed ({} state updates); outputs in {}",
        preds.len(),
        state.step,
        args.out.display()
    );
    let mut manifest = ManifestBuilder::new("infer");
    manifest.config = serde_json::json!({ "conf_threshold": args.conf_threshold });
    manifest.input(&args.checkpoint);
    manifest.input(&args.seq);
    manifest.output(&args.out);
    manifest.write(&args.out)
}
