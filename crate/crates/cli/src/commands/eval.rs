use std::path::PathBuf;

use clap::Args;
use streampoint_core::eval::{evaluate_sequences, DepthAlignment, EvalOptions, Protocol};

use crate::errors::AppError;
use crate::manifest::ManifestBuilder;

#[derive(Args)]
pub struct EvalArgs {
    /// Checkpoint directory (optional with --bypass-gt).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Dataset directory of evaluation sequences.
    #[arg(long)]
    pub data: PathBuf,
    /// depth | pose | recon.
    #[arg(long)]
    pub protocol: String,
    /// none | per_frame_median | per_seq_scale | per_seq_scale_shift.
    #[arg(long, default_value = "per_seq_scale")]
    pub alignment: String,
    /// Report file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Score the ground truth against itself (harness sanity).
    #[arg(long, default_value_t = false)]
    pub bypass_gt: bool,
    /// Use revisit-mode predictions instead of the online pass.
    #[arg(long, default_value_t = false)]
    pub revisit: bool,
}

pub fn run(args: EvalArgs) -> Result<(), AppError> {
    let protocol = match args.protocol.as_str() {
        "depth" => Protocol::Depth,
        "pose" => Protocol::Pose,
        "recon" => Protocol::Recon,
        other => {
            return Err(AppError::Usage(format!(
                "--protocol must be depth|pose|recon, got {other:?}"
            )))
        }
    };
    let alignment = match args.alignment.as_str() {
        "none" => DepthAlignment::None,
        "per_frame_median" => DepthAlignment::PerFrameMedian,
        "per_seq_scale" => DepthAlignment::PerSeqScale,
        "per_seq_scale_shift" => DepthAlignment::PerSeqScaleShift,
        other => {
            return Err(AppError::Usage(format!(
                "--alignment must be none|per_frame_median|per_seq_scale|per_seq_scale_shift, got {other:?}"
            )))
        }
    };
    let model = match (&args.checkpoint, args.bypass_gt) {
        (Some(ck), _) => Some(super::load_model(ck)?),
        (None, true) => None,
        (None, false) => {
            return Err(AppError::Usage(
                "--checkpoint is required unless --bypass-gt is set".to_string(),
            ))
        }
    };
    let seqs = super::load_sequences(&args.data)?;
    let opts = EvalOptions {
        alignment,
        bypass_gt: args.bypass_gt,
        revisit: args.revisit,
        k_normals: 8,
    };
    let report = evaluate_sequences(model.as_ref(), &seqs, protocol, &opts)?;
    let data = serde_json::to_vec_pretty(&report)
        .map_err(|e| AppError::Data(format!("report: {e}")))?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| AppError::io(parent, e))?;
        }
    }
    std::fs::write(&args.out, data).map_err(|e| AppError::io(&args.out, e))?;

    for (key, agg) in &report.aggregate {
        println!("{key}: mean {:.6}, median {:.6}", agg.mean, agg.median);
    }
    let errored = report
        .per_sequence
        .iter()
        .filter(|s| s.error.is_some())
        .count();
    if errored > 0 {
        println!("{errored} sequence(s) reported errors; see {}", args.out.display());
    }

    let mut manifest = ManifestBuilder::new("eval");
    manifest.config = serde_json::json!({
        "protocol": args.protocol,
        "alignment": args.alignment,
        "bypass_gt": args.bypass_gt,
        "revisit": args.revisit,
    });
    if let Some(ck) = &args.checkpoint {
        manifest.input(ck);
    }
    manifest.input(&args.data);
    manifest.output(&args.out);
    let manifest_dir = args
        .out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| PathBuf::from("."));
    manifest.write(&manifest_dir)
}
