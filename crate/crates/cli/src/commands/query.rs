use std::path::PathBuf;

use clap::Args;
use serde::Deserialize;
use streampoint_core::geometry::{camera_to_raymap, CameraIntrinsics, Pose};
use streampoint_core::model::ModelInput;
use streampoint_core::ply::PlyFrame;
use streampoint_core::synth::read_sequence;

use crate::errors::AppError;
use crate::manifest::ManifestBuilder;

#[derive(Args)]
pub struct QueryArgs {
    /// Checkpoint directory.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Sequence directory whose images build the state.
    #[arg(long)]
    pub seq: PathBuf,
    /// Query camera: `fx,fy,cx,cy,qw,qx,qy,qz,tx,ty,tz`. The pose is
    /// relative to the first image of the sequence (the world frame).
    #[arg(long, conflicts_with = "camera_json")]
    pub camera: Option<String>,
    /// JSON file `{ "fx":..,"fy":..,"cx":..,"cy":.., "pose":[qw,qx,qy,qz,tx,ty,tz] }`.
    #[arg(long)]
    pub camera_json: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Confidence threshold for the query cloud.
    #[arg(long, default_value_t = 1.0)]
    pub conf_threshold: f64,
}

#[derive(Deserialize)]
struct CameraSpec {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    pose: [f64; 7],
}

fn parse_camera(args: &QueryArgs, width: usize, height: usize) -> Result<(CameraIntrinsics, Pose), AppError> {
    let spec: CameraSpec = if let Some(text) = &args.camera {
        let parts: Vec<f64> = text
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| AppError::Usage(format!("--camera: cannot parse {text:?}")))?;
        if parts.len() != 11 {
            return Err(AppError::Usage(format!(
                "--camera needs 11 numbers (fx,fy,cx,cy,qw,qx,qy,qz,tx,ty,tz), got {}",
                parts.len()
            )));
        }
        CameraSpec {
            fx: parts[0],
            fy: parts[1],
            cx: parts[2],
            cy: parts[3],
            pose: [parts[4], parts[5], parts[6], parts[7], parts[8], parts[9], parts[10]],
        }
    } else if let Some(path) = &args.camera_json {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| AppError::Data(format!("{}: {e}", path.display())))?
    } else {
        return Err(AppError::Usage(
            "provide --camera or --camera-json".to_string(),
        ));
    };
    let k = CameraIntrinsics::new(spec.fx, spec.fy, spec.cx, spec.cy, width, height)
        .map_err(|e| AppError::Data(e.to_string()))?;
    let pose = Pose::new(
        [spec.pose[0], spec.pose[1], spec.pose[2], spec.pose[3]],
        [spec.pose[4], spec.pose[5], spec.pose[6]],
    )
    .map_err(|e| AppError::Data(e.to_string()))?;
    Ok((k, pose))
}

pub fn run(args: QueryArgs) -> Result<(), AppError> {
    let model = super::load_model(&args.checkpoint)?;
    let (k, pose) = parse_camera(&args, model.cfg.width, model.cfg.height)?;
    let sample = read_sequence(&args.seq)?;
    let inputs = super::sequence_inputs(&sample);
    let (_, state) = model.run_sequence(&inputs)?;

    let raymap = camera_to_raymap(&k, &pose);
    let (pred, after) = model.step(&state, &ModelInput::Raymap(raymap))?;
    debug_assert_eq!(after.tokens, state.tokens);

    std::fs::create_dir_all(&args.out).map_err(|e| AppError::io(&args.out, e))?;
    super::write_prediction(&args.out.join("query"), &pred)?;
    let color = pred.color.clone().expect("raymap queries predict color");
    let frames = [PlyFrame {
        points: &pred.x_world,
        colors: &color,
        confidence: &pred.c_world,
    }];
    streampoint_core::ply::write_ply(&args.out.join("query.ply"), &frames, args.conf_threshold)?;

    println!(
        "queried unseen view after {} observations; outputs in {}",
        state.step,
        args.out.display()
    );
    let mut manifest = ManifestBuilder::new("query");
    manifest.config = serde_json::json!({
        "fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy,
        "pose": pose,
        "conf_threshold": args.conf_threshold,
    });
    manifest.input(&args.checkpoint);
    manifest.input(&args.seq);
    manifest.output(&args.out);
    manifest.write(&args.out)
}
