use std::path::PathBuf;

use clap::Args;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use streampoint_core::synth::{
    drop_depth_supervision, generate_scene, sample_sequence, write_sequence, SequenceMode,
};

use crate::errors::AppError;
use crate::manifest::ManifestBuilder;

#[derive(Args)]
pub struct GenArgs {
    /// Seed range `A..B` (end exclusive) or a single seed.
    #[arg(long)]
    pub seeds: String,
    /// Output dataset directory (one subdirectory per sequence).
    #[arg(long)]
    pub out: PathBuf,
    /// Views per sequence: `N` or `A..B`.
    #[arg(long, default_value = "4..9")]
    pub views: String,
    /// Square image resolution in pixels.
    #[arg(long, default_value_t = 32)]
    pub res: usize,
    /// Force all sequences to video (`video`), collection where the scene
    /// allows (`collection`), or mix per seed (`auto`).
    #[arg(long, default_value = "auto")]
    pub mode: String,
    /// Remove dynamic primitives from every scene.
    #[arg(long, default_value_t = false)]
    pub static_scenes: bool,
    /// Fraction of multi-view sequences stripped to camera-only supervision.
    #[arg(long, default_value_t = 0.1)]
    pub camera_only_frac: f64,
    /// Fraction of sequences emitted as single views.
    #[arg(long, default_value_t = 0.1)]
    pub single_view_frac: f64,
}

pub fn run(args: GenArgs) -> Result<(), AppError> {
    let seeds = super::parse_range(&args.seeds)?;
    let views = super::parse_range(&args.views)?;
    let mut manifest = ManifestBuilder::new("gen");
    manifest.config = serde_json::json!({
        "seeds": format!("{}..{}", seeds.start, seeds.end),
        "views": args.views,
        "res": args.res,
        "mode": args.mode,
        "static_scenes": args.static_scenes,
        "camera_only_frac": args.camera_only_frac,
        "single_view_frac": args.single_view_frac,
    });
    manifest.seed = Some(seeds.start);

    for seed in seeds {
        let mut scene = generate_scene(seed);
        if args.static_scenes {
            scene.dynamic = None;
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed.wrapping_add(0x5eed_da7a));
        let n_views = if rng.random::<f64>() < args.single_view_frac {
            1
        } else if views.start + 1 == views.end {
            views.start as usize
        } else {
            rng.random_range(views.start..views.end) as usize
        };
        let mode = match args.mode.as_str() {
            "video" => SequenceMode::Video,
            "collection" => {
                if scene.dynamic.is_some() {
                    return Err(AppError::Data(format!(
                        "seed {seed}: collection mode requires static scenes (use --static-scenes)"
                    )));
                }
                SequenceMode::Collection
            }
            "auto" => {
                if scene.dynamic.is_none() && n_views > 1 && rng.random::<f64>() < 0.3 {
                    SequenceMode::Collection
                } else {
                    SequenceMode::Video
                }
            }
            other => {
                return Err(AppError::Usage(format!(
                    "--mode must be auto|video|collection, got {other:?}"
                )))
            }
        };
        let mut sample = sample_sequence(&scene, n_views, mode, args.res, args.res, &mut rng)?;
        if n_views > 1 && rng.random::<f64>() < args.camera_only_frac {
            sample = drop_depth_supervision(sample);
        }
        let dir = args.out.join(format!("seq_{seed:05}"));
        write_sequence(&dir, &sample)?;
        manifest.output(&dir);
        println!(
            "seq_{seed:05}: {} views, {:?}, {}",
            sample.frames.len(),
            sample.mode,
            match sample.frames[0].supervision {
                streampoint_core::synth::Supervision::Full => "full",
                streampoint_core::synth::Supervision::CameraOnly => "camera-only",
                streampoint_core::synth::Supervision::SingleView => "single-view",
            }
        );
    }
    manifest.write(&args.out)
}
