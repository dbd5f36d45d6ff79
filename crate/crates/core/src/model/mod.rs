//! The recurrent perception model.
//!
//! Image (or raymap) tokens interact with a persistent set of state tokens
//! through two interconnected decoder stacks: at every block each side runs
//! self-attention, then cross-attends into the other side's activations of
//! the same depth, then its MLP. Image steps update the state; raymap
//! queries only read from it. Four heads decode the enriched image tokens
//! into camera-frame points, world-frame points (modulated by the pose
//! token readout), a camera pose, and — for raymap queries — color.

pub mod checkpoint;
mod config;
mod layers;
mod patchify;
#[cfg(test)]
mod tests;

pub use config::{ConfigError, ModelConfig};
pub use patchify::{patch_mask, patch_pixels, patch_positions, patchify, unpatchify};

use ndarray::{Array2, Array3, ArrayD, Ix2};
use rand_chacha::ChaCha12Rng;

use crate::geometry::{Frame, GeometryError, Pointmap, Pose, Raymap};
use crate::tensor::{Bound, Element, Graph, ParamStore, PId, RopePos, TensorError, Var};
use layers::{trunc_normal, DecBlock, EncBlock, Linear, LayerNormP, ModBlock};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("input is {got:?}, model expects {expected:?}")]
    BadInputDims {
        got: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("a sequence must start with an image, not a raymap")]
    RaymapFirst,
    #[error("empty input sequence")]
    EmptySequence,
    #[error("unknown parameter {name}")]
    UnknownParam { name: String },
}

/// One observation fed to the model.
#[derive(Clone, Debug)]
pub enum ModelInput {
    /// `(H, W, 3)` RGB in `[0, 1]`.
    Image(Array3<f32>),
    /// Virtual camera query.
    Raymap(Raymap),
}

impl ModelInput {
    pub fn is_image(&self) -> bool {
        matches!(self, ModelInput::Image(_))
    }
}

/// Persistent scene state: the token set plus a counter of how many images
/// have been integrated. A fresh state equals the learned initialization
/// exactly; raymap queries never advance the counter.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneState<T: Element> {
    pub tokens: Array2<T>,
    pub step: u64,
}

/// Per-frame model outputs in metric units.
#[derive(Clone, Debug)]
pub struct PredictionSet {
    pub x_self: Pointmap,
    pub c_self: Array2<f64>,
    pub x_world: Pointmap,
    pub c_world: Array2<f64>,
    pub pose: Pose,
    /// Present only for raymap queries.
    pub color: Option<Array3<f64>>,
}

/// Graph vars of one model step, pixel tensors in patch-pixel order.
pub struct StepVars {
    pub z: Var,
    pub f: Var,
    /// `(H*W, 3)` camera-frame points.
    pub pts_self: Var,
    /// `(H*W,)` confidence, ≥ 1.
    pub conf_self: Var,
    pub pts_world: Var,
    pub conf_world: Var,
    /// `(1, 4)` unit quaternion (w, x, y, z).
    pub quat: Var,
    /// `(1, 3)` translation.
    pub trans: Var,
    /// `(H*W, 3)` color in `[0, 1]`, raymap inputs only.
    pub color: Option<Var>,
    pub state_after: Var,
    pub is_image: bool,
}

pub struct Model<T: Element> {
    pub cfg: ModelConfig,
    pub params: ParamStore<T>,
    patch_embed: Linear,
    enc_blocks: Vec<EncBlock>,
    enc_norm: LayerNormP,
    raymap_embed: Linear,
    renc_blocks: Vec<EncBlock>,
    renc_norm: LayerNormP,
    dec_proj: Linear,
    pose_token: PId,
    state_init: PId,
    dec_img: Vec<DecBlock>,
    dec_state: Vec<DecBlock>,
    dec_img_norm: LayerNormP,
    head_self_map: Linear,
    head_world_blocks: Vec<ModBlock>,
    head_world_out: Linear,
    head_pose_fc1: Linear,
    head_pose_fc2: Linear,
    head_color: Linear,
}

/// Parameters of the two encoders; frozen in the final training stage.
pub fn is_encoder_param(name: &str) -> bool {
    name.starts_with("enc.") || name.starts_with("renc.")
}

impl<T: Element> Model<T> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Model<T>, ModelError> {
        cfg.validate()?;
        use rand::SeedableRng;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut store = ParamStore::<T>::new();
        let p2 = cfg.patch * cfg.patch;

        let patch_embed = Linear::new(&mut store, &mut rng, "enc.patch_embed", p2 * 3, cfg.d_enc);
        let enc_blocks = (0..cfg.enc_blocks)
            .map(|i| EncBlock::new(&mut store, &mut rng, &format!("enc.block{i}"), cfg.d_enc, cfg.heads))
            .collect();
        let enc_norm = LayerNormP::new(&mut store, "enc.norm", cfg.d_enc);

        let raymap_embed =
            Linear::new(&mut store, &mut rng, "renc.patch_embed", p2 * 6, cfg.d_enc);
        let renc_blocks = (0..cfg.raymap_enc_blocks)
            .map(|i| EncBlock::new(&mut store, &mut rng, &format!("renc.block{i}"), cfg.d_enc, cfg.heads))
            .collect();
        let renc_norm = LayerNormP::new(&mut store, "renc.norm", cfg.d_enc);

        let dec_proj = Linear::new(&mut store, &mut rng, "dec.proj", cfg.d_enc, cfg.d_dec);
        let pose_token = store.add(
            "dec.pose_token",
            trunc_normal::<T>(&mut rng, &[1, cfg.d_dec], layers::INIT_STD),
        );
        let state_init = store.add(
            "state.init",
            trunc_normal::<T>(&mut rng, &[cfg.n_state, cfg.d_dec], layers::INIT_STD),
        );
        let dec_img = (0..cfg.dec_blocks)
            .map(|i| DecBlock::new(&mut store, &mut rng, &format!("dec.img.block{i}"), cfg.d_dec, cfg.heads))
            .collect();
        let dec_state = (0..cfg.dec_blocks)
            .map(|i| DecBlock::new(&mut store, &mut rng, &format!("dec.state.block{i}"), cfg.d_dec, cfg.heads))
            .collect();
        let dec_img_norm = LayerNormP::new(&mut store, "dec.img.norm", cfg.d_dec);

        let head_self_map =
            Linear::new(&mut store, &mut rng, "head.self_map", cfg.d_dec, p2 * 4);
        let head_world_blocks = (0..2)
            .map(|i| ModBlock::new(&mut store, &mut rng, &format!("head.world.block{i}"), cfg.d_dec, cfg.heads))
            .collect();
        let head_world_out =
            Linear::new(&mut store, &mut rng, "head.world.out", cfg.d_dec, p2 * 4);
        let head_pose_fc1 = Linear::new(&mut store, &mut rng, "head.pose.fc1", cfg.d_dec, cfg.d_dec);
        let head_pose_fc2 = Linear::new(&mut store, &mut rng, "head.pose.fc2", cfg.d_dec, 7);
        // Start the pose head at the identity quaternion: the raw quaternion
        // then has unit magnitude, which keeps its normalization
        // well-conditioned from the first step.
        store.value_mut(head_pose_fc2.b)[[0]] = T::one();
        let head_color = Linear::new(&mut store, &mut rng, "head.color", cfg.d_dec, p2 * 3);

        Ok(Model {
            cfg,
            params: store,
            patch_embed,
            enc_blocks,
            enc_norm,
            raymap_embed,
            renc_blocks,
            renc_norm,
            dec_proj,
            pose_token,
            state_init,
            dec_img,
            dec_state,
            dec_img_norm,
            head_self_map,
            head_world_blocks,
            head_world_out,
            head_pose_fc1,
            head_pose_fc2,
            head_color,
        })
    }

    pub fn fresh_state(&self) -> SceneState<T> {
        let tokens = self
            .params
            .get(self.state_init)
            .value
            .clone()
            .into_dimensionality::<Ix2>()
            .expect("state tokens are 2-d");
        SceneState { tokens, step: 0 }
    }

    fn grid_positions(&self) -> RopePos {
        RopePos::Grid(patch_positions(self.cfg.patches_y(), self.cfg.patches_x()))
    }

    /// Image-side decoder positions: the pose token at the zero angle, then
    /// the patch grid.
    fn decoder_positions(&self) -> RopePos {
        let mut pos = vec![[0.0, 0.0]];
        pos.extend(patch_positions(self.cfg.patches_y(), self.cfg.patches_x()));
        RopePos::Grid(pos)
    }

    fn check_dims(&self, got: &[usize], expected: &[usize]) -> Result<(), ModelError> {
        if got != expected {
            return Err(ModelError::BadInputDims {
                got: got.to_vec(),
                expected: expected.to_vec(),
            });
        }
        Ok(())
    }

    /// ViT encoder: patchify, linear embed, pre-norm blocks with 2-d rotary
    /// positions, final norm. `(n_patches, d_enc)`.
    pub fn encode_image_g(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        img: &Array3<f32>,
    ) -> Result<Var, ModelError> {
        self.check_dims(&[img.dim().0, img.dim().1, img.dim().2], &[self.cfg.height, self.cfg.width, 3])?;
        let imgt = img.mapv(T::from_f32);
        let tokens = patchify(&imgt.view(), self.cfg.patch);
        let x = g.constant(tokens.into_dyn());
        let mut x = self.patch_embed.forward(g, b, x)?;
        let pos = self.grid_positions();
        for blk in &self.enc_blocks {
            x = blk.forward(g, b, x, Some(&pos))?;
        }
        Ok(self.enc_norm.forward(g, b, x)?)
    }

    /// Lightweight raymap encoder over the 6-channel origin+direction image;
    /// output shape matches `encode_image_g` so the decoder is input-agnostic.
    pub fn encode_raymap_g(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        rm: &Raymap,
    ) -> Result<Var, ModelError> {
        self.check_dims(&[rm.height(), rm.width()], &[self.cfg.height, self.cfg.width])?;
        rm.validate_directions(1e-9)?;
        let (h, w) = (rm.height(), rm.width());
        let mut feat = Array3::<T>::zeros((h, w, 6));
        for v in 0..h {
            for u in 0..w {
                for c in 0..3 {
                    feat[[v, u, c]] = T::from_f64(rm.origins[[v, u, c]]);
                    feat[[v, u, 3 + c]] = T::from_f64(rm.directions[[v, u, c]]);
                }
            }
        }
        let tokens = patchify(&feat.view(), self.cfg.patch);
        let x = g.constant(tokens.into_dyn());
        let mut x = self.raymap_embed.forward(g, b, x)?;
        let pos = self.grid_positions();
        for blk in &self.renc_blocks {
            x = blk.forward(g, b, x, Some(&pos))?;
        }
        Ok(self.renc_norm.forward(g, b, x)?)
    }

    /// The state-input interaction: two parallel stacks over `[z, tokens]`
    /// and the state tokens, cross-attending at every block. Returns the
    /// pose-token readout, the enriched image tokens, and the state tokens
    /// after the pass — bit-identical to the input when `update_state` is
    /// false.
    pub fn decode_interact_g(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        tokens: Var,
        state: Var,
        update_state: bool,
    ) -> Result<(Var, Var, Var), ModelError> {
        let shape = g.shape(tokens).to_vec();
        if shape.len() != 2 || shape[1] != self.cfg.d_enc {
            return Err(ModelError::BadInputDims {
                got: shape,
                expected: vec![self.cfg.n_patches(), self.cfg.d_enc],
            });
        }
        let proj = self.dec_proj.forward(g, b, tokens)?;
        let mut x_img = g.concat(0, &[b[self.pose_token], proj])?;
        let mut x_state = state;
        let img_pos = self.decoder_positions();
        for (img_blk, st_blk) in self.dec_img.iter().zip(self.dec_state.iter()) {
            let y_img = img_blk.self_part(g, b, x_img, Some(&img_pos))?;
            let y_state = st_blk.self_part(g, b, x_state, None)?;
            x_img = img_blk.cross_and_mlp(g, b, y_img, y_state, Some(&img_pos), None)?;
            x_state = st_blk.cross_and_mlp(g, b, y_state, y_img, None, Some(&img_pos))?;
        }
        let x_img = self.dec_img_norm.forward(g, b, x_img)?;
        let n = self.cfg.n_patches();
        let parts = g.split(x_img, 0, &[1, n])?;
        let state_after = if update_state { x_state } else { state };
        Ok((parts[0], parts[1], state_after))
    }

    /// Unpack a `(n_patches, p²·4)` head output into points and confidence.
    /// `exp_z` enforces positive depth for the camera-frame head.
    fn unpack_map_head(
        &self,
        g: &mut Graph<T>,
        raw: Var,
        exp_z: bool,
    ) -> Result<(Var, Var), ModelError> {
        let n_pix = self.cfg.n_pixels();
        let flat = g.reshape(raw, &[n_pix, 4])?;
        let parts = g.split(flat, 1, &[2, 1, 1])?;
        let (xy, zraw, craw) = (parts[0], parts[1], parts[2]);
        let z = if exp_z { g.exp(zraw)? } else { zraw };
        let pts = g.concat(1, &[xy, z])?;
        let cexp = g.exp(craw)?;
        let c1 = g.scalar_add(cexp, 1.0)?;
        let conf = g.reshape(c1, &[n_pix])?;
        Ok((pts, conf))
    }

    /// Camera-frame pointmap head: linear, with depth through `exp` and
    /// confidence `1 + exp(raw)`.
    pub fn head_self_g(&self, g: &mut Graph<T>, b: &Bound, f: Var) -> Result<(Var, Var), ModelError> {
        let raw = self.head_self_map.forward(g, b, f)?;
        self.unpack_map_head(g, raw, true)
    }

    /// World-frame pointmap head: two pose-modulated self-attention blocks,
    /// then a linear map; the z coordinate is unconstrained.
    pub fn head_world_g(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        f: Var,
        z: Var,
    ) -> Result<(Var, Var), ModelError> {
        let pos = self.grid_positions();
        let mut x = f;
        for blk in &self.head_world_blocks {
            x = blk.forward(g, b, x, z, Some(&pos))?;
        }
        let raw = self.head_world_out.forward(g, b, x)?;
        self.unpack_map_head(g, raw, false)
    }

    /// Pose head: 2-layer MLP to 7 values; the first four are normalized to
    /// a unit quaternion, the rest are the translation in meters.
    pub fn head_pose_g(&self, g: &mut Graph<T>, b: &Bound, z: Var) -> Result<(Var, Var), ModelError> {
        let h = self.head_pose_fc1.forward(g, b, z)?;
        let a = g.gelu(h)?;
        let out = self.head_pose_fc2.forward(g, b, a)?;
        let parts = g.split(out, 1, &[4, 3])?;
        let (qraw, trans) = (parts[0], parts[1]);
        let norm = g.l2_norm_last(qraw)?;
        // Tiny additive guard keeps the all-zero raw quaternion finite; the
        // value-level extraction replaces that case with the identity.
        let guarded = g.scalar_add(norm, 1e-12)?;
        let inv = g.recip(guarded)?;
        let quat = g.scale_by_var(qraw, inv)?;
        Ok((quat, trans))
    }

    /// Color head for raymap queries: linear then sigmoid.
    pub fn head_color_g(&self, g: &mut Graph<T>, b: &Bound, f: Var) -> Result<Var, ModelError> {
        let raw = self.head_color.forward(g, b, f)?;
        let n_pix = self.cfg.n_pixels();
        let flat = g.reshape(raw, &[n_pix, 3])?;
        Ok(g.sigmoid(flat)?)
    }

    /// One full model step on a graph. `update_state` is true for images in
    /// online mode and always false in revisit mode.
    pub fn step_g(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        state: Var,
        input: &ModelInput,
        update_state: bool,
    ) -> Result<StepVars, ModelError> {
        let (tokens, is_image) = match input {
            ModelInput::Image(img) => (self.encode_image_g(g, b, img)?, true),
            ModelInput::Raymap(rm) => (self.encode_raymap_g(g, b, rm)?, false),
        };
        let (z, f, state_after) = self.decode_interact_g(g, b, tokens, state, update_state)?;
        let (pts_self, conf_self) = self.head_self_g(g, b, f)?;
        let (pts_world, conf_world) = self.head_world_g(g, b, f, z)?;
        let (quat, trans) = self.head_pose_g(g, b, z)?;
        let color = if is_image {
            None
        } else {
            Some(self.head_color_g(g, b, f)?)
        };
        Ok(StepVars {
            z,
            f,
            pts_self,
            conf_self,
            pts_world,
            conf_world,
            quat,
            trans,
            color,
            state_after,
            is_image,
        })
    }

    fn pixels2d(&self, g: &Graph<T>, v: Var) -> Array2<f64> {
        g.value(v)
            .view()
            .into_dimensionality::<Ix2>()
            .expect("2-d pixel tensor")
            .mapv(|x| x.to_f64())
    }

    /// `(H*W,)` per-pixel values in patch order back to an `(H, W)` map.
    fn pixels_to_map(&self, g: &Graph<T>, v: Var) -> Array2<f64> {
        let (h, w, p) = (self.cfg.height, self.cfg.width, self.cfg.patch);
        let flat = g.value(v);
        let col = Array2::from_shape_vec(
            (flat.len(), 1),
            flat.iter().map(|&x| x.to_f64()).collect(),
        )
        .expect("shape");
        let img = unpatchify(&col, h, w, p);
        let mut out = Array2::<f64>::zeros((h, w));
        for y in 0..h {
            for x in 0..w {
                out[[y, x]] = img[[y, x, 0]];
            }
        }
        out
    }

    /// Materialize the value-level prediction set of one step.
    pub fn extract(&self, g: &Graph<T>, vars: &StepVars) -> Result<PredictionSet, ModelError> {
        let (h, w, p) = (self.cfg.height, self.cfg.width, self.cfg.patch);
        let all_valid = Array2::from_elem((h, w), true);

        let pts_self = unpatchify(&self.pixels2d(g, vars.pts_self), h, w, p);
        let pts_world = unpatchify(&self.pixels2d(g, vars.pts_world), h, w, p);

        let quat = g.value(vars.quat);
        let q = [
            quat[[0, 0]].to_f64(),
            quat[[0, 1]].to_f64(),
            quat[[0, 2]].to_f64(),
            quat[[0, 3]].to_f64(),
        ];
        let tr = g.value(vars.trans);
        let t = [tr[[0, 0]].to_f64(), tr[[0, 1]].to_f64(), tr[[0, 2]].to_f64()];
        let pose = if q.iter().all(|&x| x == 0.0) {
            Pose::new([1.0, 0.0, 0.0, 0.0], t)?
        } else {
            Pose::from_unnormalized(q, t)?
        };

        let color = vars.color.map(|cv| {
            let pix = self.pixels2d(g, cv);
            unpatchify(&pix, h, w, p)
        });

        Ok(PredictionSet {
            x_self: Pointmap {
                points: pts_self,
                frame: Frame::Camera,
                valid: all_valid.clone(),
            },
            c_self: self.pixels_to_map(g, vars.conf_self),
            x_world: Pointmap {
                points: pts_world,
                frame: Frame::World,
                valid: all_valid,
            },
            c_world: self.pixels_to_map(g, vars.conf_world),
            pose,
            color,
        })
    }

    /// Process one observation against a state, returning the predictions
    /// and the successor state. Raymap queries leave the state tokens
    /// bit-identical and do not advance the counter.
    pub fn step(
        &self,
        state: &SceneState<T>,
        input: &ModelInput,
    ) -> Result<(PredictionSet, SceneState<T>), ModelError> {
        let mut g = Graph::<T>::new();
        let b = self.params.bind_all(&mut g, false);
        let sv = g.leaf(state.tokens.clone().into_dyn(), false);
        let update = input.is_image();
        let vars = self.step_g(&mut g, &b, sv, input, update)?;
        let pred = self.extract(&g, &vars)?;
        let tokens = g
            .value(vars.state_after)
            .clone()
            .into_dimensionality::<Ix2>()
            .expect("state tokens are 2-d");
        let next = SceneState {
            tokens,
            step: state.step + u64::from(update),
        };
        Ok((pred, next))
    }

    /// Fold a stream of observations from a fresh state. The first element
    /// must be an image: the world frame is defined by it.
    pub fn run_sequence(
        &self,
        inputs: &[ModelInput],
    ) -> Result<(Vec<PredictionSet>, SceneState<T>), ModelError> {
        let first = inputs.first().ok_or(ModelError::EmptySequence)?;
        if !first.is_image() {
            return Err(ModelError::RaymapFirst);
        }
        let mut state = self.fresh_state();
        let mut preds = Vec::with_capacity(inputs.len());
        for input in inputs {
            let (pred, next) = self.step(&state, input)?;
            preds.push(pred);
            state = next;
        }
        Ok((preds, state))
    }

    /// Re-process observations against a frozen state: every interaction is
    /// a pure readout and the state is never mutated.
    pub fn revisit(
        &self,
        frozen: &SceneState<T>,
        inputs: &[ModelInput],
    ) -> Result<Vec<PredictionSet>, ModelError> {
        let mut preds = Vec::with_capacity(inputs.len());
        for input in inputs {
            let mut g = Graph::<T>::new();
            let b = self.params.bind_all(&mut g, false);
            let sv = g.leaf(frozen.tokens.clone().into_dyn(), false);
            let vars = self.step_g(&mut g, &b, sv, input, false)?;
            preds.push(self.extract(&g, &vars)?);
        }
        Ok(preds)
    }

    /// Overwrite a named parameter (test and checkpoint plumbing).
    pub fn set_param(&mut self, name: &str, value: ArrayD<T>) -> Result<(), ModelError> {
        let id = self
            .params
            .id_of(name)
            .ok_or_else(|| ModelError::UnknownParam { name: name.into() })?;
        let slot = self.params.value_mut(id);
        assert_eq!(slot.shape(), value.shape(), "parameter {name} shape mismatch");
        *slot = value;
        Ok(())
    }
}
