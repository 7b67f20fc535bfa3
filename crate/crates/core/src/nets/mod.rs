//! Trainable networks: audio encoder, object encoder, grounding head and the
//! U-Net separator with its audio-visual mask synthesizer.
//!
//! All four share one [`ParamStore`]; forward passes are recorded on a
//! [`Tape`] so any loss assembled from them can be differentiated.

mod params;
mod tape;
mod tensor;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::synthworld::ObjectCandidate;
use crate::tfspace::{MagSpec, Mask, StftConfig};

pub use params::ParamStore;
pub use tape::{cross_entropy, global_max, sigmoid, softmax, Gradients, Tape, Var, PROB_CLAMP};
pub use tensor::Tensor;

/// Prefix of every separator parameter name.
pub const SEPARATOR_PREFIX: &str = "separator.";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    /// Raw object feature dimension `D`.
    pub feature_dim: usize,
    /// Channel widths of the stride-2 audio encoder blocks; the last one is `E`.
    pub audio_widths: Vec<usize>,
    pub object_hidden: usize,
    pub ground_hidden: [usize; 2],
    pub unet_base: usize,
    pub unet_max_width: usize,
    /// `None` picks `min(5, log2(min(F, T)) - 2)`.
    pub unet_levels: Option<usize>,
    /// Separator feature channels `C`.
    pub sep_channels: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            feature_dim: 64,
            audio_widths: vec![16, 32, 64, 128],
            object_hidden: 128,
            ground_hidden: [128, 64],
            unet_base: 16,
            unet_max_width: 256,
            unet_levels: None,
            sep_channels: 32,
        }
    }
}

const LEAK: f64 = 0.2;

impl ArchConfig {
    pub fn embed_dim(&self) -> usize {
        *self.audio_widths.last().unwrap_or(&0)
    }

    pub fn levels_for(&self, grid: (usize, usize)) -> usize {
        self.unet_levels.unwrap_or_else(|| {
            let m = grid.0.min(grid.1).max(1);
            let log = usize::BITS - 1 - m.leading_zeros();
            (log as usize).saturating_sub(2).min(5)
        })
    }

    pub fn validate(&self, grid: (usize, usize)) -> Result<()> {
        if self.audio_widths.is_empty() || self.audio_widths.contains(&0) {
            return Err(Error::config("audio_widths must be nonempty and positive"));
        }
        if [self.feature_dim, self.object_hidden, self.unet_base, self.sep_channels]
            .contains(&0)
            || self.ground_hidden.contains(&0)
        {
            return Err(Error::config("network widths must be positive"));
        }
        if self.unet_max_width < self.unet_base {
            return Err(Error::config("unet_max_width must be >= unet_base"));
        }
        let l = self.levels_for(grid);
        if l == 0 {
            return Err(Error::config("network grid too small for a U-Net"));
        }
        let div = 1usize << l;
        if grid.0 % div != 0 || grid.1 % div != 0 {
            return Err(Error::config(format!(
                "network grid {}x{} must be divisible by 2^{l} for a {l}-level U-Net",
                grid.0, grid.1
            )));
        }
        Ok(())
    }

    fn unet_width(&self, level: usize) -> usize {
        (self.unet_base << level).min(self.unet_max_width)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AudioEmbedding(pub Vec<f64>);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectEmbedding(pub Vec<f64>);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundingScore {
    pub probs: [f64; 2],
}

impl GroundingScore {
    pub fn audible(&self) -> f64 {
        self.probs[0]
    }
}

/// Hard audible/silent decision; the boundary `g[0] = 0.5` counts as audible.
pub fn binarize(score: &GroundingScore) -> u8 {
    (score.probs[0] >= 0.5) as u8
}

#[derive(Clone, Debug)]
pub struct SeparatorOutput {
    pub feature_map: Tensor,
    pub mask: Mask,
    pub separated: MagSpec,
}

#[derive(Clone, Debug, PartialEq)]
struct Dense {
    w: usize,
    b: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct Conv {
    w: usize,
    b: usize,
    stride: usize,
}

/// Parameter ids of every layer, rebuilt from names after a load.
#[derive(Clone, Debug, PartialEq)]
struct Layout {
    audio: Vec<Conv>,
    object: [Dense; 2],
    ground: [Dense; 3],
    unet_in: Conv,
    unet_down: Vec<Conv>,
    unet_up: Vec<Conv>,
    unet_out: Conv,
    proj: Dense,
    mask_a: usize,
    mask_b: usize,
}

struct Builder<'a> {
    store: ParamStore,
    rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    fn dense(&mut self, name: &str, inp: usize, out: usize, zero: bool) -> Dense {
        let w = if zero {
            Tensor::zeros(&[out, inp])
        } else {
            params::fan_in_uniform(&[out, inp], inp, self.rng)
        };
        Dense {
            w: self.store.push(&format!("{name}.w"), w),
            b: self.store.push(&format!("{name}.b"), Tensor::zeros(&[out])),
        }
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Conv {
        let w = params::fan_in_uniform(&[cout, cin, k, k], cin * k * k, self.rng);
        Conv {
            w: self.store.push(&format!("{name}.w"), w),
            b: self.store.push(&format!("{name}.b"), Tensor::zeros(&[cout])),
            stride,
        }
    }
}

/// The four networks over one parameter store.
#[derive(Clone, Debug)]
pub struct Model {
    pub arch: ArchConfig,
    pub grid: (usize, usize),
    pub params: ParamStore,
    layout: Layout,
}

impl Model {
    pub fn new(arch: ArchConfig, grid: (usize, usize), seed_root: u64) -> Result<Model> {
        arch.validate(grid)?;
        let mut rng = seed::rng(seed_root, "init", &[]);
        let mut b = Builder {
            store: ParamStore::default(),
            rng: &mut rng,
        };
        let e = arch.embed_dim();
        let mut audio = Vec::new();
        let mut cin = 1;
        for (i, &w) in arch.audio_widths.iter().enumerate() {
            audio.push(b.conv(&format!("audio.conv{i}"), cin, w, 3, 2));
            cin = w;
        }
        let object = [
            b.dense("object.fc0", arch.feature_dim, arch.object_hidden, false),
            b.dense("object.fc1", arch.object_hidden, e, false),
        ];
        let [h0, h1] = arch.ground_hidden;
        let ground = [
            b.dense("ground.fc0", 2 * e, h0, false),
            b.dense("ground.fc1", h0, h1, false),
            b.dense("ground.fc2", h1, 2, true),
        ];

        let levels = arch.levels_for(grid);
        let p = SEPARATOR_PREFIX;
        let unet_in = b.conv(&format!("{p}in"), 1, arch.unet_width(0), 3, 1);
        let unet_down = (1..=levels)
            .map(|l| b.conv(&format!("{p}down{l}"), arch.unet_width(l - 1), arch.unet_width(l), 3, 2))
            .collect();
        let mut unet_up = Vec::new();
        for l in (1..=levels).rev() {
            let from = arch.unet_width(l);
            let skip = arch.unet_width(l - 1);
            unet_up.push(b.conv(&format!("{p}up{l}"), from + skip, skip, 3, 1));
        }
        let unet_out = b.conv(&format!("{p}out"), arch.unet_width(0), arch.sep_channels, 1, 1);
        let proj = b.dense(&format!("{p}proj"), e, arch.sep_channels, false);
        let mask_a = b.store.push(&format!("{p}mask.a"), Tensor::scalar(1.0));
        let mask_b = b.store.push(&format!("{p}mask.b"), Tensor::scalar(0.0));

        let layout = Layout {
            audio,
            object,
            ground,
            unet_in,
            unet_down,
            unet_up,
            unet_out,
            proj,
            mask_a,
            mask_b,
        };
        Ok(Model {
            arch,
            grid,
            params: b.store,
            layout,
        })
    }

    /// Installs loaded parameters, checking every name and shape against a
    /// freshly built model of the same architecture.
    pub fn with_params(arch: ArchConfig, grid: (usize, usize), params: ParamStore) -> Result<Model> {
        let mut m = Model::new(arch, grid, 0)?;
        if params.names() != m.params.names() {
            return Err(Error::Checkpoint(format!(
                "parameter set does not match the architecture ({} vs {} tensors)",
                params.len(),
                m.params.len()
            )));
        }
        for (i, (name, t)) in params.iter().enumerate() {
            let want = m.params.tensor(i).shape();
            if t.shape() != want {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for {name}: checkpoint {:?}, architecture {:?}",
                    t.shape(),
                    want
                )));
            }
        }
        m.params = params;
        Ok(m)
    }

    pub fn embed_dim(&self) -> usize {
        self.arch.embed_dim()
    }

    pub fn separator_ids(&self) -> Vec<usize> {
        self.params.ids_with_prefix(SEPARATOR_PREFIX)
    }

    fn dense(&self, t: &mut Tape, x: Var, d: &Dense) -> Var {
        let (w, b) = (t.param(d.w), t.param(d.b));
        t.dense(x, w, b)
    }

    fn conv(&self, t: &mut Tape, x: Var, c: &Conv) -> Var {
        let (w, b) = (t.param(c.w), t.param(c.b));
        t.conv2d(x, w, b, c.stride)
    }

    /// Network-input spectrogram as a `[1, F, T]` constant.
    pub fn spec_input(&self, t: &mut Tape, input: &[f64]) -> Result<Var> {
        let (f, tt) = self.grid;
        if input.len() != f * tt {
            return Err(Error::input(format!(
                "spectrogram has {} values, network grid is {f}x{tt}",
                input.len()
            )));
        }
        Ok(t.constant(Tensor::from_vec(&[1, f, tt], input.to_vec())))
    }

    /// Audio embedding `f_s`: conv blocks then global max pooling.
    pub fn audio_embed(&self, t: &mut Tape, spec: Var) -> Var {
        let mut x = spec;
        for c in &self.layout.audio {
            let y = self.conv(t, x, c);
            x = t.leaky_relu(y, LEAK);
        }
        t.global_max_pool(x)
    }

    pub fn object_input(&self, t: &mut Tape, obj: &ObjectCandidate) -> Result<Var> {
        if obj.raw_feature.len() != self.arch.feature_dim {
            return Err(Error::input(format!(
                "object {} has feature dimension {}, expected {}",
                obj.object_id,
                obj.raw_feature.len(),
                self.arch.feature_dim
            )));
        }
        Ok(t.constant(Tensor::from_vec(&[self.arch.feature_dim], obj.raw_feature.clone())))
    }

    /// Object embedding `f_o`.
    pub fn object_embed(&self, t: &mut Tape, feat: Var) -> Var {
        let h = self.dense(t, feat, &self.layout.object[0]);
        let h = t.leaky_relu(h, LEAK);
        self.dense(t, h, &self.layout.object[1])
    }

    /// Grounding probabilities `g(s, O)` as a `[2]` node.
    pub fn ground(&self, t: &mut Tape, fs: Var, fo: Var) -> Var {
        let x = t.concat_vec(fs, fo);
        let h = self.dense(t, x, &self.layout.ground[0]);
        let h = t.leaky_relu(h, LEAK);
        let h = self.dense(t, h, &self.layout.ground[1]);
        let h = t.leaky_relu(h, LEAK);
        let z = self.dense(t, h, &self.layout.ground[2]);
        t.softmax(z)
    }

    /// U-Net feature map `[C, F, T]` of the mixture.
    pub fn separator_features(&self, t: &mut Tape, spec: Var) -> Var {
        let l = &self.layout;
        let x0 = self.conv(t, spec, &l.unet_in);
        let mut skips = vec![t.leaky_relu(x0, LEAK)];
        for c in &l.unet_down {
            let y = self.conv(t, *skips.last().unwrap(), c);
            skips.push(t.leaky_relu(y, LEAK));
        }
        let mut u = skips.pop().unwrap();
        for c in &l.unet_up {
            let up = t.upsample2x(u);
            let cat = t.concat_channels(up, skips.pop().unwrap());
            let y = self.conv(t, cat, c);
            u = t.leaky_relu(y, LEAK);
        }
        self.conv(t, u, &l.unet_out)
    }

    /// Soft mask `[F, T]`: sigmoid of an affine transform of the per-pixel dot
    /// product between the feature map and the projected object embedding.
    pub fn separator_mask(&self, t: &mut Tape, features: Var, fo: Var) -> Var {
        let v = self.dense(t, fo, &self.layout.proj);
        let d = t.pixel_dot(features, v);
        let (a, b) = (t.param(self.layout.mask_a), t.param(self.layout.mask_b));
        let z = t.affine_scalar(d, a, b);
        t.sigmoid(z)
    }

    // Eval-mode conveniences on their own tapes.

    pub fn encode_audio(&self, spec: &MagSpec, stft: &StftConfig) -> Result<AudioEmbedding> {
        self.check_grid(spec)?;
        let mut t = Tape::new(&self.params);
        let x = self.spec_input(&mut t, &spec.network_input(stft))?;
        let e = self.audio_embed(&mut t, x);
        Ok(AudioEmbedding(t.value(e).data().to_vec()))
    }

    pub fn encode_object(&self, obj: &ObjectCandidate) -> Result<ObjectEmbedding> {
        let mut t = Tape::new(&self.params);
        let x = self.object_input(&mut t, obj)?;
        let e = self.object_embed(&mut t, x);
        Ok(ObjectEmbedding(t.value(e).data().to_vec()))
    }

    pub fn ground_embeddings(&self, fs: &AudioEmbedding, fo: &ObjectEmbedding) -> Result<GroundingScore> {
        let e = self.embed_dim();
        if fs.0.len() != e || fo.0.len() != e {
            return Err(Error::input("embedding dimension mismatch"));
        }
        let mut t = Tape::new(&self.params);
        let a = t.constant(Tensor::from_vec(&[e], fs.0.clone()));
        let o = t.constant(Tensor::from_vec(&[e], fo.0.clone()));
        let g = self.ground(&mut t, a, o);
        let p = t.value(g).data();
        Ok(GroundingScore { probs: [p[0], p[1]] })
    }

    /// Separates every object embedding from one mixture, sharing the U-Net pass.
    pub fn separate(
        &self,
        mixture: &MagSpec,
        objects: &[ObjectEmbedding],
        stft: &StftConfig,
    ) -> Result<Vec<SeparatorOutput>> {
        self.check_grid(mixture)?;
        let e = self.embed_dim();
        let mut t = Tape::new(&self.params);
        let x = self.spec_input(&mut t, &mixture.network_input(stft))?;
        let feats = self.separator_features(&mut t, x);
        let (f, tt) = self.grid;
        objects
            .iter()
            .map(|fo| {
                if fo.0.len() != e {
                    return Err(Error::input("object embedding dimension mismatch"));
                }
                let o = t.constant(Tensor::from_vec(&[e], fo.0.clone()));
                let m = self.separator_mask(&mut t, feats, o);
                let mask = t.value(m).data().to_vec();
                let sep = mask.iter().zip(&mixture.values).map(|(a, b)| a * b).collect();
                Ok(SeparatorOutput {
                    feature_map: t.value(feats).clone(),
                    mask: Mask::new(f, tt, mask)?,
                    separated: MagSpec::new(f, tt, sep)?,
                })
            })
            .collect()
    }

    fn check_grid(&self, spec: &MagSpec) -> Result<()> {
        if (spec.freq, spec.time) != self.grid {
            return Err(Error::input(format!(
                "spectrogram is {}x{}, network grid is {}x{}",
                spec.freq, spec.time, self.grid.0, self.grid.1
            )));
        }
        Ok(())
    }
}

/// Differentiates the scalar built by `build`. Returns the loss value and one
/// gradient tensor per parameter.
pub fn gradients(
    params: &ParamStore,
    build: impl FnOnce(&mut Tape) -> Result<Var>,
) -> Result<(f64, Vec<Tensor>)> {
    let mut t = Tape::new(params);
    let loss = build(&mut t)?;
    let value = t.scalar(loss);
    if !value.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite loss {value} over a tape of {} parameters",
            params.len()
        )));
    }
    let g = t.backward(loss);
    for (i, gt) in g.params.iter().enumerate() {
        if !gt.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite gradient for parameter {}",
                params.name(i)
            )));
        }
    }
    Ok((value, g.params))
}

/// Adam first and second moments, one tensor per parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamMoments {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamMoments {
    pub fn zeros(params: &ParamStore) -> Self {
        let z: Vec<Tensor> = params.tensors().iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamMoments {
            m: z.clone(),
            v: z,
            t: 0,
        }
    }
}

/// Everything a checkpoint restores.
#[derive(Clone, Debug)]
pub struct ModelState {
    pub model: Model,
    pub stft: StftConfig,
    pub moments: AdamMoments,
    /// Curriculum stage the state was produced by (0 = untrained).
    pub stage: u8,
    /// Completed epochs within `stage`.
    pub epoch: usize,
    /// Optimizer steps within `stage`.
    pub step: u64,
    /// Whether `stage` ran to completion.
    pub stage_complete: bool,
}

impl ModelState {
    pub fn fresh(arch: ArchConfig, stft: StftConfig, seed_root: u64) -> Result<Self> {
        let model = Model::new(arch, stft.net_grid(), seed_root)?;
        let moments = AdamMoments::zeros(&model.params);
        Ok(ModelState {
            model,
            stft,
            moments,
            stage: 0,
            epoch: 0,
            step: 0,
            stage_complete: true,
        })
    }
}
