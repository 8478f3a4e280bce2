//! ResNeXt-style 1-D convolutional encoder.
//!
//! Layout: a strided stem convolution followed by stages of residual blocks.
//! Each block is `1x1 conv -> grouped k-tap conv -> 1x1 conv` with swish
//! between the layers, and a skip path (a 1x1 projection when the channel
//! count changes). The last block of every stage adds a channel gate:
//! `H_o = H3 + sigmoid(MLP(mean_t H3)) * H3`. The embedding is the time
//! average of the final stage output.
//!
//! Only the stem is strided; all stage convolutions use stride 1 and "same"
//! padding. No normalization layers are used.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::numeric::stream;

const TINY: &str = r#"
name = "tiny"
hidden_dim = 16
ratio = 0.5
group_width = 4
stem_stride = 4
stages = [{ channels = 16, blocks = 1 }, { channels = 32, blocks = 1 }]
"#;

const SMALL: &str = r#"
name = "small"
hidden_dim = 32
ratio = 0.5
group_width = 8
stages = [
  { channels = 32, blocks = 1 },
  { channels = 64, blocks = 1 },
  { channels = 64, blocks = 2 },
  { channels = 128, blocks = 2 },
  { channels = 128, blocks = 2 },
  { channels = 256, blocks = 2 },
]
"#;

const MEDIUM: &str = r#"
name = "medium"
hidden_dim = 64
ratio = 1.0
group_width = 16
stages = [
  { channels = 64, blocks = 2 },
  { channels = 160, blocks = 2 },
  { channels = 160, blocks = 2 },
  { channels = 400, blocks = 3 },
  { channels = 400, blocks = 3 },
  { channels = 1024, blocks = 4 },
  { channels = 1024, blocks = 4 },
]
"#;

const LARGE: &str = r#"
name = "large"
hidden_dim = 128
ratio = 1.5
group_width = 32
stages = [
  { channels = 128, blocks = 2 },
  { channels = 256, blocks = 3 },
  { channels = 256, blocks = 3 },
  { channels = 512, blocks = 4 },
  { channels = 512, blocks = 4 },
  { channels = 1024, blocks = 5 },
  { channels = 1024, blocks = 5 },
  { channels = 2048, blocks = 6 },
  { channels = 2048, blocks = 6 },
]
"#;

pub const PRESETS: [&str; 4] = ["tiny", "small", "medium", "large"];

fn default_kernel() -> usize {
    16
}

fn default_stride() -> usize {
    2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub channels: usize,
    pub blocks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    #[serde(default)]
    pub name: String,
    /// Stem output channels.
    pub hidden_dim: usize,
    /// Bottleneck width of a block relative to its output channels.
    pub ratio: f64,
    /// Channels per group in the grouped convolution.
    pub group_width: usize,
    pub stages: Vec<StageConfig>,
    #[serde(default = "default_kernel")]
    pub stem_kernel: usize,
    #[serde(default = "default_stride")]
    pub stem_stride: usize,
    #[serde(default = "default_kernel")]
    pub block_kernel: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::preset("tiny").expect("built-in preset")
    }
}

impl EncoderConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let src = match name.to_ascii_lowercase().as_str() {
            "tiny" => TINY,
            "small" | "s" => SMALL,
            "medium" | "m" => MEDIUM,
            "large" | "l" => LARGE,
            other => return Err(Error::config(format!("unknown encoder preset {other:?}"))),
        };
        let cfg: Self = toml::from_str(src).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Bottleneck channels for a block with `channels` outputs.
    pub fn bottleneck(&self, channels: usize) -> usize {
        (channels as f64 * self.ratio).round() as usize
    }

    pub fn output_dim(&self) -> usize {
        self.stages.last().map_or(self.hidden_dim, |s| s.channels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::config("encoder needs at least one stage"));
        }
        if self.hidden_dim == 0 || self.group_width == 0 || self.stem_kernel == 0 || self.block_kernel == 0 {
            return Err(Error::config("encoder sizes must be positive"));
        }
        if self.stem_stride == 0 {
            return Err(Error::config("stem stride must be positive"));
        }
        if !(self.ratio > 0.0) {
            return Err(Error::config(format!("ratio must be positive, got {}", self.ratio)));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.channels == 0 || s.blocks == 0 {
                return Err(Error::config(format!("stage {} must have positive channels and blocks", i + 1)));
            }
            if s.channels < 2 {
                return Err(Error::config(format!("stage {} needs at least 2 channels for its gate", i + 1)));
            }
            let mid = self.bottleneck(s.channels);
            if mid == 0 || mid % self.group_width != 0 {
                return Err(Error::config(format!(
                    "stage {}: bottleneck width {mid} is not divisible by group width {}",
                    i + 1,
                    self.group_width
                )));
            }
        }
        Ok(())
    }

    /// Minimum input length accepted by [`Encoder::forward`].
    pub fn min_length(&self) -> usize {
        self.stem_kernel
    }

    /// Sequence length after the stem.
    pub fn feature_length(&self, t: usize) -> usize {
        t.div_ceil(self.stem_stride)
    }

    /// Every parameter name and shape in build order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let d = self.hidden_dim;
        out.push(("stem.weight".to_string(), vec![d, 1, self.stem_kernel]));
        out.push(("stem.bias".to_string(), vec![d]));
        let mut cin = d;
        for (si, stage) in self.stages.iter().enumerate() {
            let h = stage.channels;
            let mid = self.bottleneck(h);
            for bi in 0..stage.blocks {
                let p = format!("stage{}.block{}", si + 1, bi + 1);
                out.push((format!("{p}.conv1.weight"), vec![mid, cin, 1]));
                out.push((format!("{p}.conv1.bias"), vec![mid]));
                out.push((format!("{p}.conv2.weight"), vec![mid, self.group_width, self.block_kernel]));
                out.push((format!("{p}.conv2.bias"), vec![mid]));
                out.push((format!("{p}.conv3.weight"), vec![h, mid, 1]));
                out.push((format!("{p}.conv3.bias"), vec![h]));
                if cin != h {
                    out.push((format!("{p}.proj.weight"), vec![h, cin, 1]));
                    out.push((format!("{p}.proj.bias"), vec![h]));
                }
                cin = h;
            }
            let half = h / 2;
            let p = format!("stage{}.gate", si + 1);
            out.push((format!("{p}.fc1.weight"), vec![half, h]));
            out.push((format!("{p}.fc1.bias"), vec![half]));
            out.push((format!("{p}.fc2.weight"), vec![h, half]));
            out.push((format!("{p}.fc2.bias"), vec![h]));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }

    /// Parameter counts grouped by module (`stem`, `stageN.blockM`, `stageN.gate`).
    pub fn module_counts(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for (name, shape) in self.param_shapes() {
            let module = name.rsplitn(3, '.').nth(2).unwrap_or("stem").to_string();
            let n: usize = shape.iter().product();
            match out.last_mut() {
                Some((m, c)) if *m == module => *c += n,
                _ => out.push((module, n)),
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
struct Block {
    conv1: (ParamId, ParamId),
    conv2: (ParamId, ParamId),
    conv3: (ParamId, ParamId),
    proj: Option<(ParamId, ParamId)>,
    groups: usize,
}

#[derive(Debug, Clone)]
struct Gate {
    fc1: (ParamId, ParamId),
    fc2: (ParamId, ParamId),
}

#[derive(Debug, Clone)]
struct Stage {
    blocks: Vec<Block>,
    gate: Gate,
}

/// Whether encoder parameters are recorded as trainable on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamMode {
    Trainable,
    Frozen,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
    seed: u64,
    params: ParamStore,
    stem: (ParamId, ParamId),
    stages: Vec<Stage>,
}

impl Encoder {
    /// Builds an encoder with He-normal weights (fan-in scaling) and zero
    /// biases. The last gate layer starts at 1% of that scale so gates begin
    /// near 0.5.
    pub fn build(config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        for (idx, (name, shape)) in config.param_shapes().into_iter().enumerate() {
            let n: usize = shape.iter().product();
            let data = if name.ends_with(".bias") {
                vec![0.0; n]
            } else {
                let fan_in: usize = shape[1..].iter().product();
                let mut std = (2.0 / fan_in as f64).sqrt();
                if name.ends_with("gate.fc2.weight") {
                    std *= 0.01;
                }
                let normal = Normal::new(0.0, std).map_err(|e| Error::config(e.to_string()))?;
                let mut rng = stream(seed, &[idx as u64]);
                (0..n).map(|_| normal.sample(&mut rng)).collect()
            };
            params.add(name, Tensor::new(shape, data)?);
        }
        Self::assemble(config.clone(), seed, params)
    }

    /// Wraps an existing parameter store, checking names and shapes.
    pub fn from_params(config: &EncoderConfig, seed: u64, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let expected = config.param_shapes();
        if expected.len() != params.len() {
            return Err(Error::Malformed(format!(
                "encoder expects {} parameter tensors, found {}",
                expected.len(),
                params.len()
            )));
        }
        for ((name, shape), (pn, pt)) in expected.iter().zip(params.iter()) {
            if name != pn || shape.as_slice() != pt.shape() {
                return Err(Error::Malformed(format!(
                    "parameter {pn} {:?} does not match expected {name} {shape:?}",
                    pt.shape()
                )));
            }
        }
        Self::assemble(config.clone(), seed, params)
    }

    fn assemble(config: EncoderConfig, seed: u64, params: ParamStore) -> Result<Self> {
        let id = |name: String| {
            params.find(&name).ok_or_else(|| Error::Malformed(format!("missing parameter {name}")))
        };
        let pair = |p: &str| -> Result<(ParamId, ParamId)> { Ok((id(format!("{p}.weight"))?, id(format!("{p}.bias"))?)) };
        let stem = pair("stem")?;
        let mut stages = Vec::new();
        let mut cin = config.hidden_dim;
        for (si, s) in config.stages.iter().enumerate() {
            let mut blocks = Vec::new();
            for bi in 0..s.blocks {
                let p = format!("stage{}.block{}", si + 1, bi + 1);
                blocks.push(Block {
                    conv1: pair(&format!("{p}.conv1"))?,
                    conv2: pair(&format!("{p}.conv2"))?,
                    conv3: pair(&format!("{p}.conv3"))?,
                    proj: if cin != s.channels { Some(pair(&format!("{p}.proj"))?) } else { None },
                    groups: config.bottleneck(s.channels) / config.group_width,
                });
                cin = s.channels;
            }
            let p = format!("stage{}.gate", si + 1);
            let gate = Gate { fc1: pair(&format!("{p}.fc1"))?, fc2: pair(&format!("{p}.fc2"))? };
            stages.push(Stage { blocks, gate });
        }
        Ok(Self { config, seed, params, stem, stages })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    fn load(&self, tape: &mut Tape, mode: ParamMode, ids: (ParamId, ParamId)) -> Result<(Var, Var)> {
        Ok(match mode {
            ParamMode::Trainable => (tape.param(&self.params, ids.0)?, tape.param(&self.params, ids.1)?),
            ParamMode::Frozen => {
                (tape.frozen_param(&self.params, ids.0)?, tape.frozen_param(&self.params, ids.1)?)
            }
        })
    }

    /// `x` is `(batch, t)`; returns `(batch, h)`.
    pub fn forward(&self, tape: &mut Tape, x: Var, mode: ParamMode) -> Result<Var> {
        let shape = tape.value(x).shape().to_vec();
        if shape.len() != 2 {
            return Err(Error::shape("encoder", format!("input must be (batch, t), got {shape:?}")));
        }
        let (batch, t) = (shape[0], shape[1]);
        if t < self.config.min_length() {
            return Err(Error::shape(
                "encoder",
                format!("input length {t} is shorter than the stem kernel {}", self.config.min_length()),
            ));
        }
        let x = tape.reshape(x, &[batch, 1, t])?;
        let (w, b) = self.load(tape, mode, self.stem)?;
        let h = tape.conv1d(x, w, Some(b), self.config.stem_stride, 1)?;
        let mut h = tape.swish(h)?;

        for stage in &self.stages {
            let last = stage.blocks.len() - 1;
            for (bi, block) in stage.blocks.iter().enumerate() {
                let (w, b) = self.load(tape, mode, block.conv1)?;
                let h1 = tape.conv1d(h, w, Some(b), 1, 1)?;
                let h1 = tape.swish(h1)?;
                let (w, b) = self.load(tape, mode, block.conv2)?;
                let h2 = tape.conv1d(h1, w, Some(b), 1, block.groups)?;
                let h2 = tape.swish(h2)?;
                let (w, b) = self.load(tape, mode, block.conv3)?;
                let mut h3 = tape.conv1d(h2, w, Some(b), 1, 1)?;
                if bi == last {
                    h3 = self.gate(tape, mode, &stage.gate, h3)?;
                }
                let skip = match block.proj {
                    Some(ids) => {
                        let (w, b) = self.load(tape, mode, ids)?;
                        tape.conv1d(h, w, Some(b), 1, 1)?
                    }
                    None => h,
                };
                h = tape.add(h3, skip)?;
            }
        }
        tape.mean_axis(h, 2)
    }

    fn gate(&self, tape: &mut Tape, mode: ParamMode, gate: &Gate, h3: Var) -> Result<Var> {
        let pooled = tape.mean_axis(h3, 2)?;
        let (w, b) = self.load(tape, mode, gate.fc1)?;
        let a = tape.linear(pooled, w, Some(b))?;
        let a = tape.swish(a)?;
        let (w, b) = self.load(tape, mode, gate.fc2)?;
        let a = tape.linear(a, w, Some(b))?;
        let scores = tape.sigmoid(a)?;
        let hr = tape.broadcast_mul(h3, scores)?;
        tape.add(h3, hr)
    }

    /// Embeds a `(batch, t)` tensor without recording gradients.
    pub fn embed(&self, signals: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(signals.clone())?;
        let z = self.forward(&mut tape, x, ParamMode::Frozen)?;
        Ok(tape.value(z).clone())
    }

    /// Embeds many rows in chunks of `chunk` to bound memory.
    pub fn embed_rows(&self, rows: &[Vec<f64>], chunk: usize) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(rows.len());
        for part in rows.chunks(chunk.max(1)) {
            let z = self.embed(&Tensor::from_rows(part)?)?;
            let h = z.shape()[1];
            out.extend(z.data().chunks(h).map(<[f64]>::to_vec));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_input(batch: usize, t: usize, seed: u64) -> Tensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![batch, t], (0..batch * t).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn presets_parse_and_validate() {
        for name in PRESETS {
            let cfg = EncoderConfig::preset(name).unwrap();
            assert_eq!(cfg.name, name);
        }
        let tiny = EncoderConfig::preset("tiny").unwrap();
        assert_eq!(tiny.output_dim(), 32);
        assert_eq!(EncoderConfig::preset("small").unwrap().stages.len(), 6);
        assert_eq!(EncoderConfig::preset("medium").unwrap().stages.len(), 7);
        assert_eq!(EncoderConfig::preset("large").unwrap().stages.len(), 9);
        assert!(EncoderConfig::preset("huge").is_err());
    }

    #[test]
    fn small_parameter_count_near_reference() {
        let n = EncoderConfig::preset("small").unwrap().param_count() as f64;
        assert!((n - 448_000.0).abs() <= 0.2 * 448_000.0, "{n}");
    }

    #[test]
    fn rejects_indivisible_groups() {
        let mut cfg = EncoderConfig::preset("tiny").unwrap();
        cfg.group_width = 3;
        assert!(cfg.validate().is_err());
        assert!(Encoder::build(&cfg, 0).is_err());
        cfg.group_width = 4;
        cfg.stages.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn tiny_shape_contract() {
        let enc = Encoder::build(&EncoderConfig::preset("tiny").unwrap(), 1).unwrap();
        let z = enc.embed(&random_input(2, 2500, 2)).unwrap();
        assert_eq!(z.shape(), &[2, 32]);
        assert!(z.is_finite());
        assert_eq!(enc.param_count(), enc.config().param_count());
    }

    #[test]
    fn same_seed_same_params() {
        let cfg = EncoderConfig::preset("tiny").unwrap();
        let a = Encoder::build(&cfg, 5).unwrap();
        let b = Encoder::build(&cfg, 5).unwrap();
        let c = Encoder::build(&cfg, 6).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn zero_input_is_finite_and_rows_are_independent() {
        let enc = Encoder::build(&EncoderConfig::preset("tiny").unwrap(), 3).unwrap();
        let z = enc.embed(&Tensor::zeros(&[1, 64])).unwrap();
        assert!(z.is_finite());

        let x = random_input(3, 100, 4);
        let full = enc.embed(&x).unwrap();
        for i in 0..3 {
            let single = enc.embed(&Tensor::new(vec![1, 100], x.row(i).to_vec()).unwrap()).unwrap();
            assert_eq!(single.data(), full.row(i));
        }
        let same = Tensor::new(vec![2, 100], [x.row(0), x.row(0)].concat()).unwrap();
        let z = enc.embed(&same).unwrap();
        assert_eq!(z.row(0), z.row(1));
    }

    #[test]
    fn rejects_short_input() {
        let enc = Encoder::build(&EncoderConfig::preset("tiny").unwrap(), 3).unwrap();
        assert!(enc.embed(&Tensor::zeros(&[1, 8])).is_err());
    }

    #[test]
    fn module_counts_cover_all_params() {
        let cfg = EncoderConfig::preset("small").unwrap();
        let counts = cfg.module_counts();
        assert_eq!(counts[0].0, "stem");
        assert!(counts.iter().any(|(m, _)| m == "stage6.gate"));
        assert_eq!(counts.iter().map(|(_, c)| c).sum::<usize>(), cfg.param_count());
    }

    #[test]
    fn from_params_round_trip() {
        let cfg = EncoderConfig::preset("tiny").unwrap();
        let a = Encoder::build(&cfg, 9).unwrap();
        let b = Encoder::from_params(&cfg, 9, a.params().clone()).unwrap();
        assert_eq!(a.params(), b.params());
        let other = Encoder::build(&EncoderConfig::preset("small").unwrap(), 9).unwrap();
        assert!(Encoder::from_params(&cfg, 9, other.params().clone()).is_err());
    }
}
