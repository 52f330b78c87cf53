//! Conditional bottleneck auto-encoder and its training loop.
//!
//! The encoder sees a window of `2k + 1` frames (edges replicated) and emits
//! one `n_l`-dimensional code per frame. The bottleneck masks the code, and the
//! decoder maps `(masked code, y)` back to a frame. Only the decoder receives
//! the conditioning `y = (normalized control, voiced flag)`.

use serde::{Deserialize, Serialize};

use crate::bottleneck::{apply_bottleneck, make_plan, BottleneckConfig, DropoutPlan, FrameClass};
use crate::container::{self, CHECKPOINT_MAGIC};
use crate::error::{config_err, Error, Result};
use crate::ndcore::{adam_step, ActivationKind, AdamConfig, AdamState, Dense, Graph, Matrix, Rng, Var};
use crate::synthdata::{ControlRange, Corpus, GenParams, Sample};

/// Width of the conditioning vector.
pub const COND_DIM: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_bins: usize,
    pub latent_size: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    /// Frames of context on each side of the encoded frame.
    pub context: usize,
    /// Controls in this range map linearly onto `[-1, 1]`.
    pub control_range: ControlRange,
}

impl ModelConfig {
    pub fn new(params: &GenParams, latent_size: usize) -> Self {
        Self {
            n_bins: params.n_bins,
            latent_size,
            hidden_width: 256,
            hidden_layers: 3,
            context: 2,
            control_range: params.global_range(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_bins == 0 || self.latent_size == 0 || self.hidden_width == 0 {
            return Err(config_err("model.n_bins, model.latent_size and model.hidden_width must be positive"));
        }
        if !(self.control_range.lo < self.control_range.hi) {
            return Err(config_err("model.control_range: lo must be below hi"));
        }
        Ok(())
    }

    pub fn encoder_input(&self) -> usize {
        (2 * self.context + 1) * self.n_bins
    }

    pub fn decoder_input(&self) -> usize {
        self.latent_size + COND_DIM
    }
}

/// Decoder conditioning, `T × 2`: column 0 is the control mapped onto
/// `[-1, 1]` over the model's control range, column 1 the voiced flag.
/// Unvoiced frames carry `(0, 0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conditioning(pub Matrix);

impl Conditioning {
    pub fn normalize(a: f64, range: &ControlRange) -> f64 {
        let mid = 0.5 * (range.lo + range.hi);
        (a - mid) / (0.5 * range.width())
    }

    /// Ground-truth conditioning shifted by `offset` cents on voiced frames.
    pub fn from_sample(sample: &Sample, offset: f64, range: &ControlRange) -> Self {
        let mut m = Matrix::zeros(sample.len(), COND_DIM);
        for (t, c) in sample.control.iter().enumerate() {
            if let Some(a) = c {
                m.set(t, 0, Self::normalize(a + offset, range));
                m.set(t, 1, 1.0);
            }
        }
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }
}

pub fn frame_classes(sample: &Sample) -> Vec<FrameClass> {
    sample
        .control
        .iter()
        .map(|c| match c {
            Some(_) => FrameClass::Voiced(sample.voice_type),
            None => FrameClass::Unvoiced,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutoEncoder {
    pub config: ModelConfig,
    pub encoder: Vec<Dense>,
    pub decoder: Vec<Dense>,
}

fn stack(input: usize, width: usize, hidden: usize, output: usize, rng: Option<&mut Rng>) -> Vec<Dense> {
    let mut dims = vec![input];
    dims.extend(std::iter::repeat(width).take(hidden));
    dims.push(output);
    let mut layers = Vec::with_capacity(dims.len() - 1);
    let mut rng = rng;
    for (i, w) in dims.windows(2).enumerate() {
        let act = if i + 2 == dims.len() {
            ActivationKind::Linear
        } else {
            ActivationKind::Relu
        };
        layers.push(match rng.as_deref_mut() {
            Some(r) => Dense::init(w[0], w[1], act, r),
            None => Dense::zeros(w[0], w[1], act),
        });
    }
    layers
}

fn record_stack<'a>(layers: &'a [Dense], graph: &mut Graph<'a>, x: Var, params: &mut Vec<Var>) -> Result<Var> {
    let mut h = x;
    for layer in layers {
        let (y, w, b) = layer.record(graph, h)?;
        params.push(w);
        params.push(b);
        h = y;
    }
    Ok(h)
}

impl AutoEncoder {
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut enc_rng = rng.fork("encoder");
        let mut dec_rng = rng.fork("decoder");
        let c = &config;
        Ok(Self {
            encoder: stack(c.encoder_input(), c.hidden_width, c.hidden_layers, c.latent_size, Some(&mut enc_rng)),
            decoder: stack(c.decoder_input(), c.hidden_width, c.hidden_layers, c.n_bins, Some(&mut dec_rng)),
            config,
        })
    }

    /// All weights and biases zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        Ok(Self {
            encoder: stack(c.encoder_input(), c.hidden_width, c.hidden_layers, c.latent_size, None),
            decoder: stack(c.decoder_input(), c.hidden_width, c.hidden_layers, c.n_bins, None),
            config,
        })
    }

    pub fn param_count(&self) -> usize {
        self.encoder.iter().chain(&self.decoder).map(Dense::param_count).sum()
    }

    /// Parameter names in the order used by [`AutoEncoder::params_mut`].
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (part, layers) in [("encoder", &self.encoder), ("decoder", &self.decoder)] {
            for i in 0..layers.len() {
                names.push(format!("{part}.{i}.weight"));
                names.push(format!("{part}.{i}.bias"));
            }
        }
        names
    }

    pub fn params(&self) -> Vec<&Matrix> {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.encoder
            .iter_mut()
            .chain(self.decoder.iter_mut())
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.is_finite())
    }

    /// `T × (2k + 1)·n_bins` context windows, edges replicated.
    pub fn context_input(&self, frames: &Matrix) -> Result<Matrix> {
        let c = &self.config;
        if frames.cols() != c.n_bins {
            return Err(Error::Dimension {
                op: "encode",
                left: frames.shape(),
                right: (frames.rows(), c.n_bins),
            });
        }
        let t_len = frames.rows();
        if t_len == 0 {
            return Err(Error::Model("cannot encode an empty frame sequence".into()));
        }
        if !frames.is_finite() {
            return Err(Error::Model("non-finite input frames".into()));
        }
        let k = c.context as isize;
        let mut out = Matrix::zeros(t_len, c.encoder_input());
        for t in 0..t_len {
            let row = out.row_mut(t);
            for (j, dt) in (-k..=k).enumerate() {
                let src = (t as isize + dt).clamp(0, t_len as isize - 1) as usize;
                row[j * c.n_bins..(j + 1) * c.n_bins].copy_from_slice(frames.row(src));
            }
        }
        Ok(out)
    }

    /// Records the encoder on `graph`; parameter leaves are appended to `params`.
    pub fn record_encoder<'a>(&'a self, graph: &mut Graph<'a>, input: Var, params: &mut Vec<Var>) -> Result<Var> {
        record_stack(&self.encoder, graph, input, params)
    }

    /// Records the decoder on the concatenation `[codes, cond]`.
    pub fn record_decoder<'a>(
        &'a self,
        graph: &mut Graph<'a>,
        codes: Var,
        cond: Var,
        params: &mut Vec<Var>,
    ) -> Result<Var> {
        let x = graph.hconcat(codes, cond)?;
        record_stack(&self.decoder, graph, x, params)
    }

    /// Latent codes `T × n_l`.
    pub fn encode(&self, frames: &Matrix) -> Result<Matrix> {
        let input = self.context_input(frames)?;
        let mut g = Graph::new();
        let x = g.constant(input);
        let c = self.record_encoder(&mut g, x, &mut Vec::new())?;
        Ok(g.value(c).clone())
    }

    /// Reconstructed frames `T × n_bins`.
    pub fn decode(&self, codes: &Matrix, cond: &Conditioning) -> Result<Matrix> {
        if codes.rows() != cond.0.rows() || codes.cols() != self.config.latent_size || cond.0.cols() != COND_DIM {
            return Err(Error::Dimension {
                op: "decode",
                left: codes.shape(),
                right: cond.0.shape(),
            });
        }
        let mut g = Graph::new();
        let c = g.constant(codes.clone());
        let y = g.constant(cond.0.clone());
        let out = self.record_decoder(&mut g, c, y, &mut Vec::new())?;
        Ok(g.value(out).clone())
    }

    /// Encode with the full latent and decode with the control shifted by
    /// `offset` cents on voiced frames.
    pub fn transform(&self, sample: &Sample, offset: f64) -> Result<Matrix> {
        if !self.is_finite() {
            return Err(Error::Model("model has non-finite weights".into()));
        }
        let codes = self.encode(&sample.frames)?;
        self.decode(&codes, &Conditioning::from_sample(sample, offset, &self.config.control_range))
    }

    /// Plain reconstruction MSE of a sample, no dropout.
    pub fn reconstruction_mse(&self, sample: &Sample) -> Result<f64> {
        let out = self.transform(sample, 0.0)?;
        crate::ndcore::mse_value(&out, &sample.frames)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub bottleneck: BottleneckConfig,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: u64,
    /// Frames per step, cropped from one sample.
    pub batch_frames: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(bottleneck: BottleneckConfig, steps: u64, seed: u64) -> Self {
        let adam = AdamConfig::default();
        Self {
            bottleneck,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            steps,
            batch_frames: 32,
            seed,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(config_err("train.steps must be at least 1"));
        }
        if self.batch_frames == 0 {
            return Err(config_err("train.batch_frames must be at least 1"));
        }
        self.adam().validate().map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("train.{}", m.trim_start_matches("adam."))),
            other => other,
        })?;
        self.bottleneck.validate()
    }
}

/// Loss and plan of one [`train_step`].
#[derive(Clone, Debug)]
pub struct StepOutcome {
    /// Reconstruction MSE before the update.
    pub loss: f64,
    pub plan: DropoutPlan,
}

/// Loss and parameter gradients for one sample under a given plan.
pub fn loss_and_grads(model: &AutoEncoder, sample: &Sample, plan: &DropoutPlan, rescale_kept: bool) -> Result<(f64, Vec<Matrix>)> {
    let input = model.context_input(&sample.frames)?;
    let cond = Conditioning::from_sample(sample, 0.0, &model.config.control_range);
    let mut g = Graph::new();
    let mut params = Vec::new();
    let x = g.constant(input);
    let c = model.record_encoder(&mut g, x, &mut params)?;
    let masked = apply_bottleneck(&mut g, c, plan, rescale_kept)?;
    let y = g.constant(cond.0);
    let out = model.record_decoder(&mut g, masked, y, &mut params)?;
    let loss = g.mse(out, sample.frames.clone())?;
    let value = g.value(loss).get(0, 0);
    g.backward(loss)?;
    let grads = params.into_iter().map(|p| g.take_grad(p)).collect();
    Ok((value, grads))
}

/// One optimization step on `sample`: draws a plan, masks the codes, decodes
/// with ground-truth conditioning and applies Adam. Returns the pre-step loss.
pub fn train_step(
    model: &mut AutoEncoder,
    state: &mut AdamState,
    sample: &Sample,
    cfg: &TrainConfig,
    rng: &mut Rng,
    step: u64,
) -> Result<StepOutcome> {
    let plan = make_plan(&cfg.bottleneck, &frame_classes(sample), rng)?;
    let (loss, grads) = loss_and_grads(model, sample, &plan, cfg.bottleneck.rescale_kept)?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { step });
    }
    let names = model.param_names();
    adam_step(&mut model.params_mut(), &grads, &names, state, &cfg.adam())?;
    Ok(StepOutcome { loss, plan })
}

/// Complete, resumable training state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trainer {
    pub model: AutoEncoder,
    pub config: TrainConfig,
    pub optimizer: AdamState,
    pub step: u64,
    pub data_rng: Rng,
    pub bottleneck_rng: Rng,
    /// Pre-step loss of every completed step.
    pub losses: Vec<f64>,
    /// Fingerprint of the generator parameters of the training corpus.
    pub corpus_params: u64,
}

impl Trainer {
    pub const FORMAT_VERSION: u32 = 1;

    pub fn new(model_config: ModelConfig, config: TrainConfig, corpus: &Corpus) -> Result<Self> {
        config.validate()?;
        if config.bottleneck.latent_size != model_config.latent_size {
            return Err(config_err(format!(
                "train.bottleneck.latent_size = {} but model.latent_size = {}",
                config.bottleneck.latent_size, model_config.latent_size
            )));
        }
        if model_config.n_bins != corpus.params.n_bins {
            return Err(Error::Compatibility(format!(
                "model expects {} bins, corpus has {}",
                model_config.n_bins, corpus.params.n_bins
            )));
        }
        let model = AutoEncoder::new(model_config, &mut Rng::derive(config.seed, "init"))?;
        let optimizer = AdamState::new(model.params());
        Ok(Self {
            data_rng: Rng::derive(config.seed, "data"),
            bottleneck_rng: Rng::derive(config.seed, "bottleneck"),
            optimizer,
            model,
            step: 0,
            losses: Vec::new(),
            corpus_params: corpus.params.fingerprint(),
            config,
        })
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.config.steps
    }

    fn pick<'c>(&mut self, corpus: &'c Corpus) -> std::borrow::Cow<'c, Sample> {
        let s = &corpus.samples[self.data_rng.below(corpus.samples.len())];
        let n = self.config.batch_frames;
        if s.len() <= n {
            return std::borrow::Cow::Borrowed(s);
        }
        let start = self.data_rng.below(s.len() - n + 1);
        std::borrow::Cow::Owned(s.window(start, n))
    }

    /// Runs one step; returns its pre-step loss.
    pub fn step(&mut self, corpus: &Corpus) -> Result<f64> {
        if corpus.params.fingerprint() != self.corpus_params {
            return Err(Error::Compatibility("corpus generator parameters differ from the training run".into()));
        }
        let sample = self.pick(corpus);
        let out = train_step(
            &mut self.model,
            &mut self.optimizer,
            &sample,
            &self.config,
            &mut self.bottleneck_rng,
            self.step,
        )?;
        self.step += 1;
        self.losses.push(out.loss);
        Ok(out.loss)
    }

    /// Trains until `steps` or the configured total, whichever comes first.
    pub fn run(&mut self, corpus: &Corpus, until: u64) -> Result<()> {
        let end = until.min(self.config.steps);
        while self.step < end {
            self.step(corpus)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        container::encode(CHECKPOINT_MAGIC, Self::FORMAT_VERSION, self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        container::decode(CHECKPOINT_MAGIC, Self::FORMAT_VERSION, bytes)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Median of a slice; `NaN` for an empty one.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median loss of the first and last tenth of a trace.
pub fn loss_trend(losses: &[f64]) -> (f64, f64) {
    let n = (losses.len() / 10).max(1);
    (median(&losses[..n.min(losses.len())]), median(&losses[losses.len().saturating_sub(n)..]))
}
