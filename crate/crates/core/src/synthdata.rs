//! Synthetic controllable corpus.
//!
//! A voiced frame is a log-frequency spectrum made of Gaussian bumps at the
//! harmonics `k · f`, `f = f_ref · 2^(a / 1200)`, on bins spaced
//! `1 / bins_per_octave` octaves apart starting at `f_min`:
//!
//! ```text
//! p_k(a)  = (log2(k f / f_min)) · bins_per_octave          continuous bin of harmonic k
//! E_z(u)  = 1 + (depth / d) · Σ_j z_j cos(π (j + 1) u)     envelope, u = bin / (n_bins - 1)
//! x_b     = noise_floor + Σ_k k⁻¹ · E_z(u_k) · exp(-(b - p_k)² / 2σ²)
//! ```
//!
//! The control `a` (cents relative to `f_ref`) translates the harmonic pattern
//! along the bin axis; the content `z ∈ [-1, 1]^d` shapes the envelope, which
//! is linear in `z`. With `z ∈ [-1, 1]^d` the envelope stays within
//! `1 ± depth`, so the first harmonic remains the strongest peak.
//!
//! Unvoiced frames carry no harmonic structure:
//! `x_b = noise_floor + level · E_z(u_b) · (0.75 + 0.5 η_b)`, `η_b ~ U[0, 1)`.
//!
//! [`ControlEstimator`] recovers `a` from a frame by maximizing the normalized
//! correlation with the neutral-envelope comb `x(a, z = 0)` over a 10-cent grid,
//! refined by parabolic interpolation.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::container::{self, CORPUS_MAGIC};
use crate::error::{config_err, Error, Result};
use crate::ndcore::matrix::gemm;
use crate::ndcore::{stable_hash64, Matrix, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VoiceType {
    #[serde(rename = "speech")]
    SpeechLike,
    #[serde(rename = "singing")]
    SingingLike,
}

impl VoiceType {
    pub const ALL: [VoiceType; 2] = [VoiceType::SpeechLike, VoiceType::SingingLike];

    pub fn name(self) -> &'static str {
        match self {
            VoiceType::SpeechLike => "speech",
            VoiceType::SingingLike => "singing",
        }
    }
}

impl fmt::Display for VoiceType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlRange {
    pub lo: f64,
    pub hi: f64,
}

impl ControlRange {
    pub fn contains(&self, a: f64) -> bool {
        a >= self.lo && a <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// Lower bound of the top quartile.
    pub fn high_threshold(&self) -> f64 {
        self.lo + 0.75 * self.width()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenParams {
    pub n_bins: usize,
    /// Frequency at control 0, in Hz.
    pub f_ref: f64,
    /// Centre frequency of bin 0, in Hz.
    pub f_min: f64,
    pub bins_per_octave: f64,
    /// Standard deviation of a harmonic bump, in bins.
    pub bump_width: f64,
    pub envelope_depth: f64,
    pub noise_floor: f64,
    pub unvoiced_level: f64,
    pub unvoiced_fraction: f64,
    /// Probability that a singing-like sample is drawn from the top quartile.
    pub high_pitch_prob: f64,
    pub content_dims: BTreeMap<VoiceType, usize>,
    pub control_range: BTreeMap<VoiceType, ControlRange>,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            n_bins: 80,
            f_ref: 220.0,
            f_min: 100.0,
            bins_per_octave: 16.0,
            bump_width: 1.0,
            envelope_depth: 0.3,
            noise_floor: 0.01,
            unvoiced_level: 0.25,
            unvoiced_fraction: 0.15,
            high_pitch_prob: 0.10,
            content_dims: BTreeMap::from([(VoiceType::SpeechLike, 8), (VoiceType::SingingLike, 3)]),
            control_range: BTreeMap::from([
                (VoiceType::SpeechLike, ControlRange { lo: -1200.0, hi: 1200.0 }),
                (VoiceType::SingingLike, ControlRange { lo: -1200.0, hi: 2400.0 }),
            ]),
        }
    }
}

pub const MAX_CONTENT_DIMS: usize = 8;
const MAX_HARMONICS: usize = 48;

impl GenParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_bins < 2 {
            return Err(config_err("gen.n_bins must be at least 2"));
        }
        for (name, v) in [
            ("f_ref", self.f_ref),
            ("f_min", self.f_min),
            ("bins_per_octave", self.bins_per_octave),
            ("bump_width", self.bump_width),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config_err(format!("gen.{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.envelope_depth) {
            return Err(config_err("gen.envelope_depth must lie in [0, 1)"));
        }
        if !(self.noise_floor >= 0.0) || !(self.unvoiced_level >= 0.0) {
            return Err(config_err("gen.noise_floor and gen.unvoiced_level must be >= 0"));
        }
        for (name, p) in [
            ("unvoiced_fraction", self.unvoiced_fraction),
            ("high_pitch_prob", self.high_pitch_prob),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(config_err(format!("gen.{name} must lie in [0, 1), got {p}")));
            }
        }
        for vt in VoiceType::ALL {
            let d = self
                .content_dims
                .get(&vt)
                .ok_or_else(|| config_err(format!("gen.content_dims.{vt} missing")))?;
            if *d > MAX_CONTENT_DIMS {
                return Err(config_err(format!("gen.content_dims.{vt} = {d} exceeds {MAX_CONTENT_DIMS}")));
            }
            let r = self
                .control_range
                .get(&vt)
                .ok_or_else(|| config_err(format!("gen.control_range.{vt} missing")))?;
            if !(r.lo < r.hi) {
                return Err(config_err(format!("gen.control_range.{vt}: lo must be below hi")));
            }
        }
        let sp = self.range(VoiceType::SpeechLike);
        let si = self.range(VoiceType::SingingLike);
        if !(si.hi > sp.hi) {
            return Err(config_err("gen.control_range.singing must extend above the speech range"));
        }
        Ok(())
    }

    pub fn range(&self, vt: VoiceType) -> ControlRange {
        self.control_range[&vt]
    }

    pub fn dims(&self, vt: VoiceType) -> usize {
        self.content_dims[&vt]
    }

    /// Union of the voice-type ranges.
    pub fn global_range(&self) -> ControlRange {
        let lo = self.control_range.values().map(|r| r.lo).fold(f64::INFINITY, f64::min);
        let hi = self.control_range.values().map(|r| r.hi).fold(f64::NEG_INFINITY, f64::max);
        ControlRange { lo, hi }
    }

    /// Continuous bin index of frequency `f`.
    pub fn bin_of(&self, f: f64) -> f64 {
        (f / self.f_min).log2() * self.bins_per_octave
    }

    /// Continuous bin of the first harmonic at control `a`.
    pub fn fundamental_bin(&self, a: f64) -> f64 {
        self.bin_of(self.f_ref * (a / 1200.0).exp2())
    }

    /// Stable identifier of the parameters, used to match artifacts.
    pub fn fingerprint(&self) -> u64 {
        stable_hash64(&bincode::serialize(self).expect("params serialize"))
    }

    fn envelope(&self, z: &[f64], u: f64) -> f64 {
        if z.is_empty() {
            return 1.0;
        }
        let scale = self.envelope_depth / z.len() as f64;
        let s: f64 = z
            .iter()
            .enumerate()
            .map(|(j, zj)| zj * (std::f64::consts::PI * (j + 1) as f64 * u).cos())
            .sum();
        1.0 + scale * s
    }

    /// Voiced frame without range checks; the estimator also renders
    /// templates slightly outside the control range.
    fn render_voiced(&self, a: f64, z: &[f64], out: &mut [f64]) {
        out.fill(self.noise_floor);
        let p1 = self.fundamental_bin(a);
        let last = (self.n_bins - 1) as f64;
        let reach = 5.0 * self.bump_width;
        let inv2s2 = 1.0 / (2.0 * self.bump_width * self.bump_width);
        for k in 1..=MAX_HARMONICS {
            let pk = p1 + (k as f64).log2() * self.bins_per_octave;
            if pk > last + reach {
                break;
            }
            if pk < -reach {
                continue;
            }
            let amp = self.envelope(z, pk / last) / k as f64;
            let lo = (pk - reach).floor().max(0.0) as usize;
            let hi = ((pk + reach).ceil() as usize).min(self.n_bins - 1);
            for (b, x) in out.iter_mut().enumerate().take(hi + 1).skip(lo) {
                let d = b as f64 - pk;
                *x += amp * (-d * d * inv2s2).exp();
            }
        }
    }

    fn render_unvoiced(&self, z: &[f64], rng: &mut Rng, out: &mut [f64]) {
        let last = (self.n_bins - 1) as f64;
        for (b, x) in out.iter_mut().enumerate() {
            let eta = rng.uniform();
            *x = self.noise_floor + self.unvoiced_level * self.envelope(z, b as f64 / last) * (0.75 + 0.5 * eta);
        }
    }
}

/// One voiced frame for control `a` (cents) and content `z`.
pub fn synth_frame(a: f64, z: &[f64], params: &GenParams) -> Result<Vec<f64>> {
    if z.len() > MAX_CONTENT_DIMS {
        return Err(Error::Generation(format!(
            "content has {} dims, at most {MAX_CONTENT_DIMS} supported",
            z.len()
        )));
    }
    let g = params.global_range();
    if !g.contains(a) || !a.is_finite() {
        return Err(Error::Generation(format!(
            "control {a} cents outside [{}, {}]",
            g.lo, g.hi
        )));
    }
    let mut out = vec![0.0; params.n_bins];
    params.render_voiced(a, z, &mut out);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub voice_type: VoiceType,
    /// Drawn from the top quartile of the singing range.
    pub high_pitch: bool,
    /// `T × n_bins`.
    pub frames: Matrix,
    /// Cents relative to `f_ref`; `None` on unvoiced frames.
    pub control: Vec<Option<f64>>,
    /// Ground-truth content, `T × d`; diagnostics only.
    pub content: Matrix,
}

impl Sample {
    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn voiced(&self, t: usize) -> bool {
        self.control[t].is_some()
    }

    pub fn voiced_count(&self) -> usize {
        self.control.iter().filter(|c| c.is_some()).count()
    }

    /// Frames `start..start + len` as a new sample.
    pub fn window(&self, start: usize, len: usize) -> Sample {
        Sample {
            voice_type: self.voice_type,
            high_pitch: self.high_pitch,
            frames: self.frames.slice_rows(start, start + len),
            control: self.control[start..start + len].to_vec(),
            content: self.content.slice_rows(start, start + len),
        }
    }
}

/// Smooth interpolation through knots placed every `spacing` frames.
fn knot_curve(len: usize, spacing: usize, mut knot: impl FnMut() -> f64) -> Vec<f64> {
    let n_knots = len / spacing + 2;
    let knots: Vec<f64> = (0..n_knots).map(|_| knot()).collect();
    (0..len)
        .map(|t| {
            let i = t / spacing;
            let frac = (t % spacing) as f64 / spacing as f64;
            let w = 0.5 - 0.5 * (std::f64::consts::PI * frac).cos();
            knots[i] * (1.0 - w) + knots[i + 1] * w
        })
        .collect()
}

const SINGING_CONTENT_SPACING: usize = 16;
const SPEECH_CONTENT_SPACING: usize = 3;
const SPEECH_CONTROL_SPACING: usize = 4;
const SPEECH_EXCURSION: f64 = 500.0;
const VIBRATO_DEPTH: f64 = 20.0;
const VIBRATO_PERIOD: f64 = 6.0;
/// Per-frame probability of leaving the voiced state.
const VOICED_EXIT: f64 = 0.05;

/// One sample of `len` frames.
pub fn gen_sample(voice_type: VoiceType, len: usize, params: &GenParams, rng: &mut Rng) -> Result<Sample> {
    if len == 0 {
        return Err(Error::Generation("sample length must be at least 1".into()));
    }
    params.validate()?;
    let d = params.dims(voice_type);
    let range = params.range(voice_type);

    let spacing = match voice_type {
        VoiceType::SingingLike => SINGING_CONTENT_SPACING,
        VoiceType::SpeechLike => SPEECH_CONTENT_SPACING,
    };
    let dims: Vec<Vec<f64>> = (0..d)
        .map(|_| knot_curve(len, spacing, || rng.uniform_range(-1.0, 1.0)))
        .collect();
    let content = Matrix::from_fn(len, d, |t, j| dims[j][t]);

    let (high_pitch, sub) = match voice_type {
        VoiceType::SingingLike => {
            let q3 = range.high_threshold();
            if rng.bernoulli(params.high_pitch_prob) {
                (true, ControlRange { lo: q3, hi: range.hi })
            } else {
                (false, ControlRange { lo: range.lo, hi: q3 })
            }
        }
        VoiceType::SpeechLike => (false, range),
    };
    let pitch = match voice_type {
        VoiceType::SingingLike => {
            let mut notes = Vec::with_capacity(len);
            while notes.len() < len {
                let dur = 6 + rng.below(11);
                let note = rng.uniform_range(sub.lo, sub.hi);
                notes.extend(std::iter::repeat(note).take(dur));
            }
            notes.truncate(len);
            let phase = rng.uniform_range(0.0, std::f64::consts::TAU);
            (0..len)
                .map(|t| {
                    // two-frame glide into each new note
                    let base = if t > 0 && notes[t] != notes[t - 1] {
                        0.5 * (notes[t] + notes[t - 1])
                    } else {
                        notes[t]
                    };
                    let vib = VIBRATO_DEPTH * (std::f64::consts::TAU * t as f64 / VIBRATO_PERIOD + phase).sin();
                    (base + vib).clamp(sub.lo, sub.hi)
                })
                .collect::<Vec<_>>()
        }
        VoiceType::SpeechLike => {
            let centre = rng.uniform_range(sub.lo, sub.hi);
            knot_curve(len, SPEECH_CONTROL_SPACING, || {
                (centre + rng.uniform_range(-SPEECH_EXCURSION, SPEECH_EXCURSION)).clamp(sub.lo, sub.hi)
            })
        }
    };

    // Two-state chain with stationary unvoiced probability `unvoiced_fraction`.
    let f = params.unvoiced_fraction;
    let enter_voiced = if f > 0.0 { VOICED_EXIT * (1.0 - f) / f } else { 1.0 };
    let mut unvoiced = rng.bernoulli(f);
    let mut voicing = Vec::with_capacity(len);
    for t in 0..len {
        if t > 0 {
            unvoiced = if unvoiced {
                !rng.bernoulli(enter_voiced)
            } else {
                f > 0.0 && rng.bernoulli(VOICED_EXIT)
            };
        }
        voicing.push(!unvoiced);
    }

    let mut frames = Matrix::zeros(len, params.n_bins);
    let mut control = Vec::with_capacity(len);
    for t in 0..len {
        let z = content.row(t);
        if voicing[t] {
            params.render_voiced(pitch[t], z, frames.row_mut(t));
            control.push(Some(pitch[t]));
        } else {
            params.render_unvoiced(z, rng, frames.row_mut(t));
            control.push(None);
        }
    }
    Ok(Sample {
        voice_type,
        high_pitch,
        frames,
        control,
        content,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mix {
    SpeechOnly,
    SingingOnly,
    Mixed,
}

impl Mix {
    pub const ALL: [Mix; 3] = [Mix::SpeechOnly, Mix::SingingOnly, Mix::Mixed];

    pub fn name(self) -> &'static str {
        match self {
            Mix::SpeechOnly => "speechonly",
            Mix::SingingOnly => "singingonly",
            Mix::Mixed => "mixed",
        }
    }
}

impl std::str::FromStr for Mix {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "speechonly" | "speech" => Ok(Mix::SpeechOnly),
            "singingonly" | "singing" => Ok(Mix::SingingOnly),
            "mixed" => Ok(Mix::Mixed),
            _ => Err(config_err(format!("unknown corpus mix `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub params: GenParams,
    pub mix: Mix,
    /// Seed from which every sample stream is derived.
    pub seed: u64,
    pub samples: Vec<Sample>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_samples: usize,
    pub n_frames: usize,
    pub speech_fraction: f64,
    /// Among singing-like samples; 0 when there are none.
    pub high_pitch_fraction: f64,
    pub voiced_fraction: f64,
}

/// `n_samples` samples of `len` frames each.
///
/// One word is drawn from `rng`; sample `i` then uses its own substream, so
/// shards of a corpus can be generated independently.
pub fn make_corpus(mix: Mix, n_samples: usize, len: usize, params: &GenParams, rng: &mut Rng) -> Result<Corpus> {
    if n_samples == 0 {
        return Err(Error::Generation("corpus needs at least one sample".into()));
    }
    params.validate()?;
    let seed = rng.next_u64();
    let samples = (0..n_samples)
        .map(|i| gen_corpus_sample(mix, seed, i, len, params))
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        params: params.clone(),
        mix,
        seed,
        samples,
    })
}

fn gen_corpus_sample(mix: Mix, seed: u64, index: usize, len: usize, params: &GenParams) -> Result<Sample> {
    let mut rng = Rng::derive(seed, &format!("sample/{index}"));
    let vt = match mix {
        Mix::SpeechOnly => VoiceType::SpeechLike,
        Mix::SingingOnly => VoiceType::SingingLike,
        Mix::Mixed => {
            if rng.bernoulli(0.5) {
                VoiceType::SpeechLike
            } else {
                VoiceType::SingingLike
            }
        }
    };
    gen_sample(vt, len, params, &mut rng)
}

impl Corpus {
    pub fn stats(&self) -> CorpusStats {
        let n = self.samples.len();
        let speech = self
            .samples
            .iter()
            .filter(|s| s.voice_type == VoiceType::SpeechLike)
            .count();
        let singing = n - speech;
        let high = self.samples.iter().filter(|s| s.high_pitch).count();
        let frames: usize = self.samples.iter().map(Sample::len).sum();
        let voiced: usize = self.samples.iter().map(Sample::voiced_count).sum();
        CorpusStats {
            n_samples: n,
            n_frames: frames,
            speech_fraction: speech as f64 / n as f64,
            high_pitch_fraction: if singing > 0 { high as f64 / singing as f64 } else { 0.0 },
            voiced_fraction: if frames > 0 { voiced as f64 / frames as f64 } else { 0.0 },
        }
    }

    pub const FORMAT_VERSION: u32 = 1;

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        container::encode(CORPUS_MAGIC, Self::FORMAT_VERSION, self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        container::decode(CORPUS_MAGIC, Self::FORMAT_VERSION, bytes)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Result of [`ControlEstimator::estimate`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlEstimate {
    pub cents: f64,
    /// Normalized correlation at the best grid point.
    pub score: f64,
}

/// Comb-template control estimator built from the generator itself.
#[derive(Clone, Debug)]
pub struct ControlEstimator {
    grid: Vec<f64>,
    /// `n_bins × grid.len()`, each column centred and unit-norm.
    templates: Matrix,
    threshold: f64,
}

impl ControlEstimator {
    pub const GRID_STEP: f64 = 10.0;
    pub const GRID_MARGIN: f64 = 300.0;
    pub const DEFAULT_THRESHOLD: f64 = 0.5;

    pub fn new(params: &GenParams) -> Self {
        Self::with_threshold(params, Self::DEFAULT_THRESHOLD)
    }

    pub fn with_threshold(params: &GenParams, threshold: f64) -> Self {
        let g = params.global_range();
        let lo = g.lo - Self::GRID_MARGIN;
        let n = ((g.hi - g.lo + 2.0 * Self::GRID_MARGIN) / Self::GRID_STEP).round() as usize + 1;
        let grid: Vec<f64> = (0..n).map(|i| lo + i as f64 * Self::GRID_STEP).collect();
        let mut templates = Matrix::zeros(params.n_bins, n);
        let mut buf = vec![0.0; params.n_bins];
        for (i, &a) in grid.iter().enumerate() {
            params.render_voiced(a, &[], &mut buf);
            center_normalize(&mut buf);
            for (b, v) in buf.iter().enumerate() {
                templates.set(b, i, *v);
            }
        }
        Self {
            grid,
            templates,
            threshold,
        }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// `None` when no template correlates above the threshold.
    pub fn estimate(&self, frame: &[f64]) -> Option<ControlEstimate> {
        let m = Matrix::from_vec(1, frame.len(), frame.to_vec()).ok()?;
        self.estimate_rows(&m).pop().flatten()
    }

    /// Estimates for every row of `frames`.
    pub fn estimate_rows(&self, frames: &Matrix) -> Vec<Option<ControlEstimate>> {
        assert_eq!(frames.cols(), self.templates.rows(), "frame width");
        let mut centred = frames.clone();
        let mut valid = vec![true; frames.rows()];
        for (t, ok) in valid.iter_mut().enumerate() {
            let row = centred.row_mut(t);
            *ok = row.iter().all(|v| v.is_finite()) && center_normalize(row);
            if !*ok {
                row.fill(0.0);
            }
        }
        let mut scores = Matrix::zeros(frames.rows(), self.grid.len());
        gemm(&centred, false, &self.templates, false, 0.0, &mut scores);
        (0..frames.rows())
            .map(|t| if valid[t] { self.pick(scores.row(t)) } else { None })
            .collect()
    }

    fn pick(&self, scores: &[f64]) -> Option<ControlEstimate> {
        let (best, &score) = scores
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))?;
        if score < self.threshold {
            return None;
        }
        let mut cents = self.grid[best];
        if best > 0 && best + 1 < scores.len() {
            let (l, c, r) = (scores[best - 1], score, scores[best + 1]);
            let denom = l - 2.0 * c + r;
            if denom < 0.0 {
                let shift = 0.5 * (l - r) / denom;
                cents += shift.clamp(-0.5, 0.5) * Self::GRID_STEP;
            }
        }
        Some(ControlEstimate { cents, score })
    }
}

/// Subtracts the mean and scales to unit norm; `false` for a constant row.
fn center_normalize(v: &mut [f64]) -> bool {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let mut ss = 0.0;
    for x in v.iter_mut() {
        *x -= mean;
        ss += *x * *x;
    }
    let norm = ss.sqrt();
    if norm < 1e-12 {
        return false;
    }
    for x in v.iter_mut() {
        *x /= norm;
    }
    true
}

/// Estimate for a single frame; see [`ControlEstimator`].
pub fn estimate_control(frame: &[f64], params: &GenParams) -> Option<ControlEstimate> {
    ControlEstimator::new(params).estimate(frame)
}
