//! Dropout bottlenecks on the latent code.
//!
//! A target effective size `n_b` out of `n_l` latent features corresponds to a
//! dropout rate `r = 1 - n_b / n_l`. Three mask families are provided:
//!
//! - random (RABO): every feature of frame `t` is zeroed independently with
//!   probability `r_t`;
//! - hierarchical (HIBO): per frame, `k ~ Binomial(n_l, r_t)` features are
//!   zeroed, always the `k` highest indices, so the kept set is a prefix;
//! - global (GLOBO): the frame rates of a sample are averaged to `r̄` and the
//!   whole code is zeroed with probability `r̄`, otherwise left untouched.
//!
//! During training a sample takes the global branch with probability `p_g`
//! and the configured per-frame family otherwise.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::ndcore::{Graph, Matrix, Rng, Var};
use crate::synthdata::VoiceType;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BottleneckKind {
    /// No dropout: the code always passes unchanged.
    Nobo,
    Rabo,
    Hibo,
}

impl BottleneckKind {
    pub const ALL: [BottleneckKind; 3] = [BottleneckKind::Nobo, BottleneckKind::Rabo, BottleneckKind::Hibo];

    pub fn name(self) -> &'static str {
        match self {
            BottleneckKind::Nobo => "nobo",
            BottleneckKind::Rabo => "rabo",
            BottleneckKind::Hibo => "hibo",
        }
    }
}

impl std::str::FromStr for BottleneckKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nobo" => Ok(BottleneckKind::Nobo),
            "rabo" => Ok(BottleneckKind::Rabo),
            "hibo" => Ok(BottleneckKind::Hibo),
            _ => Err(config_err(format!("unknown bottleneck kind `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BottleneckConfig {
    pub kind: BottleneckKind,
    pub latent_size: usize,
    /// Effective size `n_b` for voiced frames of each voice type. Unvoiced
    /// frames always use the full latent.
    pub target_size: BTreeMap<VoiceType, usize>,
    /// Probability `p_g` of taking the global branch for a sample.
    pub p_global: f64,
    /// Multiply kept entries by `1 / (1 - r_t)` on the per-frame branch.
    #[serde(default)]
    pub rescale_kept: bool,
}

impl BottleneckConfig {
    /// `n_b = 3` for singing-like and `8` for speech-like voiced frames.
    pub fn new(kind: BottleneckKind, latent_size: usize, p_global: f64) -> Self {
        Self {
            kind,
            latent_size,
            target_size: BTreeMap::from([(VoiceType::SpeechLike, 8), (VoiceType::SingingLike, 3)]),
            p_global,
            rescale_kept: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_size == 0 {
            return Err(config_err("bottleneck.latent_size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.p_global) {
            return Err(config_err(format!(
                "bottleneck.p_global must lie in [0, 1], got {}",
                self.p_global
            )));
        }
        for (vt, &nb) in &self.target_size {
            if nb == 0 || nb > self.latent_size {
                return Err(config_err(format!(
                    "bottleneck.target_size.{}: need 0 < n_b <= n_l = {}, got {nb}",
                    vt.name(),
                    self.latent_size
                )));
            }
        }
        Ok(())
    }

    /// Dropout rate for a frame of the given class.
    pub fn rate_for(&self, class: FrameClass) -> Result<f64> {
        match class {
            FrameClass::Unvoiced => Ok(0.0),
            FrameClass::Voiced(vt) => {
                let nb = self.target_size.get(&vt).copied().ok_or_else(|| {
                    config_err(format!("no bottleneck target size for voice type `{}`", vt.name()))
                })?;
                rate_for_target(nb, self.latent_size)
            }
        }
    }
}

/// What the bottleneck needs to know about a frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameClass {
    Voiced(VoiceType),
    Unvoiced,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    PerFrame,
    GlobalKeep,
    GlobalZero,
}

impl Branch {
    pub fn is_global(self) -> bool {
        !matches!(self, Branch::PerFrame)
    }
}

/// Per-frame rates, the branch taken and the realized `frames × n_l` mask.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutPlan {
    pub rates: Vec<f64>,
    pub branch: Branch,
    pub mask: Matrix,
}

impl DropoutPlan {
    /// The plan used at inference: every feature kept.
    pub fn keep_all(frames: usize, latent_size: usize) -> Self {
        Self {
            rates: vec![0.0; frames],
            branch: Branch::GlobalKeep,
            mask: Matrix::filled(frames, latent_size, 1.0),
        }
    }

    /// Number of kept features in each frame.
    pub fn kept_per_frame(&self) -> Vec<usize> {
        (0..self.mask.rows())
            .map(|t| self.mask.row(t).iter().filter(|&&m| m != 0.0).count())
            .collect()
    }

    /// Mask scaled for `apply_bottleneck`: inverted-dropout factors on kept
    /// entries of per-frame plans when `rescale_kept` is set.
    pub fn effective_mask(&self, rescale_kept: bool) -> Matrix {
        if !rescale_kept || self.branch.is_global() {
            return self.mask.clone();
        }
        let mut m = self.mask.clone();
        for (t, &r) in self.rates.iter().enumerate() {
            if r > 0.0 && r < 1.0 {
                let s = 1.0 / (1.0 - r);
                for v in m.row_mut(t) {
                    *v *= s;
                }
            }
        }
        m
    }
}

fn check_sizes(n_b: usize, n_l: usize) -> Result<()> {
    if n_b == 0 || n_b > n_l {
        return Err(config_err(format!("need 0 < n_b <= n_l, got n_b = {n_b}, n_l = {n_l}")));
    }
    Ok(())
}

/// `1 - n_b / n_l`.
pub fn rate_for_target(n_b: usize, n_l: usize) -> Result<f64> {
    check_sizes(n_b, n_l)?;
    Ok(1.0 - n_b as f64 / n_l as f64)
}

/// Probability `(n_b / n_l)^n_l` that independent dropout at rate
/// `1 - n_b / n_l` keeps every one of the `n_l` features.
pub fn survival_probability(n_b: usize, n_l: usize) -> Result<f64> {
    check_sizes(n_b, n_l)?;
    let keep = n_b as f64 / n_l as f64;
    Ok(keep.powi(n_l as i32))
}

fn check_rates(rates: &[f64]) -> Result<()> {
    if let Some((t, r)) = rates.iter().enumerate().find(|(_, r)| !(0.0..=1.0).contains(*r)) {
        return Err(config_err(format!("dropout rate at frame {t} is {r}, outside [0, 1]")));
    }
    Ok(())
}

/// Independent per-feature dropout, rate `rates[t]` for frame `t`.
pub fn rabo_mask(rates: &[f64], n_l: usize, rng: &mut Rng) -> Result<Matrix> {
    check_rates(rates)?;
    let mut mask = Matrix::zeros(rates.len(), n_l);
    for (t, &r) in rates.iter().enumerate() {
        for v in mask.row_mut(t) {
            *v = if rng.bernoulli(r) { 0.0 } else { 1.0 };
        }
    }
    Ok(mask)
}

/// Hierarchical dropout: `k ~ Binomial(n_l, r_t)` features are zeroed per
/// frame, highest indices first.
pub fn hibo_mask(rates: &[f64], n_l: usize, rng: &mut Rng) -> Result<Matrix> {
    check_rates(rates)?;
    let mut mask = Matrix::zeros(rates.len(), n_l);
    for (t, &r) in rates.iter().enumerate() {
        let k = rng.binomial(n_l as u64, r) as usize;
        for v in &mut mask.row_mut(t)[..n_l - k] {
            *v = 1.0;
        }
    }
    Ok(mask)
}

/// Zeroes the whole sample with probability equal to its mean frame rate.
pub fn globo_decide(rates: &[f64], rng: &mut Rng) -> Result<Branch> {
    if rates.is_empty() {
        return Err(config_err("global dropout needs at least one frame rate"));
    }
    check_rates(rates)?;
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    Ok(if rng.bernoulli(mean) {
        Branch::GlobalZero
    } else {
        Branch::GlobalKeep
    })
}

/// Draws the dropout plan for one training sample.
///
/// The global/per-frame decision is always the first draw from `rng`, for
/// every kind, so streams stay aligned across configurations.
pub fn make_plan(config: &BottleneckConfig, classes: &[FrameClass], rng: &mut Rng) -> Result<DropoutPlan> {
    config.validate()?;
    let n_l = config.latent_size;
    let rates = classes
        .iter()
        .map(|&c| config.rate_for(c))
        .collect::<Result<Vec<f64>>>()?;
    let take_global = rng.bernoulli(config.p_global);

    if config.kind == BottleneckKind::Nobo {
        return Ok(DropoutPlan {
            rates: vec![0.0; classes.len()],
            branch: Branch::PerFrame,
            mask: Matrix::filled(classes.len(), n_l, 1.0),
        });
    }
    if take_global && !rates.is_empty() {
        let branch = globo_decide(&rates, rng)?;
        let fill = if branch == Branch::GlobalZero { 0.0 } else { 1.0 };
        return Ok(DropoutPlan {
            mask: Matrix::filled(rates.len(), n_l, fill),
            rates,
            branch,
        });
    }
    let mask = match config.kind {
        BottleneckKind::Rabo => rabo_mask(&rates, n_l, rng)?,
        BottleneckKind::Hibo => hibo_mask(&rates, n_l, rng)?,
        BottleneckKind::Nobo => unreachable!(),
    };
    Ok(DropoutPlan {
        rates,
        branch: Branch::PerFrame,
        mask,
    })
}

/// Records `latent ⊙ mask` on the graph; masked entries pass no gradient.
pub fn apply_bottleneck(graph: &mut Graph<'_>, latent: Var, plan: &DropoutPlan, rescale_kept: bool) -> Result<Var> {
    let shape = graph.value(latent).shape();
    if shape != plan.mask.shape() {
        return Err(Error::Dimension {
            op: "apply_bottleneck",
            left: shape,
            right: plan.mask.shape(),
        });
    }
    graph.mul_const(latent, plan.effective_mask(rescale_kept))
}
