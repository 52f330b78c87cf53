//! Evaluation: transposition error curves, latent leakage, discretization and
//! the erasure-channel capacity check.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::model::{AutoEncoder, Conditioning};
use crate::ndcore::{stable_hash64, Matrix, Rng};
use crate::synthdata::{ControlEstimator, ControlRange, Corpus, Sample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Transposition offsets in cents, ascending.
    pub grid: Vec<f64>,
    /// Width in cents of a discretization window.
    pub window: f64,
    /// Windows whose slope falls below this count as plateaus.
    pub slope_threshold: f64,
    /// Lowest offset of the discretization glides.
    pub glide_from: f64,
    /// Highest offset of the discretization glides.
    pub glide_to: f64,
    pub glide_step: f64,
    /// Frames probed with glides, spread evenly over the eligible ones.
    pub glide_frames: usize,
    /// Width in cents of the absolute-target bins.
    pub absolute_bin: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            grid: default_grid(),
            window: 200.0,
            slope_threshold: 0.5,
            glide_from: 1200.0,
            glide_to: 2400.0,
            glide_step: 5.0,
            glide_frames: 48,
            absolute_bin: 200.0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(config_err("eval.grid must not be empty"));
        }
        if self.grid.windows(2).any(|w| !(w[0] < w[1])) || self.grid.iter().any(|g| !g.is_finite()) {
            return Err(config_err("eval.grid must be finite and strictly ascending"));
        }
        for (name, v) in [
            ("window", self.window),
            ("glide_step", self.glide_step),
            ("absolute_bin", self.absolute_bin),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config_err(format!("eval.{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.slope_threshold) {
            return Err(config_err("eval.slope_threshold must lie in [0, 1]"));
        }
        if !(self.glide_from < self.glide_to) {
            return Err(config_err("eval.glide_from must be below eval.glide_to"));
        }
        Ok(())
    }
}

/// Offsets `-2400, -2200, ..., 2400` cents.
pub fn default_grid() -> Vec<f64> {
    (-12..=12).map(|i| i as f64 * 200.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub offset: f64,
    /// Mean `|estimate - (a + offset)|` over frames with an estimate.
    pub mean_abs_error: Option<f64>,
    /// Frames contributing to the mean.
    pub n_frames: usize,
    pub n_no_estimate: usize,
    /// Voiced frames whose target left the voice-type range.
    pub n_out_of_range: usize,
    /// More than half of the eligible frames had no estimate.
    pub collapsed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbsoluteBin {
    pub target_lo: f64,
    pub target_hi: f64,
    pub mean_abs_error: Option<f64>,
    pub n_frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurve {
    pub points: Vec<CurvePoint>,
    /// All offsets pooled, binned by absolute target control.
    pub absolute: Vec<AbsoluteBin>,
    pub n_unvoiced: usize,
}

impl ErrorCurve {
    pub fn at(&self, offset: f64) -> Option<&CurvePoint> {
        self.points.iter().find(|p| p.offset == offset)
    }

    /// Mean error at `offset`; `None` when the offset is missing or no frame
    /// produced an estimate.
    pub fn error_at(&self, offset: f64) -> Option<f64> {
        self.at(offset).and_then(|p| p.mean_abs_error)
    }

    pub fn any_collapsed(&self) -> bool {
        self.points.iter().any(|p| p.collapsed)
    }
}

#[derive(Default)]
struct Acc {
    sum: f64,
    n: usize,
    none: usize,
    out: usize,
}

impl Acc {
    fn mean(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }
}

/// Transposition error for every offset of `grid`.
///
/// Codes are computed once per sample with the full latent; voiced frames are
/// decoded with the shifted control and scored with `estimator`. Frames whose
/// shifted target leaves their voice type's range are skipped and counted.
pub fn error_curve(
    model: &AutoEncoder,
    corpus: &Corpus,
    grid: &[f64],
    estimator: &ControlEstimator,
    absolute_bin: f64,
) -> Result<ErrorCurve> {
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(config_err("eval.grid must be strictly ascending"));
    }
    if !model.is_finite() {
        return Err(Error::Model("model has non-finite weights".into()));
    }
    let global = corpus.params.global_range();
    let n_abs = (global.width() / absolute_bin).ceil() as usize;
    let mut accs: Vec<Acc> = grid.iter().map(|_| Acc::default()).collect();
    let mut abs: Vec<Acc> = (0..n_abs).map(|_| Acc::default()).collect();
    let mut n_unvoiced = 0;

    for sample in &corpus.samples {
        n_unvoiced += sample.len() - sample.voiced_count();
        let range = corpus.params.range(sample.voice_type);
        let codes = model.encode(&sample.frames)?;
        for (acc, &offset) in accs.iter_mut().zip(grid) {
            let rows: Vec<usize> = (0..sample.len())
                .filter(|&t| matches!(sample.control[t], Some(a) if range.contains(a + offset)))
                .collect();
            acc.out += sample.voiced_count() - rows.len();
            if rows.is_empty() {
                continue;
            }
            let (out, targets) = decode_rows(model, sample, &codes, &rows, offset)?;
            for (est, target) in estimator.estimate_rows(&out).into_iter().zip(targets) {
                match est {
                    Some(e) => {
                        let err = (e.cents - target).abs();
                        acc.sum += err;
                        acc.n += 1;
                        let b = ((target - global.lo) / absolute_bin).floor() as usize;
                        let bin = &mut abs[b.min(n_abs - 1)];
                        bin.sum += err;
                        bin.n += 1;
                    }
                    None => acc.none += 1,
                }
            }
        }
    }

    let points = grid
        .iter()
        .zip(&accs)
        .map(|(&offset, a)| CurvePoint {
            offset,
            mean_abs_error: a.mean(),
            n_frames: a.n,
            n_no_estimate: a.none,
            n_out_of_range: a.out,
            collapsed: 2 * a.none > a.n + a.none,
        })
        .collect();
    let absolute = abs
        .iter()
        .enumerate()
        .map(|(i, a)| AbsoluteBin {
            target_lo: global.lo + i as f64 * absolute_bin,
            target_hi: (global.lo + (i + 1) as f64 * absolute_bin).min(global.hi),
            mean_abs_error: a.mean(),
            n_frames: a.n,
        })
        .collect();
    Ok(ErrorCurve {
        points,
        absolute,
        n_unvoiced,
    })
}

/// Decodes the listed frames with their control shifted by `offset`; returns
/// the outputs and the targets `a + offset`.
fn decode_rows(
    model: &AutoEncoder,
    sample: &Sample,
    codes: &Matrix,
    rows: &[usize],
    offset: f64,
) -> Result<(Matrix, Vec<f64>)> {
    let range = &model.config.control_range;
    let mut c = Matrix::zeros(rows.len(), codes.cols());
    let mut y = Matrix::zeros(rows.len(), 2);
    let mut targets = Vec::with_capacity(rows.len());
    for (i, &t) in rows.iter().enumerate() {
        let target = sample.control[t].expect("voiced row") + offset;
        c.row_mut(i).copy_from_slice(codes.row(t));
        y.set(i, 0, Conditioning::normalize(target, range));
        y.set(i, 1, 1.0);
        targets.push(target);
    }
    Ok((model.decode(&c, &Conditioning(y))?, targets))
}

/// Held-out coefficient of determination of a ridge regression from codes to
/// controls.
///
/// Even rows fit, odd rows test. Features and target are standardized with
/// the fitting half's statistics (constant features get unit scale), the ridge
/// penalty is `1e-3` on standardized weights, and the result is clamped to
/// `[0, 1]`.
pub fn leakage_probe(codes: &Matrix, controls: &[f64]) -> Result<f64> {
    const LAMBDA: f64 = 1e-3;
    let (n, d) = codes.shape();
    if controls.len() != n {
        return Err(Error::Dimension {
            op: "leakage_probe",
            left: codes.shape(),
            right: (controls.len(), 1),
        });
    }
    if n < 10 * d || n < 4 {
        return Err(Error::Evaluation(format!(
            "leakage probe needs at least {} frames for {d} features, got {n}",
            (10 * d).max(4)
        )));
    }
    if !codes.is_finite() || controls.iter().any(|c| !c.is_finite()) {
        return Err(Error::Evaluation("non-finite probe input".into()));
    }
    let fit: Vec<usize> = (0..n).step_by(2).collect();
    let test: Vec<usize> = (1..n).step_by(2).collect();

    let mean_std = |idx: &[usize], f: &dyn Fn(usize) -> f64| {
        let m = idx.iter().map(|&i| f(i)).sum::<f64>() / idx.len() as f64;
        let v = idx.iter().map(|&i| (f(i) - m).powi(2)).sum::<f64>() / idx.len() as f64;
        (m, v.sqrt())
    };
    let (y_mean, y_std) = mean_std(&fit, &|i| controls[i]);
    let (_, y_test_std) = mean_std(&test, &|i| controls[i]);
    if y_std < 1e-12 || y_test_std < 1e-12 {
        return Err(Error::Evaluation("controls are constant; leakage is undefined".into()));
    }
    let stats: Vec<(f64, f64)> = (0..d)
        .map(|j| {
            let (m, s) = mean_std(&fit, &|i| codes.get(i, j));
            (m, if s < 1e-12 { 1.0 } else { s })
        })
        .collect();
    let design = |idx: &[usize]| {
        DMatrix::from_fn(idx.len(), d, |r, j| (codes.get(idx[r], j) - stats[j].0) / stats[j].1)
    };
    let xf = design(&fit);
    let yf = DVector::from_fn(fit.len(), |r, _| (controls[fit[r]] - y_mean) / y_std);
    let mut gram = xf.transpose() * &xf;
    for j in 0..d {
        gram[(j, j)] += LAMBDA;
    }
    let beta = gram
        .cholesky()
        .ok_or_else(|| Error::Evaluation("ridge system is not positive definite".into()))?
        .solve(&(xf.transpose() * yf));
    let pred = design(&test) * beta;
    let yt: Vec<f64> = test.iter().map(|&i| (controls[i] - y_mean) / y_std).collect();
    let yt_mean = yt.iter().sum::<f64>() / yt.len() as f64;
    let ss_res: f64 = yt.iter().zip(pred.iter()).map(|(y, p)| (y - p).powi(2)).sum();
    let ss_tot: f64 = yt.iter().map(|y| (y - yt_mean).powi(2)).sum();
    Ok((1.0 - ss_res / ss_tot).clamp(0.0, 1.0))
}

/// Full-latent codes and controls of every voiced frame of the corpus.
pub fn voiced_codes(model: &AutoEncoder, corpus: &Corpus) -> Result<(Matrix, Vec<f64>)> {
    let mut parts = Vec::new();
    let mut controls = Vec::new();
    for s in &corpus.samples {
        let codes = model.encode(&s.frames)?;
        let rows: Vec<usize> = (0..s.len()).filter(|&t| s.voiced(t)).collect();
        let mut m = Matrix::zeros(rows.len(), codes.cols());
        for (i, &t) in rows.iter().enumerate() {
            m.row_mut(i).copy_from_slice(codes.row(t));
            controls.push(s.control[t].expect("voiced"));
        }
        parts.push(m);
    }
    Ok((Matrix::vstack(&parts)?, controls))
}

/// Fraction of `window`-cent target windows whose least-squares slope of
/// estimate on target is below `threshold`.
///
/// Windows tile the target span starting at its minimum; windows with fewer
/// than two distinct targets are ignored.
pub fn discretization_index(targets: &[f64], estimates: &[f64], window: f64, threshold: f64) -> Result<f64> {
    if targets.len() != estimates.len() {
        return Err(Error::Evaluation(format!(
            "{} targets but {} estimates",
            targets.len(),
            estimates.len()
        )));
    }
    if targets.len() < 100 {
        return Err(Error::Evaluation(format!("need at least 100 points, got {}", targets.len())));
    }
    let lo = targets.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = targets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi - lo >= 800.0) {
        return Err(Error::Evaluation(format!("targets span {} cents, need 800", hi - lo)));
    }
    let n_win = (((hi - lo) / window).floor() as usize).max(1);
    let mut groups: Vec<Vec<(f64, f64)>> = vec![Vec::new(); n_win];
    for (&t, &e) in targets.iter().zip(estimates) {
        let w = (((t - lo) / window).floor() as usize).min(n_win - 1);
        groups[w].push((t, e));
    }
    let mut counted = 0usize;
    let mut flat = 0usize;
    for g in &groups {
        if let Some(slope) = ls_slope(g) {
            counted += 1;
            if slope < threshold {
                flat += 1;
            }
        }
    }
    if counted == 0 {
        return Err(Error::Evaluation("no window holds two distinct targets".into()));
    }
    Ok(flat as f64 / counted as f64)
}

fn ls_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx < 1e-12 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlideSummary {
    /// Mean per-frame discretization index; `None` when no glide qualified.
    pub index: Option<f64>,
    pub n_glides: usize,
    /// Glides dropped for too few estimates or too narrow a span.
    pub n_skipped: usize,
}

/// Discretization over high offsets, measured per frame.
///
/// For each probed voiced frame, the control is swept from `a + glide_from`
/// to `min(a + glide_to, range.hi)` in `glide_step` cents with the frame's
/// code held fixed; the estimates along the sweep are scored with
/// [`discretization_index`] and the per-frame indices are averaged. A frame
/// qualifies when its sweep spans at least 800 cents.
pub fn glide_discretization(
    model: &AutoEncoder,
    corpus: &Corpus,
    estimator: &ControlEstimator,
    cfg: &EvalConfig,
) -> Result<GlideSummary> {
    let span_needed = 800.0;
    let mut eligible: Vec<(usize, usize, f64, ControlRange)> = Vec::new();
    for (i, s) in corpus.samples.iter().enumerate() {
        let range = corpus.params.range(s.voice_type);
        for t in 0..s.len() {
            if let Some(a) = s.control[t] {
                let top = (a + cfg.glide_to).min(range.hi);
                if top - (a + cfg.glide_from) >= span_needed {
                    eligible.push((i, t, a, range));
                }
            }
        }
    }
    let n = cfg.glide_frames.min(eligible.len());
    let mut indices = Vec::new();
    let mut skipped = 0;
    let range = &model.config.control_range;
    for j in 0..n {
        let (i, t, a, vr) = eligible[j * eligible.len() / n];
        let s = &corpus.samples[i];
        let lo = t.saturating_sub(model.config.context);
        let hi = (t + model.config.context + 1).min(s.len());
        // The window holds the frame's full context, so its code matches the
        // code computed on the whole sample.
        let code = model.encode(&s.frames.slice_rows(lo, hi))?;
        let row = t - lo;
        let top = (a + cfg.glide_to).min(vr.hi);
        let steps = ((top - a - cfg.glide_from) / cfg.glide_step).floor() as usize + 1;
        let mut c = Matrix::zeros(steps, code.cols());
        let mut y = Matrix::zeros(steps, 2);
        let mut targets = Vec::with_capacity(steps);
        for k in 0..steps {
            let target = a + cfg.glide_from + k as f64 * cfg.glide_step;
            c.row_mut(k).copy_from_slice(code.row(row));
            y.set(k, 0, Conditioning::normalize(target, range));
            y.set(k, 1, 1.0);
            targets.push(target);
        }
        let out = model.decode(&c, &Conditioning(y))?;
        let (mut tg, mut es) = (Vec::new(), Vec::new());
        for (e, target) in estimator.estimate_rows(&out).into_iter().zip(targets) {
            if let Some(e) = e {
                tg.push(target);
                es.push(e.cents);
            }
        }
        match discretization_index(&tg, &es, cfg.window, cfg.slope_threshold) {
            Ok(ix) => indices.push(ix),
            Err(_) => skipped += 1,
        }
    }
    Ok(GlideSummary {
        index: (!indices.is_empty()).then(|| indices.iter().sum::<f64>() / indices.len() as f64),
        n_glides: indices.len(),
        n_skipped: skipped,
    })
}

/// Simulates a single erasure-channel feature: a uniform symbol from
/// `1..=alphabet_size` is replaced by the erasure value 0 with probability
/// `r`. Returns the plug-in mutual information in bits and the analytic value
/// `(1 - r) · log2(alphabet_size)`.
pub fn erasure_capacity_check(alphabet_size: usize, r: f64, n_draws: usize, rng: &mut Rng) -> Result<(f64, f64)> {
    if alphabet_size < 2 {
        return Err(config_err("alphabet_size must be at least 2"));
    }
    if !(0.0..=1.0).contains(&r) {
        return Err(config_err(format!("erasure rate {r} outside [0, 1]")));
    }
    if n_draws == 0 {
        return Err(config_err("n_draws must be positive"));
    }
    let a = alphabet_size;
    // joint[x][y], x in 1..=a stored at x-1, y in 0..=a.
    let mut joint = vec![vec![0usize; a + 1]; a];
    for _ in 0..n_draws {
        let x = 1 + rng.below(a);
        let y = if rng.bernoulli(r) { 0 } else { x };
        joint[x - 1][y] += 1;
    }
    let n = n_draws as f64;
    let px: Vec<f64> = joint.iter().map(|row| row.iter().sum::<usize>() as f64 / n).collect();
    let py: Vec<f64> = (0..=a).map(|y| joint.iter().map(|row| row[y]).sum::<usize>() as f64 / n).collect();
    let mut mi = 0.0;
    for (x, row) in joint.iter().enumerate() {
        for (y, &c) in row.iter().enumerate() {
            if c > 0 {
                let p = c as f64 / n;
                mi += p * (p / (px[x] * py[y])).log2();
            }
        }
    }
    Ok((mi.max(0.0), (1.0 - r) * (a as f64).log2()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    /// Hex of the report fingerprint.
    pub fingerprint: String,
    pub checkpoint: String,
    pub corpus_seed: String,
    pub recon_mse: f64,
    pub leakage_r2: f64,
    pub discretization_index: Option<f64>,
    pub n_glides: usize,
    pub collapsed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub summary: EvalSummary,
    pub config: EvalConfig,
    pub curve: ErrorCurve,
}

/// Stable identifier of (checkpoint, corpus, grid).
pub fn report_fingerprint(checkpoint: u64, corpus: &Corpus, cfg: &EvalConfig) -> u64 {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(&checkpoint.to_le_bytes());
    bytes.extend_from_slice(&corpus.seed.to_le_bytes());
    bytes.extend_from_slice(&corpus.params.fingerprint().to_le_bytes());
    bytes.extend_from_slice(&bincode::serialize(cfg).expect("config serializes"));
    stable_hash64(&bytes)
}

/// Runs every evaluation on `corpus`.
///
/// `checkpoint` is the fingerprint of the checkpoint the model came from.
pub fn evaluate(model: &AutoEncoder, corpus: &Corpus, cfg: &EvalConfig, checkpoint: u64) -> Result<EvalReport> {
    cfg.validate()?;
    if model.config.n_bins != corpus.params.n_bins || model.config.control_range != corpus.params.global_range() {
        return Err(Error::Compatibility(
            "model and evaluation corpus disagree on bins or control range".into(),
        ));
    }
    let estimator = ControlEstimator::new(&corpus.params);
    let curve = error_curve(model, corpus, &cfg.grid, &estimator, cfg.absolute_bin)?;
    let (codes, controls) = voiced_codes(model, corpus)?;
    let leakage_r2 = leakage_probe(&codes, &controls)?;
    let glide = glide_discretization(model, corpus, &estimator, cfg)?;
    let mut se = 0.0;
    let mut count = 0usize;
    for s in &corpus.samples {
        let out = model.transform(s, 0.0)?;
        se += out.sub(&s.frames)?.data().iter().map(|v| v * v).sum::<f64>();
        count += out.len();
    }
    let fp = report_fingerprint(checkpoint, corpus, cfg);
    Ok(EvalReport {
        summary: EvalSummary {
            fingerprint: format!("{fp:016x}"),
            checkpoint: format!("{checkpoint:016x}"),
            corpus_seed: format!("{:016x}", corpus.seed),
            recon_mse: se / count as f64,
            leakage_r2,
            discretization_index: glide.index,
            n_glides: glide.n_glides,
            collapsed: curve.any_collapsed(),
        },
        config: cfg.clone(),
        curve,
    })
}

impl EvalReport {
    /// Structured text form: a `[summary]` table, the `[config]` and one
    /// `[[curve.points]]` record per grid point.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Format(e.to_string()))
    }

    /// Tab-separated plot data, one row per grid point. Missing errors are
    /// written as `nan`.
    pub fn curve_tsv(&self) -> String {
        let mut out = String::from("offset\tmean_abs_error\tn_frames\tn_no_estimate\tn_out_of_range\tcollapsed\n");
        for p in &self.curve.points {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                p.offset,
                fmt_opt(p.mean_abs_error),
                p.n_frames,
                p.n_no_estimate,
                p.n_out_of_range,
                p.collapsed as u8
            ));
        }
        out
    }

    /// Tab-separated absolute-target view.
    pub fn absolute_tsv(&self) -> String {
        let mut out = String::from("target_lo\ttarget_hi\tmean_abs_error\tn_frames\n");
        for b in &self.curve.absolute {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                b.target_lo,
                b.target_hi,
                fmt_opt(b.mean_abs_error),
                b.n_frames
            ));
        }
        out
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| format!("{x:.6}"))
}

/// Side-by-side error table of two reports at the given offsets.
pub fn comparison_table(reports: &BTreeMap<String, EvalReport>, offsets: &[f64]) -> String {
    let mut out = String::from("run");
    for o in offsets {
        out.push_str(&format!("\terr@{o}"));
    }
    out.push_str("\tleakage_r2\tdiscretization_index\n");
    for (name, r) in reports {
        out.push_str(name);
        for &o in offsets {
            out.push_str(&format!("\t{}", fmt_opt(r.curve.error_at(o))));
        }
        out.push_str(&format!(
            "\t{:.6}\t{}\n",
            r.summary.leakage_r2,
            fmt_opt(r.summary.discretization_index)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::synthdata::{make_corpus, GenParams, Mix};

    #[test]
    fn default_grid_shape() {
        let g = default_grid();
        assert_eq!(g.len(), 25);
        assert_eq!(g[0], -2400.0);
        assert_eq!(g[24], 2400.0);
        assert!(g.windows(2).all(|w| w[1] - w[0] == 200.0));
    }

    #[test]
    fn perfect_leakage_and_no_leakage() {
        let mut rng = Rng::new(1);
        let n = 2000;
        let controls: Vec<f64> = (0..n).map(|_| rng.uniform_range(-1200.0, 2400.0)).collect();
        let rep = Matrix::from_fn(n, 8, |i, _| controls[i]);
        assert!(leakage_probe(&rep, &controls).unwrap() > 0.99);
        let noise = Matrix::from_fn(n, 8, |_, _| rng.uniform_range(-1.0, 1.0));
        assert!(leakage_probe(&noise, &controls).unwrap() < 0.05);
    }

    #[test]
    fn leakage_is_scale_invariant() {
        let mut rng = Rng::new(2);
        let n = 1000;
        let controls: Vec<f64> = (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let codes = Matrix::from_fn(n, 6, |i, j| controls[i] * (j as f64 - 2.0) + rng.uniform_range(-2.0, 2.0));
        let base = leakage_probe(&codes, &controls).unwrap();
        let scaled = codes.map(|v| 10.0 * v);
        assert!((leakage_probe(&scaled, &controls).unwrap() - base).abs() < 1e-6);
        let mut one_col = codes.clone();
        for i in 0..n {
            one_col.set(i, 3, 10.0 * codes.get(i, 3) + 5.0);
        }
        assert!((leakage_probe(&one_col, &controls).unwrap() - base).abs() < 1e-6);
    }

    #[test]
    fn leakage_preconditions() {
        let c = Matrix::zeros(50, 8);
        assert!(leakage_probe(&c, &vec![1.0; 50]).is_err());
        let c = Matrix::zeros(100, 8);
        assert!(matches!(leakage_probe(&c, &vec![3.0; 100]), Err(Error::Evaluation(_))));
        let controls: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert!(leakage_probe(&c, &controls).is_ok());
    }

    #[test]
    fn discretization_examples() {
        let t: Vec<f64> = (0..400).map(|i| -1200.0 + 6.0 * i as f64).collect();
        assert_eq!(discretization_index(&t, &t, 200.0, 0.5).unwrap(), 0.0);
        let steps: Vec<f64> = t.iter().map(|x| 400.0 * (x / 400.0).round()).collect();
        assert!(discretization_index(&t, &steps, 200.0, 0.5).unwrap() >= 0.5);
        let flat = vec![0.0; 400];
        assert_eq!(discretization_index(&t, &flat, 200.0, 0.5).unwrap(), 1.0);
        assert!(discretization_index(&t[..50], &t[..50], 200.0, 0.5).is_err());
        let narrow: Vec<f64> = (0..200).map(|i| i as f64).collect();
        assert!(discretization_index(&narrow, &narrow, 200.0, 0.5).is_err());
    }

    #[test]
    fn erasure_capacity_examples() {
        let mut rng = Rng::new(3);
        let (mi, exact) = erasure_capacity_check(4, 0.0, 100_000, &mut rng).unwrap();
        assert_eq!(exact, 2.0);
        assert!((mi - 2.0).abs() / 2.0 < 0.01);
        let (mi, exact) = erasure_capacity_check(4, 1.0, 100_000, &mut rng).unwrap();
        assert_eq!((mi, exact), (0.0, 0.0));
        let (mi, exact) = erasure_capacity_check(4, 0.75, 100_000, &mut rng).unwrap();
        assert_eq!(exact, 0.5);
        assert!((mi - exact).abs() / exact < 0.02, "{mi}");
    }

    proptest::proptest! {
        #[test]
        fn identical_sequences_never_discretize(start in -2000.0f64..0.0, step in 2.0f64..20.0, n in 100usize..400) {
            let t: Vec<f64> = (0..n).map(|i| start + step * i as f64).collect();
            proptest::prop_assume!(step * (n - 1) as f64 >= 800.0);
            proptest::prop_assert_eq!(discretization_index(&t, &t, 200.0, 0.5).unwrap(), 0.0);
        }
    }

    fn tiny_setup() -> (AutoEncoder, Corpus) {
        let p = GenParams::default();
        let cfg = ModelConfig {
            hidden_width: 16,
            hidden_layers: 1,
            ..ModelConfig::new(&p, 8)
        };
        let model = AutoEncoder::new(cfg, &mut Rng::new(4)).unwrap();
        let corpus = make_corpus(Mix::SingingOnly, 6, 32, &p, &mut Rng::new(5)).unwrap();
        (model, corpus)
    }

    #[test]
    fn untrained_model_has_large_errors() {
        let (model, corpus) = tiny_setup();
        let est = ControlEstimator::new(&corpus.params);
        let curve = error_curve(&model, &corpus, &default_grid(), &est, 200.0).unwrap();
        assert_eq!(curve.points.len(), 25);
        for p in &curve.points {
            if let Some(e) = p.mean_abs_error {
                assert!(e.is_finite());
                assert!(e > 300.0, "offset {} error {e}", p.offset);
            }
        }
        let voiced: usize = corpus.samples.iter().map(Sample::voiced_count).sum();
        for p in &curve.points {
            assert_eq!(p.n_frames + p.n_no_estimate + p.n_out_of_range, voiced);
        }
    }

    #[test]
    fn report_is_deterministic_and_round_trips() {
        let (model, corpus) = tiny_setup();
        let cfg = EvalConfig {
            glide_frames: 4,
            ..Default::default()
        };
        let a = evaluate(&model, &corpus, &cfg, 7).unwrap();
        let b = evaluate(&model, &corpus, &cfg, 7).unwrap();
        let text = a.to_toml().unwrap();
        assert_eq!(text, b.to_toml().unwrap());
        assert_eq!(EvalReport::from_toml(&text).unwrap().to_toml().unwrap(), text);
        assert_eq!(a.curve_tsv().lines().count(), 26);
        assert!((0.0..=1.0).contains(&a.summary.leakage_r2));
        let c = evaluate(&model, &corpus, &cfg, 8).unwrap();
        assert_ne!(a.summary.fingerprint, c.summary.fingerprint);
    }

    #[test]
    fn config_validation() {
        assert!(EvalConfig::default().validate().is_ok());
        let bad = EvalConfig {
            grid: vec![0.0, 0.0],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = EvalConfig {
            slope_threshold: 2.0,
            ..Default::default()
        };
        assert!(bad.validate().unwrap_err().to_string().contains("eval.slope_threshold"));
    }
}
