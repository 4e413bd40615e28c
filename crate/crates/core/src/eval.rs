//! Windowed evaluation, context-count sweeps and sampled traces.
//!
//! Test sequences are tiled into non-overlapping windows. Each window takes
//! its context from pseudo-labels only, chosen by the configured mode, and is
//! decoded under `z = μ_C`. Metrics are computed over the concatenation of
//! all windows.

use std::fmt::Write as _;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::config::{ContextMode, ModelVariant, RunConfig};
use crate::context::{select_context, select_random, ContextTargetSplit, LabelSource};
use crate::data::Sequence;
use crate::error::{Error, Result};
use crate::metrics::{concordance, icc, mse};
use crate::model::{ApModel, FrameData, LatentDraw};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub window_len: usize,
    pub num_context: usize,
    pub mode: ContextMode,
    /// Windows shorter than this are dropped.
    pub min_window: usize,
    /// Seeds the stream used by random context placement.
    pub seed: u64,
}

impl EvalConfig {
    pub fn from_run(config: &RunConfig) -> Self {
        EvalConfig {
            window_len: config.test_seq_len,
            num_context: config.num_context_eval,
            mode: config.eval_context_mode,
            min_window: config.min_context,
            seed: config.seed,
        }
    }

    /// Falls back to random placement when `variant` cannot rank frames by
    /// uncertainty.
    pub fn for_variant(&self, variant: ModelVariant) -> Self {
        let mut cfg = self.clone();
        if cfg.mode.ranks_by_uncertainty() && !variant.has_latent_sample() {
            cfg.mode = ContextMode::Random;
        }
        cfg
    }

    fn validate(&self) -> Result<()> {
        if self.window_len == 0 || self.num_context == 0 || self.min_window == 0 {
            return Err(Error::contract(
                "window length, context count and minimum window must be positive",
            ));
        }
        Ok(())
    }
}

/// Start and length of every evaluation window of a `len`-frame sequence.
pub fn tile_windows(len: usize, window_len: usize, min_window: usize) -> Vec<(usize, usize)> {
    (0..len)
        .step_by(window_len.max(1))
        .map(|s| (s, window_len.min(len - s)))
        .filter(|&(_, w)| w >= min_window)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub mode: Option<ContextMode>,
    pub num_context: usize,
    pub frames: usize,
    pub windows: usize,
    pub ccc: Vec<f64>,
    pub icc: Vec<f64>,
    pub mse: Vec<f64>,
    pub mean_ccc: f64,
    pub mean_icc: f64,
    pub mean_mse: f64,
    /// Mean per-frame negative log-likelihood of the ground truth; absent
    /// for point predictions.
    pub mean_nll: Option<f64>,
    /// Some label dimension had constant labels and predictions.
    pub degenerate: bool,
}

impl EvalReport {
    fn from_predictions(
        labels: &[Vec<f64>],
        predictions: &[Vec<f64>],
        mode: Option<ContextMode>,
        num_context: usize,
        windows: usize,
        mean_nll: Option<f64>,
    ) -> Result<Self> {
        let frames = labels.first().map_or(0, Vec::len);
        if frames < 2 {
            return Err(Error::EmptyDataset(
                "evaluation needs at least two frames".into(),
            ));
        }
        let mut ccc = Vec::new();
        let mut iccs = Vec::new();
        let mut mses = Vec::new();
        let mut degenerate = false;
        for (y, p) in labels.iter().zip(predictions) {
            let c = concordance(y, p)?;
            degenerate |= c.degenerate;
            ccc.push(c.value);
            iccs.push(icc(y, p)?);
            mses.push(mse(y, p)?);
        }
        let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        Ok(EvalReport {
            mode,
            num_context,
            frames,
            windows,
            mean_ccc: avg(&ccc),
            mean_icc: avg(&iccs),
            mean_mse: avg(&mses),
            ccc,
            icc: iccs,
            mse: mses,
            mean_nll,
            degenerate,
        })
    }

    pub fn csv_header(label_dim: usize) -> String {
        let mut h = String::from("context_mode,num_context,frames,windows,mean_ccc,mean_icc,mean_mse,mean_nll");
        for m in ["ccc", "icc", "mse"] {
            for d in 0..label_dim {
                let _ = write!(h, ",{m}_{d}");
            }
        }
        h
    }

    pub fn csv_row(&self) -> String {
        let mode = self.mode.map_or("pseudo_label", |m| m.as_str());
        let mut row = format!(
            "{mode},{},{},{},{},{},{},{}",
            self.num_context,
            self.frames,
            self.windows,
            self.mean_ccc,
            self.mean_icc,
            self.mean_mse,
            self.mean_nll.map(|v| v.to_string()).unwrap_or_default()
        );
        for v in self.ccc.iter().chain(&self.icc).chain(&self.mse) {
            let _ = write!(row, ",{v}");
        }
        row
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", Self::csv_header(self.ccc.len()), self.csv_row())
    }
}

fn check_dims(model: &ApModel, sequences: &[Sequence]) -> Result<()> {
    if sequences.is_empty() {
        return Err(Error::EmptyDataset("no evaluation sequences".into()));
    }
    let cfg = model.config();
    for s in sequences {
        if s.feature_dim() != cfg.feature_dim || s.label_dim() != cfg.label_dim {
            return Err(Error::contract(format!(
                "sequence `{}` has dimensions ({}, {}), model expects ({}, {})",
                s.id(),
                s.feature_dim(),
                s.label_dim(),
                cfg.feature_dim,
                cfg.label_dim
            )));
        }
    }
    Ok(())
}

/// Mean prediction and per-frame NLL for one window with a given split.
fn predict_window(model: &ApModel, window: &Sequence, split: &ContextTargetSplit) -> Result<(Tensor, Vec<f64>)> {
    let frames = FrameData {
        features: window.features(),
        context_labels: window.pseudo_labels(),
        target_labels: None,
    };
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let fwd = model.forward_vars(&mut tape, &bound, &frames, split, &LatentDraw::Mean)?;
    let y = tape.constant(window.labels().clone());
    let density = fwd.prediction.log_density(&mut tape, y)?;
    let density = tape.value(density);
    let nll = (0..density.rows())
        .map(|i| -density.row_slice(i).iter().sum::<f64>())
        .collect();
    Ok((tape.value(fwd.prediction.mean).clone(), nll))
}

/// Evaluates a model over tiled windows of every sequence.
pub fn evaluate(model: &ApModel, sequences: &[Sequence], cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    check_dims(model, sequences)?;
    let label_dim = model.config().label_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut labels = vec![Vec::new(); label_dim];
    let mut preds = vec![Vec::new(); label_dim];
    let mut nll_sum = 0.0;
    let mut windows = 0usize;
    let mut clamped = false;
    for seq in sequences {
        for (start, len) in tile_windows(seq.len(), cfg.window_len, cfg.min_window) {
            let window = seq.window(start, len)?;
            let k = cfg.num_context.min(len);
            clamped |= k < cfg.num_context;
            let split = select_context(model, &window, k, cfg.mode, &mut rng)?;
            let (mean, nll) = predict_window(model, &window, &split)?;
            for d in 0..label_dim {
                labels[d].extend(window.labels().column(d));
                preds[d].extend(mean.column(d));
            }
            nll_sum += nll.iter().sum::<f64>();
            windows += 1;
        }
    }
    if clamped {
        warn!(
            "num_context {} exceeds some window lengths and was clamped",
            cfg.num_context
        );
    }
    let frames = labels[0].len();
    let mean_nll = nll_sum / frames.max(1) as f64;
    if !mean_nll.is_finite() || preds.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite predictions during evaluation".into()));
    }
    EvalReport::from_predictions(&labels, &preds, Some(cfg.mode), cfg.num_context, windows, Some(mean_nll))
}

/// Scores the raw pseudo-labels as predictions over the same windows.
pub fn pseudo_label_report(sequences: &[Sequence], cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let label_dim = sequences
        .first()
        .ok_or_else(|| Error::EmptyDataset("no evaluation sequences".into()))?
        .label_dim();
    let mut labels = vec![Vec::new(); label_dim];
    let mut preds = vec![Vec::new(); label_dim];
    let mut windows = 0usize;
    for seq in sequences {
        for (start, len) in tile_windows(seq.len(), cfg.window_len, cfg.min_window) {
            let window = seq.window(start, len)?;
            for d in 0..label_dim {
                labels[d].extend(window.labels().column(d));
                preds[d].extend(window.pseudo_labels().column(d));
            }
            windows += 1;
        }
    }
    EvalReport::from_predictions(&labels, &preds, None, 0, windows, None)
}

/// Evaluates every (context count, mode) pair.
pub fn context_sweep(
    model: &ApModel,
    sequences: &[Sequence],
    base: &EvalConfig,
    counts: &[usize],
    modes: &[ContextMode],
) -> Result<Vec<EvalReport>> {
    let mut rows = Vec::with_capacity(counts.len() * modes.len());
    for &count in counts {
        for &mode in modes {
            let cfg = EvalConfig {
                num_context: count,
                mode,
                ..base.clone()
            };
            rows.push(evaluate(model, sequences, &cfg)?);
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[EvalReport]) -> String {
    let mut s = String::from("num_context,context_mode,mean_ccc,mean_icc,mean_mse,mean_nll\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.num_context,
            r.mode.map_or("pseudo_label", |m| m.as_str()),
            r.mean_ccc,
            r.mean_icc,
            r.mean_mse,
            r.mean_nll.map(|v| v.to_string()).unwrap_or_default()
        );
    }
    s
}

/// Mean and sampled predictive traces over one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Traces {
    pub sequence_id: String,
    pub labels: Tensor,
    pub pseudo_labels: Tensor,
    pub context_mask: Vec<bool>,
    pub mean: Tensor,
    pub samples: Vec<Tensor>,
}

impl Traces {
    /// One row per (frame, label dimension).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("frame,dim,label,pseudo_label,context,mean");
        for i in 0..self.samples.len() {
            let _ = write!(s, ",sample_{i}");
        }
        s.push('\n');
        for f in 0..self.labels.rows() {
            for d in 0..self.labels.cols() {
                let _ = write!(
                    s,
                    "{f},{d},{},{},{},{}",
                    self.labels.row_slice(f)[d],
                    self.pseudo_labels.row_slice(f)[d],
                    u8::from(self.context_mask[f]),
                    self.mean.row_slice(f)[d]
                );
                for t in &self.samples {
                    let _ = write!(s, ",{}", t.row_slice(f)[d]);
                }
                s.push('\n');
            }
        }
        s
    }
}

/// Decodes a sequence under `z = μ_C` and under `num_samples` draws of `z`,
/// each draw shared across all frames.
pub fn sample_traces(
    model: &ApModel,
    sequence: &Sequence,
    num_context: usize,
    mode: ContextMode,
    num_samples: usize,
    seed: u64,
) -> Result<Traces> {
    check_dims(model, std::slice::from_ref(sequence))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = num_context.min(sequence.len());
    let split = match mode {
        ContextMode::Random => select_random(sequence.len(), k, LabelSource::PseudoLabel, &mut rng)?,
        _ => select_context(model, sequence, k, mode, &mut rng)?,
    };
    let frames = FrameData {
        features: sequence.features(),
        context_labels: sequence.pseudo_labels(),
        target_labels: None,
    };
    let decode = |draw: &LatentDraw| -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, false);
        let fwd = model.forward_vars(&mut tape, &bound, &frames, &split, draw)?;
        Ok(tape.value(fwd.prediction.mean).clone())
    };
    let mean = decode(&LatentDraw::Mean)?;
    let mut samples = Vec::with_capacity(num_samples);
    for _ in 0..num_samples {
        let draw = if model.variant().has_latent_sample() {
            LatentDraw::Noise(model.draw_noise(&mut rng))
        } else {
            LatentDraw::Mean
        };
        samples.push(decode(&draw)?);
    }
    Ok(Traces {
        sequence_id: sequence.id().to_string(),
        labels: sequence.labels().clone(),
        pseudo_labels: sequence.pseudo_labels().clone(),
        context_mask: split.context_mask(sequence.len()),
        mean,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ModelConfig, ModelVariant};
    use crate::data::{generate_synthetic, SyntheticSpec};

    fn toy() -> (ApModel, Vec<Sequence>) {
        let cfg = ModelConfig {
            encoder_hidden: vec![8, 8],
            repr_dim: 6,
            latent_dim: 6,
            decoder_hidden: vec![8, 8, 4],
            attention_heads: 2,
            attention_head_dim: 3,
            ..ModelConfig::new(5, 2)
        };
        let model = ApModel::init(cfg, ModelVariant::Latent, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let spec = SyntheticSpec {
            num_sequences: 3,
            min_len: 20,
            max_len: 30,
            feature_dim: 5,
            label_dim: 2,
            ..SyntheticSpec::default()
        };
        let data = generate_synthetic(&spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        (model, data)
    }

    fn cfg(mode: ContextMode, k: usize) -> EvalConfig {
        EvalConfig {
            window_len: 8,
            num_context: k,
            mode,
            min_window: 3,
            seed: 5,
        }
    }

    #[test]
    fn deterministic_models_fall_back_to_random_context() {
        let lowest = cfg(ContextMode::Lowest, 4);
        assert_eq!(lowest.for_variant(ModelVariant::Latent).mode, ContextMode::Lowest);
        assert_eq!(lowest.for_variant(ModelVariant::Deterministic).mode, ContextMode::Random);
        assert_eq!(cfg(ContextMode::Random, 4).for_variant(ModelVariant::Deterministic).mode, ContextMode::Random);

        let (model, data) = toy();
        let det = ApModel::init(model.config().clone(), ModelVariant::Deterministic, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(evaluate(&det, &data, &lowest).is_err());
        let r = evaluate(&det, &data, &lowest.for_variant(det.variant())).unwrap();
        assert_eq!(r.mode, Some(ContextMode::Random));
    }

    #[test]
    fn windows_tile_without_overlap() {
        assert_eq!(tile_windows(20, 8, 3), vec![(0, 8), (8, 8), (16, 4)]);
        assert_eq!(tile_windows(17, 8, 3), vec![(0, 8), (8, 8)]);
        assert_eq!(tile_windows(5, 70, 3), vec![(0, 5)]);
        assert!(tile_windows(2, 70, 3).is_empty());
    }

    #[test]
    fn evaluation_is_deterministic_and_covers_every_kept_frame() {
        let (model, data) = toy();
        for mode in ContextMode::ALL {
            let a = evaluate(&model, &data, &cfg(*mode, 4)).unwrap();
            let b = evaluate(&model, &data, &cfg(*mode, 4)).unwrap();
            assert_eq!(a, b);
            let expected: usize = data
                .iter()
                .flat_map(|s| tile_windows(s.len(), 8, 3))
                .map(|(_, w)| w)
                .sum();
            assert_eq!(a.frames, expected);
            assert!(a.mean_nll.unwrap().is_finite());
        }
    }

    #[test]
    fn oversized_context_is_clamped() {
        let (model, data) = toy();
        let r = evaluate(&model, &data, &cfg(ContextMode::Lowest, 1000)).unwrap();
        let all = evaluate(&model, &data, &cfg(ContextMode::Highest, 8)).unwrap();
        assert_eq!(r.mean_ccc, all.mean_ccc);
    }

    #[test]
    fn perfect_pseudo_labels_score_one() {
        let (_, data) = toy();
        let perfect: Vec<Sequence> = data
            .iter()
            .map(|s| Sequence::new(s.id().into(), s.features().clone(), s.labels().clone(), s.labels().clone()).unwrap())
            .collect();
        let r = pseudo_label_report(&perfect, &cfg(ContextMode::Random, 3)).unwrap();
        assert!(r.ccc.iter().all(|c| (c - 1.0).abs() < 1e-12));
        assert!(r.icc.iter().all(|c| *c == 1.0));
        assert!(r.mse.iter().all(|c| *c == 0.0));
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.starts_with("context_mode,num_context"));
    }

    #[test]
    fn traces_share_one_latent_per_sample() {
        let (model, data) = toy();
        let t = sample_traces(&model, &data[0], 5, ContextMode::Lowest, 3, 2).unwrap();
        assert_eq!(t.samples.len(), 3);
        assert_eq!(t.context_mask.iter().filter(|m| **m).count(), 5);
        assert!(t.samples.iter().all(|s| s.shape() == t.mean.shape()));
        assert!(t.samples[0] != t.samples[1]);
        let csv = t.to_csv();
        assert_eq!(csv.lines().count(), 1 + data[0].len() * 2);
    }

    #[test]
    fn sweep_covers_the_grid() {
        let (model, data) = toy();
        let rows = context_sweep(&model, &data, &cfg(ContextMode::Random, 1), &[3, 6], ContextMode::ALL).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!(sweep_csv(&rows).lines().count(), 7);
    }
}
