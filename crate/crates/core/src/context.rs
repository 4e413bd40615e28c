//! Context/target splits and context selection.
//!
//! Training places context frames uniformly at random. At evaluation the
//! context can instead be chosen by the latent uncertainty each frame induces
//! on its own: every frame is encoded with its pseudo-label, `σ_c` is read off
//! the latent encoder, and frames are ranked by `‖σ_c‖₂` (ties to the smaller
//! frame index).

use std::collections::BTreeSet;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::ContextMode;
use crate::data::Sequence;
use crate::error::{Error, Result};
use crate::model::ApModel;

/// Which labels accompany the context frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelSource {
    GroundTruth,
    PseudoLabel,
}

/// Direction of uncertainty-based selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Lowest,
    Highest,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContextTargetSplit {
    context: Vec<usize>,
    target: Vec<usize>,
    label_source: LabelSource,
}

impl ContextTargetSplit {
    /// Context indices are sorted; every frame is a target.
    pub fn new(context: Vec<usize>, seq_len: usize, label_source: LabelSource) -> Result<Self> {
        let set: BTreeSet<usize> = context.into_iter().collect();
        Self::from_ordered(set.into_iter().collect(), seq_len, label_source)
    }

    /// Keeps the given context order, which only matters for testing order
    /// invariance.
    pub fn from_ordered(context: Vec<usize>, seq_len: usize, label_source: LabelSource) -> Result<Self> {
        Self::with_targets(context, (0..seq_len).collect(), seq_len, label_source)
    }

    /// A split decoding only the given targets.
    pub fn with_targets(
        context: Vec<usize>,
        target: Vec<usize>,
        seq_len: usize,
        label_source: LabelSource,
    ) -> Result<Self> {
        if context.is_empty() {
            return Err(Error::contract("context set is empty"));
        }
        if target.is_empty() {
            return Err(Error::contract("target set is empty"));
        }
        let unique: BTreeSet<_> = context.iter().collect();
        if unique.len() != context.len() {
            return Err(Error::contract("context indices repeat"));
        }
        let split = ContextTargetSplit {
            context,
            target,
            label_source,
        };
        split.check_len(seq_len)?;
        Ok(split)
    }

    pub fn context_indices(&self) -> &[usize] {
        &self.context
    }

    pub fn target_indices(&self) -> &[usize] {
        &self.target
    }

    pub fn label_source(&self) -> LabelSource {
        self.label_source
    }

    pub fn with_label_source(mut self, source: LabelSource) -> Self {
        self.label_source = source;
        self
    }

    /// Boolean mask of context frames over `seq_len` frames.
    pub fn context_mask(&self, seq_len: usize) -> Vec<bool> {
        let mut mask = vec![false; seq_len];
        for &i in &self.context {
            if i < seq_len {
                mask[i] = true;
            }
        }
        mask
    }

    pub(crate) fn check_len(&self, seq_len: usize) -> Result<()> {
        if let Some(&bad) = self.context.iter().chain(&self.target).find(|&&i| i >= seq_len) {
            return Err(Error::contract(format!(
                "frame index {bad} out of range for a {seq_len}-frame sequence"
            )));
        }
        Ok(())
    }
}

fn check_count(seq_len: usize, num_context: usize) -> Result<()> {
    if num_context == 0 || num_context > seq_len {
        return Err(Error::contract(format!(
            "num_context {num_context} must lie in 1..={seq_len}"
        )));
    }
    Ok(())
}

/// Uniformly samples `num_context` distinct frames.
pub fn select_random<R: Rng + ?Sized>(
    seq_len: usize,
    num_context: usize,
    label_source: LabelSource,
    rng: &mut R,
) -> Result<ContextTargetSplit> {
    check_count(seq_len, num_context)?;
    let picked = index::sample(rng, seq_len, num_context).into_vec();
    ContextTargetSplit::new(picked, seq_len, label_source)
}

/// Indices of the `num_context` smallest (or largest) scores, ties broken by
/// smaller index, returned in ascending index order.
pub fn select_by_scores(scores: &[f64], num_context: usize, direction: Direction) -> Result<Vec<usize>> {
    check_count(scores.len(), num_context)?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("uncertainty score is NaN".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        let by_score = match direction {
            Direction::Lowest => scores[a].total_cmp(&scores[b]),
            Direction::Highest => scores[b].total_cmp(&scores[a]),
        };
        by_score.then(a.cmp(&b))
    });
    order.truncate(num_context);
    order.sort_unstable();
    Ok(order)
}

/// Ranks frames by `‖σ_c‖₂` computed from features and pseudo-labels.
pub fn select_by_uncertainty(
    model: &ApModel,
    sequence: &Sequence,
    num_context: usize,
    direction: Direction,
) -> Result<ContextTargetSplit> {
    let len = sequence.len();
    check_count(len, num_context)?;
    let scores = model.frame_uncertainty(&sequence.features, &sequence.pseudo_labels)?;
    let picked = select_by_scores(&scores, num_context, direction)?;
    ContextTargetSplit::new(picked, len, LabelSource::PseudoLabel)
}

/// Chooses a pseudo-labelled context according to an evaluation mode.
pub fn select_context<R: Rng + ?Sized>(
    model: &ApModel,
    sequence: &Sequence,
    num_context: usize,
    mode: ContextMode,
    rng: &mut R,
) -> Result<ContextTargetSplit> {
    match mode {
        ContextMode::Lowest => select_by_uncertainty(model, sequence, num_context, Direction::Lowest),
        ContextMode::Highest => select_by_uncertainty(model, sequence, num_context, Direction::Highest),
        ContextMode::Random => select_random(sequence.len(), num_context, LabelSource::PseudoLabel, rng),
    }
}
