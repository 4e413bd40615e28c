//! Composite objective, Adam, cosine annealing and the training loop.
//!
//! Each training sequence contributes one randomly placed window of 35–70
//! frames, a random number of context frames in `[3, len]`, and context labels
//! drawn from ground truth or pseudo-labels by a fair coin. Targets are always
//! every frame of the window with ground-truth labels.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::config::{LossWeights, ModelVariant, RegPooling, RunConfig, Task};
use crate::context::{select_random, LabelSource};
use crate::data::Sequence;
use crate::distributions::GaussianVar;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig, EvalReport};
use crate::model::{ApModel, FrameData, ForwardVars, LatentDraw, ModelParams};
use crate::tensor::Tensor;

/// Mean over target frames of the negative log-density, summed over label dimensions.
pub fn loss_nll(tape: &mut Tape, prediction: GaussianVar, targets: Var) -> Result<Var> {
    let frames = tape.shape(targets)[0].max(1);
    let lp = prediction.log_prob(tape, targets)?;
    Ok(tape.scale(lp, -1.0 / frames as f64))
}

/// `KL(q(z|T) ‖ q(z|C))`.
pub fn loss_kl(tape: &mut Tape, context_latent: GaussianVar, target_latent: GaussianVar) -> Result<Var> {
    target_latent.kl_divergence(tape, context_latent)
}

/// KL from the pooled output Gaussian to `N(0, 1)`, summed over label dimensions.
pub fn loss_reg(tape: &mut Tape, prediction: GaussianVar, pooling: RegPooling) -> Result<Var> {
    if tape.shape(prediction.mean)[0] == 0 {
        return Err(Error::contract("output regulariser needs at least one target frame"));
    }
    let pooled = match pooling {
        RegPooling::Mean => GaussianVar {
            mean: tape.mean_rows(prediction.mean)?,
            std: tape.mean_rows(prediction.std)?,
        },
        RegPooling::Sum => GaussianVar {
            mean: tape.sum_rows(prediction.mean)?,
            std: tape.sum_rows(prediction.std)?,
        },
    };
    let shape = tape.shape(pooled.mean).to_vec();
    let prior = GaussianVar {
        mean: tape.constant(Tensor::zeros(&shape)),
        std: tape.constant(Tensor::filled(&shape, 1.0)),
    };
    pooled.kl_divergence(tape, prior)
}

/// Loss terms of one sequence (or batch average).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossComponents {
    pub total: f64,
    pub nll: f64,
    pub kl: f64,
    pub reg: f64,
}

impl LossComponents {
    fn add_assign(&mut self, o: &LossComponents) {
        self.total += o.total;
        self.nll += o.nll;
        self.kl += o.kl;
        self.reg += o.reg;
    }

    fn scaled(&self, f: f64) -> LossComponents {
        LossComponents {
            total: self.total * f,
            nll: self.nll * f,
            kl: self.kl * f,
            reg: self.reg * f,
        }
    }
}

/// Whether the KL term is active: it needs a latent that feeds the decoder.
pub fn kl_active(weights: &LossWeights, variant: ModelVariant) -> bool {
    weights.variant.uses_kl() && variant.has_latent_sample()
}

/// Records the weighted objective for one forward pass.
///
/// `targets` holds the ground-truth labels of the target frames. The KL term
/// is computed only when active and the target set was encoded.
pub fn composite_loss(
    tape: &mut Tape,
    forward: &ForwardVars,
    targets: Var,
    weights: &LossWeights,
    variant: ModelVariant,
) -> Result<(Var, [Option<Var>; 3])> {
    let nll = loss_nll(tape, forward.prediction, targets)?;
    let reg = loss_reg(tape, forward.prediction, weights.reg_pooling)?;
    let kl = match (kl_active(weights, variant), forward.target) {
        (true, Some(t)) => Some(loss_kl(tape, forward.context.latent, t.latent)?),
        (true, None) => return Err(Error::contract("KL term needs the encoded target set")),
        (false, _) => None,
    };
    let [_, c_kl, c_reg] = weights.coefficients();
    let mut total = nll;
    if let Some(kl) = kl {
        let w = tape.scale(kl, c_kl);
        total = tape.add(total, w)?;
    }
    if c_reg != 0.0 {
        let w = tape.scale(reg, c_reg);
        total = tape.add(total, w)?;
    }
    Ok((total, [Some(nll), kl, Some(reg)]))
}

/// Adam moments and hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, base_lr: f64, weight_decay: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: BTreeMap<String, Tensor> = params
            .iter()
            .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
            .collect();
        OptimizerState {
            step: 0,
            base_lr,
            weight_decay,
            beta1,
            beta2,
            eps,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn from_config(params: &ModelParams, config: &RunConfig) -> Self {
        Self::new(
            params,
            config.lr,
            config.weight_decay,
            config.adam_beta1,
            config.adam_beta2,
            config.adam_eps,
        )
    }
}

/// One Adam update with bias correction; weight decay is added to the
/// gradient (classic L2).
pub fn adam_step(
    state: &mut OptimizerState,
    params: &mut ModelParams,
    grads: &BTreeMap<String, Tensor>,
    lr: f64,
) -> Result<()> {
    if grads.len() != params.len() || grads.keys().zip(params.names()).any(|(a, b)| a != b) {
        return Err(Error::contract("gradient keys do not match parameter names"));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (name, p) in params.iter_mut() {
        let g = &grads[name];
        if g.shape() != p.shape() {
            return Err(Error::Dimension {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        let m = state
            .first
            .get_mut(name)
            .ok_or_else(|| Error::contract(format!("no optimizer state for `{name}`")))?;
        let v = state
            .second
            .get_mut(name)
            .ok_or_else(|| Error::contract(format!("no optimizer state for `{name}`")))?;
        let (b1, b2, wd, eps) = (state.beta1, state.beta2, state.weight_decay, state.eps);
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            let g = gv + wd * *pv;
            *mv = b1 * *mv + (1.0 - b1) * g;
            *vv = b2 * *vv + (1.0 - b2) * g * g;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Single-cycle cosine annealing from `base_lr` at step 0 to 0 at `total_steps`.
pub fn cosine_lr(base_lr: f64, step: usize, total_steps: usize) -> f64 {
    if total_steps == 0 {
        return base_lr;
    }
    let frac = step.min(total_steps) as f64 / total_steps as f64;
    (base_lr * 0.5 * (1.0 + (PI * frac).cos())).max(0.0)
}

/// Outcome of one optimisation step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub loss: LossComponents,
    pub lr: f64,
    pub used: usize,
    pub skipped: usize,
}

/// Loss and parameter gradients for one prepared training example.
pub fn sequence_loss_and_grads(
    model: &ApModel,
    window: &Sequence,
    source: LabelSource,
    num_context: usize,
    weights: &LossWeights,
    rng: &mut ChaCha8Rng,
) -> Result<(LossComponents, BTreeMap<String, Tensor>)> {
    let split = select_random(window.len(), num_context, source, rng)?;
    let draw = if model.variant().has_latent_sample() {
        LatentDraw::Noise(model.draw_noise(rng))
    } else {
        LatentDraw::Mean
    };
    let context_labels = match source {
        LabelSource::GroundTruth => window.labels(),
        LabelSource::PseudoLabel => window.pseudo_labels(),
    };
    let need_target = kl_active(weights, model.variant());
    let frames = FrameData {
        features: window.features(),
        context_labels,
        target_labels: need_target.then(|| window.labels()),
    };
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);
    let fwd = model.forward_vars(&mut tape, &bound, &frames, &split, &draw)?;
    let targets = tape.constant(window.labels().select_rows(split.target_indices())?);
    let (total, [nll, kl, reg]) = composite_loss(&mut tape, &fwd, targets, weights, model.variant())?;
    let read = |v: Option<Var>| v.map_or(Ok(0.0), |v| tape.value(v).item());
    let components = LossComponents {
        total: tape.value(total).item()?,
        nll: read(nll)?,
        kl: read(kl)?,
        reg: read(reg)?,
    };
    if !components.total.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss on `{}`", window.id())));
    }
    let mut grads = tape.backward(total)?;
    let named = bound
        .iter()
        .map(|(name, &var)| (name.clone(), grads.take(var)))
        .collect();
    Ok((components, named))
}

/// One Adam step over a batch of sequences.
pub fn train_step<R: Rng + ?Sized>(
    model: &mut ApModel,
    state: &mut OptimizerState,
    batch: &[&Sequence],
    config: &RunConfig,
    rng: &mut R,
) -> Result<StepReport> {
    if batch.is_empty() {
        return Err(Error::contract("empty training batch"));
    }
    // Per-sequence streams are split off in batch order so every item's
    // randomness is fixed by the run seed alone.
    let seeds: Vec<u64> = batch.iter().map(|_| rng.random()).collect();
    let mut sum_grads: Option<BTreeMap<String, Tensor>> = None;
    let mut sum_loss = LossComponents::default();
    let mut used = 0usize;
    let mut skipped = 0usize;
    for (seq, seed) in batch.iter().zip(seeds) {
        if seq.len() < config.seq_len_min {
            warn!(
                "skipping `{}`: {} frames is shorter than the {}-frame minimum window",
                seq.id(),
                seq.len(),
                config.seq_len_min
            );
            skipped += 1;
            continue;
        }
        let mut item_rng = ChaCha8Rng::seed_from_u64(seed);
        let max_len = config.seq_len_max.min(seq.len());
        let len = item_rng.random_range(config.seq_len_min..=max_len);
        let start = item_rng.random_range(0..=seq.len() - len);
        let window = seq.window(start, len)?;
        let num_context = item_rng.random_range(config.min_context.min(len)..=len);
        let source = if item_rng.random_bool(config.mix_prob) {
            LabelSource::PseudoLabel
        } else {
            LabelSource::GroundTruth
        };
        let (loss, grads) =
            sequence_loss_and_grads(model, &window, source, num_context, &config.loss, &mut item_rng)?;
        sum_loss.add_assign(&loss);
        match &mut sum_grads {
            None => sum_grads = Some(grads),
            Some(acc) => {
                for (name, g) in grads {
                    let a = acc.get_mut(&name).expect("same parameter set");
                    for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                        *x += y;
                    }
                }
            }
        }
        used += 1;
    }
    let lr = cosine_lr(config.lr, state.step as usize, config.total_steps());
    let Some(mut grads) = sum_grads else {
        return Ok(StepReport {
            loss: LossComponents::default(),
            lr,
            used,
            skipped,
        });
    };
    let inv = 1.0 / used as f64;
    for g in grads.values_mut() {
        g.data_mut().iter_mut().for_each(|v| *v *= inv);
    }
    adam_step(state, model.params_mut(), &grads, lr)?;
    if !model.params().is_finite() {
        return Err(Error::Numeric("parameters became non-finite".into()));
    }
    Ok(StepReport {
        loss: sum_loss.scaled(inv),
        lr,
        used,
        skipped,
    })
}

/// One line of the training metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossComponents,
    pub skipped: usize,
    pub validation: Option<EvalReport>,
}

pub const METRICS_LOG_HEADER: &str = "epoch,lr,loss,nll,kl,reg,skipped,val_ccc,val_icc,val_mse,val_nll";

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        let (ccc, icc, mse, nll) = match &self.validation {
            Some(r) => (
                r.mean_ccc.to_string(),
                r.mean_icc.to_string(),
                r.mean_mse.to_string(),
                r.mean_nll.map(|v| v.to_string()).unwrap_or_default(),
            ),
            None => Default::default(),
        };
        format!(
            "{},{},{},{},{},{},{},{ccc},{icc},{mse},{nll}",
            self.epoch, self.lr, self.loss.total, self.loss.nll, self.loss.kl, self.loss.reg, self.skipped
        )
    }
}

pub fn metrics_log_csv(records: &[EpochRecord]) -> String {
    let mut s = String::from(METRICS_LOG_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation score (or the last
    /// epoch when there is no validation data).
    pub best: ApModel,
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
}

/// Validation score used to pick the checkpoint: mean CCC for valence/arousal,
/// mean ICC for action units.
pub fn selection_score(task: Task, report: &EvalReport) -> f64 {
    match task {
        Task::ValenceArousal => report.mean_ccc,
        Task::ActionUnits => report.mean_icc,
    }
}

/// Runs `epochs × iters_per_epoch` steps from a seeded initialisation.
pub fn train(config: &RunConfig, train_set: &[Sequence], val_set: &[Sequence]) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset("training split".into()));
    }
    for s in train_set.iter().chain(val_set) {
        if s.feature_dim() != config.model.feature_dim || s.label_dim() != config.model.label_dim {
            return Err(Error::contract(format!(
                "sequence `{}` has dimensions ({}, {}), model expects ({}, {})",
                s.id(),
                s.feature_dim(),
                s.label_dim(),
                config.model.feature_dim,
                config.model.label_dim
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = ApModel::init(config.model.clone(), config.variant, &mut rng)?;
    let mut state = OptimizerState::from_config(model.params(), config);
    let eval_cfg = EvalConfig::from_run(config).for_variant(config.variant);

    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ApModel)> = None;
    for epoch in 1..=config.epochs {
        let mut acc = LossComponents::default();
        let mut steps = 0usize;
        let mut skipped = 0usize;
        let mut lr = config.lr;
        for _ in 0..config.iters_per_epoch {
            let batch: Vec<&Sequence> = (0..config.batch_size)
                .map(|_| &train_set[rng.random_range(0..train_set.len())])
                .collect();
            let report = train_step(&mut model, &mut state, &batch, config, &mut rng)?;
            skipped += report.skipped;
            lr = report.lr;
            if report.used > 0 {
                acc.add_assign(&report.loss);
                steps += 1;
            }
        }
        let loss = acc.scaled(1.0 / steps.max(1) as f64);
        let validation = if val_set.is_empty() {
            None
        } else {
            Some(evaluate(&model, val_set, &eval_cfg)?)
        };
        let score = validation
            .as_ref()
            .map_or(f64::NEG_INFINITY, |r| selection_score(config.task, r));
        info!(
            "epoch {epoch}: lr {lr:.3e} loss {:.4} (nll {:.4} kl {:.4} reg {:.4}) val {}",
            loss.total,
            loss.nll,
            loss.kl,
            loss.reg,
            validation.as_ref().map_or("-".to_string(), |r| format!(
                "ccc {:.4} icc {:.4}",
                r.mean_ccc, r.mean_icc
            ))
        );
        let improved = match &best {
            None => true,
            Some((s, _, _)) => validation.is_none() || score > *s,
        };
        if improved {
            best = Some((score, epoch, model.clone()));
        }
        log.push(EpochRecord {
            epoch,
            lr,
            loss,
            skipped,
            validation,
        });
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome { best, best_epoch, log })
}
