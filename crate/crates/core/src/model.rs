//! The Affective Process network.
//!
//! Each context frame `(x_c, y_c)` is encoded to `r_c`; the `r_c` are averaged
//! into `r_C`, which parameterises the global latent `z ~ N(μ_C, σ_C)`. The
//! decoder maps every target frame `x_t`, together with one shared `z`, to a
//! per-frame Gaussian over the labels.
//!
//! Weights use the row-vector convention: a layer computes `X · W + b` with
//! `W` shaped `in × out` and `b` shaped `1 × out`.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::autodiff::{Tape, Var};
use crate::config::{ModelConfig, ModelVariant};
use crate::context::{ContextTargetSplit, LabelSource};
use crate::data::Sequence;
use crate::distributions::{DiagonalGaussian, GaussianVar};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Named parameter tensors, iterated in name order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    pub fn from_map(tensors: BTreeMap<String, Tensor>) -> Self {
        ModelParams { tensors }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn into_map(self) -> BTreeMap<String, Tensor> {
        self.tensors
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    /// Fills every tensor with `value`.
    pub fn fill(&mut self, value: f64) {
        for t in self.tensors.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = value);
        }
    }
}

/// Width of the decoder's `z` input for a variant.
fn z_width(cfg: &ModelConfig, variant: ModelVariant) -> usize {
    if variant.has_latent_sample() {
        cfg.latent_dim
    } else {
        cfg.repr_dim
    }
}

/// Every linear layer of the architecture as `(name, in, out, has_bias)`.
fn layer_specs(cfg: &ModelConfig, variant: ModelVariant) -> Vec<(String, usize, usize, bool)> {
    let [e0, e1] = [cfg.encoder_hidden[0], cfg.encoder_hidden[1]];
    let [d0, d1, d2] = [cfg.decoder_hidden[0], cfg.decoder_hidden[1], cfg.decoder_hidden[2]];
    let mut dec_in = cfg.feature_dim + z_width(cfg, variant);
    if variant.has_det_path() {
        dec_in += cfg.repr_dim;
    }
    let mut layers = vec![
        ("label_proj".to_string(), cfg.label_dim, cfg.label_proj_dim, true),
        ("encoder.0".into(), cfg.feature_dim + cfg.label_proj_dim, e0, true),
        ("encoder.1".into(), e0, e1, true),
        ("encoder.2".into(), e1, cfg.repr_dim, true),
        ("latent.common".into(), cfg.repr_dim, cfg.latent_dim, true),
        ("latent.mean".into(), cfg.latent_dim, cfg.latent_dim, true),
        ("latent.std".into(), cfg.latent_dim, cfg.latent_dim, true),
        ("decoder.0".into(), dec_in, d0, true),
        ("decoder.1".into(), d0, d1, true),
        ("decoder.2".into(), d1, d2, true),
        ("decoder.mean".into(), d2, cfg.label_dim, true),
        ("decoder.std".into(), d2, cfg.label_dim, true),
    ];
    if variant.has_det_path() {
        layers.push(("det".into(), cfg.repr_dim, cfg.repr_dim, true));
    }
    if variant.has_attention() {
        let width = cfg.attention_heads * cfg.attention_head_dim;
        layers.push(("attention.query".into(), cfg.feature_dim, width, false));
        layers.push(("attention.key".into(), cfg.feature_dim, width, false));
    }
    layers
}

/// Expected name and shape of every parameter tensor.
pub fn parameter_shapes(cfg: &ModelConfig, variant: ModelVariant) -> BTreeMap<String, Vec<usize>> {
    let mut shapes = BTreeMap::new();
    for (name, fan_in, fan_out, bias) in layer_specs(cfg, variant) {
        shapes.insert(format!("{name}.weight"), vec![fan_in, fan_out]);
        if bias {
            shapes.insert(format!("{name}.bias"), vec![1, fan_out]);
        }
    }
    shapes
}

/// Parameter tensors bound to a tape.
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    /// Binds already-recorded variables by parameter name.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Var)>) -> Self {
        BoundParams {
            vars: pairs.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::contract(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

/// How the global latent is fixed for one decode.
#[derive(Clone, Debug)]
pub enum LatentDraw {
    /// `z = μ_C`.
    Mean,
    /// `z = μ_C + σ_C ⊙ noise`.
    Noise(Tensor),
}

/// Sampling policy for the value-level [`ApModel::forward`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sampling {
    Sample,
    Mean,
}

/// Frame data for one recorded forward pass.
pub struct FrameData<'a> {
    pub features: &'a Tensor,
    pub context_labels: &'a Tensor,
    /// Labels for encoding the target set; needed only for the KL term.
    pub target_labels: Option<&'a Tensor>,
}

#[derive(Clone, Copy, Debug)]
pub struct EncodedVars {
    pub per_frame: Var,
    pub aggregated: Var,
    pub latent: GaussianVar,
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub prediction: GaussianVar,
    pub context: EncodedVars,
    pub target: Option<EncodedVars>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedContext {
    pub per_frame: Tensor,
    pub aggregated: Tensor,
    pub latent: DiagonalGaussian,
}

/// Per-target-frame predictive distributions, one row per target index.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveOutput {
    pub target_indices: Vec<usize>,
    pub distribution: DiagonalGaussian,
}

impl PredictiveOutput {
    pub fn mean(&self) -> &Tensor {
        self.distribution.mean()
    }

    pub fn std(&self) -> &Tensor {
        self.distribution.std()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub prediction: PredictiveOutput,
    pub context: EncodedContext,
    pub target: Option<EncodedContext>,
}

/// Aggregation applied to per-frame context representations.
pub enum Aggregation<'a> {
    Mean,
    Attention {
        context_features: &'a Tensor,
        query_features: &'a Tensor,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ApModel {
    config: ModelConfig,
    variant: ModelVariant,
    params: ModelParams,
}

impl ApModel {
    pub fn new(config: ModelConfig, variant: ModelVariant, params: ModelParams) -> Result<Self> {
        config.validate()?;
        let expected = parameter_shapes(&config, variant);
        for (name, shape) in &expected {
            match params.get(name) {
                None => return Err(Error::checkpoint(name, "missing tensor")),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(Error::checkpoint(
                        name,
                        format!("shape {:?} does not match architecture {:?}", t.shape(), shape),
                    ))
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = params.names().find(|n| !expected.contains_key(*n)) {
            return Err(Error::checkpoint(extra.as_str(), "unexpected tensor for this architecture"));
        }
        Ok(ApModel {
            config,
            variant,
            params,
        })
    }

    /// Glorot-uniform weights and zero biases.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, variant: ModelVariant, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut tensors = BTreeMap::new();
        for (name, fan_in, fan_out, bias) in layer_specs(&config, variant) {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit)
                .map_err(|e| Error::Numeric(format!("initialising {name}: {e}")))?;
            let data = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
            tensors.insert(format!("{name}.weight"), Tensor::matrix(fan_in, fan_out, data)?);
            if bias {
                tensors.insert(format!("{name}.bias"), Tensor::zeros(&[1, fan_out]));
            }
        }
        ApModel::new(config, variant, ModelParams::from_map(tensors))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> ModelVariant {
        self.variant
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    /// Records the parameters on `tape`, as gradient leaves when `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        let vars = self
            .params
            .iter()
            .map(|(name, t)| {
                let v = if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (name.clone(), v)
            })
            .collect();
        BoundParams { vars }
    }

    fn linear(&self, tape: &mut Tape, b: &BoundParams, name: &str, x: Var) -> Result<Var> {
        let w = b.get(&format!("{name}.weight"))?;
        let y = tape.matmul(x, w)?;
        match b.vars.get(&format!("{name}.bias")) {
            Some(&bias) => {
                let rows = tape.shape(y)[0];
                let bias = tape.repeat_rows(bias, rows)?;
                tape.add(y, bias)
            }
            None => Ok(y),
        }
    }

    fn std_head(&self, tape: &mut Tape, b: &BoundParams, name: &str, h: Var) -> Result<Var> {
        let raw = self.linear(tape, b, name, h)?;
        let sp = tape.softplus(raw);
        Ok(tape.offset(sp, self.config.std_floor))
    }

    /// Encodes `n` (feature, label) pairs given as `n × F` and `n × label_dim` into `n × repr_dim`.
    pub fn encode_pairs(&self, tape: &mut Tape, b: &BoundParams, x: Var, y: Var) -> Result<Var> {
        let proj = self.linear(tape, b, "label_proj", y)?;
        let h = tape.concat_cols(&[x, proj])?;
        let h = self.linear(tape, b, "encoder.0", h)?;
        let h = tape.relu(h);
        let h = self.linear(tape, b, "encoder.1", h)?;
        let h = tape.relu(h);
        self.linear(tape, b, "encoder.2", h)
    }

    /// Row-wise latent Gaussian for representations shaped `n × repr_dim`.
    pub fn latent_encode_vars(&self, tape: &mut Tape, b: &BoundParams, r: Var) -> Result<GaussianVar> {
        let h = self.linear(tape, b, "latent.common", r)?;
        let h = tape.relu(h);
        let mean = self.linear(tape, b, "latent.mean", h)?;
        let std = self.std_head(tape, b, "latent.std", h)?;
        Ok(GaussianVar { mean, std })
    }

    /// Multi-head scaled dot-product attention of targets over context
    /// representations. Queries and keys are projected features; values are
    /// the representations, split evenly across heads.
    pub fn attend(
        &self,
        tape: &mut Tape,
        b: &BoundParams,
        reprs: Var,
        context_features: Var,
        query_features: Var,
    ) -> Result<Var> {
        if tape.shape(reprs)[0] == 0 {
            return Err(Error::contract("attention over an empty context"));
        }
        let heads = self.config.attention_heads;
        let hd = self.config.attention_head_dim;
        let vd = self.config.repr_dim / heads;
        let q = tape.matmul(query_features, b.get("attention.query.weight")?)?;
        let k = tape.matmul(context_features, b.get("attention.key.weight")?)?;
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = tape.slice_cols(q, h * hd, (h + 1) * hd)?;
            let kh = tape.slice_cols(k, h * hd, (h + 1) * hd)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, 1.0 / (hd as f64).sqrt());
            let weights = tape.softmax_rows(scores)?;
            let vh = tape.slice_cols(reprs, h * vd, (h + 1) * vd)?;
            outs.push(tape.matmul(weights, vh)?);
        }
        tape.concat_cols(&outs)
    }

    /// Decodes `T × F` target features under one `1 × z` latent (and an
    /// optional `T × repr_dim` deterministic representation).
    pub fn decode_vars(
        &self,
        tape: &mut Tape,
        b: &BoundParams,
        x: Var,
        z: Var,
        det: Option<Var>,
    ) -> Result<GaussianVar> {
        let rows = tape.shape(x)[0];
        let zr = tape.repeat_rows(z, rows)?;
        let h = match (self.variant.has_det_path(), det) {
            (true, Some(d)) => tape.concat_cols(&[x, zr, d])?,
            (true, None) => {
                return Err(Error::contract(
                    "deterministic path enabled but no deterministic representation given",
                ))
            }
            (false, _) => tape.concat_cols(&[x, zr])?,
        };
        let h = self.linear(tape, b, "decoder.0", h)?;
        let h = tape.relu(h);
        let h = self.linear(tape, b, "decoder.1", h)?;
        let h = tape.relu(h);
        let h = self.linear(tape, b, "decoder.2", h)?;
        let h = tape.relu(h);
        let mean = self.linear(tape, b, "decoder.mean", h)?;
        let std = self.std_head(tape, b, "decoder.std", h)?;
        Ok(GaussianVar { mean, std })
    }

    fn encode_set(&self, tape: &mut Tape, b: &BoundParams, x: &Tensor, y: &Tensor) -> Result<EncodedVars> {
        if x.rows() == 0 {
            return Err(Error::contract("cannot encode an empty set"));
        }
        let xv = tape.constant(x.clone());
        let yv = if self.variant.uses_labels() {
            tape.constant(y.clone())
        } else {
            tape.constant(Tensor::zeros(y.shape()))
        };
        let per_frame = self.encode_pairs(tape, b, xv, yv)?;
        let aggregated = tape.mean_rows(per_frame)?;
        let latent = self.latent_encode_vars(tape, b, aggregated)?;
        Ok(EncodedVars {
            per_frame,
            aggregated,
            latent,
        })
    }

    /// Records one full pass: encode context (and targets when labels are
    /// given), fix one `z` for the whole sequence and decode every target.
    pub fn forward_vars(
        &self,
        tape: &mut Tape,
        b: &BoundParams,
        frames: &FrameData<'_>,
        split: &ContextTargetSplit,
        draw: &LatentDraw,
    ) -> Result<ForwardVars> {
        let len = frames.features.rows();
        split.check_len(len)?;
        self.check_frames(frames)?;

        let x_ctx = frames.features.select_rows(split.context_indices())?;
        let y_ctx = frames.context_labels.select_rows(split.context_indices())?;
        let context = self.encode_set(tape, b, &x_ctx, &y_ctx)?;

        let x_tgt_t = frames.features.select_rows(split.target_indices())?;
        let target = match frames.target_labels {
            Some(labels) => {
                let y_tgt = labels.select_rows(split.target_indices())?;
                Some(self.encode_set(tape, b, &x_tgt_t, &y_tgt)?)
            }
            None => None,
        };

        let z = if self.variant.has_latent_sample() {
            match draw {
                LatentDraw::Mean => context.latent.mean,
                LatentDraw::Noise(noise) => {
                    let n = tape.constant(noise.clone());
                    context.latent.rsample(tape, n)?
                }
            }
        } else {
            context.aggregated
        };

        let x_tgt = tape.constant(x_tgt_t);
        let det = if self.variant.has_det_path() {
            let r = if self.variant.has_attention() {
                let x_ctx_v = tape.constant(x_ctx);
                self.attend(tape, b, context.per_frame, x_ctx_v, x_tgt)?
            } else {
                let t = split.target_indices().len();
                tape.repeat_rows(context.aggregated, t)?
            };
            Some(self.linear(tape, b, "det", r)?)
        } else {
            None
        };

        let prediction = self.decode_vars(tape, b, x_tgt, z, det)?;
        Ok(ForwardVars {
            prediction,
            context,
            target,
        })
    }

    fn check_frames(&self, frames: &FrameData<'_>) -> Result<()> {
        let (len, f) = frames.features.expect_matrix("forward")?;
        if f != self.config.feature_dim {
            return Err(Error::Dimension {
                op: "forward features",
                lhs: frames.features.shape().to_vec(),
                rhs: vec![len, self.config.feature_dim],
            });
        }
        let expected = [len, self.config.label_dim];
        for labels in std::iter::once(frames.context_labels).chain(frames.target_labels) {
            if labels.shape() != expected {
                return Err(Error::Dimension {
                    op: "forward labels",
                    lhs: labels.shape().to_vec(),
                    rhs: expected.to_vec(),
                });
            }
        }
        Ok(())
    }

    /// Noise for one latent draw.
    pub fn draw_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Tensor {
        let data = (0..self.config.latent_dim)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        Tensor::row(data)
    }

    /// Value-level forward pass over a sequence.
    ///
    /// Context labels come from the split's label source; the target set is
    /// additionally encoded with ground-truth labels.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        sequence: &Sequence,
        split: &ContextTargetSplit,
        sampling: Sampling,
        rng: &mut R,
    ) -> Result<ForwardOutput> {
        let draw = match sampling {
            Sampling::Sample if self.variant.has_latent_sample() => LatentDraw::Noise(self.draw_noise(rng)),
            _ => LatentDraw::Mean,
        };
        let context_labels = match split.label_source() {
            LabelSource::GroundTruth => &sequence.labels,
            LabelSource::PseudoLabel => &sequence.pseudo_labels,
        };
        let frames = FrameData {
            features: &sequence.features,
            context_labels,
            target_labels: Some(&sequence.labels),
        };
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let vars = self.forward_vars(&mut tape, &b, &frames, split, &draw)?;
        let encoded = |e: EncodedVars| -> Result<EncodedContext> {
            Ok(EncodedContext {
                per_frame: tape.value(e.per_frame).clone(),
                aggregated: tape.value(e.aggregated).clone(),
                latent: e.latent.value(&tape)?,
            })
        };
        Ok(ForwardOutput {
            prediction: PredictiveOutput {
                target_indices: split.target_indices().to_vec(),
                distribution: vars.prediction.value(&tape)?,
            },
            context: encoded(vars.context)?,
            target: vars.target.map(encoded).transpose()?,
        })
    }

    /// Decodes target features under a fixed latent value.
    pub fn decode(&self, features: &Tensor, z: &Tensor, det: Option<&Tensor>) -> Result<DiagonalGaussian> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let x = tape.constant(features.clone());
        let z = tape.constant(z.clone());
        let det = match det {
            Some(d) => {
                let d = tape.constant(d.clone());
                Some(self.linear(&mut tape, &b, "det", d)?)
            }
            None => None,
        };
        self.decode_vars(&mut tape, &b, x, z, det)?.value(&tape)
    }

    /// Encodes a single (feature, label) pair given as row vectors.
    pub fn encode_pair(&self, x: &Tensor, y: &Tensor) -> Result<Tensor> {
        if x.numel() != self.config.feature_dim || y.numel() != self.config.label_dim {
            return Err(Error::Dimension {
                op: "encode_pair",
                lhs: vec![x.numel(), y.numel()],
                rhs: vec![self.config.feature_dim, self.config.label_dim],
            });
        }
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let xv = tape.constant(x.reshape(&[1, x.numel()])?);
        let yv = tape.constant(y.reshape(&[1, y.numel()])?);
        let r = self.encode_pairs(&mut tape, &b, xv, yv)?;
        Ok(tape.value(r).clone())
    }

    pub fn latent_encode(&self, r: &Tensor) -> Result<DiagonalGaussian> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let rv = tape.constant(r.reshape(&[1, r.numel()])?);
        self.latent_encode_vars(&mut tape, &b, rv)?.value(&tape)
    }

    /// Aggregates `C × repr_dim` representations; attention yields one row per query.
    pub fn aggregate(&self, reprs: &Tensor, mode: Aggregation<'_>) -> Result<Tensor> {
        if reprs.rows() == 0 || reprs.numel() == 0 {
            return Err(Error::contract("aggregation over an empty context"));
        }
        let mut tape = Tape::new();
        let r = tape.constant(reprs.clone());
        let out = match mode {
            Aggregation::Mean => tape.mean_rows(r)?,
            Aggregation::Attention {
                context_features,
                query_features,
            } => {
                if !self.variant.has_attention() {
                    return Err(Error::contract("model has no attention parameters"));
                }
                let b = self.bind(&mut tape, false);
                let k = tape.constant(context_features.clone());
                let q = tape.constant(query_features.clone());
                self.attend(&mut tape, &b, r, k, q)?
            }
        };
        Ok(tape.value(out).clone())
    }

    /// `‖σ_c‖₂` of the latent each frame would induce as a single-frame context.
    ///
    /// The deterministic variant never trains a latent distribution, so it has
    /// no `σ_c` to rank frames by.
    pub fn frame_uncertainty(&self, features: &Tensor, labels: &Tensor) -> Result<Vec<f64>> {
        if !self.variant.has_latent_sample() {
            return Err(Error::contract(format!(
                "variant `{}` has no latent distribution to rank frames by",
                self.variant
            )));
        }
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let x = tape.constant(features.clone());
        let y = if self.variant.uses_labels() {
            tape.constant(labels.clone())
        } else {
            tape.constant(Tensor::zeros(labels.shape()))
        };
        let r = self.encode_pairs(&mut tape, &b, x, y)?;
        let latent = self.latent_encode_vars(&mut tape, &b, r)?;
        let std = tape.value(latent.std);
        Ok((0..std.rows())
            .map(|i| std.row_slice(i).iter().map(|s| s * s).sum::<f64>().sqrt())
            .collect())
    }
}

/// Column-wise mean of `C × d` representations.
pub fn aggregate_mean(reprs: &Tensor) -> Result<Tensor> {
    if reprs.rows() == 0 || reprs.numel() == 0 {
        return Err(Error::contract("aggregation over an empty context"));
    }
    let mut tape = Tape::new();
    let r = tape.constant(reprs.clone());
    let m = tape.mean_rows(r)?;
    Ok(tape.value(m).clone())
}
