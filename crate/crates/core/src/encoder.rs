//! Dense tanh encoders, the Euclidean-to-hyperboloid embedding pipeline and
//! SGD training for old and new model generations.

use log::debug;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Real, Tape};
use crate::data::Samples;
use crate::error::{HbctError, Result};
use crate::losses::{self, AlignmentConfig, MlrHead, OldOutputs};
use crate::manifold::{self, EuclideanEmbedding, LorentzPoint, ManifoldConfig};

/// Shape of one dense layer, `out x in` weights followed by `out` biases in
/// the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub input: usize,
    pub output: usize,
}

impl LayerShape {
    pub fn num_params(&self) -> usize {
        self.input * self.output + self.output
    }
}

/// Dense feed-forward encoder with tanh between layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    layers: Vec<LayerShape>,
    params: Vec<f64>,
    generation: u32,
}

impl EncoderModel {
    /// Xavier-uniform weights, zero biases.
    pub fn init(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        generation: u32,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut model = Self::zeros(input_dim, hidden, output_dim, generation)?;
        let mut offset = 0;
        for layer in &model.layers {
            let bound = (6.0 / (layer.input + layer.output) as f64).sqrt();
            for w in &mut model.params[offset..offset + layer.input * layer.output] {
                *w = rng.random_range(-bound..bound);
            }
            offset += layer.num_params();
        }
        Ok(model)
    }

    pub fn zeros(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        generation: u32,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || hidden.contains(&0) {
            return Err(HbctError::invalid("layer widths must be positive"));
        }
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden);
        widths.push(output_dim);
        let layers: Vec<LayerShape> = widths
            .windows(2)
            .map(|w| LayerShape {
                input: w[0],
                output: w[1],
            })
            .collect();
        let n = layers.iter().map(LayerShape::num_params).sum();
        Ok(Self {
            layers,
            params: vec![0.0; n],
            generation,
        })
    }

    pub fn from_parts(layers: Vec<LayerShape>, params: Vec<f64>, generation: u32) -> Result<Self> {
        if layers.is_empty() || layers.windows(2).any(|w| w[0].output != w[1].input) {
            return Err(HbctError::invalid("layer shapes do not chain"));
        }
        let n: usize = layers.iter().map(LayerShape::num_params).sum();
        if params.len() != n {
            return Err(HbctError::invalid(format!(
                "expected {n} parameters, got {}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(HbctError::invalid("non-finite parameters"));
        }
        Ok(Self {
            layers,
            params,
            generation,
        })
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output
    }

    pub fn hidden_dims(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.output)
            .collect()
    }

    pub fn generation(&self) -> u32 {
        self.generation
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        forward_with(&self.layers, &self.params, x)
    }
}

/// Forward pass with parameters supplied separately, so the same code runs on
/// taped variables.
pub fn forward_with<S: Real>(layers: &[LayerShape], params: &[S], x: &[f64]) -> Vec<S> {
    assert_eq!(x.len(), layers[0].input, "input dimension mismatch");
    let mut offset = 0;
    let mut act: Vec<S> = Vec::new();
    for (li, layer) in layers.iter().enumerate() {
        let weights = &params[offset..offset + layer.input * layer.output];
        let bias = &params[offset + layer.input * layer.output..offset + layer.num_params()];
        let rows = weights.chunks(layer.input);
        let mut next: Vec<S> = if li == 0 {
            rows.zip(bias)
                .map(|(row, &b)| S::dot_const(row, x) + b)
                .collect()
        } else {
            rows.zip(bias)
                .map(|(row, &b)| S::dot(row, &act) + b)
                .collect()
        };
        if li + 1 < layers.len() {
            next.iter_mut().for_each(|v| *v = v.tanh());
        }
        act = next;
        offset += layer.num_params();
    }
    act
}

/// Clip thresholds per model generation: `zeta_old + g * zeta_step`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipPolicy {
    pub zeta_old: f64,
    pub zeta_step: f64,
}

impl Default for ClipPolicy {
    fn default() -> Self {
        Self {
            zeta_old: 1.0,
            zeta_step: 0.2,
        }
    }
}

impl ClipPolicy {
    pub fn zeta(&self, generation: u32) -> f64 {
        self.zeta_old + generation as f64 * self.zeta_step
    }

    pub fn validate(&self, max_generation: u32) -> Result<()> {
        for g in 0..=max_generation {
            if self.zeta(g).is_nan() || self.zeta(g) <= 0.0 {
                return Err(HbctError::Config(format!(
                    "clip threshold for generation {g} is not positive"
                )));
            }
        }
        Ok(())
    }
}

/// `z -> rescale/clip -> expm_0`. Returns the clipped embedding and the point.
pub fn embed(
    model: &EncoderModel,
    x: &[f64],
    policy: &ClipPolicy,
    cfg: &ManifoldConfig,
) -> Result<(EuclideanEmbedding, LorentzPoint)> {
    if x.len() != model.input_dim() {
        return Err(HbctError::invalid(format!(
            "input has length {}, model expects {}",
            x.len(),
            model.input_dim()
        )));
    }
    if model.output_dim() != cfg.dim() {
        return Err(HbctError::invalid(
            "model output dimension differs from the manifold dimension",
        ));
    }
    let z = model.forward(x);
    let clipped = manifold::rescale_clip(&z, policy.zeta(model.generation));
    let h = manifold::expm_origin(&clipped, cfg);
    Ok((EuclideanEmbedding::new(clipped)?, h))
}

pub fn embed_all(
    model: &EncoderModel,
    features: &[Vec<f64>],
    policy: &ClipPolicy,
    cfg: &ManifoldConfig,
) -> Result<Vec<(EuclideanEmbedding, LorentzPoint)>> {
    features
        .iter()
        .map(|x| embed(model, x, policy, cfg))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub cosine_schedule: bool,
    /// Start the new model from the old parameters when the shapes agree.
    pub init_from_old: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            cosine_schedule: true,
            init_from_old: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(HbctError::Config(
                "epochs and batch size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(HbctError::Config("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(HbctError::Config(
                "momentum must lie in [0, 1) and weight decay be >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Learning rate for an epoch under the cosine annealing schedule.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.cosine_schedule {
            let t = epoch as f64 / self.epochs as f64;
            0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * t).cos())
        } else {
            self.learning_rate
        }
    }
}

/// SGD with momentum and L2 weight decay.
#[derive(Debug, Clone)]
struct Sgd {
    velocity: Vec<f64>,
    momentum: f64,
    weight_decay: f64,
}

impl Sgd {
    fn new(n: usize, cfg: &TrainConfig) -> Self {
        Self {
            velocity: vec![0.0; n],
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            *v = self.momentum * *v + g + self.weight_decay * *p;
            *p -= lr * *v;
        }
    }
}

/// A trained generation: encoder, classifier and per-epoch mean loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub model: EncoderModel,
    pub head: MlrHead,
    pub epoch_losses: Vec<f64>,
}

/// Frozen old-model outputs for every training sample.
struct OldTargets<'a> {
    points: Vec<LorentzPoint>,
    uncertainties: Vec<f64>,
    align: &'a AlignmentConfig,
}

/// Architecture of an encoder: hidden widths (empty means linear).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Arch {
    pub hidden: Vec<usize>,
}

impl Arch {
    pub fn linear() -> Self {
        Self { hidden: Vec::new() }
    }

    pub fn mlp(hidden: &[usize]) -> Self {
        Self {
            hidden: hidden.to_vec(),
        }
    }
}

/// Trains an encoder of the given generation with the base loss only.
pub fn train_base(
    data: &Samples,
    num_classes: usize,
    arch: &Arch,
    generation: u32,
    mcfg: &ManifoldConfig,
    clip: &ClipPolicy,
    train: &TrainConfig,
) -> Result<Trained> {
    run_training(
        data,
        num_classes,
        arch,
        generation,
        None,
        mcfg,
        clip,
        train,
        None,
    )
}

/// Trains the first (old) generation with the base classification loss.
pub fn train_old(
    data: &Samples,
    num_classes: usize,
    arch: &Arch,
    mcfg: &ManifoldConfig,
    clip: &ClipPolicy,
    train: &TrainConfig,
) -> Result<Trained> {
    train_base(data, num_classes, arch, 0, mcfg, clip, train)
}

/// Trains the next generation against a frozen `old` encoder with the
/// combined objective. The old model is only read.
#[allow(clippy::too_many_arguments)]
pub fn train_new(
    data: &Samples,
    num_classes: usize,
    arch: &Arch,
    old: &EncoderModel,
    align: &AlignmentConfig,
    mcfg: &ManifoldConfig,
    clip: &ClipPolicy,
    train: &TrainConfig,
) -> Result<Trained> {
    align.validate()?;
    let generation = old.generation() + 1;
    if align.lambda == 0.0 {
        return run_training(
            data,
            num_classes,
            arch,
            generation,
            None,
            mcfg,
            clip,
            train,
            Some(old),
        );
    }
    let embedded = embed_all(old, &data.features, clip, mcfg)?;
    let points: Vec<LorentzPoint> = embedded.into_iter().map(|(_, h)| h).collect();
    let uncertainties = points
        .iter()
        .map(|h| manifold::uncertainty(h, mcfg))
        .collect();
    let targets = OldTargets {
        points,
        uncertainties,
        align,
    };
    run_training(
        data,
        num_classes,
        arch,
        generation,
        Some(targets),
        mcfg,
        clip,
        train,
        Some(old),
    )
}

#[allow(clippy::too_many_arguments)]
fn run_training(
    data: &Samples,
    num_classes: usize,
    arch: &Arch,
    generation: u32,
    old: Option<OldTargets<'_>>,
    mcfg: &ManifoldConfig,
    clip: &ClipPolicy,
    train: &TrainConfig,
    init_source: Option<&EncoderModel>,
) -> Result<Trained> {
    train.validate()?;
    if data.is_empty() {
        return Err(HbctError::invalid("training data is empty"));
    }
    let input_dim = data.features[0].len();
    if data.labels.iter().any(|&l| l >= num_classes) {
        return Err(HbctError::invalid("label outside the class range"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    let mut model = EncoderModel::init(input_dim, &arch.hidden, mcfg.dim(), generation, &mut rng)?;
    if let Some(src) = init_source.filter(|_| train.init_from_old) {
        if src.layers == model.layers {
            model.params.clone_from(&src.params);
        }
    }
    let mut head: Vec<f64> = (0..num_classes * mcfg.dim())
        .map(|_| rng.random_range(-0.1..0.1))
        .collect();

    let zeta = clip.zeta(generation);
    let n_model = model.params.len();
    let mut opt = Sgd::new(n_model + head.len(), train);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(train.epochs);
    let mut step = 0;
    let align = old.as_ref().map_or(
        AlignmentConfig {
            lambda: 0.0,
            ..Default::default()
        },
        |o| *o.align,
    );

    for epoch in 0..train.epochs {
        order.shuffle(&mut rng);
        let lr = train.lr_at(epoch);
        let mut loss_sum = 0.0;
        for batch in order.chunks(train.batch_size) {
            let tape = Tape::new();
            let pv = tape.vars(&model.params);
            let hv = tape.vars(&head);
            let rows: Vec<Vec<_>> = hv.chunks(mcfg.dim()).map(<[_]>::to_vec).collect();
            let points: Vec<LorentzPoint<_>> = batch
                .iter()
                .map(|&i| {
                    let z = forward_with(&model.layers, &pv, &data.features[i]);
                    manifold::expm_origin(&manifold::rescale_clip(&z, zeta), mcfg)
                })
                .collect();
            let labels: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
            let old_pts: Vec<LorentzPoint>;
            let old_unc: Vec<f64>;
            let old_out = match &old {
                // alignment needs at least two pairs; a trailing singleton batch trains on the base loss
                Some(t) if batch.len() >= 2 => {
                    old_pts = batch.iter().map(|&i| t.points[i].clone()).collect();
                    old_unc = batch.iter().map(|&i| t.uncertainties[i]).collect();
                    Some(OldOutputs {
                        points: &old_pts,
                        uncertainties: &old_unc,
                    })
                }
                _ => None,
            };
            let batch_align = if old_out.is_some() {
                align
            } else {
                AlignmentConfig {
                    lambda: 0.0,
                    ..align
                }
            };
            let fail = |e: HbctError| HbctError::TrainingFailure {
                step,
                reason: e.to_string(),
            };
            let loss = losses::total_loss(&points, &labels, old_out, &rows, &batch_align, mcfg)
                .map_err(fail)?;
            let value = loss.total.value();
            let grads = tape.backward(loss.total).map_err(fail)?;
            if !value.is_finite() {
                return Err(fail(HbctError::domain("loss is not finite")));
            }
            let g_model = grads.wrt_all(&pv);
            let g_head = grads.wrt_all(&hv);
            let mut all: Vec<f64> = model.params.iter().chain(&head).copied().collect();
            let g: Vec<f64> = g_model.into_iter().chain(g_head).collect();
            opt.step(&mut all, &g, lr);
            if all.iter().any(|p| !p.is_finite()) {
                return Err(fail(HbctError::domain("parameters diverged")));
            }
            model.params.copy_from_slice(&all[..n_model]);
            head.copy_from_slice(&all[n_model..]);
            loss_sum += value * batch.len() as f64;
            step += 1;
        }
        let mean = loss_sum / data.len() as f64;
        debug!("generation {generation} epoch {epoch}: loss {mean:.5}");
        epoch_losses.push(mean);
    }
    Ok(Trained {
        model,
        head: MlrHead::from_flat(&head, num_classes)?,
        epoch_losses,
    })
}

/// Fraction of samples whose MLR prediction matches the label.
pub fn accuracy(
    trained: &Trained,
    data: &Samples,
    mcfg: &ManifoldConfig,
    clip: &ClipPolicy,
) -> Result<f64> {
    let mut hits = 0;
    for (x, &y) in data.features.iter().zip(&data.labels) {
        let (_, h) = embed(&trained.model, x, clip, mcfg)?;
        if trained.head.predict(&h, mcfg) == y {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len().max(1) as f64)
}
