//! Training objectives.
//!
//! * hyperbolic multinomial logistic regression (the base classification loss),
//! * the entailment-cone loss keeping new embeddings inside the cone of the
//!   matching old embedding,
//! * the robust contrastive loss whose exponent `q` follows the uncertainty
//!   of the old embedding, plus InfoNCE and mean-distortion variants,
//! * the combined objective.
//!
//! Every loss is generic over [`Real`]; old embeddings are constants because
//! the old encoder is frozen while the new one trains.

use std::f64::consts::FRAC_PI_2;

use crate::autodiff::Real;
use crate::error::{HbctError, Result};
use crate::manifold::{self, inner, inner_const, LorentzPoint, ManifoldConfig};

/// Lower bound of the adaptive RINCE exponent.
pub const Q_MIN: f64 = 1e-3;

/// Floor of `(K <h_o, h_n>_L)^2 - 1` inside the exterior-angle square root.
pub const EXTERIOR_SQRT_FLOOR: f64 = 1e-12;

/// Per-class hyperplanes of the hyperbolic MLR classifier.
///
/// Row `y` is the space part of a tangent vector `w_y = [0, row]` at the
/// origin.
#[derive(Debug, Clone, PartialEq)]
pub struct MlrHead {
    pub rows: Vec<Vec<f64>>,
}

impl MlrHead {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(HbctError::invalid("classifier needs at least one class"));
        };
        let d = first.len();
        if rows
            .iter()
            .any(|r| r.len() != d || r.iter().any(|v| !v.is_finite()))
        {
            return Err(HbctError::invalid(
                "classifier rows must be finite and equally long",
            ));
        }
        Ok(Self { rows })
    }

    pub fn num_classes(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn flat(&self) -> Vec<f64> {
        self.rows.concat()
    }

    pub fn from_flat(values: &[f64], num_classes: usize) -> Result<Self> {
        if num_classes == 0 || !values.len().is_multiple_of(num_classes) {
            return Err(HbctError::invalid(
                "flat head length is not a multiple of the class count",
            ));
        }
        let d = values.len() / num_classes;
        Self::new(values.chunks(d).map(<[f64]>::to_vec).collect())
    }

    /// Logits for a concrete point.
    pub fn logits(&self, h: &LorentzPoint, cfg: &ManifoldConfig) -> Vec<f64> {
        mlr_logits(h, &self.rows, cfg)
    }

    /// Most likely class.
    pub fn predict(&self, h: &LorentzPoint, cfg: &ManifoldConfig) -> usize {
        let logits = self.logits(h, cfg);
        logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map_or(0, |(i, _)| i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QMode {
    /// `q = clamp(Uncertainty(h_o), 1e-3, 1)` per pair.
    Adaptive,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceKind {
    /// Geodesic distance.
    Geodesic,
    /// Negated Lorentz inner product `-<x, y>_L`.
    LorentzInner,
    /// Squared Lorentz distance `<x - y, x - y>_L = -2/K - 2<x, y>_L`.
    SquaredLorentz,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContrastKind {
    Rince,
    Infonce,
    MeanDistortion,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentConfig {
    /// Weight of the whole alignment term.
    pub lambda: f64,
    /// Weight of the entailment loss inside the alignment term.
    pub lambda_entail: f64,
    pub tau: f64,
    pub beta: f64,
    /// Cone constant in the aperture.
    pub epsilon_aperture: f64,
    pub q_mode: QMode,
    pub distance: DistanceKind,
    pub contrast: ContrastKind,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            lambda: 0.3,
            lambda_entail: 1.0,
            tau: 0.5,
            beta: 0.01,
            epsilon_aperture: 0.1,
            q_mode: QMode::Adaptive,
            distance: DistanceKind::Geodesic,
            contrast: ContrastKind::Rince,
        }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HbctError::Config(msg));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!(
                "alignment weight must be >= 0, got {}",
                self.lambda
            ));
        }
        if !(self.lambda_entail >= 0.0 && self.lambda_entail.is_finite()) {
            return bad(format!(
                "entailment weight must be >= 0, got {}",
                self.lambda_entail
            ));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("temperature must be > 0, got {}", self.tau));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return bad(format!("beta must lie in (0, 1], got {}", self.beta));
        }
        if !(self.epsilon_aperture > 0.0 && self.epsilon_aperture.is_finite()) {
            return bad(format!(
                "aperture constant must be > 0, got {}",
                self.epsilon_aperture
            ));
        }
        if let QMode::Fixed(q) = self.q_mode {
            if !(q > 0.0 && q <= 1.0) {
                return bad(format!("fixed q must lie in (0, 1], got {q}"));
            }
        }
        Ok(())
    }

    /// The RINCE exponent for an old embedding.
    pub fn q_for(&self, old: &LorentzPoint, cfg: &ManifoldConfig) -> f64 {
        match self.q_mode {
            QMode::Fixed(q) => q,
            QMode::Adaptive => manifold::uncertainty(old, cfg).clamp(Q_MIN, 1.0),
        }
    }
}

/// Hyperbolic MLR logits
/// `sign(<w,h>) |w|_L d(h, H_w) = |w|_L asinh(sqrt(K) <w,h>_L / |w|_L) / sqrt(K)`.
///
/// Rows with norm below `1e-12` produce a zero logit.
pub fn mlr_logits<S: Real>(h: &LorentzPoint<S>, rows: &[Vec<S>], cfg: &ManifoldConfig) -> Vec<S> {
    let sk = cfg.sqrt_k();
    rows.iter()
        .map(|w| {
            let wn = S::norm(w);
            let wh = S::dot(w, &h.space);
            if wn.value() < 1e-12 {
                return wh.constant(0.0);
            }
            wn * (wh * sk / wn).asinh() / sk
        })
        .collect()
}

/// `log(sum(exp(v)))` shifted by the maximum.
pub fn log_sum_exp<S: Real>(values: &[S]) -> Result<S> {
    let m = values
        .iter()
        .map(|v| v.value())
        .fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<S> = values.iter().map(|&v| (v - m).exp()).collect();
    Ok(S::sum(&shifted).ln()? + m)
}

/// Cross-entropy of the MLR posterior at `label`.
pub fn base_loss<S: Real>(
    h: &LorentzPoint<S>,
    label: usize,
    rows: &[Vec<S>],
    cfg: &ManifoldConfig,
) -> Result<S> {
    if label >= rows.len() {
        return Err(HbctError::invalid(format!(
            "label {label} out of range for {} classes",
            rows.len()
        )));
    }
    let logits = mlr_logits(h, rows, cfg);
    Ok(log_sum_exp(&logits)? - logits[label])
}

/// Half-aperture `asin(min(1, 2 eps / (sqrt(K) |h_space|)))` of the cone at
/// `h`. Saturates at `pi/2` near the origin.
pub fn aperture<S: Real>(h: &LorentzPoint<S>, cfg: &ManifoldConfig, epsilon: f64) -> Result<S> {
    let n = h.space_norm();
    if n.value() == 0.0 {
        return Ok(n.constant(FRAC_PI_2));
    }
    let ratio = (n * cfg.sqrt_k()).constant(2.0 * epsilon) / (n * cfg.sqrt_k());
    ratio.clamp(0.0, 1.0).asin()
}

/// Exterior angle at `h_o` in the geodesic triangle `(origin, h_o, h_n)`.
pub fn exterior_angle<S: Real>(
    h_o: &LorentzPoint<S>,
    h_n: &LorentzPoint<S>,
    cfg: &ManifoldConfig,
) -> Result<S> {
    let o_norm = h_o.space_norm();
    if o_norm.value() == 0.0 {
        return Err(HbctError::domain(
            "exterior angle is undefined at the origin",
        ));
    }
    let kin = inner(h_o, h_n) * cfg.curvature();
    let numer = h_n.time + h_o.time * kin;
    let denom = o_norm
        * (kin * kin - 1.0)
            .clamp(EXTERIOR_SQRT_FLOOR, f64::INFINITY)
            .sqrt()?;
    (numer / denom).clamp(-1.0, 1.0).acos()
}

/// `max(0, ext(h_o, h_n) - aper(h_o))`.
pub fn entailment_loss<S: Real>(
    h_n: &LorentzPoint<S>,
    h_o: &LorentzPoint<S>,
    cfg: &ManifoldConfig,
    epsilon: f64,
) -> Result<S> {
    let ext = exterior_angle(h_o, h_n, cfg)?;
    let aper = aperture(h_o, cfg, epsilon)?;
    Ok((ext - aper).max0())
}

/// Distance between a (possibly taped) point and a constant point.
pub fn pair_distance<S: Real>(
    x: &LorentzPoint<S>,
    y: &LorentzPoint,
    kind: DistanceKind,
    cfg: &ManifoldConfig,
) -> Result<S> {
    match kind {
        DistanceKind::Geodesic => manifold::geodesic_to(x, y, cfg),
        DistanceKind::LorentzInner => Ok(-inner_const(x, y)),
        DistanceKind::SquaredLorentz => Ok(inner_const(x, y) * -2.0 - 2.0 / cfg.curvature()),
    }
}

fn check_batch<S>(new: &[LorentzPoint<S>], old: &[LorentzPoint]) -> Result<()> {
    if new.len() != old.len() {
        return Err(HbctError::invalid(format!(
            "new and old batches differ in length ({} vs {})",
            new.len(),
            old.len()
        )));
    }
    if new.len() < 2 {
        return Err(HbctError::invalid(
            "contrastive losses need a batch of at least 2",
        ));
    }
    Ok(())
}

/// Row `i` holds `D(new_i, old_j)` for every `j`.
fn distance_matrix<S: Real>(
    new: &[LorentzPoint<S>],
    old: &[LorentzPoint],
    kind: DistanceKind,
    cfg: &ManifoldConfig,
) -> Result<Vec<Vec<S>>> {
    new.iter()
        .map(|n| old.iter().map(|o| pair_distance(n, o, kind, cfg)).collect())
        .collect()
}

fn mean<S: Real>(terms: &[S]) -> S {
    S::sum(terms) / terms.len() as f64
}

/// Robust contrastive loss averaged over aligned pairs:
/// `-(1/q) exp(-q D_ii / tau) + (1/q) (beta sum_j exp(-D_ij / tau))^q`.
///
/// The negative sum runs over the whole batch, including `j = i`. `q` comes
/// from `q_values`, one per pair.
pub fn rince_loss<S: Real>(
    new: &[LorentzPoint<S>],
    old: &[LorentzPoint],
    q_values: &[f64],
    align: &AlignmentConfig,
    cfg: &ManifoldConfig,
) -> Result<S> {
    check_batch(new, old)?;
    if q_values.len() != new.len() {
        return Err(HbctError::invalid("one q value per pair is required"));
    }
    let dist = distance_matrix(new, old, align.distance, cfg)?;
    let tau = align.tau;
    let mut terms = Vec::with_capacity(new.len());
    for (i, row) in dist.iter().enumerate() {
        let q = q_values[i];
        let pos = (row[i] * (-q / tau)).exp() * (-1.0 / q);
        let exps: Vec<S> = row.iter().map(|&d| (d * (-1.0 / tau)).exp()).collect();
        let neg = (S::sum(&exps) * align.beta).powf(q)? / q;
        terms.push(pos + neg);
    }
    Ok(mean(&terms))
}

/// [`rince_loss`] with `q` taken from the configuration: the fixed value, or
/// the clamped uncertainty of each old embedding.
pub fn contrastive_loss<S: Real>(
    new: &[LorentzPoint<S>],
    old: &[LorentzPoint],
    uncertainties_old: &[f64],
    align: &AlignmentConfig,
    cfg: &ManifoldConfig,
) -> Result<S> {
    check_batch(new, old)?;
    let q: Vec<f64> = match align.q_mode {
        QMode::Fixed(q) => vec![q; new.len()],
        QMode::Adaptive => {
            if uncertainties_old.len() != new.len() {
                return Err(HbctError::invalid("one uncertainty per pair is required"));
            }
            uncertainties_old
                .iter()
                .map(|u| u.clamp(Q_MIN, 1.0))
                .collect()
        }
    };
    rince_loss(new, old, &q, align, cfg)
}

/// Softmax contrastive loss `mean_i (D_ii / tau + log sum_j exp(-D_ij / tau))`.
pub fn infonce_loss<S: Real>(
    new: &[LorentzPoint<S>],
    old: &[LorentzPoint],
    align: &AlignmentConfig,
    cfg: &ManifoldConfig,
) -> Result<S> {
    check_batch(new, old)?;
    let dist = distance_matrix(new, old, align.distance, cfg)?;
    let tau = align.tau;
    let mut terms = Vec::with_capacity(new.len());
    for (i, row) in dist.iter().enumerate() {
        let scaled: Vec<S> = row.iter().map(|&d| d * (-1.0 / tau)).collect();
        terms.push(row[i] / tau + log_sum_exp(&scaled)?);
    }
    Ok(mean(&terms))
}

/// Mean distance between aligned pairs.
pub fn mean_distortion_loss<S: Real>(
    new: &[LorentzPoint<S>],
    old: &[LorentzPoint],
    align: &AlignmentConfig,
    cfg: &ManifoldConfig,
) -> Result<S> {
    if new.len() != old.len() || new.is_empty() {
        return Err(HbctError::invalid(
            "mean distortion needs equal, non-empty batches",
        ));
    }
    let terms = new
        .iter()
        .zip(old)
        .map(|(n, o)| pair_distance(n, o, align.distance, cfg))
        .collect::<Result<Vec<S>>>()?;
    Ok(mean(&terms))
}

/// The contrastive term selected by `align.contrast`.
pub fn alignment_contrast<S: Real>(
    new: &[LorentzPoint<S>],
    old: &[LorentzPoint],
    uncertainties_old: &[f64],
    align: &AlignmentConfig,
    cfg: &ManifoldConfig,
) -> Result<S> {
    match align.contrast {
        ContrastKind::Rince => contrastive_loss(new, old, uncertainties_old, align, cfg),
        ContrastKind::Infonce => infonce_loss(new, old, align, cfg),
        ContrastKind::MeanDistortion => mean_distortion_loss(new, old, align, cfg),
    }
}

/// Mean entailment loss over aligned pairs.
pub fn mean_entailment<S: Real>(
    new: &[LorentzPoint<S>],
    old: &[LorentzPoint],
    cfg: &ManifoldConfig,
    epsilon: f64,
) -> Result<S> {
    if new.len() != old.len() || new.is_empty() {
        return Err(HbctError::invalid(
            "entailment needs equal, non-empty batches",
        ));
    }
    let terms = new
        .iter()
        .zip(old)
        .map(|(n, o)| {
            let o = constant_point(n.time, o);
            entailment_loss(n, &o, cfg, epsilon)
        })
        .collect::<Result<Vec<S>>>()?;
    Ok(mean(&terms))
}

/// Embeds a concrete point as constants alongside `like`.
pub fn constant_point<S: Real>(like: S, p: &LorentzPoint) -> LorentzPoint<S> {
    LorentzPoint {
        time: like.constant(p.time),
        space: p.space.iter().map(|&v| like.constant(v)).collect(),
    }
}

/// Old-model outputs paired with a batch.
#[derive(Debug, Clone, Copy)]
pub struct OldOutputs<'a> {
    pub points: &'a [LorentzPoint],
    pub uncertainties: &'a [f64],
}

#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown<S> {
    pub total: S,
    pub base: S,
    pub entail: Option<S>,
    pub contrast: Option<S>,
}

/// `L_base + lambda * (lambda_entail * L_entail + L_contrast)`, each term
/// averaged over the batch. With `lambda = 0` the total is the base loss
/// itself and the alignment terms are not evaluated.
pub fn total_loss<S: Real>(
    new: &[LorentzPoint<S>],
    labels: &[usize],
    old: Option<OldOutputs<'_>>,
    rows: &[Vec<S>],
    align: &AlignmentConfig,
    cfg: &ManifoldConfig,
) -> Result<LossBreakdown<S>> {
    if new.len() != labels.len() || new.is_empty() {
        return Err(HbctError::invalid(
            "batch and labels must be equal and non-empty",
        ));
    }
    let per_sample = new
        .iter()
        .zip(labels)
        .map(|(h, &y)| base_loss(h, y, rows, cfg))
        .collect::<Result<Vec<S>>>()?;
    let base = mean(&per_sample);
    if align.lambda == 0.0 {
        return Ok(LossBreakdown {
            total: base,
            base,
            entail: None,
            contrast: None,
        });
    }
    let old = old.ok_or_else(|| HbctError::invalid("alignment requires old-model outputs"))?;
    let entail = mean_entailment(new, old.points, cfg, align.epsilon_aperture)?;
    let contrast = alignment_contrast(new, old.points, old.uncertainties, align, cfg)?;
    let total = base + (entail * align.lambda_entail + contrast) * align.lambda;
    Ok(LossBreakdown {
        total,
        base,
        entail: Some(entail),
        contrast: Some(contrast),
    })
}
