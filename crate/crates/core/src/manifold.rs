//! Lorentz (hyperboloid) model of hyperbolic space with curvature `-K`.
//!
//! Points are stored as a time coordinate plus a `d`-dimensional space part
//! and satisfy `<x, x>_L = -1/K` with `x_time > 0`, where
//! `<x, y>_L = <x_space, y_space> - x_time * y_time`.
//!
//! Only maps at the origin `0 = [1/sqrt(K), 0, ..., 0]` are provided.
//!
//! The generic functions here take any [`Real`] so the same code runs on
//! plain floats and on taped variables during training.

use crate::autodiff::{acosh_clamped, Real, DOMAIN_SLACK};
use crate::error::{HbctError, Result};

/// Below this value of `sqrt(K) * |z|` the ratio `sinh(a) / a` is replaced by
/// its limit 1.
pub const SERIES_SWITCH: f64 = 1e-8;

/// Tolerance of the on-manifold constraint `|<x,x>_L + 1/K|`.
pub const ON_MANIFOLD_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManifoldConfig {
    curvature: f64,
    dim: usize,
}

impl ManifoldConfig {
    pub fn new(curvature: f64, dim: usize) -> Result<Self> {
        if !(curvature.is_finite() && curvature > 0.0) {
            return Err(HbctError::invalid(format!(
                "curvature magnitude K must be positive, got {curvature}"
            )));
        }
        if dim == 0 {
            return Err(HbctError::invalid("spatial dimension must be at least 1"));
        }
        Ok(Self { curvature, dim })
    }

    /// The curvature magnitude `K` (the space has curvature `-K`).
    pub fn curvature(&self) -> f64 {
        self.curvature
    }

    pub fn sqrt_k(&self) -> f64 {
        self.curvature.sqrt()
    }

    /// Spatial dimension `d`; the ambient space has `d + 1` coordinates.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn origin(&self) -> LorentzPoint {
        LorentzPoint {
            time: (1.0 / self.curvature).sqrt(),
            space: vec![0.0; self.dim],
        }
    }
}

/// A point on the hyperboloid.
#[derive(Debug, Clone, PartialEq)]
pub struct LorentzPoint<S = f64> {
    pub time: S,
    pub space: Vec<S>,
}

/// A tangent vector together with its base point.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub time: f64,
    pub space: Vec<f64>,
    pub base: LorentzPoint,
}

/// Euclidean encoder output before it is lifted to the hyperboloid.
#[derive(Debug, Clone, PartialEq)]
pub struct EuclideanEmbedding {
    pub values: Vec<f64>,
}

impl EuclideanEmbedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_finite(&values, "embedding")?;
        Ok(Self { values })
    }

    pub fn norm(&self) -> f64 {
        Real::norm(&self.values)
    }
}

impl<S: Real> LorentzPoint<S> {
    pub fn dim(&self) -> usize {
        self.space.len()
    }

    /// Ambient coordinates `[time, space...]`.
    pub fn to_ambient(&self) -> Vec<S> {
        let mut v = Vec::with_capacity(self.space.len() + 1);
        v.push(self.time);
        v.extend_from_slice(&self.space);
        v
    }

    pub fn space_norm(&self) -> S {
        S::norm(&self.space)
    }
}

impl LorentzPoint {
    /// Rebuilds a point from ambient coordinates, checking the constraint.
    pub fn from_ambient(coords: &[f64], cfg: &ManifoldConfig) -> Result<Self> {
        if coords.len() != cfg.dim + 1 {
            return Err(HbctError::invalid(format!(
                "expected {} ambient coordinates, got {}",
                cfg.dim + 1,
                coords.len()
            )));
        }
        check_finite(coords, "point")?;
        let p = LorentzPoint {
            time: coords[0],
            space: coords[1..].to_vec(),
        };
        let residual = constraint_residual(&p, cfg);
        if p.time <= 0.0 || residual > 1e-6 * (1.0 + p.time * p.time) {
            return Err(HbctError::invalid(format!(
                "point is not on the hyperboloid (residual {residual:e})"
            )));
        }
        Ok(p)
    }
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(HbctError::invalid(format!("{what} has non-finite entries")))
    }
}

/// `<x, y>_L = <x_space, y_space> - x_time * y_time` on ambient vectors.
pub fn lorentz_inner(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return Err(HbctError::invalid(format!(
            "Lorentz inner product of vectors with lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    Ok(Real::dot(&x[1..], &y[1..]) - x[0] * y[0])
}

/// Lorentz inner product of two points.
pub fn inner<S: Real>(x: &LorentzPoint<S>, y: &LorentzPoint<S>) -> S {
    S::dot(&x.space, &y.space) - x.time * y.time
}

/// Lorentz inner product of a point with a constant point.
pub fn inner_const<S: Real>(x: &LorentzPoint<S>, y: &LorentzPoint) -> S {
    S::dot_const(&x.space, &y.space) - x.time * y.time
}

/// `|<x,x>_L + 1/K|`.
pub fn constraint_residual(x: &LorentzPoint, cfg: &ManifoldConfig) -> f64 {
    (inner(x, x) + 1.0 / cfg.curvature).abs()
}

/// Completes a space part with the time coordinate `sqrt(1/K + |space|^2)`.
pub fn lift(space: &[f64], cfg: &ManifoldConfig) -> Result<LorentzPoint> {
    if space.len() != cfg.dim {
        return Err(HbctError::invalid(format!(
            "space part has length {}, expected {}",
            space.len(),
            cfg.dim
        )));
    }
    check_finite(space, "space part")?;
    let sq: f64 = Real::dot(space, space);
    Ok(LorentzPoint {
        time: (1.0 / cfg.curvature + sq).sqrt(),
        space: space.to_vec(),
    })
}

/// Geodesic distance `acosh(-K <x,y>_L) / sqrt(K)`.
///
/// The acosh argument is evaluated as `1 + K/2 * <x-y, x-y>_L`, which equals
/// `-K <x,y>_L` on the hyperboloid and is exactly 1 for identical points.
pub fn geodesic_distance(x: &LorentzPoint, y: &LorentzPoint, cfg: &ManifoldConfig) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(HbctError::invalid("points of different dimension"));
    }
    distance_parts(x.time, &x.space, y.time, &y.space, cfg.curvature)
}

/// [`geodesic_distance`] on ambient coordinate slices `[time, space...]`.
pub fn geodesic_distance_ambient(x: &[f64], y: &[f64], curvature: f64) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(HbctError::invalid("points of different dimension"));
    }
    distance_parts(x[0], &x[1..], y[0], &y[1..], curvature)
}

fn distance_parts(xt: f64, xs: &[f64], yt: f64, ys: &[f64], k: f64) -> Result<f64> {
    let mut dot = 0.0;
    let mut ds2 = 0.0;
    for (a, b) in xs.iter().zip(ys) {
        dot += a * b;
        ds2 += (a - b) * (a - b);
    }
    let raw = -k * (dot - xt * yt);
    if raw.is_nan() || raw < 1.0 - DOMAIN_SLACK {
        return Err(HbctError::domain(format!(
            "acosh argument {raw} < 1: points are not on a common hyperboloid"
        )));
    }
    let dt = xt - yt;
    let delta = (0.5 * k * (ds2 - dt * dt)).max(0.0);
    // acosh(1 + delta) without cancellation
    Ok((delta + (delta * (2.0 + delta)).sqrt()).ln_1p() / k.sqrt())
}

/// Geodesic distance from a (possibly taped) point to a constant point,
/// using the inner-product form directly.
pub fn geodesic_to<S: Real>(
    x: &LorentzPoint<S>,
    y: &LorentzPoint,
    cfg: &ManifoldConfig,
) -> Result<S> {
    let arg = inner_const(x, y) * -cfg.curvature;
    Ok(arg.acosh()? / cfg.sqrt_k())
}

/// Geodesic distance between two (possibly taped) points.
pub fn geodesic<S: Real>(
    x: &LorentzPoint<S>,
    y: &LorentzPoint<S>,
    cfg: &ManifoldConfig,
) -> Result<S> {
    let arg = inner(x, y) * -cfg.curvature;
    Ok(arg.acosh()? / cfg.sqrt_k())
}

/// `sinh(a) / a` with the series limit near zero.
fn sinhc<S: Real>(a: S) -> S {
    if a.value() < SERIES_SWITCH {
        a.constant(1.0)
    } else {
        a.sinh() / a
    }
}

/// Exponential map at the origin applied to the tangent vector `[0, z]`.
pub fn expm_origin<S: Real>(z: &[S], cfg: &ManifoldConfig) -> LorentzPoint<S> {
    let sk = cfg.sqrt_k();
    let a = S::norm(z) * sk;
    let coeff = sinhc(a);
    LorentzPoint {
        time: a.cosh() / sk,
        space: z.iter().map(|&zi| zi * coeff).collect(),
    }
}

/// Checked exponential map at the origin for concrete embeddings.
pub fn expm(z: &EuclideanEmbedding, cfg: &ManifoldConfig) -> Result<LorentzPoint> {
    if z.values.len() != cfg.dim {
        return Err(HbctError::invalid(format!(
            "embedding has length {}, expected {}",
            z.values.len(),
            cfg.dim
        )));
    }
    check_finite(&z.values, "embedding")?;
    Ok(expm_origin(&z.values, cfg))
}

/// Logarithmic map at the origin. The result has zero time component.
pub fn logm_origin(x: &LorentzPoint, cfg: &ManifoldConfig) -> Result<TangentVector> {
    let sk = cfg.sqrt_k();
    let origin = cfg.origin();
    let arg = -cfg.curvature * inner(&origin, x);
    if arg < 1.0 - DOMAIN_SLACK {
        return Err(HbctError::domain(format!(
            "point is not on the hyperboloid (-K<0,x>_L = {arg})"
        )));
    }
    let b = sk * x.space_norm();
    // |log(x)| = asinh(sqrt(K) |x_space|) / sqrt(K)
    let coeff = if b < SERIES_SWITCH {
        1.0
    } else {
        b.asinh() / b
    };
    Ok(TangentVector {
        time: 0.0,
        space: x.space.iter().map(|v| v * coeff).collect(),
        base: origin,
    })
}

impl TangentVector {
    /// Lorentz norm `sqrt(<v, v>_L)` of a tangent vector.
    pub fn lorentz_norm(&self) -> f64 {
        let sq = Real::dot(&self.space, &self.space) - self.time * self.time;
        sq.max(0.0).sqrt()
    }

    pub fn to_ambient(&self) -> Vec<f64> {
        let mut v = vec![self.time];
        v.extend_from_slice(&self.space);
        v
    }
}

/// Projects an ambient vector onto the tangent space at `p`:
/// `u + K * <p, u>_L * p`.
pub fn project_tangent(p: &LorentzPoint, u: &[f64], cfg: &ManifoldConfig) -> Result<TangentVector> {
    let pa = p.to_ambient();
    let coef = cfg.curvature * lorentz_inner(&pa, u)?;
    let v: Vec<f64> = u.iter().zip(&pa).map(|(ui, pi)| ui + coef * pi).collect();
    Ok(TangentVector {
        time: v[0],
        space: v[1..].to_vec(),
        base: p.clone(),
    })
}

/// Divides by `sqrt(d)` and clips the norm at `zeta`.
pub fn rescale_clip<S: Real>(z: &[S], zeta: f64) -> Vec<S> {
    let scale = 1.0 / (z.len() as f64).sqrt();
    let scaled: Vec<S> = z.iter().map(|&v| v * scale).collect();
    let n = S::norm(&scaled);
    if n.value() > zeta {
        let factor = n.constant(zeta) / n;
        scaled.into_iter().map(|v| v * factor).collect()
    } else {
        scaled
    }
}

/// Checked variant of [`rescale_clip`] for concrete embeddings.
pub fn rescale_clip_embedding(z: &EuclideanEmbedding, zeta: f64) -> Result<EuclideanEmbedding> {
    if zeta.is_nan() || zeta <= 0.0 {
        return Err(HbctError::invalid(format!(
            "clip threshold must be positive, got {zeta}"
        )));
    }
    Ok(EuclideanEmbedding {
        values: rescale_clip(&z.values, zeta),
    })
}

/// Hyperbolic uncertainty `1 - tanh(sqrt(K) |z|) / sqrt(K)` of a point lifted
/// from `z`. Computed from the point as `1 - |x_space| / (sqrt(K) x_time)`;
/// only for `K = 1` is the value guaranteed to lie in `[0, 1]`.
pub fn uncertainty(x: &LorentzPoint, cfg: &ManifoldConfig) -> f64 {
    1.0 - x.space_norm() / (x.time * cfg.sqrt_k())
}

/// The same quantity evaluated from the pre-lift embedding norm.
pub fn uncertainty_from_norm(z_norm: f64, cfg: &ManifoldConfig) -> f64 {
    let sk = cfg.sqrt_k();
    1.0 - (sk * z_norm).tanh() / sk
}

/// Validates the acosh argument of a distance with the shared policy.
pub fn distance_argument(arg: f64) -> Result<f64> {
    acosh_clamped(arg).map(|(v, _)| v)
}
