//! Reverse-mode automatic differentiation over a dynamically recorded scalar
//! graph.
//!
//! A [`Tape`] is an append-only list of nodes. Each node stores its primal
//! value and the local partial derivative with respect to each parent, so the
//! backward pass is a single reverse sweep accumulating adjoints.
//!
//! Loss code is written once against the [`Real`] trait, which is implemented
//! both for plain `f64` (evaluation) and for [`Var`] (training).
//!
//! ```
//! use hbct::autodiff::{Real, Tape};
//!
//! let tape = Tape::new();
//! let x = tape.var(3.0);
//! let y = x * x;
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(y.value(), 9.0);
//! assert_eq!(grads.wrt(x), 6.0);
//! ```

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{HbctError, Result};

/// Arguments may fall outside a function's closed domain by this much before
/// they are rejected; within the slack they are clamped.
pub const DOMAIN_SLACK: f64 = 1e-6;

/// Offset applied to clamped boundary arguments when evaluating a derivative
/// that is singular on the boundary.
pub const CLAMP_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Log,
    Sqrt,
    Tanh,
    Cosh,
    Sinh,
    Acosh,
    Asinh,
    Asin,
    Acos,
    Pow,
    Max0,
    Clamp,
    Dot,
    Norm,
    Sum,
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: OpKind,
    value: f64,
    parents_start: u32,
    parents_end: u32,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
    parents: Vec<(u32, f64)>,
    first_non_finite: Option<(usize, OpKind)>,
}

/// Append-only record of one forward pass.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<TapeInner>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Tape")
            .field("nodes", &inner.nodes.len())
            .field("edges", &inner.parents.len())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers an independent variable (a leaf).
    pub fn var(&self, value: f64) -> Var<'_> {
        self.push(OpKind::Leaf, value, std::iter::empty())
    }

    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    fn push(
        &self,
        op: OpKind,
        value: f64,
        parents: impl IntoIterator<Item = (u32, f64)>,
    ) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let start = inner.parents.len() as u32;
        inner.parents.extend(parents);
        let end = inner.parents.len() as u32;
        let index = inner.nodes.len();
        if !value.is_finite() && inner.first_non_finite.is_none() {
            inner.first_non_finite = Some((index, op));
        }
        inner.nodes.push(Node {
            op,
            value,
            parents_start: start,
            parents_end: end,
        });
        Var {
            tape: self,
            index: index as u32,
            value,
        }
    }

    /// Primal value recorded at a node.
    pub fn primal(&self, index: usize) -> f64 {
        self.inner.borrow().nodes[index].value
    }

    pub fn op_kind(&self, var: Var<'_>) -> OpKind {
        self.inner.borrow().nodes[var.index as usize].op
    }

    /// Fails if any recorded node produced a non-finite primal.
    pub fn check_finite(&self) -> Result<()> {
        match self.inner.borrow().first_non_finite {
            Some((index, op)) => Err(HbctError::domain(format!(
                "non-finite value recorded at node {index} ({op:?})"
            ))),
            None => Ok(()),
        }
    }

    /// Reverse accumulation of adjoints from `output`.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients> {
        assert!(
            std::ptr::eq(output.tape, self),
            "output variable belongs to a different tape"
        );
        self.check_finite()?;
        let inner = self.inner.borrow();
        let out = output.index as usize;
        let mut adjoint = vec![0.0; out + 1];
        adjoint[out] = 1.0;
        for i in (0..=out).rev() {
            let a = adjoint[i];
            if a == 0.0 {
                continue;
            }
            let node = inner.nodes[i];
            for &(p, partial) in
                &inner.parents[node.parents_start as usize..node.parents_end as usize]
            {
                adjoint[p as usize] += a * partial;
            }
        }
        Ok(Gradients { adjoint })
    }
}

/// Adjoints of every node up to the differentiated output.
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoint: Vec<f64>,
}

impl Gradients {
    pub fn wrt(&self, var: Var<'_>) -> f64 {
        self.adjoint.get(var.index as usize).copied().unwrap_or(0.0)
    }

    pub fn wrt_all(&self, vars: &[Var<'_>]) -> Vec<f64> {
        vars.iter().map(|&v| self.wrt(v)).collect()
    }

    pub fn by_node(&self) -> &[f64] {
        &self.adjoint
    }
}

/// A scalar recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: u32,
    value: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var(#{} = {})", self.index, self.value)
    }
}

impl<'t> Var<'t> {
    pub fn index(&self) -> usize {
        self.index as usize
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn unary(self, op: OpKind, value: f64, partial: f64) -> Self {
        self.tape.push(op, value, [(self.index, partial)])
    }

    fn binary(self, other: Self, op: OpKind, value: f64, da: f64, db: f64) -> Self {
        debug_assert!(std::ptr::eq(self.tape, other.tape), "mixed tapes");
        self.tape
            .push(op, value, [(self.index, da), (other.index, db)])
    }
}

fn clamp_into(x: f64, lo: f64, hi: f64, what: &str) -> Result<f64> {
    if x.is_nan() || x < lo - DOMAIN_SLACK || x > hi + DOMAIN_SLACK {
        return Err(HbctError::domain(format!(
            "{what} argument {x} outside [{lo}, {hi}]"
        )));
    }
    Ok(x.clamp(lo, hi))
}

/// Evaluates `acosh` with the shared clamping policy. Returns the value and
/// the derivative taken at the clamped argument `max(x, 1 + 1e-12)`.
pub fn acosh_clamped(x: f64) -> Result<(f64, f64)> {
    let c = clamp_into(x, 1.0, f64::INFINITY, "acosh")?;
    let at = c.max(1.0 + CLAMP_EPS);
    Ok((c.acosh(), 1.0 / ((at - 1.0) * (at + 1.0)).sqrt()))
}

pub fn asin_clamped(x: f64) -> Result<(f64, f64)> {
    let c = clamp_into(x, -1.0, 1.0, "asin")?;
    let at = c.clamp(-1.0 + CLAMP_EPS, 1.0 - CLAMP_EPS);
    Ok((c.asin(), 1.0 / (1.0 - at * at).sqrt()))
}

pub fn acos_clamped(x: f64) -> Result<(f64, f64)> {
    let c = clamp_into(x, -1.0, 1.0, "acos")?;
    let at = c.clamp(-1.0 + CLAMP_EPS, 1.0 - CLAMP_EPS);
    Ok((c.acos(), -1.0 / (1.0 - at * at).sqrt()))
}

/// Scalar field shared by plain `f64` evaluation and taped [`Var`]s.
///
/// Operations with a restricted domain return a `Result`; arguments within
/// [`DOMAIN_SLACK`] of the domain are clamped, others are rejected.
pub trait Real:
    Copy
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn value(self) -> f64;
    /// A constant that can be combined with `self`.
    fn constant(self, value: f64) -> Self;

    fn exp(self) -> Self;
    fn ln(self) -> Result<Self>;
    fn sqrt(self) -> Result<Self>;
    fn tanh(self) -> Self;
    fn cosh(self) -> Self;
    fn sinh(self) -> Self;
    fn asinh(self) -> Self;
    fn acosh(self) -> Result<Self>;
    fn asin(self) -> Result<Self>;
    fn acos(self) -> Result<Self>;
    /// `self^p` for a constant exponent and a positive base.
    fn powf(self, p: f64) -> Result<Self>;
    /// `max(0, self)` with subgradient 0 at 0.
    fn max0(self) -> Self;
    /// Clamps into `[lo, hi]`; the derivative is zero where clamping is active.
    fn clamp(self, lo: f64, hi: f64) -> Self;

    fn dot(a: &[Self], b: &[Self]) -> Self;
    fn dot_const(a: &[Self], b: &[f64]) -> Self;
    /// Euclidean norm; the subgradient at the zero vector is zero.
    fn norm(a: &[Self]) -> Self;
    fn sum(a: &[Self]) -> Self;
}

fn check_len(a: usize, b: usize) {
    assert_eq!(a, b, "dot product of vectors with different lengths");
}

impl Real for f64 {
    fn value(self) -> f64 {
        self
    }
    fn constant(self, value: f64) -> Self {
        value
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Result<Self> {
        if self.is_nan() || self < 0.0 {
            return Err(HbctError::domain(format!("log of {self}")));
        }
        Ok(f64::ln(self))
    }
    fn sqrt(self) -> Result<Self> {
        let c = clamp_into(self, 0.0, f64::INFINITY, "sqrt")?;
        Ok(f64::sqrt(c))
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn cosh(self) -> Self {
        f64::cosh(self)
    }
    fn sinh(self) -> Self {
        f64::sinh(self)
    }
    fn asinh(self) -> Self {
        f64::asinh(self)
    }
    fn acosh(self) -> Result<Self> {
        acosh_clamped(self).map(|(v, _)| v)
    }
    fn asin(self) -> Result<Self> {
        asin_clamped(self).map(|(v, _)| v)
    }
    fn acos(self) -> Result<Self> {
        acos_clamped(self).map(|(v, _)| v)
    }
    fn powf(self, p: f64) -> Result<Self> {
        if self.is_nan() || self <= 0.0 {
            return Err(HbctError::domain(format!(
                "pow of non-positive base {self}"
            )));
        }
        Ok(f64::powf(self, p))
    }
    fn max0(self) -> Self {
        if self > 0.0 {
            self
        } else {
            0.0
        }
    }
    fn clamp(self, lo: f64, hi: f64) -> Self {
        f64::clamp(self, lo, hi)
    }
    fn dot(a: &[Self], b: &[Self]) -> Self {
        check_len(a.len(), b.len());
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }
    fn dot_const(a: &[Self], b: &[f64]) -> Self {
        Self::dot(a, b)
    }
    fn norm(a: &[Self]) -> Self {
        Self::dot(a, a).sqrt()
    }
    fn sum(a: &[Self]) -> Self {
        a.iter().sum()
    }
}

impl<'t> Real for Var<'t> {
    fn value(self) -> f64 {
        self.value
    }
    fn constant(self, value: f64) -> Self {
        self.tape.push(OpKind::Leaf, value, std::iter::empty())
    }
    fn exp(self) -> Self {
        let v = self.value.exp();
        self.unary(OpKind::Exp, v, v)
    }
    fn ln(self) -> Result<Self> {
        let v = Real::ln(self.value)?;
        Ok(self.unary(OpKind::Log, v, 1.0 / self.value))
    }
    fn sqrt(self) -> Result<Self> {
        let v = Real::sqrt(self.value)?;
        let at = v.max(CLAMP_EPS);
        Ok(self.unary(OpKind::Sqrt, v, 0.5 / at))
    }
    fn tanh(self) -> Self {
        let v = self.value.tanh();
        self.unary(OpKind::Tanh, v, 1.0 - v * v)
    }
    fn cosh(self) -> Self {
        self.unary(OpKind::Cosh, self.value.cosh(), self.value.sinh())
    }
    fn sinh(self) -> Self {
        self.unary(OpKind::Sinh, self.value.sinh(), self.value.cosh())
    }
    fn asinh(self) -> Self {
        let x = self.value;
        self.unary(OpKind::Asinh, x.asinh(), 1.0 / (x * x + 1.0).sqrt())
    }
    fn acosh(self) -> Result<Self> {
        let (v, d) = acosh_clamped(self.value)?;
        Ok(self.unary(OpKind::Acosh, v, d))
    }
    fn asin(self) -> Result<Self> {
        let (v, d) = asin_clamped(self.value)?;
        Ok(self.unary(OpKind::Asin, v, d))
    }
    fn acos(self) -> Result<Self> {
        let (v, d) = acos_clamped(self.value)?;
        Ok(self.unary(OpKind::Acos, v, d))
    }
    fn powf(self, p: f64) -> Result<Self> {
        let v = Real::powf(self.value, p)?;
        Ok(self.unary(OpKind::Pow, v, p * self.value.powf(p - 1.0)))
    }
    fn max0(self) -> Self {
        if self.value > 0.0 {
            self.unary(OpKind::Max0, self.value, 1.0)
        } else {
            self.unary(OpKind::Max0, 0.0, 0.0)
        }
    }
    fn clamp(self, lo: f64, hi: f64) -> Self {
        let inside = self.value >= lo && self.value <= hi;
        let v = self.value.clamp(lo, hi);
        self.unary(OpKind::Clamp, v, if inside { 1.0 } else { 0.0 })
    }
    fn dot(a: &[Self], b: &[Self]) -> Self {
        check_len(a.len(), b.len());
        let tape = a.first().expect("dot of empty vectors").tape;
        let value = a.iter().zip(b).map(|(x, y)| x.value * y.value).sum();
        let parents = a
            .iter()
            .zip(b)
            .flat_map(|(x, y)| [(x.index, y.value), (y.index, x.value)]);
        tape.push(OpKind::Dot, value, parents)
    }
    fn dot_const(a: &[Self], b: &[f64]) -> Self {
        check_len(a.len(), b.len());
        let tape = a.first().expect("dot of empty vectors").tape;
        let value = a.iter().zip(b).map(|(x, y)| x.value * y).sum();
        tape.push(
            OpKind::Dot,
            value,
            a.iter().zip(b).map(|(x, &y)| (x.index, y)),
        )
    }
    fn norm(a: &[Self]) -> Self {
        let tape = a.first().expect("norm of empty vector").tape;
        let n = a.iter().map(|x| x.value * x.value).sum::<f64>().sqrt();
        let inv = if n > 0.0 { 1.0 / n } else { 0.0 };
        tape.push(OpKind::Norm, n, a.iter().map(|x| (x.index, x.value * inv)))
    }
    fn sum(a: &[Self]) -> Self {
        let tape = a.first().expect("sum of empty vector").tape;
        let value = a.iter().map(|x| x.value).sum();
        tape.push(OpKind::Sum, value, a.iter().map(|x| (x.index, 1.0)))
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, OpKind::Add, self.value + rhs.value, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, OpKind::Sub, self.value - rhs.value, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self {
        self.binary(
            rhs,
            OpKind::Mul,
            self.value * rhs.value,
            rhs.value,
            self.value,
        )
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Self) -> Self {
        let q = self.value / rhs.value;
        self.binary(rhs, OpKind::Div, q, 1.0 / rhs.value, -q / rhs.value)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        self.unary(OpKind::Neg, -self.value, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Self {
        self.unary(OpKind::Add, self.value + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Self {
        self.unary(OpKind::Sub, self.value - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Self {
        self.unary(OpKind::Mul, self.value * rhs, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Self {
        self.unary(OpKind::Div, self.value / rhs, 1.0 / rhs)
    }
}

/// Central finite-difference gradient of `f` at `x`.
pub fn finite_difference<F>(f: F, x: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let up = f(&probe)?;
        probe[i] = x[i] - step;
        let down = f(&probe)?;
        probe[i] = x[i];
        grad.push((up - down) / (2.0 * step));
    }
    Ok(grad)
}
