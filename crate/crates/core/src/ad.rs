//! Scalar reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation as a node holding its value, up to two
//! input indices and the local partial derivatives with respect to those
//! inputs. [`Tape::backward`] then sweeps the nodes once in reverse order and
//! accumulates adjoints. Tapes are cheap to [`clear`](Tape::clear) and reuse,
//! which is how the trainer keeps one tape per sample.
//!
//! Numeric code that must be differentiable is written against the
//! [`Scalar`] trait, implemented for both `f64` (plain evaluation) and
//! [`Var`] (recorded evaluation).

use alloc::string::ToString;
use alloc::vec::Vec;
use core::cell::RefCell;
use core::fmt;
use core::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Numeric operations shared by `f64` and tape variables.
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
{
    fn value(&self) -> f64;
    /// A constant in the same context as `self` (same tape for [`Var`]).
    fn constant(&self, c: f64) -> Self;
    fn powi(self, n: i32) -> Self;
    fn exp(self) -> Self;
    fn tanh(self) -> Self;
    fn sigmoid(self) -> Self;
    fn ln(self) -> Result<Self>;
    fn div(self, rhs: Self) -> Result<Self>;
    /// `if_ge` when `self >= threshold`, otherwise `otherwise`. The gradient
    /// flows through the selected operand only.
    fn select_ge(self, threshold: Self, if_ge: Self, otherwise: Self) -> Self;

    /// `max(self, floor)` with zero gradient on the floored branch.
    fn floor_at(self, floor: f64) -> Self {
        let f = self.constant(floor);
        self.select_ge(f, self, f)
    }
}

pub(crate) fn powi_f64(x: f64, n: i32) -> f64 {
    let mut acc = 1.0;
    for _ in 0..n.unsigned_abs() {
        acc *= x;
    }
    if n < 0 {
        1.0 / acc
    } else {
        acc
    }
}

pub(crate) fn sigmoid_f64(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

impl Scalar for f64 {
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn constant(&self, c: f64) -> Self {
        c
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        powi_f64(self, n)
    }
    #[inline]
    fn exp(self) -> Self {
        libm::exp(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        libm::tanh(self)
    }
    #[inline]
    fn sigmoid(self) -> Self {
        sigmoid_f64(self)
    }
    fn ln(self) -> Result<Self> {
        if self > 0.0 {
            Ok(libm::log(self))
        } else {
            Err(Error::Domain("log of non-positive value"))
        }
    }
    fn div(self, rhs: Self) -> Result<Self> {
        if rhs == 0.0 {
            Err(Error::Domain("division by zero"))
        } else {
            Ok(self / rhs)
        }
    }
    #[inline]
    fn select_ge(self, threshold: Self, if_ge: Self, otherwise: Self) -> Self {
        if self >= threshold {
            if_ge
        } else {
            otherwise
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Leaf,
    Const,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    PowI,
    Exp,
    Ln,
    Tanh,
    Sigmoid,
    Select,
    AddConst,
    MulConst,
}

const NO_ARG: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
pub struct Node {
    pub op: Op,
    pub args: [u32; 2],
    pub partials: [f64; 2],
    pub value: f64,
}

impl Node {
    pub fn inputs(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.args
            .iter()
            .zip(self.partials.iter())
            .filter(|(a, _)| **a != NO_ARG)
            .map(|(a, p)| (*a as usize, *p))
    }
}

/// Append-only record of scalar operations.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(n)),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops all nodes but keeps the allocation.
    pub fn clear(&mut self) {
        self.nodes.get_mut().clear();
    }

    pub fn node(&self, index: usize) -> Option<Node> {
        self.nodes.borrow().get(index).copied()
    }

    /// Indices of all leaf nodes, in creation order.
    pub fn leaves(&self) -> Vec<usize> {
        self.nodes
            .borrow()
            .iter()
            .enumerate()
            .filter(|(_, n)| n.op == Op::Leaf)
            .map(|(i, _)| i)
            .collect()
    }

    fn push(&self, op: Op, args: [u32; 2], partials: [f64; 2], value: f64) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len() as u32;
        nodes.push(Node {
            op,
            args,
            partials,
            value,
        });
        Var {
            tape: self,
            index,
            value,
        }
    }

    /// A differentiable input.
    pub fn var(&self, value: f64) -> Var<'_> {
        self.push(Op::Leaf, [NO_ARG; 2], [0.0; 2], value)
    }

    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    pub fn constant(&self, value: f64) -> Var<'_> {
        self.push(Op::Const, [NO_ARG; 2], [0.0; 2], value)
    }

    /// Reverse sweep from `output`. Nodes recorded after `output` cannot
    /// influence it and are skipped.
    pub fn backward(&self, output: &Var<'_>) -> Result<Gradients> {
        if !core::ptr::eq(output.tape, self) {
            return Err(Error::Usage("output variable belongs to another tape"));
        }
        let nodes = self.nodes.borrow();
        let out = output.index as usize;
        if out >= nodes.len() {
            return Err(Error::Usage("output index past end of tape"));
        }
        let mut adjoint = alloc::vec![0.0; nodes.len()];
        adjoint[out] = 1.0;
        let mut visited = 0;
        for i in (0..=out).rev() {
            visited += 1;
            let a = adjoint[i];
            if a == 0.0 {
                continue;
            }
            let node = &nodes[i];
            for (arg, partial) in node.inputs() {
                adjoint[arg] += a * partial;
            }
        }
        Ok(Gradients { adjoint, visited })
    }
}

/// Adjoints produced by one reverse sweep.
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoint: Vec<f64>,
    visited: usize,
}

impl Gradients {
    /// d(output)/d(var). Zero for variables the output does not depend on.
    pub fn wrt(&self, var: &Var<'_>) -> f64 {
        self.adjoint.get(var.index as usize).copied().unwrap_or(0.0)
    }

    pub fn wrt_all(&self, vars: &[Var<'_>]) -> Vec<f64> {
        vars.iter().map(|v| self.wrt(v)).collect()
    }

    pub fn at(&self, index: usize) -> f64 {
        self.adjoint.get(index).copied().unwrap_or(0.0)
    }

    /// Number of nodes the reverse sweep passed over.
    pub fn nodes_visited(&self) -> usize {
        self.visited
    }
}

/// A value recorded on a [`Tape`].
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

    #[inline]
    fn same_tape(&self, other: &Var<'t>) {
        assert!(
            core::ptr::eq(self.tape, other.tape),
            "operands recorded on different tapes"
        );
    }

    #[inline]
    fn unary(self, op: Op, partial: f64, value: f64) -> Var<'t> {
        self.tape.push(op, [self.index, NO_ARG], [partial, 0.0], value)
    }

    #[inline]
    fn binary(self, rhs: Var<'t>, op: Op, partials: [f64; 2], value: f64) -> Var<'t> {
        self.same_tape(&rhs);
        self.tape.push(op, [self.index, rhs.index], partials, value)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    #[inline]
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Add, [1.0, 1.0], self.value + rhs.value)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    #[inline]
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Sub, [1.0, -1.0], self.value - rhs.value)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    #[inline]
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Mul, [rhs.value, self.value], self.value * rhs.value)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    #[inline]
    fn neg(self) -> Var<'t> {
        self.unary(Op::Neg, -1.0, -self.value)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    #[inline]
    fn add(self, rhs: f64) -> Var<'t> {
        self.unary(Op::AddConst, 1.0, self.value + rhs)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    #[inline]
    fn sub(self, rhs: f64) -> Var<'t> {
        self.unary(Op::AddConst, 1.0, self.value - rhs)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    #[inline]
    fn mul(self, rhs: f64) -> Var<'t> {
        self.unary(Op::MulConst, rhs, self.value * rhs)
    }
}

impl<'t> Scalar for Var<'t> {
    #[inline]
    fn value(&self) -> f64 {
        self.value
    }

    fn constant(&self, c: f64) -> Self {
        self.tape.constant(c)
    }

    fn powi(self, n: i32) -> Self {
        let value = powi_f64(self.value, n);
        let partial = if n == 0 {
            0.0
        } else {
            n as f64 * powi_f64(self.value, n - 1)
        };
        self.unary(Op::PowI, partial, value)
    }

    fn exp(self) -> Self {
        let value = libm::exp(self.value);
        self.unary(Op::Exp, value, value)
    }

    fn tanh(self) -> Self {
        let value = libm::tanh(self.value);
        self.unary(Op::Tanh, 1.0 - value * value, value)
    }

    fn sigmoid(self) -> Self {
        let value = sigmoid_f64(self.value);
        self.unary(Op::Sigmoid, value * (1.0 - value), value)
    }

    fn ln(self) -> Result<Self> {
        if self.value > 0.0 {
            Ok(self.unary(Op::Ln, 1.0 / self.value, libm::log(self.value)))
        } else {
            Err(Error::Domain("log of non-positive value"))
        }
    }

    fn div(self, rhs: Self) -> Result<Self> {
        if rhs.value == 0.0 {
            return Err(Error::Domain("division by zero"));
        }
        let q = self.value / rhs.value;
        Ok(self.binary(rhs, Op::Div, [1.0 / rhs.value, -q / rhs.value], q))
    }

    fn select_ge(self, threshold: Self, if_ge: Self, otherwise: Self) -> Self {
        self.same_tape(&threshold);
        let chosen = if self.value >= threshold.value {
            if_ge
        } else {
            otherwise
        };
        self.same_tape(&chosen);
        chosen.unary(Op::Select, 1.0, chosen.value)
    }
}

/// Result of comparing tape gradients against central differences.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Compares the reverse-mode gradient of `f` at `x` with central finite
/// differences of step `fd_step`. The error per coordinate is
/// `|g_ad - g_fd| / max(1, |g_fd|)`.
pub fn grad_check<F>(f: F, x: &[f64], fd_step: f64) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    if !(fd_step > 0.0) {
        return Err(Error::Argument("finite-difference step must be positive".to_string()));
    }
    let eval = |point: &[f64]| -> Result<f64> {
        let tape = Tape::new();
        let vars = tape.vars(point);
        let y = f(&tape, &vars)?.value();
        if y.is_finite() {
            Ok(y)
        } else {
            Err(Error::GradCheck(alloc::format!("non-finite value at {point:?}")))
        }
    };

    let tape = Tape::new();
    let vars = tape.vars(x);
    let y = f(&tape, &vars)?;
    if !y.value().is_finite() {
        return Err(Error::GradCheck("non-finite value at the check point".to_string()));
    }
    let analytic = tape.backward(&y)?.wrt_all(&vars);

    let mut numeric = Vec::with_capacity(x.len());
    let mut point = x.to_vec();
    for i in 0..x.len() {
        point[i] = x[i] + fd_step;
        let up = eval(&point)?;
        point[i] = x[i] - fd_step;
        let down = eval(&point)?;
        point[i] = x[i];
        numeric.push((up - down) / (2.0 * fd_step));
    }

    let max_rel_error = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| libm::fabs(a - n) / libm::fmax(1.0, libm::fabs(*n)))
        .fold(0.0, f64::max);
    Ok(GradCheck {
        max_rel_error,
        analytic,
        numeric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn primitive_values_and_partials() {
        let tape = Tape::new();
        let z = tape.var(0.0).tanh();
        assert_eq!(z.value(), 0.0);
        assert_eq!(tape.node(z.index()).unwrap().partials[0], 1.0);

        let m = tape.var(3.0) * tape.var(4.0);
        assert_eq!(m.value(), 12.0);
        assert_eq!(tape.node(m.index()).unwrap().partials, [4.0, 3.0]);

        let l = tape.var(1.0).ln().unwrap();
        assert_eq!(l.value(), 0.0);
        assert_eq!(tape.node(l.index()).unwrap().partials[0], 1.0);
    }

    #[test]
    fn domain_errors() {
        let tape = Tape::new();
        assert!(matches!(tape.var(0.0).ln(), Err(Error::Domain(_))));
        assert!(matches!(tape.var(-2.0).ln(), Err(Error::Domain(_))));
        assert!(matches!(tape.var(1.0).div(tape.var(0.0)), Err(Error::Domain(_))));
        assert!(Scalar::ln(-1.0f64).is_err());
        assert!(Scalar::div(1.0f64, 0.0).is_err());
    }

    #[test]
    fn product_gradient() {
        let tape = Tape::new();
        let x = tape.var(3.0);
        let y = tape.var(4.0);
        let f = x * y;
        let g = tape.backward(&f).unwrap();
        assert_eq!((g.wrt(&x), g.wrt(&y)), (4.0, 3.0));
    }

    #[test]
    fn tanh_gradient_at_zero() {
        let tape = Tape::new();
        let x = tape.var(0.0);
        let f = x.tanh();
        assert_eq!(tape.backward(&f).unwrap().wrt(&x), 1.0);
    }

    #[test]
    fn unreachable_leaf_has_zero_gradient() {
        let tape = Tape::new();
        let x = tape.var(2.0);
        let unused = tape.var(5.0);
        let f = x * x;
        let g = tape.backward(&f).unwrap();
        assert_eq!(g.wrt(&x), 4.0);
        assert_eq!(g.wrt(&unused), 0.0);
    }

    #[test]
    fn output_from_another_tape_is_rejected() {
        let a = Tape::new();
        let b = Tape::new();
        let x = b.var(1.0);
        assert!(matches!(a.backward(&x), Err(Error::Usage(_))));
    }

    #[test]
    fn select_routes_gradient_to_chosen_branch() {
        let tape = Tape::new();
        let x = tape.var(2.0);
        let t = tape.var(2.0);
        let a = tape.var(7.0);
        let b = tape.var(9.0);
        // equality takes the ">=" branch
        let s = x.select_ge(t, a * x, b);
        assert_eq!(s.value(), 14.0);
        let g = tape.backward(&s).unwrap();
        assert_eq!(g.wrt(&a), 2.0);
        assert_eq!(g.wrt(&x), 7.0);
        assert_eq!(g.wrt(&b), 0.0);
        assert_eq!(g.wrt(&t), 0.0);
    }

    fn euler_unroll<S: Scalar>(x: &[S], steps: usize) -> S {
        let (a, b) = (x[0], x[1]);
        let mut v = x[2];
        for _ in 0..steps {
            v = v + (v - v.powi(3) * (1.0 / 3.0) - a * v + b.tanh()) * 0.05;
        }
        v
    }

    #[test]
    fn euler_unroll_matches_central_differences() {
        let check = grad_check(|_, x| Ok(euler_unroll(x, 100)), &[0.7, 0.3, 0.2], 1e-6).unwrap();
        assert!(check.max_rel_error < 1e-5, "{check:?}");
    }

    #[test]
    fn grad_check_trivial_cases() {
        let sq = grad_check(|_, x| Ok(x[0] * x[0]), &[1.0], 1e-5).unwrap();
        assert!(sq.max_rel_error < 1e-9);
        assert!((sq.analytic[0] - 2.0).abs() < 1e-15);

        let constant = grad_check(|t, _| Ok(t.constant(3.0)), &[1.0, 2.0], 1e-5).unwrap();
        assert_eq!(constant.max_rel_error, 0.0);
        assert_eq!(constant.analytic, [0.0, 0.0]);
    }

    #[test]
    fn grad_check_reports_non_finite() {
        let r = grad_check(|_, x| Ok(x[0] * f64::INFINITY), &[1.0], 1e-5);
        assert!(matches!(r, Err(Error::GradCheck(_))));
    }

    #[test]
    fn reverse_sweep_cost_is_bounded_by_node_count() {
        let tape = Tape::new();
        let x = tape.vars(&[0.7, 0.3, 0.2]);
        let before = tape.len();
        let y = euler_unroll(&x, 50);
        let forward_nodes = tape.len() - before;
        let g = tape.backward(&y).unwrap();
        assert!(g.nodes_visited() <= 4 * (forward_nodes + before));
    }

    #[test]
    fn repeated_runs_are_bit_identical() {
        let run = || {
            let tape = Tape::new();
            let x = tape.vars(&[0.7, 0.3, 0.2]);
            let y = euler_unroll(&x, 80);
            tape.backward(&y).unwrap().wrt_all(&x)
        };
        let a = run();
        let b = run();
        assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn cleared_tape_is_reusable() {
        let mut tape = Tape::with_capacity(16);
        {
            let x = tape.var(1.0);
            let _ = x * x;
        }
        tape.clear();
        assert!(tape.is_empty());
        let x = tape.var(3.0);
        let y = x.exp();
        assert!((tape.backward(&y).unwrap().wrt(&x) - libm::exp(3.0)).abs() < 1e-12);
        assert_eq!(tape.leaves(), [0]);
    }

    fn lin_f<'t>(x: &[Var<'t>]) -> Var<'t> {
        (x[0] * x[1]).tanh() + x[0].sigmoid()
    }

    fn lin_g<'t>(x: &[Var<'t>]) -> Var<'t> {
        x[0].exp() * x[1] - x[1].powi(2)
    }

    proptest! {
        #[test]
        fn gradient_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, x0 in -1.0f64..1.0, x1 in -1.0f64..1.0) {
            let grads = |which: u8| {
                let tape = Tape::new();
                let x = tape.vars(&[x0, x1]);
                let y = match which {
                    0 => lin_f(&x),
                    1 => lin_g(&x),
                    _ => lin_f(&x) * a + lin_g(&x) * b,
                };
                tape.backward(&y).unwrap().wrt_all(&x)
            };
            let (gf, gg, gc) = (grads(0), grads(1), grads(2));
            for i in 0..2 {
                let expect = a * gf[i] + b * gg[i];
                prop_assert!((gc[i] - expect).abs() <= 1e-12 * expect.abs().max(1.0));
            }
        }

        #[test]
        fn composite_matches_finite_differences(x0 in 0.2f64..2.0, x1 in -2.0f64..2.0) {
            let check = grad_check(
                |_, x| (x[0].ln()? * x[1].sigmoid()).div(x[0] + 1.0),
                &[x0, x1],
                1e-6,
            ).unwrap();
            prop_assert!(check.max_rel_error < 1e-6);
        }
    }
}
