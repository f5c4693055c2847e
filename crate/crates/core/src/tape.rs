//! Reverse-mode automatic differentiation on a Wengert list.
//!
//! Each recorded node stores its value and the local partial derivatives with
//! respect to its parents. Nodes with many parents (dot products) are stored
//! as a single entry, which keeps BPTT through matrix-vector products compact.
//! Operations whose operands are all constants are folded and never touch the
//! tape.

use alloc::vec::Vec;
use core::cell::RefCell;
use core::fmt;
use core::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::scalar::{self, Scalar};

const CONST: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Edge {
    parent: u32,
    partial: f64,
}

#[derive(Default)]
struct Graph {
    // edges of node i live in edges[ends[i - 1]..ends[i]]
    ends: Vec<u32>,
    edges: Vec<Edge>,
}

/// Recorded computation graph of one forward pass.
#[derive(Default)]
pub struct Tape {
    graph: RefCell<Graph>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize, edges: usize) -> Self {
        Self {
            graph: RefCell::new(Graph {
                ends: Vec::with_capacity(nodes),
                edges: Vec::with_capacity(edges),
            }),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.graph.borrow().ends.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops all nodes but keeps the allocation. Requires that no `Var` from
    /// this tape is alive, which the borrow checker enforces.
    pub fn clear(&mut self) {
        let g = self.graph.get_mut();
        g.ends.clear();
        g.edges.clear();
    }

    /// A new independent variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        let mut g = self.graph.borrow_mut();
        let end = g.edges.len() as u32;
        g.ends.push(end);
        Var {
            tape: Some(self),
            idx: (g.ends.len() - 1) as u32,
            val: value,
        }
    }

    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    fn push<'t>(&'t self, val: f64, parents: impl IntoIterator<Item = (Var<'t>, f64)>) -> Var<'t> {
        let mut g = self.graph.borrow_mut();
        let start = g.edges.len();
        for (p, partial) in parents {
            if p.idx != CONST {
                g.edges.push(Edge {
                    parent: p.idx,
                    partial,
                });
            }
        }
        if g.edges.len() == start {
            return Var::constant(val);
        }
        let end = g.edges.len() as u32;
        g.ends.push(end);
        Var {
            tape: Some(self),
            idx: (g.ends.len() - 1) as u32,
            val,
        }
    }

    /// Reverse sweep from `output`. Returns the adjoint of every node.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradient> {
        let g = self.graph.borrow();
        let n = g.ends.len();
        let mut adj = alloc::vec![0.0; n];
        if output.idx == CONST {
            return Ok(Gradient { adjoints: adj });
        }
        adj[output.idx as usize] = 1.0;
        for i in (0..=output.idx as usize).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            if !a.is_finite() {
                return Err(Error::GradientBlowup { node: i });
            }
            let start = if i == 0 { 0 } else { g.ends[i - 1] as usize };
            let end = g.ends[i] as usize;
            for e in &g.edges[start..end] {
                adj[e.parent as usize] += a * e.partial;
            }
        }
        Ok(Gradient { adjoints: adj })
    }
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradient {
    adjoints: Vec<f64>,
}

impl Gradient {
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        if v.idx == CONST {
            0.0
        } else {
            self.adjoints[v.idx as usize]
        }
    }

    pub fn wrt_all(&self, vs: &[Var<'_>]) -> Vec<f64> {
        vs.iter().map(|v| self.wrt(*v)).collect()
    }
}

/// A scalar that records its history on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    idx: u32,
    val: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.idx == CONST {
            write!(f, "Var(const {})", self.val)
        } else {
            write!(f, "Var(#{} = {})", self.idx, self.val)
        }
    }
}

impl<'t> Var<'t> {
    pub fn constant(val: f64) -> Self {
        Var {
            tape: None,
            idx: CONST,
            val,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.idx == CONST
    }

    /// Tape node id, `None` for constants.
    pub fn node(&self) -> Option<usize> {
        (self.idx != CONST).then_some(self.idx as usize)
    }

    fn unary(self, val: f64, partial: f64) -> Self {
        match self.tape {
            Some(t) => t.push(val, [(self, partial)]),
            None => Var::constant(val),
        }
    }

    fn binary(self, other: Self, val: f64, da: f64, db: f64) -> Self {
        match self.tape.or(other.tape) {
            Some(t) => t.push(val, [(self, da), (other, db)]),
            None => Var::constant(val),
        }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        self.binary(o, self.val + o.val, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self.binary(o, self.val - o.val, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        self.binary(o, self.val * o.val, o.val, self.val)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let q = self.val / o.val;
        self.binary(o, q, 1.0 / o.val, -q / o.val)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary(-self.val, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Self;
    fn add(self, c: f64) -> Self {
        self.unary(self.val + c, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Self;
    fn sub(self, c: f64) -> Self {
        self.unary(self.val - c, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Self;
    fn mul(self, c: f64) -> Self {
        self.unary(self.val * c, c)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Self;
    fn div(self, c: f64) -> Self {
        self.unary(self.val / c, 1.0 / c)
    }
}

impl<'t> Scalar for Var<'t> {
    fn cst(v: f64) -> Self {
        Var::constant(v)
    }

    fn value(self) -> f64 {
        self.val
    }

    fn tanh(self) -> Self {
        let y = libm::tanh(self.val);
        self.unary(y, 1.0 - y * y)
    }

    fn exp(self) -> Self {
        let y = libm::exp(self.val);
        self.unary(y, y)
    }

    fn ln(self) -> Self {
        self.unary(libm::log(self.val), 1.0 / self.val)
    }

    fn sqrt(self) -> Self {
        let y = libm::sqrt(self.val);
        let d = if y > 0.0 { 0.5 / y } else { 0.0 };
        self.unary(y, d)
    }

    fn abs(self) -> Self {
        let d = if self.val > 0.0 {
            1.0
        } else if self.val < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.unary(libm::fabs(self.val), d)
    }

    fn sigmoid(self) -> Self {
        let s = scalar::sigmoid(self.val);
        self.unary(s, s * (1.0 - s))
    }

    fn softplus(self) -> Self {
        self.unary(scalar::softplus(self.val), scalar::sigmoid(self.val))
    }

    fn dot(a: &[Self], b: &[Self]) -> Self {
        debug_assert_eq!(a.len(), b.len());
        let val: f64 = a.iter().zip(b).map(|(x, y)| x.val * y.val).sum();
        let tape = a.iter().chain(b).find_map(|v| v.tape);
        match tape {
            None => Var::constant(val),
            Some(t) => t.push(
                val,
                a.iter()
                    .zip(b)
                    .flat_map(|(x, y)| [(*x, y.val), (*y, x.val)]),
            ),
        }
    }

    fn dot_cst(coeffs: &[f64], b: &[Self]) -> Self {
        debug_assert_eq!(coeffs.len(), b.len());
        let val: f64 = coeffs.iter().zip(b).map(|(c, y)| c * y.val).sum();
        match b.iter().find_map(|v| v.tape) {
            None => Var::constant(val),
            Some(t) => t.push(val, coeffs.iter().zip(b).map(|(c, y)| (*y, *c))),
        }
    }

    fn sum(a: &[Self]) -> Self {
        let val: f64 = a.iter().map(|x| x.val).sum();
        match a.iter().find_map(|v| v.tape) {
            None => Var::constant(val),
            Some(t) => t.push(val, a.iter().map(|x| (*x, 1.0))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central_diff(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn elementary_derivatives_match_finite_differences() {
        type F = fn(f64) -> f64;
        let cases: [(F, fn(Var<'_>) -> Var<'_>); 6] = [
            (|x| libm::tanh(x), |v| v.tanh()),
            (|x| libm::exp(x), |v| v.exp()),
            (|x| libm::log(x), |v| v.ln()),
            (|x| libm::sqrt(x), |v| v.sqrt()),
            (scalar::sigmoid, |v| v.sigmoid()),
            (scalar::softplus, |v| v.softplus()),
        ];
        for (f, g) in cases {
            for &x in &[0.3, 1.7, 4.2] {
                let tape = Tape::new();
                let v = tape.var(x);
                let y = g(v);
                assert!((y.value() - f(x)).abs() < 1e-14);
                let grad = tape.backward(y).unwrap();
                let fd = central_diff(f, x);
                assert!((grad.wrt(v) - fd).abs() < 1e-7 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn dot_node_and_reused_variables() {
        let tape = Tape::new();
        let a = tape.vars(&[1.0, 2.0, 3.0]);
        let b = tape.vars(&[-1.0, 0.5, 4.0]);
        // f = (a.b) * a0 + a0 / b2
        let f = Var::dot(&a, &b) * a[0] + a[0] / b[2];
        let grad = tape.backward(f).unwrap();
        let ab = -1.0 + 1.0 + 12.0;
        assert!((grad.wrt(a[0]) - (b[0].value() * 1.0 + ab + 1.0 / 4.0)).abs() < 1e-14);
        assert!((grad.wrt(a[1]) - 0.5).abs() < 1e-14);
        assert!((grad.wrt(b[2]) - (3.0 - 1.0 / 16.0)).abs() < 1e-14);
    }

    #[test]
    fn constants_are_folded() {
        let tape = Tape::new();
        let c = Var::constant(2.0) * Var::constant(3.0) + 1.0;
        assert!(c.is_constant());
        assert_eq!(c.value(), 7.0);
        assert!(tape.is_empty());
        let x = tape.var(1.0);
        let y = x * c;
        let grad = tape.backward(y).unwrap();
        assert_eq!(grad.wrt(x), 7.0);
        assert_eq!(grad.wrt(c), 0.0);
    }

    #[test]
    fn non_finite_adjoint_reports_node() {
        let tape = Tape::new();
        let x = tape.var(0.0);
        let y = x.ln(); // partial 1/0 = inf
        let z = y * 2.0;
        let w = z.exp(); // exp(-inf) = 0 but adjoint path through ln is inf
        let err = tape.backward(w * 0.0 + z).unwrap_err();
        assert!(matches!(err, Error::GradientBlowup { .. }));
    }

    #[test]
    fn abs_and_sqrt_are_safe_at_zero() {
        let tape = Tape::new();
        let x = tape.var(0.0);
        let y = x.abs() + x.sqrt();
        let grad = tape.backward(y).unwrap();
        assert_eq!(grad.wrt(x), 0.0);
    }
}
