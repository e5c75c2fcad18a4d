//! Scalar reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every primitive as a node holding at most two parent
//! indices and the local partial derivative with respect to each. Calling
//! [`Var::backward`] sweeps the nodes once in reverse order, so the cost of a
//! full gradient is linear in the number of recorded operations.
//!
//! ```
//! use arex::numkit::tape::Tape;
//!
//! let tape = Tape::new();
//! let x = tape.var(3.0);
//! let y = x * x;
//! let grads = y.backward();
//! assert_eq!(y.value(), 9.0);
//! assert_eq!(grads.wrt(x), 6.0);
//! ```

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Smoothing constant for `abs_smooth`, `sqrt(x^2 + eps) - sqrt(eps)`.
pub const ABS_SMOOTH_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
struct Node {
    parents: [usize; 2],
    partials: [f64; 2],
    arity: u8,
}

/// Recorded computation for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// A value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: usize,
    value: f64,
}

/// Adjoints of every node, produced by [`Var::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoints: Vec<f64>,
}

impl Gradients {
    pub fn wrt(&self, var: Var<'_>) -> f64 {
        self.adjoints[var.index]
    }

    pub fn wrt_all(&self, vars: &[Var<'_>]) -> Vec<f64> {
        vars.iter().map(|v| self.wrt(*v)).collect()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    /// An independent input.
    pub fn var(&self, value: f64) -> Var<'_> {
        let index = self.push(Node {
            parents: [0, 0],
            partials: [0.0, 0.0],
            arity: 0,
        });
        Var {
            tape: self,
            index,
            value,
        }
    }

    /// Constants are leaves too; their adjoints are simply never read.
    pub fn constant(&self, value: f64) -> Var<'_> {
        self.var(value)
    }

    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    fn unary(&self, a: Var<'_>, value: f64, da: f64) -> Var<'_> {
        let index = self.push(Node {
            parents: [a.index, 0],
            partials: [da, 0.0],
            arity: 1,
        });
        Var {
            tape: self,
            index,
            value,
        }
    }

    fn binary(&self, a: Var<'_>, b: Var<'_>, value: f64, da: f64, db: f64) -> Var<'_> {
        let index = self.push(Node {
            parents: [a.index, b.index],
            partials: [da, db],
            arity: 2,
        });
        Var {
            tape: self,
            index,
            value,
        }
    }

    /// Sum of a slice of variables; zero (as a fresh constant) when empty.
    pub fn sum<'t>(&'t self, vars: &[Var<'t>]) -> Var<'t> {
        match vars.split_first() {
            None => self.constant(0.0),
            Some((first, rest)) => rest.iter().fold(*first, |acc, v| acc + *v),
        }
    }

    /// `w . x + b` with constant weights.
    pub fn affine<'t>(&'t self, weights: &[f64], x: &[Var<'t>], bias: f64) -> Var<'t> {
        let terms: Vec<Var<'t>> = weights.iter().zip(x).map(|(w, v)| *v * *w).collect();
        self.sum(&terms) + bias
    }

    fn backward_from(&self, root: usize) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let mut adjoints = vec![0.0; nodes.len()];
        adjoints[root] = 1.0;
        for i in (0..=root).rev() {
            let adj = adjoints[i];
            if adj == 0.0 {
                continue;
            }
            let node = nodes[i];
            for k in 0..node.arity as usize {
                adjoints[node.parents[k]] += adj * node.partials[k];
            }
        }
        adjoints
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn backward(&self) -> Gradients {
        Gradients {
            adjoints: self.tape.backward_from(self.index),
        }
    }

    /// Rectified linear unit; the subgradient at 0 is 0.
    pub fn relu(self) -> Self {
        let (v, d) = if self.value > 0.0 {
            (self.value, 1.0)
        } else {
            (0.0, 0.0)
        };
        self.tape.unary(self, v, d)
    }

    pub fn sigmoid(self) -> Self {
        let s = sigmoid(self.value);
        self.tape.unary(self, s, s * (1.0 - s))
    }

    pub fn ln(self) -> Self {
        self.tape.unary(self, self.value.ln(), 1.0 / self.value)
    }

    pub fn exp(self) -> Self {
        let e = self.value.exp();
        self.tape.unary(self, e, e)
    }

    pub fn square(self) -> Self {
        self.tape.unary(self, self.value * self.value, 2.0 * self.value)
    }

    /// Integer power by repeated multiplication semantics, recorded as one node.
    pub fn powi(self, n: i32) -> Self {
        let v = self.value.powi(n);
        let d = if n == 0 {
            0.0
        } else {
            n as f64 * self.value.powi(n - 1)
        };
        self.tape.unary(self, v, d)
    }

    /// Differentiable stand-in for `|x|`, exact to within `1e-6` absolute.
    pub fn abs_smooth(self) -> Self {
        let r = (self.value * self.value + ABS_SMOOTH_EPS).sqrt();
        self.tape
            .unary(self, r - ABS_SMOOTH_EPS.sqrt(), self.value / r)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.binary(self, rhs, self.value + rhs.value, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.binary(self, rhs, self.value - rhs.value, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.tape
            .binary(self, rhs, self.value * rhs.value, rhs.value, self.value)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        let q = self.value / rhs.value;
        self.tape
            .binary(self, rhs, q, 1.0 / rhs.value, -q / rhs.value)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.tape.unary(self, -self.value, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        self.tape.unary(self, self.value + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Var<'t> {
        self.tape.unary(self, self.value - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        self.tape.unary(self, self.value * rhs, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Var<'t> {
        self.tape.unary(self, self.value / rhs, 1.0 / rhs)
    }
}

/// Value and gradient of `f` at `point`.
pub fn grad<F>(f: F, point: &[f64]) -> (f64, Vec<f64>)
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let inputs = tape.vars(point);
    let out = f(&tape, &inputs);
    let grads = out.backward();
    (out.value(), grads.wrt_all(&inputs))
}

/// Central finite-difference gradient, the independent check for [`grad`].
pub fn finite_difference<F>(f: F, point: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut x = point.to_vec();
    (0..point.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}
