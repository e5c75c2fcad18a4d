//! Scalar predictive models: the decision maker's `g`, surrogates, outcome
//! functions. Anything that maps a covariate to a real number and can report
//! its gradient implements [`ScalarModel`].

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numkit::tape::sigmoid;
use crate::numkit::{Cache, Expr, Mlp};

pub trait ScalarModel: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    /// Value and gradient with respect to the covariate.
    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>);

    /// Row-major Hessian. The default differentiates the gradient with
    /// central differences; closed-form models override it.
    fn hessian(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = x.len();
        let mut h = vec![0.0; d * d];
        let mut p = x.to_vec();
        for j in 0..d {
            let step = 1e-5 * (1.0 + x[j].abs());
            p[j] = x[j] + step;
            let (_, up) = self.value_and_gradient(&p);
            p[j] = x[j] - step;
            let (_, down) = self.value_and_gradient(&p);
            p[j] = x[j];
            for i in 0..d {
                h[i * d + j] = (up[i] - down[i]) / (2.0 * step);
            }
        }
        // symmetrize
        for i in 0..d {
            for j in (i + 1)..d {
                let s = 0.5 * (h[i * d + j] + h[j * d + i]);
                h[i * d + j] = s;
                h[j * d + i] = s;
            }
        }
        if h.iter().all(|v| v.is_finite()) {
            Ok(h)
        } else {
            Err(Error::Numeric("non-finite Hessian estimate".into()))
        }
    }

    fn checked_value(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(self.value(x))
    }
}

impl ScalarModel for Expr {
    fn dim(&self) -> usize {
        Expr::dim(self)
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.eval(x)
    }

    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        self.gradient(x)
    }

    fn hessian(&self, x: &[f64]) -> Result<Vec<f64>> {
        Expr::hessian(self, x)
    }
}

thread_local! {
    static MLP_CACHE: RefCell<Cache> = RefCell::new(Cache::default());
}

fn with_cache<T>(net: &Mlp, f: impl FnOnce(&mut Cache) -> T) -> T {
    MLP_CACHE.with(|c| {
        let mut c = c.borrow_mut();
        if !net.fits(&c) {
            *c = net.new_cache();
        }
        f(&mut c)
    })
}

/// Scalar-output networks; the head (linear or logistic) is part of the value.
impl ScalarModel for Mlp {
    fn dim(&self) -> usize {
        self.input_dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        with_cache(self, |c| self.eval_with(x, c))
    }

    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let mut g = vec![0.0; x.len()];
        let v = with_cache(self, |c| self.value_and_input_gradient(x, c, &mut g));
        (v, g)
    }
}

/// `s(x) = sigmoid(w . x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogisticModel {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

impl ScalarModel for LogisticModel {
    fn dim(&self) -> usize {
        self.weights.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let s = self.value(x);
        let d = s * (1.0 - s);
        (s, self.weights.iter().map(|w| w * d).collect())
    }
}

/// `q(v) = v' A v + b' v + c` with symmetric `A` (row-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticModel {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: f64,
}

impl QuadraticModel {
    pub fn new(a: Vec<f64>, b: Vec<f64>, c: f64) -> Result<Self> {
        let d = b.len();
        check_dim(d * d, a.len())?;
        let mut sym = a.clone();
        for i in 0..d {
            for j in 0..d {
                sym[i * d + j] = 0.5 * (a[i * d + j] + a[j * d + i]);
            }
        }
        Ok(Self { a: sym, b, c })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            a: vec![0.0; dim * dim],
            b: vec![0.0; dim],
            c: 0.0,
        }
    }
}

impl ScalarModel for QuadraticModel {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let d = self.b.len();
        let mut q = self.c;
        for i in 0..d {
            let mut row = 0.0;
            for j in 0..d {
                row += self.a[i * d + j] * x[j];
            }
            q += x[i] * row + self.b[i] * x[i];
        }
        q
    }

    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let d = self.b.len();
        let g = (0..d)
            .map(|i| {
                self.b[i] + 2.0 * (0..d).map(|j| self.a[i * d + j] * x[j]).sum::<f64>()
            })
            .collect();
        (self.value(x), g)
    }

    fn hessian(&self, _x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.a.iter().map(|v| 2.0 * v).collect())
    }
}
