//! Explanation policies: Taylor surrogates, counterfactual recommendations,
//! learned and random recommendation policies, and the two-feature Shapley
//! example.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::agents::BenefitSign;
use crate::error::{check_dim, Error, Result};
use crate::model::ScalarModel;
use crate::numkit::{vector, DenseVector, Expr, Mlp};

/// A recommended covariate and the model's prediction there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arex {
    pub x: DenseVector,
    pub y: f64,
}

impl Arex {
    /// Pair a recommendation with its disclosed prediction `g(x)`.
    pub fn disclose(g: &dyn ScalarModel, x: DenseVector) -> Result<Self> {
        let y = g.checked_value(&x)?;
        if !y.is_finite() {
            return Err(Error::NonFinite("disclosed prediction"));
        }
        Ok(Self { x, y })
    }
}

/// Second-order (or first-order when `hessian` is absent) expansion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Taylor {
    pub center: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: Option<Vec<f64>>,
}

impl ScalarModel for Taylor {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let d: Vec<f64> = x.iter().zip(&self.center).map(|(a, c)| a - c).collect();
        let mut v = self.value + vector::dot(&self.gradient, &d);
        if let Some(h) = &self.hessian {
            let n = d.len();
            let mut q = 0.0;
            for i in 0..n {
                q += d[i] * vector::dot(&h[i * n..(i + 1) * n], &d);
            }
            v += 0.5 * q;
        }
        v
    }

    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let n = x.len();
        let d: Vec<f64> = x.iter().zip(&self.center).map(|(a, c)| a - c).collect();
        let mut g = self.gradient.clone();
        if let Some(h) = &self.hessian {
            for i in 0..n {
                g[i] += vector::dot(&h[i * n..(i + 1) * n], &d);
            }
        }
        (self.value(x), g)
    }

    fn hessian(&self, _x: &[f64]) -> Result<Vec<f64>> {
        let n = self.center.len();
        Ok(self.hessian.clone().unwrap_or_else(|| vec![0.0; n * n]))
    }
}

/// Surrogate functions a decision maker can disclose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Surrogate {
    Taylor(Taylor),
    Expr { expr: Expr },
}

impl ScalarModel for Surrogate {
    fn dim(&self) -> usize {
        match self {
            Surrogate::Taylor(t) => t.dim(),
            Surrogate::Expr { expr } => expr.dim(),
        }
    }

    fn value(&self, x: &[f64]) -> f64 {
        match self {
            Surrogate::Taylor(t) => t.value(x),
            Surrogate::Expr { expr } => expr.eval(x),
        }
    }

    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        match self {
            Surrogate::Taylor(t) => t.value_and_gradient(x),
            Surrogate::Expr { expr } => expr.gradient(x),
        }
    }

    fn hessian(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Surrogate::Taylor(t) => ScalarModel::hessian(t, x),
            Surrogate::Expr { expr } => expr.hessian(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Explanation {
    Surrogate(Surrogate),
    Arex(Arex),
    Attribution(Vec<f64>),
}

impl Explanation {
    pub fn tag(&self) -> &'static str {
        match self {
            Explanation::Surrogate(_) => "surrogate",
            Explanation::Arex(_) => "arex",
            Explanation::Attribution(_) => "attribution",
        }
    }

    /// One-line text record: the variant tag followed by its payload.
    ///
    /// ```text
    /// arex x=<v> <v> ... y=<v>
    /// attribution <v> <v> ...
    /// surrogate expr <expression>
    /// surrogate taylor c=<v>... v=<v> g=<v>... [h=<v>...]
    /// ```
    pub fn to_record(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        match self {
            Explanation::Arex(a) => format!("arex x={} y={:?}", join(&a.x), a.y),
            Explanation::Attribution(s) => format!("attribution {}", join(s)).trim_end().to_string(),
            Explanation::Surrogate(Surrogate::Expr { expr }) => format!("surrogate expr {expr}"),
            Explanation::Surrogate(Surrogate::Taylor(t)) => {
                let mut s = format!(
                    "surrogate taylor c={} v={:?} g={}",
                    join(&t.center),
                    t.value,
                    join(&t.gradient)
                );
                if let Some(h) = &t.hessian {
                    let _ = write!(s, " h={}", join(h));
                }
                s
            }
        }
    }

    pub fn from_record(line: &str) -> Result<Self> {
        let bad = |m: &str| Error::Parse {
            line: 1,
            message: format!("{m}: `{line}`"),
        };
        let (tag, rest) = line.trim().split_once(' ').unwrap_or((line.trim(), ""));
        match tag {
            "arex" => {
                let fields = keyed_fields(rest).ok_or_else(|| bad("malformed arex record"))?;
                let x = field(&fields, "x").ok_or_else(|| bad("missing x"))?;
                let y = field(&fields, "y").ok_or_else(|| bad("missing y"))?;
                if y.len() != 1 {
                    return Err(bad("y must be one number"));
                }
                Ok(Explanation::Arex(Arex {
                    x: DenseVector::new(x)?,
                    y: y[0],
                }))
            }
            "attribution" => Ok(Explanation::Attribution(
                parse_numbers(rest).ok_or_else(|| bad("malformed scores"))?,
            )),
            "surrogate" => {
                let (kind, body) = rest.split_once(' ').ok_or_else(|| bad("missing surrogate kind"))?;
                match kind {
                    "expr" => Ok(Explanation::Surrogate(Surrogate::Expr {
                        expr: Expr::parse(body)?,
                    })),
                    "taylor" => {
                        let fields = keyed_fields(body).ok_or_else(|| bad("malformed taylor record"))?;
                        let value = field(&fields, "v").ok_or_else(|| bad("missing v"))?;
                        if value.len() != 1 {
                            return Err(bad("v must be one number"));
                        }
                        Ok(Explanation::Surrogate(Surrogate::Taylor(Taylor {
                            center: field(&fields, "c").ok_or_else(|| bad("missing c"))?,
                            value: value[0],
                            gradient: field(&fields, "g").ok_or_else(|| bad("missing g"))?,
                            hessian: field(&fields, "h"),
                        })))
                    }
                    _ => Err(bad("unknown surrogate kind")),
                }
            }
            _ => Err(bad("unknown explanation tag")),
        }
    }
}

fn parse_numbers(s: &str) -> Option<Vec<f64>> {
    s.split_whitespace().map(|t| t.parse().ok()).collect()
}

fn keyed_fields(s: &str) -> Option<Vec<(String, Vec<f64>)>> {
    let mut out: Vec<(String, Vec<f64>)> = Vec::new();
    for tok in s.split_whitespace() {
        if let Some((k, v)) = tok.split_once('=') {
            out.push((k.to_string(), Vec::new()));
            if !v.is_empty() {
                out.last_mut()?.1.push(v.parse().ok()?);
            }
        } else {
            out.last_mut()?.1.push(tok.parse().ok()?);
        }
    }
    Some(out)
}

fn field(fields: &[(String, Vec<f64>)], key: &str) -> Option<Vec<f64>> {
    fields.iter().find(|(k, _)| k == key).map(|(_, v)| v.clone())
}

/// Expansion of `g` around `base` of the given order (1 or 2).
pub fn taylor_surrogate(g: &dyn ScalarModel, base: &[f64], order: u8) -> Result<Taylor> {
    check_dim(g.dim(), base.len())?;
    let (value, gradient) = g.value_and_gradient(base);
    let hessian = match order {
        1 => None,
        2 => Some(g.hessian(base)?),
        _ => return Err(Error::config("taylor.order", "order must be 1 or 2")),
    };
    if !value.is_finite() || gradient.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite expansion coefficients".into()));
    }
    Ok(Taylor {
        center: base.to_vec(),
        value,
        gradient,
        hessian,
    })
}

pub fn taylor2_surrogate(g: &dyn ScalarModel, base: &[f64]) -> Result<Taylor> {
    taylor_surrogate(g, base, 2)
}

/// Feasible set for recommendations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constraints {
    /// Per-feature `(lower, upper)` bounds.
    #[serde(default)]
    pub bounds: Option<(Vec<f64>, Vec<f64>)>,
    /// Features allowed to move; all when absent.
    #[serde(default)]
    pub modifiable: Option<Vec<usize>>,
    /// Categorical features and their admissible levels.
    #[serde(default)]
    pub categorical: Vec<(usize, Vec<f64>)>,
}

impl Constraints {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn is_frozen(&self, i: usize) -> bool {
        self.modifiable.as_ref().is_some_and(|m| !m.contains(&i))
    }

    /// Reset frozen features and clip to bounds.
    pub fn project(&self, base: &[f64], x: &mut [f64]) {
        for i in 0..x.len() {
            if self.is_frozen(i) {
                x[i] = base[i];
            } else if let Some((lo, hi)) = &self.bounds {
                x[i] = x[i].clamp(lo[i], hi[i]);
            }
        }
    }

    /// Round categoricals to their nearest admissible level (ties to the
    /// lower level) and re-project.
    pub fn round(&self, base: &[f64], x: &mut [f64]) {
        for (i, levels) in &self.categorical {
            if self.is_frozen(*i) || levels.is_empty() {
                continue;
            }
            let v = x[*i];
            let mut best = levels[0];
            for &l in levels {
                let (d, db) = ((l - v).abs(), (best - v).abs());
                if d < db || (d == db && l < best) {
                    best = l;
                }
            }
            x[*i] = best;
        }
        self.project(base, x);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CeOptions {
    pub steps: usize,
    pub lr: f64,
    /// Stop once an accepted step moves the iterate less than this.
    pub tolerance: f64,
}

impl Default for CeOptions {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 0.05,
            tolerance: 1e-9,
        }
    }
}

/// `argmin_x s*g(x) + lambda*|x - base|^2` by projected gradient descent,
/// where `s = +1` when agents want low scores and `-1` when they want high
/// ones. The best iterate is kept; categoricals are rounded at the end.
pub fn counterfactual_explain(
    g: &dyn ScalarModel,
    benefit: BenefitSign,
    base: &[f64],
    lambda: f64,
    constraints: &Constraints,
    opts: &CeOptions,
) -> Result<Arex> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::config("lambda", "must be positive"));
    }
    check_dim(g.dim(), base.len())?;
    let sign = -benefit.benefit(1.0);
    let objective = |x: &[f64]| -> (f64, Vec<f64>) {
        let (v, mut grad) = g.value_and_gradient(x);
        for ((gi, xi), bi) in grad.iter_mut().zip(x).zip(base) {
            *gi = sign * *gi + 2.0 * lambda * (xi - bi);
        }
        (sign * v + lambda * vector::sq_dist(x, base), grad)
    };
    let mut x = base.to_vec();
    constraints.project(base, &mut x);
    let (mut value, mut grad) = objective(&x);
    if !value.is_finite() {
        return Err(Error::Numeric(format!("non-finite CE objective at {x:?}")));
    }
    // The proximity term alone has curvature 2*lambda; larger steps overshoot.
    let mut lr = opts.lr.min(1.0 / (2.0 * lambda));
    let mut cand = vec![0.0; x.len()];
    for _ in 0..opts.steps {
        let mut improved = false;
        // Steps shorter than the tolerance cannot count as progress.
        let reach = vector::norm(&grad);
        while lr > 1e-12 && lr * reach > opts.tolerance {
            for i in 0..x.len() {
                cand[i] = x[i] - lr * grad[i];
            }
            constraints.project(base, &mut cand);
            let (cv, cg) = objective(&cand);
            if !cv.is_finite() {
                return Err(Error::Numeric(format!("non-finite CE objective at {cand:?}")));
            }
            if cv <= value {
                improved = vector::sq_dist(&x, &cand).sqrt() > opts.tolerance && cv < value;
                std::mem::swap(&mut x, &mut cand);
                value = cv;
                grad = cg;
                break;
            }
            lr *= 0.5;
        }
        if !improved {
            break;
        }
    }
    constraints.round(base, &mut x);
    Arex::disclose(g, DenseVector::new(x)?)
}

/// `x_rec = policy(base)`, disclosed with `g(x_rec)`.
pub fn arex_policy_recommend(policy: &Mlp, g: &dyn ScalarModel, base: &[f64]) -> Result<Arex> {
    check_dim(policy.output_dim(), base.len())?;
    let x = policy.forward(base)?;
    Arex::disclose(g, DenseVector::new(x)?)
}

/// As [`arex_policy_recommend`], with the output projected onto the feasible
/// set and categoricals rounded.
pub fn arex_policy_recommend_constrained(
    policy: &Mlp,
    g: &dyn ScalarModel,
    base: &[f64],
    constraints: &Constraints,
) -> Result<Arex> {
    check_dim(policy.output_dim(), base.len())?;
    let mut x = policy.forward(base)?;
    constraints.round(base, &mut x);
    Arex::disclose(g, DenseVector::new(x)?)
}

/// Gaussian recommendation `x_rec ~ N(center, variance * I)`.
pub fn random_arex_sample<R: Rng + ?Sized>(
    g: &dyn ScalarModel,
    center: &[f64],
    variance: f64,
    rng: &mut R,
) -> Result<Arex> {
    check_dim(g.dim(), center.len())?;
    if !(variance >= 0.0 && variance.is_finite()) {
        return Err(Error::config("sampler.variance", "must be nonnegative"));
    }
    let normal = Normal::new(0.0, variance.sqrt()).map_err(|e| Error::Numeric(e.to_string()))?;
    let x: Vec<f64> = center.iter().map(|c| c + normal.sample(rng)).collect();
    Arex::disclose(g, DenseVector::new(x)?)
}

/// Shapley value of feature 2 for `g(x) = x1 - x2^2` with independent
/// features and `X2 ~ U([a, b])`; `mean_x1` is `E[X1]`.
pub fn shapley_two_feature(base: [f64; 2], a: f64, b: f64, mean_x1: f64) -> Result<f64> {
    if !(a < b && a.is_finite() && b.is_finite()) {
        return Err(Error::InvalidInterval { lo: a, hi: b });
    }
    let g = |x1: f64, x2sq: f64| x1 - x2sq;
    let second_moment = (b.powi(3) - a.powi(3)) / (3.0 * (b - a));
    let x2sq = base[1] * base[1];
    let own = g(base[0], x2sq);
    let drop_2 = g(base[0], second_moment);
    let only_2 = g(mean_x1, x2sq);
    let neither = g(mean_x1, second_moment);
    Ok(0.5 * ((own - drop_2) + (only_2 - neither)))
}
