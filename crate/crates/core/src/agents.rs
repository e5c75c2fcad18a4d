//! Strategic agents: base covariates, costs, utilities and reactions to
//! explanations.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::explain::{Arex, Explanation};
use crate::model::{LogisticModel, QuadraticModel, ScalarModel};
use crate::numkit::{vector, DenseVector, Expr};
use crate::rng::{stream_for, Purpose};

/// Tolerance for the disclosed-prediction integrity check.
pub const INTEGRITY_TOL: f64 = 1e-9;

/// Whether agents want a low score (risk) or a high one (credit).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenefitSign {
    Lower,
    Higher,
}

impl BenefitSign {
    pub fn benefit(self, score: f64) -> f64 {
        match self {
            BenefitSign::Lower => -score,
            BenefitSign::Higher => score,
        }
    }
}

/// A movement cost. Infeasible moves never enter arithmetic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cost {
    Finite(f64),
    Infeasible,
}

/// Utility with an explicit bottom element for infeasible moves. The derived
/// order puts `Infeasible` below every finite value.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub enum Utility {
    Infeasible,
    Finite(f64),
}

impl Utility {
    pub fn finite(self) -> Option<f64> {
        match self {
            Utility::Finite(v) => Some(v),
            Utility::Infeasible => None,
        }
    }

    /// Reporting value; infeasible maps to negative infinity.
    pub fn to_f64(self) -> f64 {
        self.finite().unwrap_or(f64::NEG_INFINITY)
    }
}

/// One piece of a scalar cost, active for `lo <= dx <= hi` (open ends when
/// absent). `expr` is written in the single variable `x` standing for the
/// movement `dx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostPiece {
    #[serde(default)]
    pub lo: Option<f64>,
    #[serde(default)]
    pub hi: Option<f64>,
    pub expr: Expr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostSpec {
    /// `alpha * |x - base|^2`.
    QuadraticL2 { alpha: f64 },
    /// `scale * sum_i |dx_i| / (upper_i - lower_i)` over modifiable features.
    /// Moving a non-modifiable feature, or leaving the bounds, is infeasible.
    WeightedL1 {
        scale: f64,
        modifiable: Vec<usize>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    /// One-dimensional cost given piece by piece; first matching piece wins.
    PiecewiseScalar { pieces: Vec<CostPiece> },
}

impl CostSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            CostSpec::QuadraticL2 { alpha } if !(*alpha > 0.0 && alpha.is_finite()) => {
                Err(Error::config("cost.alpha", "must be positive"))
            }
            CostSpec::WeightedL1 {
                scale,
                modifiable,
                lower,
                upper,
            } => {
                if !(*scale > 0.0 && scale.is_finite()) {
                    return Err(Error::config("cost.scale", "must be positive"));
                }
                check_dim(lower.len(), upper.len())?;
                if let Some(&i) = modifiable.iter().find(|&&i| i >= lower.len()) {
                    return Err(Error::config("cost.modifiable", format!("index {i} out of range")));
                }
                if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
                    return Err(Error::config("cost.lower", "lower bound above upper bound"));
                }
                Ok(())
            }
            CostSpec::PiecewiseScalar { pieces } if pieces.is_empty() => {
                Err(Error::config("cost.pieces", "at least one piece required"))
            }
            _ => Ok(()),
        }
    }

    /// `c(base, x)`.
    pub fn cost(&self, base: &[f64], x: &[f64]) -> Result<Cost> {
        check_dim(base.len(), x.len())?;
        Ok(match self {
            CostSpec::QuadraticL2 { alpha } => Cost::Finite(alpha * vector::sq_dist(base, x)),
            CostSpec::WeightedL1 {
                scale,
                modifiable,
                lower,
                upper,
            } => {
                check_dim(lower.len(), x.len())?;
                let mut total = 0.0;
                for i in 0..x.len() {
                    let dx = x[i] - base[i];
                    if dx == 0.0 {
                        continue;
                    }
                    let width = upper[i] - lower[i];
                    if !modifiable.contains(&i) || x[i] < lower[i] || x[i] > upper[i] || width <= 0.0
                    {
                        return Ok(Cost::Infeasible);
                    }
                    total += dx.abs() / width;
                }
                Cost::Finite(scale * total)
            }
            CostSpec::PiecewiseScalar { pieces } => {
                check_dim(1, x.len())?;
                let dx = x[0] - base[0];
                let piece = pieces
                    .iter()
                    .find(|p| p.lo.is_none_or(|lo| dx >= lo) && p.hi.is_none_or(|hi| dx <= hi))
                    .ok_or_else(|| Error::InvalidDomain(format!("no cost piece covers dx = {dx}")))?;
                Cost::Finite(piece.expr.eval(&[dx]))
            }
        })
    }

    /// Gradient of the cost in `x`, used by first-order searches. Absolute
    /// values take subgradient 0 at 0.
    pub fn gradient(&self, base: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        check_dim(base.len(), x.len())?;
        match self {
            CostSpec::QuadraticL2 { alpha } => {
                Ok(x.iter().zip(base).map(|(a, b)| 2.0 * alpha * (a - b)).collect())
            }
            CostSpec::WeightedL1 {
                scale,
                modifiable,
                lower,
                upper,
            } => Ok((0..x.len())
                .map(|i| {
                    let dx = x[i] - base[i];
                    if !modifiable.contains(&i) || dx == 0.0 || upper[i] <= lower[i] {
                        0.0
                    } else {
                        scale * dx.signum() / (upper[i] - lower[i])
                    }
                })
                .collect()),
            CostSpec::PiecewiseScalar { .. } => {
                let h = 1e-6;
                let up = self.cost(base, &[x[0] + h])?;
                let down = self.cost(base, &[x[0] - h])?;
                match (up, down) {
                    (Cost::Finite(u), Cost::Finite(d)) => Ok(vec![(u - d) / (2.0 * h)]),
                    _ => Err(Error::Numeric("piecewise cost is not finite near x".into())),
                }
            }
        }
    }

    /// Map `x` onto the feasible set: frozen features reset to base, bounds
    /// enforced. Other costs accept every point.
    pub fn project(&self, base: &[f64], x: &mut [f64]) {
        if let CostSpec::WeightedL1 {
            modifiable,
            lower,
            upper,
            ..
        } = self
        {
            for i in 0..x.len() {
                x[i] = if modifiable.contains(&i) {
                    x[i].clamp(lower[i], upper[i])
                } else {
                    base[i]
                };
            }
        }
    }
}

/// One prior atom of a Bayesian agent: a candidate model and its probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorAtom {
    pub model: Expr,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReactionKind {
    /// Best-responds to the disclosed surrogate as if it were the model.
    SurrogateBestResponder,
    /// Adopts a recommendation iff it does not lower true utility.
    ArexChooser,
    /// Best-responds to the posterior mean of a finite prior over models.
    /// The explanation's disclosed value enters a Gaussian likelihood with
    /// standard deviation `noise`; `noise = 0` means exact consistency.
    BayesianPosteriorMean { prior: Vec<PriorAtom>, noise: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub base: DenseVector,
    pub z: f64,
    pub cost: CostSpec,
    pub reaction: ReactionKind,
}

impl AgentRecord {
    pub fn dim(&self) -> usize {
        self.base.dim()
    }
}

/// The model whose output agents care about and the direction they prefer.
#[derive(Clone, Copy)]
pub struct UtilityContext<'a> {
    pub g: &'a dyn ScalarModel,
    pub benefit: BenefitSign,
}

impl<'a> UtilityContext<'a> {
    pub fn new(g: &'a dyn ScalarModel, benefit: BenefitSign) -> Self {
        Self { g, benefit }
    }
}

/// `u(g, x) = b(g, x) - c(base, x)`.
pub fn utility(
    model: &dyn ScalarModel,
    benefit: BenefitSign,
    agent: &AgentRecord,
    x: &[f64],
) -> Result<Utility> {
    check_dim(agent.dim(), x.len())?;
    check_dim(model.dim(), x.len())?;
    Ok(match agent.cost.cost(&agent.base, x)? {
        Cost::Infeasible => Utility::Infeasible,
        Cost::Finite(c) => Utility::Finite(benefit.benefit(model.value(x)) - c),
    })
}

pub fn true_utility(ctx: &UtilityContext<'_>, agent: &AgentRecord, x: &[f64]) -> Result<Utility> {
    utility(ctx.g, ctx.benefit, agent, x)
}

/// Axis-aligned search region for best responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SearchBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        check_dim(lo.len(), hi.len())?;
        for (&l, &h) in lo.iter().zip(&hi) {
            if !(l < h && l.is_finite() && h.is_finite()) {
                return Err(Error::InvalidInterval { lo: l, hi: h });
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo], vec![hi])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for ((v, l), h) in x.iter_mut().zip(&self.lo).zip(&self.hi) {
            *v = v.clamp(*l, *h);
        }
    }

    fn on_edge(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .any(|(v, (l, h))| v == l || v == h)
    }

    /// `n` evenly spaced points of a 1-D box, endpoints included.
    pub fn grid_1d(&self, n: usize) -> Vec<f64> {
        let (lo, hi) = (self.lo[0], self.hi[0]);
        if n < 2 {
            return vec![lo];
        }
        (0..n)
            .map(|i| lo + (hi - lo) * (i as f64) / ((n - 1) as f64))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchOptions {
    pub grid_points: usize,
    pub restarts: usize,
    pub steps: usize,
    pub step_size: f64,
    pub seed: u64,
    /// Stream id for random restarts (usually the agent index).
    #[serde(skip)]
    pub stream: u64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            grid_points: 4001,
            restarts: 8,
            steps: 200,
            step_size: 0.05,
            seed: 0,
            stream: 0,
        }
    }
}

/// Surrogate improvement at a box edge beyond which the search is flagged.
const UNBOUNDED_GAP: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct BestResponse {
    pub x: DenseVector,
    /// Utility of `x` under the surrogate.
    pub utility: Utility,
    /// The optimum sits on the box edge far above the stay-put utility.
    pub unbounded: bool,
}

/// Candidate ordering: higher utility, then smaller movement, then
/// lexicographically smaller point.
fn better(
    base: &[f64],
    cand: (&[f64], Utility),
    best: (&[f64], Utility),
) -> bool {
    match cand.1.partial_cmp(&best.1) {
        Some(std::cmp::Ordering::Greater) => return true,
        Some(std::cmp::Ordering::Less) => return false,
        _ => {}
    }
    let (dc, db) = (vector::sq_dist(cand.0, base), vector::sq_dist(best.0, base));
    if dc != db {
        return dc < db;
    }
    cand.0.iter().zip(best.0).find(|(a, b)| a != b).is_some_and(|(a, b)| a < b)
}

fn strictly_better(cand: Utility, best: Utility) -> bool {
    match (cand, best) {
        (Utility::Finite(c), Utility::Finite(b)) => c - b > 1e-12 * (1.0 + b.abs()),
        (Utility::Finite(_), Utility::Infeasible) => true,
        _ => false,
    }
}

/// `argmax_x u(f, x)` over the box, with the base point always a candidate.
pub fn surrogate_best_response(
    agent: &AgentRecord,
    f: &dyn ScalarModel,
    benefit: BenefitSign,
    domain: &SearchBox,
    opts: &SearchOptions,
) -> Result<BestResponse> {
    check_dim(agent.dim(), domain.dim())?;
    check_dim(f.dim(), domain.dim())?;
    let base: &[f64] = &agent.base;
    let base_u = utility(f, benefit, agent, base)?;
    let (x, u) = if domain.dim() == 1 {
        search_1d(agent, f, benefit, domain, opts, base_u)?
    } else {
        search_nd(agent, f, benefit, domain, opts, base_u)?
    };
    let unbounded = domain.on_edge(&x)
        && matches!((u, base_u), (Utility::Finite(a), Utility::Finite(b)) if a - b > UNBOUNDED_GAP);
    Ok(BestResponse {
        x: DenseVector::new(x)?,
        utility: u,
        unbounded,
    })
}

fn search_1d(
    agent: &AgentRecord,
    f: &dyn ScalarModel,
    benefit: BenefitSign,
    domain: &SearchBox,
    opts: &SearchOptions,
    base_u: Utility,
) -> Result<(Vec<f64>, Utility)> {
    let base = agent.base[0];
    let grid = domain.grid_1d(opts.grid_points);
    let mut best = (base, base_u);
    let mut best_idx = None;
    for (i, &p) in grid.iter().enumerate() {
        let u = utility(f, benefit, agent, &[p])?;
        if better(&[base], (&[p], u), (&[best.0], best.1)) {
            best = (p, u);
            best_idx = Some(i);
        }
    }
    // Golden-section refinement between the grid neighbours of the winner.
    if let Some(i) = best_idx {
        let a = grid[i.saturating_sub(1)];
        let b = grid[(i + 1).min(grid.len() - 1)];
        let eval = |p: f64| utility(f, benefit, agent, &[p]).map(|u| u.to_f64());
        let p = golden_max(eval, a, b, 60)?;
        let u = utility(f, benefit, agent, &[p])?;
        if strictly_better(u, best.1) {
            best = (p, u);
        }
    }
    Ok((vec![best.0], best.1))
}

fn golden_max<F: Fn(f64) -> Result<f64>>(f: F, mut a: f64, mut b: f64, iters: usize) -> Result<f64> {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    for _ in 0..iters {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc >= fd { c } else { d })
}

fn search_nd(
    agent: &AgentRecord,
    f: &dyn ScalarModel,
    benefit: BenefitSign,
    domain: &SearchBox,
    opts: &SearchOptions,
    base_u: Utility,
) -> Result<(Vec<f64>, Utility)> {
    if matches!(agent.cost, CostSpec::PiecewiseScalar { .. }) {
        return Err(Error::Capability("piecewise cost in more than one dimension".into()));
    }
    let base: &[f64] = &agent.base;
    let mut best = (base.to_vec(), base_u);
    let mut rng = stream_for(opts.seed, Purpose::Restart, 0, opts.stream);
    for r in 0..=opts.restarts {
        let mut start = if r == 0 {
            base.to_vec()
        } else {
            domain
                .lo
                .iter()
                .zip(&domain.hi)
                .map(|(&l, &h)| rng.sample(Uniform::new_inclusive(l, h).expect("valid box")))
                .collect()
        };
        agent.cost.project(base, &mut start);
        let (x, u) = ascend(agent, f, benefit, domain, opts, start)?;
        if better(base, (&x, u), (&best.0, best.1)) {
            best = (x, u);
        }
    }
    Ok(best)
}

/// Projected gradient ascent on the surrogate utility with backtracking.
fn ascend(
    agent: &AgentRecord,
    f: &dyn ScalarModel,
    benefit: BenefitSign,
    domain: &SearchBox,
    opts: &SearchOptions,
    mut x: Vec<f64>,
) -> Result<(Vec<f64>, Utility)> {
    let base: &[f64] = &agent.base;
    let mut u = utility(f, benefit, agent, &x)?;
    let mut step = opts.step_size;
    for _ in 0..opts.steps {
        let (_, gf) = f.value_and_gradient(&x);
        let gc = agent.cost.gradient(base, &x)?;
        let dir: Vec<f64> = gf
            .iter()
            .zip(&gc)
            .map(|(a, c)| benefit.benefit(*a) - c)
            .collect();
        let mut moved = false;
        while step > 1e-10 {
            let mut cand: Vec<f64> = x.iter().zip(&dir).map(|(v, d)| v + step * d).collect();
            domain.clamp(&mut cand);
            agent.cost.project(base, &mut cand);
            let cu = utility(f, benefit, agent, &cand)?;
            if strictly_better(cu, u) {
                x = cand;
                u = cu;
                moved = true;
                step *= 1.5;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok((x, u))
}

/// Returns `rec.x` when `u(g, rec.x) >= u(g, base)`,
/// otherwise the base point. Ties adopt.
pub fn arex_response(
    agent: &AgentRecord,
    ctx: &UtilityContext<'_>,
    rec: &Arex,
) -> Result<DenseVector> {
    check_dim(agent.dim(), rec.x.dim())?;
    let actual = ctx.g.checked_value(&rec.x)?;
    if !((rec.y - actual).abs() <= INTEGRITY_TOL) {
        return Err(Error::Integrity {
            disclosed: rec.y,
            actual,
        });
    }
    let adopt = true_utility(ctx, agent, &rec.x)? >= true_utility(ctx, agent, &agent.base)?;
    Ok(if adopt { rec.x.clone() } else { agent.base.clone() })
}

/// Posterior mean of a finite family of models.
#[derive(Debug, Clone)]
pub struct PosteriorMean<M> {
    pub models: Vec<M>,
    pub weights: Vec<f64>,
}

impl<M: ScalarModel> ScalarModel for PosteriorMean<M> {
    fn dim(&self) -> usize {
        self.models.first().map_or(0, |m| m.dim())
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.models
            .iter()
            .zip(&self.weights)
            .filter(|(_, w)| **w > 0.0)
            .map(|(m, w)| w * m.value(x))
            .sum()
    }

    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let mut g = vec![0.0; x.len()];
        let mut v = 0.0;
        for (m, w) in self.models.iter().zip(&self.weights) {
            if *w == 0.0 {
                continue;
            }
            let (mv, mg) = m.value_and_gradient(x);
            v += w * mv;
            for (a, b) in g.iter_mut().zip(&mg) {
                *a += w * b;
            }
        }
        (v, g)
    }
}

/// `f(x) = sum_i p(theta_i | e) g_i(x)` with `p(theta_i | e)` proportional to
/// `likelihood(e, i) * p_i`.
pub fn posterior_mean_surrogate<M, L>(
    prior: Vec<(M, f64)>,
    likelihood: L,
    e: &Explanation,
) -> Result<PosteriorMean<M>>
where
    M: ScalarModel,
    L: Fn(&Explanation, &M) -> f64,
{
    let total: f64 = prior.iter().map(|(_, p)| p).sum();
    if (total - 1.0).abs() > 1e-9 || prior.iter().any(|(_, p)| *p < 0.0) {
        return Err(Error::config("prior", "probabilities must be nonnegative and sum to 1"));
    }
    let mut models = Vec::with_capacity(prior.len());
    let mut weights = Vec::with_capacity(prior.len());
    for (m, p) in prior {
        let l = likelihood(e, &m);
        weights.push(if p > 0.0 && l > 0.0 { l * p } else { 0.0 });
        models.push(m);
    }
    let z: f64 = weights.iter().sum();
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::DegeneratePosterior);
    }
    for w in &mut weights {
        *w /= z;
    }
    Ok(PosteriorMean { models, weights })
}

/// Likelihood of an explanation's disclosed value under a candidate model.
/// ARexes compare `theta(x_rec)` with the disclosed prediction; surrogates
/// compare `theta(base)` with `f(base)`; attributions carry no value.
pub fn disclosure_likelihood(
    e: &Explanation,
    theta: &dyn ScalarModel,
    base: &[f64],
    noise: f64,
) -> f64 {
    let gap = match e {
        Explanation::Arex(a) => theta.value(&a.x) - a.y,
        Explanation::Surrogate(s) => theta.value(base) - s.value(base),
        Explanation::Attribution(_) => return 1.0,
    };
    if noise > 0.0 {
        (-0.5 * (gap / noise).powi(2)).exp()
    } else if gap.abs() <= INTEGRITY_TOL {
        1.0
    } else {
        0.0
    }
}

/// The agent's reaction to an explanation according to its reaction kind.
pub fn respond(
    agent: &AgentRecord,
    ctx: &UtilityContext<'_>,
    e: &Explanation,
    domain: &SearchBox,
    opts: &SearchOptions,
) -> Result<DenseVector> {
    match (&agent.reaction, e) {
        (ReactionKind::ArexChooser, Explanation::Arex(a)) => arex_response(agent, ctx, a),
        (ReactionKind::SurrogateBestResponder, Explanation::Surrogate(s)) => {
            Ok(surrogate_best_response(agent, s, ctx.benefit, domain, opts)?.x)
        }
        (ReactionKind::BayesianPosteriorMean { prior, noise }, _) => {
            let atoms = prior.iter().map(|a| (a.model.clone(), a.prob)).collect();
            let base = agent.base.clone();
            let f = posterior_mean_surrogate(
                atoms,
                |e, m: &Expr| disclosure_likelihood(e, m, &base, *noise),
                e,
            )?;
            Ok(surrogate_best_response(agent, &f, ctx.benefit, domain, opts)?.x)
        }
        (r, e) => Err(Error::config(
            "reaction",
            format!("reaction {} cannot consume a {} explanation", reaction_name(r), e.tag()),
        )),
    }
}

fn reaction_name(r: &ReactionKind) -> &'static str {
    match r {
        ReactionKind::SurrogateBestResponder => "surrogate_best_responder",
        ReactionKind::ArexChooser => "arex_chooser",
        ReactionKind::BayesianPosteriorMean { .. } => "bayesian_posterior_mean",
    }
}

/// Outcome of an agent's features and unobservable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutcomeFunction {
    /// Deterministic quadratic in the concatenation `[x, z]`.
    Quadratic(QuadraticModel),
    /// Bernoulli draw with success probability `s(x)`; `None` until fitted.
    Logistic(Option<LogisticModel>),
}

pub fn evaluate_outcome<R: Rng + ?Sized>(
    h: &OutcomeFunction,
    x: &[f64],
    z: f64,
    rng: &mut R,
) -> Result<f64> {
    match h {
        OutcomeFunction::Quadratic(q) => {
            let mut v = Vec::with_capacity(x.len() + 1);
            v.extend_from_slice(x);
            v.push(z);
            q.checked_value(&v)
        }
        OutcomeFunction::Logistic(None) => Err(Error::UninitializedSimulator),
        OutcomeFunction::Logistic(Some(s)) => {
            let p = s.checked_value(x)?;
            let draw = Bernoulli::new(p.clamp(0.0, 1.0))
                .map_err(|e| Error::Numeric(e.to_string()))?
                .sample(rng);
            Ok(if draw { 1.0 } else { 0.0 })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Population {
    pub agents: Vec<AgentRecord>,
}

#[derive(Serialize, Deserialize)]
struct Row {
    base: String,
    z: f64,
    cost: String,
    reaction: String,
}

impl Population {
    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    /// One agent per row: space-separated base covariate, `z`, then cost and
    /// reaction as JSON objects.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for a in &self.agents {
            let base: Vec<String> = a.base.iter().map(|v| format!("{v:?}")).collect();
            out.serialize(Row {
                base: base.join(" "),
                z: a.z,
                cost: serde_json::to_string(&a.cost).map_err(|e| Error::Schema(e.to_string()))?,
                reaction: serde_json::to_string(&a.reaction)
                    .map_err(|e| Error::Schema(e.to_string()))?,
            })?;
        }
        out.flush().map_err(|e| Error::io("population", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut input = csv::Reader::from_reader(r);
        let mut agents = Vec::new();
        for (i, row) in input.deserialize::<Row>().enumerate() {
            let row = row?;
            let line = i + 2;
            let parse = |m: String| Error::Parse { line, message: m };
            let base = row
                .base
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| parse(e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            agents.push(AgentRecord {
                base: DenseVector::new(base)?,
                z: row.z,
                cost: serde_json::from_str(&row.cost).map_err(|e| parse(e.to_string()))?,
                reaction: serde_json::from_str(&row.reaction).map_err(|e| parse(e.to_string()))?,
            });
        }
        Ok(Self { agents })
    }
}
