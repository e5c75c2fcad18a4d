//! Repeated risk minimization with strategic agents: pretraining, the
//! compliance predictor, joint training of the model and recommendation
//! policy, and fixed counterfactual baselines.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{arex_response, AgentRecord, BenefitSign, UtilityContext};
use crate::dataio::{
    bootstrap_augment, bootstrap_sample, fit_outcome_simulator, CreditConfig, JointTarget, ResponseBlend, RrmConfig,
    SimulatorFit, TabularDataset,
};
use crate::error::{check_dim, Error, Result};
use crate::explain::{counterfactual_explain, random_arex_sample, Arex, CeOptions, Constraints};
use crate::metrics;
use crate::model::{LogisticModel, ScalarModel};
use crate::numkit::tape::sigmoid;
use crate::numkit::{vector, Cache, DenseVector, Head, Mlp, Optimizer};
use crate::rng::{stream_for, Purpose};

/// Regression uses squared loss and a linear head; classification uses
/// cross-entropy and a logistic head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Regression,
    Classification,
}

impl Task {
    pub fn head(self) -> Head {
        match self {
            Task::Regression => Head::Linear,
            Task::Classification => Head::Logistic,
        }
    }
}

/// Which draw of agents is requested; each phase uses its own streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Compliance,
    Deploy(usize),
    Test,
}

impl Phase {
    pub fn round(self) -> u64 {
        match self {
            Phase::Pretrain => 0,
            Phase::Compliance => 1,
            Phase::Test => 2,
            Phase::Deploy(i) => 16 + i as u64,
        }
    }
}

/// The simulated world: where agents come from and how outcomes arise.
pub trait Environment: Sync {
    fn dim(&self) -> usize;
    fn task(&self) -> Task;
    fn benefit(&self) -> BenefitSign;
    /// Feasible set for recommendations.
    fn constraints(&self) -> &Constraints;
    fn agents(&self, phase: Phase, n: usize) -> Result<Vec<AgentRecord>>;
    /// Outcome of agent `index` of `phase` at covariate `x`.
    fn outcome(&self, agent: &AgentRecord, x: &[f64], phase: Phase, index: usize) -> Result<f64>;
    /// Expected outcome at `x` and its gradient in `x`.
    fn expected_outcome(&self, agent: &AgentRecord, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// Synthetic regression world with a quadratic outcome over `[x, z]`.
pub struct SyntheticEnv {
    pub config: crate::dataio::SyntheticConfig,
    pub outcome: crate::agents::OutcomeFunction,
    pub seed: u64,
    constraints: Constraints,
}

impl SyntheticEnv {
    pub fn new(config: crate::dataio::SyntheticConfig, seed: u64) -> Result<Self> {
        let outcome = crate::dataio::draw_synthetic_outcome(&config, seed)?;
        Ok(Self {
            config,
            outcome,
            seed,
            constraints: Constraints::none(),
        })
    }
}

impl Environment for SyntheticEnv {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn task(&self) -> Task {
        Task::Regression
    }

    fn benefit(&self) -> BenefitSign {
        BenefitSign::Lower
    }

    fn constraints(&self) -> &Constraints {
        &self.constraints
    }

    fn agents(&self, phase: Phase, n: usize) -> Result<Vec<AgentRecord>> {
        Ok(crate::dataio::gen_synthetic_population(&self.config, n, self.seed, phase.round())?.agents)
    }

    fn outcome(&self, agent: &AgentRecord, x: &[f64], phase: Phase, index: usize) -> Result<f64> {
        let mut rng = stream_for(self.seed, Purpose::Outcome, phase.round(), index as u64);
        crate::agents::evaluate_outcome(&self.outcome, x, agent.z, &mut rng)
    }

    fn expected_outcome(&self, agent: &AgentRecord, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let crate::agents::OutcomeFunction::Quadratic(q) = &self.outcome else {
            return Err(Error::Capability("expected outcome of a non-quadratic synthetic world".into()));
        };
        let mut v = Vec::with_capacity(x.len() + 1);
        v.extend_from_slice(x);
        v.push(agent.z);
        check_dim(q.dim(), v.len())?;
        let (value, mut grad) = q.value_and_gradient(&v);
        grad.pop();
        Ok((value, grad))
    }
}

/// Credit world: agents are rows of a training or test pool, outcomes are
/// Bernoulli draws from a fitted logistic simulator.
pub struct CreditEnv {
    pub train: TabularDataset,
    pub test: TabularDataset,
    pub simulator: LogisticModel,
    pub cost_scale: f64,
    pub seed: u64,
    constraints: Constraints,
}

impl CreditEnv {
    pub fn new(train: TabularDataset, test: TabularDataset, simulator: LogisticModel, cost_scale: f64, seed: u64) -> Result<Self> {
        if train.is_empty() || test.is_empty() {
            return Err(Error::EmptyDataset);
        }
        check_dim(train.dim(), simulator.dim())?;
        let constraints = train.constraints();
        Ok(Self {
            train,
            test,
            simulator,
            cost_scale,
            seed,
            constraints,
        })
    }
}

/// Fits the outcome simulator on `data`, augments it into the training pool
/// and draws a separate test pool.
pub fn credit_env(data: &TabularDataset, cfg: &CreditConfig, seed: u64) -> Result<(CreditEnv, SimulatorFit)> {
    let fit = fit_outcome_simulator(data, cfg.simulator_steps, cfg.simulator_lr)?;
    let train = bootstrap_augment(data, cfg.augment, cfg.jitter, Some(&fit.model), seed)?;
    let test = bootstrap_sample(data, cfg.test, cfg.jitter, Some(&fit.model), seed, 1)?;
    let env = CreditEnv::new(train, test, fit.model.clone(), cfg.cost_scale, seed)?;
    Ok((env, fit))
}

impl Environment for CreditEnv {
    fn dim(&self) -> usize {
        self.train.dim()
    }

    fn task(&self) -> Task {
        Task::Classification
    }

    fn benefit(&self) -> BenefitSign {
        BenefitSign::Higher
    }

    fn constraints(&self) -> &Constraints {
        &self.constraints
    }

    fn agents(&self, phase: Phase, n: usize) -> Result<Vec<AgentRecord>> {
        let pool = match phase {
            Phase::Test => {
                let all = self.test.agents(self.cost_scale)?;
                return Ok(all.into_iter().cycle().take(n).collect());
            }
            _ => self.train.agents(self.cost_scale)?,
        };
        Ok((0..n)
            .map(|t| {
                let mut rng = stream_for(self.seed, Purpose::Population, phase.round(), t as u64);
                pool[rng.random_range(0..pool.len())].clone()
            })
            .collect())
    }

    fn outcome(&self, _agent: &AgentRecord, x: &[f64], phase: Phase, index: usize) -> Result<f64> {
        let mut rng = stream_for(self.seed, Purpose::Outcome, phase.round(), index as u64);
        let p = self.simulator.checked_value(x)?;
        Ok(if rng.random_bool(p.clamp(0.0, 1.0)) { 1.0 } else { 0.0 })
    }

    fn expected_outcome(&self, _agent: &AgentRecord, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_dim(self.simulator.dim(), x.len())?;
        Ok(self.simulator.value_and_gradient(x))
    }
}

fn column_stats(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut sd = vec![0.0; d];
    for r in rows {
        for ((s, v), m) in sd.iter_mut().zip(r).zip(&mean) {
            *s += (v - m).powi(2) / n;
        }
    }
    let sd = sd.into_iter().map(|v| if v.sqrt() > 1e-8 { v.sqrt() } else { 1.0 }).collect();
    (mean, sd)
}

/// Derivative of [`pointwise`] with respect to the target.
fn pointwise_target_derivative(task: Task, raw: f64, y: f64) -> f64 {
    match task {
        Task::Regression => -2.0 * (raw - y),
        Task::Classification => -raw,
    }
}

/// Pointwise loss on the pre-head output `raw`; returns `(loss, dloss/draw)`.
fn pointwise(task: Task, raw: f64, y: f64) -> (f64, f64) {
    match task {
        Task::Regression => ((raw - y) * (raw - y), 2.0 * (raw - y)),
        Task::Classification => {
            // log(1 + e^r) - y r, written stably.
            let softplus = if raw > 0.0 { raw + (-raw).exp().ln_1p() } else { raw.exp().ln_1p() };
            (softplus - y * raw, sigmoid(raw) - y)
        }
    }
}

fn minibatch_indices(n: usize, size: usize, seed: u64, round: u64, step: usize) -> Vec<usize> {
    let mut rng = stream_for(seed, Purpose::Batches, round, step as u64);
    (0..size).map(|_| rng.random_range(0..n)).collect()
}

/// Minibatch training of one network. `sample` adds one example's gradient
/// into `grad` and returns its loss.
#[allow(clippy::too_many_arguments)]
fn fit_network<F>(
    net: &mut Mlp,
    n: usize,
    steps: usize,
    minibatch: usize,
    optimizer: crate::numkit::OptimizerKind,
    seed: u64,
    round: u64,
    context: &str,
    mut sample: F,
) -> Result<()>
where
    F: FnMut(&Mlp, usize, &mut Cache, &mut [f64]) -> f64,
{
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut opt = Optimizer::new(optimizer, net.num_params());
    let mut cache = net.new_cache();
    let mut grad = vec![0.0; net.num_params()];
    for step in 0..steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let batch = minibatch_indices(n, minibatch, seed, round, step);
        let mut loss = 0.0;
        for &i in &batch {
            loss += sample(net, i, &mut cache, &mut grad);
        }
        let scale = 1.0 / batch.len() as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        if !loss.is_finite() {
            return Err(Error::Divergence {
                iteration: step,
                context: format!("{context}: loss {loss}"),
            });
        }
        opt.step(net.params_mut(), &grad).map_err(|_| Error::Divergence {
            iteration: step,
            context: format!("{context}: non-finite gradient"),
        })?;
    }
    Ok(())
}

/// Pretrained predictive model and identity-imitating recommendation policy.
#[derive(Debug, Clone)]
pub struct Pretrained {
    pub g: Mlp,
    pub sigma: Mlp,
}

/// `g0` minimizes the task loss on `(xs, ys)`; `sigma0` imitates the
/// identity map on `xs`.
pub fn pretrain(xs: &[Vec<f64>], ys: &[f64], task: Task, cfg: &RrmConfig, seed: u64) -> Result<Pretrained> {
    check_dim(xs.len(), ys.len())?;
    if xs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = xs[0].len();
    let (mean, sd) = column_stats(xs);
    let mut g = Mlp::three_layer(d, cfg.hidden, 1, task.head(), &mut stream_for(seed, Purpose::Init, 0, 0))?;
    g.set_input_normalization(mean.clone(), sd.clone())?;
    if task == Task::Regression {
        let ycols: Vec<Vec<f64>> = ys.iter().map(|y| vec![*y]).collect();
        let (ym, ys_sd) = column_stats(&ycols);
        g.set_output_normalization(ym, ys_sd)?;
    }
    let mut d_in = vec![0.0; d];
    fit_network(&mut g, xs.len(), cfg.pretrain_steps, cfg.minibatch, cfg.optimizer, seed, 0, "pretraining g", |net, i, cache, grad| {
        let raw = net.forward_cached(&xs[i], cache)[0];
        let (l, dl) = pointwise(task, raw, ys[i]);
        net.backward(cache, &[dl], Some(grad), &mut d_in);
        l
    })?;

    let mut sigma = Mlp::three_layer(d, cfg.hidden, d, Head::Linear, &mut stream_for(seed, Purpose::Init, 1, 0))?;
    sigma.set_input_normalization(mean.clone(), sd.clone())?;
    sigma.set_output_normalization(mean, sd)?;
    let mut d_out = vec![0.0; d];
    fit_network(&mut sigma, xs.len(), cfg.pretrain_steps, cfg.minibatch, cfg.optimizer, seed, 1, "pretraining policy", |net, i, cache, grad| {
        let out = net.forward_cached(&xs[i], cache);
        let mut l = 0.0;
        for ((o, x), dd) in out.iter().zip(&xs[i]).zip(d_out.iter_mut()) {
            l += (o - x) * (o - x);
            *dd = 2.0 * (o - x);
        }
        net.backward(cache, &d_out, Some(grad), &mut d_in);
        l
    })?;
    Ok(Pretrained { g, sigma })
}

/// One row of the compliance dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceSample {
    pub base: Vec<f64>,
    pub rec: Vec<f64>,
    /// `g(base) - g(rec)` under the model deployed at collection time.
    pub delta_g: f64,
    pub adopted: bool,
}

impl ComplianceSample {
    pub fn features(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.base.len() + 2);
        v.extend_from_slice(&self.base);
        v.extend_from_slice(&self.rec);
        v.push(self.delta_g);
        v.push(vector::sq_dist(&self.base, &self.rec));
        v
    }
}

/// Where the random recommendation for one agent is centered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerCenter {
    Base,
    Policy,
    Counterfactual,
}

/// Random recommendations `N(center, variance I)` with the center chosen
/// uniformly per agent among the base point, the policy's recommendation,
/// and the unit-weight counterfactual. Draws are projected onto the
/// feasible set.
pub struct Sampler<'a> {
    pub policy: &'a Mlp,
    pub variance: f64,
    pub constraints: &'a Constraints,
    pub ce: CeOptions,
}

impl Sampler<'_> {
    pub fn draw(&self, g: &dyn ScalarModel, benefit: BenefitSign, base: &[f64], seed: u64, index: usize) -> Result<(SamplerCenter, Arex)> {
        let mut rng = stream_for(seed, Purpose::Recommendation, Phase::Compliance.round(), index as u64);
        let which = match rng.random_range(0..3) {
            0 => SamplerCenter::Base,
            1 => SamplerCenter::Policy,
            _ => SamplerCenter::Counterfactual,
        };
        let center = match which {
            SamplerCenter::Base => base.to_vec(),
            SamplerCenter::Policy => self.policy.forward(base)?,
            SamplerCenter::Counterfactual => counterfactual_explain(g, benefit, base, 1.0, self.constraints, &self.ce)?.x.into_inner(),
        };
        let mut x = random_arex_sample(g, &center, self.variance, &mut rng)?.x.into_inner();
        self.constraints.round(base, &mut x);
        Ok((which, Arex::disclose(g, DenseVector::new(x)?)?))
    }
}

/// Show each agent a sampled recommendation under `g` and record whether
/// its true reaction adopts it.
pub fn collect_compliance(
    agents: &[AgentRecord],
    g: &dyn ScalarModel,
    benefit: BenefitSign,
    sampler: &Sampler<'_>,
    seed: u64,
) -> Result<Vec<ComplianceSample>> {
    let ctx = UtilityContext::new(g, benefit);
    agents
        .iter()
        .enumerate()
        .map(|(t, a)| {
            let (_, rec) = sampler.draw(g, benefit, &a.base, seed, t)?;
            let response = arex_response(a, &ctx, &rec)?;
            Ok(ComplianceSample {
                base: a.base.to_vec(),
                delta_g: g.value(&a.base) - rec.y,
                adopted: response.bitwise_eq(&rec.x),
                rec: rec.x.into_inner(),
            })
        })
        .collect()
}

/// Predicted adoption probability.
#[derive(Debug, Clone, PartialEq)]
pub enum CompliancePredictor {
    /// Every sample had the same label; predicts that label exactly.
    Constant(f64),
    Network(Mlp),
}

impl CompliancePredictor {
    pub fn predict(&self, features: &[f64]) -> Result<f64> {
        match self {
            CompliancePredictor::Constant(p) => Ok(*p),
            CompliancePredictor::Network(net) => net.forward_scalar(features),
        }
    }

    pub fn to_text(&self) -> String {
        match self {
            CompliancePredictor::Constant(p) => format!("constant {p:?}\n"),
            CompliancePredictor::Network(net) => net.to_text(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ComplianceFit {
    pub predictor: CompliancePredictor,
    pub degenerate: bool,
    /// Weighted cross-entropy before and after training.
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Inverse class frequency weights `(negative, positive)`.
pub fn inverse_frequency_weights(samples: &[ComplianceSample]) -> (f64, f64) {
    let n = samples.len() as f64;
    let pos = samples.iter().filter(|s| s.adopted).count() as f64;
    let neg = n - pos;
    let w = |c: f64| if c > 0.0 { n / (2.0 * c) } else { 0.0 };
    (w(neg), w(pos))
}

/// Mean class-weighted cross-entropy of a predictor.
pub fn weighted_bce(predictor: &CompliancePredictor, samples: &[ComplianceSample], weights: (f64, f64)) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for s in samples {
        let p = predictor.predict(&s.features())?.clamp(1e-12, 1.0 - 1e-12);
        total += if s.adopted { -weights.1 * p.ln() } else { -weights.0 * (1.0 - p).ln() };
    }
    Ok(total / samples.len() as f64)
}

/// Fit the compliance predictor with class-weighted cross-entropy; weights
/// default to inverse class frequency.
pub fn train_compliance(
    samples: &[ComplianceSample],
    class_weights: Option<(f64, f64)>,
    cfg: &RrmConfig,
    seed: u64,
) -> Result<ComplianceFit> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let weights = class_weights.unwrap_or_else(|| inverse_frequency_weights(samples));
    let pos = samples.iter().filter(|s| s.adopted).count();
    if pos == 0 || pos == samples.len() {
        let predictor = CompliancePredictor::Constant(if pos == 0 { 0.0 } else { 1.0 });
        return Ok(ComplianceFit {
            degenerate: true,
            initial_loss: 0.0,
            final_loss: 0.0,
            predictor,
        });
    }
    let features: Vec<Vec<f64>> = samples.iter().map(|s| s.features()).collect();
    let d = features[0].len();
    let (mean, sd) = column_stats(&features);
    let mut net = Mlp::three_layer(d, cfg.hidden, 1, Head::Logistic, &mut stream_for(seed, Purpose::Init, 2, 0))?;
    net.set_input_normalization(mean, sd)?;
    let initial_loss = weighted_bce(&CompliancePredictor::Network(net.clone()), samples, weights)?;
    let mut d_in = vec![0.0; d];
    fit_network(&mut net, samples.len(), cfg.compliance_steps, cfg.minibatch, cfg.optimizer, seed, 2, "compliance predictor", |net, i, cache, grad| {
        let raw = net.forward_cached(&features[i], cache)[0];
        let y = if samples[i].adopted { 1.0 } else { 0.0 };
        let w = if samples[i].adopted { weights.1 } else { weights.0 };
        let (l, dl) = pointwise(Task::Classification, raw, y);
        net.backward(cache, &[w * dl], Some(grad), &mut d_in);
        w * l
    })?;
    let predictor = CompliancePredictor::Network(net);
    let final_loss = weighted_bce(&predictor, samples, weights)?;
    Ok(ComplianceFit {
        predictor,
        degenerate: false,
        initial_loss,
        final_loss,
    })
}

/// `w * rec + (1 - w) * base`.
pub fn simulate_response_soft(w: f64, base: &[f64], rec: &[f64]) -> Vec<f64> {
    base.iter().zip(rec).map(|(b, r)| w * r + (1.0 - w) * b).collect()
}

/// The recommendation when `w >= 0.5`, else the base point.
pub fn simulate_response_hard(w: f64, base: &[f64], rec: &[f64]) -> Vec<f64> {
    if w >= 0.5 { rec.to_vec() } else { base.to_vec() }
}

/// Simulated response to `rec` as predicted by the compliance model:
/// `(w, soft response)`.
pub fn simulate_response(xi: &CompliancePredictor, g: &dyn ScalarModel, base: &[f64], rec: &[f64]) -> Result<(f64, Vec<f64>)> {
    let sample = ComplianceSample {
        base: base.to_vec(),
        rec: rec.to_vec(),
        delta_g: g.checked_value(base)? - g.checked_value(rec)?,
        adopted: false,
    };
    let w = xi.predict(&sample.features())?;
    Ok((w, simulate_response_soft(w, base, rec)))
}

/// Per-iteration record of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    /// Loss of the deployed model on the responses it induced (normalized
    /// for regression).
    pub loss: f64,
    /// Training objective after the update.
    pub fitted_loss: f64,
    /// Fraction of agents whose true reaction adopted the recommendation.
    pub compliance: f64,
    pub seconds: f64,
}

/// Per-iteration curves of several arms as `arm,iteration,loss,fitted_loss,compliance`.
/// Timings are left out so that the file is reproducible.
pub fn write_loss_curves<W: std::io::Write>(arms: &[(&str, &[IterationLog])], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["arm", "iteration", "loss", "fitted_loss", "compliance"])?;
    for (arm, log) in arms {
        for l in *log {
            out.write_record([
                arm.to_string(),
                l.iteration.to_string(),
                format!("{:?}", l.loss),
                format!("{:?}", l.fitted_loss),
                format!("{:?}", l.compliance),
            ])?;
        }
    }
    out.flush().map_err(|e| Error::io("loss curves", e))?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RrmState {
    pub arm: String,
    pub g: Mlp,
    /// Recommendation policy (joint training only).
    pub sigma: Option<Mlp>,
    pub xi: Option<CompliancePredictor>,
    /// Counterfactual weight (fixed baselines only).
    pub lambda: Option<f64>,
    pub log: Vec<IterationLog>,
}

/// A run that stopped early, with everything completed before the failure.
#[derive(Debug)]
pub struct Aborted {
    pub state: RrmState,
    pub error: Error,
}

impl std::fmt::Display for Aborted {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} aborted after {} iterations: {}", self.state.arm, self.state.log.len(), self.error)
    }
}

/// Recommendation policy in deployment: constrained, categoricals rounded.
fn policy_recommendation(sigma: &Mlp, g: &dyn ScalarModel, base: &[f64], constraints: &Constraints) -> Result<Arex> {
    crate::explain::arex_policy_recommend_constrained(sigma, g, base, constraints)
}

/// How an arm produces recommendations.
pub enum Policy<'a> {
    Joint(&'a Mlp),
    Counterfactual { lambda: f64, options: &'a CeOptions },
}

impl Policy<'_> {
    pub fn recommend(&self, g: &dyn ScalarModel, benefit: BenefitSign, base: &[f64], constraints: &Constraints) -> Result<Arex> {
        match self {
            Policy::Joint(sigma) => policy_recommendation(sigma, g, base, constraints),
            Policy::Counterfactual { lambda, options } => counterfactual_explain(g, benefit, base, *lambda, constraints, options),
        }
    }
}

/// Agents' true reactions to a deployed `(g, policy)`.
#[derive(Debug, Clone)]
pub struct Deployment {
    pub agents: Vec<AgentRecord>,
    pub bases: Vec<Vec<f64>>,
    pub recs: Vec<DenseVector>,
    pub responses: Vec<DenseVector>,
    pub outcomes: Vec<f64>,
    pub base_outcomes: Vec<f64>,
}

impl Deployment {
    pub fn compliance(&self) -> Result<f64> {
        metrics::compliance_rate(&self.responses, &self.recs)
    }
}

pub fn deploy(env: &dyn Environment, g: &Mlp, policy: &Policy<'_>, phase: Phase, n: usize) -> Result<Deployment> {
    let agents = env.agents(phase, n)?;
    let benefit = env.benefit();
    let ctx = UtilityContext::new(g, benefit);
    let mut out = Deployment {
        agents: Vec::new(),
        bases: Vec::with_capacity(n),
        recs: Vec::with_capacity(n),
        responses: Vec::with_capacity(n),
        outcomes: Vec::with_capacity(n),
        base_outcomes: Vec::with_capacity(n),
    };
    for (t, a) in agents.iter().enumerate() {
        let rec = policy.recommend(g, benefit, &a.base, env.constraints())?;
        let x = arex_response(a, &ctx, &rec)?;
        out.outcomes.push(env.outcome(a, &x, phase, t)?);
        out.base_outcomes.push(env.outcome(a, &a.base, phase, t)?);
        out.bases.push(a.base.to_vec());
        out.recs.push(rec.x);
        out.responses.push(x);
    }
    out.agents = agents;
    Ok(out)
}

/// Mean task loss of `g` on `(xs, ys)`, divided by `nc` for regression.
pub fn task_loss(g: &Mlp, xs: &[DenseVector], ys: &[f64], task: Task, nc: f64) -> Result<f64> {
    check_dim(xs.len(), ys.len())?;
    if xs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut cache = g.new_cache();
    let mut total = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        total += pointwise(task, g.forward_cached(x, &mut cache)[0], *y).0;
    }
    let mean = total / xs.len() as f64;
    Ok(match task {
        Task::Regression => mean / nc,
        Task::Classification => mean,
    })
}

/// Reusable buffers for [`joint_sample_gradient`].
pub struct JointScratch {
    cg_base: Cache,
    cg_rec: Cache,
    cg_hat: Cache,
    cs: Cache,
    cxi: Cache,
    d_hat: Vec<f64>,
    d_rec: Vec<f64>,
    d_xi: Vec<f64>,
    d_tmp: Vec<f64>,
    features: Vec<f64>,
    rec: Vec<f64>,
    hat: Vec<f64>,
}

impl JointScratch {
    pub fn new(m: &JointModels<'_>) -> Self {
        let d = m.g.input_dim();
        Self {
            cg_base: m.g.new_cache(),
            cg_rec: m.g.new_cache(),
            cg_hat: m.g.new_cache(),
            cs: m.sigma.new_cache(),
            cxi: match m.xi {
                CompliancePredictor::Network(n) => n.new_cache(),
                CompliancePredictor::Constant(_) => Cache::default(),
            },
            d_hat: vec![0.0; d],
            d_rec: vec![0.0; d],
            d_xi: vec![0.0; 2 * d + 2],
            d_tmp: vec![0.0; d],
            features: vec![0.0; 2 * d + 2],
            rec: vec![0.0; d],
            hat: vec![0.0; d],
        }
    }
}

fn head_value(head: Head, raw: f64) -> (f64, f64) {
    match head {
        Head::Linear => (raw, 1.0),
        Head::Logistic => {
            let s = sigmoid(raw);
            (s, s * (1.0 - s))
        }
    }
}

/// What the simulated response is scored against.
#[derive(Clone, Copy)]
pub enum SampleTarget<'a> {
    /// The outcome observed in the previous deployment.
    Observed(f64),
    /// The environment's expected outcome at the simulated response,
    /// differentiated through the response.
    Expected { env: &'a dyn Environment, agent: &'a AgentRecord },
}

impl SampleTarget<'_> {
    fn at(&self, x: &[f64]) -> Result<(f64, Option<Vec<f64>>)> {
        match self {
            SampleTarget::Observed(y) => Ok((*y, None)),
            SampleTarget::Expected { env, agent } => {
                let (y, dy) = env.expected_outcome(agent, x)?;
                Ok((y, Some(dy)))
            }
        }
    }
}

/// The models of one joint update; `g` and `sigma` are trained, the
/// compliance predictor is frozen.
#[derive(Clone, Copy)]
pub struct JointModels<'a> {
    pub g: &'a Mlp,
    pub sigma: &'a Mlp,
    pub xi: &'a CompliancePredictor,
    pub constraints: &'a Constraints,
    pub task: Task,
    pub blend: ResponseBlend,
}

/// Loss of one agent's simulated response. Gradients w.r.t. the parameters
/// of `g` and `sigma` are accumulated through every path: the response, the
/// compliance features and the score gap.
pub fn joint_sample_gradient(
    m: &JointModels<'_>,
    base: &[f64],
    target: SampleTarget<'_>,
    s: &mut JointScratch,
    grad_g: &mut [f64],
    grad_sigma: &mut [f64],
) -> Result<f64> {
    let (g, d) = (m.g, base.len());
    s.rec.copy_from_slice(m.sigma.forward_cached(base, &mut s.cs));
    let raw_sigma = s.rec.clone();
    m.constraints.project(base, &mut s.rec);
    let raw_base = g.forward_cached(base, &mut s.cg_base)[0];
    let raw_rec = g.forward_cached(&s.rec, &mut s.cg_rec)[0];
    let (gb, dgb) = head_value(g.head(), raw_base);
    let (gr, dgr) = head_value(g.head(), raw_rec);
    s.features[..d].copy_from_slice(base);
    s.features[d..2 * d].copy_from_slice(&s.rec);
    s.features[2 * d] = gb - gr;
    s.features[2 * d + 1] = vector::sq_dist(base, &s.rec);
    let w = match m.xi {
        CompliancePredictor::Constant(p) => *p,
        CompliancePredictor::Network(net) => sigmoid(net.forward_cached(&s.features, &mut s.cxi)[0]),
    };

    s.d_rec.iter_mut().for_each(|v| *v = 0.0);
    let (loss, dw, d_raw_base, d_raw_rec) = match m.blend {
        ResponseBlend::Soft => {
            for i in 0..d {
                s.hat[i] = w * s.rec[i] + (1.0 - w) * base[i];
            }
            let raw_hat = g.forward_cached(&s.hat, &mut s.cg_hat)[0];
            let (y, dy) = target.at(&s.hat)?;
            let (loss, dl) = pointwise(m.task, raw_hat, y);
            g.backward(&mut s.cg_hat, &[dl], Some(&mut *grad_g), &mut s.d_hat);
            if let Some(dy) = dy {
                let dt = pointwise_target_derivative(m.task, raw_hat, y);
                for (v, dyi) in s.d_hat.iter_mut().zip(&dy) {
                    *v += dt * dyi;
                }
            }
            let mut dw = 0.0;
            for i in 0..d {
                dw += s.d_hat[i] * (s.rec[i] - base[i]);
                s.d_rec[i] = w * s.d_hat[i];
            }
            (loss, dw, 0.0, 0.0)
        }
        ResponseBlend::Mixture => {
            let (y_rec, dy_rec) = target.at(&s.rec)?;
            let (y_base, _) = target.at(base)?;
            let (l_rec, dl_rec) = pointwise(m.task, raw_rec, y_rec);
            let (l_base, dl_base) = pointwise(m.task, raw_base, y_base);
            if let Some(dy) = dy_rec {
                let dt = pointwise_target_derivative(m.task, raw_rec, y_rec);
                for (v, dyi) in s.d_rec.iter_mut().zip(&dy) {
                    *v = w * dt * dyi;
                }
            }
            (w * l_rec + (1.0 - w) * l_base, l_rec - l_base, (1.0 - w) * dl_base, w * dl_rec)
        }
    };

    let mut d_gap = 0.0;
    if let CompliancePredictor::Network(net) = m.xi {
        net.backward(&mut s.cxi, &[dw * w * (1.0 - w)], None, &mut s.d_xi);
        d_gap = s.d_xi[2 * d];
        let d_dist = s.d_xi[2 * d + 1];
        for i in 0..d {
            s.d_rec[i] += s.d_xi[d + i] + 2.0 * d_dist * (s.rec[i] - base[i]);
        }
    }
    g.backward(&mut s.cg_base, &[d_raw_base + d_gap * dgb], Some(&mut *grad_g), &mut s.d_tmp);
    g.backward(&mut s.cg_rec, &[d_raw_rec - d_gap * dgr], Some(&mut *grad_g), &mut s.d_tmp);
    for i in 0..d {
        s.d_rec[i] += s.d_tmp[i];
    }
    for i in 0..d {
        let frozen = m.constraints.is_frozen(i);
        let clipped = m
            .constraints
            .bounds
            .as_ref()
            .is_some_and(|(lo, hi)| raw_sigma[i] < lo[i] || raw_sigma[i] > hi[i]);
        if frozen || clipped {
            s.d_rec[i] = 0.0;
        }
    }
    m.sigma.backward(&mut s.cs, &s.d_rec, Some(grad_sigma), &mut s.d_tmp);
    Ok(loss)
}

/// Mean joint loss over a set of agents with parameter gradients.
pub fn joint_loss_and_gradient(
    m: &JointModels<'_>,
    bases: &[Vec<f64>],
    targets: &[SampleTarget<'_>],
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check_dim(bases.len(), targets.len())?;
    if bases.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut scratch = JointScratch::new(m);
    let mut gg = vec![0.0; m.g.num_params()];
    let mut gs = vec![0.0; m.sigma.num_params()];
    let mut loss = 0.0;
    for (b, t) in bases.iter().zip(targets) {
        loss += joint_sample_gradient(m, b, *t, &mut scratch, &mut gg, &mut gs)?;
    }
    let n = bases.len() as f64;
    gg.iter_mut().chain(gs.iter_mut()).for_each(|v| *v /= n);
    Ok((loss / n, gg, gs))
}

/// Normalizer for regression losses: the mean base outcome of the
/// pretraining agents.
pub fn normalizer(task: Task, base_outcomes: &[f64]) -> Result<f64> {
    match task {
        Task::Classification => Ok(1.0),
        Task::Regression => {
            let nc = base_outcomes.iter().sum::<f64>() / base_outcomes.len().max(1) as f64;
            if nc == 0.0 || !nc.is_finite() {
                Err(Error::Normalization)
            } else {
                Ok(nc)
            }
        }
    }
}

/// Everything shared by the arms of one experiment.
#[derive(Debug, Clone)]
pub struct Setup {
    pub pretrained: Pretrained,
    pub xi: ComplianceFit,
    pub nc: f64,
}

/// Pretraining on agents at their base covariates, then the compliance
/// dataset and predictor.
pub fn prepare(env: &dyn Environment, cfg: &RrmConfig, seed: u64) -> Result<Setup> {
    let agents = env.agents(Phase::Pretrain, cfg.pretrain)?;
    let xs: Vec<Vec<f64>> = agents.iter().map(|a| a.base.to_vec()).collect();
    let ys = agents
        .iter()
        .enumerate()
        .map(|(t, a)| env.outcome(a, &a.base, Phase::Pretrain, t))
        .collect::<Result<Vec<_>>>()?;
    let nc = normalizer(env.task(), &ys)?;
    let pretrained = pretrain(&xs, &ys, env.task(), cfg, seed)?;
    let sampler = Sampler {
        policy: &pretrained.sigma,
        variance: cfg.sampler_variance,
        constraints: env.constraints(),
        ce: cfg.ce.clone(),
    };
    let agents = env.agents(Phase::Compliance, cfg.compliance)?;
    let samples = collect_compliance(&agents, &pretrained.g, env.benefit(), &sampler, seed)?;
    let xi = train_compliance(&samples, None, cfg, seed)?;
    Ok(Setup { pretrained, xi, nc })
}

fn abort(state: RrmState, error: Error) -> Box<Aborted> {
    Box::new(Aborted { state, error })
}

/// Joint training of `g` and the recommendation policy through the frozen
/// compliance predictor.
pub fn rrm_joint(env: &dyn Environment, setup: &Setup, cfg: &RrmConfig, seed: u64) -> std::result::Result<RrmState, Box<Aborted>> {
    let task = env.task();
    let xi = setup.xi.predictor.clone();
    let mut state = RrmState {
        arm: "joint-opt".into(),
        g: setup.pretrained.g.clone(),
        sigma: Some(setup.pretrained.sigma.clone()),
        xi: Some(xi.clone()),
        lambda: None,
        log: Vec::new(),
    };
    for i in 0..cfg.iterations {
        let start = Instant::now();
        let mut g = state.g.clone();
        let mut sigma = state.sigma.clone().expect("joint state has a policy");
        let deployed = match deploy(env, &g, &Policy::Joint(&sigma), Phase::Deploy(i), cfg.batch_size(i)) {
            Ok(d) => d,
            Err(e) => return Err(abort(state, e)),
        };
        let loss = task_loss(&g, &deployed.responses, &deployed.outcomes, task, setup.nc);
        let compliance = deployed.compliance();
        let (loss, compliance) = match (loss, compliance) {
            (Ok(l), Ok(c)) => (l, c),
            (Err(e), _) | (_, Err(e)) => return Err(abort(state, e)),
        };
        let mut og = Optimizer::new(cfg.optimizer, g.num_params());
        let mut os = Optimizer::new(cfg.optimizer, sigma.num_params());
        let mut gg = vec![0.0; g.num_params()];
        let mut gs = vec![0.0; sigma.num_params()];
        let n = deployed.bases.len();
        let targets: Vec<SampleTarget<'_>> = match cfg.joint_target {
            JointTarget::Observed => deployed.outcomes.iter().map(|y| SampleTarget::Observed(*y)).collect(),
            JointTarget::Expected => deployed.agents.iter().map(|agent| SampleTarget::Expected { env, agent }).collect(),
        };
        for step in 0..cfg.inner_steps {
            gg.iter_mut().for_each(|v| *v = 0.0);
            gs.iter_mut().for_each(|v| *v = 0.0);
            let batch = minibatch_indices(n, cfg.minibatch, seed, Phase::Deploy(i).round(), step);
            let models = JointModels {
                g: &g,
                sigma: &sigma,
                xi: &xi,
                constraints: env.constraints(),
                task,
                blend: cfg.blend,
            };
            let mut scratch = JointScratch::new(&models);
            let mut l = 0.0;
            for &t in &batch {
                match joint_sample_gradient(&models, &deployed.bases[t], targets[t], &mut scratch, &mut gg, &mut gs) {
                    Ok(v) => l += v,
                    Err(e) => return Err(abort(state, e)),
                }
            }
            let scale = 1.0 / batch.len() as f64;
            gg.iter_mut().chain(gs.iter_mut()).for_each(|v| *v *= scale);
            let stepped = if l.is_finite() {
                og.step(g.params_mut(), &gg).and_then(|_| os.step(sigma.params_mut(), &gs))
            } else {
                Err(Error::NonFinite("joint loss"))
            };
            if let Err(e) = stepped {
                return Err(abort(
                    state,
                    Error::Divergence {
                        iteration: i,
                        context: format!("joint update step {step}: {e}"),
                    },
                ));
            }
        }
        let models = JointModels {
            g: &g,
            sigma: &sigma,
            xi: &xi,
            constraints: env.constraints(),
            task,
            blend: cfg.blend,
        };
        let fitted = match joint_loss_and_gradient(&models, &deployed.bases, &targets) {
            Ok((l, _, _)) => l,
            Err(e) => return Err(abort(state, e)),
        };
        let fitted = if task == Task::Regression { fitted / setup.nc } else { fitted };
        state.g = g;
        state.sigma = Some(sigma);
        state.log.push(IterationLog {
            iteration: i + 1,
            loss,
            fitted_loss: fitted,
            compliance,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(state)
}

/// Plain retraining of `g` on the responses induced by counterfactual
/// recommendations with fixed weight `lambda`, recomputed from the current
/// model at every deployment.
pub fn rrm_fixed_ce(env: &dyn Environment, setup: &Setup, cfg: &RrmConfig, lambda: f64, seed: u64) -> std::result::Result<RrmState, Box<Aborted>> {
    let task = env.task();
    let mut state = RrmState {
        arm: format!("ce-lambda-{lambda}"),
        g: setup.pretrained.g.clone(),
        sigma: None,
        xi: None,
        lambda: Some(lambda),
        log: Vec::new(),
    };
    if !(lambda > 0.0) {
        return Err(abort(state, Error::config("rrm.lambdas", "lambda must be positive")));
    }
    for i in 0..cfg.iterations {
        let start = Instant::now();
        let policy = Policy::Counterfactual {
            lambda,
            options: &cfg.ce,
        };
        let deployed = match deploy(env, &state.g, &policy, Phase::Deploy(i), cfg.batch_size(i)) {
            Ok(d) => d,
            Err(e) => return Err(abort(state, e)),
        };
        let stats = task_loss(&state.g, &deployed.responses, &deployed.outcomes, task, setup.nc).and_then(|l| Ok((l, deployed.compliance()?)));
        let (loss, compliance) = match stats {
            Ok(v) => v,
            Err(e) => return Err(abort(state, e)),
        };
        let mut g = state.g.clone();
        let xs = &deployed.responses;
        let ys = &deployed.outcomes;
        let mut d_in = vec![0.0; g.input_dim()];
        let fit = fit_network(&mut g, xs.len(), cfg.inner_steps, cfg.minibatch, cfg.optimizer, seed, Phase::Deploy(i).round(), "retraining g", |net, t, cache, grad| {
            let raw = net.forward_cached(&xs[t], cache)[0];
            let (l, dl) = pointwise(task, raw, ys[t]);
            net.backward(cache, &[dl], Some(grad), &mut d_in);
            l
        });
        if let Err(e) = fit {
            let e = match e {
                Error::Divergence { context, .. } => Error::Divergence { iteration: i, context },
                other => other,
            };
            return Err(abort(state, e));
        }
        let fitted = match task_loss(&g, xs, ys, task, setup.nc) {
            Ok(v) => v,
            Err(e) => return Err(abort(state, e)),
        };
        state.g = g;
        state.log.push(IterationLog {
            iteration: i + 1,
            loss,
            fitted_loss: fitted,
            compliance,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(state)
}

/// Held-out strategic evaluation of a trained arm.
#[derive(Debug, Clone, PartialEq)]
pub struct TestMetrics {
    /// Strategic nMSE (regression) or cross-entropy (classification).
    pub strategic_loss: f64,
    /// Loss at the base covariates, without responses.
    pub offline_loss: f64,
    /// Strategic F1 (classification only).
    pub f1: Option<f64>,
    pub compliance: f64,
    pub population: usize,
}

pub fn evaluate(env: &dyn Environment, state: &RrmState, cfg: &RrmConfig) -> Result<TestMetrics> {
    let policy = match (&state.sigma, state.lambda) {
        (Some(s), _) => Policy::Joint(s),
        (None, Some(lambda)) => Policy::Counterfactual {
            lambda,
            options: &cfg.ce,
        },
        (None, None) => return Err(Error::config("arm", "state has neither a policy nor a lambda")),
    };
    let deployed = deploy(env, &state.g, &policy, Phase::Test, cfg.test)?;
    let task = env.task();
    let bases: Vec<DenseVector> = deployed.bases.iter().map(|b| DenseVector::new(b.clone())).collect::<Result<_>>()?;
    let (strategic_loss, offline_loss, f1) = match task {
        Task::Regression => {
            let preds: Vec<f64> = deployed.responses.iter().map(|x| state.g.value(x)).collect();
            let base_preds: Vec<f64> = bases.iter().map(|x| state.g.value(x)).collect();
            (
                metrics::nmse(&preds, &deployed.outcomes, &deployed.base_outcomes)?,
                metrics::nmse(&base_preds, &deployed.base_outcomes, &deployed.base_outcomes)?,
                None,
            )
        }
        Task::Classification => {
            let probs: Vec<f64> = deployed.responses.iter().map(|x| state.g.value(x)).collect();
            let pred: Vec<bool> = probs.iter().map(|p| *p >= 0.5).collect();
            let labels: Vec<bool> = deployed.outcomes.iter().map(|y| *y == 1.0).collect();
            let base_probs: Vec<f64> = bases.iter().map(|x| state.g.value(x)).collect();
            (
                metrics::binary_cross_entropy(&probs, &deployed.outcomes)?,
                metrics::binary_cross_entropy(&base_probs, &deployed.base_outcomes)?,
                Some(metrics::f1_binary(&pred, &labels)?.value),
            )
        }
    };
    Ok(TestMetrics {
        strategic_loss,
        offline_loss,
        f1,
        compliance: deployed.compliance()?,
        population: deployed.bases.len(),
    })
}
