//! Population generators, tabular credit data, and experiment configuration.

mod config;
mod credit;

pub use config::{
    ArmKind, CheckConfig, CreditConfig, ExperimentConfig, ExperimentKind, JointTarget, NoharmConfig, ResponseBlend,
    RrmConfig,
    SurrogateSpec, SyntheticConfig,
};
pub use credit::{
    bootstrap_augment, bootstrap_sample, fit_outcome_simulator, load_credit, parse_credit, ColumnKind,
    SimulatorFit, TabularDataset, CREDIT_MODIFIABLE,
};

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};

use crate::agents::{AgentRecord, CostSpec, OutcomeFunction, Population, ReactionKind};
use crate::error::{Error, Result};
use crate::model::QuadraticModel;
use crate::numkit::DenseVector;
use crate::rng::{stream_for, Purpose};

fn normal(mean: f64, sd: f64) -> Result<Normal<f64>> {
    Normal::new(mean, sd).map_err(|e| Error::Numeric(e.to_string()))
}

/// One-dimensional agents with `x ~ N(0, base_sd^2)`, `alpha ~ U(alpha_range)`
/// and quadratic cost. `round` selects an independent batch.
pub fn gen_noharm_population(cfg: &NoharmConfig, seed: u64, round: u64) -> Result<Population> {
    if cfg.agents == 0 {
        return Err(Error::EmptyDataset);
    }
    let base = normal(0.0, cfg.base_sd)?;
    let [lo, hi] = cfg.alpha_range;
    let alpha = Uniform::new_inclusive(lo, hi).map_err(|e| Error::Numeric(e.to_string()))?;
    let agents = (0..cfg.agents)
        .map(|t| {
            let mut rng = stream_for(seed, Purpose::Population, round, t as u64);
            let x = base.sample(&mut rng);
            let a = alpha.sample(&mut rng);
            Ok(AgentRecord {
                base: DenseVector::scalar(x)?,
                z: 0.0,
                cost: CostSpec::QuadraticL2 { alpha: a },
                reaction: ReactionKind::SurrogateBestResponder,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Population { agents })
}

/// The same agents with every reaction replaced.
pub fn with_reaction(population: &Population, reaction: ReactionKind) -> Population {
    Population {
        agents: population
            .agents
            .iter()
            .map(|a| AgentRecord {
                reaction: reaction.clone(),
                ..a.clone()
            })
            .collect(),
    }
}

fn synthetic_agent<R: Rng>(cfg: &SyntheticConfig, rng: &mut R) -> Result<AgentRecord> {
    let z = rng.random_range(0..cfg.z_levels) as f64;
    let alpha = normal(cfg.alpha_intercept + cfg.alpha_slope * z, cfg.alpha_sd)?.sample(rng);
    let spread = normal(cfg.mean_offset + z, cfg.base_variance.sqrt())?;
    let base: Vec<f64> = (0..cfg.dim).map(|_| spread.sample(rng)).collect();
    Ok(AgentRecord {
        base: DenseVector::new(base)?,
        z,
        cost: CostSpec::QuadraticL2 {
            alpha: alpha.abs().max(cfg.alpha_floor),
        },
        reaction: ReactionKind::ArexChooser,
    })
}

/// Agents with `z ~ U{0..z_levels-1}`, `alpha | z ~ N(a0 + a1 z, sd^2)` and
/// `x | z ~ N((offset + z) 1, base_variance I)`.
pub fn gen_synthetic_population(cfg: &SyntheticConfig, n: usize, seed: u64, round: u64) -> Result<Population> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let agents = (0..n)
        .map(|t| synthetic_agent(cfg, &mut stream_for(seed, Purpose::Population, round, t as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Population { agents })
}

/// Quadratic outcome over `[x, z]` with standard-normal draws scaled by
/// `coefficient_scale`; the quadratic part is `G'G / d`, so positive semidefinite.
pub fn draw_synthetic_outcome(cfg: &SyntheticConfig, seed: u64) -> Result<OutcomeFunction> {
    let d = cfg.dim + 1;
    let mut rng = stream_for(seed, Purpose::Coefficients, 0, 0);
    let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
    let g: Vec<f64> = (0..d * d).map(|_| draw()).collect();
    let b: Vec<f64> = (0..d).map(|_| cfg.coefficient_scale * draw()).collect();
    let c = cfg.coefficient_scale * draw();
    let mut a = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            a[i * d + j] = cfg.coefficient_scale * (0..d).map(|k| g[k * d + i] * g[k * d + j]).sum::<f64>() / d as f64;
        }
    }
    Ok(OutcomeFunction::Quadratic(QuadraticModel::new(a, b, c)?))
}
