use std::fmt::Write as _;
use std::time::Instant;

use arex::dataio::{load_credit, ArmKind, ExperimentConfig, RrmConfig, SimulatorFit};
use arex::metrics::{write_metric_table, MetricReport, MetricTag};
use arex::train::{
    credit_env, evaluate, prepare, rrm_fixed_ce, rrm_joint, write_loss_curves, Aborted, Environment, RrmState, Setup,
    SyntheticEnv, Task, TestMetrics,
};
use arex::{Error, Result};

use crate::{Body, Outputs, Timing};

/// One trained arm with its held-out evaluation.
#[derive(Debug)]
pub struct ArmOutcome {
    pub name: String,
    /// The final state, or the state at the failing iteration.
    pub state: RrmState,
    pub error: Option<String>,
    pub metrics: Option<TestMetrics>,
    pub seconds: f64,
}

impl ArmOutcome {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug)]
pub struct RrmOutcome {
    pub task: Task,
    pub setup: Setup,
    pub simulator: Option<SimulatorFit>,
    pub arms: Vec<ArmOutcome>,
    pub prepare_seconds: f64,
}

impl RrmOutcome {
    pub fn arm(&self, name: &str) -> Option<&ArmOutcome> {
        self.arms.iter().find(|a| a.name == name)
    }
}

#[derive(Clone, Copy)]
enum ArmSpec {
    Joint,
    Ce(f64),
}

fn arm_specs(cfg: &RrmConfig) -> Vec<ArmSpec> {
    let mut specs = Vec::new();
    for kind in &cfg.arms {
        match kind {
            ArmKind::JointOpt => specs.push(ArmSpec::Joint),
            ArmKind::Ce => specs.extend(cfg.lambdas.iter().map(|l| ArmSpec::Ce(*l))),
        }
    }
    specs
}

fn train_arm(env: &dyn Environment, setup: &Setup, cfg: &RrmConfig, seed: u64, spec: ArmSpec) -> ArmOutcome {
    let start = Instant::now();
    let trained: std::result::Result<RrmState, Box<Aborted>> = match spec {
        ArmSpec::Joint => rrm_joint(env, setup, cfg, seed),
        ArmSpec::Ce(lambda) => rrm_fixed_ce(env, setup, cfg, lambda, seed),
    };
    let (state, mut error) = match trained {
        Ok(s) => (s, None),
        Err(a) => {
            let msg = a.to_string();
            (a.state, Some(msg))
        }
    };
    let mut metrics = None;
    if error.is_none() {
        match evaluate(env, &state, cfg) {
            Ok(m) => metrics = Some(m),
            Err(e) => error = Some(format!("{} evaluation failed: {e}", state.arm)),
        }
    }
    ArmOutcome {
        name: state.arm.clone(),
        state,
        error,
        metrics,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Shared pretraining and compliance model, then every configured arm.
/// Arms run concurrently; each is seeded independently of the others.
pub fn run_rrm(env: &dyn Environment, cfg: &RrmConfig, seed: u64) -> Result<RrmOutcome> {
    let start = Instant::now();
    let setup = prepare(env, cfg, seed)?;
    let prepare_seconds = start.elapsed().as_secs_f64();
    let specs = arm_specs(cfg);
    let arms = std::thread::scope(|s| {
        let handles: Vec<_> = specs
            .iter()
            .map(|spec| {
                let setup = &setup;
                s.spawn(move || train_arm(env, setup, cfg, seed, *spec))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("arm thread panicked")).collect()
    });
    Ok(RrmOutcome {
        task: env.task(),
        setup,
        simulator: None,
        arms,
        prepare_seconds,
    })
}

pub fn run_synthetic_rrm(cfg: &ExperimentConfig) -> Result<RrmOutcome> {
    let env = SyntheticEnv::new(cfg.synthetic.clone(), cfg.seed)?;
    run_rrm(&env, &cfg.rrm, cfg.seed)
}

pub fn run_credit_rrm(cfg: &ExperimentConfig) -> Result<RrmOutcome> {
    let path = cfg
        .credit
        .data
        .as_ref()
        .ok_or_else(|| Error::config("credit.data", "no credit data file given (use --data or credit.data)"))?;
    let data = load_credit(path)?;
    let (env, fit) = credit_env(&data, &cfg.credit, cfg.seed)?;
    let mut outcome = run_rrm(&env, &cfg.rrm, cfg.seed)?;
    outcome.simulator = Some(fit);
    Ok(outcome)
}

fn reports(outcome: &RrmOutcome, seed: u64) -> Vec<MetricReport> {
    let mut out = Vec::new();
    for arm in &outcome.arms {
        let Some(m) = &arm.metrics else { continue };
        let mut push = |name: &str, value: f64, tag: MetricTag| {
            out.push(MetricReport {
                method: arm.name.clone(),
                name: name.to_string(),
                value,
                population: m.population,
                seed,
                tag,
            })
        };
        match outcome.task {
            Task::Regression => {
                push("nmse", m.strategic_loss, MetricTag::Strategic);
                push("nmse", m.offline_loss, MetricTag::Offline);
            }
            Task::Classification => {
                if let Some(f1) = m.f1 {
                    push("f1", f1, MetricTag::Strategic);
                }
                push("bce", m.strategic_loss, MetricTag::Strategic);
                push("bce", m.offline_loss, MetricTag::Offline);
            }
        }
        push("compliance", m.compliance, MetricTag::Strategic);
    }
    out
}

fn table(outcome: &RrmOutcome) -> String {
    let mut t = String::new();
    let (metric, offline) = match outcome.task {
        Task::Regression => ("strategic_nmse", "offline_nmse"),
        Task::Classification => ("strategic_f1", "offline_bce"),
    };
    let _ = writeln!(t, "{:<16} {:>14} {:>14} {:>11}", "arm", metric, offline, "compliance");
    for arm in &outcome.arms {
        match (&arm.metrics, &arm.error) {
            (Some(m), _) => {
                let main = match outcome.task {
                    Task::Regression => m.strategic_loss,
                    Task::Classification => m.f1.unwrap_or(f64::NAN),
                };
                let _ = writeln!(t, "{:<16} {:>14.6e} {:>14.6e} {:>11.4}", arm.name, main, m.offline_loss, m.compliance);
            }
            (None, Some(e)) => {
                let _ = writeln!(t, "{:<16} failed: {e}", arm.name);
            }
            (None, None) => {}
        }
    }
    t
}

fn write_outputs(cfg: &ExperimentConfig, outcome: &RrmOutcome, out: &mut Outputs<'_>) -> Result<Body> {
    let logs: Vec<(&str, &[arex::train::IterationLog])> =
        outcome.arms.iter().map(|a| (a.name.as_str(), a.state.log.as_slice())).collect();
    out.write_with("loss_curves.csv", |buf| write_loss_curves(&logs, buf))?;
    let reports = reports(outcome, cfg.seed);
    out.write_with("test_metrics.csv", |buf| write_metric_table(&reports, buf))?;
    for arm in &outcome.arms {
        out.write(&format!("params/{}/g.txt", arm.name), arm.state.g.to_text().as_bytes())?;
        if let Some(sigma) = &arm.state.sigma {
            out.write(&format!("params/{}/policy.txt", arm.name), sigma.to_text().as_bytes())?;
        }
    }
    out.write("params/compliance_predictor.txt", outcome.setup.xi.predictor.to_text().as_bytes())?;
    if let Some(sim) = &outcome.simulator {
        let json = serde_json::to_string_pretty(&sim.model).map_err(|e| Error::Numeric(e.to_string()))?;
        out.write("params/outcome_simulator.json", format!("{json}\n").as_bytes())?;
    }

    let mut summary = String::new();
    let xi = &outcome.setup.xi;
    if xi.degenerate {
        let _ = writeln!(summary, "warning: compliance labels are all equal; using a constant predictor");
    } else {
        let _ = writeln!(summary, "compliance predictor loss: {:.4} -> {:.4}", xi.initial_loss, xi.final_loss);
    }
    if let Some(sim) = &outcome.simulator {
        let _ = writeln!(summary, "outcome simulator loss: {:.4}", sim.loss);
    }
    summary.push_str(&table(outcome));
    out.write("summary.txt", summary.as_bytes())?;

    let mut timings = vec![Timing::new("prepare", outcome.prepare_seconds)];
    for arm in &outcome.arms {
        timings.push(Timing::new(arm.name.clone(), arm.seconds));
        for l in &arm.state.log {
            timings.push(Timing::new(format!("{}/iteration-{}", arm.name, l.iteration), l.seconds));
        }
    }
    Ok(Body {
        failed: outcome.arms.iter().filter(|a| a.failed()).map(|a| a.name.clone()).collect(),
        timings,
        summary,
    })
}

pub(crate) fn synthetic_command(cfg: &ExperimentConfig, out: &mut Outputs<'_>) -> Result<Body> {
    let outcome = run_synthetic_rrm(cfg)?;
    write_outputs(cfg, &outcome, out)
}

pub(crate) fn credit_command(cfg: &ExperimentConfig, out: &mut Outputs<'_>) -> Result<Body> {
    let outcome = run_credit_rrm(cfg)?;
    write_outputs(cfg, &outcome, out)
}
