use std::fmt::Write as _;
use std::time::Instant;

use arex::agents::{BenefitSign, ReactionKind, SearchBox, SearchOptions, UtilityContext};
use arex::dataio::{gen_noharm_population, with_reaction, ExperimentConfig};
use arex::explain::{random_arex_sample, taylor_surrogate, Explanation, Surrogate};
use arex::rng::{stream_for, Purpose};
use arex::theory::{audit_no_harm, harmed_fraction, write_audit_csv, AuditRow};
use arex::Result;

use crate::{Body, Outputs, Timing};

/// Utility changes of both arms on one population.
#[derive(Debug, Clone)]
pub struct NoharmOutcome {
    pub population: Vec<arex::agents::AgentRecord>,
    pub taylor: Vec<AuditRow>,
    pub arex: Vec<AuditRow>,
}

/// Five-number summary of utility changes plus the harmed count.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilitySummary {
    pub agents: usize,
    pub harmed: usize,
    pub harmed_fraction: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(rows: &[AuditRow]) -> Option<UtilitySummary> {
    if rows.is_empty() {
        return None;
    }
    let mut d: Vec<f64> = rows.iter().map(|r| r.delta).collect();
    d.sort_by(f64::total_cmp);
    Some(UtilitySummary {
        agents: rows.len(),
        harmed: rows.iter().filter(|r| r.harmed).count(),
        harmed_fraction: harmed_fraction(rows),
        min: d[0],
        q1: quantile(&d, 0.25),
        median: quantile(&d, 0.5),
        q3: quantile(&d, 0.75),
        max: d[d.len() - 1],
        mean: d.iter().sum::<f64>() / d.len() as f64,
    })
}

/// Quartic-model population explained by Taylor expansions (agents
/// best-respond to them) and by random recommendations (agents adopt or
/// stay put).
pub fn run_noharm(cfg: &ExperimentConfig) -> Result<NoharmOutcome> {
    let n = &cfg.noharm;
    let g = n.model.clone();
    let population = gen_noharm_population(n, cfg.seed, 0)?;
    let ctx = UtilityContext::new(&g, BenefitSign::Lower);
    let domain = SearchBox::interval(n.search_box[0], n.search_box[1])?;
    let opts = SearchOptions {
        grid_points: n.grid_points,
        seed: cfg.seed,
        ..SearchOptions::default()
    };
    let taylor = audit_no_harm(
        &ctx,
        &population.agents,
        |_, a| Ok(Explanation::Surrogate(Surrogate::Taylor(taylor_surrogate(&g, &a.base, n.taylor_order)?))),
        &domain,
        &opts,
    )?;
    let choosers = with_reaction(&population, ReactionKind::ArexChooser);
    let arex = audit_no_harm(
        &ctx,
        &choosers.agents,
        |i, _| {
            let mut rng = stream_for(cfg.seed, Purpose::Recommendation, 0, i as u64);
            Ok(Explanation::Arex(random_arex_sample(&g, &[n.arex_center], n.arex_variance, &mut rng)?))
        },
        &domain,
        &opts,
    )?;
    Ok(NoharmOutcome {
        population: population.agents,
        taylor,
        arex,
    })
}

pub(crate) fn command(cfg: &ExperimentConfig, out: &mut Outputs<'_>) -> Result<Body> {
    let start = Instant::now();
    let r = run_noharm(cfg)?;
    let seconds = start.elapsed().as_secs_f64();
    let arms: [(&str, &[AuditRow]); 2] = [("taylor", &r.taylor), ("arex", &r.arex)];
    out.write_with("utility_changes.csv", |buf| write_audit_csv(&arms, &r.population, buf))?;
    let mut text = String::new();
    let _ = writeln!(text, "model: {}", cfg.noharm.model);
    let _ = writeln!(text, "agents: {}", r.population.len());
    let _ = writeln!(text, "seed: {}", cfg.seed);
    for (arm, rows) in arms {
        let Some(s) = summarize(rows) else { continue };
        let _ = writeln!(text, "\n[{arm}]");
        let _ = writeln!(text, "harmed: {} of {} ({:.4})", s.harmed, s.agents, s.harmed_fraction);
        let _ = writeln!(text, "delta_u mean: {:.6}", s.mean);
        let _ = writeln!(
            text,
            "delta_u min/q1/median/q3/max: {:.6} / {:.6} / {:.6} / {:.6} / {:.6}",
            s.min, s.q1, s.median, s.q3, s.max
        );
    }
    out.write("summary.txt", text.as_bytes())?;
    Ok(Body {
        failed: Vec::new(),
        timings: vec![Timing::new("noharm", seconds)],
        summary: text,
    })
}
