//! Checkers for when a disclosed surrogate can or cannot mislead agents,
//! the adversarial cost construction for violated instances, the no-harm
//! audit, and the recommendation-equivalence construction.
//!
//! All checks quantify over a finite probe domain; reports name it.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::agents::{self, AgentRecord, BenefitSign, SearchBox, SearchOptions, UtilityContext};
use crate::error::{check_dim, Error, Result};
use crate::explain::{Arex, Explanation};
use crate::model::ScalarModel;
use crate::numkit::sobol::sobol_points;
use crate::numkit::DenseVector;

pub const DEFAULT_TOLERANCE: f64 = 1e-9;
/// Utility drops smaller than this are float noise, not harm.
pub const HARM_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProbeDomain {
    /// Evenly spaced 1-D grid, endpoints included.
    Grid { lo: f64, hi: f64, points: usize },
    /// Sobol points mapped into a box.
    Sobol { lo: Vec<f64>, hi: Vec<f64>, points: usize },
    Explicit { points: Vec<Vec<f64>> },
}

impl ProbeDomain {
    pub fn grid(lo: f64, hi: f64, points: usize) -> Self {
        ProbeDomain::Grid { lo, hi, points }
    }

    pub fn dim(&self) -> usize {
        match self {
            ProbeDomain::Grid { .. } => 1,
            ProbeDomain::Sobol { lo, .. } => lo.len(),
            ProbeDomain::Explicit { points } => points.first().map_or(0, |p| p.len()),
        }
    }

    pub fn probes(&self) -> Result<Vec<Vec<f64>>> {
        let pts = match self {
            ProbeDomain::Grid { lo, hi, points } => {
                if !(lo < hi) {
                    return Err(Error::InvalidInterval { lo: *lo, hi: *hi });
                }
                SearchBox::interval(*lo, *hi)?
                    .grid_1d(*points)
                    .into_iter()
                    .take(*points)
                    .map(|v| vec![v])
                    .collect()
            }
            ProbeDomain::Sobol { lo, hi, points } => {
                let b = SearchBox::new(lo.clone(), hi.clone())?;
                sobol_points(b.dim(), *points)?
                    .into_iter()
                    .map(|u| {
                        u.iter()
                            .zip(b.lo.iter().zip(&b.hi))
                            .map(|(t, (l, h))| l + t * (h - l))
                            .collect()
                    })
                    .collect()
            }
            ProbeDomain::Explicit { points } => {
                let d = self.dim();
                if points.iter().any(|p| p.len() != d) {
                    return Err(Error::InvalidDomain("probe points differ in dimension".into()));
                }
                points.clone()
            }
        };
        if pts.is_empty() {
            return Err(Error::InvalidDomain("no probe points".into()));
        }
        Ok(pts)
    }
}

impl fmt::Display for ProbeDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProbeDomain::Grid { lo, hi, points } => write!(f, "grid [{lo}, {hi}] x {points}"),
            ProbeDomain::Sobol { lo, hi, points } => write!(f, "sobol {lo:?}..{hi:?} x {points}"),
            ProbeDomain::Explicit { points } => write!(f, "explicit x {}", points.len()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    HoldsOnDomain,
    Violated,
}

/// A probe where the surrogate overstates the gain: `lhs > rhs`, with
/// `lhs = f(base) - f(x)` and `rhs = g(base) - g(x)` in the lower-is-better
/// orientation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub x: Vec<f64>,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: String,
    pub verdict: Verdict,
    pub witness: Option<Witness>,
    pub domain: String,
    pub probes: usize,
    /// Probes where the inequality was evaluated.
    pub checked: usize,
    pub tolerance: f64,
}

impl fmt::Display for ConditionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = match self.verdict {
            Verdict::HoldsOnDomain => "holds-on-domain",
            Verdict::Violated => "violated",
        };
        writeln!(f, "condition: {}", self.condition)?;
        writeln!(f, "verdict: {verdict}")?;
        writeln!(f, "domain: {}", self.domain)?;
        writeln!(f, "probes: {}", self.probes)?;
        writeln!(f, "checked: {}", self.checked)?;
        writeln!(f, "tolerance: {:e}", self.tolerance)?;
        if let Some(w) = &self.witness {
            let x: Vec<String> = w.x.iter().map(|v| format!("{v:?}")).collect();
            writeln!(f, "witness: {}", x.join(" "))?;
            writeln!(f, "lhs: {:?}", w.lhs)?;
            writeln!(f, "rhs: {:?}", w.rhs)?;
        }
        Ok(())
    }
}

/// Score in the lower-is-better orientation.
fn score(benefit: BenefitSign, v: f64) -> f64 {
    -benefit.benefit(v)
}

struct Probe {
    x: Vec<f64>,
    lhs: f64,
    rhs: f64,
}

fn evaluate(
    g: &dyn ScalarModel,
    f: &dyn ScalarModel,
    base: &[f64],
    benefit: BenefitSign,
    domain: &ProbeDomain,
) -> Result<(Vec<Probe>, usize)> {
    check_dim(g.dim(), base.len())?;
    check_dim(f.dim(), base.len())?;
    check_dim(domain.dim(), base.len())?;
    let pts = domain.probes()?;
    let n = pts.len();
    let (gb, fb) = (score(benefit, g.value(base)), score(benefit, f.value(base)));
    let probes = pts
        .into_iter()
        .map(|x| {
            let lhs = fb - score(benefit, f.value(&x));
            let rhs = gb - score(benefit, g.value(&x));
            Probe { x, lhs, rhs }
        })
        .collect();
    Ok((probes, n))
}

fn report<'a>(
    name: &str,
    probes: impl Iterator<Item = &'a Probe>,
    n: usize,
    domain: &ProbeDomain,
    tol: f64,
) -> ConditionReport {
    let mut checked = 0;
    let mut worst: Option<&Probe> = None;
    for p in probes {
        checked += 1;
        let gap = p.lhs - p.rhs;
        if gap > tol && worst.is_none_or(|w| gap > w.lhs - w.rhs) {
            worst = Some(p);
        }
    }
    ConditionReport {
        condition: name.to_string(),
        verdict: if worst.is_some() {
            Verdict::Violated
        } else {
            Verdict::HoldsOnDomain
        },
        witness: worst.map(|p| Witness {
            x: p.x.clone(),
            lhs: p.lhs,
            rhs: p.rhs,
        }),
        domain: domain.to_string(),
        probes: n,
        checked,
        tolerance: tol,
    }
}

/// `f(base) - f(x) <= g(base) - g(x)` on probes with `g(x) < g(base)`
/// (scores oriented so that lower is better).
pub fn check_necessary(
    g: &dyn ScalarModel,
    f: &dyn ScalarModel,
    base: &[f64],
    benefit: BenefitSign,
    domain: &ProbeDomain,
    tol: f64,
) -> Result<ConditionReport> {
    let (probes, n) = evaluate(g, f, base, benefit, domain)?;
    Ok(report("necessary", probes.iter().filter(|p| p.rhs > 0.0), n, domain, tol))
}

/// The same inequality on every probe.
pub fn check_sufficient(
    g: &dyn ScalarModel,
    f: &dyn ScalarModel,
    base: &[f64],
    benefit: BenefitSign,
    domain: &ProbeDomain,
    tol: f64,
) -> Result<ConditionReport> {
    let (probes, n) = evaluate(g, f, base, benefit, domain)?;
    Ok(report("sufficient", probes.iter(), n, domain, tol))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEntry {
    pub x: Vec<f64>,
    pub cost: f64,
    pub lower_set: bool,
}

/// A cost over the probe set under which the surrogate misleads the agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmfulCostWitness {
    pub base: Vec<f64>,
    pub x_star: Vec<f64>,
    pub cost_star: f64,
    /// `g(base) - g(x_star)` and `f(base) - f(x_star)`: the open interval
    /// containing `cost_star`.
    pub interval: (f64, f64),
    pub margin: f64,
    pub outside_cost: f64,
    pub table: Vec<CostEntry>,
}

impl HarmfulCostWitness {
    pub fn cost(&self, x: &[f64]) -> Option<f64> {
        if x == self.base.as_slice() {
            return Some(0.0);
        }
        self.table.iter().find(|e| e.x == x).map(|e| e.cost)
    }

    /// Surrogate best response restricted to the probes and the base point.
    /// Ties go to the earlier probe; the base point is considered first.
    pub fn best_response(&self, f: &dyn ScalarModel, benefit: BenefitSign) -> Vec<f64> {
        let mut best = (self.base.clone(), benefit.benefit(f.value(&self.base)));
        for e in &self.table {
            let u = benefit.benefit(f.value(&e.x)) - e.cost;
            if u > best.1 {
                best = (e.x.clone(), u);
            }
        }
        best.0
    }

    /// True-utility change of [`best_response`](Self::best_response).
    pub fn utility_change(&self, g: &dyn ScalarModel, f: &dyn ScalarModel, benefit: BenefitSign) -> f64 {
        let x = self.best_response(f, benefit);
        let c = self.cost(&x).unwrap_or(0.0);
        benefit.benefit(g.value(&x)) - c - benefit.benefit(g.value(&self.base))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_witness_csv(Some(self), w)
    }
}

/// Probe table of a harmful cost; only the header when there is none.
pub fn write_witness_csv<W: Write>(witness: Option<&HarmfulCostWitness>, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["x", "cost", "lower_set", "is_witness"])?;
    if let Some(wit) = witness {
        for e in &wit.table {
            let x: Vec<String> = e.x.iter().map(|v| format!("{v:?}")).collect();
            out.write_record([
                x.join(" "),
                format!("{:?}", e.cost),
                e.lower_set.to_string(),
                (e.x == wit.x_star).to_string(),
            ])?;
        }
    }
    out.flush().map_err(|e| Error::io("witness", e))?;
    Ok(())
}

/// Builds a cost that makes the maximal necessary-condition violation the
/// agent's surrogate best response while lowering its true utility.
/// Returns `None` when the condition holds on the domain.
pub fn construct_harmful_cost(
    g: &dyn ScalarModel,
    f: &dyn ScalarModel,
    base: &[f64],
    benefit: BenefitSign,
    domain: &ProbeDomain,
    tol: f64,
) -> Result<Option<HarmfulCostWitness>> {
    let rep = check_necessary(g, f, base, benefit, domain, tol)?;
    let Some(w) = rep.witness else {
        return Ok(None);
    };
    let (gap_g, gap_f) = (w.rhs, w.lhs);
    let cost_star = 0.5 * (gap_g + gap_f);
    if !(0.0 < gap_g && gap_g < cost_star && cost_star < gap_f) {
        return Err(Error::ConstructionFailed(format!(
            "empty interval ({gap_g}, {gap_f})"
        )));
    }
    // Any positive margin breaks ties in favour of the witness.
    let margin = 0.5 * (gap_f - gap_g);
    let f_star = score(benefit, f.value(&w.x));
    let (g_base, pts) = (score(benefit, g.value(base)), domain.probes()?);
    let mut table = Vec::with_capacity(pts.len());
    for x in pts {
        if x.as_slice() == base {
            continue;
        }
        let lower_set = score(benefit, g.value(&x)) < g_base;
        let cost = if x == w.x {
            cost_star
        } else if lower_set {
            let d = f_star - score(benefit, f.value(&x));
            cost_star + d + d.abs() + margin
        } else {
            f64::NAN
        };
        table.push(CostEntry { x, cost, lower_set });
    }
    let max_cost = table
        .iter()
        .filter(|e| e.lower_set)
        .map(|e| e.cost)
        .fold(cost_star, f64::max);
    let outside_cost = 1.0 + 2.0 * max_cost;
    for e in table.iter_mut().filter(|e| !e.lower_set) {
        e.cost = outside_cost;
    }
    let witness = HarmfulCostWitness {
        base: base.to_vec(),
        x_star: w.x,
        cost_star,
        interval: (gap_g, gap_f),
        margin,
        outside_cost,
        table,
    };
    verify_witness(&witness, f, benefit)?;
    Ok(Some(witness))
}

/// The three defining inequalities, checked on every probe.
fn verify_witness(w: &HarmfulCostWitness, f: &dyn ScalarModel, benefit: BenefitSign) -> Result<()> {
    let (gap_g, gap_f) = w.interval;
    if !(0.0 < gap_g && gap_g < w.cost_star) {
        return Err(Error::ConstructionFailed("cost does not exceed the true gain".into()));
    }
    if !(w.cost_star < gap_f) {
        return Err(Error::ConstructionFailed("cost exceeds the surrogate gain".into()));
    }
    let f_star = score(benefit, f.value(&w.x_star));
    for e in w.table.iter().filter(|e| e.lower_set) {
        let lhs = f_star + w.cost_star;
        let rhs = score(benefit, f.value(&e.x)) + e.cost;
        if lhs > rhs {
            return Err(Error::ConstructionFailed(format!(
                "probe {:?} beats the witness under the surrogate",
                e.x
            )));
        }
        if !(e.cost > 0.0) {
            return Err(Error::ConstructionFailed(format!("non-positive cost at {:?}", e.x)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub agent: usize,
    pub u_before: f64,
    pub u_after: f64,
    pub delta: f64,
    pub harmed: bool,
    pub response: Vec<f64>,
}

/// Responds every agent to its explanation and records the exact change in
/// true utility. `explain` maps `(index, agent)` to the agent's explanation.
pub fn audit_no_harm<E>(
    ctx: &UtilityContext<'_>,
    population: &[AgentRecord],
    explain: E,
    domain: &SearchBox,
    opts: &SearchOptions,
) -> Result<Vec<AuditRow>>
where
    E: Fn(usize, &AgentRecord) -> Result<Explanation>,
{
    population
        .iter()
        .enumerate()
        .map(|(i, agent)| {
            let e = explain(i, agent)?;
            let mut o = opts.clone();
            o.stream = i as u64;
            let x = agents::respond(agent, ctx, &e, domain, &o)?;
            let before = agents::true_utility(ctx, agent, &agent.base)?.to_f64();
            let after = agents::true_utility(ctx, agent, &x)?.to_f64();
            let delta = after - before;
            Ok(AuditRow {
                agent: i,
                u_before: before,
                u_after: after,
                delta,
                harmed: !(delta >= -HARM_SLACK),
                response: x.into_inner(),
            })
        })
        .collect()
}

pub fn harmed_fraction(rows: &[AuditRow]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter().filter(|r| r.harmed).count() as f64 / rows.len() as f64
}

/// One row per agent and arm: base, response and the utility change.
pub fn write_audit_csv<W: Write>(arms: &[(&str, &[AuditRow])], population: &[AgentRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["arm", "agent", "base", "response", "u_before", "u_after", "delta_u", "harmed"])?;
    let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
    for (arm, rows) in arms {
        for r in *rows {
            let base = population.get(r.agent).map(|a| join(a.base.as_slice())).unwrap_or_default();
            out.write_record([
                arm.to_string(),
                r.agent.to_string(),
                base,
                join(&r.response),
                format!("{:?}", r.u_before),
                format!("{:?}", r.u_after),
                format!("{:?}", r.delta),
                r.harmed.to_string(),
            ])?;
        }
    }
    out.flush().map_err(|e| Error::io("audit", e))?;
    Ok(())
}

/// The recommendation that reproduces a non-harmful induced response for a
/// homogeneous group of agents.
pub fn arex_equivalence(
    g: &dyn ScalarModel,
    benefit: BenefitSign,
    group: &[AgentRecord],
    induced: &DenseVector,
) -> Result<Arex> {
    let ctx = UtilityContext::new(g, benefit);
    for (i, agent) in group.iter().enumerate() {
        let after = agents::true_utility(&ctx, agent, induced)?;
        let before = agents::true_utility(&ctx, agent, &agent.base)?;
        if !(after >= before) {
            return Err(Error::NotNonHarmful {
                agent: i,
                response: after.to_f64(),
                base: before.to_f64(),
            });
        }
    }
    Arex::disclose(g, induced.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{CostSpec, ReactionKind};
    use crate::numkit::Expr;

    fn expr(s: &str) -> Expr {
        Expr::parse(s).unwrap()
    }

    #[test]
    fn identical_surrogate_holds() {
        let g = expr("x^4 - x^2 + 1");
        let d = ProbeDomain::grid(-3.0, 3.0, 2001);
        for check in [check_necessary, check_sufficient] {
            let r = check(&g, &g, &[0.4], BenefitSign::Lower, &d, DEFAULT_TOLERANCE).unwrap();
            assert_eq!(r.verdict, Verdict::HoldsOnDomain);
            assert!(r.witness.is_none());
        }
    }

    #[test]
    fn tangent_is_violated_at_two() {
        let (g, f) = (expr("x^2"), expr("10*x - 25"));
        let d = ProbeDomain::Explicit {
            points: vec![vec![2.0]],
        };
        let r = check_necessary(&g, &f, &[5.0], BenefitSign::Lower, &d, DEFAULT_TOLERANCE).unwrap();
        assert_eq!(r.verdict, Verdict::Violated);
        let w = r.witness.unwrap();
        assert_eq!((w.x[0], w.lhs, w.rhs), (2.0, 30.0, 21.0));
        let d = ProbeDomain::grid(0.0, 10.0, 2001);
        let r = check_sufficient(&g, &f, &[5.0], BenefitSign::Lower, &d, DEFAULT_TOLERANCE).unwrap();
        assert_eq!(r.verdict, Verdict::Violated);
    }

    /// `g + kappa` everywhere except at the base, where it equals `g`.
    struct Raised {
        base: f64,
        kappa: f64,
    }

    impl ScalarModel for Raised {
        fn dim(&self) -> usize {
            1
        }
        fn value(&self, x: &[f64]) -> f64 {
            x[0] * x[0] + if x[0] == self.base { 0.0 } else { self.kappa }
        }
        fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
            (self.value(x), vec![2.0 * x[0]])
        }
    }

    #[test]
    fn raised_surrogate_holds() {
        let g = expr("x^2");
        let f = Raised { base: 3.0, kappa: 0.5 };
        let d = ProbeDomain::Explicit {
            points: vec![vec![-2.0], vec![-1.0], vec![0.0], vec![1.0], vec![2.0]],
        };
        let r = check_necessary(&g, &f, &[3.0], BenefitSign::Lower, &d, DEFAULT_TOLERANCE).unwrap();
        assert_eq!(r.verdict, Verdict::HoldsOnDomain);
        assert_eq!(r.checked, 5);
    }

    #[test]
    fn constant_surrogate_is_sufficient_when_base_is_worst() {
        let g = expr("0 - x^2");
        let f = expr("0*x + 7");
        let d = ProbeDomain::grid(-1.0, 1.0, 101);
        let r = check_sufficient(&g, &f, &[0.0], BenefitSign::Lower, &d, DEFAULT_TOLERANCE).unwrap();
        assert_eq!(r.verdict, Verdict::HoldsOnDomain);
    }

    #[test]
    fn empty_domain_is_rejected() {
        let g = expr("x");
        let d = ProbeDomain::Explicit { points: vec![] };
        assert!(matches!(
            check_necessary(&g, &g, &[0.0], BenefitSign::Lower, &d, DEFAULT_TOLERANCE),
            Err(Error::InvalidDomain(_)) | Err(Error::InputShape { .. })
        ));
    }

    #[test]
    fn harmful_cost_for_tangent() {
        let (g, f) = (expr("x^2"), expr("10*x - 25"));
        let d = ProbeDomain::grid(0.0, 10.0, 2001);
        let w = construct_harmful_cost(&g, &f, &[5.0], BenefitSign::Lower, &d, DEFAULT_TOLERANCE)
            .unwrap()
            .unwrap();
        // The grid's maximal violation is at the far end of the lower set.
        let expected = {
            let r = check_necessary(&g, &f, &[5.0], BenefitSign::Lower, &d, DEFAULT_TOLERANCE).unwrap();
            r.witness.unwrap().x
        };
        assert_eq!(w.x_star, expected);
        assert_eq!(w.best_response(&f, BenefitSign::Lower), w.x_star);
        assert!(w.utility_change(&g, &f, BenefitSign::Lower) < 0.0);
        let single = ProbeDomain::Explicit {
            points: vec![vec![2.0]],
        };
        let w = construct_harmful_cost(&g, &f, &[5.0], BenefitSign::Lower, &single, DEFAULT_TOLERANCE)
            .unwrap()
            .unwrap();
        assert_eq!((w.x_star.clone(), w.cost_star), (vec![2.0], 25.5));
        assert_eq!(w.interval, (21.0, 30.0));
        assert!(w.utility_change(&g, &f, BenefitSign::Lower) < 0.0);
        assert!(construct_harmful_cost(&g, &g, &[5.0], BenefitSign::Lower, &d, DEFAULT_TOLERANCE)
            .unwrap()
            .is_none());
    }

    #[test]
    fn equivalence_reproduces_response() {
        let g = expr("x^2");
        let agent = AgentRecord {
            base: DenseVector::scalar(3.0).unwrap(),
            z: 0.0,
            cost: CostSpec::QuadraticL2 { alpha: 0.5 },
            reaction: ReactionKind::ArexChooser,
        };
        let group = vec![agent.clone(); 10];
        let ctx = UtilityContext::new(&g, BenefitSign::Lower);
        let target = DenseVector::scalar(2.0).unwrap();
        let rec = arex_equivalence(&g, BenefitSign::Lower, &group, &target).unwrap();
        for a in &group {
            assert!(agents::arex_response(a, &ctx, &rec).unwrap().bitwise_eq(&target));
        }
        let stay = arex_equivalence(&g, BenefitSign::Lower, &group, &agent.base).unwrap();
        assert!(agents::arex_response(&agent, &ctx, &stay).unwrap().bitwise_eq(&agent.base));
        let harmful = DenseVector::scalar(-4.0).unwrap();
        assert!(matches!(
            arex_equivalence(&g, BenefitSign::Lower, &group, &harmful),
            Err(Error::NotNonHarmful { agent: 0, .. })
        ));
    }
}
