use std::fmt::Write as _;
use std::time::Instant;

use arex::agents::{
    surrogate_best_response, true_utility, AgentRecord, BenefitSign, CostPiece, CostSpec, ReactionKind, SearchBox,
    SearchOptions, UtilityContext,
};
use arex::dataio::{ExperimentConfig, SurrogateSpec};
use arex::explain::{shapley_two_feature, taylor_surrogate, Surrogate};
use arex::numkit::{DenseVector, Expr};
use arex::theory::{
    check_necessary, check_sufficient, construct_harmful_cost, write_witness_csv, ConditionReport, HarmfulCostWitness,
    ProbeDomain, DEFAULT_TOLERANCE,
};
use arex::{Error, Result};

use crate::{Body, Outputs, Timing};

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub surrogate: Surrogate,
    pub necessary: ConditionReport,
    pub sufficient: ConditionReport,
    /// Present when the necessary condition is violated.
    pub witness: Option<HarmfulCostWitness>,
    /// True-utility change of the misled agent under the constructed cost.
    pub harm: Option<f64>,
}

fn surrogate(cfg: &ExperimentConfig) -> Result<Surrogate> {
    let c = &cfg.check;
    Ok(match &c.surrogate {
        SurrogateSpec::Taylor { order } => Surrogate::Taylor(taylor_surrogate(&c.model, &c.base, *order)?),
        SurrogateSpec::Expr { expr } => Surrogate::Expr { expr: expr.clone() },
    })
}

/// Both conditions for the configured model and surrogate, and the harmful
/// cost when the necessary one fails.
pub fn run_check(cfg: &ExperimentConfig) -> Result<CheckOutcome> {
    let c = &cfg.check;
    let f = surrogate(cfg)?;
    let necessary = check_necessary(&c.model, &f, &c.base, c.benefit, &c.domain, c.tolerance)?;
    let sufficient = check_sufficient(&c.model, &f, &c.base, c.benefit, &c.domain, c.tolerance)?;
    let witness = construct_harmful_cost(&c.model, &f, &c.base, c.benefit, &c.domain, c.tolerance)?;
    let harm = witness.as_ref().map(|w| w.utility_change(&c.model, &f, c.benefit));
    Ok(CheckOutcome {
        surrogate: f,
        necessary,
        sufficient,
        witness,
        harm,
    })
}

pub(crate) fn command(cfg: &ExperimentConfig, out: &mut Outputs<'_>) -> Result<Body> {
    let start = Instant::now();
    let r = run_check(cfg)?;
    let seconds = start.elapsed().as_secs_f64();
    let mut text = String::new();
    let _ = writeln!(text, "model: {}", cfg.check.model);
    let _ = writeln!(text, "base: {:?}", cfg.check.base);
    let _ = writeln!(text, "surrogate: {}\n", surrogate_text(&r.surrogate));
    let _ = writeln!(text, "{}", r.necessary);
    let _ = writeln!(text, "{}", r.sufficient);
    match (&r.witness, r.harm) {
        (Some(w), Some(harm)) => {
            let _ = writeln!(text, "harmful cost");
            let _ = writeln!(text, "x_star: {:?}", w.x_star);
            let _ = writeln!(text, "cost_star: {:?}", w.cost_star);
            let _ = writeln!(text, "interval: ({:?}, {:?})", w.interval.0, w.interval.1);
            let _ = writeln!(text, "margin: {:?}", w.margin);
            let _ = writeln!(text, "utility change of the misled agent: {harm:?}");
        }
        _ => {
            let _ = writeln!(text, "harmful cost: none (necessary condition holds on the domain)");
        }
    }
    out.write("condition_report.txt", text.as_bytes())?;
    out.write_with("witness.csv", |buf| write_witness_csv(r.witness.as_ref(), buf))?;
    Ok(Body {
        failed: Vec::new(),
        timings: vec![Timing::new("check", seconds)],
        summary: text,
    })
}

fn surrogate_text(s: &Surrogate) -> String {
    match s {
        Surrogate::Taylor(t) => {
            let order = if t.hessian.is_some() { 2 } else { 1 };
            format!("order-{order} expansion at {:?}", t.center)
        }
        Surrogate::Expr { expr } => expr.to_string(),
    }
}

/// The misleading-tangent example worked end to end.
#[derive(Debug, Clone, PartialEq)]
pub struct Walkthrough {
    /// Shapley value of feature 2 at `(16, 4)` for `X2 ~ U([2, 5])` and `U([2, 8])`.
    pub shapley: [f64; 2],
    pub best_response: f64,
    pub u_base: f64,
    pub u_response: f64,
    /// Surrogate and model gains at the best response.
    pub lhs: f64,
    pub rhs: f64,
    pub cost_star: f64,
}

/// Agent at 5 facing `g(x) = x^2` (lower is better), shown the tangent
/// `10x - 25`, with a piecewise cost that makes the tangent's promise look
/// worth paying for.
pub fn misled_agent() -> Result<AgentRecord> {
    let piece = |lo, hi, e: &str| -> Result<CostPiece> {
        Ok(CostPiece {
            lo,
            hi,
            expr: Expr::parse(e)?,
        })
    };
    Ok(AgentRecord {
        base: DenseVector::scalar(5.0)?,
        z: 0.0,
        cost: CostSpec::PiecewiseScalar {
            pieces: vec![
                piece(None, Some(-3.0), "3*x^2")?,
                piece(Some(-3.0), Some(0.0), "-9*x")?,
                piece(Some(0.0), None, "9*x")?,
            ],
        },
        reaction: ReactionKind::SurrogateBestResponder,
    })
}

pub fn tangent_walkthrough() -> Result<Walkthrough> {
    let shapley = [
        shapley_two_feature([16.0, 4.0], 2.0, 5.0, 0.0)?,
        shapley_two_feature([16.0, 4.0], 2.0, 8.0, 0.0)?,
    ];
    let g = Expr::parse("x^2")?;
    let f = taylor_surrogate(&g, &[5.0], 1)?;
    let agent = misled_agent()?;
    let benefit = BenefitSign::Lower;
    let domain = SearchBox::interval(0.0, 10.0)?;
    let br = surrogate_best_response(&agent, &f, benefit, &domain, &SearchOptions::default())?;
    let ctx = UtilityContext::new(&g, benefit);
    let finite = |x: &[f64]| -> Result<f64> {
        true_utility(&ctx, &agent, x)?
            .finite()
            .ok_or_else(|| Error::Numeric(format!("infeasible point {x:?}")))
    };
    let probe = ProbeDomain::Explicit {
        points: vec![br.x.to_vec()],
    };
    let rep = check_necessary(&g, &f, &[5.0], benefit, &probe, DEFAULT_TOLERANCE)?;
    let w = rep
        .witness
        .ok_or_else(|| Error::ConstructionFailed("tangent is not flagged".into()))?;
    let harmful = construct_harmful_cost(&g, &f, &[5.0], benefit, &probe, DEFAULT_TOLERANCE)?
        .ok_or_else(|| Error::ConstructionFailed("no harmful cost for the tangent".into()))?;
    Ok(Walkthrough {
        shapley,
        best_response: br.x[0],
        u_base: finite(&[5.0])?,
        u_response: finite(br.x.as_slice())?,
        lhs: w.lhs,
        rhs: w.rhs,
        cost_star: harmful.cost_star,
    })
}

/// Prints the worked examples to `w`.
pub fn print_examples<W: std::io::Write>(mut w: W) -> Result<Walkthrough> {
    let ex = tangent_walkthrough()?;
    let text = format!(
        "Shapley value of feature 2 for g(x) = x1 - x2^2 at (16, 4):\n\
         \x20 X2 ~ U([2, 5]): {}\n\
         \x20 X2 ~ U([2, 8]): {}\n\
         \n\
         Tangent disclosure: g(x) = x^2, base 5, surrogate 10x - 25, piecewise cost\n\
         \x20 surrogate best response: {}\n\
         \x20 true utility at base: {}\n\
         \x20 true utility after responding: {}\n\
         \x20 utility change: {}\n\
         \x20 necessary condition at x = {}: surrogate gain {} > model gain {} (violated)\n\
         \x20 harmful cost at that point: {}\n",
        ex.shapley[0],
        ex.shapley[1],
        ex.best_response,
        ex.u_base,
        ex.u_response,
        ex.u_response - ex.u_base,
        ex.best_response,
        ex.lhs,
        ex.rhs,
        ex.cost_star,
    );
    w.write_all(text.as_bytes()).map_err(|e| Error::io("stdout", e))?;
    Ok(ex)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn walkthrough_numbers() {
        let ex = tangent_walkthrough().unwrap();
        assert_eq!(ex.shapley, [-3.0, 12.0]);
        assert_eq!(ex.best_response, 2.0);
        assert_eq!((ex.u_base, ex.u_response), (-25.0, -31.0));
        assert_eq!((ex.lhs, ex.rhs), (30.0, 21.0));
        assert_eq!(ex.cost_star, 25.5);
        let mut buf = Vec::new();
        print_examples(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("U([2, 5]): -3\n") && text.contains("U([2, 8]): 12\n"));
        assert!(text.contains("true utility at base: -25\n") && text.contains("after responding: -31\n"));
    }
}
