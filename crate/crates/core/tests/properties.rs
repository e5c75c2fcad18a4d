use proptest::prelude::*;

use arex::agents::{
    arex_response, surrogate_best_response, true_utility, AgentRecord, BenefitSign, Cost, CostPiece, CostSpec,
    ReactionKind, SearchBox, SearchOptions, UtilityContext,
};
use arex::dataio::{gen_noharm_population, gen_synthetic_population, NoharmConfig, SyntheticConfig};
use arex::explain::{counterfactual_explain, taylor2_surrogate, taylor_surrogate, Arex, CeOptions, Constraints};
use arex::metrics::{compliance_rate, f1_binary};
use arex::model::{QuadraticModel, ScalarModel};
use arex::numkit::{DenseVector, Expr};
use arex::theory::{arex_equivalence, construct_harmful_cost, ProbeDomain, DEFAULT_TOLERANCE};

fn benefit() -> impl Strategy<Value = BenefitSign> {
    prop_oneof![Just(BenefitSign::Lower), Just(BenefitSign::Higher)]
}

fn vector(d: usize, r: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-r..r, d)
}

fn quadratic(d: usize) -> impl Strategy<Value = QuadraticModel> {
    (vector(d * d, 1.0), vector(d, 1.0), -1.0..1.0f64).prop_map(move |(raw, b, c)| {
        let mut a = raw;
        for i in 0..d {
            for j in 0..i {
                a[j * d + i] = a[i * d + j];
            }
        }
        QuadraticModel { a, b, c }
    })
}

/// Quadratic model, base point and a second point of the same dimension.
fn model_and_points() -> impl Strategy<Value = (QuadraticModel, Vec<f64>, Vec<f64>)> {
    (1usize..=3).prop_flat_map(|d| (quadratic(d), vector(d, 2.0), vector(d, 2.5)))
}

fn piecewise(a: f64, b: f64) -> CostSpec {
    let piece = |lo, hi, e: String| CostPiece {
        lo,
        hi,
        expr: Expr::parse(&e).unwrap(),
    };
    CostSpec::PiecewiseScalar {
        pieces: vec![
            piece(None, Some(0.0), format!("{a}*x^2")),
            piece(Some(0.0), None, format!("{b}*x")),
        ],
    }
}

/// A cost of the given variant for dimension `d`.
fn cost(variant: u8, d: usize, scale: f64, mask: &[bool]) -> CostSpec {
    match variant {
        0 => CostSpec::QuadraticL2 { alpha: scale },
        1 => CostSpec::WeightedL1 {
            scale,
            modifiable: (0..d).filter(|&i| mask[i]).collect(),
            lower: vec![-2.5; d],
            upper: vec![2.5; d],
        },
        _ => piecewise(scale, 1.0 / scale),
    }
}

fn agent(base: &[f64], cost: CostSpec, reaction: ReactionKind) -> AgentRecord {
    AgentRecord {
        base: DenseVector::new(base.to_vec()).unwrap(),
        z: 0.0,
        cost,
        reaction,
    }
}

fn quartic(a4: f64, a2: f64, a1: f64) -> Expr {
    Expr::parse(&format!("{a4}*x^4 + ({a2})*x^2 + ({a1})*x")).unwrap()
}

proptest! {
    #[test]
    fn costs_vanish_at_base_and_are_positive_elsewhere(
        (_, base, x) in model_and_points(),
        variant in 0u8..3,
        scale in 0.01..3.0f64,
        mask in prop::collection::vec(any::<bool>(), 3),
    ) {
        let (base, x) = if variant == 2 { (&base[..1], &x[..1]) } else { (&base[..], &x[..]) };
        let c = cost(variant, base.len(), scale, &mask);
        prop_assert_eq!(c.cost(base, base).unwrap(), Cost::Finite(0.0));
        prop_assume!(x != base);
        match c.cost(base, x).unwrap() {
            Cost::Finite(v) => prop_assert!(v > 0.0, "cost {} at {:?}", v, x),
            Cost::Infeasible => prop_assert_eq!(variant, 1),
        }
    }

    #[test]
    fn arex_response_never_harms_and_is_base_or_recommendation(
        (g, base, rec) in model_and_points(),
        b in benefit(),
        variant in 0u8..3,
        scale in 0.01..3.0f64,
        mask in prop::collection::vec(any::<bool>(), 3),
    ) {
        let (g, base, rec) = if variant == 2 {
            (QuadraticModel { a: vec![g.a[0]], b: vec![g.b[0]], c: g.c }, vec![base[0]], vec![rec[0]])
        } else {
            (g, base, rec)
        };
        let a = agent(&base, cost(variant, base.len(), scale, &mask), ReactionKind::ArexChooser);
        let ctx = UtilityContext::new(&g, b);
        let rec = Arex::disclose(&g, DenseVector::new(rec).unwrap()).unwrap();
        let x = arex_response(&a, &ctx, &rec).unwrap();
        prop_assert!(x.bitwise_eq(&rec.x) || x.bitwise_eq(&a.base));
        prop_assert!(true_utility(&ctx, &a, &x).unwrap() >= true_utility(&ctx, &a, &base).unwrap());
    }

    #[test]
    fn tampered_disclosure_is_rejected((g, base, rec) in model_and_points(), shift in 0.01..1.0f64) {
        let a = agent(&base, CostSpec::QuadraticL2 { alpha: 1.0 }, ReactionKind::ArexChooser);
        let ctx = UtilityContext::new(&g, BenefitSign::Lower);
        let mut rec = Arex::disclose(&g, DenseVector::new(rec).unwrap()).unwrap();
        rec.y += shift;
        prop_assert!(arex_response(&a, &ctx, &rec).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn best_response_to_the_model_never_harms(
        a4 in 0.05..0.5f64,
        a2 in -1.0..1.0f64,
        a1 in -1.0..1.0f64,
        base in -2.0..2.0f64,
        b in benefit(),
        quadratic_cost in any::<bool>(),
        scale in 0.05..2.0f64,
    ) {
        let g = quartic(a4, a2, a1);
        let cost = if quadratic_cost { CostSpec::QuadraticL2 { alpha: scale } } else { piecewise(scale, scale) };
        let a = agent(&[base], cost, ReactionKind::SurrogateBestResponder);
        let domain = SearchBox::interval(-3.0, 3.0).unwrap();
        let opts = SearchOptions { grid_points: 601, ..SearchOptions::default() };
        let br = surrogate_best_response(&a, &g, b, &domain, &opts).unwrap();
        let ctx = UtilityContext::new(&g, b);
        let before = true_utility(&ctx, &a, &[base]).unwrap().to_f64();
        let after = true_utility(&ctx, &a, &br.x).unwrap().to_f64();
        prop_assert!(after >= before - 1e-12, "{} -> {}", before, after);
    }

    #[test]
    fn harmful_cost_misleads_the_surrogate_responder(
        a4 in 0.05..0.5f64,
        a2 in -1.0..1.0f64,
        a1 in -1.0..1.0f64,
        base in -2.0..2.0f64,
        b in benefit(),
    ) {
        let g = quartic(a4, a2, a1);
        let f = taylor_surrogate(&g, &[base], 1).unwrap();
        let probes = ProbeDomain::grid(-3.0, 3.0, 121);
        let Some(w) = construct_harmful_cost(&g, &f, &[base], b, &probes, DEFAULT_TOLERANCE).unwrap() else {
            return Ok(());
        };
        let (gap_g, gap_f) = w.interval;
        prop_assert!(0.0 < gap_g && gap_g < w.cost_star && w.cost_star < gap_f);
        prop_assert!(w.utility_change(&g, &f, b) < 0.0);
        // Brute force over the probes and the base point.
        let u_f = |x: &[f64]| b.benefit(f.value(x)) - w.cost(x).unwrap();
        let mut best = (vec![base], u_f(&[base]));
        for x in probes.probes().unwrap() {
            let u = u_f(&x);
            if u > best.1 {
                best = (x, u);
            }
        }
        let true_u = |x: &[f64]| b.benefit(g.value(x)) - w.cost(x).unwrap();
        prop_assert!(true_u(&best.0) < true_u(&[base]));
    }
}

proptest! {
    #[test]
    fn second_order_expansion_reproduces_quadratics(
        (g, base, _) in model_and_points(),
        points in prop::collection::vec(vector(3, 5.0), 10),
    ) {
        let t = taylor2_surrogate(&g, &base).unwrap();
        for p in &points {
            let x = &p[..base.len()];
            prop_assert!((t.value(x) - g.value(x)).abs() < 1e-8, "at {:?}", x);
        }
    }

    #[test]
    fn counterfactuals_never_end_worse_than_the_base(
        (g, base, _) in model_and_points(),
        b in benefit(),
        lambda in 0.1..4.0f64,
    ) {
        let d = base.len();
        let constraints = Constraints { bounds: Some((vec![-3.0; d], vec![3.0; d])), ..Constraints::none() };
        let opts = CeOptions { steps: 100, ..CeOptions::default() };
        let rec = counterfactual_explain(&g, b, &base, lambda, &constraints, &opts).unwrap();
        let s = if b == BenefitSign::Lower { 1.0 } else { -1.0 };
        let objective = |x: &[f64]| {
            s * g.value(x) + lambda * x.iter().zip(&base).map(|(a, c)| (a - c).powi(2)).sum::<f64>()
        };
        prop_assert!(objective(&rec.x) <= objective(&base) + 1e-12);
        prop_assert!((rec.y - g.value(&rec.x)).abs() < 1e-9);
    }

    #[test]
    fn equivalent_recommendation_reproduces_the_response(
        (g, base, shift) in model_and_points(),
        b in benefit(),
        alphas in prop::collection::vec(0.05..1.0f64, 1..4),
    ) {
        let group: Vec<AgentRecord> = alphas
            .iter()
            .map(|&alpha| agent(&base, CostSpec::QuadraticL2 { alpha }, ReactionKind::ArexChooser))
            .collect();
        let induced: Vec<f64> = base.iter().zip(&shift).map(|(x, s)| x + 0.2 * s).collect();
        let induced = DenseVector::new(induced).unwrap();
        let ctx = UtilityContext::new(&g, b);
        let harmless = group
            .iter()
            .all(|a| true_utility(&ctx, a, &induced).unwrap() >= true_utility(&ctx, a, &a.base).unwrap());
        let rec = arex_equivalence(&g, b, &group, &induced);
        prop_assert_eq!(rec.is_ok(), harmless);
        if let Ok(rec) = rec {
            for a in &group {
                prop_assert!(arex_response(a, &ctx, &rec).unwrap().bitwise_eq(&induced));
            }
        }
    }

    #[test]
    fn f1_is_a_fraction_and_perfect_only_on_exact_agreement(
        pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..50),
    ) {
        let (pred, labels): (Vec<bool>, Vec<bool>) = pairs.into_iter().unzip();
        let f1 = f1_binary(&pred, &labels).unwrap().value;
        prop_assert!((0.0..=1.0).contains(&f1));
        prop_assert_eq!(f1 == 1.0, pred == labels && labels.contains(&true));
    }

    #[test]
    fn compliance_is_the_mean_adoption_indicator(
        rows in prop::collection::vec((vector(2, 1.0), any::<bool>()), 1..40),
    ) {
        let recs: Vec<DenseVector> = rows.iter().map(|(r, _)| DenseVector::new(r.clone()).unwrap()).collect();
        let responses: Vec<DenseVector> = rows
            .iter()
            .map(|(r, adopt)| {
                let x = if *adopt { r.clone() } else { r.iter().map(|v| v + 3.0).collect() };
                DenseVector::new(x).unwrap()
            })
            .collect();
        let rate = compliance_rate(&responses, &recs).unwrap();
        let mean = rows.iter().filter(|(_, a)| *a).count() as f64 / rows.len() as f64;
        prop_assert!((0.0..=1.0).contains(&rate));
        prop_assert_eq!(rate, mean);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn generators_are_pure_functions_of_config_and_seed(seed in any::<u64>(), round in 0u64..4) {
        let noharm = NoharmConfig::default();
        prop_assert_eq!(
            gen_noharm_population(&noharm, seed, round).unwrap(),
            gen_noharm_population(&noharm, seed, round).unwrap()
        );
        let synthetic = SyntheticConfig::default();
        prop_assert_eq!(
            gen_synthetic_population(&synthetic, 50, seed, round).unwrap(),
            gen_synthetic_population(&synthetic, 50, seed, round).unwrap()
        );
    }
}
