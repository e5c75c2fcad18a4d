//! End-to-end acceptance suite. Runs every criterion in order, prints one
//! line per criterion with its wall time, and fails if any criterion fails.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use arex::agents::{
    arex_response, surrogate_best_response, true_utility, AgentRecord, BenefitSign, CostPiece, CostSpec,
    ReactionKind, SearchBox, SearchOptions, UtilityContext,
};
use arex::dataio::ExperimentConfig;
use arex::explain::{random_arex_sample, shapley_two_feature, taylor_surrogate, Surrogate};
use arex::metrics::MetricTag;
use arex::model::{QuadraticModel, ScalarModel};
use arex::numkit::{finite_difference, DenseVector, Expr, Head, Mlp};
use arex::rng::{stream_for, Purpose};
use arex::theory::{
    arex_equivalence, check_necessary, construct_harmful_cost, ProbeDomain, Verdict, DEFAULT_TOLERANCE, HARM_SLACK,
};
use arex_cli::{tangent_walkthrough, run, run_check, run_noharm, Command, CONFIG_FILE, MANIFEST_FILE};

type Check = Result<String, String>;

struct Outcome {
    id: usize,
    title: &'static str,
    passed: bool,
    detail: String,
    seconds: f64,
    budget: f64,
}

fn criterion(id: usize, title: &'static str, budget: f64, body: impl FnOnce() -> Check) -> Outcome {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(body)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let seconds = start.elapsed().as_secs_f64();
    let (mut passed, mut detail) = match result {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    if seconds > budget {
        passed = false;
        detail = format!("{detail}; over the {budget} s budget");
    }
    let o = Outcome {
        id,
        title,
        passed,
        detail,
        seconds,
        budget,
    };
    println!(
        "[{}] {:>2}. {:<34} {:>8.2} s / {:>4} s  {}",
        if o.passed { "PASS" } else { "FAIL" },
        o.id,
        o.title,
        o.seconds,
        o.budget,
        o.detail
    );
    o
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn config(name: &str, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::load(&configs().join(name)).unwrap();
    cfg.seed = seed;
    cfg
}

fn benefit(rng: &mut ChaCha8Rng) -> BenefitSign {
    if rng.random_bool(0.5) {
        BenefitSign::Lower
    } else {
        BenefitSign::Higher
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

fn piece(lo: Option<f64>, hi: Option<f64>, e: String) -> CostPiece {
    CostPiece {
        lo,
        hi,
        expr: Expr::parse(&e).unwrap(),
    }
}

/// Asymmetric 1-D cost: quadratic for backward moves, linear forward.
fn piecewise_cost(rng: &mut ChaCha8Rng) -> CostSpec {
    let (a, b) = (uniform(rng, 0.1, 3.0), uniform(rng, 0.1, 3.0));
    CostSpec::PiecewiseScalar {
        pieces: vec![
            piece(None, Some(0.0), format!("{a}*x^2")),
            piece(Some(0.0), None, format!("{b}*x")),
        ],
    }
}

/// Random quartic or quadratic in one variable, bounded below.
fn random_1d_model(rng: &mut ChaCha8Rng) -> Expr {
    let (a2, a1) = (uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0));
    let text = if rng.random_bool(0.5) {
        let a4 = uniform(rng, 0.05, 0.5);
        format!("{a4}*x^4 + ({a2})*x^2 + ({a1})*x")
    } else {
        format!("{}*x^2 + ({a1})*x", a2.abs() + 0.1)
    };
    Expr::parse(&text).unwrap()
}

fn random_quadratic(rng: &mut ChaCha8Rng, d: usize) -> QuadraticModel {
    let mut a = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let v = uniform(rng, -1.0, 1.0);
            a[i * d + j] = v;
            a[j * d + i] = v;
        }
    }
    QuadraticModel {
        a,
        b: (0..d).map(|_| uniform(rng, -1.0, 1.0)).collect(),
        c: uniform(rng, -1.0, 1.0),
    }
}

fn agent(base: Vec<f64>, cost: CostSpec, reaction: ReactionKind) -> AgentRecord {
    AgentRecord {
        base: DenseVector::new(base).unwrap(),
        z: 0.0,
        cost,
        reaction,
    }
}

fn c1_arex_never_harms() -> Check {
    let pairs = 12_000u64;
    let mut harmed = 0;
    let mut adopted = 0;
    let mut seen = [[0usize; 2]; 3];
    for i in 0..pairs {
        let mut rng = stream_for(1, Purpose::Test, 0, i);
        let variant = (i % 3) as usize;
        let b = benefit(&mut rng);
        let d = if variant == 2 { 1 } else { rng.random_range(1..=4) };
        let g = random_quadratic(&mut rng, d);
        let base: Vec<f64> = (0..d).map(|_| uniform(&mut rng, -2.0, 2.0)).collect();
        let cost = match variant {
            0 => CostSpec::QuadraticL2 {
                alpha: uniform(&mut rng, 0.01, 3.0),
            },
            1 => {
                let modifiable: Vec<usize> = (0..d).filter(|_| rng.random_bool(0.6)).collect();
                CostSpec::WeightedL1 {
                    scale: uniform(&mut rng, 0.01, 2.0),
                    modifiable,
                    lower: vec![-2.5; d],
                    upper: vec![2.5; d],
                }
            }
            _ => piecewise_cost(&mut rng),
        };
        let a = agent(base.clone(), cost, ReactionKind::ArexChooser);
        let ctx = UtilityContext::new(&g, b);
        let rec = random_arex_sample(&g, &base, uniform(&mut rng, 0.01, 2.0), &mut rng).map_err(|e| e.to_string())?;
        let x = arex_response(&a, &ctx, &rec).map_err(|e| e.to_string())?;
        let before = true_utility(&ctx, &a, &base).unwrap().to_f64();
        let after = true_utility(&ctx, &a, &x).unwrap().to_f64();
        if after - before < -HARM_SLACK {
            harmed += 1;
        }
        if x != a.base {
            adopted += 1;
        }
        seen[variant][usize::from(b == BenefitSign::Higher)] += 1;
    }
    ensure(seen.iter().flatten().all(|&n| n > 0), || format!("uncovered variant: {seen:?}"))?;
    ensure(harmed == 0, || format!("{harmed} of {pairs} agents harmed"))?;
    Ok(format!("{pairs} pairs, {adopted} adopted, 0 harmed"))
}

fn c2_taylor_harm() -> Check {
    let mut fractions = Vec::new();
    for seed in 0..10 {
        let r = run_noharm(&config("noharm.toml", seed)).map_err(|e| e.to_string())?;
        ensure(r.taylor.len() == 100, || "population is not 100 agents".into())?;
        fractions.push(r.taylor.iter().filter(|r| r.harmed).count() as f64 / 100.0);
    }
    let inside = fractions.iter().filter(|f| (0.29..=0.69).contains(*f)).count();
    let text = fractions.iter().map(|f| format!("{f:.2}")).collect::<Vec<_>>().join(" ");
    ensure(inside >= 8, || format!("{inside}/10 seeds in [0.29, 0.69]: {text}"))?;
    Ok(format!("{inside}/10 seeds in range: {text}"))
}

fn c3_shapley() -> Check {
    let a = shapley_two_feature([16.0, 4.0], 2.0, 5.0, 0.0).map_err(|e| e.to_string())?;
    let b = shapley_two_feature([16.0, 4.0], 2.0, 8.0, 0.0).map_err(|e| e.to_string())?;
    ensure((a + 3.0).abs() < 1e-9 && (b - 12.0).abs() < 1e-9, || format!("got {a}, {b}"))?;
    Ok(format!("{a}, {b}"))
}

fn c4_walkthrough() -> Check {
    let w = tangent_walkthrough().map_err(|e| e.to_string())?;
    ensure((w.best_response - 2.0).abs() < 1e-9, || format!("best response {}", w.best_response))?;
    ensure((w.u_base + 25.0).abs() < 1e-9 && (w.u_response + 31.0).abs() < 1e-9, || {
        format!("utilities {} -> {}", w.u_base, w.u_response)
    })?;
    let r = run_check(&config("check-tangent.toml", 0)).map_err(|e| e.to_string())?;
    let wit = r.necessary.witness.ok_or("no witness")?;
    ensure(r.necessary.verdict == Verdict::Violated, || "not violated".into())?;
    ensure(wit.x == [2.0] && (wit.lhs - 30.0).abs() < 1e-9 && (wit.rhs - 21.0).abs() < 1e-9, || {
        format!("witness {:?} lhs {} rhs {}", wit.x, wit.lhs, wit.rhs)
    })?;
    Ok(format!(
        "response {}, u {} -> {}, witness x = 2 with {} > {}",
        w.best_response, w.u_base, w.u_response, wit.lhs, wit.rhs
    ))
}

/// One surrogate-responder instance in one dimension.
struct Instance {
    g: Expr,
    f: Surrogate,
    agent: AgentRecord,
    benefit: BenefitSign,
}

fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let g = random_1d_model(rng);
    let base = uniform(rng, -2.0, 2.0);
    let f = match rng.random_range(0..3) {
        0 => Surrogate::Taylor(taylor_surrogate(&g, &[base], 1).unwrap()),
        1 => Surrogate::Taylor(taylor_surrogate(&g, &[base], 2).unwrap()),
        _ => {
            let text = format!("{g} + ({})*x^2 + ({})*x", uniform(rng, -0.5, 0.5), uniform(rng, -1.0, 1.0));
            Surrogate::Expr {
                expr: Expr::parse(&text).unwrap(),
            }
        }
    };
    let cost = if rng.random_bool(0.5) {
        CostSpec::QuadraticL2 {
            alpha: uniform(rng, 0.05, 2.0),
        }
    } else {
        piecewise_cost(rng)
    };
    Instance {
        g,
        f,
        agent: agent(vec![base], cost, ReactionKind::SurrogateBestResponder),
        benefit: benefit(rng),
    }
}

const BOX: (f64, f64) = (-3.0, 3.0);
const GRID: usize = 601;

fn search_opts() -> SearchOptions {
    SearchOptions {
        grid_points: GRID,
        ..SearchOptions::default()
    }
}

fn c5_harm_implies_violation() -> Check {
    let domain = SearchBox::interval(BOX.0, BOX.1).unwrap();
    let grid = domain.grid_1d(GRID);
    let (mut harmed, mut flagged, mut outside) = (0, 0, Vec::new());
    for i in 0..100 {
        let mut rng = stream_for(5, Purpose::Test, 0, i);
        let inst = random_instance(&mut rng);
        let ctx = UtilityContext::new(&inst.g, inst.benefit);
        let br = surrogate_best_response(&inst.agent, &inst.f, inst.benefit, &domain, &search_opts())
            .map_err(|e| e.to_string())?;
        let before = true_utility(&ctx, &inst.agent, &inst.agent.base).unwrap().to_f64();
        let after = true_utility(&ctx, &inst.agent, &br.x).unwrap().to_f64();
        if !(after - before < -HARM_SLACK) {
            continue;
        }
        harmed += 1;
        let mut points: Vec<Vec<f64>> = grid.iter().map(|&p| vec![p]).collect();
        points.push(br.x.to_vec());
        let probes = ProbeDomain::Explicit { points };
        let rep = check_necessary(&inst.g, &inst.f, &inst.agent.base, inst.benefit, &probes, DEFAULT_TOLERANCE)
            .map_err(|e| e.to_string())?;
        if rep.verdict == Verdict::Violated {
            flagged += 1;
        } else {
            outside.push(i);
        }
    }
    ensure(harmed > 0, || "no harmed instance generated".into())?;
    ensure(outside.is_empty(), || {
        format!("{flagged}/{harmed} harmed instances flagged; unflagged: {outside:?}")
    })?;
    Ok(format!("100 instances, {harmed} harmed, all flagged"))
}

fn c6_harmful_cost() -> Check {
    let points = 201;
    let probes = ProbeDomain::grid(BOX.0, BOX.1, points);
    let (mut built, mut tried, mut outside) = (0, 0u64, 0);
    while built < 50 {
        ensure(tried < 10_000, || format!("only {built} violated instances in {tried} draws"))?;
        let mut rng = stream_for(6, Purpose::Test, 0, tried);
        tried += 1;
        let inst = random_instance(&mut rng);
        let base = inst.agent.base.to_vec();
        let w = match construct_harmful_cost(&inst.g, &inst.f, &base, inst.benefit, &probes, DEFAULT_TOLERANCE) {
            Ok(Some(w)) => w,
            Ok(None) => continue,
            Err(e) => return Err(format!("instance {}: {e}", tried - 1)),
        };
        built += 1;
        // Brute force over the probes and the base point.
        let ctx_f = UtilityContext::new(&inst.f, inst.benefit);
        let u_f = |x: &[f64]| inst.benefit.benefit(ctx_f.g.value(x)) - w.cost(x).unwrap();
        let mut best = (base.clone(), u_f(&base));
        for x in probes.probes().unwrap() {
            let u = u_f(&x);
            if u > best.1 {
                best = (x, u);
            }
        }
        let true_u = |x: &[f64]| inst.benefit.benefit(inst.g.value(x)) - w.cost(x).unwrap();
        let id = tried - 1;
        ensure(true_u(&best.0) < true_u(&base), || format!("instance {id}: response {:?} does not harm", best.0))?;
        let in_lower = w.table.iter().any(|e| e.x == best.0 && e.lower_set);
        ensure(!in_lower || best.0 == w.x_star, || {
            format!("instance {id}: lower-set response {:?} is not the witness", best.0)
        })?;
        outside += usize::from(!in_lower);
    }
    Ok(format!("{built} harmful costs from {tried} draws, all harm ({outside} responses outside the lower set)"))
}

fn c7_equivalence() -> Check {
    let (mut done, mut tried) = (0, 0u64);
    while done < 100 {
        ensure(tried < 100_000, || format!("only {done} non-harmful responses in {tried} draws"))?;
        let mut rng = stream_for(7, Purpose::Test, 0, tried);
        tried += 1;
        let d = rng.random_range(1..=3);
        let g = random_quadratic(&mut rng, d);
        let b = benefit(&mut rng);
        let base: Vec<f64> = (0..d).map(|_| uniform(&mut rng, -2.0, 2.0)).collect();
        let group: Vec<AgentRecord> = (0..rng.random_range(1..=4))
            .map(|_| {
                let cost = CostSpec::QuadraticL2 {
                    alpha: uniform(&mut rng, 0.05, 1.0),
                };
                agent(base.clone(), cost, ReactionKind::ArexChooser)
            })
            .collect();
        let induced: Vec<f64> = base.iter().map(|v| v + uniform(&mut rng, -0.5, 0.5)).collect();
        let induced = DenseVector::new(induced).unwrap();
        let ctx = UtilityContext::new(&g, b);
        let non_harmful = group.iter().all(|a| {
            true_utility(&ctx, a, &induced).unwrap() >= true_utility(&ctx, a, &a.base).unwrap()
        });
        if !non_harmful {
            ensure(arex_equivalence(&g, b, &group, &induced).is_err(), || "harmful response accepted".into())?;
            continue;
        }
        let rec = arex_equivalence(&g, b, &group, &induced).map_err(|e| e.to_string())?;
        for a in &group {
            let x = arex_response(a, &ctx, &rec).map_err(|e| e.to_string())?;
            ensure(x == induced, || format!("draw {}: response {x:?} differs", tried - 1))?;
        }
        done += 1;
    }
    Ok(format!("{done} responses reproduced exactly ({tried} draws)"))
}

fn c8_gradients() -> Check {
    let mut rng = stream_for(8, Purpose::Init, 0, 0);
    let net = Mlp::three_layer(4, 16, 1, Head::Linear, &mut rng).map_err(|e| e.to_string())?;
    let batch: Vec<(Vec<f64>, f64)> = (0..5)
        .map(|_| ((0..4).map(|_| uniform(&mut rng, -2.0, 2.0)).collect(), uniform(&mut rng, -1.0, 1.0)))
        .collect();
    let loss = |params: &[f64]| {
        let m = Mlp::from_params(net.sizes(), params.to_vec(), Head::Linear).unwrap();
        batch.iter().map(|(x, y)| (m.forward_scalar(x).unwrap() - y).powi(2)).sum::<f64>() / 5.0
    };
    let mut grad = vec![0.0; net.num_params()];
    let mut cache = net.new_cache();
    let mut dx = vec![0.0; 4];
    for (x, y) in &batch {
        let out = net.forward_cached(x, &mut cache)[0];
        net.backward(&mut cache, &[2.0 * (out - y) / 5.0], Some(&mut grad), &mut dx);
    }
    let fd = finite_difference(loss, net.params(), 1e-6);
    let mut worst: f64 = 0.0;
    for (a, b) in grad.iter().zip(&fd) {
        worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(1e-6));
    }
    ensure(worst < 1e-4, || format!("max relative error {worst:.2e}"))?;
    Ok(format!("{} parameters, max relative error {worst:.2e}", grad.len()))
}

struct SeedResult {
    dir: PathBuf,
    joint: f64,
    baselines: Vec<(String, f64)>,
    compliance: f64,
}

fn metric(dir: &Path, arm: &str, name: &str, tag: MetricTag) -> Option<f64> {
    let tag = match tag {
        MetricTag::Strategic => "strategic",
        MetricTag::Offline => "offline",
    };
    let text = fs::read_to_string(dir.join("test_metrics.csv")).ok()?;
    text.lines().skip(1).find_map(|l| {
        let f: Vec<&str> = l.split(',').collect();
        (f[0] == arm && f[1] == name && f[2] == tag).then(|| f[3].parse().unwrap())
    })
}

fn rrm_seed(command: Command, cfg_name: &str, seed: u64, root: &Path, name: &str) -> Result<SeedResult, String> {
    let dir = root.join(format!("{}-{seed}", command.name()));
    let report = run(command, config(cfg_name, seed), &dir, None).map_err(|e| e.to_string())?;
    ensure(report.failed.is_empty(), || format!("seed {seed}: failed arms {:?}", report.failed))?;
    let get = |arm: &str, metric_name: &str| metric(&dir, arm, metric_name, MetricTag::Strategic);
    let joint = get("joint-opt", name).ok_or("missing joint-opt metric")?;
    let compliance = get("joint-opt", "compliance").ok_or("missing compliance")?;
    let baselines = ["ce-lambda-0.1", "ce-lambda-1", "ce-lambda-4"]
        .iter()
        .map(|a| get(a, name).map(|v| (a.to_string(), v)).ok_or(format!("missing {a}")))
        .collect::<Result<_, _>>()?;
    Ok(SeedResult {
        dir,
        joint,
        baselines,
        compliance,
    })
}

fn c9_synthetic(root: &Path) -> Check {
    let mut lines = Vec::new();
    let mut good = 0;
    for seed in 0..5 {
        let r = rrm_seed(Command::SyntheticRrm, "synthetic-rrm.toml", seed, root, "nmse")?;
        let best = r.baselines.iter().map(|b| b.1).fold(f64::INFINITY, f64::min);
        let ok = r.joint < best && r.compliance >= 0.95;
        good += usize::from(ok);
        lines.push(format!(
            "s{seed}:{}({:.1e} vs {:.1e}, c={:.3})",
            if ok { "ok" } else { "miss" },
            r.joint,
            best,
            r.compliance
        ));
        let _ = r.dir;
    }
    let text = lines.join(" ");
    ensure(good >= 4, || format!("{good}/5 seeds: {text}"))?;
    Ok(format!("{good}/5 seeds: {text}"))
}

fn c10_credit(root: &Path) -> Check {
    let mut lines = Vec::new();
    let mut good = 0;
    for seed in 0..5 {
        let r = rrm_seed(Command::CreditRrm, "credit-rrm.toml", seed, root, "f1")?;
        let best = r.baselines.iter().map(|b| b.1).fold(f64::NEG_INFINITY, f64::max);
        let ok = r.joint >= best - 0.01;
        good += usize::from(ok);
        lines.push(format!("s{seed}:{}({:.3} vs {:.3})", if ok { "ok" } else { "miss" }, r.joint, best));
    }
    let text = lines.join(" ");
    ensure(good >= 4, || format!("{good}/5 seeds: {text}"))?;
    Ok(format!("{good}/5 seeds: {text}"))
}

fn output_files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != MANIFEST_FILE {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn c11_determinism(root: &Path) -> Check {
    let mut fresh = Vec::new();
    for (command, cfg) in [(Command::Noharm, "noharm.toml"), (Command::Check, "check-tangent.toml")] {
        let dir = root.join(format!("{}-0", command.name()));
        run(command, config(cfg, 0), &dir, None).map_err(|e| e.to_string())?;
        fresh.push((command, dir));
    }
    for command in [Command::SyntheticRrm, Command::CreditRrm] {
        let dir = root.join(format!("{}-0", command.name()));
        if !dir.join(CONFIG_FILE).is_file() {
            let cfg = if command == Command::SyntheticRrm { "synthetic-rrm.toml" } else { "credit-rrm.toml" };
            run(command, config(cfg, 0), &dir, None).map_err(|e| e.to_string())?;
        }
        fresh.push((command, dir));
    }
    let mut counts = Vec::new();
    for (command, dir) in fresh {
        let snapshot = ExperimentConfig::load(&dir.join(CONFIG_FILE)).map_err(|e| e.to_string())?;
        let again = root.join(format!("{}-rerun", command.name()));
        run(command, snapshot, &again, None).map_err(|e| e.to_string())?;
        let (a, b) = (output_files(&dir), output_files(&again));
        ensure(a.len() == b.len(), || format!("{}: file lists differ", command.name()))?;
        for ((pa, da), (pb, db)) in a.iter().zip(&b) {
            ensure(pa == pb && da == db, || format!("{}: {} differs", command.name(), pa.display()))?;
        }
        counts.push(format!("{} ({} files)", command.name(), a.len()));
    }
    Ok(format!("identical: {}", counts.join(", ")))
}

#[test]
fn acceptance_criteria() {
    let root = tempfile::tempdir().unwrap();
    let root = root.path();
    let outcomes = [
        criterion(1, "ARex responses never harm", 10.0, c1_arex_never_harms),
        criterion(2, "Taylor explanations harm", 10.0, c2_taylor_harm),
        criterion(3, "Shapley values", 1.0, c3_shapley),
        criterion(4, "misled-agent walkthrough", 1.0, c4_walkthrough),
        criterion(5, "harm implies violated condition", 60.0, c5_harm_implies_violation),
        criterion(6, "harmful cost construction", 60.0, c6_harmful_cost),
        criterion(7, "ARex equivalence", 10.0, c7_equivalence),
        criterion(8, "MLP gradients", 5.0, c8_gradients),
        criterion(9, "synthetic RRM ordering", 300.0, || c9_synthetic(root)),
        criterion(10, "credit RRM ordering", 600.0, || c10_credit(root)),
        criterion(11, "rerun determinism", 600.0, || c11_determinism(root)),
    ];
    let failed: Vec<usize> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id).collect();
    let total: f64 = outcomes.iter().map(|o| o.seconds).sum();
    println!("{} of {} criteria passed in {total:.1} s", outcomes.len() - failed.len(), outcomes.len());
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
