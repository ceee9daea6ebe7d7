//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.
//!
//! Criteria 5 to 8 share one benchmark run over two desk instance sets:
//! twelve single-delivery instances at 10 steps and ten two-delivery
//! instances at 14 steps.

use std::process::ExitCode;
use std::time::Instant;

use pnp_tamp::bench::{run_benchmark, write_outputs, BenchConfig, BenchRecord};
use pnp_tamp::geometry::{contains, inflate, make_regions, Aabb, Face, Sign, Vec3};
use pnp_tamp::milp::{LinExpr, MilpModel, ModelError, Sense, VarId, VarTag};
use pnp_tamp::plan::{verify_plan, Action, ObjectiveParts, Plan, VerifyTolerances};
use pnp_tamp::solver::{
    presolve, solve, solve_lp, Branching, LpResultStatus, SolveOptions, SolveStatus,
};
use pnp_tamp::tamp::{
    build, relaxed_indicator_count, Delivery, EndEffector, Params, Scenario, Variant, SCENARIO_SCHEMA,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

// ---------------------------------------------------------------- 1

/// Feasible interval of `phi` once every other variable is fixed.
fn phi_interval(m: &MilpModel, phi: VarId, values: &[f64]) -> (f64, f64) {
    let (mut lo, mut hi) = (m.var(phi).lb, m.var(phi).ub);
    for c in m.constraints() {
        let a: f64 = c.expr.terms().iter().filter(|(_, v)| *v == phi).map(|(a, _)| a).sum();
        if a == 0.0 {
            continue;
        }
        let rest: f64 = c.expr.terms().iter().filter(|(_, v)| *v != phi).map(|(a, v)| a * values[v.0]).sum();
        let bound = (c.rhs - rest) / a;
        match (c.sense, a > 0.0) {
            (Sense::Eq, _) => {
                lo = lo.max(bound);
                hi = hi.min(bound);
            }
            (Sense::Le, true) | (Sense::Ge, false) => hi = hi.min(bound),
            _ => lo = lo.max(bound),
        }
    }
    (lo, hi)
}

fn logic_exhaustion() -> Outcome {
    type Op = fn(&mut MilpModel, &[VarId]) -> Result<VarId, ModelError>;
    let ops: [(&str, Op, fn(&[bool]) -> bool, usize); 3] = [
        ("not", |m, x| m.encode_not(x[0]), |b| !b[0], 1),
        ("and", |m, x| m.encode_and(x), |b| b.iter().all(|&v| v), 4),
        ("or", |m, x| m.encode_or(x), |b| b.iter().any(|&v| v), 4),
    ];
    let mut checked = 0;
    for (name, op, truth, max_n) in ops {
        for n in 1..=max_n {
            let mut m = MilpModel::new();
            let xs: Vec<VarId> = (0..n).map(|k| m.add_binary(VarTag::new("x", &[k]))).collect();
            let phi = op(&mut m, &xs).expect("operands are binary");
            for mask in 0..1u32 << n {
                let mut values = vec![0.0; m.num_vars()];
                let bits: Vec<bool> = (0..n).map(|k| mask >> k & 1 == 1).collect();
                for (k, &x) in xs.iter().enumerate() {
                    values[x.0] = f64::from(u8::from(bits[k]));
                }
                let want = f64::from(u8::from(truth(&bits)));
                if phi_interval(&m, phi, &values) != (want, want) {
                    return Outcome::new(false, format!("{name} with operands {bits:?} does not force {want}"));
                }
                checked += 1;
            }
        }
    }
    Outcome::new(true, format!("{checked} assignments over NOT, AND and OR with up to 4 operands"))
}

// ---------------------------------------------------------------- 2

fn random_milp(rng: &mut ChaCha8Rng) -> (MilpModel, usize) {
    let nb = rng.gen_range(1..=12);
    let nc = rng.gen_range(0..=8);
    let mut m = MilpModel::new();
    let mut vars: Vec<VarId> = (0..nb).map(|k| m.add_binary(VarTag::new("b", &[k]))).collect();
    for k in 0..nc {
        let ub = rng.gen_range(1.0..4.0);
        vars.push(m.add_continuous(0.0, ub, VarTag::new("x", &[k])));
    }
    for _ in 0..rng.gen_range(1..=8) {
        let e = LinExpr::from_terms(vars.iter().map(|&v| (f64::from(rng.gen_range(-5i32..=5)), v)), 0.0);
        let sense = [Sense::Le, Sense::Ge, Sense::Eq][rng.gen_range(0..3)];
        m.add_constraint(e, sense, f64::from(rng.gen_range(-6i32..=10)), "row");
    }
    m.set_objective(LinExpr::from_terms(vars.iter().map(|&v| (f64::from(rng.gen_range(-6i32..=6)), v)), 0.0));
    (m, nb)
}

fn enumerate(m: &MilpModel, nb: usize) -> Option<f64> {
    (0..1u32 << nb)
        .filter_map(|mask| {
            let mut fixed = m.clone();
            for k in 0..nb {
                fixed.fix(VarId(k), f64::from(mask >> k & 1));
            }
            let r = solve_lp(&fixed);
            (r.status == LpResultStatus::Optimal).then_some(r.objective)
        })
        .reduce(f64::min)
}

fn solver_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2021);
    let opts = SolveOptions { mip_gap: 1e-9, ..SolveOptions::default() };
    let (mut feasible, mut worst) = (0, 0.0f64);
    for case in 0..100 {
        let (m, nb) = random_milp(&mut rng);
        let (sol, _) = solve(&m, &opts);
        match enumerate(&m, nb) {
            None if sol.status == SolveStatus::Infeasible => {}
            None => return Outcome::new(false, format!("case {case}: enumeration infeasible, solver {}", sol.status.label())),
            Some(best) => {
                if sol.status != SolveStatus::Optimal {
                    return Outcome::new(false, format!("case {case}: solver {}, enumeration {best}", sol.status.label()));
                }
                let err = (sol.objective - best).abs();
                if err > 1e-6 {
                    return Outcome::new(false, format!("case {case}: {} vs {best}", sol.objective));
                }
                feasible += 1;
                worst = worst.max(err);
            }
        }
    }
    Outcome::new(true, format!("100 MILPs ({feasible} feasible), max |error| {worst:.1e}"))
}

// ---------------------------------------------------------------- 3

fn region_soundness() -> Outcome {
    const SLACK: f64 = 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let v3 = |lo: f64, hi: f64, rng: &mut ChaCha8Rng| {
        Vec3::new(rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(lo..hi))
    };
    let (mut samples, mut case) = (0, 0);
    // configurations whose owner swallows the workspace have no regions to test
    while case < 50 {
        let ws = Aabb::new(v3(-0.5, 0.5, &mut rng), v3(0.2, 1.5, &mut rng));
        let owner = Aabb::new(v3(-0.6, 0.6, &mut rng), v3(0.0, 0.8, &mut rng));
        let mw = v3(0.0, 0.3, &mut rng);
        let inflated = inflate(&owner, mw);
        let thick: Vec<Face> = Face::ALL
            .into_iter()
            .filter(|f| match f.sign {
                Sign::Neg => inflated.lo(f.axis) > ws.lo(f.axis),
                Sign::Pos => inflated.hi(f.axis) < ws.hi(f.axis),
            })
            .collect();
        let regions = match make_regions(&owner, &ws, mw) {
            Ok(r) => r,
            Err(_) if thick.is_empty() => continue,
            Err(e) => return Outcome::new(false, format!("config {case}: {e}")),
        };
        if regions.iter().map(|r| r.face).collect::<Vec<_>>() != thick {
            return Outcome::new(false, format!("config {case}: region faces differ from the non-degenerate faces"));
        }
        let core = Aabb::new(inflated.center, inflated.width - Vec3::splat(2.0 * SLACK));
        for _ in 0..400 {
            let mut p = Vec3::from_fn(|a| rng.gen_range(ws.lo(a)..=ws.hi(a)));
            let snap = rng.gen_range(0..12);
            if snap < 6 {
                let f = Face::ALL[snap];
                let plane = if f.sign == Sign::Neg { inflated.lo(f.axis) } else { inflated.hi(f.axis) };
                p[f.axis] = plane.clamp(ws.lo(f.axis), ws.hi(f.axis));
            }
            samples += 1;
            if !inflated.interior_contains(p) && !regions.iter().any(|r| r.bounds.contains_within(p, SLACK)) {
                return Outcome::new(false, format!("config {case}: free point {p} is uncovered"));
            }
            if regions.iter().any(|r| contains(r, p)) && core.interior_contains(p) {
                return Outcome::new(false, format!("config {case}: region point {p} is inside the owner"));
            }
        }
        for (k, a) in regions.iter().enumerate() {
            for b in &regions[k + 1..] {
                if a.face.axis != b.face.axis && a.bounds.intersection(&b.bounds).is_none() {
                    return Outcome::new(false, format!("config {case}: {} and {} do not overlap", a.face, b.face));
                }
            }
        }
        case += 1;
    }
    Outcome::new(true, format!("50 configurations, {samples} sampled points"))
}

// ---------------------------------------------------------------- 4

fn two_delivery_config() -> BenchConfig {
    BenchConfig { seed: 2, instances: 10, n_dlv: 2, steps: Some(14), ..acceptance_config() }
}

fn acceptance_config() -> BenchConfig {
    BenchConfig {
        solve: SolveOptions { branching: Branching::LowestIndex, time_limit_s: 60.0, ..SolveOptions::default() },
        jobs: 1,
        ..BenchConfig::default()
    }
}

fn binary_reduction() -> Outcome {
    let config = two_delivery_config();
    let scenarios = match pnp_tamp::bench::sample_scenarios(&config) {
        Ok(s) => s,
        Err(e) => return Outcome::new(false, e.to_string()),
    };
    let steps = 14;
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for (id, s) in scenarios.iter().enumerate() {
        let mut counts = Vec::new();
        for variant in [Variant::Baseline, Variant::Hard] {
            let (m, layout, report) = build(s, &config.params(variant, steps)).expect("sampled scenarios build");
            let faces = layout.obstacle_faces.iter().chain(&layout.delivery_faces);
            if faces.clone().any(|f| f.len() != 6) {
                return Outcome::new(false, format!("scenario {id}: not every owner has 6 regions"));
            }
            let pre = presolve(&m).expect("presolve keeps the model feasible");
            counts.push((report.binaries, pre.stats.binaries_after));
        }
        let want = relaxed_indicator_count(2, 1, 6, steps);
        if counts[0].0 - counts[1].0 != want {
            return Outcome::new(false, format!("scenario {id}: {} binaries removed, closed form {want}", counts[0].0 - counts[1].0));
        }
        let ratio = counts[1].1 as f64 / counts[0].1 as f64;
        lo = lo.min(ratio);
        hi = hi.max(ratio);
    }
    let pass = (0.40..=0.60).contains(&lo) && (0.40..=0.60).contains(&hi);
    Outcome::new(
        pass,
        format!(
            "{} binaries removed before presolve on 10 scenarios; presolved hard/baseline ratio in [{lo:.3}, {hi:.3}]",
            relaxed_indicator_count(2, 1, 6, steps)
        ),
    )
}

// ---------------------------------------------------------------- 5 to 8

/// Records of one instance, keyed by variant.
struct Instance<'a> {
    baseline: &'a BenchRecord,
    hard: &'a BenchRecord,
    hard_soft: &'a BenchRecord,
}

fn instances(records: &[BenchRecord]) -> Vec<Instance<'_>> {
    let pick = |id: usize, steps: usize, v: Variant| {
        records.iter().find(|r| r.scenario_id == id && r.steps == steps && r.variant == v).expect("one record per cell")
    };
    let mut keys: Vec<(usize, usize)> = records.iter().map(|r| (r.scenario_id, r.steps)).collect();
    keys.dedup();
    keys.into_iter()
        .map(|(id, steps)| Instance {
            baseline: pick(id, steps, Variant::Baseline),
            hard: pick(id, steps, Variant::Hard),
            hard_soft: pick(id, steps, Variant::HardSoft),
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn reformulation(solved: &[&Instance]) -> Outcome {
    if solved.len() < 20 {
        return Outcome::new(false, format!("only {} instances solved to optimality by baseline and hard", solved.len()));
    }
    let mut worst = 0.0f64;
    for i in solved {
        let (b, h) = (i.baseline, i.hard);
        if b.j_time != h.j_time {
            return Outcome::new(false, format!("scenario {} ({} steps): J_time {:?} vs {:?}", b.scenario_id, b.steps, b.j_time, h.j_time));
        }
        let d = (b.objective.unwrap() - h.objective.unwrap()).abs();
        if d > 1e-5 {
            return Outcome::new(false, format!("scenario {} ({} steps): objective differs by {d:.2e}", b.scenario_id, b.steps));
        }
        worst = worst.max(d);
    }
    Outcome::new(true, format!("{} instances, J_time identical, max objective difference {worst:.1e}", solved.len()))
}

fn soft_quality(solved: &[&Instance]) -> Outcome {
    let within = solved
        .iter()
        .filter(|i| {
            let step = 1.0 / (i.hard.steps as f64 + 1.0);
            match (i.hard_soft.j_time, i.hard.j_time) {
                (Some(s), Some(h)) if i.hard_soft.has_plan() => s - h <= step + 1e-12,
                _ => false,
            }
        })
        .count();
    let share = within as f64 / solved.len().max(1) as f64;
    Outcome::new(share >= 0.9, format!("{within}/{} instances within one step ({:.0}%)", solved.len(), 100.0 * share))
}

fn search_effort(solved: &[&Instance]) -> Outcome {
    let b = median(solved.iter().map(|i| i.baseline.lp_solves as f64).collect());
    let h = median(solved.iter().map(|i| i.hard.lp_solves as f64).collect());
    Outcome::new(h <= b, format!("median LP solves hard {h} vs baseline {b} over {} instances", solved.len()))
}

fn corner_cut_rejected() -> Result<(), String> {
    let s = Scenario {
        schema: SCENARIO_SCHEMA.into(),
        workspace: Aabb::new(Vec3::new(0.4, 0.0, 0.15), Vec3::new(0.8, 0.4, 0.3)),
        end_effectors: vec![EndEffector {
            width_m: Vec3::splat(0.05),
            initial_m: Vec3::new(0.30, 0.0, 0.08),
            max_speed_mps: Vec3::new(0.4, 0.2, 0.2),
            margin_m: Vec3::new(0.0, 0.0, 0.02),
        }],
        deliveries: vec![Delivery {
            width_m: Vec3::new(0.05, 0.05, 0.04),
            initial_m: Vec3::new(0.15, 0.1, 0.02),
            target_m: Vec3::new(0.15, 0.1, 0.02),
        }],
        obstacles: vec![Aabb::new(Vec3::new(0.4, 0.0, 0.08), Vec3::new(0.06, 0.16, 0.1))],
    };
    let params = Params { steps: 1, dt_s: 1.0, ..Params::default() };
    let d = s.deliveries[0].initial_m;
    let hop = |from: Vec3, to: Vec3| Plan {
        variant: Variant::Hard,
        steps: 1,
        dt_s: 1.0,
        ee_pos_m: vec![vec![from, to]],
        ee_vel_mps: vec![vec![to - from]],
        dlv_pos_m: vec![vec![d, d]],
        actions: vec![vec![Action::Move; 2]],
        objective: ObjectiveParts::default(),
        completion_step: 0,
    };
    let tol = VerifyTolerances::default();
    // both endpoints are clear of the obstacle, but no single region holds both
    let cut = verify_plan(&hop(Vec3::new(0.30, 0.0, 0.08), Vec3::new(0.40, 0.15, 0.08)), &s, &params, &tol);
    if cut.collision.passed {
        return Err("corner-cutting step was accepted".into());
    }
    let detour = verify_plan(&hop(Vec3::new(0.30, 0.0, 0.08), Vec3::new(0.30, 0.15, 0.08)), &s, &params, &tol);
    if !detour.passed() {
        return Err(format!("step inside one region was rejected:\n{detour}"));
    }
    Ok(())
}

fn round_trip(records: &[BenchRecord]) -> Outcome {
    let with_plan: Vec<&BenchRecord> = records.iter().filter(|r| r.has_plan()).collect();
    if let Some(r) = with_plan.iter().find(|r| !r.verify_pass) {
        return Outcome::new(false, format!("scenario {} {} ({} steps) failed verification", r.scenario_id, r.variant, r.steps));
    }
    if let Err(e) = corner_cut_rejected() {
        return Outcome::new(false, e);
    }
    Outcome::new(true, format!("{}/{} plans verified; corner cut rejected", with_plan.len(), records.len()))
}

// ---------------------------------------------------------------- 9

fn determinism() -> Outcome {
    let config = BenchConfig { seed: 3, instances: 3, n_dlv: 1, steps: Some(8), ..acceptance_config() };
    let mut bytes = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().expect("temp dir");
        let out = run_benchmark(&config).and_then(|o| write_outputs(&o, dir.path()));
        if let Err(e) = out {
            return Outcome::new(false, e.to_string());
        }
        bytes.push(std::fs::read(dir.path().join("records.csv")).expect("records.csv written"));
    }
    Outcome::new(bytes[0] == bytes[1], format!("two runs, {} bytes of records.csv each", bytes[0].len()))
}

fn main() -> ExitCode {
    let mut all_pass = true;
    let mut report = |n: usize, name: &str, started: Instant, o: Outcome| {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {n}. {name} ({:.1} s): {}", started.elapsed().as_secs_f64(), o.detail);
        all_pass &= o.pass;
    };

    let t = Instant::now();
    report(1, "logic-encoding exhaustion", t, logic_exhaustion());
    let t = Instant::now();
    report(2, "solver oracle equivalence", t, solver_oracle());
    let t = Instant::now();
    report(3, "region soundness", t, region_soundness());
    let t = Instant::now();
    report(4, "binary-count reduction", t, binary_reduction());

    let t = Instant::now();
    let single = BenchConfig { seed: 1, instances: 12, n_dlv: 1, steps: Some(10), ..acceptance_config() };
    let mut records = Vec::new();
    for config in [single, two_delivery_config()] {
        match run_benchmark(&config) {
            Ok(out) => records.extend(out.records),
            Err(e) => {
                println!("[FAIL] benchmark run for criteria 5 to 8: {e}");
                return ExitCode::FAILURE;
            }
        }
    }
    // scenario ids restart per set; the horizon tells the sets apart
    let all = instances(&records);
    let solved: Vec<&Instance> = all.iter().filter(|i| i.baseline.is_optimal() && i.hard.is_optimal()).collect();
    let bench_time = t.elapsed().as_secs_f64();
    println!("       benchmark for 5 to 8: {} instances, {bench_time:.1} s", all.len());
    let t = Instant::now();
    report(5, "reformulation equivalence", t, reformulation(&solved));
    report(6, "soft-variant quality", t, soft_quality(&solved));
    report(7, "search-effort direction", t, search_effort(&solved));
    report(8, "round-trip safety", t, round_trip(&records));

    let t = Instant::now();
    report(9, "determinism", t, determinism());

    if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
