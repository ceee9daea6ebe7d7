//! Randomized desk-scale instances and variant comparison runs.
//!
//! Timing is kept out of `records.csv` so that a deterministic re-run
//! reproduces it byte for byte; wall times go to `timings.csv` and the
//! summary.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{inflate, Aabb, Axis, Vec3};
use crate::plan::{extract_plan, verify_plan, VerifyTolerances};
use crate::solver::{solve, SolveOptions, SolveStatus};
use crate::tamp::{build, Delivery, EndEffector, Params, RegionPolicy, Scenario, Variant, SCENARIO_SCHEMA};

/// Consecutive rejected draws before sampling gives up.
pub const MAX_REJECTIONS: usize = 10_000;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid bench config: {0}")]
    Config(String),
    #[error("placement area too constrained")]
    PlacementTooConstrained,
    #[error("cannot read or write bench files: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse bench config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cannot write records: {0}")]
    Csv(#[from] csv::Error),
}

/// Fixed geometry shared by every sampled instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub workspace: Aabb,
    pub end_effector: EndEffector,
    pub delivery_width_m: Vec3,
    pub obstacles: Vec<Aabb>,
    /// Region delivery centers are drawn from.
    pub placement: Aabb,
    pub dt_s: f64,
}

impl Preset {
    /// A 0.8 × 0.4 × 0.3 m table-top cell with one block in the middle.
    ///
    /// Deliveries rest on the table, so the placement slab has zero height.
    /// Gripper and deliveries share a 5 cm footprint.
    pub fn desk() -> Self {
        Self {
            workspace: Aabb::new(Vec3::new(0.4, 0.0, 0.15), Vec3::new(0.8, 0.4, 0.3)),
            end_effector: EndEffector {
                width_m: Vec3::splat(0.05),
                initial_m: Vec3::new(0.4, 0.0, 0.25),
                max_speed_mps: Vec3::new(0.4, 0.2, 0.2),
                margin_m: Vec3::new(0.0, 0.0, 0.02),
            },
            delivery_width_m: Vec3::new(0.05, 0.05, 0.04),
            obstacles: vec![Aabb::new(Vec3::new(0.4, 0.0, 0.08), Vec3::new(0.06, 0.16, 0.1))],
            placement: Aabb::from_bounds(Vec3::new(0.05, -0.15, 0.02), Vec3::new(0.75, 0.15, 0.02)),
            dt_s: 0.5,
        }
    }
}

impl Default for Preset {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub seed: u64,
    pub instances: usize,
    pub n_dlv: usize,
    /// Horizon is this many steps per delivery unless `steps` is set.
    pub steps_per_delivery: usize,
    pub steps: Option<usize>,
    /// Horizons to sweep; overrides both fields above when non-empty.
    pub sweep: Vec<usize>,
    pub alpha: f64,
    pub preset: Preset,
    pub variants: Vec<Variant>,
    pub solve: SolveOptions,
    /// Cells solved concurrently.
    pub jobs: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            instances: 10,
            n_dlv: 1,
            steps_per_delivery: 15,
            steps: None,
            sweep: Vec::new(),
            alpha: 1.0,
            preset: Preset::desk(),
            variants: Variant::ALL.to_vec(),
            solve: SolveOptions::default(),
            jobs: 1,
        }
    }
}

impl BenchConfig {
    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: &str| Err(BenchError::Config(m.into()));
        if self.instances == 0 {
            return bad("instance count must be at least 1");
        }
        if self.n_dlv == 0 {
            return bad("at least one delivery is required");
        }
        if self.variants.is_empty() {
            return bad("no variants selected");
        }
        if self.horizons().contains(&0) {
            return bad("horizon must be at least one step");
        }
        if !(self.preset.dt_s > 0.0 && self.preset.dt_s.is_finite()) {
            return bad("time step must be positive");
        }
        if !self.preset.placement.is_valid() || !self.preset.workspace.contains_box(&self.preset.placement) {
            return bad("placement slab must lie inside the workspace");
        }
        Ok(())
    }

    /// Horizons each instance is solved with.
    pub fn horizons(&self) -> Vec<usize> {
        if !self.sweep.is_empty() {
            self.sweep.clone()
        } else {
            vec![self.steps.unwrap_or(self.steps_per_delivery * self.n_dlv)]
        }
    }

    pub fn params(&self, variant: Variant, steps: usize) -> Params {
        Params {
            dt_s: self.preset.dt_s,
            steps,
            alpha: self.alpha,
            variant,
            restricted_regions: RegionPolicy::default(),
        }
    }
}

fn draw(rng: &mut ChaCha8Rng, slab: &Aabb) -> Vec3 {
    Vec3::from_fn(|a| {
        let (lo, hi) = (slab.lo(a), slab.hi(a));
        if hi > lo {
            rng.gen_range(lo..=hi)
        } else {
            lo
        }
    })
}

/// Center-to-center separation along the worst axis.
fn separation(a: Vec3, b: Vec3) -> f64 {
    (a - b).linf()
}

/// Samples `config.instances` scenarios from the seeded stream.
pub fn sample_scenarios(config: &BenchConfig) -> Result<Vec<Scenario>, BenchError> {
    config.validate()?;
    let p = &config.preset;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let width = p.delivery_width_m;
    let min_sep = Axis::ALL.iter().map(|&a| width[a]).fold(0.0, f64::max);
    let blocked: Vec<Aabb> = p.obstacles.iter().map(|o| inflate(o, width)).collect();
    let mut rejections = 0;
    let reject = |n: &mut usize| {
        *n += 1;
        if *n >= MAX_REJECTIONS {
            Err(BenchError::PlacementTooConstrained)
        } else {
            Ok(())
        }
    };

    let mut out = Vec::with_capacity(config.instances);
    while out.len() < config.instances {
        let mut initials: Vec<Vec3> = Vec::new();
        let mut targets: Vec<Vec3> = Vec::new();
        while initials.len() < config.n_dlv {
            let c = draw(&mut rng, &p.placement);
            if blocked.iter().any(|b| b.interior_contains(c)) || initials.iter().any(|&o| separation(o, c) < min_sep) {
                reject(&mut rejections)?;
                continue;
            }
            initials.push(c);
            rejections = 0;
        }
        while targets.len() < config.n_dlv {
            let c = draw(&mut rng, &p.placement);
            if blocked.iter().any(|b| b.interior_contains(c))
                || targets.iter().any(|&o| separation(o, c) < min_sep)
                || c == initials[targets.len()]
            {
                reject(&mut rejections)?;
                continue;
            }
            targets.push(c);
            rejections = 0;
        }
        let s = Scenario {
            schema: SCENARIO_SCHEMA.into(),
            workspace: p.workspace,
            end_effectors: vec![p.end_effector.clone()],
            deliveries: initials
                .into_iter()
                .zip(targets)
                .map(|(initial_m, target_m)| Delivery { width_m: width, initial_m, target_m })
                .collect(),
            obstacles: p.obstacles.clone(),
        };
        if let Err(e) = s.validate() {
            log::debug!("rejected sampled scenario: {e}");
            reject(&mut rejections)?;
            continue;
        }
        out.push(s);
    }
    Ok(out)
}

/// One (scenario, horizon, variant) cell. Wall time is not part of the
/// CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub scenario_id: usize,
    pub n_dlv: usize,
    pub steps: usize,
    pub variant: Variant,
    pub status: String,
    pub objective: Option<f64>,
    pub j_time: Option<f64>,
    pub j_dist: Option<f64>,
    pub j_route: Option<f64>,
    pub completion_step: Option<usize>,
    pub binaries: usize,
    pub presolved_binaries: usize,
    pub nodes: u64,
    pub lp_solves: u64,
    pub gap: Option<f64>,
    pub verify_pass: bool,
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl BenchRecord {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal.label()
    }

    pub fn has_plan(&self) -> bool {
        self.objective.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub median: f64,
    pub p25: f64,
    pub p75: f64,
}

impl Spread {
    /// `None` for an empty sample. Quartiles interpolate linearly.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let x = p * (v.len() - 1) as f64;
            let (i, f) = (x.floor() as usize, x.fract());
            if i + 1 < v.len() {
                v[i] + f * (v[i + 1] - v[i])
            } else {
                v[i]
            }
        };
        Some(Self {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            median: q(0.5),
            p25: q(0.25),
            p75: q(0.75),
        })
    }
}

/// Statistics of one (horizon, variant) group. Effort and cost spreads are
/// taken over optimally solved cells only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub steps: usize,
    pub variant: Variant,
    pub cells: usize,
    pub optimal: usize,
    pub feasible: usize,
    pub infeasible: usize,
    pub timeout: usize,
    pub verify_failures: usize,
    pub wall_time_s: Option<Spread>,
    pub nodes: Option<Spread>,
    pub lp_solves: Option<Spread>,
    pub presolved_binaries: Option<Spread>,
    pub j_time: Option<Spread>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub seed: u64,
    pub instances: usize,
    pub n_dlv: usize,
    pub groups: Vec<GroupSummary>,
}

pub fn summarize(config: &BenchConfig, records: &[BenchRecord]) -> BenchSummary {
    let mut groups: BTreeMap<(usize, Variant), Vec<&BenchRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.steps, r.variant)).or_default().push(r);
    }
    let groups = groups
        .into_iter()
        .map(|((steps, variant), rs)| {
            let count = |label: &str| rs.iter().filter(|r| r.status == label).count();
            let opt: Vec<&&BenchRecord> = rs.iter().filter(|r| r.is_optimal()).collect();
            let spread = |f: &dyn Fn(&BenchRecord) -> f64| Spread::of(&opt.iter().map(|r| f(r)).collect::<Vec<_>>());
            GroupSummary {
                steps,
                variant,
                cells: rs.len(),
                optimal: opt.len(),
                feasible: rs.iter().filter(|r| r.status.starts_with("feasible")).count(),
                infeasible: count(SolveStatus::Infeasible.label()),
                timeout: count(SolveStatus::Timeout.label()),
                verify_failures: rs.iter().filter(|r| r.has_plan() && !r.verify_pass).count(),
                wall_time_s: spread(&|r| r.wall_time_s),
                nodes: spread(&|r| r.nodes as f64),
                lp_solves: spread(&|r| r.lp_solves as f64),
                presolved_binaries: spread(&|r| r.presolved_binaries as f64),
                j_time: spread(&|r| r.j_time.unwrap_or(f64::NAN)),
            }
        })
        .collect();
    BenchSummary { seed: config.seed, instances: config.instances, n_dlv: config.n_dlv, groups }
}

/// Builds, solves, extracts and verifies one cell.
pub fn run_cell(config: &BenchConfig, scenario_id: usize, scenario: &Scenario, steps: usize, variant: Variant) -> BenchRecord {
    let params = config.params(variant, steps);
    let mut rec = BenchRecord {
        scenario_id,
        n_dlv: scenario.deliveries.len(),
        steps,
        variant,
        status: String::new(),
        objective: None,
        j_time: None,
        j_dist: None,
        j_route: None,
        completion_step: None,
        binaries: 0,
        presolved_binaries: 0,
        nodes: 0,
        lp_solves: 0,
        gap: None,
        verify_pass: false,
        wall_time_s: 0.0,
    };
    let start = Instant::now();
    let (model, layout, report) = match build(scenario, &params) {
        Ok(b) => b,
        Err(e) => {
            log::warn!("scenario {scenario_id} {variant} N={steps}: {e}");
            rec.status = "build_error".into();
            return rec;
        }
    };
    rec.binaries = report.binaries;
    let (sol, stats) = solve(&model, &config.solve);
    rec.wall_time_s = start.elapsed().as_secs_f64();
    rec.status = sol.status.label().into();
    rec.presolved_binaries = stats.presolved_binaries;
    rec.nodes = stats.nodes;
    rec.lp_solves = stats.lp_solves;
    rec.gap = stats.gap.is_finite().then_some(stats.gap);
    if sol.has_values() {
        rec.objective = Some(sol.objective);
        match extract_plan(&sol, &layout, scenario, &params) {
            Ok(plan) => {
                rec.j_time = Some(plan.objective.j_time);
                rec.j_dist = Some(plan.objective.j_dist);
                rec.j_route = Some(plan.objective.j_route);
                rec.completion_step = Some(plan.completion_step);
                let report = verify_plan(&plan, scenario, &params, &VerifyTolerances::default());
                rec.verify_pass = report.passed();
                if !rec.verify_pass {
                    log::warn!("scenario {scenario_id} {variant} N={steps} failed verification\n{report}");
                }
            }
            Err(e) => log::warn!("scenario {scenario_id} {variant} N={steps}: {e}"),
        }
    }
    log::info!(
        "scenario {scenario_id} {variant} N={steps}: {} nodes={} in {:.2}s",
        rec.status,
        rec.nodes,
        rec.wall_time_s
    );
    rec
}

#[derive(Debug, Clone)]
pub struct BenchOutput {
    pub scenarios: Vec<Scenario>,
    /// Ordered by scenario, horizon, then variant as configured.
    pub records: Vec<BenchRecord>,
    pub summary: BenchSummary,
}

pub fn run_benchmark(config: &BenchConfig) -> Result<BenchOutput, BenchError> {
    let scenarios = sample_scenarios(config)?;
    let horizons = config.horizons();
    let mut cells = Vec::new();
    for id in 0..scenarios.len() {
        for &n in &horizons {
            for &v in &config.variants {
                cells.push((id, n, v));
            }
        }
    }
    let run = |&(id, n, v): &(usize, usize, Variant)| run_cell(config, id, &scenarios[id], n, v);
    let records = run_cells(config.jobs, &cells, run);
    let summary = summarize(config, &records);
    Ok(BenchOutput { scenarios, records, summary })
}

#[cfg(feature = "parallel")]
fn run_cells<T, F>(jobs: usize, cells: &[T], f: F) -> Vec<BenchRecord>
where
    T: Sync,
    F: Fn(&T) -> BenchRecord + Sync + Send,
{
    use rayon::prelude::*;
    if jobs <= 1 {
        return cells.iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(|| cells.par_iter().map(&f).collect()),
        Err(e) => {
            log::warn!("cannot start {jobs} bench workers ({e}); running sequentially");
            cells.iter().map(f).collect()
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn run_cells<T, F>(_jobs: usize, cells: &[T], f: F) -> Vec<BenchRecord>
where
    F: Fn(&T) -> BenchRecord,
{
    cells.iter().map(f).collect()
}

pub fn write_records<W: std::io::Write>(records: &[BenchRecord], out: W) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<BenchRecord>, BenchError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

pub fn write_timings<W: std::io::Write>(records: &[BenchRecord], out: W) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["scenario_id", "steps", "variant", "wall_time_s"])?;
    for r in records {
        w.write_record([r.scenario_id.to_string(), r.steps.to_string(), r.variant.name().into(), format!("{:.6}", r.wall_time_s)])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `records.csv`, `timings.csv`, `summary.json` and the sampled
/// scenarios into `dir`.
pub fn write_outputs(output: &BenchOutput, dir: &Path) -> Result<(), BenchError> {
    fs::create_dir_all(dir)?;
    write_records(&output.records, fs::File::create(dir.join("records.csv"))?)?;
    write_timings(&output.records, fs::File::create(dir.join("timings.csv"))?)?;
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&output.summary)?)?;
    let sc = dir.join("scenarios");
    fs::create_dir_all(&sc)?;
    for (id, s) in output.scenarios.iter().enumerate() {
        fs::write(sc.join(format!("{id:04}.json")), s.to_json())?;
    }
    Ok(())
}
