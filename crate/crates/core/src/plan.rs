//! Plans read back from solved models, and an independent checker for them.
//!
//! [`extract_plan`] is the only place that looks at MILP variables. The
//! verifier works on the extracted [`Plan`] and the scenario alone, redoing
//! the physics and the region geometry from scratch.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Axis, RegionSet, Vec3};
use crate::solver::Solution;
use crate::tamp::{sym, weight_w, Params, SceneRegions, Scenario, TampError, VariableLayout, Variant};

const ON: f64 = 0.5;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("solution carries no values (status {0})")]
    NoSolution(&'static str),
    #[error("conflicting actions for end effector {i} at step {t}: {detail}")]
    ConflictingActions { i: usize, t: usize, detail: String },
    #[error("solution has {got} values, layout expects {want}")]
    ShapeMismatch { got: usize, want: usize },
    #[error(transparent)]
    Model(#[from] TampError),
    #[error("cannot parse plan: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("cannot write trace: {0}")]
    Csv(#[from] csv::Error),
    #[error("cannot write trace: {0}")]
    Io(#[from] std::io::Error),
}

/// What one end effector does at one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Move,
    Pick(usize),
    Place(usize),
    Carry(usize),
}

impl Action {
    /// Delivery held during this step (picked or carried).
    pub fn holds(self) -> Option<usize> {
        match self {
            Action::Pick(j) | Action::Carry(j) => Some(j),
            _ => None,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Move => f.write_str("move"),
            Action::Pick(j) => write!(f, "pick:{j}"),
            Action::Place(j) => write!(f, "place:{j}"),
            Action::Carry(j) => write!(f, "carry:{j}"),
        }
    }
}

impl FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "move" {
            return Ok(Action::Move);
        }
        let (kind, j) = s.split_once(':').ok_or_else(|| format!("bad action `{s}`"))?;
        let j: usize = j.parse().map_err(|_| format!("bad delivery index in `{s}`"))?;
        match kind {
            "pick" => Ok(Action::Pick(j)),
            "place" => Ok(Action::Place(j)),
            "carry" => Ok(Action::Carry(j)),
            _ => Err(format!("bad action `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjectiveParts {
    pub j_time: f64,
    pub j_dist: f64,
    /// Zero unless the variant is `hard_soft`.
    pub j_route: f64,
}

impl ObjectiveParts {
    pub fn total(&self) -> f64 {
        self.j_time + self.j_dist + self.j_route
    }
}

/// Trajectories and actions of a solved instance.
///
/// Positions have `steps + 1` samples, velocities `steps`. Actions have
/// `steps + 1` entries so that a place on the last step is representable;
/// the entry at step 0 is always `Move`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub variant: Variant,
    pub steps: usize,
    pub dt_s: f64,
    /// `[i][t]`
    pub ee_pos_m: Vec<Vec<Vec3>>,
    /// `[i][t]`
    pub ee_vel_mps: Vec<Vec<Vec3>>,
    /// `[j][t]`
    pub dlv_pos_m: Vec<Vec<Vec3>>,
    /// `[i][t]`
    pub actions: Vec<Vec<Action>>,
    pub objective: ObjectiveParts,
    /// First step whose completion flag is set.
    pub completion_step: usize,
}

impl Plan {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PlanError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Writes `t,i,x,y,z,action` rows, one per end effector and step.
    pub fn write_trace<W: Write>(&self, out: W) -> Result<(), PlanError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "i", "x", "y", "z", "action"])?;
        for (i, traj) in self.ee_pos_m.iter().enumerate() {
            for (t, p) in traj.iter().enumerate() {
                w.write_record([
                    t.to_string(),
                    i.to_string(),
                    p.x.to_string(),
                    p.y.to_string(),
                    p.z.to_string(),
                    self.actions[i][t].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    fn check_shape(&self, scenario: &Scenario, params: &Params) -> Result<(), String> {
        let (n, ne, nd) = (self.steps, scenario.end_effectors.len(), scenario.deliveries.len());
        if n != params.steps || self.dt_s != params.dt_s {
            return Err(format!("plan has {n} steps of {} s, params ask for {} of {} s", self.dt_s, params.steps, params.dt_s));
        }
        let ok = self.ee_pos_m.len() == ne
            && self.ee_vel_mps.len() == ne
            && self.actions.len() == ne
            && self.dlv_pos_m.len() == nd
            && self.ee_pos_m.iter().all(|v| v.len() == n + 1)
            && self.ee_vel_mps.iter().all(|v| v.len() == n)
            && self.actions.iter().all(|v| v.len() == n + 1)
            && self.dlv_pos_m.iter().all(|v| v.len() == n + 1)
            && self.completion_step <= n;
        if ok {
            Ok(())
        } else {
            Err(format!("plan shape does not match {ne} end effectors, {nd} deliveries and {n} steps"))
        }
    }
}

fn point(values: &[f64], l: &VariableLayout, symbol: &str, body: usize, t: usize) -> Vec3 {
    let [x, y, z] = l.vec3(symbol, body, t);
    Vec3::new(values[x.0], values[y.0], values[z.0])
}

/// Reads trajectories, actions and the objective split out of a solution.
pub fn extract_plan(
    solution: &Solution,
    layout: &VariableLayout,
    scenario: &Scenario,
    params: &Params,
) -> Result<Plan, PlanError> {
    if !solution.has_values() {
        return Err(PlanError::NoSolution(solution.status.label()));
    }
    let x = &solution.values;
    if x.len() < layout.len() {
        return Err(PlanError::ShapeMismatch { got: x.len(), want: layout.len() });
    }
    let n = params.steps;
    let (ne, nd) = (scenario.end_effectors.len(), scenario.deliveries.len());
    let on = |symbol: &str, idx: &[usize]| x[layout.var(symbol, idx).0] >= ON;

    let ee_pos_m = (0..ne).map(|i| (0..=n).map(|t| point(x, layout, sym::EE_POS, i, t)).collect()).collect();
    let ee_vel_mps = (0..ne).map(|i| (0..n).map(|t| point(x, layout, sym::EE_VEL, i, t)).collect()).collect();
    let dlv_pos_m = (0..nd).map(|j| (0..=n).map(|t| point(x, layout, sym::DLV_POS, j, t)).collect()).collect();

    let mut actions = vec![vec![Action::Move; n + 1]; ne];
    for (i, row) in actions.iter_mut().enumerate() {
        for (t, slot) in row.iter_mut().enumerate() {
            let mut found = Vec::new();
            for j in 0..nd {
                if on(sym::PICK, &[i, j, t]) {
                    found.push(Action::Pick(j));
                }
                if on(sym::PLACE, &[i, j, t]) {
                    found.push(Action::Place(j));
                }
                if on(sym::CARRY, &[i, j, t]) {
                    found.push(Action::Carry(j));
                }
            }
            match found.as_slice() {
                [] => {}
                [a] => *slot = *a,
                many => {
                    let detail = many.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(", ");
                    return Err(PlanError::ConflictingActions { i, t, detail });
                }
            }
        }
    }

    let complete: Vec<bool> = (0..=n).map(|t| on(sym::COMPLETE, &[t])).collect();
    let j_time = complete.iter().filter(|c| !**c).count() as f64 / (n as f64 + 1.0);
    let mut j_dist = 0.0;
    for t in 0..n {
        let w = weight_w(t, params, scenario)?;
        for i in 0..ne {
            for u in layout.vec3(sym::EE_SPEED, i, t) {
                j_dist += w * x[u.0];
            }
        }
    }
    let mut j_route = 0.0;
    if params.variant == Variant::HardSoft {
        for (i, per_dlv) in layout.restricted.iter().enumerate() {
            for (j, per_t) in per_dlv.iter().enumerate() {
                for (t, rs) in per_t.iter().enumerate() {
                    j_route += rs.iter().filter(|&&r| on(sym::EE_DLV, &[i, j, r, t])).count() as f64;
                }
            }
        }
    }
    let completion_step = complete.iter().position(|&c| c).unwrap_or(n);

    Ok(Plan {
        variant: params.variant,
        steps: n,
        dt_s: params.dt_s,
        ee_pos_m,
        ee_vel_mps,
        dlv_pos_m,
        actions,
        objective: ObjectiveParts { j_time, j_dist, j_route },
        completion_step,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyTolerances {
    pub dynamics: f64,
    pub speed: f64,
    pub offset: f64,
    pub target: f64,
    pub region: f64,
}

impl Default for VerifyTolerances {
    fn default() -> Self {
        Self {
            dynamics: 1e-6,
            speed: 1e-6,
            offset: 1e-6,
            target: 1e-6,
            region: 1e-6,
        }
    }
}

/// First violation found by a check family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub t: usize,
    pub indices: Vec<usize>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CheckResult {
    pub passed: bool,
    pub first_failure: Option<Failure>,
}

impl CheckResult {
    fn run(check: impl FnOnce() -> Result<(), Failure>) -> Self {
        match check() {
            Ok(()) => Self { passed: true, first_failure: None },
            Err(f) => Self { passed: false, first_failure: Some(f) },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VerifyReport {
    pub dynamics: CheckResult,
    pub bounds: CheckResult,
    pub grasp: CheckResult,
    pub delivery_motion: CheckResult,
    pub completion: CheckResult,
    pub collision: CheckResult,
}

impl VerifyReport {
    pub fn families(&self) -> [(&'static str, &CheckResult); 6] {
        [
            ("dynamics", &self.dynamics),
            ("bounds", &self.bounds),
            ("grasp", &self.grasp),
            ("delivery_motion", &self.delivery_motion),
            ("completion", &self.completion),
            ("collision", &self.collision),
        ]
    }

    pub fn passed(&self) -> bool {
        self.families().iter().all(|(_, c)| c.passed)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, c) in self.families() {
            match &c.first_failure {
                None => writeln!(f, "{name:<16} pass")?,
                Some(fl) => writeln!(f, "{name:<16} FAIL at t={} {:?}: {}", fl.t, fl.indices, fl.message)?,
            }
        }
        write!(f, "overall          {}", if self.passed() { "pass" } else { "FAIL" })
    }
}

fn fail(t: usize, indices: &[usize], message: impl Into<String>) -> Failure {
    Failure { t, indices: indices.to_vec(), message: message.into() }
}

/// Checks a plan against the scenario's physics and collision rules.
pub fn verify_plan(plan: &Plan, scenario: &Scenario, params: &Params, tol: &VerifyTolerances) -> VerifyReport {
    if let Err(msg) = plan.check_shape(scenario, params) {
        let bad = CheckResult { passed: false, first_failure: Some(fail(0, &[], msg)) };
        return VerifyReport {
            dynamics: bad.clone(),
            bounds: bad.clone(),
            grasp: bad.clone(),
            delivery_motion: bad.clone(),
            completion: bad.clone(),
            collision: bad,
        };
    }
    VerifyReport {
        dynamics: CheckResult::run(|| check_dynamics(plan, tol)),
        bounds: CheckResult::run(|| check_bounds(plan, scenario, tol)),
        grasp: CheckResult::run(|| check_grasp(plan, scenario)),
        delivery_motion: CheckResult::run(|| check_delivery_motion(plan, scenario, tol)),
        completion: CheckResult::run(|| check_completion(plan, scenario, tol)),
        collision: CheckResult::run(|| check_collision(plan, scenario, tol)),
    }
}

fn check_dynamics(plan: &Plan, tol: &VerifyTolerances) -> Result<(), Failure> {
    for (i, (pos, vel)) in plan.ee_pos_m.iter().zip(&plan.ee_vel_mps).enumerate() {
        for t in 0..plan.steps {
            let r = (pos[t + 1] - pos[t] - vel[t] * plan.dt_s).linf();
            if r > tol.dynamics {
                return Err(fail(t, &[i], format!("position update residual {r:.3e} m")));
            }
        }
    }
    Ok(())
}

fn check_bounds(plan: &Plan, scenario: &Scenario, tol: &VerifyTolerances) -> Result<(), Failure> {
    let ws = &scenario.workspace;
    for (i, e) in scenario.end_effectors.iter().enumerate() {
        for (t, v) in plan.ee_vel_mps[i].iter().enumerate() {
            for a in Axis::ALL {
                if v[a].abs() > e.max_speed_mps[a] + tol.speed {
                    return Err(fail(t, &[i], format!("{} speed {:.6} exceeds {:.6}", a.name(), v[a].abs(), e.max_speed_mps[a])));
                }
            }
        }
        if plan.ee_pos_m[i][0] != e.initial_m && (plan.ee_pos_m[i][0] - e.initial_m).linf() > tol.target {
            return Err(fail(0, &[i], "end effector does not start at its initial position"));
        }
        for (t, &p) in plan.ee_pos_m[i].iter().enumerate() {
            if !ws.contains_within(p, tol.region) {
                return Err(fail(t, &[i], format!("end effector at {p} leaves the workspace")));
            }
        }
    }
    for (j, d) in scenario.deliveries.iter().enumerate() {
        if (plan.dlv_pos_m[j][0] - d.initial_m).linf() > tol.target {
            return Err(fail(0, &[j], "delivery does not start at its initial position"));
        }
        for (t, &p) in plan.dlv_pos_m[j].iter().enumerate() {
            if !ws.contains_within(p, tol.region) {
                return Err(fail(t, &[j], format!("delivery at {p} leaves the workspace")));
            }
        }
    }
    Ok(())
}

/// Grasp state `[i][j][t]` implied by the actions.
fn grasp_states(plan: &Plan, n_dlv: usize) -> Vec<Vec<Vec<bool>>> {
    plan.actions
        .iter()
        .map(|acts| (0..n_dlv).map(|j| acts.iter().map(|a| a.holds() == Some(j)).collect()).collect())
        .collect()
}

fn check_grasp(plan: &Plan, scenario: &Scenario) -> Result<(), Failure> {
    let nd = scenario.deliveries.len();
    for (i, acts) in plan.actions.iter().enumerate() {
        for (t, &a) in acts.iter().enumerate() {
            let j = match a {
                Action::Move => continue,
                Action::Pick(j) | Action::Place(j) | Action::Carry(j) => j,
            };
            if j >= nd {
                return Err(fail(t, &[i, j], format!("action {a} names a missing delivery")));
            }
            let held_before = t > 0 && acts[t - 1].holds() == Some(j);
            let ok = match a {
                Action::Pick(_) => !held_before,
                Action::Carry(_) | Action::Place(_) => held_before,
                Action::Move => true,
            };
            if !ok {
                return Err(fail(t, &[i, j], format!("{a} does not follow from the previous step ({})", if t > 0 { acts[t - 1].to_string() } else { "start".into() })));
            }
        }
        for t in 1..acts.len() {
            if let Some(j) = acts[t - 1].holds() {
                if acts[t] != Action::Carry(j) && acts[t] != Action::Place(j) {
                    return Err(fail(t, &[i, j], format!("delivery {j} dropped without a place ({})", acts[t])));
                }
            }
        }
    }
    let g = grasp_states(plan, nd);
    for j in 0..nd {
        for t in 0..=plan.steps {
            let holders: Vec<usize> = (0..g.len()).filter(|&i| g[i][j][t]).collect();
            if holders.len() > 1 {
                return Err(fail(t, &[j], format!("delivery {j} held by end effectors {holders:?}")));
            }
        }
    }
    Ok(())
}

fn check_delivery_motion(plan: &Plan, scenario: &Scenario, tol: &VerifyTolerances) -> Result<(), Failure> {
    let nd = scenario.deliveries.len();
    let g = grasp_states(plan, nd);
    for j in 0..nd {
        for t in 0..plan.steps {
            let held = g.iter().any(|gi| gi[j][t]);
            let moved = (plan.dlv_pos_m[j][t + 1] - plan.dlv_pos_m[j][t]).linf();
            if !held && moved > tol.offset {
                return Err(fail(t, &[j], format!("delivery {j} moves {moved:.3e} m while not held")));
            }
        }
    }
    for (i, acts) in plan.actions.iter().enumerate() {
        for (t, &a) in acts.iter().enumerate() {
            let (j, offset) = match a {
                Action::Move => continue,
                Action::Carry(j) => (j, scenario.contact_offset(i, j)),
                Action::Pick(j) | Action::Place(j) => (j, scenario.approach_offset(i, j)),
            };
            let want = plan.ee_pos_m[i][t] - offset;
            let err = (plan.dlv_pos_m[j][t] - want).linf();
            if err > tol.offset {
                return Err(fail(t, &[i, j], format!("{a}: delivery is {err:.3e} m off the gripper offset")));
            }
        }
    }
    Ok(())
}

fn check_completion(plan: &Plan, scenario: &Scenario, tol: &VerifyTolerances) -> Result<(), Failure> {
    let n = plan.steps;
    for (j, d) in scenario.deliveries.iter().enumerate() {
        let err = (plan.dlv_pos_m[j][n] - d.target_m).linf();
        if err > tol.target {
            return Err(fail(n, &[j], format!("delivery {j} ends {err:.3e} m from its target")));
        }
    }
    Ok(())
}

/// `true` when a closed region of `set` holds both points.
fn shares(set: &RegionSet, a: Vec3, b: Vec3, tol: f64) -> bool {
    set.shares_region(a, b, tol)
}

fn check_collision(plan: &Plan, scenario: &Scenario, tol: &VerifyTolerances) -> Result<(), Failure> {
    let regions = match SceneRegions::new(scenario) {
        Ok(r) => r,
        Err(e) => return Err(fail(0, &[], format!("region construction failed: {e}"))),
    };
    let r = tol.region;
    let dlv0: Vec<Vec3> = scenario.deliveries.iter().map(|d| d.initial_m).collect();
    // mover position in the frame where owner delivery `j` sits at its initial pose
    let rel = |p: Vec3, j: usize, t: usize| p - plan.dlv_pos_m[j][t] + dlv0[j];
    for t in 0..plan.steps {
        for (i, ee) in plan.ee_pos_m.iter().enumerate() {
            for (k, set) in regions.ee_obs[i].iter().enumerate() {
                if !shares(set, ee[t], ee[t + 1], r) {
                    return Err(fail(t, &[i, k], format!("end effector {i} cuts through obstacle {k}")));
                }
            }
            for (j, set) in regions.ee_dlv[i].iter().enumerate() {
                if !shares(set, rel(ee[t], j, t), rel(ee[t + 1], j, t + 1), r) {
                    return Err(fail(t, &[i, j], format!("end effector {i} cuts through delivery {j}")));
                }
            }
        }
        for (j, p) in plan.dlv_pos_m.iter().enumerate() {
            for (k, set) in regions.dlv_obs[j].iter().enumerate() {
                if !shares(set, p[t], p[t + 1], r) {
                    return Err(fail(t, &[j, k], format!("delivery {j} cuts through obstacle {k}")));
                }
            }
            for (j2, set) in regions.dlv_dlv[j].iter().enumerate() {
                let Some(set) = set else { continue };
                if !shares(set, rel(p[t], j2, t), rel(p[t + 1], j2, t + 1), r) {
                    return Err(fail(t, &[j, j2], format!("delivery {j} cuts through delivery {j2}")));
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_strings_round_trip() {
        for a in [Action::Move, Action::Pick(2), Action::Place(0), Action::Carry(11)] {
            assert_eq!(a.to_string().parse::<Action>().unwrap(), a);
        }
        assert!("lift:1".parse::<Action>().is_err());
        assert!("pick:x".parse::<Action>().is_err());
    }

    #[test]
    fn holds_covers_pick_and_carry() {
        assert_eq!(Action::Pick(1).holds(), Some(1));
        assert_eq!(Action::Carry(0).holds(), Some(0));
        assert_eq!(Action::Place(0).holds(), None);
        assert_eq!(Action::Move.holds(), None);
    }

    use crate::geometry::Aabb;
    use crate::solver::SolveStatus;
    use crate::tamp::{build, Delivery, EndEffector, SCENARIO_SCHEMA};

    fn scene(ee0: Vec3, dlv0: Vec3, target: Vec3) -> Scenario {
        Scenario {
            schema: SCENARIO_SCHEMA.into(),
            workspace: Aabb::new(Vec3::new(0.4, 0.0, 0.15), Vec3::new(0.8, 0.4, 0.3)),
            end_effectors: vec![EndEffector {
                width_m: Vec3::splat(0.05),
                initial_m: ee0,
                max_speed_mps: Vec3::new(0.4, 0.2, 0.2),
                margin_m: Vec3::new(0.0, 0.0, 0.02),
            }],
            deliveries: vec![Delivery { width_m: Vec3::new(0.05, 0.05, 0.04), initial_m: dlv0, target_m: target }],
            obstacles: vec![Aabb::new(Vec3::new(0.4, 0.0, 0.08), Vec3::new(0.06, 0.16, 0.1))],
        }
    }

    /// Solution vector with grasp-derived flags set the way the model defines them.
    fn flags_solution(s: &Scenario, p: &Params, grasp: &[bool], complete: &[bool]) -> (Solution, VariableLayout) {
        let (_, l, _) = build(s, p).unwrap();
        let mut x = vec![0.0; l.len()];
        for t in 0..=p.steps {
            let prev = t > 0 && grasp[t - 1];
            let g = grasp[t];
            x[l.var(sym::GRASP, &[0, 0, t]).0] = g as u8 as f64;
            x[l.var(sym::PICK, &[0, 0, t]).0] = (g && !prev) as u8 as f64;
            x[l.var(sym::PLACE, &[0, 0, t]).0] = (!g && prev) as u8 as f64;
            x[l.var(sym::CARRY, &[0, 0, t]).0] = (g && prev) as u8 as f64;
            x[l.var(sym::COMPLETE, &[t]).0] = complete[t] as u8 as f64;
        }
        (Solution { values: x, objective: 0.0, status: SolveStatus::Optimal }, l)
    }

    #[test]
    fn grasp_window_reads_as_pick_carry_place() {
        let s = scene(Vec3::new(0.4, 0.0, 0.25), Vec3::new(0.15, 0.1, 0.02), Vec3::new(0.65, -0.1, 0.02));
        let p = Params { steps: 10, ..Params::default() };
        let grasp: Vec<bool> = (0..=10).map(|t| (3..=7).contains(&t)).collect();
        let complete: Vec<bool> = (0..=10).map(|t| t >= 8).collect();
        let (sol, l) = flags_solution(&s, &p, &grasp, &complete);
        let plan = extract_plan(&sol, &l, &s, &p).unwrap();
        let want: Vec<Action> = (0..=10)
            .map(|t| match t {
                3 => Action::Pick(0),
                4..=7 => Action::Carry(0),
                8 => Action::Place(0),
                _ => Action::Move,
            })
            .collect();
        assert_eq!(plan.actions[0], want);
        assert_eq!(plan.completion_step, 8);
        assert!((plan.objective.j_time - 8.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn idle_solution_is_all_moves() {
        let at = Vec3::new(0.15, 0.1, 0.02);
        let s = scene(Vec3::new(0.4, 0.0, 0.25), at, at);
        let p = Params { steps: 6, ..Params::default() };
        let (sol, l) = flags_solution(&s, &p, &[false; 7], &[true; 7]);
        let plan = extract_plan(&sol, &l, &s, &p).unwrap();
        assert!(plan.actions[0].iter().all(|&a| a == Action::Move));
        assert_eq!(plan.objective.j_time, 0.0);
        assert_eq!(plan.completion_step, 0);
    }

    #[test]
    fn two_flags_at_once_is_an_error() {
        let s = scene(Vec3::new(0.4, 0.0, 0.25), Vec3::new(0.15, 0.1, 0.02), Vec3::new(0.65, -0.1, 0.02));
        let p = Params { steps: 4, ..Params::default() };
        let (mut sol, l) = flags_solution(&s, &p, &[false, true, true, false, false], &[false; 5]);
        sol.values[l.var(sym::PLACE, &[0, 0, 2]).0] = 1.0;
        assert!(matches!(extract_plan(&sol, &l, &s, &p), Err(PlanError::ConflictingActions { i: 0, t: 2, .. })));
    }

    #[test]
    fn empty_solution_is_rejected() {
        let s = scene(Vec3::new(0.4, 0.0, 0.25), Vec3::new(0.15, 0.1, 0.02), Vec3::new(0.65, -0.1, 0.02));
        let p = Params { steps: 4, ..Params::default() };
        let (_, l, _) = build(&s, &p).unwrap();
        let sol = Solution { values: vec![], objective: f64::NAN, status: SolveStatus::Timeout };
        assert!(matches!(extract_plan(&sol, &l, &s, &p), Err(PlanError::NoSolution("timeout"))));
    }

    /// One-step plan with the delivery already at its target.
    fn one_step(ee: [Vec3; 2], dlv: [Vec3; 2], s: &Scenario) -> Plan {
        Plan {
            variant: Variant::Hard,
            steps: 1,
            dt_s: 1.0,
            ee_pos_m: vec![ee.to_vec()],
            ee_vel_mps: vec![vec![ee[1] - ee[0]]],
            dlv_pos_m: vec![dlv.to_vec()],
            actions: vec![vec![Action::Move; 2]],
            objective: ObjectiveParts::default(),
            completion_step: if s.deliveries[0].initial_m == s.deliveries[0].target_m { 0 } else { 1 },
        }
    }

    fn one_step_params() -> Params {
        Params { steps: 1, dt_s: 1.0, ..Params::default() }
    }

    #[test]
    fn resting_plan_passes() {
        let d = Vec3::new(0.15, 0.1, 0.02);
        let e = Vec3::new(0.3, 0.0, 0.25);
        let s = scene(e, d, d);
        let report = verify_plan(&one_step([e, e], [d, d], &s), &s, &one_step_params(), &VerifyTolerances::default());
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn corner_cut_fails_collision() {
        // inflated obstacle spans x in [0.345, 0.455], y in [-0.105, 0.105]
        let (a, b) = (Vec3::new(0.30, 0.0, 0.08), Vec3::new(0.40, 0.15, 0.08));
        let d = Vec3::new(0.15, 0.1, 0.02);
        let s = scene(a, d, d);
        let report = verify_plan(&one_step([a, b], [d, d], &s), &s, &one_step_params(), &VerifyTolerances::default());
        assert!(!report.collision.passed);
        let f = report.collision.first_failure.as_ref().unwrap();
        assert_eq!((f.t, f.indices.as_slice()), (0, &[0, 0][..]));
        assert!(report.dynamics.passed && report.bounds.passed && report.delivery_motion.passed);

        // the same endpoints joined through a shared region are fine
        let c = Vec3::new(0.30, 0.15, 0.08);
        let report = verify_plan(&one_step([a, c], [d, d], &s), &s, &one_step_params(), &VerifyTolerances::default());
        assert!(report.collision.passed, "{report}");
    }

    #[test]
    fn ungrasped_delivery_move_fails_motion() {
        let (d0, d1) = (Vec3::new(0.15, 0.1, 0.02), Vec3::new(0.2, 0.1, 0.02));
        let e = Vec3::new(0.3, 0.0, 0.25);
        let s = scene(e, d0, d1);
        let report = verify_plan(&one_step([e, e], [d0, d1], &s), &s, &one_step_params(), &VerifyTolerances::default());
        assert!(!report.delivery_motion.passed);
        assert!(report.completion.passed);
        assert!(!report.passed());
    }

    #[test]
    fn bad_velocity_fails_dynamics() {
        let d = Vec3::new(0.15, 0.1, 0.02);
        let e = Vec3::new(0.3, 0.0, 0.25);
        let s = scene(e, d, d);
        let mut plan = one_step([e, e], [d, d], &s);
        plan.ee_vel_mps[0][0] = Vec3::new(0.1, 0.0, 0.0);
        let report = verify_plan(&plan, &s, &one_step_params(), &VerifyTolerances::default());
        assert!(!report.dynamics.passed);
        assert!(report.bounds.passed);
    }

    #[test]
    fn json_and_trace_round_trip() {
        let d = Vec3::new(0.15, 0.1, 0.02);
        let e = Vec3::new(0.3, 0.0, 0.25);
        let s = scene(e, d, d);
        let mut plan = one_step([e, e], [d, d], &s);
        plan.actions[0][1] = Action::Pick(0);
        assert_eq!(Plan::from_json(&plan.to_json()).unwrap(), plan);
        let mut buf = Vec::new();
        plan.write_trace(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,i,x,y,z,action");
        assert_eq!(lines.len(), 3);
        assert!(lines[2].ends_with(",pick:0"));
    }
}
