//! Pick-and-place scenarios and the three MILP formulations built from them.
//!
//! Every constraint carries a role tag (`ee_dynamics`, `carry_offset`, ...);
//! [`BuildReport::per_tag`] counts rows per tag.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    delivery_regions, obstacle_regions, Aabb, Axis, Face, GeometryError, Mover, RegionSet, Sign,
    Vec3,
};
use crate::milp::{LinExpr, Lit, MilpModel, ModelError, Sense, VarId, VarKind, VarTag};

pub const SCENARIO_SCHEMA: &str = "tamp-scenario/1";

#[derive(Debug, Error)]
pub enum TampError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("infeasible scenario: {0}")]
    InfeasibleScenario(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndEffector {
    pub width_m: Vec3,
    pub initial_m: Vec3,
    pub max_speed_mps: Vec3,
    /// Extra approach offset on top of the contact offset when not carrying.
    pub margin_m: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delivery {
    pub width_m: Vec3,
    pub initial_m: Vec3,
    pub target_m: Vec3,
}

impl Delivery {
    pub fn initial_box(&self) -> Aabb {
        Aabb::new(self.initial_m, self.width_m)
    }

    pub fn target_box(&self) -> Aabb {
        Aabb::new(self.target_m, self.width_m)
    }
}

/// Positions are body centers; the workspace bounds every center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema: String,
    pub workspace: Aabb,
    pub end_effectors: Vec<EndEffector>,
    pub deliveries: Vec<Delivery>,
    #[serde(default)]
    pub obstacles: Vec<Aabb>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    Hard,
    HardSoft,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Baseline, Variant::Hard, Variant::HardSoft];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Hard => "hard",
            Variant::HardSoft => "hard_soft",
        }
    }

    /// Whether delivery region indicators are tied to the carrying gripper.
    pub fn ties_carried_regions(self) -> bool {
        self != Variant::Baseline
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "hard" => Ok(Variant::Hard),
            "hard_soft" | "hard+soft" => Ok(Variant::HardSoft),
            _ => Err(format!("unknown variant `{s}` (baseline, hard, hard_soft)")),
        }
    }
}

/// How the penalized regions around each delivery are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionPolicy {
    /// Bottom face plus both faces of the horizontal axis along which the
    /// gripper travels less to the farthest target. Ties go to y.
    #[default]
    LesserHorizontalAxis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Params {
    pub dt_s: f64,
    pub steps: usize,
    pub alpha: f64,
    pub variant: Variant,
    pub restricted_regions: RegionPolicy,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            dt_s: 0.5,
            steps: 15,
            alpha: 1.0,
            variant: Variant::Hard,
            restricted_regions: RegionPolicy::LesserHorizontalAxis,
        }
    }
}

impl Params {
    pub fn validate(&self) -> Result<(), TampError> {
        if !(self.dt_s > 0.0 && self.dt_s.is_finite()) {
            return Err(TampError::InvalidParams(format!("dt_s must be positive, got {}", self.dt_s)));
        }
        if self.steps < 1 {
            return Err(TampError::InvalidParams("steps must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(TampError::InvalidParams(format!("alpha must be positive, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Region sets of every (owner, mover) pair, indexed the way the model is.
#[derive(Debug, Clone)]
pub struct SceneRegions {
    /// `[i][k]`
    pub ee_obs: Vec<Vec<RegionSet>>,
    /// `[i][j]`, delivery-relative frame of `j`.
    pub ee_dlv: Vec<Vec<RegionSet>>,
    /// `[j][k]`
    pub dlv_obs: Vec<Vec<RegionSet>>,
    /// `[j1][j2]`, `None` on the diagonal.
    pub dlv_dlv: Vec<Vec<Option<RegionSet>>>,
}

impl SceneRegions {
    pub fn new(s: &Scenario) -> Result<Self, GeometryError> {
        let ws = &s.workspace;
        let ee_obs = s
            .end_effectors
            .iter()
            .enumerate()
            .map(|(i, e)| {
                s.obstacles
                    .iter()
                    .enumerate()
                    .map(|(k, o)| obstacle_regions(o, k, ws, Mover::EndEffector(i), e.width_m))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        let ee_dlv = s
            .end_effectors
            .iter()
            .enumerate()
            .map(|(i, e)| {
                s.deliveries
                    .iter()
                    .enumerate()
                    .map(|(j, d)| {
                        delivery_regions(&d.initial_box(), j, ws, Mover::EndEffector(i), e.width_m)
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        let dlv_obs = s
            .deliveries
            .iter()
            .enumerate()
            .map(|(j, d)| {
                s.obstacles
                    .iter()
                    .enumerate()
                    .map(|(k, o)| obstacle_regions(o, k, ws, Mover::Delivery(j), d.width_m))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        let dlv_dlv = s
            .deliveries
            .iter()
            .enumerate()
            .map(|(j1, d1)| {
                s.deliveries
                    .iter()
                    .enumerate()
                    .map(|(j2, d2)| {
                        if j1 == j2 {
                            Ok(None)
                        } else {
                            delivery_regions(&d2.initial_box(), j2, ws, Mover::Delivery(j1), d1.width_m)
                                .map(Some)
                        }
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { ee_obs, ee_dlv, dlv_obs, dlv_dlv })
    }

    /// Faces that exist for obstacle `k` against at least one mover.
    pub fn obstacle_faces(&self, k: usize) -> Vec<Face> {
        let sets = self
            .ee_obs
            .iter()
            .map(|row| &row[k])
            .chain(self.dlv_obs.iter().map(|row| &row[k]));
        union_faces(sets)
    }

    /// Faces that exist for delivery `j` against at least one mover.
    pub fn delivery_faces(&self, j: usize) -> Vec<Face> {
        let sets = self
            .ee_dlv
            .iter()
            .map(|row| &row[j])
            .chain(self.dlv_dlv.iter().filter_map(|row| row[j].as_ref()));
        union_faces(sets)
    }
}

fn union_faces<'a>(sets: impl Iterator<Item = &'a RegionSet>) -> Vec<Face> {
    let mut present = [false; 6];
    for set in sets {
        for f in set.faces() {
            present[f.index()] = true;
        }
    }
    Face::ALL.into_iter().filter(|f| present[f.index()]).collect()
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, TampError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, TampError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn contact_offset(&self, i: usize, j: usize) -> Vec3 {
        let w = self.end_effectors[i].width_m + self.deliveries[j].width_m;
        Vec3::new(0.0, 0.0, 0.5 * w.z)
    }

    pub fn approach_offset(&self, i: usize, j: usize) -> Vec3 {
        self.contact_offset(i, j) + self.end_effectors[i].margin_m
    }

    /// Structural checks plus the collision-freedom of every fixed pose.
    pub fn validate(&self) -> Result<(), TampError> {
        if self.schema != SCENARIO_SCHEMA {
            return Err(TampError::Invalid(format!(
                "schema `{}` is not `{SCENARIO_SCHEMA}`",
                self.schema
            )));
        }
        if self.end_effectors.is_empty() {
            return Err(TampError::Invalid("at least one end effector is required".into()));
        }
        if self.deliveries.is_empty() {
            return Err(TampError::Invalid("at least one delivery is required".into()));
        }
        let ws = &self.workspace;
        if !ws.is_valid() {
            return Err(TampError::Invalid("workspace has negative or non-finite width".into()));
        }
        for (i, e) in self.end_effectors.iter().enumerate() {
            let ok = e.width_m.is_finite()
                && e.width_m.min_component() >= 0.0
                && e.max_speed_mps.is_finite()
                && e.max_speed_mps.min_component() >= 0.0
                && e.margin_m.is_finite();
            if !ok {
                return Err(TampError::Invalid(format!("end effector {i} has invalid sizes or speeds")));
            }
            if !ws.contains_within(e.initial_m, 0.0) {
                return Err(TampError::Invalid(format!("end effector {i} starts outside the workspace")));
            }
        }
        for (j, d) in self.deliveries.iter().enumerate() {
            if !(d.width_m.is_finite() && d.width_m.min_component() >= 0.0) {
                return Err(TampError::Invalid(format!("delivery {j} has an invalid width")));
            }
            for (what, p) in [("initial", d.initial_m), ("target", d.target_m)] {
                if !ws.contains_within(p, 0.0) {
                    return Err(TampError::Invalid(format!(
                        "delivery {j} {what} position lies outside the workspace"
                    )));
                }
            }
        }
        for (k, o) in self.obstacles.iter().enumerate() {
            if !o.is_valid() {
                return Err(TampError::Invalid(format!("obstacle {k} has an invalid width")));
            }
        }
        self.check_collisions()
    }

    fn check_collisions(&self) -> Result<(), TampError> {
        for (j, d) in self.deliveries.iter().enumerate() {
            for (k, o) in self.obstacles.iter().enumerate() {
                for (what, b) in [("initial", d.initial_box()), ("target", d.target_box())] {
                    if b.interiors_overlap(o) {
                        return Err(TampError::InfeasibleScenario(format!(
                            "delivery {j} {what} position overlaps obstacle {k}"
                        )));
                    }
                }
            }
            for (j2, d2) in self.deliveries.iter().enumerate().skip(j + 1) {
                if d.initial_box().interiors_overlap(&d2.initial_box()) {
                    return Err(TampError::InfeasibleScenario(format!(
                        "delivery {j} initial position overlaps delivery {j2}"
                    )));
                }
                if d.target_box().interiors_overlap(&d2.target_box()) {
                    return Err(TampError::InfeasibleScenario(format!(
                        "delivery {j} target position overlaps delivery {j2}"
                    )));
                }
            }
        }
        for (i, e) in self.end_effectors.iter().enumerate() {
            let b = Aabb::new(e.initial_m, e.width_m);
            for (k, o) in self.obstacles.iter().enumerate() {
                if b.interiors_overlap(o) {
                    return Err(TampError::InfeasibleScenario(format!(
                        "end effector {i} starts inside obstacle {k}"
                    )));
                }
            }
            for (j, d) in self.deliveries.iter().enumerate() {
                if b.interiors_overlap(&d.initial_box()) {
                    return Err(TampError::InfeasibleScenario(format!(
                        "end effector {i} starts inside delivery {j}"
                    )));
                }
            }
        }
        let regions = SceneRegions::new(self).map_err(|e| match e {
            GeometryError::NoFreeRegion => TampError::InfeasibleScenario(
                "an obstacle or delivery leaves no free region in the workspace".into(),
            ),
            other => TampError::Geometry(other),
        })?;
        for (i, e) in self.end_effectors.iter().enumerate() {
            for (k, set) in regions.ee_obs[i].iter().enumerate() {
                if set.containing(e.initial_m, 0.0).is_empty() {
                    return Err(TampError::InfeasibleScenario(format!(
                        "end effector {i} starts in no free region of obstacle {k}"
                    )));
                }
            }
            for (j, set) in regions.ee_dlv[i].iter().enumerate() {
                if set.containing(e.initial_m, 0.0).is_empty() {
                    return Err(TampError::InfeasibleScenario(format!(
                        "end effector {i} starts in no free region of delivery {j}"
                    )));
                }
            }
        }
        for (j, d) in self.deliveries.iter().enumerate() {
            for (k, set) in regions.dlv_obs[j].iter().enumerate() {
                for (what, p) in [("initial", d.initial_m), ("target", d.target_m)] {
                    if set.containing(p, 0.0).is_empty() {
                        return Err(TampError::InfeasibleScenario(format!(
                            "delivery {j} {what} position is in no free region of obstacle {k}"
                        )));
                    }
                }
            }
            for (j2, set) in regions.dlv_dlv[j].iter().enumerate() {
                let Some(set) = set else { continue };
                let d2 = &self.deliveries[j2];
                let at_targets = d.target_m - (d2.target_m - d2.initial_m);
                if set.containing(d.initial_m, 0.0).is_empty()
                    || set.containing(at_targets, 0.0).is_empty()
                {
                    return Err(TampError::InfeasibleScenario(format!(
                        "delivery {j} is in no free region of delivery {j2}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per-step weight of the travelled L1 distance.
///
/// Grows geometrically with `t` and is small enough that the whole distance
/// term stays below one completion step.
pub fn weight_w(t: usize, params: &Params, scenario: &Scenario) -> Result<f64, TampError> {
    let speed_sum: f64 = scenario.end_effectors.iter().map(|e| e.max_speed_mps.l1()).sum();
    if speed_sum <= 0.0 {
        return Err(TampError::InvalidParams("end-effector speed bounds sum to zero".into()));
    }
    let n = params.steps as f64;
    let growth = (1.0 + params.alpha).powf(t as f64 / n - 1.0);
    Ok(growth / ((n + 1.0).powi(2) * speed_sum))
}

/// Indices (into [`VariableLayout::delivery_faces`]) of the penalized
/// regions of delivery `j` for gripper `i` at step `t`.
pub type RestrictedRegions = Vec<Vec<Vec<Vec<usize>>>>;

/// Penalized regions `[i][j][t]` for the soft route term.
pub fn select_restricted_regions(scenario: &Scenario, params: &Params) -> Result<RestrictedRegions, TampError> {
    let regions = SceneRegions::new(scenario)?;
    let faces: Vec<Vec<Face>> = (0..scenario.deliveries.len())
        .map(|j| regions.delivery_faces(j))
        .collect();
    Ok(restricted_from_faces(scenario, params, &faces))
}

fn restricted_from_faces(scenario: &Scenario, params: &Params, faces: &[Vec<Face>]) -> RestrictedRegions {
    match params.restricted_regions {
        RegionPolicy::LesserHorizontalAxis => scenario
            .end_effectors
            .iter()
            .map(|e| {
                let axis = lesser_horizontal_axis(e.initial_m, &scenario.deliveries);
                let wanted = [
                    Face::new(Axis::Z, Sign::Neg),
                    Face::new(axis, Sign::Neg),
                    Face::new(axis, Sign::Pos),
                ];
                faces
                    .iter()
                    .map(|fs| {
                        let picked: Vec<usize> = fs
                            .iter()
                            .enumerate()
                            .filter(|(_, f)| wanted.contains(f))
                            .map(|(r, _)| r)
                            .collect();
                        vec![picked; params.steps + 1]
                    })
                    .collect()
            })
            .collect(),
    }
}

fn lesser_horizontal_axis(start: Vec3, deliveries: &[Delivery]) -> Axis {
    let far = deliveries
        .iter()
        .map(|d| d.target_m)
        .max_by(|a, b| {
            let da = (a.x - start.x).hypot(a.y - start.y);
            let db = (b.x - start.x).hypot(b.y - start.y);
            da.total_cmp(&db)
        })
        .expect("at least one delivery");
    if (far.x - start.x).abs() < (far.y - start.y).abs() {
        Axis::X
    } else {
        Axis::Y
    }
}

/// Variable symbols used in [`VarTag`]s.
pub mod sym {
    pub const EE_POS: &str = "ee_pos";
    pub const EE_VEL: &str = "ee_vel";
    pub const EE_SPEED: &str = "ee_speed";
    pub const DLV_POS: &str = "dlv_pos";
    pub const GRASP: &str = "grasp";
    pub const PICK: &str = "pick";
    pub const PLACE: &str = "place";
    pub const CARRY: &str = "carry";
    pub const AT_TARGET: &str = "at_target";
    pub const COMPLETE: &str = "complete";
    pub const EE_OBS: &str = "in_ee_obs";
    pub const EE_DLV: &str = "in_ee_dlv";
    pub const DLV_OBS: &str = "in_dlv_obs";
    pub const DLV_DLV: &str = "in_dlv_dlv";
    pub const SHARED_EE_OBS: &str = "shared_ee_obs";
    pub const SHARED_EE_DLV: &str = "shared_ee_dlv";
    pub const SHARED_DLV_OBS: &str = "shared_dlv_obs";
    pub const SHARED_DLV_DLV: &str = "shared_dlv_dlv";

    /// Region indicators whose kind depends on the variant.
    pub const DELIVERY_REGION_INDICATORS: [&str; 2] = [DLV_OBS, DLV_DLV];
}

/// Lookup from `(symbol, indices)` to the model variable.
///
/// Index orders: positions, velocities and speeds `[body, t, axis]`; grasp
/// states `[i, j, t]`; `at_target` `[j, t]`; `complete` `[t]`; region
/// indicators `[mover, owner, r, t]`.
#[derive(Debug, Clone, Default)]
pub struct VariableLayout {
    pub n_ee: usize,
    pub n_dlv: usize,
    pub n_obs: usize,
    pub steps: usize,
    /// Region index `r` to face, per obstacle.
    pub obstacle_faces: Vec<Vec<Face>>,
    /// Region index `r` to face, per delivery.
    pub delivery_faces: Vec<Vec<Face>>,
    /// Penalized regions `[i][j][t]`; empty unless the variant is `hard_soft`.
    pub restricted: RestrictedRegions,
    index: HashMap<VarTag, VarId>,
}

impl VariableLayout {
    pub fn get(&self, symbol: &str, indices: &[usize]) -> Option<VarId> {
        self.index.get(&VarTag::new(symbol, indices)).copied()
    }

    /// Like [`get`](Self::get) for entries the builder always creates.
    pub fn var(&self, symbol: &str, indices: &[usize]) -> VarId {
        self.get(symbol, indices)
            .unwrap_or_else(|| panic!("no variable {}", VarTag::new(symbol, indices)))
    }

    pub fn vec3(&self, symbol: &str, body: usize, t: usize) -> [VarId; 3] {
        Axis::ALL.map(|a| self.var(symbol, &[body, t, a.index()]))
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&VarTag, VarId)> {
        self.index.iter().map(|(k, &v)| (k, v))
    }

    /// Number of entries with `symbol`.
    pub fn count(&self, symbol: &str) -> usize {
        self.index.keys().filter(|k| k.symbol == symbol).count()
    }

    fn insert(&mut self, model: &mut MilpModel, kind: VarKind, lb: f64, ub: f64, tag: VarTag) -> VarId {
        let v = model.add_var(kind, lb, ub, tag.clone());
        let dup = self.index.insert(tag, v);
        debug_assert!(dup.is_none());
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub variant: Variant,
    pub binaries: usize,
    pub continuous: usize,
    pub constraints: usize,
    pub per_tag: BTreeMap<String, usize>,
}

impl BuildReport {
    fn from_model(model: &MilpModel, variant: Variant) -> Self {
        let mut per_tag = BTreeMap::new();
        for c in model.constraints() {
            *per_tag.entry(c.tag.to_string()).or_insert(0) += 1;
        }
        Self {
            variant,
            binaries: model.binary_count(),
            continuous: model.continuous_count(),
            constraints: model.num_constraints(),
            per_tag,
        }
    }
}

impl fmt::Display for BuildReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "variant      {}", self.variant)?;
        writeln!(f, "binaries     {}", self.binaries)?;
        writeln!(f, "continuous   {}", self.continuous)?;
        writeln!(f, "constraints  {}", self.constraints)?;
        for (tag, n) in &self.per_tag {
            writeln!(f, "  {tag:<28} {n}")?;
        }
        Ok(())
    }
}

/// Binaries the hard variants remove relative to the baseline, before presolve.
pub fn relaxed_indicator_count(n_dlv: usize, n_obs: usize, n_rg: usize, steps: usize) -> usize {
    n_dlv * (n_obs + n_dlv - 1) * n_rg * (steps + 1)
}

/// Forces `expr == 0` whenever `lit` is 1, with the tightest constant per side.
fn zero_when(m: &mut MilpModel, expr: &LinExpr, lit: Lit, tag: &'static str) -> Result<(), TampError> {
    let (lo, hi) = m.expr_range(expr)?;
    // expr <= hi (1 - lit)
    if hi != 0.0 {
        let mut e = expr.clone();
        e.add_lit(hi, lit);
        m.add_constraint(e, Sense::Le, hi, tag);
    }
    // expr >= lo (1 - lit)
    if lo != 0.0 {
        let mut e = expr.clone();
        e.add_lit(lo, lit);
        m.add_constraint(e, Sense::Ge, lo, tag);
    }
    Ok(())
}

/// Big-M membership of `point` (per-axis expressions) in `bounds` when `z` is 1.
///
/// Sides where the region reaches the expression's range are vacuous and skipped.
fn region_membership(
    m: &mut MilpModel,
    point: &[LinExpr; 3],
    bounds: &Aabb,
    z: VarId,
    tag: &'static str,
) -> Result<(), TampError> {
    for a in Axis::ALL {
        let e = &point[a.index()];
        let (lo, hi) = m.expr_range(e)?;
        let coef_hi = bounds.hi(a) - hi;
        if coef_hi < 0.0 {
            // e <= R_hi z + hi (1 - z)
            let mut row = e.clone();
            row.add_term(-coef_hi, z);
            m.add_constraint(row, Sense::Le, hi, tag);
        }
        let coef_lo = bounds.lo(a) - lo;
        if coef_lo > 0.0 {
            // e >= R_lo z + lo (1 - z)
            let mut row = e.clone();
            row.add_term(-coef_lo, z);
            m.add_constraint(row, Sense::Ge, lo, tag);
        }
    }
    Ok(())
}

struct Builder<'a> {
    s: &'a Scenario,
    p: &'a Params,
    m: MilpModel,
    l: VariableLayout,
    regions: SceneRegions,
}

impl<'a> Builder<'a> {
    fn add(&mut self, kind: VarKind, lb: f64, ub: f64, symbol: &str, idx: &[usize]) -> VarId {
        self.l.insert(&mut self.m, kind, lb, ub, VarTag::new(symbol, idx))
    }

    fn add_vec3(&mut self, symbol: &str, body: usize, t: usize, lo: Vec3, hi: Vec3) -> [VarId; 3] {
        Axis::ALL.map(|a| self.add(VarKind::Continuous, lo[a], hi[a], symbol, &[body, t, a.index()]))
    }

    fn region_kind(&self) -> VarKind {
        if self.p.variant.ties_carried_regions() {
            VarKind::UnitInterval
        } else {
            VarKind::Binary
        }
    }

    fn declare(&mut self) {
        let (s, n) = (self.s, self.p.steps);
        let ws = s.workspace;
        for (i, e) in s.end_effectors.iter().enumerate() {
            for t in 0..=n {
                let p = self.add_vec3(sym::EE_POS, i, t, ws.lower(), ws.upper());
                if t == 0 {
                    for a in Axis::ALL {
                        self.m.fix(p[a.index()], e.initial_m[a]);
                    }
                }
            }
            for t in 0..n {
                let vmax = e.max_speed_mps;
                self.add_vec3(sym::EE_VEL, i, t, vmax * -1.0, vmax);
                self.add_vec3(sym::EE_SPEED, i, t, Vec3::ZERO, vmax);
            }
        }
        for (j, d) in s.deliveries.iter().enumerate() {
            for t in 0..=n {
                let p = self.add_vec3(sym::DLV_POS, j, t, ws.lower(), ws.upper());
                if t == 0 {
                    for a in Axis::ALL {
                        self.m.fix(p[a.index()], d.initial_m[a]);
                    }
                }
            }
        }
        for i in 0..s.end_effectors.len() {
            for j in 0..s.deliveries.len() {
                for t in 0..=n {
                    let g = self.add(VarKind::Binary, 0.0, 1.0, sym::GRASP, &[i, j, t]);
                    if t == 0 {
                        self.m.fix(g, 0.0);
                    }
                    self.add(VarKind::UnitInterval, 0.0, 1.0, sym::PICK, &[i, j, t]);
                    let pl = self.add(VarKind::UnitInterval, 0.0, 1.0, sym::PLACE, &[i, j, t]);
                    if t == 0 {
                        self.m.fix(pl, 0.0);
                    }
                    self.add(VarKind::UnitInterval, 0.0, 1.0, sym::CARRY, &[i, j, t]);
                }
            }
        }
        for j in 0..s.deliveries.len() {
            for t in 0..=n {
                self.add(VarKind::Binary, 0.0, 1.0, sym::AT_TARGET, &[j, t]);
            }
        }
        for t in 0..=n {
            self.add(VarKind::UnitInterval, 0.0, 1.0, sym::COMPLETE, &[t]);
        }
        let rk = self.region_kind();
        for i in 0..s.end_effectors.len() {
            for k in 0..s.obstacles.len() {
                self.declare_indicators(VarKind::Binary, sym::EE_OBS, i, k, &self.regions.ee_obs[i][k].clone(), self.l.obstacle_faces[k].clone());
            }
            for j in 0..s.deliveries.len() {
                self.declare_indicators(VarKind::Binary, sym::EE_DLV, i, j, &self.regions.ee_dlv[i][j].clone(), self.l.delivery_faces[j].clone());
            }
        }
        for j in 0..s.deliveries.len() {
            for k in 0..s.obstacles.len() {
                self.declare_indicators(rk, sym::DLV_OBS, j, k, &self.regions.dlv_obs[j][k].clone(), self.l.obstacle_faces[k].clone());
            }
            for j2 in 0..s.deliveries.len() {
                if let Some(set) = self.regions.dlv_dlv[j][j2].clone() {
                    self.declare_indicators(rk, sym::DLV_DLV, j, j2, &set, self.l.delivery_faces[j2].clone());
                }
            }
        }
    }

    /// One indicator per (face, t); faces missing from this pair's set are pinned to 0.
    fn declare_indicators(&mut self, kind: VarKind, symbol: &str, mover: usize, owner: usize, set: &RegionSet, faces: Vec<Face>) {
        for (r, face) in faces.into_iter().enumerate() {
            let present = set.region_for(face).is_some();
            for t in 0..=self.p.steps {
                let z = self.add(kind, 0.0, 1.0, symbol, &[mover, owner, r, t]);
                if !present {
                    self.m.fix(z, 0.0);
                }
            }
        }
    }

    fn ee_pos(&self, i: usize, t: usize) -> [VarId; 3] {
        self.l.vec3(sym::EE_POS, i, t)
    }

    fn dlv_pos(&self, j: usize, t: usize) -> [VarId; 3] {
        self.l.vec3(sym::DLV_POS, j, t)
    }

    fn motion(&mut self) -> Result<(), TampError> {
        let (n, dt) = (self.p.steps, self.p.dt_s);
        for i in 0..self.s.end_effectors.len() {
            for t in 0..n {
                let (p0, p1) = (self.ee_pos(i, t), self.ee_pos(i, t + 1));
                let v = self.l.vec3(sym::EE_VEL, i, t);
                let u = self.l.vec3(sym::EE_SPEED, i, t);
                for a in 0..3 {
                    let e = LinExpr::from_terms([(1.0, p1[a]), (-1.0, p0[a]), (-dt, v[a])], 0.0);
                    self.m.add_constraint(e, Sense::Eq, 0.0, "ee_dynamics");
                    let e = LinExpr::from_terms([(1.0, v[a]), (-1.0, u[a])], 0.0);
                    self.m.add_constraint(e, Sense::Le, 0.0, "speed_abs");
                    let e = LinExpr::from_terms([(1.0, v[a]), (1.0, u[a])], 0.0);
                    self.m.add_constraint(e, Sense::Ge, 0.0, "speed_abs");
                }
            }
        }
        Ok(())
    }

    fn grasping(&mut self) -> Result<(), TampError> {
        let (n_ee, n_dlv, n) = (self.s.end_effectors.len(), self.s.deliveries.len(), self.p.steps);
        for t in 0..=n {
            for j in 0..n_dlv {
                let e = LinExpr::from_terms((0..n_ee).map(|i| (1.0, self.l.var(sym::GRASP, &[i, j, t]))), 0.0);
                self.m.add_constraint(e, Sense::Le, 1.0, "one_gripper_per_delivery");
            }
            for i in 0..n_ee {
                let e = LinExpr::from_terms((0..n_dlv).map(|j| (1.0, self.l.var(sym::GRASP, &[i, j, t]))), 0.0);
                self.m.add_constraint(e, Sense::Le, 1.0, "one_delivery_per_gripper");
            }
        }
        for i in 0..n_ee {
            for j in 0..n_dlv {
                for t in 0..=n {
                    let g = self.l.var(sym::GRASP, &[i, j, t]);
                    let pick = self.l.var(sym::PICK, &[i, j, t]);
                    let place = self.l.var(sym::PLACE, &[i, j, t]);
                    let carry = self.l.var(sym::CARRY, &[i, j, t]);
                    // first grasped step; the step before 0 counts as released
                    if t == 0 {
                        self.m.constrain_and_tagged(pick, &[Lit::Pos(g)], "pick_state")?;
                    } else {
                        let prev = self.l.var(sym::GRASP, &[i, j, t - 1]);
                        self.m.constrain_and_tagged(pick, &[Lit::Pos(g), Lit::Neg(prev)], "pick_state")?;
                        self.m.constrain_and_tagged(place, &[Lit::Neg(g), Lit::Pos(prev)], "place_state")?;
                    }
                    let e = LinExpr::from_terms([(1.0, carry), (-1.0, g), (1.0, pick)], 0.0);
                    self.m.add_constraint(e, Sense::Eq, 0.0, "carry_state");
                }
            }
        }
        Ok(())
    }

    fn delivery_motion(&mut self) -> Result<(), TampError> {
        let (n_ee, n_dlv, n) = (self.s.end_effectors.len(), self.s.deliveries.len(), self.p.steps);
        for i in 0..n_ee {
            for j in 0..n_dlv {
                let on = self.s.contact_offset(i, j);
                let off = self.s.approach_offset(i, j);
                for t in 0..=n {
                    let (pd, pe) = (self.dlv_pos(j, t), self.ee_pos(i, t));
                    for (sym_name, offset, tag) in [
                        (sym::CARRY, on, "carry_offset"),
                        (sym::PICK, off, "pick_offset"),
                        (sym::PLACE, off, "place_offset"),
                    ] {
                        let state = self.l.var(sym_name, &[i, j, t]);
                        for a in Axis::ALL {
                            let k = a.index();
                            let d = LinExpr::from_terms([(1.0, pd[k]), (-1.0, pe[k])], offset[a]);
                            zero_when(&mut self.m, &d, Lit::Pos(state), tag)?;
                        }
                    }
                }
            }
        }
        for j in 0..n_dlv {
            for t in 0..n {
                let (p0, p1) = (self.dlv_pos(j, t), self.dlv_pos(j, t + 1));
                let grasps: Vec<VarId> = (0..n_ee).map(|i| self.l.var(sym::GRASP, &[i, j, t])).collect();
                for k in 0..3 {
                    let d = LinExpr::from_terms([(1.0, p1[k]), (-1.0, p0[k])], 0.0);
                    let (lo, hi) = self.m.expr_range(&d)?;
                    // d <= hi * sum(grasp), d >= lo * sum(grasp)
                    let mut e = d.clone();
                    for &g in &grasps {
                        e.add_term(-hi, g);
                    }
                    self.m.add_constraint(e, Sense::Le, 0.0, "delivery_hold");
                    let mut e = d;
                    for &g in &grasps {
                        e.add_term(-lo, g);
                    }
                    self.m.add_constraint(e, Sense::Ge, 0.0, "delivery_hold");
                }
            }
        }
        Ok(())
    }

    fn completion(&mut self) -> Result<(), TampError> {
        let (n_ee, n_dlv, n) = (self.s.end_effectors.len(), self.s.deliveries.len(), self.p.steps);
        for (j, d) in self.s.deliveries.iter().enumerate() {
            for t in 0..=n {
                let psi = self.l.var(sym::AT_TARGET, &[j, t]);
                let pd = self.dlv_pos(j, t);
                for a in Axis::ALL {
                    let e = LinExpr::from_terms([(1.0, pd[a.index()])], -d.target_m[a]);
                    zero_when(&mut self.m, &e, Lit::Pos(psi), "at_target")?;
                }
                let mut e = LinExpr::var(psi);
                for i in 0..n_ee {
                    e.add_term(1.0, self.l.var(sym::GRASP, &[i, j, t]));
                }
                self.m.add_constraint(e, Sense::Le, 1.0, "released_at_target");
                if t < n {
                    let next = self.l.var(sym::AT_TARGET, &[j, t + 1]);
                    // psi[t+1] - psi[t] >= sum_i (grasp[t] - grasp[t+1])
                    let mut e = LinExpr::from_terms([(1.0, next), (-1.0, psi)], 0.0);
                    for i in 0..n_ee {
                        e.add_term(-1.0, self.l.var(sym::GRASP, &[i, j, t]));
                        e.add_term(1.0, self.l.var(sym::GRASP, &[i, j, t + 1]));
                    }
                    self.m.add_constraint(e, Sense::Ge, 0.0, "release_completes");
                    let e = LinExpr::from_terms([(1.0, psi), (-1.0, next)], 0.0);
                    self.m.add_constraint(e, Sense::Le, 0.0, "completion_chain");
                } else {
                    self.m.add_constraint(LinExpr::var(psi), Sense::Eq, 1.0, "completion_chain");
                }
            }
        }
        for t in 0..=n {
            let c = self.l.var(sym::COMPLETE, &[t]);
            let lits: Vec<Lit> = (t..=n)
                .flat_map(|tau| (0..n_dlv).map(move |j| (j, tau)))
                .map(|(j, tau)| Lit::Pos(self.l.var(sym::AT_TARGET, &[j, tau])))
                .collect();
            self.m.constrain_and_tagged(c, &lits, "all_complete")?;
        }
        Ok(())
    }

    /// Membership rows plus the shared-region rule for one (mover, owner) pair.
    #[allow(clippy::too_many_arguments)]
    fn pair_regions(
        &mut self,
        point_at: &dyn Fn(&Self, usize) -> [LinExpr; 3],
        set: &RegionSet,
        faces: &[Face],
        z_sym: &str,
        shared_sym: &str,
        mover: usize,
        owner: usize,
        member_tag: &'static str,
        shared_tag: Option<&'static str>,
    ) -> Result<(), TampError> {
        let n = self.p.steps;
        for t in 0..=n {
            let point = point_at(self, t);
            for (r, &face) in faces.iter().enumerate() {
                let Some(region) = set.region_for(face) else { continue };
                let z = self.l.var(z_sym, &[mover, owner, r, t]);
                region_membership(&mut self.m, &point, &region.bounds, z, member_tag)?;
            }
        }
        let Some(shared_tag) = shared_tag else { return Ok(()) };
        for t in 0..n {
            let mut any = LinExpr::new();
            for (r, &face) in faces.iter().enumerate() {
                if set.region_for(face).is_none() {
                    continue;
                }
                let y = self.add(VarKind::UnitInterval, 0.0, 1.0, shared_sym, &[mover, owner, r, t]);
                let z0 = self.l.var(z_sym, &[mover, owner, r, t]);
                let z1 = self.l.var(z_sym, &[mover, owner, r, t + 1]);
                if self.p.variant.ties_carried_regions() {
                    // one-sided: a carried delivery inherits only the shared
                    // regions the gripper commits to, not every one it sits in
                    for zk in [z0, z1] {
                        self.m.add_constraint(LinExpr::from_terms([(1.0, y), (-1.0, zk)], 0.0), Sense::Le, 0.0, shared_tag);
                    }
                } else {
                    self.m.constrain_and_tagged(y, &[Lit::Pos(z0), Lit::Pos(z1)], shared_tag)?;
                }
                any.add_term(1.0, y);
            }
            self.m.add_constraint(any, Sense::Ge, 1.0, shared_tag);
        }
        Ok(())
    }

    fn collisions(&mut self) -> Result<(), TampError> {
        let (n_ee, n_dlv, n_obs) = (self.s.end_effectors.len(), self.s.deliveries.len(), self.s.obstacles.len());
        let tied = self.p.variant.ties_carried_regions();
        let ee_point = |i: usize| move |b: &Self, t: usize| b.ee_pos(i, t).map(LinExpr::var);
        let dlv_point = |j: usize| move |b: &Self, t: usize| b.dlv_pos(j, t).map(LinExpr::var);
        // mover position minus the owner delivery's displacement from its initial pose
        let relative = |mover: [VarId; 3], owner: [VarId; 3], p0: Vec3| {
            Axis::ALL.map(|a| {
                let k = a.index();
                LinExpr::from_terms([(1.0, mover[k]), (-1.0, owner[k])], p0[a])
            })
        };
        for i in 0..n_ee {
            for k in 0..n_obs {
                let set = self.regions.ee_obs[i][k].clone();
                let faces = self.l.obstacle_faces[k].clone();
                self.pair_regions(&ee_point(i), &set, &faces, sym::EE_OBS, sym::SHARED_EE_OBS, i, k, "ee_obstacle_region", Some("ee_obstacle_shared"))?;
            }
            for j in 0..n_dlv {
                let set = self.regions.ee_dlv[i][j].clone();
                let faces = self.l.delivery_faces[j].clone();
                let p0 = self.s.deliveries[j].initial_m;
                let point = move |b: &Self, t: usize| relative(b.ee_pos(i, t), b.dlv_pos(j, t), p0);
                self.pair_regions(&point, &set, &faces, sym::EE_DLV, sym::SHARED_EE_DLV, i, j, "ee_delivery_region", Some("ee_delivery_shared"))?;
            }
        }
        for j in 0..n_dlv {
            for k in 0..n_obs {
                let set = self.regions.dlv_obs[j][k].clone();
                let faces = self.l.obstacle_faces[k].clone();
                let shared = (!tied).then_some("delivery_obstacle_shared");
                self.pair_regions(&dlv_point(j), &set, &faces, sym::DLV_OBS, sym::SHARED_DLV_OBS, j, k, "delivery_obstacle_region", shared)?;
            }
            for j2 in 0..n_dlv {
                let Some(set) = self.regions.dlv_dlv[j][j2].clone() else { continue };
                let faces = self.l.delivery_faces[j2].clone();
                let p0 = self.s.deliveries[j2].initial_m;
                let point = move |b: &Self, t: usize| relative(b.dlv_pos(j, t), b.dlv_pos(j2, t), p0);
                let shared = (!tied).then_some("delivery_delivery_shared");
                self.pair_regions(&point, &set, &faces, sym::DLV_DLV, sym::SHARED_DLV_DLV, j, j2, "delivery_delivery_region", shared)?;
            }
        }
        if tied {
            self.tie_carried()?;
        }
        Ok(())
    }

    /// A moving delivery occupies exactly the regions its gripper marks;
    /// otherwise all its indicators are 0.
    ///
    /// While carried, the delivery takes the gripper's regions of the same
    /// step. On a pick step it takes the regions the gripper shares with
    /// the next step, and on a place step those shared with the previous
    /// one. Every move of the delivery then stays inside one region.
    fn tie_carried(&mut self) -> Result<(), TampError> {
        let (n_ee, n_dlv, n_obs, n) = (self.s.end_effectors.len(), self.s.deliveries.len(), self.s.obstacles.len(), self.p.steps);
        // (action state, use shared indicators, step of the gripper indicator)
        let phases = |t: usize| {
            let mut v = vec![(sym::CARRY, false, t)];
            if t < n {
                v.push((sym::PICK, true, t));
            }
            if t > 0 {
                v.push((sym::PLACE, true, t - 1));
            }
            v
        };
        for j in 0..n_dlv {
            for t in 0..=n {
                let states: Vec<(usize, VarId, bool, usize)> = (0..n_ee)
                    .flat_map(|i| phases(t).into_iter().map(move |p| (i, p)))
                    .map(|(i, (st, shared, te))| (i, self.l.var(st, &[i, j, t]), shared, te))
                    .collect();
                for k in 0..n_obs {
                    for r in 0..self.l.obstacle_faces[k].len() {
                        let z = self.l.var(sym::DLV_OBS, &[j, k, r, t]);
                        let pairs: Vec<(VarId, VarId)> = states
                            .iter()
                            .filter_map(|&(i, st, shared, te)| {
                                let ind = if shared { sym::SHARED_EE_OBS } else { sym::EE_OBS };
                                self.l.get(ind, &[i, k, r, te]).map(|e| (e, st))
                            })
                            .collect();
                        self.tie_one(z, &pairs, "carried_obstacle_region");
                    }
                }
                for j2 in (0..n_dlv).filter(|&j2| j2 != j) {
                    for r in 0..self.l.delivery_faces[j2].len() {
                        let z = self.l.var(sym::DLV_DLV, &[j, j2, r, t]);
                        let pairs: Vec<(VarId, VarId)> = states
                            .iter()
                            .filter_map(|&(i, st, shared, te)| {
                                let ind = if shared { sym::SHARED_EE_DLV } else { sym::EE_DLV };
                                self.l.get(ind, &[i, j2, r, te]).map(|e| (e, st))
                            })
                            .collect();
                        self.tie_one(z, &pairs, "carried_delivery_region");
                    }
                }
            }
        }
        Ok(())
    }

    /// `z = OR_p (region_p AND state_p)` over (gripper indicator, action
    /// state) pairs whose states are mutually exclusive, so at most one
    /// pair is active:
    /// `z >= e_p + s_p - 1`, `z <= e_p + 1 - s_p` and `z <= sum_p s_p`.
    fn tie_one(&mut self, z: VarId, pairs: &[(VarId, VarId)], tag: &'static str) {
        if pairs.is_empty() {
            self.m.fix(z, 0.0);
            return;
        }
        let mut any = LinExpr::var(z);
        for &(e, st) in pairs {
            self.m.add_constraint(LinExpr::from_terms([(1.0, z), (-1.0, e), (-1.0, st)], 0.0), Sense::Ge, -1.0, tag);
            self.m.add_constraint(LinExpr::from_terms([(1.0, z), (-1.0, e), (1.0, st)], 0.0), Sense::Le, 1.0, tag);
            any.add_term(-1.0, st);
        }
        self.m.add_constraint(any, Sense::Le, 0.0, tag);
    }

    fn objective(&mut self) -> Result<(), TampError> {
        let n = self.p.steps;
        let scale = 1.0 / (n as f64 + 1.0);
        // time: (1/(N+1)) sum_t (1 - C_t)
        let mut obj = LinExpr::constant(1.0);
        for t in 0..=n {
            obj.add_term(-scale, self.l.var(sym::COMPLETE, &[t]));
        }
        for t in 0..n {
            let w = weight_w(t, self.p, self.s)?;
            for i in 0..self.s.end_effectors.len() {
                for u in self.l.vec3(sym::EE_SPEED, i, t) {
                    obj.add_term(w, u);
                }
            }
        }
        if self.p.variant == Variant::HardSoft {
            for i in 0..self.s.end_effectors.len() {
                for j in 0..self.s.deliveries.len() {
                    for t in 0..=n {
                        for &r in &self.l.restricted[i][j][t] {
                            obj.add_term(1.0, self.l.var(sym::EE_DLV, &[i, j, r, t]));
                        }
                    }
                }
            }
        }
        self.m.set_objective(obj);
        Ok(())
    }
}

/// Builds the model of `params.variant` for `scenario`.
pub fn build(scenario: &Scenario, params: &Params) -> Result<(MilpModel, VariableLayout, BuildReport), TampError> {
    scenario.validate()?;
    params.validate()?;
    weight_w(0, params, scenario)?;
    let regions = SceneRegions::new(scenario)?;
    let obstacle_faces = (0..scenario.obstacles.len()).map(|k| regions.obstacle_faces(k)).collect();
    let delivery_faces: Vec<Vec<Face>> = (0..scenario.deliveries.len()).map(|j| regions.delivery_faces(j)).collect();
    let restricted = if params.variant == Variant::HardSoft {
        restricted_from_faces(scenario, params, &delivery_faces)
    } else {
        Vec::new()
    };
    let layout = VariableLayout {
        n_ee: scenario.end_effectors.len(),
        n_dlv: scenario.deliveries.len(),
        n_obs: scenario.obstacles.len(),
        steps: params.steps,
        obstacle_faces,
        delivery_faces,
        restricted,
        index: HashMap::new(),
    };
    let mut b = Builder { s: scenario, p: params, m: MilpModel::new(), l: layout, regions };
    b.declare();
    b.motion()?;
    b.grasping()?;
    b.delivery_motion()?;
    b.completion()?;
    b.collisions()?;
    b.objective()?;
    let report = BuildReport::from_model(&b.m, params.variant);
    Ok((b.m, b.l, report))
}
