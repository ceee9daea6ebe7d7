//! Axis-aligned box geometry and collision-free region construction.
//!
//! Every body is an axis-aligned box. Collision checks between a moving box
//! and an owner box are reduced to a point test: the owner is inflated by the
//! mover's full width, and the mover's *center* must stay inside at least one
//! of the slabs ("regions") that cover the workspace outside the inflated
//! owner. Adjacent slabs overlap at the corners, which is what lets a path
//! turn around an obstacle while still sharing one region between two
//! consecutive samples.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("no free region: inflated owner covers the whole workspace")]
    NoFreeRegion,
    #[error("workspace has non-positive width on every axis")]
    DegenerateWorkspace,
    #[error("negative box width {0}")]
    NegativeWidth(Vec3),
}

/// A point or vector in 3D. Units depend on context (m or m/s).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn splat(v: f64) -> Self {
        Self::new(v, v, v)
    }

    pub fn from_fn(mut f: impl FnMut(Axis) -> f64) -> Self {
        Self::new(f(Axis::X), f(Axis::Y), f(Axis::Z))
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Componentwise product.
    pub fn hadamard(self, other: Vec3) -> Vec3 {
        Vec3::new(self.x * other.x, self.y * other.y, self.z * other.z)
    }

    pub fn abs(self) -> Vec3 {
        Vec3::new(self.x.abs(), self.y.abs(), self.z.abs())
    }

    pub fn l1(self) -> f64 {
        self.x.abs() + self.y.abs() + self.z.abs()
    }

    pub fn linf(self) -> f64 {
        self.x.abs().max(self.y.abs()).max(self.z.abs())
    }

    pub fn min_component(self) -> f64 {
        self.x.min(self.y).min(self.z)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        v.to_array()
    }
}

impl fmt::Display for Vec3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Index<Axis> for Vec3 {
    type Output = f64;
    fn index(&self, a: Axis) -> &f64 {
        match a {
            Axis::X => &self.x,
            Axis::Y => &self.y,
            Axis::Z => &self.z,
        }
    }
}

impl IndexMut<Axis> for Vec3 {
    fn index_mut(&mut self, a: Axis) -> &mut f64 {
        match a {
            Axis::X => &mut self.x,
            Axis::Y => &mut self.y,
            Axis::Z => &mut self.z,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sign {
    Neg,
    Pos,
}

/// One side of a box: the region on the `sign` side of the box along `axis`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Face {
    pub axis: Axis,
    pub sign: Sign,
}

impl Face {
    /// Fixed face order; region and variable indexing follow it.
    pub const ALL: [Face; 6] = [
        Face::new(Axis::X, Sign::Neg),
        Face::new(Axis::X, Sign::Pos),
        Face::new(Axis::Y, Sign::Neg),
        Face::new(Axis::Y, Sign::Pos),
        Face::new(Axis::Z, Sign::Neg),
        Face::new(Axis::Z, Sign::Pos),
    ];

    pub const fn new(axis: Axis, sign: Sign) -> Self {
        Self { axis, sign }
    }

    /// Position of this face in [`Face::ALL`].
    pub fn index(self) -> usize {
        self.axis.index() * 2 + matches!(self.sign, Sign::Pos) as usize
    }

    pub fn opposite(self) -> Face {
        let sign = match self.sign {
            Sign::Neg => Sign::Pos,
            Sign::Pos => Sign::Neg,
        };
        Face::new(self.axis, sign)
    }
}

impl fmt::Display for Face {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self.sign {
            Sign::Neg => '-',
            Sign::Pos => '+',
        };
        write!(f, "{}{}", s, self.axis.name())
    }
}

/// Axis-aligned box given by center and full width per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    #[serde(rename = "center_m")]
    pub center: Vec3,
    #[serde(rename = "width_m")]
    pub width: Vec3,
}

impl Aabb {
    pub fn new(center: Vec3, width: Vec3) -> Self {
        Self { center, width }
    }

    pub fn from_bounds(lower: Vec3, upper: Vec3) -> Self {
        Self {
            center: (lower + upper) * 0.5,
            width: upper - lower,
        }
    }

    pub fn lower(&self) -> Vec3 {
        self.center - self.width * 0.5
    }

    pub fn upper(&self) -> Vec3 {
        self.center + self.width * 0.5
    }

    pub fn lo(&self, a: Axis) -> f64 {
        self.center[a] - 0.5 * self.width[a]
    }

    pub fn hi(&self, a: Axis) -> f64 {
        self.center[a] + 0.5 * self.width[a]
    }

    pub fn is_valid(&self) -> bool {
        self.center.is_finite() && self.width.is_finite() && self.width.min_component() >= 0.0
    }

    /// Closed containment with a tolerance (tol = 0 gives the exact test).
    pub fn contains_within(&self, p: Vec3, tol: f64) -> bool {
        Axis::ALL
            .iter()
            .all(|&a| p[a] >= self.lo(a) - tol && p[a] <= self.hi(a) + tol)
    }

    /// True iff `p` is strictly inside the box on every axis.
    pub fn interior_contains(&self, p: Vec3) -> bool {
        Axis::ALL
            .iter()
            .all(|&a| p[a] > self.lo(a) && p[a] < self.hi(a))
    }

    /// True iff the open interiors of the two boxes overlap.
    pub fn interiors_overlap(&self, other: &Aabb) -> bool {
        Axis::ALL
            .iter()
            .all(|&a| self.lo(a) < other.hi(a) && other.lo(a) < self.hi(a))
    }

    /// Closed intersection test.
    pub fn intersects(&self, other: &Aabb) -> bool {
        Axis::ALL
            .iter()
            .all(|&a| self.lo(a) <= other.hi(a) && other.lo(a) <= self.hi(a))
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        Axis::ALL
            .iter()
            .all(|&a| self.lo(a) <= other.lo(a) && other.hi(a) <= self.hi(a))
    }

    pub fn intersection(&self, other: &Aabb) -> Option<Aabb> {
        let lo = Vec3::from_fn(|a| self.lo(a).max(other.lo(a)));
        let hi = Vec3::from_fn(|a| self.hi(a).min(other.hi(a)));
        Axis::ALL
            .iter()
            .all(|&a| lo[a] <= hi[a])
            .then(|| Aabb::from_bounds(lo, hi))
    }
}

/// Grows `owner` by the mover's full width, keeping the center fixed.
///
/// Afterwards, the mover box and the owner box overlap in their interiors iff
/// the mover's center lies in the interior of the inflated box.
pub fn inflate(owner: &Aabb, mover_width: Vec3) -> Aabb {
    Aabb::new(owner.center, owner.width + mover_width)
}

/// Frame a region is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frame {
    Absolute,
    /// Coordinates of `p - (p_dlv - p_dlv_initial)`: the owner delivery is
    /// pinned at its initial pose.
    DeliveryRelative(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub bounds: Aabb,
    pub frame: Frame,
    pub face: Face,
}

impl Region {
    pub fn lower(&self) -> Vec3 {
        self.bounds.lower()
    }

    pub fn upper(&self) -> Vec3 {
        self.bounds.upper()
    }
}

/// Closed membership: boundary contact counts as inside.
pub fn contains(region: &Region, point: Vec3) -> bool {
    region.bounds.contains_within(point, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Owner {
    Obstacle(usize),
    Delivery(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mover {
    EndEffector(usize),
    Delivery(usize),
}

/// Collision-free regions of one owner body with respect to one mover.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSet {
    pub owner: Owner,
    pub mover: Mover,
    /// Owner inflated by the mover width, in the set's frame.
    pub inflated: Aabb,
    /// Bounds the mover's center coordinate can take in the set's frame.
    pub workspace: Aabb,
    /// Ordered by [`Face::ALL`], degenerate faces omitted.
    pub regions: Vec<Region>,
}

impl RegionSet {
    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn region_for(&self, face: Face) -> Option<&Region> {
        self.regions.iter().find(|r| r.face == face)
    }

    pub fn faces(&self) -> impl Iterator<Item = Face> + '_ {
        self.regions.iter().map(|r| r.face)
    }

    /// Indices of regions containing `p`, with tolerance.
    pub fn containing(&self, p: Vec3, tol: f64) -> Vec<usize> {
        self.regions
            .iter()
            .enumerate()
            .filter(|(_, r)| r.bounds.contains_within(p, tol))
            .map(|(k, _)| k)
            .collect()
    }

    /// True when some region contains both points (the shared-region rule).
    pub fn shares_region(&self, a: Vec3, b: Vec3, tol: f64) -> bool {
        self.regions
            .iter()
            .any(|r| r.bounds.contains_within(a, tol) && r.bounds.contains_within(b, tol))
    }
}

/// Builds one closed region per face of the inflated owner.
///
/// Along the face axis a region runs from the face plane to the workspace
/// bound; along the other two axes it spans the whole workspace, which gives
/// neighbouring regions their corner overlap. Faces whose slab has no
/// thickness are dropped.
pub fn make_regions(
    owner: &Aabb,
    workspace: &Aabb,
    mover_width: Vec3,
) -> Result<Vec<Region>, GeometryError> {
    make_regions_in(owner, workspace, mover_width, Frame::Absolute)
}

pub fn make_regions_in(
    owner: &Aabb,
    workspace: &Aabb,
    mover_width: Vec3,
    frame: Frame,
) -> Result<Vec<Region>, GeometryError> {
    if mover_width.min_component() < 0.0 {
        return Err(GeometryError::NegativeWidth(mover_width));
    }
    if owner.width.min_component() < 0.0 {
        return Err(GeometryError::NegativeWidth(owner.width));
    }
    if workspace.width.x <= 0.0 && workspace.width.y <= 0.0 && workspace.width.z <= 0.0 {
        return Err(GeometryError::DegenerateWorkspace);
    }
    let inflated = inflate(owner, mover_width);
    let regions: Vec<Region> = Face::ALL
        .iter()
        .filter_map(|&face| {
            let a = face.axis;
            let mut lo = workspace.lower();
            let mut hi = workspace.upper();
            match face.sign {
                Sign::Neg => hi[a] = inflated.lo(a).min(workspace.hi(a)),
                Sign::Pos => lo[a] = inflated.hi(a).max(workspace.lo(a)),
            }
            (hi[a] > lo[a]).then(|| Region {
                bounds: Aabb::from_bounds(lo, hi),
                frame,
                face,
            })
        })
        .collect();
    if regions.is_empty() {
        return Err(GeometryError::NoFreeRegion);
    }
    Ok(regions)
}

/// Region set of a fixed obstacle against a mover, in the absolute frame.
pub fn obstacle_regions(
    obstacle: &Aabb,
    k: usize,
    workspace: &Aabb,
    mover: Mover,
    mover_width: Vec3,
) -> Result<RegionSet, GeometryError> {
    let regions = make_regions(obstacle, workspace, mover_width)?;
    Ok(RegionSet {
        owner: Owner::Obstacle(k),
        mover,
        inflated: inflate(obstacle, mover_width),
        workspace: *workspace,
        regions,
    })
}

/// Relative workspace for a mover whose center ranges over `workspace`
/// against an owner displaced from `owner_initial` anywhere in `workspace`:
/// the range of `p_mover - (p_owner - owner_initial)`.
pub fn relative_workspace(workspace: &Aabb, owner_initial: Vec3) -> Aabb {
    let lo = Vec3::from_fn(|a| workspace.lo(a) - (workspace.hi(a) - owner_initial[a]));
    let hi = Vec3::from_fn(|a| workspace.hi(a) - (workspace.lo(a) - owner_initial[a]));
    Aabb::from_bounds(lo, hi)
}

/// Region set of a (movable) delivery, expressed in the delivery-relative
/// frame around its initial pose.
pub fn delivery_regions(
    delivery_initial: &Aabb,
    j: usize,
    workspace: &Aabb,
    mover: Mover,
    mover_width: Vec3,
) -> Result<RegionSet, GeometryError> {
    let rel = relative_workspace(workspace, delivery_initial.center);
    let regions = make_regions_in(delivery_initial, &rel, mover_width, Frame::DeliveryRelative(j))?;
    Ok(RegionSet {
        owner: Owner::Delivery(j),
        mover,
        inflated: inflate(delivery_initial, mover_width),
        workspace: rel,
        regions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_ws() -> Aabb {
        Aabb::from_bounds(Vec3::ZERO, Vec3::splat(1.0))
    }

    #[test]
    fn inflate_adds_widths() {
        let owner = Aabb::new(Vec3::new(0.5, 0.5, 0.5), Vec3::splat(0.2));
        let inf = inflate(&owner, Vec3::splat(0.1));
        assert_eq!(inf.center, owner.center);
        for a in Axis::ALL {
            assert!((inf.width[a] - 0.3).abs() < 1e-15);
        }
        assert_eq!(inflate(&owner, Vec3::ZERO), owner);
        let point = Aabb::new(Vec3::new(0.1, 0.2, 0.3), Vec3::ZERO);
        assert_eq!(inflate(&point, Vec3::new(0.1, 0.2, 0.3)).width, Vec3::new(0.1, 0.2, 0.3));
    }

    #[test]
    fn interior_obstacle_has_six_regions_in_fixed_order() {
        let owner = Aabb::new(Vec3::splat(0.5), Vec3::splat(0.2));
        let regions = make_regions(&owner, &unit_ws(), Vec3::splat(0.1)).unwrap();
        assert_eq!(regions.len(), 6);
        let faces: Vec<Face> = regions.iter().map(|r| r.face).collect();
        assert_eq!(faces, Face::ALL.to_vec());
        // -x slab runs from workspace bound to the inflated face plane
        assert!((regions[0].upper().x - 0.35).abs() < 1e-12);
        assert_eq!(regions[0].lower().x, 0.0);
        assert_eq!(regions[0].upper().y, 1.0);
    }

    #[test]
    fn planar_workspace_gives_four_regions() {
        let ws = Aabb::new(Vec3::new(0.5, 0.5, 0.0), Vec3::new(1.0, 1.0, 0.0));
        let owner = Aabb::new(Vec3::new(0.5, 0.5, 0.0), Vec3::new(0.2, 0.2, 0.1));
        let regions = make_regions(&owner, &ws, Vec3::new(0.1, 0.1, 0.0)).unwrap();
        let faces: Vec<String> = regions.iter().map(|r| r.face.to_string()).collect();
        assert_eq!(faces, ["-x", "+x", "-y", "+y"]);
    }

    #[test]
    fn flush_face_is_dropped() {
        // inflated -x face at 0.0 coincides with the workspace bound
        let owner = Aabb::new(Vec3::new(0.1, 0.5, 0.5), Vec3::new(0.1, 0.2, 0.2));
        let regions = make_regions(&owner, &unit_ws(), Vec3::new(0.1, 0.0, 0.0)).unwrap();
        assert_eq!(regions.len(), 5);
        assert!(regions.iter().all(|r| r.face != Face::new(Axis::X, Sign::Neg)));
    }

    #[test]
    fn covering_owner_is_an_error() {
        let owner = Aabb::new(Vec3::splat(0.5), Vec3::splat(1.2));
        assert_eq!(
            make_regions(&owner, &unit_ws(), Vec3::ZERO),
            Err(GeometryError::NoFreeRegion)
        );
    }

    #[test]
    fn containment_is_closed() {
        let r = Region {
            bounds: unit_ws(),
            frame: Frame::Absolute,
            face: Face::ALL[0],
        };
        assert!(contains(&r, Vec3::splat(0.5)));
        assert!(contains(&r, Vec3::new(1.0, 0.3, 0.0)));
        assert!(!contains(&r, Vec3::new(1.0, 1.0, 1.5)));
    }

    #[test]
    fn relative_workspace_spans_all_displacements() {
        let ws = unit_ws();
        let rel = relative_workspace(&ws, Vec3::splat(0.25));
        assert!((rel.lo(Axis::X) - (-0.75)).abs() < 1e-15);
        assert!((rel.hi(Axis::X) - 1.25).abs() < 1e-15);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn vec3(lo: f64, hi: f64) -> impl Strategy<Value = Vec3> {
            (lo..hi, lo..hi, lo..hi).prop_map(|(x, y, z)| Vec3::new(x, y, z))
        }

        /// Owner, workspace and mover width, with the owner allowed to poke
        /// out of the workspace.
        fn config() -> impl Strategy<Value = (Aabb, Aabb, Vec3)> {
            (vec3(-0.5, 0.5), vec3(0.2, 1.5), vec3(-0.6, 0.6), vec3(0.0, 0.8), vec3(0.0, 0.3))
                .prop_map(|(wc, ww, oc, ow, mw)| (Aabb::new(wc, ww), Aabb::new(oc, ow), mw))
        }

        /// Uniform workspace samples, half of them snapped onto a face plane
        /// of the inflated owner so boundary contact gets exercised.
        fn samples(ws: &Aabb, inflated: &Aabb, unit: &[(f64, f64, f64, u8)]) -> Vec<Vec3> {
            unit.iter()
                .map(|&(u, v, w, snap)| {
                    let mut p = Vec3::new(
                        ws.lo(Axis::X) + u * ws.width.x,
                        ws.lo(Axis::Y) + v * ws.width.y,
                        ws.lo(Axis::Z) + w * ws.width.z,
                    );
                    if snap < 6 {
                        let face = Face::ALL[snap as usize];
                        let a = face.axis;
                        let plane = match face.sign {
                            Sign::Neg => inflated.lo(a),
                            Sign::Pos => inflated.hi(a),
                        };
                        p[a] = plane.clamp(ws.lo(a), ws.hi(a));
                    }
                    p
                })
                .collect()
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(256))]

            #[test]
            fn regions_cover_exactly_the_free_space(
                (ws, owner, mw) in config(),
                unit in prop::collection::vec((0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64, 0u8..12), 64),
            ) {
                let inflated = inflate(&owner, mw);
                let Ok(regions) = make_regions(&owner, &ws, mw) else {
                    // only when no face leaves a slab of positive thickness
                    for a in Axis::ALL {
                        prop_assert!(inflated.lo(a) <= ws.lo(a) && inflated.hi(a) >= ws.hi(a));
                    }
                    return Ok(());
                };
                let thick = Face::ALL
                    .iter()
                    .filter(|f| match f.sign {
                        Sign::Neg => inflated.lo(f.axis) > ws.lo(f.axis),
                        Sign::Pos => inflated.hi(f.axis) < ws.hi(f.axis),
                    })
                    .count();
                prop_assert_eq!(regions.len(), thick);
                // boxes are stored as center and width, so bounds round-trip
                // only to the last bit
                const SLACK: f64 = 1e-12;
                let core = Aabb::new(inflated.center, inflated.width - Vec3::splat(2.0 * SLACK));
                let loose_ws = Aabb::new(ws.center, ws.width + Vec3::splat(2.0 * SLACK));
                for p in samples(&ws, &inflated, &unit) {
                    if !inflated.interior_contains(p) {
                        prop_assert!(regions.iter().any(|r| r.bounds.contains_within(p, SLACK)), "uncovered {}", p);
                    }
                    if regions.iter().any(|r| contains(r, p)) {
                        prop_assert!(!core.interior_contains(p), "{} is inside the owner", p);
                    }
                }
                for r in &regions {
                    prop_assert!(loose_ws.contains_box(&r.bounds));
                    prop_assert!(!r.bounds.interiors_overlap(&core));
                }
                for (a, ra) in regions.iter().enumerate() {
                    for rb in &regions[a + 1..] {
                        if ra.face.axis != rb.face.axis {
                            let both = ra.bounds.intersection(&rb.bounds);
                            prop_assert!(both.is_some(), "{} and {} do not meet", ra.face, rb.face);
                        }
                    }
                }
            }
        }
    }
}
