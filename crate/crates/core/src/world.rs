//! Scene geometry: axis-aligned boxes resting on rectangular tables, the
//! reach shell standing in for arm kinematics, scene sampling and the
//! placement grid.

use std::collections::HashSet;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::sexpr::{self, ParseError, Sexp};

/// Tolerance used for contact and resting checks, in meters.
pub const CONTACT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dist(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn lerp(self, o: Vec3, t: f64) -> Vec3 {
        self + (o - self) * t
    }

    pub fn get(self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }

    pub fn with(mut self, axis: usize, v: f64) -> Vec3 {
        match axis {
            0 => self.x = v,
            1 => self.y = v,
            _ => self.z = v,
        }
        self
    }

    pub fn max_component(self) -> f64 {
        self.x.max(self.y).max(self.z)
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

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// A box given by its center and half extents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub center: Vec3,
    pub half: Vec3,
}

impl Aabb {
    pub fn new(center: Vec3, half: Vec3) -> Self {
        Aabb { center, half }
    }

    pub fn from_bounds(min: Vec3, max: Vec3) -> Self {
        Aabb {
            center: (min + max) * 0.5,
            half: (max - min) * 0.5,
        }
    }

    pub fn min(&self) -> Vec3 {
        self.center - self.half
    }

    pub fn max(&self) -> Vec3 {
        self.center + self.half
    }

    /// Penetration depth along `axis`; non-positive when the intervals are
    /// disjoint or only touch.
    fn depth(&self, o: &Aabb, axis: usize) -> f64 {
        let (a0, a1) = (self.min().get(axis), self.max().get(axis));
        let (b0, b1) = (o.min().get(axis), o.max().get(axis));
        a1.min(b1) - a0.max(b0)
    }

    /// Overlap that tolerates contact up to [`CONTACT_EPS`] on any axis.
    pub fn penetrates(&self, o: &Aabb) -> bool {
        (0..3).all(|ax| self.depth(o, ax) > CONTACT_EPS)
    }
}

/// True iff the open intervals of both boxes overlap on all three axes.
pub fn aabb_overlap(a: &Aabb, b: &Aabb) -> bool {
    (0..3).all(|ax| a.depth(b, ax) > 0.0)
}

/// Approach direction of a grasp in the body frame. The order of the
/// variants is the index order used for labels, weights and outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GraspDirection {
    PX,
    NX,
    PY,
    NY,
    PZ,
}

impl GraspDirection {
    pub const ALL: [GraspDirection; 5] = [
        GraspDirection::PX,
        GraspDirection::NX,
        GraspDirection::PY,
        GraspDirection::NY,
        GraspDirection::PZ,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Unit vector pointing from the grasped face toward the gripper.
    pub fn axis(self) -> Vec3 {
        match self {
            GraspDirection::PX => Vec3::new(1.0, 0.0, 0.0),
            GraspDirection::NX => Vec3::new(-1.0, 0.0, 0.0),
            GraspDirection::PY => Vec3::new(0.0, 1.0, 0.0),
            GraspDirection::NY => Vec3::new(0.0, -1.0, 0.0),
            GraspDirection::PZ => Vec3::new(0.0, 0.0, 1.0),
        }
    }

    /// World axis index (0 = x, 1 = y, 2 = z) of the approach.
    pub fn axis_index(self) -> usize {
        match self {
            GraspDirection::PX | GraspDirection::NX => 0,
            GraspDirection::PY | GraspDirection::NY => 1,
            GraspDirection::PZ => 2,
        }
    }

    pub fn sign(self) -> f64 {
        match self {
            GraspDirection::NX | GraspDirection::NY => -1.0,
            _ => 1.0,
        }
    }

    pub fn is_side(self) -> bool {
        self != GraspDirection::PZ
    }

    /// Image of the direction under reflection through the x-z plane.
    pub fn mirror_y(self) -> Self {
        match self {
            GraspDirection::PY => GraspDirection::NY,
            GraspDirection::NY => GraspDirection::PY,
            d => d,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GraspDirection::PX => "px",
            GraspDirection::NX => "nx",
            GraspDirection::PY => "py",
            GraspDirection::NY => "ny",
            GraspDirection::PZ => "pz",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.name() == s)
    }
}

impl fmt::Display for GraspDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxBody {
    pub id: String,
    pub half_extents: Vec3,
    pub center: Vec3,
    pub region_id: String,
}

impl BoxBody {
    pub fn aabb(&self) -> Aabb {
        Aabb::new(self.center, self.half_extents)
    }

    pub fn top(&self) -> f64 {
        self.center.z + self.half_extents.z
    }
}

/// A table. `center` is the center of the top surface.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub id: String,
    pub center: Vec3,
    pub half_x: f64,
    pub half_y: f64,
}

impl Region {
    pub fn top_z(&self) -> f64 {
        self.center.z
    }

    /// The solid table, from the floor up to the top surface.
    pub fn slab(&self) -> Aabb {
        let top = self.top_z();
        Aabb::from_bounds(
            Vec3::new(self.center.x - self.half_x, self.center.y - self.half_y, 0.0_f64.min(top)),
            Vec3::new(self.center.x + self.half_x, self.center.y + self.half_y, top),
        )
    }

    /// Whether a footprint of the given half size centered at (x, y) lies
    /// within the top rectangle.
    pub fn contains_footprint(&self, x: f64, y: f64, hx: f64, hy: f64) -> bool {
        (x - self.center.x).abs() + hx <= self.half_x + CONTACT_EPS
            && (y - self.center.y).abs() + hy <= self.half_y + CONTACT_EPS
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReachModel {
    pub shoulder: Vec3,
    pub r_min: f64,
    pub r_max: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl Default for ReachModel {
    fn default() -> Self {
        ReachModel {
            shoulder: Vec3::new(0.0, 0.0, 0.3),
            r_min: 0.35,
            r_max: 0.85,
            z_min: 0.02,
            z_max: 1.0,
        }
    }
}

impl ReachModel {
    pub fn reaches(&self, p: Vec3) -> bool {
        let r = p.dist(self.shoulder);
        r >= self.r_min && r <= self.r_max && p.z >= self.z_min && p.z <= self.z_max
    }
}

/// Parallel-jaw gripper. Half extents are given in the gripper frame:
/// x along the closing axis, y across it, z along the approach.
#[derive(Debug, Clone, PartialEq)]
pub struct GripperModel {
    pub palm_half: Vec3,
    pub finger_half: Vec3,
    pub finger_clearance: f64,
    pub standoff: f64,
    pub home_config: Vec3,
}

impl Default for GripperModel {
    fn default() -> Self {
        GripperModel {
            palm_half: Vec3::new(0.04, 0.04, 0.02),
            finger_half: Vec3::new(0.01, 0.04, 0.03),
            finger_clearance: 0.005,
            standoff: 0.15,
            home_config: Vec3::new(0.0, 0.0, 0.9),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scene {
    pub regions: Vec<Region>,
    pub bodies: Vec<BoxBody>,
    pub reach: ReachModel,
    pub gripper: GripperModel,
}

#[derive(Debug, thiserror::Error)]
pub enum WorldError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("sampling exhausted after {attempts} attempts placing body {body}")]
    SamplingExhausted { attempts: usize, body: usize },
    #[error("unknown body `{0}`")]
    UnknownBody(String),
    #[error("unknown region `{0}`")]
    UnknownRegion(String),
}

impl Scene {
    pub fn body(&self, id: &str) -> Option<&BoxBody> {
        self.bodies.iter().find(|b| b.id == id)
    }

    pub fn body_index(&self, id: &str) -> Option<usize> {
        self.bodies.iter().position(|b| b.id == id)
    }

    pub fn region(&self, id: &str) -> Option<&Region> {
        self.regions.iter().find(|r| r.id == id)
    }

    /// Region whose top surface supports a box of half extents `half`
    /// centered at `center`.
    pub fn supporting_region(&self, center: Vec3, half: Vec3) -> Option<&Region> {
        self.regions.iter().find(|r| {
            (center.z - (r.top_z() + half.z)).abs() <= CONTACT_EPS
                && r.contains_footprint(center.x, center.y, half.x, half.y)
        })
    }

    /// Checks every scene invariant, naming the first violated rule.
    pub fn validate(&self) -> Result<(), WorldError> {
        let bad = |m: String| Err(WorldError::Invariant(m));
        let r = &self.reach;
        if !(r.r_min > 0.0 && r.r_min < r.r_max) {
            return bad("reach requires 0 < r_min < r_max".into());
        }
        if !(r.z_min < r.z_max) {
            return bad("reach requires z_min < z_max".into());
        }
        let mut ids = HashSet::new();
        for reg in &self.regions {
            if !ids.insert(reg.id.as_str()) {
                return bad(format!("duplicate region id `{}`", reg.id));
            }
            if !reg.center.is_finite() {
                return bad(format!("region `{}` has non-finite center", reg.id));
            }
            for h in [reg.half_x, reg.half_y] {
                if !(h > 0.0 && h <= 0.5) {
                    return bad(format!("region `{}` half size must lie in (0, 0.5]", reg.id));
                }
            }
            if !(0.0..=0.8).contains(&reg.top_z()) {
                return bad(format!("region `{}` top_z must lie in [0, 0.8]", reg.id));
            }
        }
        let mut ids = HashSet::new();
        for b in &self.bodies {
            if !ids.insert(b.id.as_str()) {
                return bad(format!("duplicate body id `{}`", b.id));
            }
            let h = b.half_extents;
            if ![h.x, h.y, h.z].iter().all(|&v| v > 0.0 && v <= 0.15) {
                return bad(format!("body `{}` half extents must lie in (0, 0.15]", b.id));
            }
            if !b.center.is_finite() {
                return bad(format!("body `{}` has non-finite center", b.id));
            }
            let Some(reg) = self.region(&b.region_id) else {
                return bad(format!("body `{}` references unknown region `{}`", b.id, b.region_id));
            };
            if (b.center.z - (reg.top_z() + h.z)).abs() > CONTACT_EPS {
                return bad(format!("body `{}` does not rest on region `{}`", b.id, reg.id));
            }
            if !reg.contains_footprint(b.center.x, b.center.y, h.x, h.y) {
                return bad(format!("body `{}` footprint leaves region `{}`", b.id, reg.id));
            }
        }
        for (i, a) in self.bodies.iter().enumerate() {
            for b in &self.bodies[i + 1..] {
                if a.region_id == b.region_id && a.aabb().penetrates(&b.aabb()) {
                    return bad(format!("bodies `{}` and `{}` overlap", a.id, b.id));
                }
            }
        }
        Ok(())
    }

    /// Reflection through the x-z plane of the robot base.
    pub fn mirror_y(&self) -> Scene {
        let mut s = self.clone();
        let flip = |v: Vec3| Vec3::new(v.x, -v.y, v.z);
        s.reach.shoulder = flip(s.reach.shoulder);
        s.gripper.home_config = flip(s.gripper.home_config);
        for r in &mut s.regions {
            r.center = flip(r.center);
        }
        for b in &mut s.bodies {
            b.center = flip(b.center);
        }
        s
    }
}

/// Candidate box centers on `region` for a box shaped like `body`, spaced
/// `step` apart and symmetric about the region center. Ordered with x in
/// the outer loop and y in the inner loop, both ascending.
pub fn place_cells(region: &Region, body: &BoxBody, step: f64) -> Vec<Vec3> {
    let per_axis = |region_half: f64, body_half: f64| -> usize {
        let span = 2.0 * (region_half - body_half);
        if span < -CONTACT_EPS || step <= 0.0 {
            0
        } else {
            (span.max(0.0) / step + 1e-9).floor() as usize + 1
        }
    };
    let nx = per_axis(region.half_x, body.half_extents.x);
    let ny = per_axis(region.half_y, body.half_extents.y);
    let z = region.top_z() + body.half_extents.z;
    let mut out = Vec::with_capacity(nx * ny);
    for i in 0..nx {
        let x = region.center.x + (i as f64 - (nx as f64 - 1.0) / 2.0) * step;
        for j in 0..ny {
            let y = region.center.y + (j as f64 - (ny as f64 - 1.0) / 2.0) * step;
            out.push(Vec3::new(x, y, z));
        }
    }
    out
}

/// Ranges for [`sample_scene`].
#[derive(Debug, Clone, PartialEq)]
pub struct SampleParams {
    /// Force an exact neighbor count instead of drawing from `0..=max_neighbors`.
    pub neighbor_count: Option<usize>,
    pub max_neighbors: usize,
    pub p_near: f64,
    pub near_gap: (f64, f64),
    /// Side of the square window around the target used for far neighbors.
    pub window: f64,
    /// Half-angle of the region-direction fan about +x, degrees.
    pub region_angle_deg: f64,
    pub region_dist: (f64, f64),
    pub region_top_z: (f64, f64),
    pub region_half: (f64, f64),
    pub box_half: (f64, f64),
    pub max_attempts: usize,
}

impl Default for SampleParams {
    fn default() -> Self {
        SampleParams {
            neighbor_count: None,
            max_neighbors: 3,
            p_near: 0.7,
            near_gap: (0.0, 0.1),
            window: 0.5,
            region_angle_deg: 120.0,
            region_dist: (0.30, 0.90),
            region_top_z: (0.05, 0.60),
            region_half: (0.15, 0.30),
            box_half: (0.015, 0.06),
            max_attempts: 1000,
        }
    }
}

impl SampleParams {
    pub fn check(&self) -> Result<(), WorldError> {
        let ordered = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && a <= b;
        let ok = ordered(self.near_gap)
            && ordered(self.region_dist)
            && ordered(self.region_top_z)
            && ordered(self.region_half)
            && ordered(self.box_half)
            && self.box_half.0 > 0.0
            && self.box_half.1 <= 0.15
            && self.region_half.0 > 0.0
            && self.region_half.1 <= 0.5
            && self.region_top_z.0 >= 0.0
            && self.region_top_z.1 <= 0.8
            && (0.0..=1.0).contains(&self.p_near)
            && self.window > 0.0
            && self.max_attempts > 0;
        if ok {
            Ok(())
        } else {
            Err(WorldError::Invariant("invalid sampling parameters".into()))
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Seeded generator for stream `index` of `seed`.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Samples one training scene: a single region holding the target body
/// (`bodies[0]`) and up to `max_neighbors` neighbors biased toward the
/// target.
pub fn sample_scene(seed: u64, params: &SampleParams) -> Result<Scene, WorldError> {
    sample_scene_with(&mut ChaCha8Rng::seed_from_u64(seed), params)
}

pub fn sample_scene_with(rng: &mut ChaCha8Rng, params: &SampleParams) -> Result<Scene, WorldError> {
    params.check()?;
    let angle = uniform(rng, (-params.region_angle_deg, params.region_angle_deg)).to_radians();
    let dist = uniform(rng, params.region_dist);
    let top_z = uniform(rng, params.region_top_z);
    let region = Region {
        id: "table".into(),
        center: Vec3::new(dist * angle.cos(), dist * angle.sin(), top_z),
        half_x: uniform(rng, params.region_half),
        half_y: uniform(rng, params.region_half),
    };

    let draw_half = |rng: &mut ChaCha8Rng| {
        Vec3::new(
            uniform(rng, params.box_half),
            uniform(rng, params.box_half),
            uniform(rng, params.box_half),
        )
    };

    let half = draw_half(rng);
    let (hx, hy) = (half.x.min(region.half_x), half.y.min(region.half_y));
    let half = Vec3::new(hx, hy, half.z);
    let tx = region.center.x + uniform(rng, (-(region.half_x - hx), region.half_x - hx));
    let ty = region.center.y + uniform(rng, (-(region.half_y - hy), region.half_y - hy));
    let target = BoxBody {
        id: "target".into(),
        half_extents: half,
        center: Vec3::new(tx, ty, top_z + half.z),
        region_id: region.id.clone(),
    };

    let k = match params.neighbor_count {
        Some(k) => k,
        None => rng.gen_range(0..=params.max_neighbors),
    };
    let mut bodies = vec![target];
    for n in 0..k {
        let mut placed = None;
        // Size and placement mode are redrawn with every attempt: a fixed
        // large neighbor may have no legal near pose at all.
        for _ in 0..params.max_attempts {
            let half = draw_half(rng);
            let near = rng.gen_bool(params.p_near);
            let t = &bodies[0];
            let (x, y) = if near {
                let gap = uniform(rng, params.near_gap);
                let side = rng.gen_range(0..4);
                let along_x = t.half_extents.x + gap + half.x;
                let along_y = t.half_extents.y + gap + half.y;
                let lat_y = uniform(rng, (-(t.half_extents.y + half.y), t.half_extents.y + half.y));
                let lat_x = uniform(rng, (-(t.half_extents.x + half.x), t.half_extents.x + half.x));
                match side {
                    0 => (t.center.x + along_x, t.center.y + lat_y),
                    1 => (t.center.x - along_x, t.center.y + lat_y),
                    2 => (t.center.x + lat_x, t.center.y + along_y),
                    _ => (t.center.x + lat_x, t.center.y - along_y),
                }
            } else {
                let w = params.window / 2.0;
                (t.center.x + uniform(rng, (-w, w)), t.center.y + uniform(rng, (-w, w)))
            };
            if !region.contains_footprint(x, y, half.x, half.y) {
                continue;
            }
            let cand = BoxBody {
                id: format!("n{}", n + 1),
                half_extents: half,
                center: Vec3::new(x, y, top_z + half.z),
                region_id: region.id.clone(),
            };
            if bodies.iter().all(|b| !b.aabb().penetrates(&cand.aabb())) {
                placed = Some(cand);
                break;
            }
        }
        match placed {
            Some(b) => bodies.push(b),
            None => {
                return Err(WorldError::SamplingExhausted {
                    attempts: params.max_attempts,
                    body: n + 1,
                })
            }
        }
    }

    Ok(Scene {
        regions: vec![region],
        bodies,
        reach: ReachModel::default(),
        gripper: GripperModel::default(),
    })
}

/// Smallest face gap between two boxes in the x-y plane (0 when their
/// footprints touch or overlap).
pub fn footprint_gap(a: &BoxBody, b: &BoxBody) -> f64 {
    let gx = (a.center.x - b.center.x).abs() - a.half_extents.x - b.half_extents.x;
    let gy = (a.center.y - b.center.y).abs() - a.half_extents.y - b.half_extents.y;
    let (gx, gy) = (gx.max(0.0), gy.max(0.0));
    (gx * gx + gy * gy).sqrt()
}

// ---------------------------------------------------------------------------
// Scene file format.

fn expect_len(items: &[Sexp], n: usize, what: &str, at: &Sexp) -> Result<(), ParseError> {
    if items.len() != n {
        return Err(ParseError::at(
            at.pos(),
            format!("`{what}` expects {} fields, found {}", n - 1, items.len() - 1),
        ));
    }
    Ok(())
}

fn pair(e: &Sexp, head: &str) -> Result<(f64, f64), ParseError> {
    let items = e.expect_list(head)?;
    if e.head() != Some(head) {
        return Err(ParseError::at(e.pos(), format!("expected `({head} ...)`")));
    }
    expect_len(items, 3, head, e)?;
    Ok((items[1].expect_f64(head)?, items[2].expect_f64(head)?))
}

/// Parses and validates a scene file.
pub fn parse_scene(text: &str) -> Result<Scene, WorldError> {
    let root = sexpr::parse_one(text)?;
    let items = root.expect_list("scene")?;
    if root.head() != Some("scene") {
        return Err(ParseError::at(root.pos(), "expected `(scene ...)`").into());
    }
    let mut scene = Scene::default();
    let mut saw_reach = false;
    for e in &items[1..] {
        let fields = e.expect_list("scene element")?;
        match e.head() {
            Some("reach") => {
                expect_len(fields, 4, "reach", e)?;
                let sh = fields[1].expect_list("shoulder")?;
                if fields[1].head() != Some("shoulder") {
                    return Err(ParseError::at(fields[1].pos(), "expected `(shoulder x y z)`").into());
                }
                expect_len(sh, 4, "shoulder", &fields[1])?;
                let (r_min, r_max) = pair(&fields[2], "r")?;
                let (z_min, z_max) = pair(&fields[3], "z")?;
                scene.reach = ReachModel {
                    shoulder: Vec3::new(
                        sh[1].expect_f64("shoulder")?,
                        sh[2].expect_f64("shoulder")?,
                        sh[3].expect_f64("shoulder")?,
                    ),
                    r_min,
                    r_max,
                    z_min,
                    z_max,
                };
                saw_reach = true;
            }
            Some("region") => {
                expect_len(fields, 7, "region", e)?;
                let num = |i: usize| fields[i].expect_f64("region");
                scene.regions.push(Region {
                    id: fields[1].expect_atom("region id")?.to_string(),
                    center: Vec3::new(num(2)?, num(3)?, num(4)?),
                    half_x: num(5)?,
                    half_y: num(6)?,
                });
            }
            Some("body") => {
                expect_len(fields, 8, "body", e)?;
                let num = |i: usize| fields[i].expect_f64("body");
                let half = Vec3::new(num(5)?, num(6)?, num(7)?);
                scene.bodies.push(BoxBody {
                    id: fields[1].expect_atom("body id")?.to_string(),
                    region_id: fields[2].expect_atom("region id")?.to_string(),
                    center: Vec3::new(num(3)?, num(4)?, f64::NAN),
                    half_extents: half,
                });
            }
            _ => return Err(ParseError::at(e.pos(), "expected `reach`, `region` or `body`").into()),
        }
    }
    if !saw_reach {
        return Err(ParseError::at(root.pos(), "missing `(reach ...)`").into());
    }
    for b in &mut scene.bodies {
        let top = scene
            .regions
            .iter()
            .find(|r| r.id == b.region_id)
            .map(|r| r.top_z())
            .ok_or_else(|| {
                WorldError::Invariant(format!("body `{}` references unknown region `{}`", b.id, b.region_id))
            })?;
        b.center.z = top + b.half_extents.z;
    }
    scene.validate()?;
    Ok(scene)
}

/// Canonical text of a scene: one element per line.
pub fn write_scene(scene: &Scene) -> String {
    let r = &scene.reach;
    let mut out = String::from("(scene\n");
    out += &format!(
        "  (reach (shoulder {} {} {}) (r {} {}) (z {} {}))\n",
        r.shoulder.x, r.shoulder.y, r.shoulder.z, r.r_min, r.r_max, r.z_min, r.z_max
    );
    for g in &scene.regions {
        out += &format!(
            "  (region {} {} {} {} {} {})\n",
            g.id, g.center.x, g.center.y, g.center.z, g.half_x, g.half_y
        );
    }
    for b in &scene.bodies {
        let h = b.half_extents;
        out += &format!(
            "  (body {} {} {} {} {} {} {})\n",
            b.id, b.region_id, b.center.x, b.center.y, h.x, h.y, h.z
        );
    }
    out.push(')');
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(c: Vec3, h: f64) -> Aabb {
        Aabb::new(c, Vec3::new(h, h, h))
    }

    #[test]
    fn overlap_cases() {
        assert!(!aabb_overlap(&cube(Vec3::ZERO, 0.5), &cube(Vec3::new(3.0, 0.0, 0.0), 0.5)));
        assert!(aabb_overlap(&cube(Vec3::ZERO, 0.5), &cube(Vec3::ZERO, 0.5)));
        assert!(!aabb_overlap(&cube(Vec3::ZERO, 0.5), &cube(Vec3::new(1.0, 0.0, 0.0), 0.5)));
    }

    fn region(hx: f64, hy: f64) -> Region {
        Region {
            id: "r".into(),
            center: Vec3::new(0.5, 0.0, 0.2),
            half_x: hx,
            half_y: hy,
        }
    }

    fn body(h: f64) -> BoxBody {
        BoxBody {
            id: "b".into(),
            half_extents: Vec3::new(h, h, h),
            center: Vec3::ZERO,
            region_id: "r".into(),
        }
    }

    #[test]
    fn place_cells_counts() {
        let cells = place_cells(&region(0.3, 0.3), &body(0.05), 0.1);
        assert_eq!(cells.len(), 36);
        // Row-major with x outer.
        assert!(cells[0].x < cells[6].x);
        assert!(cells[0].y < cells[1].y);
        assert!((cells[0].z - 0.25).abs() < 1e-12);
        let mean_x: f64 = cells.iter().map(|c| c.x).sum::<f64>() / 36.0;
        assert!((mean_x - 0.5).abs() < 1e-12);

        assert!(place_cells(&region(0.1, 0.1), &body(0.12), 0.05).is_empty());
        let r = region(0.3, 0.3);
        assert!(place_cells(&r, &body(0.02), 0.04).len() > place_cells(&r, &body(0.02), 0.06).len());
    }

    #[test]
    fn sampling_is_deterministic_and_valid() {
        let p = SampleParams::default();
        for seed in 0..200 {
            let a = sample_scene(seed, &p).unwrap();
            let b = sample_scene(seed, &p).unwrap();
            assert_eq!(write_scene(&a), write_scene(&b));
            a.validate().unwrap();
            assert!(a.bodies.len() <= 4);
            for body in &a.bodies {
                let top = a.region(&body.region_id).unwrap().top_z();
                assert!((body.center.z - top - body.half_extents.z).abs() <= 1e-9);
            }
        }
        let forced = SampleParams {
            neighbor_count: Some(0),
            ..SampleParams::default()
        };
        assert_eq!(sample_scene(3, &forced).unwrap().bodies.len(), 1);
    }

    #[test]
    fn scene_text_rejects_overlap() {
        let text = "(scene (reach (shoulder 0 0 0.3) (r 0.35 0.85) (z 0.02 1)) \
                    (region t 0.5 0 0.2 0.3 0.3) \
                    (body a t 0.5 0 0.05 0.05 0.05) (body b t 0.55 0 0.05 0.05 0.05))";
        assert!(matches!(parse_scene(text), Err(WorldError::Invariant(_))));
        let empty = "(scene (reach (shoulder 0 0 0.3) (r 0.35 0.85) (z 0.02 1)) (region t 0.5 0 0.2 0.3 0.3))";
        assert!(parse_scene(empty).unwrap().bodies.is_empty());
        let err = parse_scene("(scene (reach (shoulder 0 0 0.3) (r 0.35 0.85) (z 0.02 1))\n  (region t 0.5 x 0.2 0.3 0.3))")
            .unwrap_err();
        match err {
            WorldError::Parse(p) => assert_eq!((p.line, p.col), (2, 17)),
            e => panic!("unexpected {e}"),
        }
    }
}
