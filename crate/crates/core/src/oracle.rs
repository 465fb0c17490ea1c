//! Geometric ground truth: grasp feasibility (the dataset labeler and the
//! expensive check in plan validation) and an RRT over tool-point space.
//!
//! Feasibility of grasping a body along a direction has three failure
//! sources, each realized with box geometry:
//! - reach: the tool point (center of the grasped face) must lie inside
//!   the reach shell;
//! - body collision: the palm, both fingers and their approach sweeps must
//!   not penetrate any other body;
//! - table collision: none of those boxes may penetrate a region slab, and
//!   for side grasps none may dip below the supporting surface.

use rand::Rng;

use crate::world::{
    stream_rng, Aabb, BoxBody, GraspDirection, GripperModel, Scene, Vec3, WorldError, CONTACT_EPS,
};

/// Extra approach distance beyond the standoff covered by the sweep.
pub const APPROACH: f64 = 0.15;
/// How far the finger tips reach past the grasped face, along the approach.
/// The fingers are longer than this and stick out behind the face.
pub const GRASP_DEPTH: f64 = 0.05;
/// Interpolation resolution for motion validation.
pub const RESOLUTION: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GripperConfig {
    pub position: Vec3,
    pub direction: GraspDirection,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MotionPlan {
    pub waypoints: Vec<GripperConfig>,
}

impl MotionPlan {
    pub fn start(&self) -> Option<GripperConfig> {
        self.waypoints.first().copied()
    }

    pub fn end(&self) -> Option<GripperConfig> {
        self.waypoints.last().copied()
    }

    pub fn length(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| w[0].position.dist(w[1].position))
            .sum()
    }
}

/// Per-direction feasibility in [`GraspDirection::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct FeasibilityLabel(pub [bool; 5]);

impl FeasibilityLabel {
    pub fn get(&self, d: GraspDirection) -> bool {
        self.0[d.index()]
    }

    pub fn bits(&self) -> u8 {
        self.0
            .iter()
            .enumerate()
            .fold(0u8, |acc, (k, &f)| acc | ((f as u8) << k))
    }

    pub fn from_bits(b: u8) -> Self {
        let mut out = [false; 5];
        for (k, v) in out.iter_mut().enumerate() {
            *v = b & (1 << k) != 0;
        }
        FeasibilityLabel(out)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("unknown body `{0}`")]
    UnknownBody(String),
    #[error("cell {0:?} is not on any region")]
    CellOffRegion(Vec3),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MotionError {
    #[error("no path found within {0} iterations")]
    Infeasible(usize),
    #[error("{0} endpoint is in collision")]
    InvalidEndpoint(&'static str),
}

/// Axes of the gripper frame for a grasp: (closing, across, approach).
fn frame_axes(half: Vec3, dir: GraspDirection) -> (usize, usize, usize) {
    match dir {
        GraspDirection::PX | GraspDirection::NX => (1, 2, 0),
        GraspDirection::PY | GraspDirection::NY => (0, 2, 1),
        GraspDirection::PZ => {
            if half.x <= half.y {
                (0, 1, 2)
            } else {
                (1, 0, 2)
            }
        }
    }
}

/// Closing axis (world index) used to grasp a box of these half extents.
pub fn closing_axis(half: Vec3, dir: GraspDirection) -> usize {
    frame_axes(half, dir).0
}

fn to_world(v: Vec3, (c, w, a): (usize, usize, usize)) -> Vec3 {
    Vec3::ZERO.with(c, v.x).with(w, v.y).with(a, v.z)
}

/// Center of the grasped face; the tool point of the grasp.
pub fn tool_point(center: Vec3, half: Vec3, dir: GraspDirection) -> Vec3 {
    let ax = dir.axis_index();
    center.with(ax, center.get(ax) + dir.sign() * half.get(ax))
}

/// Gripper solid at the grasp pose plus its approach sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct GraspVolume {
    /// Palm, then the two fingers.
    pub static_boxes: [Aabb; 3],
    pub swept: [Aabb; 3],
}

impl GraspVolume {
    pub fn boxes(&self) -> impl Iterator<Item = &Aabb> {
        self.static_boxes.iter().chain(self.swept.iter())
    }

    pub fn count(&self) -> usize {
        self.static_boxes.len() + self.swept.len()
    }
}

fn sweep(b: &Aabb, offset: Vec3) -> Aabb {
    let (lo, hi) = (b.min(), b.max());
    let (lo2, hi2) = (lo + offset, hi + offset);
    Aabb::from_bounds(
        Vec3::new(lo.x.min(lo2.x), lo.y.min(lo2.y), lo.z.min(lo2.z)),
        Vec3::new(hi.x.max(hi2.x), hi.y.max(hi2.y), hi.z.max(hi2.z)),
    )
}

fn gripper_boxes(center: Vec3, half: Vec3, dir: GraspDirection, g: &GripperModel) -> [Aabb; 3] {
    let axes = frame_axes(half, dir);
    let a = dir.axis();
    let face = tool_point(center, half, dir);
    let palm = Aabb::new(face + a * g.standoff, to_world(g.palm_half, axes));
    let c_axis = Vec3::ZERO.with(axes.0, 1.0);
    let offset = half.get(axes.0) + g.finger_clearance + g.finger_half.x;
    let finger_mid = face - a * (GRASP_DEPTH - g.finger_half.z);
    let fh = to_world(g.finger_half, axes);
    [
        palm,
        Aabb::new(finger_mid - c_axis * offset, fh),
        Aabb::new(finger_mid + c_axis * offset, fh),
    ]
}

/// Gripper solid for grasping `body` along `dir`, with its approach sweep.
pub fn grasp_volume(body: &BoxBody, dir: GraspDirection, gripper: &GripperModel) -> GraspVolume {
    grasp_volume_at(body.center, body.half_extents, dir, gripper)
}

pub fn grasp_volume_at(center: Vec3, half: Vec3, dir: GraspDirection, gripper: &GripperModel) -> GraspVolume {
    let static_boxes = gripper_boxes(center, half, dir, gripper);
    let off = dir.axis() * APPROACH;
    let swept = [
        sweep(&static_boxes[0], off),
        sweep(&static_boxes[1], off),
        sweep(&static_boxes[2], off),
    ];
    GraspVolume { static_boxes, swept }
}

fn grasp_feasible(scene: &Scene, body: &BoxBody, dir: GraspDirection) -> bool {
    let tool = tool_point(body.center, body.half_extents, dir);
    if !scene.reach.reaches(tool) {
        return false;
    }
    let vol = grasp_volume(body, dir, &scene.gripper);
    let own_top = scene.region(&body.region_id).map(|r| r.top_z());
    for b in vol.boxes() {
        if scene
            .bodies
            .iter()
            .any(|o| o.id != body.id && b.penetrates(&o.aabb()))
        {
            return false;
        }
        if scene.regions.iter().any(|r| b.penetrates(&r.slab())) {
            return false;
        }
        if dir.is_side() {
            if let Some(top) = own_top {
                if b.min().z < top - CONTACT_EPS {
                    return false;
                }
            }
        }
    }
    true
}

/// Whether `body_id` can be grasped along `dir` in `scene`.
pub fn feasible(scene: &Scene, body_id: &str, dir: GraspDirection) -> Result<bool, OracleError> {
    let body = scene
        .body(body_id)
        .ok_or_else(|| OracleError::UnknownBody(body_id.to_string()))?;
    Ok(grasp_feasible(scene, body, dir))
}

pub fn label_all(scene: &Scene, body_id: &str) -> Result<FeasibilityLabel, OracleError> {
    let body = scene
        .body(body_id)
        .ok_or_else(|| OracleError::UnknownBody(body_id.to_string()))?;
    let mut out = [false; 5];
    for d in GraspDirection::ALL {
        out[d.index()] = grasp_feasible(scene, body, d);
    }
    Ok(FeasibilityLabel(out))
}

/// `scene` with `body` moved to `cell` on whichever region supports it.
pub fn with_placement(scene: &Scene, body: &BoxBody, cell: Vec3) -> Result<Scene, OracleError> {
    let region = scene
        .supporting_region(cell, body.half_extents)
        .ok_or(OracleError::CellOffRegion(cell))?
        .id
        .clone();
    let mut s = scene.clone();
    s.bodies.retain(|b| b.id != body.id);
    s.bodies.push(BoxBody {
        id: body.id.clone(),
        half_extents: body.half_extents,
        center: cell,
        region_id: region,
    });
    Ok(s)
}

/// Feasibility of putting `body` down at `cell` along `dir`: the reverse of
/// picking it from there, with the body's old pose vacated.
pub fn feasible_place(scene: &Scene, body: &BoxBody, cell: Vec3, dir: GraspDirection) -> Result<bool, OracleError> {
    let s = with_placement(scene, body, cell)?;
    let placed = s.bodies.last().expect("placement pushed a body");
    if s.bodies[..s.bodies.len() - 1]
        .iter()
        .any(|o| o.aabb().penetrates(&placed.aabb()))
    {
        return Ok(false);
    }
    Ok(grasp_feasible(&s, placed, dir))
}

// ---------------------------------------------------------------------------
// Motion planning.

/// The moving solid during one motion segment, relative to the tool point:
/// gripper boxes opened for a particular body and direction, plus the
/// carried body when transporting.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolShape {
    pub boxes: Vec<Aabb>,
    /// Body excluded from the obstacle set (the carried one).
    pub carried: Option<String>,
}

impl ToolShape {
    fn relative(center: Vec3, half: Vec3, dir: GraspDirection, g: &GripperModel) -> Vec<Aabb> {
        let tool = tool_point(center, half, dir);
        gripper_boxes(center, half, dir, g)
            .iter()
            .map(|b| Aabb::new(b.center - tool, b.half))
            .collect()
    }

    /// Gripper configured to grasp `body` along `dir`, empty-handed.
    pub fn for_pick(body: &BoxBody, dir: GraspDirection, g: &GripperModel) -> Self {
        ToolShape {
            boxes: Self::relative(body.center, body.half_extents, dir, g),
            carried: None,
        }
    }

    /// Gripper holding `body` grasped along `dir`.
    pub fn carrying(body: &BoxBody, dir: GraspDirection, g: &GripperModel) -> Self {
        let mut boxes = Self::relative(body.center, body.half_extents, dir, g);
        let tool = tool_point(body.center, body.half_extents, dir);
        boxes.push(Aabb::new(body.center - tool, body.half_extents));
        ToolShape {
            boxes,
            carried: Some(body.id.clone()),
        }
    }

    pub fn collides(&self, scene: &Scene, at: Vec3) -> bool {
        self.boxes.iter().any(|rel| {
            let b = Aabb::new(rel.center + at, rel.half);
            scene
                .bodies
                .iter()
                .any(|o| Some(&o.id) != self.carried.as_ref() && b.penetrates(&o.aabb()))
                || scene.regions.iter().any(|r| b.penetrates(&r.slab()))
        })
    }

    /// Straight segment check at [`RESOLUTION`], endpoints included.
    pub fn segment_free(&self, scene: &Scene, a: Vec3, b: Vec3) -> bool {
        let n = (a.dist(b) / RESOLUTION).ceil().max(1.0) as usize;
        (0..=n).all(|i| !self.collides(scene, a.lerp(b, i as f64 / n as f64)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionBudget {
    pub max_iterations: usize,
    pub seed: u64,
    pub goal_bias: f64,
    pub step: f64,
}

impl Default for MotionBudget {
    fn default() -> Self {
        MotionBudget {
            max_iterations: 5000,
            seed: 0,
            goal_bias: 0.1,
            step: 0.05,
        }
    }
}

impl MotionBudget {
    pub fn with_seed(seed: u64) -> Self {
        MotionBudget {
            seed,
            ..Self::default()
        }
    }
}

/// Tool-point workspace sampled by the RRT.
const WORKSPACE_MIN: Vec3 = Vec3::new(-1.3, -1.3, 0.0);
const WORKSPACE_MAX: Vec3 = Vec3::new(1.3, 1.3, 1.3);

/// RRT from `from` to `to` with the segment's direction fixed to
/// `to.direction`, followed by one greedy shortcut pass. Returned
/// waypoints start at `from` and end at `to` exactly.
pub fn plan_motion(
    scene: &Scene,
    shape: &ToolShape,
    from: GripperConfig,
    to: GripperConfig,
    budget: &MotionBudget,
) -> Result<MotionPlan, MotionError> {
    if shape.collides(scene, from.position) {
        return Err(MotionError::InvalidEndpoint("start"));
    }
    if shape.collides(scene, to.position) {
        return Err(MotionError::InvalidEndpoint("goal"));
    }
    let goal = to.position;
    let lo = Vec3::new(
        WORKSPACE_MIN.x.min(from.position.x).min(goal.x),
        WORKSPACE_MIN.y.min(from.position.y).min(goal.y),
        WORKSPACE_MIN.z.min(from.position.z).min(goal.z),
    );
    let hi = Vec3::new(
        WORKSPACE_MAX.x.max(from.position.x).max(goal.x),
        WORKSPACE_MAX.y.max(from.position.y).max(goal.y),
        WORKSPACE_MAX.z.max(from.position.z).max(goal.z),
    );
    let mut rng = stream_rng(budget.seed, 0x524254);
    let mut nodes: Vec<(Vec3, usize)> = vec![(from.position, usize::MAX)];
    let mut reached = None;
    for _ in 0..budget.max_iterations {
        let sample = if rng.gen_bool(budget.goal_bias) {
            goal
        } else {
            Vec3::new(
                rng.gen_range(lo.x..hi.x),
                rng.gen_range(lo.y..hi.y),
                rng.gen_range(lo.z..hi.z),
            )
        };
        let (near_idx, near_d) = nodes
            .iter()
            .enumerate()
            .map(|(i, (p, _))| (i, p.dist(sample)))
            .fold((0, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best });
        let near = nodes[near_idx].0;
        let new = if near_d <= budget.step {
            sample
        } else {
            near.lerp(sample, budget.step / near_d)
        };
        if !shape.segment_free(scene, near, new) {
            continue;
        }
        nodes.push((new, near_idx));
        let last = nodes.len() - 1;
        if new.dist(goal) <= budget.step && shape.segment_free(scene, new, goal) {
            reached = Some(last);
            break;
        }
    }
    let Some(mut idx) = reached else {
        return Err(MotionError::Infeasible(budget.max_iterations));
    };

    let mut path = vec![goal];
    while idx != usize::MAX {
        path.push(nodes[idx].0);
        idx = nodes[idx].1;
    }
    path.reverse();
    if path.len() >= 2 && path[path.len() - 2] == goal {
        path.pop();
    }

    // Greedy shortcut: from each kept point jump to the farthest visible one.
    let mut smooth = vec![path[0]];
    let mut i = 0;
    while i + 1 < path.len() {
        let mut j = path.len() - 1;
        while j > i + 1 && !shape.segment_free(scene, path[i], path[j]) {
            j -= 1;
        }
        smooth.push(path[j]);
        i = j;
    }

    let mut waypoints: Vec<GripperConfig> = smooth
        .into_iter()
        .map(|p| GripperConfig {
            position: p,
            direction: to.direction,
        })
        .collect();
    waypoints[0] = from;
    *waypoints.last_mut().expect("non-empty path") = to;
    Ok(MotionPlan { waypoints })
}

/// Re-checks every segment of `plan` at [`RESOLUTION`].
pub fn validate_motion(scene: &Scene, shape: &ToolShape, plan: &MotionPlan) -> bool {
    plan.waypoints
        .windows(2)
        .all(|w| shape.segment_free(scene, w[0].position, w[1].position))
}

impl From<OracleError> for WorldError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::UnknownBody(id) => WorldError::UnknownBody(id),
            OracleError::CellOffRegion(c) => WorldError::Invariant(format!("cell {c:?} off region")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{ReachModel, Region};

    fn scene_with(bodies: Vec<BoxBody>, top: f64) -> Scene {
        Scene {
            regions: vec![Region {
                id: "t".into(),
                center: Vec3::new(0.5, 0.0, top),
                half_x: 0.3,
                half_y: 0.3,
            }],
            bodies,
            reach: ReachModel::default(),
            gripper: GripperModel::default(),
        }
    }

    fn body(id: &str, x: f64, y: f64, top: f64, h: Vec3) -> BoxBody {
        BoxBody {
            id: id.into(),
            half_extents: h,
            center: Vec3::new(x, y, top + h.z),
            region_id: "t".into(),
        }
    }

    #[test]
    fn closing_axis_rules() {
        let g = GripperModel::default();
        let cube = body("a", 0.5, 0.0, 0.2, Vec3::new(0.03, 0.03, 0.05));
        assert_eq!(closing_axis(cube.half_extents, GraspDirection::PZ), 0);
        assert_eq!(closing_axis(Vec3::new(0.05, 0.02, 0.05), GraspDirection::PZ), 1);
        let v = grasp_volume(&cube, GraspDirection::PZ, &g);
        assert_eq!(v.count(), 6);
        // Fingers flank along x, so they differ in x and not in y.
        assert!(v.static_boxes[1].center.x < cube.center.x && v.static_boxes[2].center.x > cube.center.x);
        assert_eq!(v.static_boxes[1].center.y, v.static_boxes[2].center.y);

        let nx = grasp_volume(&cube, GraspDirection::NX, &g);
        let face = cube.center.x - cube.half_extents.x;
        let reach_out = nx.swept.iter().map(|b| b.min().x).fold(f64::INFINITY, f64::min);
        assert!(reach_out <= face - (g.standoff + APPROACH) + 1e-12);
    }

    #[test]
    fn reach_limits() {
        let far = scene_with(vec![body("a", 2.0, 0.0, 0.2, Vec3::new(0.02, 0.02, 0.05))], 0.2);
        let far = Scene {
            regions: vec![Region {
                id: "t".into(),
                center: Vec3::new(2.0, 0.0, 0.2),
                half_x: 0.3,
                half_y: 0.3,
            }],
            ..far
        };
        assert_eq!(label_all(&far, "a").unwrap(), FeasibilityLabel([false; 5]));

        let near = scene_with(vec![body("a", 0.5, 0.0, 0.2, Vec3::new(0.02, 0.02, 0.05))], 0.2);
        assert!(feasible(&near, "a", GraspDirection::PZ).unwrap());
        assert!(matches!(feasible(&near, "zz", GraspDirection::PZ), Err(OracleError::UnknownBody(_))));
    }

    #[test]
    fn flanked_body_is_blocked_until_cleared() {
        let small = Vec3::new(0.02, 0.02, 0.04);
        let tall = Vec3::new(0.02, 0.02, 0.07);
        let g = body("g", 0.5, 0.0, 0.2, small);
        let l = body("l", 0.5 - 0.045, 0.0, 0.2, tall);
        let r = body("r", 0.5 + 0.045, 0.0, 0.2, tall);
        let s = scene_with(vec![g.clone(), l.clone(), r.clone()], 0.2);
        // Fingers closing along x hit the flankers; those closing along y
        // pass beside them, since the flankers are no wider than the target.
        assert_eq!(label_all(&s, "g").unwrap(), FeasibilityLabel([true, true, false, false, false]));
        // The taller boxes can be lifted from above: fingers clear the short box.
        assert!(feasible(&s, "l", GraspDirection::PZ).unwrap());
        assert!(feasible(&s, "r", GraspDirection::PZ).unwrap());
        let cleared = scene_with(vec![g, l], 0.2);
        assert!(!feasible(&cleared, "g", GraspDirection::PZ).unwrap());
        let cleared = scene_with(vec![cleared.bodies[0].clone()], 0.2);
        assert!(feasible(&cleared, "g", GraspDirection::PZ).unwrap());
    }

    #[test]
    fn placement_checks() {
        let h = Vec3::new(0.02, 0.02, 0.05);
        let a = body("a", 0.4, 0.0, 0.2, h);
        let s = scene_with(vec![a.clone()], 0.2);
        let cell = Vec3::new(0.6, 0.1, 0.25);
        assert!(feasible_place(&s, &a, cell, GraspDirection::PZ).unwrap());
        // Putting it back where it is equals picking it.
        for d in GraspDirection::ALL {
            assert_eq!(
                feasible_place(&s, &a, a.center, d).unwrap(),
                feasible(&s, "a", d).unwrap()
            );
        }
        let b = body("b", 0.6, 0.1, 0.2, h);
        let s2 = scene_with(vec![a.clone(), b], 0.2);
        assert!(!feasible_place(&s2, &a, Vec3::new(0.61, 0.1, 0.25), GraspDirection::PZ).unwrap());
        assert!(matches!(
            feasible_place(&s2, &a, Vec3::new(3.0, 0.0, 0.25), GraspDirection::PZ),
            Err(OracleError::CellOffRegion(_))
        ));
    }

    #[test]
    fn motion_in_empty_scene_is_straight() {
        let s = Scene {
            regions: vec![],
            ..scene_with(vec![], 0.2)
        };
        let b = body("a", 0.5, 0.0, 0.2, Vec3::new(0.02, 0.02, 0.05));
        let shape = ToolShape::for_pick(&b, GraspDirection::PZ, &s.gripper);
        let from = GripperConfig {
            position: Vec3::new(0.0, 0.0, 0.9),
            direction: GraspDirection::PZ,
        };
        let to = GripperConfig {
            position: Vec3::new(0.5, 0.2, 0.4),
            direction: GraspDirection::PZ,
        };
        let plan = plan_motion(&s, &shape, from, to, &MotionBudget::default()).unwrap();
        assert_eq!(plan.waypoints.len(), 2);
        assert_eq!(plan.start(), Some(from));
        assert_eq!(plan.end(), Some(to));
    }

    #[test]
    fn endpoint_inside_box_is_rejected() {
        let b = body("a", 0.5, 0.0, 0.2, Vec3::new(0.05, 0.05, 0.05));
        let s = scene_with(vec![b.clone()], 0.2);
        let shape = ToolShape::for_pick(&b, GraspDirection::PZ, &s.gripper);
        let from = GripperConfig {
            position: Vec3::new(0.0, 0.0, 0.9),
            direction: GraspDirection::PZ,
        };
        // Shifted along the closing axis, one finger sits inside the box.
        let to = GripperConfig {
            position: b.center + Vec3::new(0.03, 0.0, 0.0),
            direction: GraspDirection::PZ,
        };
        assert_eq!(
            plan_motion(&s, &shape, from, to, &MotionBudget::default()),
            Err(MotionError::InvalidEndpoint("goal"))
        );
    }

    #[test]
    fn motion_around_a_wall() {
        // A wall between start and goal forces the tree to go around it.
        let mut s = scene_with(vec![], 0.0);
        s.regions[0] = Region {
            id: "t".into(),
            center: Vec3::new(0.5, 0.0, 0.0),
            half_x: 0.5,
            half_y: 0.5,
        };
        s.bodies.push(BoxBody {
            id: "wall".into(),
            half_extents: Vec3::new(0.02, 0.15, 0.15),
            center: Vec3::new(0.5, 0.0, 0.15),
            region_id: "t".into(),
        });
        let small = body("a", 0.3, 0.0, 0.0, Vec3::new(0.02, 0.02, 0.02));
        let shape = ToolShape::for_pick(&small, GraspDirection::PZ, &s.gripper);
        let from = GripperConfig {
            position: Vec3::new(0.3, 0.0, 0.1),
            direction: GraspDirection::PZ,
        };
        let to = GripperConfig {
            position: Vec3::new(0.7, 0.0, 0.1),
            direction: GraspDirection::PZ,
        };
        assert!(!shape.segment_free(&s, from.position, to.position));
        let plan = plan_motion(&s, &shape, from, to, &MotionBudget::with_seed(3)).unwrap();
        assert!(plan.waypoints.len() > 2);
        assert!(validate_motion(&s, &shape, &plan));
    }
}
