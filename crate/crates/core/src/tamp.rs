//! The planning loop: enumerate task plans horizon by horizon, screen
//! them with the feasibility classifier, validate survivors with the motion
//! planner, and turn every failure into a nogood for the current horizon.

use std::cell::RefCell;
use std::collections::hash_map::{Entry, HashMap};
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use crate::nn::{NfcModel, Predictor, SparseInput, Trace};
use crate::oracle::{self, GripperConfig, MotionBudget, MotionPlan, ToolShape, APPROACH};
use crate::planner::{Domain, GroundAction, GroundError, Nogood, Plan, Problem, Session, State, Universe};
use crate::render::{render_observation, DepthObservation, Target};
use crate::world::{BoxBody, GraspDirection, Scene, Vec3};

/// Per-direction feasibility probabilities for an observation.
pub trait FeasibilityModel {
    fn predict(&self, obs: &DepthObservation) -> [f64; 5];
}

thread_local! {
    static TRACE: RefCell<Trace<f32>> = RefCell::new(Trace::new());
}

impl FeasibilityModel for NfcModel<f32> {
    fn predict(&self, obs: &DepthObservation) -> [f64; 5] {
        let input = SparseInput::from_observation(obs).expect("rendered observations have the model's shape");
        let p = TRACE.with(|t| self.forward_sparse(&input, &mut t.borrow_mut()));
        p.map(f64::from)
    }
}

impl FeasibilityModel for Predictor {
    fn predict(&self, obs: &DepthObservation) -> [f64; 5] {
        let input = SparseInput::from_observation(obs).expect("rendered observations have the model's shape");
        self.predict_sparse(&input).map(f64::from)
    }
}

impl<F: Fn(&DepthObservation) -> [f64; 5]> FeasibilityModel for F {
    fn predict(&self, obs: &DepthObservation) -> [f64; 5] {
        self(obs)
    }
}

#[derive(Clone, Copy)]
pub struct TampOptions<'m> {
    pub use_nfc: bool,
    pub model: Option<&'m dyn FeasibilityModel>,
    /// A gated action passes when its probability is strictly above this.
    pub beta: f64,
    pub step: f64,
    pub h_max: usize,
    pub time_budget: Duration,
    pub seed: u64,
    /// Nogood contexts keep bodies within this distance of the failing
    /// action's target; `None` keeps the whole state.
    pub nogood_radius: Option<f64>,
    /// When the gated search exhausts a horizon, search it again without
    /// the gate before moving on, keeping only motion-planner nogoods.
    pub nfc_fallback: bool,
}

impl Default for TampOptions<'_> {
    fn default() -> Self {
        TampOptions {
            use_nfc: false,
            model: None,
            beta: 0.5,
            step: 0.1,
            h_max: 12,
            time_budget: Duration::from_secs(120),
            seed: 0,
            nogood_radius: Some(0.5),
            nfc_fallback: false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TampError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Ground(#[from] GroundError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Solved,
    Exhausted,
    Timeout,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Solved => "solved",
            Status::Exhausted => "exhausted",
            Status::Timeout => "timeout",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metrics {
    pub n_task_plans: usize,
    /// Classifier forward passes.
    pub n_nfc_queries: usize,
    pub n_nfc_rejections: usize,
    /// Candidate plans handed to the motion planner.
    pub n_mp_calls: usize,
    pub t_task: Duration,
    pub t_nfc: Duration,
    pub t_mp: Duration,
    pub t_total: Duration,
    pub final_horizon: usize,
}

impl Metrics {
    /// The counting part, which is deterministic.
    pub fn counts(&self) -> [usize; 5] {
        [
            self.n_task_plans,
            self.n_nfc_queries,
            self.n_nfc_rejections,
            self.n_mp_calls,
            self.final_horizon,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct TampResult {
    pub status: Status,
    /// Present when solved.
    pub plan: Option<Plan>,
    /// One motion per action; each starts where the previous one ended.
    pub motions: Vec<MotionPlan>,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GateOutcome {
    Pass,
    FailedStep(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum MpOutcome {
    Validated(Vec<MotionPlan>),
    FailedStep(usize),
}

/// Where the gripper sits before the first action.
pub fn home(scene: &Scene) -> GripperConfig {
    GripperConfig {
        position: scene.gripper.home_config,
        direction: GraspDirection::PZ,
    }
}

/// The body as it would rest at location `loc`.
fn body_at(u: &Universe, body: usize, loc: usize) -> BoxBody {
    let l = &u.locations[body][loc];
    let mut b = u.body_shape(body).clone();
    b.center = l.center;
    b.region_id = u.regions[l.region].clone();
    b
}

/// The body the action moves, where the action leaves or finds it.
fn action_body(u: &Universe, s: &State, a: &GroundAction) -> BoxBody {
    match *a {
        GroundAction::Pick { body, .. } => body_at(u, body, s.at[body].expect("pick needs a resting body")),
        GroundAction::Place { body, region, cell, .. } => body_at(u, body, u.place_location(body, region, cell)),
    }
}

/// Observation the classifier sees for `a` taken in state `s`.
pub fn observation(u: &Universe, s: &State, a: &GroundAction) -> DepthObservation {
    let scene = u.scene(s);
    let body = action_body(u, s, a);
    let target = match a {
        GroundAction::Pick { .. } => Target::Body(&body.id),
        GroundAction::Place { .. } => Target::Placement {
            body: &body,
            center: body.center,
        },
    };
    render_observation(&scene, target).expect("grounded locations rest on regions")
}

/// Probabilities already predicted during one solve. Observations are a
/// function of state and action, so candidate plans sharing a prefix reuse
/// them.
pub type GateMemo = HashMap<(State, GroundAction), f64>;

/// Screens a plan action by action against a shadow state.
pub fn nfc_gate(u: &Universe, plan: &Plan, model: &dyn FeasibilityModel, beta: f64, queries: &mut usize) -> GateOutcome {
    nfc_gate_memo(u, plan, model, beta, queries, &mut GateMemo::new())
}

/// `nfc_gate` that only queries the model for pairs missing from `memo`;
/// `queries` counts the forward passes actually run.
pub fn nfc_gate_memo(
    u: &Universe,
    plan: &Plan,
    model: &dyn FeasibilityModel,
    beta: f64,
    queries: &mut usize,
    memo: &mut GateMemo,
) -> GateOutcome {
    let mut shadow = u.init.clone();
    for (k, a) in plan.actions.iter().enumerate() {
        let p = match memo.entry((shadow.clone(), *a)) {
            Entry::Occupied(e) => *e.get(),
            Entry::Vacant(e) => {
                *queries += 1;
                *e.insert(model.predict(&observation(u, &shadow, a))[a.dir().index()])
            }
        };
        if p <= beta {
            return GateOutcome::FailedStep(k);
        }
        shadow = u.apply(&shadow, a).expect("candidate plans replay cleanly");
    }
    GateOutcome::Pass
}

/// Tool shape while performing `a`, and the shape left behind after it.
fn shapes(u: &Universe, scene: &Scene, s: &State, a: &GroundAction) -> (ToolShape, ToolShape) {
    let body = action_body(u, s, a);
    let g = &scene.gripper;
    match a {
        GroundAction::Pick { dir, .. } => (ToolShape::for_pick(&body, *dir, g), ToolShape::carrying(&body, *dir, g)),
        GroundAction::Place { dir, .. } => (ToolShape::carrying(&body, *dir, g), ToolShape::for_pick(&body, *dir, g)),
    }
}

/// Whether the oracle accepts `a` in state `s`.
pub fn action_feasible(u: &Universe, scene: &Scene, s: &State, a: &GroundAction) -> bool {
    let body = action_body(u, s, a);
    match a {
        GroundAction::Pick { dir, .. } => oracle::feasible(scene, &body.id, *dir).unwrap_or(false),
        GroundAction::Place { dir, .. } => oracle::feasible_place(scene, &body, body.center, *dir).unwrap_or(false),
    }
}

fn action_config(u: &Universe, s: &State, a: &GroundAction) -> GripperConfig {
    let body = action_body(u, s, a);
    GripperConfig {
        position: oracle::tool_point(body.center, body.half_extents, a.dir()),
        direction: a.dir(),
    }
}

fn seed_for(seed: u64, call: usize, step: usize) -> u64 {
    seed ^ (call as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (step as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}

/// Checks each action with the oracle and plans its motion.
///
/// Motion `k` backs out of the previous grasp along its approach axis,
/// travels to the pre-grasp point `APPROACH` above the new grasp along the
/// new approach axis, then moves straight in. Its first waypoint is the
/// previous configuration, its second the retreat point (previous
/// direction), its last the new grasp configuration.
pub fn mp_validate(u: &Universe, plan: &Plan, seed: u64) -> MpOutcome {
    let mut config = home(&u.scene(&u.init));
    let mut left_behind: Option<ToolShape> = None;
    let mut motions = Vec::with_capacity(plan.len());
    for (k, a) in plan.actions.iter().enumerate() {
        let s = &plan.states[k];
        let scene = u.scene(s);
        if !action_feasible(u, &scene, s, a) {
            return MpOutcome::FailedStep(k);
        }
        let (shape, after) = shapes(u, &scene, s, a);
        let retreat = match &left_behind {
            Some(prev) => {
                let r = config.position + config.direction.axis() * APPROACH;
                if !prev.segment_free(&scene, config.position, r) {
                    return MpOutcome::FailedStep(k);
                }
                r
            }
            None => config.position,
        };
        let goal = action_config(u, s, a);
        let pre = goal.position + goal.direction.axis() * APPROACH;
        let from = GripperConfig {
            position: retreat,
            direction: goal.direction,
        };
        let to = GripperConfig {
            position: pre,
            direction: goal.direction,
        };
        let Ok(transit) = oracle::plan_motion(&scene, &shape, from, to, &MotionBudget::with_seed(seed_for(seed, 0, k))) else {
            return MpOutcome::FailedStep(k);
        };
        if !shape.segment_free(&scene, pre, goal.position) {
            return MpOutcome::FailedStep(k);
        }
        let mut waypoints = vec![
            config,
            GripperConfig {
                position: retreat,
                direction: config.direction,
            },
        ];
        waypoints.extend(transit.waypoints);
        waypoints.push(goal);
        motions.push(MotionPlan { waypoints });
        config = goal;
        left_behind = Some(after);
    }
    MpOutcome::Validated(motions)
}

/// Independent re-check of a solved result against the oracle: every
/// action feasible in its state, every motion segment collision-free with
/// the solid moving along it, motions chained, goal reached.
pub fn replay_check(u: &Universe, plan: &Plan, motions: &[MotionPlan]) -> Result<(), String> {
    if motions.len() != plan.len() {
        return Err(format!("{} motions for {} actions", motions.len(), plan.len()));
    }
    let replayed = Plan::simulate(u, &u.init, plan.actions.clone()).map_err(|e| e.to_string())?;
    if replayed.states != plan.states {
        return Err("state trace does not follow the actions".into());
    }
    if !u.satisfies_goal(plan.states.last().expect("at least the initial state")) {
        return Err("goal not reached".into());
    }
    let mut config = home(&u.scene(&u.init));
    let mut left_behind: Option<ToolShape> = None;
    for (k, (a, m)) in plan.actions.iter().zip(motions).enumerate() {
        let s = &plan.states[k];
        let scene = u.scene(s);
        if !action_feasible(u, &scene, s, a) {
            return Err(format!("action {k} infeasible"));
        }
        let w = &m.waypoints;
        if w.len() < 3 || w[0] != config {
            return Err(format!("motion {k} does not start at the previous configuration"));
        }
        let goal = action_config(u, s, a);
        if *w.last().unwrap() != goal {
            return Err(format!("motion {k} does not end at the grasp"));
        }
        let (shape, after) = shapes(u, &scene, s, a);
        let first_ok = match &left_behind {
            Some(prev) => prev.segment_free(&scene, w[0].position, w[1].position),
            None => w[0].position == w[1].position,
        };
        if !first_ok {
            return Err(format!("motion {k} retreat collides"));
        }
        let rest = MotionPlan { waypoints: w[1..].to_vec() };
        if !oracle::validate_motion(&scene, &shape, &rest) || shape.collides(&scene, w[1].position) {
            return Err(format!("motion {k} collides"));
        }
        config = goal;
        left_behind = Some(after);
    }
    Ok(())
}

fn nogood_for(u: &Universe, plan: &Plan, k: usize, radius: Option<f64>) -> Nogood {
    let s = &plan.states[k];
    let a = plan.actions[k];
    Nogood {
        context: u.context(s, u.target(s, &a), radius),
        action: a,
    }
}

fn check_options(opts: &TampOptions<'_>) -> Result<(), TampError> {
    if !(opts.beta > 0.0 && opts.beta < 1.0) {
        return Err(TampError::Config(format!("beta must lie in (0, 1), got {}", opts.beta)));
    }
    if !(opts.step > 0.0 && opts.step.is_finite()) {
        return Err(TampError::Config(format!("step must be positive, got {}", opts.step)));
    }
    if opts.use_nfc && opts.model.is_none() {
        return Err(TampError::Config("the classifier gate needs a model".into()));
    }
    Ok(())
}

pub fn solve(domain: &Domain, problem: &Problem, scene: &Scene, opts: &TampOptions<'_>) -> Result<TampResult, TampError> {
    check_options(opts)?;
    let u = Universe::ground(domain, problem, scene, opts.step)?;
    solve_universe(&u, opts)
}

/// The loop on an already grounded universe.
pub fn solve_universe(u: &Universe, opts: &TampOptions<'_>) -> Result<TampResult, TampError> {
    check_options(opts)?;
    let start = Instant::now();
    let mut m = Metrics::default();
    let finish = |status, plan, motions, mut m: Metrics| {
        m.t_total = start.elapsed();
        Ok(TampResult {
            status,
            plan,
            motions,
            metrics: m,
        })
    };
    if u.satisfies_goal(&u.init) {
        let plan = Plan::simulate(u, &u.init, Vec::new()).expect("empty plan");
        return finish(Status::Solved, Some(plan), Vec::new(), m);
    }
    let gate = if opts.use_nfc { opts.model } else { None };
    let mut memo = GateMemo::new();
    let mut h = 2 * u.unsatisfied_goals(&u.init);
    while h <= opts.h_max {
        m.final_horizon = h;
        let passes: &[Option<&dyn FeasibilityModel>] = if gate.is_some() && opts.nfc_fallback { &[gate, None] } else { &[gate] };
        // Motion failures carry over to the ungated pass; gate rejections do not.
        let mut motion_nogoods: Vec<Nogood> = Vec::new();
        for &screen in passes {
            let t = Instant::now();
            let mut session = Session::new(u, h);
            for ng in &motion_nogoods {
                session.add_nogood(ng.clone());
            }
            m.t_task += t.elapsed();
            loop {
                if start.elapsed() > opts.time_budget {
                    return finish(Status::Timeout, None, Vec::new(), m);
                }
                let t = Instant::now();
                let candidate = session.solve();
                m.t_task += t.elapsed();
                let Some(plan) = candidate else { break };
                m.n_task_plans += 1;

                if let Some(model) = screen {
                    let t = Instant::now();
                    let outcome = nfc_gate_memo(u, &plan, model, opts.beta, &mut m.n_nfc_queries, &mut memo);
                    m.t_nfc += t.elapsed();
                    if let GateOutcome::FailedStep(k) = outcome {
                        m.n_nfc_rejections += 1;
                        let t = Instant::now();
                        session.add_nogood(nogood_for(u, &plan, k, opts.nogood_radius));
                        m.t_task += t.elapsed();
                        continue;
                    }
                }

                let t = Instant::now();
                let outcome = mp_validate(u, &plan, seed_for(opts.seed, m.n_mp_calls, 0));
                m.n_mp_calls += 1;
                m.t_mp += t.elapsed();
                match outcome {
                    MpOutcome::Validated(motions) => return finish(Status::Solved, Some(plan), motions, m),
                    MpOutcome::FailedStep(k) => {
                        let t = Instant::now();
                        let ng = nogood_for(u, &plan, k, opts.nogood_radius);
                        session.add_nogood(ng.clone());
                        motion_nogoods.push(ng);
                        m.t_task += t.elapsed();
                    }
                }
            }
        }
        h += 2;
    }
    finish(Status::Exhausted, None, Vec::new(), m)
}

/// Motions as s-expressions: one `(motion ...)` per action, each waypoint
/// `(x y z dir)`.
pub fn write_motions(motions: &[MotionPlan]) -> String {
    let mut out = String::from("(motions\n");
    for m in motions {
        out.push_str("  (motion");
        for w in &m.waypoints {
            let p: Vec3 = w.position;
            let _ = write!(out, " ({} {} {} {})", p.x, p.y, p.z, w.direction);
        }
        out.push_str(")\n");
    }
    out.push_str(")\n");
    out
}
