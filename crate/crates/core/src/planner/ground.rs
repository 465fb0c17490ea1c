use std::collections::HashMap;
use std::fmt;
use std::ops::Range;

use super::pddl::{ActionSchema, Domain, Problem};
use super::{Atom, GroundAction, PlanError, State};
use crate::world::{place_cells, GraspDirection, Scene, Vec3};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GroundError {
    #[error("region `{region}` admits no placement of `{body}` at step {step}")]
    NoCells { region: String, body: String, step: f64 },
    #[error("domain must define {0}")]
    UnsupportedSchema(String),
    #[error("problem object `{0}` is not in the scene")]
    NotInScene(String),
    #[error("initial state: {0}")]
    BadInit(String),
    #[error("goal: {0}")]
    BadGoal(String),
    #[error("step must be positive, got {0}")]
    BadStep(f64),
}

/// A pose a body can rest at: its initial pose or a grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Location {
    pub region: usize,
    pub center: Vec3,
    /// Locations of different bodies with equal keys exclude each other.
    pub key: usize,
}

/// Everything grounding fixes: objects, locations, actions, `s_0` and the goal.
#[derive(Debug, Clone)]
pub struct Universe {
    pub bodies: Vec<String>,
    pub regions: Vec<String>,
    pub directions: Vec<GraspDirection>,
    pub step: f64,
    /// `locations[b][0]` is the initial pose of body `b`; the grid cells
    /// follow region by region in `place_cells` order.
    pub locations: Vec<Vec<Location>>,
    cells: Vec<Vec<Range<usize>>>,
    pub n_keys: usize,
    /// Picks first (body-major), then places (body, region, cell, direction).
    pub actions: Vec<GroundAction>,
    action_index: HashMap<GroundAction, usize>,
    pub init: State,
    /// (body, region) pairs that must hold at the end.
    pub goal: Vec<(usize, usize)>,
    /// The scene with problem bodies at their initial poses.
    scene: Scene,
    scene_index: Vec<usize>,
}

fn require(d: &Domain, name: &str, types: &[&str]) -> Result<(), GroundError> {
    let describe = || format!("action `{name}` with parameters ({})", types.join(" "));
    let a: &ActionSchema = d.action(name).ok_or_else(|| GroundError::UnsupportedSchema(describe()))?;
    let got: Vec<&str> = a.params.iter().map(|p| p.ty.as_str()).collect();
    if got != types {
        return Err(GroundError::UnsupportedSchema(describe()));
    }
    Ok(())
}

impl Universe {
    pub fn ground(domain: &Domain, problem: &Problem, scene: &Scene, step: f64) -> Result<Universe, GroundError> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(GroundError::BadStep(step));
        }
        require(domain, "pick", &["body", "direction"])?;
        require(domain, "place", &["body", "region", "cell", "direction"])?;
        let mut directions: Vec<GraspDirection> = domain
            .constants_of("direction")
            .map(|n| {
                GraspDirection::from_name(n)
                    .ok_or_else(|| GroundError::UnsupportedSchema(format!("a known direction, not `{n}`")))
            })
            .collect::<Result<_, _>>()?;
        if directions.is_empty() {
            directions = GraspDirection::ALL.to_vec();
        }
        directions.sort();
        directions.dedup();

        let bodies: Vec<String> = problem.objects_of("body").map(str::to_string).collect();
        let regions: Vec<String> = problem.objects_of("region").map(str::to_string).collect();
        let mut scene_index = Vec::new();
        for b in &bodies {
            scene_index.push(scene.body_index(b).ok_or_else(|| GroundError::NotInScene(b.clone()))?);
        }
        for r in &regions {
            scene.region(r).ok_or_else(|| GroundError::NotInScene(r.clone()))?;
        }
        let region_idx = |id: &str| regions.iter().position(|r| r == id);

        let mut init_region = vec![None; bodies.len()];
        let mut hand_empty = false;
        for l in &problem.init {
            match (l.predicate.as_str(), l.args.as_slice()) {
                ("handempty", []) => hand_empty = true,
                ("on", [b, r]) => {
                    let bi = bodies.iter().position(|x| x == b).ok_or_else(|| GroundError::BadInit(format!("`{b}` is not a body")))?;
                    if scene.bodies[scene_index[bi]].region_id != *r {
                        return Err(GroundError::BadInit(format!("`{b}` does not rest on `{r}` in the scene")));
                    }
                    init_region[bi] = Some(region_idx(r).ok_or_else(|| GroundError::BadInit(format!("`{r}` is not a region")))?);
                }
                _ => return Err(GroundError::BadInit(format!("unsupported atom {l}"))),
            }
        }
        if !hand_empty {
            return Err(GroundError::BadInit("the hand must start empty".into()));
        }
        let mut goal = Vec::new();
        for l in &problem.goal {
            match (l.predicate.as_str(), l.args.as_slice()) {
                ("on", [b, r]) => {
                    let bi = bodies.iter().position(|x| x == b).ok_or_else(|| GroundError::BadGoal(format!("`{b}` is not a body")))?;
                    let ri = region_idx(r).ok_or_else(|| GroundError::BadGoal(format!("`{r}` is not a region")))?;
                    goal.push((bi, ri));
                }
                _ => return Err(GroundError::BadGoal(format!("only (on <body> <region>) goals are supported, got {l}"))),
            }
        }

        let mut keys: HashMap<(usize, i64, i64), usize> = HashMap::new();
        let mut key_of = |region: usize, c: Vec3| {
            let q = |v: f64| (v * 1e6).round() as i64;
            let n = keys.len();
            *keys.entry((region, q(c.x), q(c.y))).or_insert(n)
        };
        let mut locations = Vec::with_capacity(bodies.len());
        let mut cells = Vec::with_capacity(bodies.len());
        for (bi, &si) in scene_index.iter().enumerate() {
            let body = &scene.bodies[si];
            let r0 = init_region[bi].ok_or_else(|| GroundError::BadInit(format!("no `on` atom for `{}`", bodies[bi])))?;
            let mut locs = vec![Location {
                region: r0,
                center: body.center,
                key: key_of(r0, body.center),
            }];
            let mut ranges = Vec::with_capacity(regions.len());
            for (ri, rid) in regions.iter().enumerate() {
                let region = scene.region(rid).expect("checked above");
                let grid = place_cells(region, body, step);
                if grid.is_empty() {
                    return Err(GroundError::NoCells {
                        region: rid.clone(),
                        body: body.id.clone(),
                        step,
                    });
                }
                let start = locs.len();
                for c in grid {
                    locs.push(Location {
                        region: ri,
                        center: c,
                        key: key_of(ri, c),
                    });
                }
                ranges.push(start..locs.len());
            }
            locations.push(locs);
            cells.push(ranges);
        }
        let n_keys = keys.len();

        let mut actions = Vec::new();
        for body in 0..bodies.len() {
            for &dir in &directions {
                actions.push(GroundAction::Pick { body, dir });
            }
        }
        for body in 0..bodies.len() {
            for region in 0..regions.len() {
                for cell in 0..cells[body][region].len() {
                    for &dir in &directions {
                        actions.push(GroundAction::Place { body, region, cell, dir });
                    }
                }
            }
        }
        let action_index = actions.iter().enumerate().map(|(i, a)| (*a, i)).collect();
        Ok(Universe {
            init: State {
                at: vec![Some(0); bodies.len()],
                holding: None,
            },
            bodies,
            regions,
            directions,
            step,
            locations,
            cells,
            n_keys,
            actions,
            action_index,
            goal,
            scene: scene.clone(),
            scene_index,
        })
    }

    pub fn action_id(&self, a: &GroundAction) -> Option<usize> {
        self.action_index.get(a).copied()
    }

    /// Location indices of the body's grid cells on `region`.
    pub fn cells(&self, body: usize, region: usize) -> Range<usize> {
        self.cells[body][region].clone()
    }

    pub fn place_location(&self, body: usize, region: usize, cell: usize) -> usize {
        self.cells[body][region].start + cell
    }

    pub fn body_id(&self, body: usize) -> &str {
        &self.bodies[body]
    }

    pub fn body_index(&self, id: &str) -> Option<usize> {
        self.bodies.iter().position(|b| b == id)
    }

    pub fn n_picks(&self) -> usize {
        self.actions.iter().filter(|a| a.is_pick()).count()
    }

    pub fn n_places(&self) -> usize {
        self.actions.len() - self.n_picks()
    }

    fn occupied_by_other(&self, s: &State, body: usize, key: usize) -> bool {
        s.at.iter()
            .enumerate()
            .any(|(b, l)| b != body && matches!(l, Some(l) if self.locations[b][*l].key == key))
    }

    pub fn applicable(&self, s: &State, a: &GroundAction) -> bool {
        match *a {
            GroundAction::Pick { body, .. } => s.holding.is_none() && s.at[body].is_some(),
            GroundAction::Place { body, region, cell, dir } => {
                let key = self.locations[body][self.place_location(body, region, cell)].key;
                s.holding == Some((body, dir)) && !self.occupied_by_other(s, body, key)
            }
        }
    }

    pub fn apply(&self, s: &State, a: &GroundAction) -> Result<State, PlanError> {
        if !self.applicable(s, a) {
            return Err(PlanError::PreconditionViolated {
                step: 0,
                action: self.action_name(a),
            });
        }
        let mut next = s.clone();
        match *a {
            GroundAction::Pick { body, dir } => {
                next.at[body] = None;
                next.holding = Some((body, dir));
            }
            GroundAction::Place { body, region, cell, .. } => {
                next.at[body] = Some(self.place_location(body, region, cell));
                next.holding = None;
            }
        }
        Ok(next)
    }

    pub fn satisfies_goal(&self, s: &State) -> bool {
        self.goal
            .iter()
            .all(|&(b, r)| matches!(s.at[b], Some(l) if self.locations[b][l].region == r))
    }

    /// Goal atoms not yet true in `s`.
    pub fn unsatisfied_goals(&self, s: &State) -> usize {
        self.goal
            .iter()
            .filter(|&&(b, r)| !matches!(s.at[b], Some(l) if self.locations[b][l].region == r))
            .count()
    }

    /// True atoms of `s`, derived occupancy included.
    pub fn atoms(&self, s: &State) -> Vec<Atom> {
        let mut out = Vec::new();
        for (body, l) in s.at.iter().enumerate() {
            if let Some(loc) = *l {
                out.push(Atom::On { body, loc });
                out.push(Atom::Occupied {
                    key: self.locations[body][loc].key,
                });
            }
        }
        match s.holding {
            Some((body, dir)) => out.push(Atom::Holding { body, dir }),
            None => out.push(Atom::HandEmpty),
        }
        out.sort();
        out.dedup();
        out
    }

    pub fn holds(&self, s: &State, atom: &Atom) -> bool {
        match *atom {
            Atom::On { body, loc } => s.at[body] == Some(loc),
            Atom::Holding { body, dir } => s.holding == Some((body, dir)),
            Atom::HandEmpty => s.holding.is_none(),
            Atom::Occupied { key } => self.occupied_by_other(s, usize::MAX, key),
        }
    }

    /// On/holding atoms of bodies within `radius` of `target`; `None`
    /// keeps every body.
    pub fn context(&self, s: &State, target: Vec3, radius: Option<f64>) -> Vec<Atom> {
        let mut out = Vec::new();
        for (body, l) in s.at.iter().enumerate() {
            if let Some(loc) = *l {
                let near = radius.map_or(true, |r| self.locations[body][loc].center.dist(target) <= r);
                if near {
                    out.push(Atom::On { body, loc });
                }
            }
        }
        // The held body travels with the gripper, which is always at the target.
        if let Some((body, dir)) = s.holding {
            out.push(Atom::Holding { body, dir });
        }
        out
    }

    /// Where the action happens: the picked body or the placement cell.
    pub fn target(&self, s: &State, a: &GroundAction) -> Vec3 {
        match *a {
            GroundAction::Pick { body, .. } => {
                let loc = s.at[body].expect("pick target must rest somewhere");
                self.locations[body][loc].center
            }
            GroundAction::Place { body, region, cell, .. } => {
                self.locations[body][self.place_location(body, region, cell)].center
            }
        }
    }

    /// The geometric scene of `s`; a held body is left out.
    pub fn scene(&self, s: &State) -> Scene {
        let mut scene = self.scene.clone();
        let mut drop = Vec::new();
        for (body, &si) in self.scene_index.iter().enumerate() {
            match s.at[body] {
                Some(loc) => {
                    let l = &self.locations[body][loc];
                    let b = &mut scene.bodies[si];
                    b.center = l.center;
                    b.region_id = self.regions[l.region].clone();
                }
                None => drop.push(si),
            }
        }
        drop.sort_unstable();
        for si in drop.into_iter().rev() {
            scene.bodies.remove(si);
        }
        scene
    }

    /// The body as it appears in the initial scene.
    pub fn body_shape(&self, body: usize) -> &crate::world::BoxBody {
        &self.scene.bodies[self.scene_index[body]]
    }

    pub fn action_name(&self, a: &GroundAction) -> String {
        match *a {
            GroundAction::Pick { body, dir } => format!("(pick {} {dir})", self.bodies[body]),
            GroundAction::Place { body, region, cell, dir } => {
                format!("(place {} {} c{cell} {dir})", self.bodies[body], self.regions[region])
            }
        }
    }

    pub fn atom_name(&self, a: &Atom) -> String {
        match *a {
            Atom::On { body, loc } => {
                let l = &self.locations[body][loc];
                let cell = if loc == 0 {
                    "init".to_string()
                } else {
                    format!("c{}", loc - self.cells[body][l.region].start)
                };
                format!("(on {} {} {cell})", self.bodies[body], self.regions[l.region])
            }
            Atom::Holding { body, dir } => format!("(holding {} {dir})", self.bodies[body]),
            Atom::HandEmpty => "(handempty)".into(),
            Atom::Occupied { key } => format!("(occupied k{key})"),
        }
    }
}

impl fmt::Display for Universe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} bodies, {} regions, {} directions, {} picks, {} places",
            self.bodies.len(),
            self.regions.len(),
            self.directions.len(),
            self.n_picks(),
            self.n_places()
        )
    }
}

impl Universe {
    /// Shortest action sequence reaching the goal by breadth-first search
    /// over explicit states, using only actions `allowed` admits. Actions
    /// are tried in universe order, so ties resolve like the solver does.
    pub fn breadth_first(
        &self,
        max_len: usize,
        mut allowed: impl FnMut(&State, &GroundAction) -> bool,
    ) -> Option<Vec<GroundAction>> {
        use std::collections::hash_map::Entry;
        let mut parent: HashMap<State, Option<(State, GroundAction)>> = HashMap::new();
        parent.insert(self.init.clone(), None);
        let mut frontier = vec![self.init.clone()];
        let path_to = |parent: &HashMap<State, Option<(State, GroundAction)>>, mut s: State| {
            let mut out = Vec::new();
            while let Some(Some((p, a))) = parent.get(&s) {
                out.push(*a);
                s = p.clone();
            }
            out.reverse();
            out
        };
        if self.satisfies_goal(&self.init) {
            return Some(Vec::new());
        }
        for _ in 0..max_len {
            let mut next = Vec::new();
            for s in &frontier {
                for a in &self.actions {
                    if !self.applicable(s, a) || !allowed(s, a) {
                        continue;
                    }
                    let t = self.apply(s, a).expect("applicable");
                    if let Entry::Vacant(v) = parent.entry(t.clone()) {
                        v.insert(Some((s.clone(), *a)));
                        if self.satisfies_goal(&t) {
                            return Some(path_to(&parent, t));
                        }
                        next.push(t);
                    }
                }
            }
            frontier = next;
        }
        None
    }
}
