use super::sat::{Lit, Solver};
use super::{Atom, GroundAction, Nogood, Plan, State, Universe};

/// Variable layout and clauses of one horizon.
///
/// Action variables come first, step-major, in universe action order, so
/// the solver's lowest-id-first branching tries earlier steps first and,
/// within a step, picks before places. Fluent variables follow, then the
/// auxiliary variables of the at-most-one ladders.
#[derive(Debug, Clone)]
pub struct Encoding {
    pub horizon: usize,
    pub n_vars: usize,
    pub clauses: Vec<Vec<Lit>>,
    n_actions: usize,
    n_fluents: usize,
    /// First fluent index of each body's `on` block.
    on_base: Vec<usize>,
    holding_base: usize,
    hand: usize,
    occupied_base: usize,
    n_dirs: usize,
}

impl Encoding {
    pub fn new(u: &Universe, horizon: usize) -> Encoding {
        assert!(horizon >= 1, "horizon must be at least 1");
        let mut on_base = Vec::with_capacity(u.bodies.len());
        let mut n = 0;
        for locs in &u.locations {
            on_base.push(n);
            n += locs.len();
        }
        let holding_base = n;
        n += u.bodies.len() * u.directions.len();
        let hand = n;
        n += 1;
        let occupied_base = n;
        n += u.n_keys;
        let mut e = Encoding {
            horizon,
            n_vars: 0,
            clauses: Vec::new(),
            n_actions: u.actions.len(),
            n_fluents: n,
            on_base,
            holding_base,
            hand,
            occupied_base,
            n_dirs: u.directions.len(),
        };
        e.n_vars = horizon * e.n_actions + (horizon + 1) * e.n_fluents;
        e.build(u);
        e
    }

    pub fn action_var(&self, step: usize, action: usize) -> Lit {
        (1 + step * self.n_actions + action) as Lit
    }

    fn fluent(&self, step: usize, f: usize) -> Lit {
        (1 + self.horizon * self.n_actions + step * self.n_fluents + f) as Lit
    }

    fn dir_slot(u: &Universe, d: crate::world::GraspDirection) -> usize {
        u.directions.iter().position(|&x| x == d).expect("direction in universe")
    }

    pub fn atom_var(&self, u: &Universe, step: usize, atom: &Atom) -> Lit {
        let f = match *atom {
            Atom::On { body, loc } => self.on_base[body] + loc,
            Atom::Holding { body, dir } => self.holding_base + body * self.n_dirs + Self::dir_slot(u, dir),
            Atom::HandEmpty => self.hand,
            Atom::Occupied { key } => self.occupied_base + key,
        };
        self.fluent(step, f)
    }

    fn fresh(&mut self) -> Lit {
        self.n_vars += 1;
        self.n_vars as Lit
    }

    fn build(&mut self, u: &Universe) {
        let h = self.horizon;
        let on = |e: &Encoding, t: usize, body: usize, loc: usize| e.atom_var(u, t, &Atom::On { body, loc });
        let holding = |e: &Encoding, t: usize, body: usize, dir| e.atom_var(u, t, &Atom::Holding { body, dir });

        // Initial state, every fluent fixed.
        let init = &u.init;
        for (body, locs) in u.locations.iter().enumerate() {
            for loc in 0..locs.len() {
                let v = on(self, 0, body, loc);
                self.clauses.push(vec![if init.at[body] == Some(loc) { v } else { -v }]);
            }
            for &dir in &u.directions {
                let v = holding(self, 0, body, dir);
                self.clauses.push(vec![if init.holding == Some((body, dir)) { v } else { -v }]);
            }
        }
        let hand0 = self.fluent(0, self.hand);
        self.clauses.push(vec![if init.holding.is_none() { hand0 } else { -hand0 }]);

        // Goal: some cell of the region, or the initial pose if it is there.
        for &(body, region) in &u.goal {
            let clause: Vec<Lit> = (0..u.locations[body].len())
                .filter(|&l| u.locations[body][l].region == region)
                .map(|l| on(self, h, body, l))
                .collect();
            self.clauses.push(clause);
        }

        // Occupancy is derived at every step.
        let mut holders: Vec<Vec<(usize, usize)>> = vec![Vec::new(); u.n_keys];
        for (body, locs) in u.locations.iter().enumerate() {
            for (loc, l) in locs.iter().enumerate() {
                holders[l.key].push((body, loc));
            }
        }
        for t in 0..=h {
            for (key, hs) in holders.iter().enumerate() {
                let occ = self.atom_var(u, t, &Atom::Occupied { key });
                let mut def = vec![-occ];
                for &(body, loc) in hs {
                    let v = on(self, t, body, loc);
                    self.clauses.push(vec![-v, occ]);
                    def.push(v);
                }
                self.clauses.push(def);
            }
        }

        // Which actions can make each fluent true or false.
        let mut place_into: Vec<Vec<Vec<usize>>> = u.locations.iter().map(|l| vec![Vec::new(); l.len()]).collect();
        let mut picks_of: Vec<Vec<usize>> = vec![Vec::new(); u.bodies.len()];
        let mut places_with: Vec<Vec<usize>> = vec![Vec::new(); u.bodies.len() * self.n_dirs];
        let mut all_picks = Vec::new();
        let mut all_places = Vec::new();
        for (i, a) in u.actions.iter().enumerate() {
            match *a {
                GroundAction::Pick { body, .. } => {
                    picks_of[body].push(i);
                    all_picks.push(i);
                }
                GroundAction::Place { body, region, cell, dir } => {
                    place_into[body][u.place_location(body, region, cell)].push(i);
                    places_with[body * self.n_dirs + Self::dir_slot(u, dir)].push(i);
                    all_places.push(i);
                }
            }
        }

        for t in 0..h {
            let act = |e: &Encoding, i: usize| e.action_var(t, i);
            // Exactly one action: at least one, plus a sequential ladder.
            self.clauses.push((0..self.n_actions).map(|i| act(self, i)).collect());
            let mut prev: Option<Lit> = None;
            for i in 0..self.n_actions {
                let x = act(self, i);
                if i + 1 == self.n_actions {
                    if let Some(p) = prev {
                        self.clauses.push(vec![-x, -p]);
                    }
                    break;
                }
                let s = self.fresh();
                self.clauses.push(vec![-x, s]);
                if let Some(p) = prev {
                    self.clauses.push(vec![-p, s]);
                    self.clauses.push(vec![-x, -p]);
                }
                prev = Some(s);
            }

            let hand = |e: &Encoding, t: usize| e.fluent(t, e.hand);
            for (i, a) in u.actions.iter().enumerate() {
                let x = act(self, i);
                match *a {
                    GroundAction::Pick { body, dir } => {
                        self.clauses.push(vec![-x, hand(self, t)]);
                        let mut somewhere = vec![-x];
                        somewhere.extend((0..u.locations[body].len()).map(|l| on(self, t, body, l)));
                        self.clauses.push(somewhere);
                        self.clauses.push(vec![-x, holding(self, t + 1, body, dir)]);
                        self.clauses.push(vec![-x, -hand(self, t + 1)]);
                        for l in 0..u.locations[body].len() {
                            self.clauses.push(vec![-x, -on(self, t + 1, body, l)]);
                        }
                    }
                    GroundAction::Place { body, region, cell, dir } => {
                        let loc = u.place_location(body, region, cell);
                        let key = u.locations[body][loc].key;
                        self.clauses.push(vec![-x, holding(self, t, body, dir)]);
                        self.clauses.push(vec![-x, -self.atom_var(u, t, &Atom::Occupied { key })]);
                        self.clauses.push(vec![-x, on(self, t + 1, body, loc)]);
                        self.clauses.push(vec![-x, hand(self, t + 1)]);
                        self.clauses.push(vec![-x, -holding(self, t + 1, body, dir)]);
                    }
                }
            }

            // Explanatory frame axioms.
            for body in 0..u.bodies.len() {
                for loc in 0..u.locations[body].len() {
                    let (now, next) = (on(self, t, body, loc), on(self, t + 1, body, loc));
                    let mut rise = vec![now, -next];
                    rise.extend(place_into[body][loc].iter().map(|&i| act(self, i)));
                    self.clauses.push(rise);
                    let mut fall = vec![-now, next];
                    fall.extend(picks_of[body].iter().map(|&i| act(self, i)));
                    self.clauses.push(fall);
                }
                for &dir in &u.directions {
                    let (now, next) = (holding(self, t, body, dir), holding(self, t + 1, body, dir));
                    let pick = u.action_id(&GroundAction::Pick { body, dir }).expect("grounded pick");
                    self.clauses.push(vec![now, -next, act(self, pick)]);
                    let mut fall = vec![-now, next];
                    let slot = body * self.n_dirs + Self::dir_slot(u, dir);
                    fall.extend(places_with[slot].iter().map(|&i| act(self, i)));
                    self.clauses.push(fall);
                }
            }
            let (now, next) = (hand(self, t), hand(self, t + 1));
            let mut rise = vec![now, -next];
            rise.extend(all_places.iter().map(|&i| act(self, i)));
            self.clauses.push(rise);
            let mut fall = vec![-now, next];
            fall.extend(all_picks.iter().map(|&i| act(self, i)));
            self.clauses.push(fall);
        }
    }

    /// `¬(context_k ∧ action_k)` for every step `k`.
    pub fn nogood_clauses(&self, u: &Universe, ng: &Nogood) -> Vec<Vec<Lit>> {
        let a = u.action_id(&ng.action).expect("nogood action is grounded");
        (0..self.horizon)
            .map(|t| {
                let mut c: Vec<Lit> = ng.context.iter().map(|atom| -self.atom_var(u, t, atom)).collect();
                c.push(-self.action_var(t, a));
                c
            })
            .collect()
    }

    /// The action sequence of a model.
    pub fn decode(&self, u: &Universe, model: &[bool]) -> Vec<GroundAction> {
        (0..self.horizon)
            .map(|t| {
                let i = (0..self.n_actions)
                    .find(|&i| model[self.action_var(t, i) as usize])
                    .expect("exactly one action per step");
                u.actions[i]
            })
            .collect()
    }

    /// Negation of a model's action choices.
    pub fn blocking_clause(&self, u: &Universe, actions: &[GroundAction]) -> Vec<Lit> {
        actions
            .iter()
            .enumerate()
            .map(|(t, a)| -self.action_var(t, u.action_id(a).expect("grounded action")))
            .collect()
    }
}

/// One horizon of plan enumeration: an encoding, its solver and the
/// nogoods collected so far.
pub struct Session<'u> {
    universe: &'u Universe,
    pub encoding: Encoding,
    solver: Solver,
    nogoods: Vec<Nogood>,
}

impl<'u> Session<'u> {
    pub fn new(universe: &'u Universe, horizon: usize) -> Self {
        let encoding = Encoding::new(universe, horizon);
        let mut solver = Solver::new(encoding.n_vars);
        for c in &encoding.clauses {
            solver.add_clause(c);
        }
        Session {
            universe,
            encoding,
            solver,
            nogoods: Vec::new(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.encoding.horizon
    }

    pub fn nogoods(&self) -> &[Nogood] {
        &self.nogoods
    }

    pub fn solver(&self) -> &Solver {
        &self.solver
    }

    /// Next candidate plan, or `None` once the horizon is exhausted.
    pub fn solve(&mut self) -> Option<Plan> {
        let model = self.solver.solve()?;
        let actions = self.encoding.decode(self.universe, &model);
        let plan = Plan::simulate(self.universe, &self.universe.init, actions)
            .expect("models of the encoding replay cleanly");
        debug_assert!(self.universe.satisfies_goal(plan.states.last().unwrap()));
        Some(plan)
    }

    /// Excludes exactly this action sequence from later solves.
    pub fn block(&mut self, actions: &[GroundAction]) {
        let c = self.encoding.blocking_clause(self.universe, actions);
        self.solver.add_clause(&c);
    }

    pub fn add_nogood(&mut self, ng: Nogood) {
        for c in self.encoding.nogood_clauses(self.universe, &ng) {
            self.solver.add_clause(&c);
        }
        self.nogoods.push(ng);
    }
}

impl Universe {
    /// State of the plan prefix, for callers that hold only actions.
    pub fn replay(&self, actions: &[GroundAction]) -> Option<State> {
        let mut s = self.init.clone();
        for a in actions {
            s = self.apply(&s, a).ok()?;
        }
        Some(s)
    }
}
