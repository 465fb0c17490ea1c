use proptest::prelude::*;

use super::*;
use crate::world::{parse_scene, GraspDirection as D};

const DOMAIN: &str = include_str!("../../fixtures/pickplace.domain");
const TOP: &str = include_str!("../../fixtures/pickplace_top.domain");
const PROBLEM: &str = include_str!("../../fixtures/unpack.problem");
const SCENE: &str = include_str!("../../fixtures/unpack.scene");

fn unpack(domain: &str, step: f64) -> Universe {
    let d = parse_domain(domain).unwrap();
    let p = parse_problem(PROBLEM, &d).unwrap();
    Universe::ground(&d, &p, &parse_scene(SCENE).unwrap(), step).unwrap()
}

/// `bodies` boxes on one-cell home regions; a target region with
/// `target_cells` cells in a row. The goal moves the first `goals` bodies
/// to the target.
fn toy(domain: &str, bodies: usize, target_cells: usize, goals: usize) -> Universe {
    let mut scene = String::from("(scene (reach (shoulder 0 0 0.3) (r 0.35 0.85) (z 0.02 1))\n");
    let mut objects = String::new();
    let mut init = String::from("(handempty)");
    for i in 0..bodies {
        let y = -0.3 + 0.1 * i as f64;
        scene += &format!("(region h{i} 0.5 {y} 0.2 0.02 0.02)\n(body b{i} h{i} 0.5 {y} 0.02 0.02 0.03)\n");
        objects += &format!("b{i} ");
        init += &format!(" (on b{i} h{i})");
    }
    let half_x = 0.02 + 0.05 * (target_cells as f64 - 1.0);
    scene += &format!("(region t 0.5 0.3 0.2 {half_x} 0.02))");
    let regions: String = (0..bodies).map(|i| format!("h{i} ")).collect();
    let goal: String = (0..goals).map(|i| format!("(on b{i} t) ")).collect();
    let problem = format!(
        "(define (problem toy) (:domain pickplace) (:objects {objects}- body {regions}t - region) (:init {init}) (:goal (and {goal})))"
    );
    let d = parse_domain(domain).unwrap();
    let p = parse_problem(&problem, &d).unwrap();
    Universe::ground(&d, &p, &parse_scene(&scene).unwrap(), 0.1).unwrap()
}

/// Brute force over every action sequence of length `h`.
fn count_plans(u: &Universe, h: usize) -> usize {
    fn go(u: &Universe, s: &State, left: usize) -> usize {
        if left == 0 {
            return usize::from(u.satisfies_goal(s));
        }
        u.actions
            .iter()
            .filter(|a| u.applicable(s, a))
            .map(|a| go(u, &u.apply(s, a).unwrap(), left - 1))
            .sum()
    }
    go(u, &u.init, h)
}

fn enumerate(u: &Universe, h: usize) -> Vec<Plan> {
    let mut session = Session::new(u, h);
    let mut out = Vec::new();
    while let Some(p) = session.solve() {
        session.block(&p.actions);
        out.push(p);
    }
    out
}

#[test]
fn grounding_counts() {
    let u = unpack(DOMAIN, 0.1);
    assert_eq!(u.n_picks(), 15);
    assert_eq!(u.n_places(), 3 * 2 * 36 * 5);
    assert_eq!(u.cells(0, 1).len(), 36);
    assert!(unpack(DOMAIN, 0.04).actions.len() > unpack(DOMAIN, 0.06).actions.len());
    let top = unpack(TOP, 0.1);
    assert_eq!((top.n_picks(), top.n_places()), (3, 216));

    let one = toy(DOMAIN, 1, 1, 1);
    // The home region contributes a second cell; drop it from the count.
    assert_eq!(one.n_picks(), 5);
    assert_eq!(one.actions.iter().filter(|a| matches!(a, GroundAction::Place { region: 1, .. })).count(), 5);
}

#[test]
fn no_cells_is_an_error() {
    let d = parse_domain(DOMAIN).unwrap();
    let p = parse_problem(PROBLEM, &d).unwrap();
    let mut scene = parse_scene(SCENE).unwrap();
    scene.regions[1].half_x = 0.01;
    assert!(matches!(Universe::ground(&d, &p, &scene, 0.1), Err(GroundError::NoCells { .. })));
}

#[test]
fn apply_semantics() {
    let u = unpack(TOP, 0.1);
    let g = u.body_index("green").unwrap();
    let pick = GroundAction::Pick { body: g, dir: D::PZ };
    let s1 = u.apply(&u.init, &pick).unwrap();
    assert_eq!(s1.at[g], None);
    assert_eq!(s1.holding, Some((g, D::PZ)));
    assert!(!u.holds(&s1, &Atom::HandEmpty));
    assert!(matches!(u.apply(&s1, &pick), Err(PlanError::PreconditionViolated { .. })));

    // Put it on a cell, pick it up and put it back: same state.
    let place = GroundAction::Place { body: g, region: 1, cell: 3, dir: D::PZ };
    let s2 = u.apply(&s1, &place).unwrap();
    let s3 = u.apply(&u.apply(&s2, &pick).unwrap(), &place).unwrap();
    assert_eq!(s2, s3);
    assert!(u.satisfies_goal(&s2));
    let key = u.locations[g][s2.at[g].unwrap()].key;
    assert!(u.holds(&s2, &Atom::Occupied { key }));

    // A place must keep the pick direction.
    let sideways = GroundAction::Place { body: g, region: 1, cell: 3, dir: D::PX };
    let d5 = unpack(DOMAIN, 0.1);
    let s1 = d5.apply(&d5.init, &pick).unwrap();
    assert!(d5.apply(&s1, &sideways).is_err());
    // An occupied cell cannot take a second body.
    let l = d5.body_index("left").unwrap();
    let s = Plan::simulate(
        &d5,
        &d5.init,
        vec![pick, place, GroundAction::Pick { body: l, dir: D::PZ }],
    )
    .unwrap();
    let clash = GroundAction::Place { body: l, region: 1, cell: 3, dir: D::PZ };
    assert!(!d5.applicable(s.states.last().unwrap(), &clash));
}

#[test]
fn goal_true_initially_is_unsat_at_one_step() {
    // A single body already home: the one forced action breaks the goal.
    let mut u = toy(TOP, 1, 1, 1);
    u.goal = vec![(0, 0)];
    assert!(u.satisfies_goal(&u.init));
    assert!(Session::new(&u, 1).solve().is_none());
    assert_eq!(u.breadth_first(4, |_, _| true), Some(Vec::new()));
}

#[test]
fn unpack_shortest_symbolic_plan() {
    let u = unpack(TOP, 0.1);
    let bfs = u.breadth_first(6, |_, _| true).unwrap();
    assert_eq!(bfs.len(), 2);
    assert!(Session::new(&u, 1).solve().is_none());
    let plan = Session::new(&u, 2).solve().unwrap();
    let g = u.body_index("green").unwrap();
    assert_eq!(plan.actions[0], GroundAction::Pick { body: g, dir: D::PZ });
    assert!(matches!(plan.actions[1], GroundAction::Place { body, region: 1, dir: D::PZ, .. } if body == g));
    assert!(u.satisfies_goal(plan.states.last().unwrap()));
}

#[test]
fn nogoods_on_unpack() {
    let u = unpack(TOP, 0.1);
    let g = u.body_index("green").unwrap();
    let pick_green = GroundAction::Pick { body: g, dir: D::PZ };
    let target = u.target(&u.init, &pick_green);
    let ng = Nogood {
        context: u.context(&u.init, target, Some(0.5)),
        action: pick_green,
    };
    assert_eq!(ng.context.len(), 3);
    let masked = |s: &State, a: &GroundAction| !(*a == ng.action && ng.context.iter().all(|c| u.holds(s, c)));

    let mut s2 = Session::new(&u, 2);
    s2.add_nogood(ng.clone());
    assert!(s2.solve().is_none());
    assert_eq!(u.breadth_first(2, masked).map(|p| p.len()), None);

    let bfs = u.breadth_first(6, masked).unwrap();
    assert_eq!(bfs.len(), 4);
    let mut s6 = Session::new(&u, 6);
    s6.add_nogood(ng.clone());
    let first = s6.solve().unwrap();
    assert!(matches!(first.actions[0], GroundAction::Pick { body, .. } if body != g));
    for (s, a) in first.states.iter().zip(&first.actions) {
        assert!(masked(s, a));
    }

    // A fresh session for the next horizon starts without the nogood.
    let mut s2 = Session::new(&u, 2);
    assert!(s2.nogoods().is_empty());
    assert_eq!(s2.solve().unwrap().actions[0], pick_green);
}

#[test]
fn empty_context_forbids_everywhere() {
    let u = toy(TOP, 1, 2, 1);
    let mut s = Session::new(&u, 4);
    s.add_nogood(Nogood {
        context: Vec::new(),
        action: GroundAction::Place { body: 0, region: 1, cell: 0, dir: D::PZ },
    });
    let plans = enumerate_from(&mut s);
    assert!(!plans.is_empty());
    for p in &plans {
        assert!(!p.actions.contains(&GroundAction::Place { body: 0, region: 1, cell: 0, dir: D::PZ }));
    }
}

fn enumerate_from(s: &mut Session<'_>) -> Vec<Plan> {
    let mut out = Vec::new();
    while let Some(p) = s.solve() {
        s.block(&p.actions);
        out.push(p);
    }
    out
}

#[test]
fn blocking_the_only_plan() {
    let u = toy(TOP, 1, 1, 1);
    assert_eq!(count_plans(&u, 2), 1);
    let mut s = Session::new(&u, 2);
    let p = s.solve().unwrap();
    s.block(&p.actions);
    assert!(s.solve().is_none());
}

#[test]
fn enumeration_matches_brute_force() {
    let u = toy(TOP, 1, 2, 1);
    assert_eq!(enumerate(&u, 2).len(), count_plans(&u, 2));
    assert_eq!(count_plans(&u, 2), 2);
}

#[test]
fn encoding_is_linear_in_horizon() {
    let u = toy(DOMAIN, 2, 2, 1);
    let sizes: Vec<(usize, usize)> = (1..=4)
        .map(|h| {
            let e = Encoding::new(&u, h);
            (e.n_vars, e.clauses.len())
        })
        .collect();
    for w in sizes.windows(3) {
        assert_eq!(w[1].0 - w[0].0, w[2].0 - w[1].0);
        assert_eq!(w[1].1 - w[0].1, w[2].1 - w[1].1);
    }
}

#[test]
fn printed_plan() {
    let u = toy(TOP, 1, 1, 1);
    let p = Session::new(&u, 2).solve().unwrap();
    assert_eq!(p.display(&u).to_string(), "(plan (pick b0 pz) (place b0 t c0 pz))");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Existence, shortest length and plan counts per horizon agree with
    /// explicit search on toy universes.
    #[test]
    fn agrees_with_explicit_search(bodies in 1usize..=2, cells in 1usize..=3, goals in 1usize..=2, five in any::<bool>()) {
        let goals = goals.min(bodies);
        prop_assume!(bodies * (cells + 1) <= 6);
        let u = toy(if five { DOMAIN } else { TOP }, bodies, cells, goals);
        let max_h = if five { 2 * goals } else { 4 };
        let shortest = u.breadth_first(max_h, |_, _| true).map(|p| p.len());
        let mut first_sat = None;
        for h in 1..=max_h {
            let plans = enumerate(&u, h);
            // Brute force over five directions is too slow past two steps.
            if !(five && h > 2) {
                prop_assert_eq!(plans.len(), count_plans(&u, h));
            }
            for p in &plans {
                prop_assert!(u.satisfies_goal(p.states.last().unwrap()));
                prop_assert_eq!(Plan::simulate(&u, &u.init, p.actions.clone()).unwrap(), p.clone());
            }
            if first_sat.is_none() && !plans.is_empty() {
                first_sat = Some(h);
            }
        }
        prop_assert_eq!(first_sat, shortest);
    }
}
