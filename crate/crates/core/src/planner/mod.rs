//! Symbolic pick-and-place planning: PDDL frontend, grounding over the
//! placement grid, a step-indexed propositional encoding and a DPLL solver
//! that accepts clauses between calls.

mod encode;
mod ground;
pub mod pddl;
mod sat;

use std::fmt;

pub use encode::{Encoding, Session};
pub use ground::{GroundError, Location, Universe};
pub use pddl::{parse_domain, parse_problem, write_domain, write_problem, Domain, PddlError, Problem};
pub use sat::{Lit, Solver};

use crate::world::GraspDirection;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GroundAction {
    Pick { body: usize, dir: GraspDirection },
    /// `cell` indexes the body's grid cells on `region`.
    Place {
        body: usize,
        region: usize,
        cell: usize,
        dir: GraspDirection,
    },
}

impl GroundAction {
    pub fn body(&self) -> usize {
        match *self {
            GroundAction::Pick { body, .. } | GroundAction::Place { body, .. } => body,
        }
    }

    pub fn dir(&self) -> GraspDirection {
        match *self {
            GroundAction::Pick { dir, .. } | GroundAction::Place { dir, .. } => dir,
        }
    }

    pub fn is_pick(&self) -> bool {
        matches!(self, GroundAction::Pick { .. })
    }
}

/// Ground fluents. `loc` indexes [`Universe::locations`] of the body and
/// `key` one of the universe's occupancy keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Atom {
    On { body: usize, loc: usize },
    Holding { body: usize, dir: GraspDirection },
    HandEmpty,
    Occupied { key: usize },
}

/// Where every body is and what the hand holds.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct State {
    /// Location index per body, `None` while held.
    pub at: Vec<Option<usize>>,
    pub holding: Option<(usize, GraspDirection)>,
}

/// A forbidden action in a matching context, at any step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Nogood {
    pub context: Vec<Atom>,
    pub action: GroundAction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub actions: Vec<GroundAction>,
    /// `states[0]` is the initial state; `states[i + 1]` follows `actions[i]`.
    pub states: Vec<State>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error("precondition of {action} violated at step {step}")]
    PreconditionViolated { step: usize, action: String },
}

impl Plan {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Replays `actions` from `init`.
    pub fn simulate(u: &Universe, init: &State, actions: Vec<GroundAction>) -> Result<Plan, PlanError> {
        let mut states = Vec::with_capacity(actions.len() + 1);
        states.push(init.clone());
        for (step, a) in actions.iter().enumerate() {
            let next = u.apply(&states[step], a).map_err(|e| match e {
                PlanError::PreconditionViolated { action, .. } => PlanError::PreconditionViolated { step, action },
            })?;
            states.push(next);
        }
        Ok(Plan { actions, states })
    }

    pub fn display<'a>(&'a self, u: &'a Universe) -> impl fmt::Display + 'a {
        PlanDisplay(self, u)
    }
}

struct PlanDisplay<'a>(&'a Plan, &'a Universe);

impl fmt::Display for PlanDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(plan")?;
        for a in &self.0.actions {
            write!(f, " {}", self.1.action_name(a))?;
        }
        f.write_str(")")
    }
}

#[cfg(test)]
mod tests;
