//! Pick-and-place task and motion planning with a learned grasp
//! feasibility classifier gating candidate task plans.

pub mod bench;
pub mod dataset;
pub mod fixtures;
pub mod nn;
pub mod oracle;
pub mod planner;
pub mod render;
pub mod sexpr;
pub mod tamp;
pub mod world;
