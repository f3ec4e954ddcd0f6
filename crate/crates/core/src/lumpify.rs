//! Scheduling general data-flow graphs into constant-width lumps.
//!
//! A graph with temporaries has more than `n` live active values at some
//! cuts. Any topological order can be split wherever exactly `n` values are
//! live; each segment (a lump) is then a macro step whose Jacobian, with its
//! outputs first, is `[[A, B], [0, I]]` and whose inverse is
//! `[[A⁻¹, −A⁻¹B], [0, I]]`. Which order is chosen changes the lump sizes,
//! so both a greedy rule and an exhaustive search are provided.

mod block;
mod dag;
mod schedule;

pub use block::{
    block_kernel, invert_lump, lump_linearization, lumped_mode_eval, lumped_mode_eval_with, plan_lumps, InvertedLump,
    Lump, LumpLinearization, LumpPlan, LUMP_PIVOT_TOL,
};
pub use dag::{Dag, DagArg, DagNode, NodeId};
pub use schedule::{
    brute_force_schedule, greedy_schedule, lower_dag, lump_shapes, schedule_stats, LumpSchedule, LumpShape, Objective,
    ScheduleStats, BRUTE_FORCE_NODE_LIMIT,
};
