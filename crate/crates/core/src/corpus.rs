//! Seeded random programs for property tests and validation runs.
//!
//! Generated instances are rejection-sampled so that comparisons at `1e-8`
//! are meaningful: every step has `|a| ≥ MIN_STEP_MAGNITUDE`, every value
//! stays below `MAX_MAGNITUDE` in absolute value, and the Jacobian (and each
//! lump block) has infinity-norm condition number at most `MAX_CONDITION`.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::basis::{linearize_step, BasisOp};
use crate::lumpify::{greedy_schedule, lump_linearization, plan_lumps, Dag, DagArg, NodeId};
use crate::oracle::{dense_inverse, dense_jacobian, DenseMatrix};
use crate::program::Program;
use crate::trace::{eval_primal, Instruction, Operand, Trace};

pub const MIN_STEP_MAGNITUDE: f64 = 1e-3;
pub const MAX_MAGNITUDE: f64 = 1e3;
pub const MAX_CONDITION: f64 = 1e6;

/// Attempts per instance before giving up.
const MAX_ATTEMPTS: usize = 100_000;

/// A program together with a point to differentiate at.
#[derive(Debug, Clone, PartialEq)]
pub struct Case<P> {
    pub program: P,
    pub x: Vec<f64>,
}

pub type TraceCase = Case<Trace>;
pub type DagCase = Case<Dag>;

/// Ops that can be undone in every operand they overwrite, the ones usable
/// by tapeless reverse sweeps.
pub fn locally_invertible_ops() -> Vec<BasisOp> {
    BasisOp::ALL
        .iter()
        .copied()
        .filter(|op| (0..op.arity()).all(|p| op.has_local_inverse(p)))
        .collect()
}

/// `‖M‖∞·‖M⁻¹‖∞`, or `None` when the oracle finds `M` singular.
pub fn condition_number(m: &DenseMatrix) -> Option<f64> {
    if m.rows == 0 {
        return Some(1.0);
    }
    dense_inverse(m).ok().map(|inv| m.norm_inf() * inv.norm_inf())
}

fn well_conditioned(m: &DenseMatrix) -> bool {
    condition_number(m).is_some_and(|c| c.is_finite() && c <= MAX_CONDITION)
}

fn bounded(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite() && v.abs() <= MAX_MAGNITUDE)
}

fn sample_point<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let mag = rng.gen_range(0.25..2.0);
            if rng.gen_bool(0.8) {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

fn sample_literal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let mag = rng.gen_range(0.5..2.0);
    if rng.gen_bool(0.5) {
        mag
    } else {
        -mag
    }
}

fn random_instruction<R: Rng + ?Sized>(rng: &mut R, width: usize, ops: &[BasisOp]) -> Instruction {
    let usable: Vec<BasisOp> = ops.iter().copied().filter(|op| width > 1 || op.arity() == 1).collect();
    let op = *usable.choose(rng).expect("no usable ops for this width");
    let dest = rng.gen_range(0..width);
    if op.takes_literal() {
        Instruction::with_literal(op, dest, sample_literal(rng))
    } else if op.arity() == 2 {
        let mut other = rng.gen_range(0..width - 1);
        if other >= dest {
            other += 1;
        }
        if rng.gen_bool(0.5) {
            Instruction::binary(op, dest, other)
        } else {
            Instruction::new(op, dest, vec![Operand::slot(other), Operand::slot(dest)])
        }
    } else {
        Instruction::unary(op, dest)
    }
}

/// Checks an overwrite-form trace against the corpus bounds at `x`.
pub fn accept_trace(trace: &Trace, x: &[f64]) -> bool {
    let Ok((out, tape)) = eval_primal(trace, x) else {
        return false;
    };
    if !bounded(&out) || tape.iter().any(|s| !bounded(s)) {
        return false;
    }
    for (t, (instr, pre)) in trace.instrs().iter().zip(tape.iter()).enumerate() {
        match linearize_step(t, instr, pre) {
            Ok(lin) if lin.a.abs() >= MIN_STEP_MAGNITUDE && bounded(&lin.bs) => {}
            _ => return false,
        }
    }
    dense_jacobian(&Program::Trace(trace.clone()), x).is_ok_and(|j| well_conditioned(&j))
}

/// A constant-width trace of width `1..=max_width` and `1..=max_depth`
/// steps drawn from `ops`, with every slot an input and an output.
pub fn random_trace_case<R: Rng + ?Sized>(rng: &mut R, max_width: usize, max_depth: usize, ops: &[BasisOp]) -> TraceCase {
    assert!(max_width >= 1 && max_depth >= 1);
    for _ in 0..MAX_ATTEMPTS {
        let width = rng.gen_range(1..=max_width);
        let depth = rng.gen_range(1..=max_depth);
        let instrs = (0..depth).map(|_| random_instruction(rng, width, ops)).collect();
        let all: Vec<usize> = (0..width).collect();
        let trace = Trace::new(width, instrs, all.clone(), all).expect("generated trace is well formed");
        let x = sample_point(rng, width);
        if accept_trace(&trace, &x) {
            return Case { program: trace, x };
        }
    }
    panic!("no acceptable trace after {MAX_ATTEMPTS} attempts");
}

/// `count` trace cases from [`random_trace_case`].
pub fn trace_corpus<R: Rng + ?Sized>(rng: &mut R, count: usize, max_width: usize, max_depth: usize, ops: &[BasisOp]) -> Vec<TraceCase> {
    (0..count)
        .map(|_| random_trace_case(rng, max_width, max_depth, ops))
        .collect()
}

/// Checks a graph against the corpus bounds at `x`, including the
/// conditioning of every greedy lump block.
pub fn accept_dag(dag: &Dag, x: &[f64]) -> bool {
    let Ok(values) = dag.eval_values(x) else {
        return false;
    };
    if !bounded(&values) {
        return false;
    }
    let Ok(schedule) = greedy_schedule(dag) else {
        return false;
    };
    let program = Program::Dag(dag.clone());
    if !dense_jacobian(&program, x).is_ok_and(|j| well_conditioned(&j)) {
        return false;
    }
    plan_lumps(dag, &schedule).lumps.iter().all(|lump| {
        let lin = lump_linearization(dag, lump, &values);
        bounded(&lin.b.data) && well_conditioned(&lin.a)
    })
}

fn random_node<R: Rng + ?Sized>(rng: &mut R, n: usize, existing: usize, unused: &[usize], ops: &[BasisOp]) -> (BasisOp, Vec<DagArg>) {
    let value = |v: usize| {
        if v < n {
            DagArg::Input(v)
        } else {
            DagArg::Node(NodeId(v - n))
        }
    };
    let total = n + existing;
    // lean on values nobody reads yet so graphs stay narrow
    let pick = |rng: &mut R, avoid: Option<usize>| loop {
        let v = if !unused.is_empty() && rng.gen_bool(0.7) {
            *unused.choose(rng).unwrap()
        } else {
            rng.gen_range(0..total)
        };
        if Some(v) != avoid {
            return v;
        }
    };
    let usable: Vec<BasisOp> = ops.iter().copied().filter(|op| total > 1 || op.arity() == 1).collect();
    let op = *usable.choose(rng).expect("no usable ops");
    let first = pick(rng, None);
    let args = if op.takes_literal() {
        vec![value(first), DagArg::Literal(sample_literal(rng))]
    } else if op.arity() == 2 {
        let second = pick(rng, Some(first));
        vec![value(first), value(second)]
    } else {
        vec![value(first)]
    };
    (op, args)
}

/// A graph with `1..=max_inputs` inputs and `1..=max_nodes` nodes whose
/// outputs are its unread values. Only graphs that the greedy scheduler
/// lumps without underflow, and that meet the corpus bounds, are returned.
pub fn random_dag_case<R: Rng + ?Sized>(rng: &mut R, max_inputs: usize, max_nodes: usize, ops: &[BasisOp]) -> DagCase {
    assert!(max_inputs >= 1 && max_nodes >= 1);
    for _ in 0..MAX_ATTEMPTS {
        let n = rng.gen_range(1..=max_inputs);
        let count = rng.gen_range(1..=max_nodes);
        let mut nodes = Vec::with_capacity(count);
        let mut reads = vec![0usize; n + count];
        for i in 0..count {
            let unused: Vec<usize> = (0..n + i).filter(|&v| reads[v] == 0).collect();
            let (op, args) = random_node(rng, n, i, &unused, ops);
            for a in &args {
                match a {
                    DagArg::Input(k) => reads[*k] += 1,
                    DagArg::Node(NodeId(j)) => reads[n + j] += 1,
                    DagArg::Literal(_) => {}
                }
            }
            nodes.push((op, args));
        }
        let sinks: Vec<DagArg> = (0..n + count)
            .filter(|&v| reads[v] == 0)
            .map(|v| {
                if v < n {
                    DagArg::Input(v)
                } else {
                    DagArg::Node(NodeId(v - n))
                }
            })
            .collect();
        if sinks.len() != n {
            continue;
        }
        let Ok(dag) = Dag::new(n, nodes, sinks) else {
            continue;
        };
        let x = sample_point(rng, n);
        if accept_dag(&dag, &x) {
            return Case { program: dag, x };
        }
    }
    panic!("no acceptable graph after {MAX_ATTEMPTS} attempts");
}

/// `count` graph cases from [`random_dag_case`].
pub fn dag_corpus<R: Rng + ?Sized>(rng: &mut R, count: usize, max_inputs: usize, max_nodes: usize, ops: &[BasisOp]) -> Vec<DagCase> {
    (0..count)
        .map(|_| random_dag_case(rng, max_inputs, max_nodes, ops))
        .collect()
}
