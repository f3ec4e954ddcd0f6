//! Scalar basis functions: values, partial derivatives, domains and the
//! local inverses used by tapeless reverse sweeps.
//!
//! Every op takes a fixed number of operands. The `*_const` ops take a slot
//! operand followed by a literal, so their second operand is never active.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{AdError, Result};
use crate::trace::Instruction;

/// Default threshold below which a step's diagonal partial counts as zero.
pub const DEFAULT_SINGULAR_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisOp {
    Add,
    Sub,
    Mul,
    Div,
    Sqrt,
    Log,
    Exp,
    Sin,
    Cos,
    Atan,
    Neg,
    Square,
    AddConst,
    SubConst,
    MulConst,
}

impl BasisOp {
    pub const ALL: [BasisOp; 15] = [
        BasisOp::Add,
        BasisOp::Sub,
        BasisOp::Mul,
        BasisOp::Div,
        BasisOp::Sqrt,
        BasisOp::Log,
        BasisOp::Exp,
        BasisOp::Sin,
        BasisOp::Cos,
        BasisOp::Atan,
        BasisOp::Neg,
        BasisOp::Square,
        BasisOp::AddConst,
        BasisOp::SubConst,
        BasisOp::MulConst,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BasisOp::Add => "add",
            BasisOp::Sub => "sub",
            BasisOp::Mul => "mul",
            BasisOp::Div => "div",
            BasisOp::Sqrt => "sqrt",
            BasisOp::Log => "log",
            BasisOp::Exp => "exp",
            BasisOp::Sin => "sin",
            BasisOp::Cos => "cos",
            BasisOp::Atan => "atan",
            BasisOp::Neg => "neg",
            BasisOp::Square => "square",
            BasisOp::AddConst => "add_const",
            BasisOp::SubConst => "sub_const",
            BasisOp::MulConst => "mul_const",
        }
    }

    pub fn from_name(name: &str) -> Option<BasisOp> {
        BasisOp::ALL.into_iter().find(|op| op.name() == name)
    }

    /// Number of operands that may carry data (slots or graph values).
    pub fn arity(self) -> usize {
        match self {
            BasisOp::Add | BasisOp::Sub | BasisOp::Mul | BasisOp::Div => 2,
            _ => 1,
        }
    }

    /// Total operand count, including the trailing literal of `*_const` ops.
    pub fn operand_count(self) -> usize {
        if self.takes_literal() {
            2
        } else {
            self.arity()
        }
    }

    /// True for ops whose last operand must be a literal.
    pub fn takes_literal(self) -> bool {
        matches!(
            self,
            BasisOp::AddConst | BasisOp::SubConst | BasisOp::MulConst
        )
    }

    pub fn in_domain(self, args: &[f64]) -> bool {
        if args.iter().any(|v| !v.is_finite()) {
            return false;
        }
        match self {
            BasisOp::Sqrt | BasisOp::Log => args[0] > 0.0,
            BasisOp::Div => args[1] != 0.0,
            _ => true,
        }
    }

    /// Evaluates the op. Callers check [`BasisOp::in_domain`] first.
    pub fn eval(self, args: &[f64]) -> f64 {
        debug_assert_eq!(args.len(), self.operand_count());
        let x = args[0];
        match self {
            BasisOp::Add => x + args[1],
            BasisOp::Sub => x - args[1],
            BasisOp::Mul => x * args[1],
            BasisOp::Div => x / args[1],
            BasisOp::Sqrt => x.sqrt(),
            BasisOp::Log => x.ln(),
            BasisOp::Exp => x.exp(),
            BasisOp::Sin => x.sin(),
            BasisOp::Cos => x.cos(),
            BasisOp::Atan => x.atan(),
            BasisOp::Neg => -x,
            BasisOp::Square => x * x,
            BasisOp::AddConst => x + args[1],
            BasisOp::SubConst => x - args[1],
            BasisOp::MulConst => x * args[1],
        }
    }

    /// Partial derivative with respect to each operand, literals included.
    pub fn partials(self, args: &[f64]) -> Vec<f64> {
        let x = args[0];
        match self {
            BasisOp::Add => vec![1.0, 1.0],
            BasisOp::Sub => vec![1.0, -1.0],
            BasisOp::Mul => vec![args[1], x],
            BasisOp::Div => {
                let v = args[1];
                vec![1.0 / v, -x / (v * v)]
            }
            BasisOp::Sqrt => vec![0.5 / x.sqrt()],
            BasisOp::Log => vec![1.0 / x],
            BasisOp::Exp => vec![x.exp()],
            BasisOp::Sin => vec![x.cos()],
            BasisOp::Cos => vec![-x.sin()],
            BasisOp::Atan => vec![1.0 / (1.0 + x * x)],
            BasisOp::Neg => vec![-1.0],
            BasisOp::Square => vec![2.0 * x],
            BasisOp::AddConst => vec![1.0, 1.0],
            BasisOp::SubConst => vec![1.0, -1.0],
            BasisOp::MulConst => vec![args[1], x],
        }
    }

    /// Whether operand `pos` can be recovered from the output and the
    /// remaining operands.
    pub fn has_local_inverse(self, pos: usize) -> bool {
        match self {
            BasisOp::Square | BasisOp::Sin | BasisOp::Cos => false,
            BasisOp::AddConst | BasisOp::SubConst | BasisOp::MulConst => pos == 0,
            _ => pos < self.arity(),
        }
    }

    /// Recovers operand `pos` given the op's `output` and the other operands
    /// (the entry of `args` at `pos` is ignored).
    ///
    /// Returns `None` when the op is not injective in that operand. The
    /// result may be non-finite when the step is locally singular.
    pub fn local_inverse(self, pos: usize, output: f64, args: &[f64]) -> Option<f64> {
        if !self.has_local_inverse(pos) {
            return None;
        }
        let other = |i: usize| args[i];
        let y = output;
        Some(match (self, pos) {
            (BasisOp::Add, 0) => y - other(1),
            (BasisOp::Add, _) => y - other(0),
            (BasisOp::Sub, 0) => y + other(1),
            (BasisOp::Sub, _) => other(0) - y,
            (BasisOp::Mul, 0) => y / other(1),
            (BasisOp::Mul, _) => y / other(0),
            (BasisOp::Div, 0) => y * other(1),
            (BasisOp::Div, _) => other(0) / y,
            (BasisOp::Sqrt, _) => y * y,
            (BasisOp::Log, _) => y.exp(),
            (BasisOp::Exp, _) => y.ln(),
            (BasisOp::Atan, _) => y.tan(),
            (BasisOp::Neg, _) => -y,
            (BasisOp::AddConst, _) => y - other(1),
            (BasisOp::SubConst, _) => y + other(1),
            (BasisOp::MulConst, _) => y / other(1),
            (BasisOp::Square | BasisOp::Sin | BasisOp::Cos, _) => unreachable!(),
        })
    }
}

impl fmt::Display for BasisOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Immutable name-indexed set of basis ops.
#[derive(Debug, Clone)]
pub struct Registry {
    ops: Vec<BasisOp>,
}

impl Registry {
    pub fn lookup(&self, name: &str) -> Option<BasisOp> {
        self.ops.iter().copied().find(|op| op.name() == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = BasisOp> + '_ {
        self.ops.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }
}

pub fn builtin_ops() -> Registry {
    Registry {
        ops: BasisOp::ALL.to_vec(),
    }
}

/// Sparse partials of one step: `a` with respect to the overwritten slot and
/// `bs` with respect to the remaining active source slots, in source order.
///
/// When the destination is not among the active sources (a fresh write) the
/// old destination value does not influence the result and `a` is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLinearization {
    pub a: f64,
    pub bs: Vec<f64>,
}

/// Linearizes `instr` at the machine state it reads. `step` only labels
/// errors.
pub fn linearize_step(step: usize, instr: &Instruction, pre_state: &[f64]) -> Result<StepLinearization> {
    let vals = instr.operand_values(pre_state);
    if !instr.op.in_domain(&vals) {
        return Err(AdError::Domain { step, op: instr.op });
    }
    let partials = instr.op.partials(&vals);
    let dest_pos = instr.dest_position();
    let a = dest_pos.map_or(0.0, |p| partials[p]);
    let bs = instr
        .args
        .iter()
        .enumerate()
        .filter(|(i, arg)| arg.is_active() && Some(*i) != dest_pos)
        .map(|(i, _)| partials[i])
        .collect();
    Ok(StepLinearization { a, bs })
}

pub fn is_step_invertible(lin: &StepLinearization, tol: f64) -> bool {
    lin.a.abs() > tol
}
