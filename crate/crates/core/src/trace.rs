//! Straight-line programs over a fixed register file.
//!
//! A [`Trace`] is a list of [`Instruction`]s, each applying one basis op to
//! some slots (and literals) and writing the result into a destination slot.
//! Evaluation walks the machine states `x_0 .. x_T`; the reverse-family
//! modes replay them from a [`Tape`].

use std::fmt;

use serde::Serialize;

use crate::basis::BasisOp;
use crate::error::{check_len, AdError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct SlotId(pub usize);

impl fmt::Display for SlotId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Operand {
    /// A register read. `active` is filled in by activity analysis when the
    /// enclosing [`Trace`] is built.
    Slot { slot: SlotId, active: bool },
    Literal(f64),
}

impl Operand {
    pub fn slot(slot: usize) -> Operand {
        Operand::Slot {
            slot: SlotId(slot),
            active: false,
        }
    }

    pub fn slot_id(&self) -> Option<SlotId> {
        match self {
            Operand::Slot { slot, .. } => Some(*slot),
            Operand::Literal(_) => None,
        }
    }

    pub fn is_active(&self) -> bool {
        matches!(self, Operand::Slot { active: true, .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instruction {
    pub op: BasisOp,
    pub dest: SlotId,
    pub args: Vec<Operand>,
}

impl Instruction {
    pub fn new(op: BasisOp, dest: usize, args: Vec<Operand>) -> Instruction {
        Instruction {
            op,
            dest: SlotId(dest),
            args,
        }
    }

    /// `dest <- op dest`
    pub fn unary(op: BasisOp, dest: usize) -> Instruction {
        Instruction::new(op, dest, vec![Operand::slot(dest)])
    }

    /// `dest <- op dest other`
    pub fn binary(op: BasisOp, dest: usize, other: usize) -> Instruction {
        Instruction::new(op, dest, vec![Operand::slot(dest), Operand::slot(other)])
    }

    /// `dest <- op dest literal`, for the `*_const` ops.
    pub fn with_literal(op: BasisOp, dest: usize, literal: f64) -> Instruction {
        Instruction::new(op, dest, vec![Operand::slot(dest), Operand::Literal(literal)])
    }

    /// Source slots in operand order.
    pub fn srcs(&self) -> impl Iterator<Item = SlotId> + '_ {
        self.args.iter().filter_map(Operand::slot_id)
    }

    /// Operand position of the active source that the destination overwrites.
    pub fn dest_position(&self) -> Option<usize> {
        self.args.iter().position(|arg| {
            matches!(arg, Operand::Slot { slot, active: true } if *slot == self.dest)
        })
    }

    /// Active source slots other than the overwritten one, in operand order.
    pub fn other_active_slots(&self) -> impl Iterator<Item = usize> + '_ {
        let dest_pos = self.dest_position();
        self.args
            .iter()
            .enumerate()
            .filter(move |(i, arg)| arg.is_active() && Some(*i) != dest_pos)
            .filter_map(|(_, arg)| arg.slot_id().map(|s| s.0))
    }

    pub(crate) fn operand_values(&self, state: &[f64]) -> Vec<f64> {
        self.args
            .iter()
            .map(|arg| match arg {
                Operand::Slot { slot, .. } => state[slot.0],
                Operand::Literal(v) => *v,
            })
            .collect()
    }

    /// Applies the instruction to `state` in place.
    pub(crate) fn apply(&self, step: usize, state: &mut [f64]) -> Result<()> {
        let vals = self.operand_values(state);
        if !self.op.in_domain(&vals) {
            return Err(AdError::Domain { step, op: self.op });
        }
        let out = self.op.eval(&vals);
        if !out.is_finite() {
            return Err(AdError::Domain { step, op: self.op });
        }
        state[self.dest.0] = out;
        Ok(())
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {}", self.dest, self.op)?;
        for arg in &self.args {
            match arg {
                Operand::Slot { slot, .. } => write!(f, " {slot}")?,
                Operand::Literal(v) => write!(f, " {v:?}")?,
            }
        }
        Ok(())
    }
}

/// An immutable straight-line program.
///
/// `width` is the number of registers. Slots listed in `input_slots` start
/// out active; every other slot starts passive, so reads of it are treated
/// as constants. Activity flags on operands are computed at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    width: usize,
    instrs: Vec<Instruction>,
    input_slots: Vec<SlotId>,
    output_slots: Vec<SlotId>,
}

impl Trace {
    /// Builds a trace in overwrite form: every instruction's destination is
    /// one of its active sources.
    pub fn new(
        width: usize,
        instrs: Vec<Instruction>,
        input_slots: Vec<usize>,
        output_slots: Vec<usize>,
    ) -> Result<Trace> {
        let trace = Trace::new_general(width, instrs, input_slots, output_slots)?;
        for (t, instr) in trace.instrs.iter().enumerate() {
            if instr.dest_position().is_none() {
                return Err(AdError::InvalidProgram(format!(
                    "step {t}: destination {} is not among the active sources of `{instr}`",
                    instr.dest
                )));
            }
        }
        Ok(trace)
    }

    /// Builds a trace whose instructions may write a slot they do not read,
    /// as produced by lowering a general data-flow graph.
    pub fn new_general(
        width: usize,
        mut instrs: Vec<Instruction>,
        input_slots: Vec<usize>,
        output_slots: Vec<usize>,
    ) -> Result<Trace> {
        let in_range = |s: usize, what: &str| {
            if s < width {
                Ok(SlotId(s))
            } else {
                Err(AdError::InvalidProgram(format!(
                    "{what} slot r{s} out of range for width {width}"
                )))
            }
        };
        let input_slots = input_slots
            .into_iter()
            .map(|s| in_range(s, "input"))
            .collect::<Result<Vec<_>>>()?;
        let output_slots = output_slots
            .into_iter()
            .map(|s| in_range(s, "output"))
            .collect::<Result<Vec<_>>>()?;
        for (what, list) in [("input", &input_slots), ("output", &output_slots)] {
            let mut seen = vec![false; width];
            for s in list {
                if std::mem::replace(&mut seen[s.0], true) {
                    return Err(AdError::InvalidProgram(format!("duplicate {what} slot {s}")));
                }
            }
        }

        let mut active = vec![false; width];
        for s in &input_slots {
            active[s.0] = true;
        }
        for (t, instr) in instrs.iter_mut().enumerate() {
            if instr.args.len() != instr.op.operand_count() {
                return Err(AdError::InvalidProgram(format!(
                    "step {t}: `{}` takes {} operands, got {}",
                    instr.op,
                    instr.op.operand_count(),
                    instr.args.len()
                )));
            }
            if instr.op.takes_literal() && !matches!(instr.args[1], Operand::Literal(_)) {
                return Err(AdError::InvalidProgram(format!(
                    "step {t}: `{}` expects a literal second operand",
                    instr.op
                )));
            }
            in_range(instr.dest.0, "destination")?;
            let mut seen = Vec::new();
            for arg in instr.args.iter_mut() {
                if let Operand::Slot { slot, active: flag } = arg {
                    in_range(slot.0, "source")?;
                    if seen.contains(slot) {
                        return Err(AdError::InvalidProgram(format!(
                            "step {t}: source {slot} appears twice"
                        )));
                    }
                    seen.push(*slot);
                    *flag = active[slot.0];
                }
            }
            active[instr.dest.0] = instr.args.iter().any(Operand::is_active);
        }

        Ok(Trace {
            width,
            instrs,
            input_slots,
            output_slots,
        })
    }

    /// The empty program on `width` slots, all of them inputs and outputs.
    pub fn identity(width: usize) -> Trace {
        let all: Vec<usize> = (0..width).collect();
        Trace::new(width, Vec::new(), all.clone(), all).expect("identity trace is well formed")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn instrs(&self) -> &[Instruction] {
        &self.instrs
    }

    pub fn len(&self) -> usize {
        self.instrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instrs.is_empty()
    }

    pub fn input_slots(&self) -> &[SlotId] {
        &self.input_slots
    }

    pub fn output_slots(&self) -> &[SlotId] {
        &self.output_slots
    }

    /// Number of active inputs; the width a constant-width trace keeps.
    pub fn active_width(&self) -> usize {
        self.input_slots.len()
    }

    /// True if every instruction overwrites one of its active sources.
    pub fn is_overwrite_form(&self) -> bool {
        self.instrs.iter().all(|i| i.dest_position().is_some())
    }

    /// Runs the program without recording anything.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.width, x)?;
        let mut state = x.to_vec();
        for (t, instr) in self.instrs.iter().enumerate() {
            instr.apply(t, &mut state)?;
        }
        Ok(state)
    }
}

/// Pre-step machine states recorded during a forward sweep.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Tape {
    states: Vec<Vec<f64>>,
}

impl Tape {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// State before step `t`.
    pub fn pre_state(&self, t: usize) -> &[f64] {
        &self.states[t]
    }

    pub fn iter(&self) -> impl DoubleEndedIterator<Item = &[f64]> + ExactSizeIterator {
        self.states.iter().map(Vec::as_slice)
    }
}

/// Evaluates `trace` at `x`, returning the final state and the tape of all
/// pre-step states.
pub fn eval_primal(trace: &Trace, x: &[f64]) -> Result<(Vec<f64>, Tape)> {
    check_len(trace.width, x)?;
    let mut state = x.to_vec();
    let mut states = Vec::with_capacity(trace.len());
    for (t, instr) in trace.instrs.iter().enumerate() {
        states.push(state.clone());
        instr.apply(t, &mut state)?;
    }
    Ok((state, Tape { states }))
}

/// Count of live active slots at each of the `T + 1` cuts.
///
/// A slot is live at a cut if a later instruction reads it before it is
/// overwritten, or if it is an output and never overwritten again.
pub fn width_profile(trace: &Trace) -> Vec<usize> {
    let n = trace.width;
    let steps = trace.instrs.len();

    // activity of each slot's current value at every cut
    let mut active = vec![false; n];
    for s in &trace.input_slots {
        active[s.0] = true;
    }
    let mut active_at = Vec::with_capacity(steps + 1);
    active_at.push(active.clone());
    for instr in &trace.instrs {
        active[instr.dest.0] = instr.args.iter().any(Operand::is_active);
        active_at.push(active.clone());
    }

    let mut live = vec![false; n];
    for s in &trace.output_slots {
        live[s.0] = true;
    }
    let mut profile = vec![0; steps + 1];
    profile[steps] = count_live_active(&live, &active_at[steps]);
    for t in (0..steps).rev() {
        let instr = &trace.instrs[t];
        live[instr.dest.0] = false;
        for s in instr.srcs() {
            live[s.0] = true;
        }
        profile[t] = count_live_active(&live, &active_at[t]);
    }
    profile
}

fn count_live_active(live: &[bool], active: &[bool]) -> usize {
    live.iter().zip(active).filter(|(l, a)| **l && **a).count()
}

/// First cut whose live active width differs from the trace's active width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Violation {
    pub cut: usize,
    pub width: usize,
}

pub fn check_constant_width(trace: &Trace) -> Result<(), Violation> {
    let expected = trace.active_width();
    match width_profile(trace)
        .into_iter()
        .enumerate()
        .find(|(_, w)| *w != expected)
    {
        Some((cut, width)) => Err(Violation { cut, width }),
        None => Ok(()),
    }
}

impl Violation {
    pub fn into_error(self, expected: usize) -> AdError {
        AdError::WidthViolation {
            cut: self.cut,
            width: self.width,
            expected,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisOp::*;

    fn mul_trace() -> Trace {
        Trace::new(2, vec![Instruction::binary(Mul, 0, 1)], vec![0, 1], vec![0, 1]).unwrap()
    }

    #[test]
    fn empty_trace_is_identity() {
        let t = Trace::identity(2);
        let (y, tape) = eval_primal(&t, &[3.0, 2.0]).unwrap();
        assert_eq!(y, vec![3.0, 2.0]);
        assert!(tape.is_empty());
    }

    #[test]
    fn single_multiply() {
        let (y, tape) = eval_primal(&mul_trace(), &[3.0, 2.0]).unwrap();
        assert_eq!(y, vec![6.0, 2.0]);
        assert_eq!(tape.len(), 1);
        assert_eq!(tape.pre_state(0), &[3.0, 2.0]);
    }

    #[test]
    fn square_then_shift() {
        let t = Trace::new(
            1,
            vec![
                Instruction::unary(Square, 0),
                Instruction::with_literal(SubConst, 0, 2.0),
            ],
            vec![0],
            vec![0],
        )
        .unwrap();
        let (y, tape) = eval_primal(&t, &[1.5]).unwrap();
        assert_eq!(y, vec![0.25]);
        assert_eq!(tape.len(), 2);
    }

    #[test]
    fn domain_errors_name_the_step() {
        let t = Trace::new(
            1,
            vec![Instruction::unary(Neg, 0), Instruction::unary(Log, 0)],
            vec![0],
            vec![0],
        )
        .unwrap();
        assert_eq!(
            eval_primal(&t, &[2.0]).unwrap_err(),
            AdError::Domain { step: 1, op: Log }
        );
    }

    #[test]
    fn overwrite_form_is_enforced() {
        let err = Trace::new(2, vec![Instruction::new(Exp, 1, vec![Operand::slot(0)])], vec![0, 1], vec![0, 1]);
        assert!(matches!(err, Err(AdError::InvalidProgram(_))));
        let dup = Trace::new(
            1,
            vec![Instruction::new(Mul, 0, vec![Operand::slot(0), Operand::slot(0)])],
            vec![0],
            vec![0],
        );
        assert!(matches!(dup, Err(AdError::InvalidProgram(_))));
        let range = Trace::new(1, vec![Instruction::binary(Add, 0, 3)], vec![0], vec![0]);
        assert!(matches!(range, Err(AdError::InvalidProgram(_))));
    }

    #[test]
    fn activity_flags_follow_inputs() {
        // r1 is a passive parameter
        let t = Trace::new(2, vec![Instruction::binary(Mul, 0, 1)], vec![0], vec![0]).unwrap();
        let args = &t.instrs()[0].args;
        assert!(args[0].is_active());
        assert!(!args[1].is_active());
        assert_eq!(t.instrs()[0].other_active_slots().count(), 0);
    }

    #[test]
    fn width_profiles() {
        assert_eq!(width_profile(&Trace::identity(2)), vec![2]);
        assert_eq!(width_profile(&mul_trace()), vec![2, 2]);
        assert_eq!(check_constant_width(&mul_trace()), Ok(()));

        // r1 is read once, then never again and is not an output
        let dead = Trace::new(
            2,
            vec![Instruction::binary(Add, 0, 1), Instruction::unary(Exp, 0)],
            vec![0, 1],
            vec![0],
        )
        .unwrap();
        assert_eq!(width_profile(&dead), vec![2, 1, 1]);
        assert_eq!(check_constant_width(&dead), Err(Violation { cut: 1, width: 1 }));
    }

    #[test]
    fn fresh_slot_write_raises_width() {
        // r1 <- exp r0 while r0 stays live: a temporary
        let t = Trace::new_general(
            2,
            vec![
                Instruction::new(Exp, 1, vec![Operand::slot(0)]),
                Instruction::binary(Mul, 0, 1),
            ],
            vec![0],
            vec![0],
        )
        .unwrap();
        assert_eq!(width_profile(&t), vec![1, 2, 1]);
        assert_eq!(check_constant_width(&t), Err(Violation { cut: 1, width: 2 }));
    }

    #[test]
    fn display_round_trips_literals() {
        let i = Instruction::with_literal(SubConst, 0, 2.0);
        assert_eq!(i.to_string(), "r0 = sub_const r0 2.0");
    }
}
