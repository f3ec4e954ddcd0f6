//! The four accumulation modes as sparse per-step kernels.
//!
//! Each step Jacobian differs from the identity only in the row of the slot
//! it writes (`a` on the diagonal, `b_i` at the other active sources), and
//! its inverse has the same sparsity. All four evaluators go through
//! [`step_kernel`]:
//!
//! | mode            | product   | sweep    | tape |
//! |-----------------|-----------|----------|------|
//! | `Forward`       | `J v`     | forward  | no   |
//! | `Reverse`       | `Jᵀ v`    | backward | yes  |
//! | `ForwardInverse`| `J⁻ᵀ v`   | forward  | no   |
//! | `ReverseInverse`| `J⁻¹ v`   | backward | yes  |

use serde::{Deserialize, Serialize};

use crate::basis::{is_step_invertible, linearize_step, StepLinearization, DEFAULT_SINGULAR_TOL};
use crate::error::{check_len, AdError, Result};
use crate::trace::{check_constant_width, eval_primal, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Tangent in, tangent out: `ẏ = J ẋ`.
    Forward,
    /// Cotangent in, cotangent out: `x̄ = Jᵀ ȳ`.
    Reverse,
    /// Starred cotangent: `ȳ* = J⁻ᵀ x̄*`.
    ForwardInverse,
    /// Starred tangent: `ẋ* = J⁻¹ ẏ*`.
    ReverseInverse,
}

impl Mode {
    pub const ALL: [Mode; 4] = [
        Mode::Forward,
        Mode::Reverse,
        Mode::ForwardInverse,
        Mode::ReverseInverse,
    ];

    /// True if steps are visited last to first.
    pub fn is_backward(self) -> bool {
        matches!(self, Mode::Reverse | Mode::ReverseInverse)
    }

    pub fn is_inverse(self) -> bool {
        matches!(self, Mode::ForwardInverse | Mode::ReverseInverse)
    }

    /// Kind of vector the mode consumes.
    pub fn input_kind(self) -> DerivKind {
        match self {
            Mode::Forward => DerivKind::Tangent,
            Mode::Reverse => DerivKind::Cotangent,
            Mode::ForwardInverse => DerivKind::StarredCotangent,
            Mode::ReverseInverse => DerivKind::StarredTangent,
        }
    }

    /// The CLI name of the mode.
    pub fn cli_name(self) -> &'static str {
        match self {
            Mode::Forward => "jvp",
            Mode::Reverse => "vjp",
            Mode::ForwardInverse => "vjp-inv",
            Mode::ReverseInverse => "jvp-inv",
        }
    }
}

/// What a derivative vector represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivKind {
    Tangent,
    Cotangent,
    StarredCotangent,
    StarredTangent,
}

/// Applies one step's Jacobian (or its transpose, inverse, inverse
/// transpose) to `v` in place.
///
/// `dest` is the written slot and `others` the remaining active sources,
/// matching `lin.bs`. Entries outside `dest` and `others` are never touched;
/// the reverse-inverse kernel touches only `dest`.
pub fn step_kernel(mode: Mode, lin: &StepLinearization, dest: usize, others: &[usize], v: &mut [f64]) {
    debug_assert_eq!(lin.bs.len(), others.len());
    let a = lin.a;
    match mode {
        Mode::Forward => {
            let mut acc = a * v[dest];
            for (b, &s) in lin.bs.iter().zip(others) {
                acc += b * v[s];
            }
            v[dest] = acc;
        }
        Mode::Reverse => {
            let vr = v[dest];
            for (b, &s) in lin.bs.iter().zip(others) {
                v[s] += b * vr;
            }
            v[dest] = a * vr;
        }
        Mode::ForwardInverse => {
            let w = v[dest] / a;
            for (b, &s) in lin.bs.iter().zip(others) {
                v[s] -= b * w;
            }
            v[dest] = w;
        }
        Mode::ReverseInverse => {
            let mut acc = v[dest];
            for (b, &s) in lin.bs.iter().zip(others) {
                acc -= b * v[s];
            }
            v[dest] = acc / a;
        }
    }
}

fn ensure_invertible(step: usize, lin: &StepLinearization, tol: f64) -> Result<()> {
    if is_step_invertible(lin, tol) {
        Ok(())
    } else {
        Err(AdError::SingularStep {
            step,
            magnitude: lin.a.abs(),
        })
    }
}

fn ensure_inverse_ready(trace: &Trace) -> Result<()> {
    if trace.input_slots().len() != trace.output_slots().len() {
        return Err(AdError::InvalidProgram(format!(
            "inverse modes need as many outputs as inputs ({} vs {})",
            trace.output_slots().len(),
            trace.input_slots().len()
        )));
    }
    check_constant_width(trace).map_err(|v| v.into_error(trace.active_width()))
}

/// Runs `mode` over `trace` at `x` on the vector `v`.
///
/// Forward-family modes run in tandem with the primal; backward-family modes
/// first record a tape. Inverse modes require a constant-width trace and
/// fail eagerly at the first step with `|a| <= tol`.
pub fn evaluate(trace: &Trace, x: &[f64], v: &[f64], mode: Mode, tol: f64) -> Result<Vec<f64>> {
    check_len(trace.width(), x)?;
    check_len(trace.width(), v)?;
    if mode.is_inverse() {
        ensure_inverse_ready(trace)?;
    }
    let mut w = v.to_vec();
    let mut others = Vec::new();
    let mut sweep = |t: usize, pre: &[f64], w: &mut [f64]| -> Result<()> {
        let instr = &trace.instrs()[t];
        let lin = linearize_step(t, instr, pre)?;
        if mode.is_inverse() {
            ensure_invertible(t, &lin, tol)?;
        }
        others.clear();
        others.extend(instr.other_active_slots());
        step_kernel(mode, &lin, instr.dest.0, &others, w);
        Ok(())
    };
    if mode.is_backward() {
        let (_, tape) = eval_primal(trace, x)?;
        for (t, pre) in tape.iter().enumerate().rev() {
            sweep(t, pre, &mut w)?;
        }
    } else {
        let mut state = x.to_vec();
        for (t, instr) in trace.instrs().iter().enumerate() {
            sweep(t, &state, &mut w)?;
            instr.apply(t, &mut state)?;
        }
    }
    Ok(w)
}

/// `ẏ = J ẋ`, computed alongside the primal without a tape.
pub fn jvp(trace: &Trace, x: &[f64], xdot: &[f64]) -> Result<Vec<f64>> {
    evaluate(trace, x, xdot, Mode::Forward, DEFAULT_SINGULAR_TOL)
}

/// `x̄ = Jᵀ ȳ`, consuming the tape last step first.
pub fn vjp(trace: &Trace, x: &[f64], ybar: &[f64]) -> Result<Vec<f64>> {
    evaluate(trace, x, ybar, Mode::Reverse, DEFAULT_SINGULAR_TOL)
}

/// `ẋ* = J⁻¹ ẏ*` by reverse inverse accumulation.
pub fn jvp_inverse(trace: &Trace, x: &[f64], ydot_star: &[f64]) -> Result<Vec<f64>> {
    evaluate(trace, x, ydot_star, Mode::ReverseInverse, DEFAULT_SINGULAR_TOL)
}

/// `ȳ* = J⁻ᵀ x̄*` by forward inverse accumulation; no tape.
pub fn vjp_inverse(trace: &Trace, x: &[f64], xbar_star: &[f64]) -> Result<Vec<f64>> {
    evaluate(trace, x, xbar_star, Mode::ForwardInverse, DEFAULT_SINGULAR_TOL)
}

/// Checks that every step can be undone from its output, before sweeping.
fn ensure_tapeless(trace: &Trace) -> Result<()> {
    for (t, instr) in trace.instrs().iter().enumerate() {
        match instr.dest_position() {
            Some(pos) if instr.op.has_local_inverse(pos) => {}
            _ => return Err(AdError::NoLocalInverse { step: t, op: instr.op }),
        }
    }
    Ok(())
}

/// Backward sweep that rebuilds each pre-step state from the post-step state
/// with the op's local inverse instead of reading a tape.
fn tapeless_backward(trace: &Trace, y: &[f64], v: &[f64], mode: Mode, tol: f64) -> Result<Vec<f64>> {
    debug_assert!(mode.is_backward());
    check_len(trace.width(), y)?;
    check_len(trace.width(), v)?;
    ensure_tapeless(trace)?;
    if mode.is_inverse() {
        ensure_inverse_ready(trace)?;
    }
    let mut state = y.to_vec();
    let mut w = v.to_vec();
    let mut others = Vec::new();
    for (t, instr) in trace.instrs().iter().enumerate().rev() {
        let pos = instr.dest_position().expect("checked by ensure_tapeless");
        let out = state[instr.dest.0];
        let args = instr.operand_values(&state);
        let pre = instr
            .op
            .local_inverse(pos, out, &args)
            .ok_or(AdError::NoLocalInverse { step: t, op: instr.op })?;
        if !pre.is_finite() {
            return Err(AdError::SingularStep { step: t, magnitude: 0.0 });
        }
        state[instr.dest.0] = pre;
        let lin = linearize_step(t, instr, &state)?;
        ensure_invertible(t, &lin, tol)?;
        others.clear();
        others.extend(instr.other_active_slots());
        step_kernel(mode, &lin, instr.dest.0, &others, &mut w);
    }
    Ok(w)
}

/// [`vjp`] without a tape. Requires every step to be locally invertible.
pub fn vjp_tapeless(trace: &Trace, x: &[f64], ybar: &[f64]) -> Result<Vec<f64>> {
    ensure_tapeless(trace)?;
    let y = trace.eval(x)?;
    vjp_tapeless_from_output(trace, &y, ybar)
}

/// [`vjp_tapeless`] starting from a known output `y = f(x)`.
pub fn vjp_tapeless_from_output(trace: &Trace, y: &[f64], ybar: &[f64]) -> Result<Vec<f64>> {
    tapeless_backward(trace, y, ybar, Mode::Reverse, DEFAULT_SINGULAR_TOL)
}

/// [`jvp_inverse`] without a tape.
pub fn jvp_inverse_tapeless(trace: &Trace, x: &[f64], ydot_star: &[f64]) -> Result<Vec<f64>> {
    ensure_tapeless(trace)?;
    let y = trace.eval(x)?;
    jvp_inverse_tapeless_from_output(trace, &y, ydot_star)
}

pub fn jvp_inverse_tapeless_from_output(trace: &Trace, y: &[f64], ydot_star: &[f64]) -> Result<Vec<f64>> {
    tapeless_backward(trace, y, ydot_star, Mode::ReverseInverse, DEFAULT_SINGULAR_TOL)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisOp::*;
    use crate::trace::{Instruction, Operand};

    fn mul_trace() -> Trace {
        Trace::new(2, vec![Instruction::binary(Mul, 0, 1)], vec![0, 1], vec![0, 1]).unwrap()
    }

    const X: [f64; 2] = [3.0, 2.0];

    #[test]
    fn identity_trace_leaves_vectors_alone() {
        let t = Trace::identity(2);
        assert_eq!(jvp(&t, &X, &[1.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(vjp(&t, &X, &[0.0, 1.0]).unwrap(), vec![0.0, 1.0]);
        assert_eq!(jvp_inverse(&t, &X, &[1.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(vjp_inverse(&t, &X, &[1.0, 1.0]).unwrap(), vec![1.0, 1.0]);
    }

    // J = [[2,3],[0,1]], J⁻¹ = [[0.5,-1.5],[0,1]]
    #[test]
    fn multiply_step_all_modes() {
        let t = mul_trace();
        assert_eq!(jvp(&t, &X, &[1.0, 0.0]).unwrap(), vec![2.0, 0.0]);
        assert_eq!(jvp(&t, &X, &[0.0, 1.0]).unwrap(), vec![3.0, 1.0]);
        assert_eq!(vjp(&t, &X, &[1.0, 0.0]).unwrap(), vec![2.0, 3.0]);
        assert_eq!(vjp(&t, &X, &[0.0, 1.0]).unwrap(), vec![0.0, 1.0]);
        assert_eq!(jvp_inverse(&t, &X, &[1.0, 0.0]).unwrap(), vec![0.5, 0.0]);
        assert_eq!(jvp_inverse(&t, &X, &[0.0, 1.0]).unwrap(), vec![-1.5, 1.0]);
        assert_eq!(vjp_inverse(&t, &X, &[1.0, 0.0]).unwrap(), vec![0.5, -1.5]);
        assert_eq!(vjp_inverse(&t, &X, &[0.0, 1.0]).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn singular_step_is_reported_eagerly() {
        let t = Trace::new(
            1,
            vec![Instruction::unary(Exp, 0), Instruction::unary(Square, 0), Instruction::unary(Exp, 0)],
            vec![0],
            vec![0],
        )
        .unwrap();
        // square sees exp(x) > 0, so pick a trace where square sees 0
        assert!(jvp_inverse(&t, &[0.0], &[1.0]).is_ok());
        let t = Trace::new(1, vec![Instruction::unary(Sin, 0), Instruction::unary(Square, 0)], vec![0], vec![0]).unwrap();
        assert_eq!(
            vjp_inverse(&t, &[0.0], &[1.0]).unwrap_err(),
            AdError::SingularStep { step: 1, magnitude: 0.0 }
        );
        assert_eq!(
            jvp_inverse(&t, &[0.0], &[1.0]).unwrap_err(),
            AdError::SingularStep { step: 1, magnitude: 0.0 }
        );
        // forward modes don't care
        assert_eq!(jvp(&t, &[0.0], &[1.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn inverse_modes_reject_non_constant_width() {
        let t = Trace::new(
            2,
            vec![Instruction::binary(Add, 0, 1), Instruction::unary(Exp, 0)],
            vec![0, 1],
            vec![0],
        )
        .unwrap();
        assert!(jvp(&t, &X, &[1.0, 1.0]).is_ok());
        assert!(matches!(
            jvp_inverse(&t, &X, &[1.0, 1.0]),
            Err(AdError::InvalidProgram(_))
        ));
        let t = Trace::new(
            2,
            vec![Instruction::binary(Add, 0, 1), Instruction::unary(Exp, 0)],
            vec![0, 1],
            vec![0, 1],
        )
        .unwrap();
        assert!(jvp_inverse(&t, &X, &[1.0, 1.0]).is_ok());
    }

    #[test]
    fn kernel_touches_only_involved_slots() {
        let lin = StepLinearization { a: 2.0, bs: vec![3.0] };
        let base = [1.25, -0.5, 7.0, f64::NAN];
        for mode in Mode::ALL {
            let mut v = base;
            step_kernel(mode, &lin, 0, &[2], &mut v);
            assert_eq!(v[1].to_bits(), base[1].to_bits(), "{mode:?}");
            assert_eq!(v[3].to_bits(), base[3].to_bits(), "{mode:?}");
            if matches!(mode, Mode::ReverseInverse | Mode::Forward) {
                assert_eq!(v[2].to_bits(), base[2].to_bits(), "{mode:?}");
            }
        }
    }

    #[test]
    fn tapeless_matches_taped() {
        let t = mul_trace();
        let taped = vjp(&t, &X, &[1.0, 0.0]).unwrap();
        let tapeless = vjp_tapeless(&t, &X, &[1.0, 0.0]).unwrap();
        assert!(taped.iter().zip(&tapeless).all(|(a, b)| (a - b).abs() <= 1e-12));

        let e = Trace::new(1, vec![Instruction::unary(Exp, 0)], vec![0], vec![0]).unwrap();
        let taped = jvp_inverse(&e, &[1.0], &[1.0]).unwrap()[0];
        let tapeless = jvp_inverse_tapeless(&e, &[1.0], &[1.0]).unwrap()[0];
        assert!((taped - tapeless).abs() <= 1e-10 * taped.abs());
        let taped = vjp(&e, &[1.0], &[1.0]).unwrap()[0];
        let tapeless = vjp_tapeless(&e, &[1.0], &[1.0]).unwrap()[0];
        assert!((taped - tapeless).abs() <= 1e-10 * taped.abs());
    }

    #[test]
    fn tapeless_rejects_non_injective_ops() {
        let t = Trace::new(1, vec![Instruction::unary(Square, 0)], vec![0], vec![0]).unwrap();
        assert_eq!(
            vjp_tapeless(&t, &[-1.5], &[1.0]).unwrap_err(),
            AdError::NoLocalInverse { step: 0, op: Square }
        );
        assert_eq!(
            jvp_inverse_tapeless(&t, &[-1.5], &[1.0]).unwrap_err(),
            AdError::NoLocalInverse { step: 0, op: Square }
        );
    }

    #[test]
    fn destination_in_second_position() {
        // r1 <- sub r0 r1 : J = [[1,0],[1,-1]], self-inverse
        let t = Trace::new(
            2,
            vec![Instruction::new(Sub, 1, vec![Operand::slot(0), Operand::slot(1)])],
            vec![0, 1],
            vec![0, 1],
        )
        .unwrap();
        assert_eq!(jvp(&t, &X, &[1.0, 2.0]).unwrap(), vec![1.0, -1.0]);
        assert_eq!(jvp_inverse(&t, &X, &[1.0, -1.0]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(vjp(&t, &X, &[1.0, 2.0]).unwrap(), vec![3.0, -2.0]);
        assert_eq!(vjp_inverse(&t, &X, &[3.0, -2.0]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(vjp_tapeless(&t, &X, &[1.0, 2.0]).unwrap(), vec![3.0, -2.0]);
    }

    #[test]
    fn passive_slots_behave_as_constants() {
        // r1 is a parameter: J = [[2,0],[0,1]]
        let t = Trace::new(2, vec![Instruction::binary(Mul, 0, 1)], vec![0], vec![0]).unwrap();
        assert_eq!(jvp(&t, &X, &[1.0, 1.0]).unwrap(), vec![2.0, 1.0]);
        assert_eq!(jvp_inverse(&t, &X, &[1.0, 1.0]).unwrap(), vec![0.5, 1.0]);
    }
}
