//! Newton's method with steps from reverse-inverse mode.

use serde::Serialize;

use crate::basis::DEFAULT_SINGULAR_TOL;
use crate::error::{AdError, Result};
use crate::modes::Mode;
use crate::program::{Differentiable, Program};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NewtonConfig {
    pub max_iters: usize,
    /// Stop once `‖f(x)‖∞` is at most this.
    pub abs_tol: f64,
    /// Forwarded to the inverse mode.
    pub singular_tol: f64,
}

impl Default for NewtonConfig {
    fn default() -> NewtonConfig {
        NewtonConfig {
            max_iters: 50,
            abs_tol: 1e-12,
            singular_tol: DEFAULT_SINGULAR_TOL,
        }
    }
}

impl NewtonConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(AdError::InvalidArgument("max_iters must be at least 1".to_string()));
        }
        if !(self.abs_tol > 0.0 && self.singular_tol > 0.0) {
            return Err(AdError::InvalidArgument("tolerances must be positive".to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NewtonResult {
    pub root: Vec<f64>,
    /// Newton steps taken.
    pub iterations: usize,
    /// `‖f(x_k)‖∞` for every iterate, starting with `x_0`.
    pub residual_history: Vec<f64>,
}

fn residual_norm(fx: &[f64]) -> f64 {
    fx.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn check_square(program: &Program) -> Result<()> {
    if program.input_dim() != program.output_dim() {
        return Err(AdError::InvalidArgument(format!(
            "newton needs f: Rⁿ → Rⁿ, got {} inputs and {} outputs",
            program.input_dim(),
            program.output_dim()
        )));
    }
    Ok(())
}

fn step_from(program: &Program, x: &[f64], fx: &[f64], tol: f64) -> Result<Vec<f64>> {
    let dx = program.apply_mode_tol(x, fx, Mode::ReverseInverse, tol)?;
    Ok(x.iter().zip(dx).map(|(a, d)| a - d).collect())
}

/// `x − J⁻¹ f(x)`.
pub fn newton_step(program: &Program, x: &[f64], singular_tol: f64) -> Result<Vec<f64>> {
    check_square(program)?;
    let fx = program.eval(x)?;
    step_from(program, x, &fx, singular_tol)
}

/// Iterates [`newton_step`] until `‖f(x)‖∞ ≤ abs_tol`. Fails with
/// [`AdError::MaxItersExceeded`], carrying the iterate of smallest residual,
/// if that takes more than `max_iters` steps.
pub fn newton_solve(program: &Program, x0: &[f64], cfg: &NewtonConfig) -> Result<NewtonResult> {
    cfg.validate()?;
    check_square(program)?;
    let mut x = x0.to_vec();
    let mut fx = program.eval(&x)?;
    let mut history = vec![residual_norm(&fx)];
    let mut best = (history[0], x.clone());
    for iterations in 0..=cfg.max_iters {
        let r = *history.last().unwrap();
        if r <= cfg.abs_tol {
            return Ok(NewtonResult {
                root: x,
                iterations,
                residual_history: history,
            });
        }
        if iterations == cfg.max_iters {
            break;
        }
        x = step_from(program, &x, &fx, cfg.singular_tol)?;
        fx = program.eval(&x)?;
        let r = residual_norm(&fx);
        history.push(r);
        if r < best.0 {
            best = (r, x.clone());
        }
    }
    Err(AdError::MaxItersExceeded {
        iterations: cfg.max_iters,
        residual: best.0,
        best: best.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisOp::*;
    use crate::trace::{Instruction, Trace};

    fn sqrt2() -> Program {
        Program::Trace(
            Trace::new(
                1,
                vec![Instruction::unary(Square, 0), Instruction::with_literal(SubConst, 0, 2.0)],
                vec![0],
                vec![0],
            )
            .unwrap(),
        )
    }

    fn identity_like() -> Program {
        Program::Trace(Trace::new(1, vec![Instruction::with_literal(MulConst, 0, 1.0)], vec![0], vec![0]).unwrap())
    }

    #[test]
    fn step_examples() {
        assert_eq!(newton_step(&identity_like(), &[5.0], DEFAULT_SINGULAR_TOL).unwrap(), vec![0.0]);
        let x1 = newton_step(&sqrt2(), &[1.5], DEFAULT_SINGULAR_TOL).unwrap();
        assert!((x1[0] - (1.5 - 0.25 / 3.0)).abs() <= 1e-15);
    }

    #[test]
    fn solves_sqrt2_quickly() {
        let res = newton_solve(&sqrt2(), &[1.5], &NewtonConfig::default()).unwrap();
        assert!((res.root[0] - 2f64.sqrt()).abs() <= 1e-12);
        assert!(res.iterations <= 6);
        assert_eq!(res.residual_history.len(), res.iterations + 1);
    }

    #[test]
    fn identity_converges_in_one_step() {
        let res = newton_solve(&identity_like(), &[-3.25], &NewtonConfig::default()).unwrap();
        assert_eq!((res.root.clone(), res.iterations), (vec![0.0], 1));
    }

    #[test]
    fn singular_start_is_reported() {
        let f = Program::Trace(
            Trace::new(
                1,
                vec![Instruction::unary(Square, 0), Instruction::with_literal(SubConst, 0, 1.0)],
                vec![0],
                vec![0],
            )
            .unwrap(),
        );
        assert!(matches!(
            newton_solve(&f, &[0.0], &NewtonConfig::default()),
            Err(AdError::SingularStep { step: 0, .. })
        ));
    }

    #[test]
    fn max_iters_carries_best_iterate() {
        let cfg = NewtonConfig {
            max_iters: 2,
            ..NewtonConfig::default()
        };
        match newton_solve(&sqrt2(), &[1.5], &cfg) {
            Err(AdError::MaxItersExceeded { iterations, best, .. }) => {
                assert_eq!(iterations, 2);
                assert!((best[0] - 2f64.sqrt()).abs() < 1e-5);
            }
            other => panic!("{other:?}"),
        }
    }
}
