//! Identities every correct set of modes satisfies, checked without the
//! dense oracle.
//!
//! With `J` the Jacobian at `x`:
//! `⟨Jᵀȳ, ẋ⟩ = ⟨ȳ, Jẋ⟩`, `⟨x̄*, J⁻¹ẏ*⟩ = ⟨J⁻ᵀx̄*, ẏ*⟩`, and each mode
//! composed with its inverse in either order is the identity.

use rand::Rng;
use serde::Serialize;

use crate::basis::linearize_step;
use crate::error::Result;
use crate::modes::{step_kernel, Mode};
use crate::oracle::rel_error;
use crate::program::{Differentiable, Program};
use crate::trace::{eval_primal, Trace};

pub const DOT_TOLERANCE: f64 = 1e-10;
pub const COMPOSE_TOLERANCE: f64 = 1e-8;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn abs_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x * y).abs()).sum()
}

/// `|⟨a,b⟩ − ⟨c,d⟩|` relative to the larger sum of absolute products (at
/// least 1), the scale of the rounding error in either dot product.
pub fn dot_rel_error(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> f64 {
    let scale = abs_dot(a, b).max(abs_dot(c, d)).max(1.0);
    (dot(a, b) - dot(c, d)).abs() / scale
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantReport {
    pub trials: usize,
    /// `⟨Jᵀȳ, ẋ⟩` against `⟨ȳ, Jẋ⟩`.
    pub dot_tangent: f64,
    /// `⟨x̄*, J⁻¹ẏ*⟩` against `⟨J⁻ᵀx̄*, ẏ*⟩`.
    pub dot_inverse: f64,
    /// `J(J⁻¹v)` and `J⁻¹(Jv)` against `v`.
    pub compose_tangent: f64,
    /// `Jᵀ(J⁻ᵀv)` and `J⁻ᵀ(Jᵀv)` against `v`.
    pub compose_cotangent: f64,
    pub passed: bool,
}

fn random_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect()
}

/// Worst errors of the dot-product and composition identities over
/// `trials` random vectors in `[-1, 1]ⁿ`. The program must be square and
/// invertible at `x`; otherwise the inverse-mode error is returned.
pub fn invariant_report<R: Rng + ?Sized>(program: &Program, x: &[f64], trials: usize, rng: &mut R) -> Result<InvariantReport> {
    let run = |v: &[f64], mode: Mode| program.apply_mode(x, v, mode);
    let n_in = program.input_dim();
    let n_out = program.output_dim();
    let mut report = InvariantReport {
        trials,
        dot_tangent: 0.0,
        dot_inverse: 0.0,
        compose_tangent: 0.0,
        compose_cotangent: 0.0,
        passed: false,
    };
    for _ in 0..trials {
        let xdot = random_vec(rng, n_in);
        let ybar = random_vec(rng, n_out);
        let e = dot_rel_error(&run(&ybar, Mode::Reverse)?, &xdot, &ybar, &run(&xdot, Mode::Forward)?);
        report.dot_tangent = report.dot_tangent.max(e);

        let ystar = random_vec(rng, n_out);
        let xbar_star = random_vec(rng, n_in);
        let e = dot_rel_error(
            &xbar_star,
            &run(&ystar, Mode::ReverseInverse)?,
            &run(&xbar_star, Mode::ForwardInverse)?,
            &ystar,
        );
        report.dot_inverse = report.dot_inverse.max(e);

        let v = random_vec(rng, n_in);
        let a = run(&run(&v, Mode::Forward)?, Mode::ReverseInverse)?;
        let w = random_vec(rng, n_out);
        let b = run(&run(&w, Mode::ReverseInverse)?, Mode::Forward)?;
        report.compose_tangent = report.compose_tangent.max(rel_error(&a, &v)).max(rel_error(&b, &w));

        let v = random_vec(rng, n_in);
        let a = run(&run(&v, Mode::ForwardInverse)?, Mode::Reverse)?;
        let w = random_vec(rng, n_out);
        let b = run(&run(&w, Mode::Reverse)?, Mode::ForwardInverse)?;
        report.compose_cotangent = report.compose_cotangent.max(rel_error(&a, &v)).max(rel_error(&b, &w));
    }
    report.passed = report.dot_tangent <= DOT_TOLERANCE
        && report.dot_inverse <= DOT_TOLERANCE
        && report.compose_tangent <= COMPOSE_TOLERANCE
        && report.compose_cotangent <= COMPOSE_TOLERANCE;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SparsityReport {
    pub steps_checked: usize,
    /// One line per slot a kernel changed that it should not have touched.
    pub violations: Vec<String>,
}

impl SparsityReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Applies every per-step kernel of `trace` at `x` to a random vector and
/// checks, bit for bit, which slots changed. Forward and reverse-inverse
/// kernels may only write the destination slot. Reverse and forward-inverse
/// kernels may only write the destination and the step's other active
/// sources.
pub fn structural_sparsity<R: Rng + ?Sized>(trace: &Trace, x: &[f64], rng: &mut R) -> Result<SparsityReport> {
    let (_, tape) = eval_primal(trace, x)?;
    let mut violations = Vec::new();
    for (t, (instr, pre)) in trace.instrs().iter().zip(tape.iter()).enumerate() {
        let lin = linearize_step(t, instr, pre)?;
        let dest = instr.dest.0;
        let others: Vec<usize> = instr.other_active_slots().collect();
        let before = random_vec(rng, trace.width());
        for mode in Mode::ALL {
            let mut v = before.clone();
            step_kernel(mode, &lin, dest, &others, &mut v);
            let writes_sources = matches!(mode, Mode::Reverse | Mode::ForwardInverse);
            for (s, (old, new)) in before.iter().zip(&v).enumerate() {
                let allowed = s == dest || (writes_sources && others.contains(&s));
                if !allowed && old.to_bits() != new.to_bits() {
                    violations.push(format!("step {t} ({instr}), {}: slot r{s} changed", mode.cli_name()));
                }
            }
        }
    }
    Ok(SparsityReport {
        steps_checked: trace.len(),
        violations,
    })
}
