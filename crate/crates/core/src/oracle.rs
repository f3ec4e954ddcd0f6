//! Dense reference for every mode.
//!
//! Jacobians are built by multiplying full step matrices (traces) or by
//! accumulating dense gradient rows (graphs), then solved by Gauss-Jordan
//! elimination. None of this goes through the sparse mode kernels or the
//! lump block routines.

use rand::Rng;
use serde::Serialize;

use crate::basis::linearize_step;
use crate::error::{check_len, AdError, Result};
use crate::lumpify::Dag;
use crate::modes::Mode;
use crate::program::{Differentiable, Program};
use crate::trace::{eval_primal, Trace};

/// Pivot threshold for the oracle's elimination, relative to `‖M‖∞`.
pub const ORACLE_PIVOT_TOL: f64 = 1e-12;

/// Agreement threshold used by [`compare_modes`].
pub const MODE_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    /// Row-major entries.
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> DenseMatrix {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> DenseMatrix {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        DenseMatrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "matvec shape mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `‖self − other‖∞`
    pub fn distance_inf(&self, other: &DenseMatrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        (0..self.rows)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(other.row(i))
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}

/// `‖got − expected‖∞ / max(1, ‖expected‖∞)`
pub fn rel_error(got: &[f64], expected: &[f64]) -> f64 {
    assert_eq!(got.len(), expected.len());
    let scale = expected.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let diff = got
        .iter()
        .zip(expected)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    diff / scale
}

fn trace_jacobian(trace: &Trace, x: &[f64]) -> Result<DenseMatrix> {
    let n = trace.width();
    let (_, tape) = eval_primal(trace, x)?;
    let mut jac = DenseMatrix::identity(n);
    for (t, (instr, pre)) in trace.instrs().iter().zip(tape.iter()).enumerate() {
        let lin = linearize_step(t, instr, pre)?;
        let mut step = DenseMatrix::identity(n);
        let d = instr.dest.0;
        step.set(d, d, lin.a);
        for (b, s) in lin.bs.iter().zip(instr.other_active_slots()) {
            step.set(d, s, *b);
        }
        jac = step.matmul(&jac);
    }
    Ok(jac)
}

fn dag_jacobian(dag: &Dag, x: &[f64]) -> Result<DenseMatrix> {
    let n = dag.n_inputs();
    let values = dag.eval_values(x)?;
    let mut grads: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            e
        })
        .collect();
    for node in dag.nodes() {
        let mut g = vec![0.0; n];
        for (u, p) in dag.active_partials(node, &values) {
            for (gi, ui) in g.iter_mut().zip(&grads[u]) {
                *gi += p * ui;
            }
        }
        grads.push(g);
    }
    let rows: Vec<Vec<f64>> = dag
        .outputs()
        .iter()
        .map(|o| grads[dag.value_index(o).unwrap()].clone())
        .collect();
    if rows.is_empty() {
        return Ok(DenseMatrix::zeros(0, n));
    }
    Ok(DenseMatrix::from_rows(&rows))
}

/// The full Jacobian at `x`.
pub fn dense_jacobian(program: &Program, x: &[f64]) -> Result<DenseMatrix> {
    check_len(program.input_dim(), x)?;
    match program {
        Program::Trace(t) => trace_jacobian(t, x),
        Program::Dag(d) => dag_jacobian(d, x),
    }
}

/// Central-difference Jacobian with step `h = 1e-6·max(1, |x_j|)`.
pub fn finite_difference_jacobian(program: &Program, x: &[f64]) -> Result<DenseMatrix> {
    check_len(program.input_dim(), x)?;
    let mut jac = DenseMatrix::zeros(program.output_dim(), program.input_dim());
    for j in 0..x.len() {
        let h = 1e-6 * x[j].abs().max(1.0);
        let mut plus = x.to_vec();
        let mut minus = x.to_vec();
        plus[j] += h;
        minus[j] -= h;
        let fp = program.eval(&plus)?;
        let fm = program.eval(&minus)?;
        for i in 0..jac.rows {
            jac.set(i, j, (fp[i] - fm[i]) / (2.0 * h));
        }
    }
    Ok(jac)
}

/// Largest relative disagreement between [`dense_jacobian`] and finite
/// differences over the columns of active inputs. Columns of passive trace
/// slots are skipped: the analytic Jacobian treats them as constants.
pub fn finite_difference_discrepancy(program: &Program, x: &[f64]) -> Result<f64> {
    let jac = dense_jacobian(program, x)?;
    let fd = finite_difference_jacobian(program, x)?;
    let cols: Vec<usize> = match program {
        Program::Trace(t) => t.input_slots().iter().map(|s| s.0).collect(),
        Program::Dag(d) => (0..d.n_inputs()).collect(),
    };
    let mut worst = 0.0f64;
    for j in cols {
        let exact: Vec<f64> = (0..jac.rows).map(|i| jac.get(i, j)).collect();
        let approx: Vec<f64> = (0..fd.rows).map(|i| fd.get(i, j)).collect();
        worst = worst.max(rel_error(&approx, &exact));
    }
    Ok(worst)
}

/// Row-reduces `[M | rhs]` with partial pivoting, leaving the solution in
/// `rhs` (one column per right-hand side).
fn gauss_jordan(m: &DenseMatrix, rhs: &mut DenseMatrix) -> Result<()> {
    assert_eq!(m.rows, m.cols, "oracle solve needs a square matrix");
    assert_eq!(m.rows, rhs.rows);
    let n = m.rows;
    let threshold = ORACLE_PIVOT_TOL * m.norm_inf();
    let mut a = m.clone();
    for col in 0..n {
        let mut p = col;
        for r in col + 1..n {
            if a.get(r, col).abs() > a.get(p, col).abs() {
                p = r;
            }
        }
        let pivot = a.get(p, col);
        if pivot.abs() <= threshold || !pivot.is_finite() {
            return Err(AdError::SingularMatrix { pivot });
        }
        if p != col {
            for j in 0..n {
                a.data.swap(p * n + j, col * n + j);
            }
            for j in 0..rhs.cols {
                rhs.data.swap(p * rhs.cols + j, col * rhs.cols + j);
            }
        }
        for j in 0..n {
            a.set(col, j, a.get(col, j) / pivot);
        }
        for j in 0..rhs.cols {
            rhs.set(col, j, rhs.get(col, j) / pivot);
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a.get(r, col);
            if f == 0.0 {
                continue;
            }
            for j in 0..n {
                a.set(r, j, a.get(r, j) - f * a.get(col, j));
            }
            for j in 0..rhs.cols {
                rhs.set(r, j, rhs.get(r, j) - f * rhs.get(col, j));
            }
        }
    }
    Ok(())
}

/// Solves `M w = v`.
pub fn dense_solve(m: &DenseMatrix, v: &[f64]) -> Result<Vec<f64>> {
    check_len(m.rows, v)?;
    let mut rhs = DenseMatrix {
        rows: v.len(),
        cols: 1,
        data: v.to_vec(),
    };
    gauss_jordan(m, &mut rhs)?;
    Ok(rhs.data)
}

pub fn dense_inverse(m: &DenseMatrix) -> Result<DenseMatrix> {
    let mut rhs = DenseMatrix::identity(m.rows);
    gauss_jordan(m, &mut rhs)?;
    Ok(rhs)
}

/// What the dense reference says `mode` should return for `v`.
pub fn oracle_product(jac: &DenseMatrix, v: &[f64], mode: Mode) -> Result<Vec<f64>> {
    match mode {
        Mode::Forward => Ok(jac.matvec(v)),
        Mode::Reverse => Ok(jac.transpose().matvec(v)),
        Mode::ReverseInverse => dense_solve(jac, v),
        Mode::ForwardInverse => dense_solve(&jac.transpose(), v),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeOutcome {
    pub mode: Mode,
    /// Worst relative error over the trials that ran.
    pub max_rel_error: Option<f64>,
    /// First error the mode raised, if any.
    pub error: Option<String>,
    pub error_kind: Option<&'static str>,
}

/// Result of checking all four modes against the dense reference.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeReport {
    pub trials: usize,
    pub tolerance: f64,
    pub x: Vec<f64>,
    pub modes: Vec<ModeOutcome>,
    /// The oracle could not invert the Jacobian.
    pub oracle_singular: bool,
    /// Every inverse-mode failure was a singularity the oracle also saw.
    pub singular_consistent: bool,
    pub passed: bool,
}

/// Runs every mode on `trials` random vectors in `[-1, 1]ⁿ` and records the
/// worst relative error against the dense reference. Fails if any error
/// exceeds [`MODE_TOLERANCE`] or any mode could not run.
pub fn compare_modes<R: Rng + ?Sized>(program: &Program, x: &[f64], trials: usize, rng: &mut R) -> ModeReport {
    let jac = dense_jacobian(program, x);
    let oracle_singular = match &jac {
        Ok(j) if j.rows == j.cols => dense_inverse(j).is_err(),
        _ => true,
    };
    let mut outcomes: Vec<ModeOutcome> = Mode::ALL
        .iter()
        .map(|&mode| ModeOutcome {
            mode,
            max_rel_error: None,
            error: None,
            error_kind: None,
        })
        .collect();
    if let Err(e) = &jac {
        for o in &mut outcomes {
            o.error = Some(e.to_string());
            o.error_kind = Some(e.kind());
        }
    }
    if let Ok(jac) = &jac {
        for _ in 0..trials {
            for outcome in outcomes.iter_mut() {
                if outcome.error.is_some() {
                    continue;
                }
                let mode = outcome.mode;
                let dim = if matches!(mode, Mode::Forward | Mode::ForwardInverse) {
                    jac.cols
                } else {
                    jac.rows
                };
                let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..=1.0)).collect();
                let got = program.apply_mode(x, &v, mode);
                let expected = oracle_product(jac, &v, mode);
                match (got, expected) {
                    (Ok(g), Ok(e)) => {
                        let err = rel_error(&g, &e);
                        let worst = outcome.max_rel_error.map_or(err, |m: f64| m.max(err));
                        outcome.max_rel_error = Some(if err.is_nan() { f64::INFINITY } else { worst });
                    }
                    (Err(e), _) | (_, Err(e)) => {
                        outcome.error = Some(e.to_string());
                        outcome.error_kind = Some(e.kind());
                    }
                }
            }
        }
    }
    let singular_consistent = outcomes.iter().filter(|o| o.error.is_some()).all(|o| {
        o.mode.is_inverse()
            && oracle_singular
            && matches!(
                o.error_kind,
                Some("SingularStepError" | "SingularLumpError" | "SingularMatrixError" | "WidthUnderflowError")
            )
    });
    let passed = outcomes
        .iter()
        .all(|o| o.error.is_none() && o.max_rel_error.map_or(trials == 0, |e| e <= MODE_TOLERANCE));
    ModeReport {
        trials,
        tolerance: MODE_TOLERANCE,
        x: x.to_vec(),
        modes: outcomes,
        oracle_singular,
        singular_consistent,
        passed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisOp::*;
    use crate::trace::Instruction;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn jacobian_examples() {
        let id = Program::Trace(Trace::identity(2));
        assert_eq!(dense_jacobian(&id, &[1.0, 2.0]).unwrap(), DenseMatrix::identity(2));

        let mul = Program::Trace(Trace::new(2, vec![Instruction::binary(Mul, 0, 1)], vec![0, 1], vec![0, 1]).unwrap());
        assert_eq!(
            dense_jacobian(&mul, &[3.0, 2.0]).unwrap(),
            DenseMatrix::from_rows(&[vec![2.0, 3.0], vec![0.0, 1.0]])
        );

        let sq = Program::Trace(Trace::new(1, vec![Instruction::unary(Square, 0)], vec![0], vec![0]).unwrap());
        assert_eq!(dense_jacobian(&sq, &[1.5]).unwrap(), DenseMatrix::from_rows(&[vec![3.0]]));
    }

    #[test]
    fn solve_examples() {
        assert_eq!(dense_solve(&DenseMatrix::identity(2), &[4.0, 5.0]).unwrap(), vec![4.0, 5.0]);
        let m = DenseMatrix::from_rows(&[vec![2.0, 3.0], vec![0.0, 1.0]]);
        assert_eq!(dense_solve(&m, &[1.0, 0.0]).unwrap(), vec![0.5, 0.0]);
        assert!(matches!(
            dense_solve(&DenseMatrix::zeros(2, 2), &[1.0, 1.0]),
            Err(AdError::SingularMatrix { .. })
        ));
    }

    #[test]
    fn inverse_of_random_well_conditioned_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..=8 {
            for _ in 0..20 {
                // diagonally dominant keeps the condition number modest
                let mut m = DenseMatrix::zeros(n, n);
                for i in 0..n {
                    for j in 0..n {
                        m.set(i, j, rng.gen_range(-1.0..1.0));
                    }
                    m.set(i, i, m.get(i, i) + n as f64 * 2.0);
                }
                let inv = dense_inverse(&m).unwrap();
                let residual = inv.matmul(&m).distance_inf(&DenseMatrix::identity(n));
                assert!(residual <= 1e-9, "n={n}: {residual}");
                let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let w = dense_solve(&m, &v).unwrap();
                let back = m.matvec(&w);
                let vnorm = v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
                assert!(rel_error(&back, &v) * 1.0f64.max(vnorm) <= 1e-10 * vnorm.max(f64::MIN_POSITIVE) + 1e-15);
            }
        }
    }

    #[test]
    fn compare_modes_on_identity_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let report = compare_modes(&Program::Trace(Trace::identity(3)), &[1.0, 2.0, 3.0], 10, &mut rng);
        assert!(report.passed);
        assert!(report.modes.iter().all(|m| m.max_rel_error == Some(0.0)));
    }

    #[test]
    fn compare_modes_flags_singular_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sq = Program::Trace(Trace::new(1, vec![Instruction::unary(Square, 0)], vec![0], vec![0]).unwrap());
        let report = compare_modes(&sq, &[0.0], 5, &mut rng);
        assert!(!report.passed);
        assert!(report.oracle_singular);
        assert!(report.singular_consistent);
        for m in &report.modes {
            if m.mode.is_inverse() {
                assert_eq!(m.error_kind, Some("SingularStepError"));
            } else {
                assert_eq!(m.max_rel_error, Some(0.0));
            }
        }
    }

    #[test]
    fn finite_differences_agree_on_mixed_trace() {
        let t = Trace::new(
            2,
            vec![
                Instruction::binary(Mul, 0, 1),
                Instruction::unary(Sin, 1),
                Instruction::binary(Div, 1, 0),
                Instruction::unary(Exp, 0),
            ],
            vec![0, 1],
            vec![0, 1],
        )
        .unwrap();
        let p = Program::Trace(t);
        assert!(finite_difference_discrepancy(&p, &[0.7, 1.3]).unwrap() <= 1e-5);
    }
}
