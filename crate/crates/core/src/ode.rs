//! Explicit Euler integration of `dx/dt = g(x)` and of the four derivative
//! equations along its trajectory.
//!
//! Each step is `f_k(x) = x + dt·g(x)` with Jacobian `J_k = I + dt·G_k`,
//! `G_k` the Jacobian of `g` at `x_k`. Tangents and cotangents use `J_k` and
//! `J_kᵀ` exactly. The inverse modes use `J_k⁻¹ ≈ I − dt·G_k` by default, or
//! an exact dense solve with [`InverseStep::ExactSolve`].

use serde::{Deserialize, Serialize};

use crate::error::{check_len, AdError, Result};
use crate::linalg::lu_factor;
use crate::modes::Mode;
use crate::oracle::DenseMatrix;
use crate::program::{Differentiable, Program};

/// A vector field with some components held fixed: `g` is zero on the
/// frozen indices and their derivative rows and columns are dropped.
#[derive(Debug, Clone)]
pub struct VectorField<F> {
    inner: F,
    frozen: Vec<bool>,
}

impl<F: Differentiable> VectorField<F> {
    pub fn new(inner: F) -> Result<VectorField<F>> {
        VectorField::with_frozen(inner, &[])
    }

    pub fn with_frozen(inner: F, frozen: &[usize]) -> Result<VectorField<F>> {
        let n = inner.input_dim();
        if inner.output_dim() != n {
            return Err(AdError::InvalidArgument(format!(
                "a vector field maps the state to itself, got {n} inputs and {} outputs",
                inner.output_dim()
            )));
        }
        let mut mask = vec![false; n];
        for &i in frozen {
            if i >= n {
                return Err(AdError::InvalidArgument(format!("frozen index {i} out of range")));
            }
            mask[i] = true;
        }
        Ok(VectorField { inner, frozen: mask })
    }

    pub fn inner(&self) -> &F {
        &self.inner
    }

    fn mask(&self, mut v: Vec<f64>) -> Vec<f64> {
        for (x, &f) in v.iter_mut().zip(&self.frozen) {
            if f {
                *x = 0.0;
            }
        }
        v
    }
}

impl VectorField<Program> {
    /// Wraps a program, freezing the passive slots of a trace. Those slots
    /// hold side parameters that the flow carries unchanged.
    pub fn from_program(program: Program) -> Result<VectorField<Program>> {
        let frozen: Vec<usize> = match &program {
            Program::Trace(t) => {
                let active: Vec<usize> = t.input_slots().iter().map(|s| s.0).collect();
                (0..t.width()).filter(|i| !active.contains(i)).collect()
            }
            Program::Dag(_) => Vec::new(),
        };
        VectorField::with_frozen(program, &frozen)
    }
}

impl<F: Differentiable> Differentiable for VectorField<F> {
    fn input_dim(&self) -> usize {
        self.frozen.len()
    }

    fn output_dim(&self) -> usize {
        self.frozen.len()
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.mask(self.inner.eval(x)?))
    }

    fn jvp(&self, x: &[f64], xdot: &[f64]) -> Result<Vec<f64>> {
        let xdot = self.mask(xdot.to_vec());
        Ok(self.mask(self.inner.jvp(x, &xdot)?))
    }

    fn vjp(&self, x: &[f64], ybar: &[f64]) -> Result<Vec<f64>> {
        let ybar = self.mask(ybar.to_vec());
        Ok(self.mask(self.inner.vjp(x, &ybar)?))
    }
}

impl<T: Differentiable + ?Sized> Differentiable for &T {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }

    fn output_dim(&self) -> usize {
        (**self).output_dim()
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        (**self).eval(x)
    }

    fn jvp(&self, x: &[f64], xdot: &[f64]) -> Result<Vec<f64>> {
        (**self).jvp(x, xdot)
    }

    fn vjp(&self, x: &[f64], ybar: &[f64]) -> Result<Vec<f64>> {
        (**self).vjp(x, ybar)
    }
}

/// How inverse-mode steps apply `J_k⁻¹` or `J_k⁻ᵀ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InverseStep {
    /// `I − dt·G_k`, first order in `dt`.
    #[default]
    FirstOrder,
    /// Solve `(I + dt·G_k) w = v` with a dense factorization.
    ExactSolve,
}

#[derive(Debug, Clone)]
pub struct OdeProblem<F> {
    pub field: F,
    pub t0: f64,
    pub t1: f64,
    pub dt: f64,
    pub x0: Vec<f64>,
}

impl<F: Differentiable> OdeProblem<F> {
    pub fn new(field: F, t0: f64, t1: f64, dt: f64, x0: Vec<f64>) -> Result<OdeProblem<F>> {
        if !(t0.is_finite() && t1.is_finite() && t1 > t0) {
            return Err(AdError::InvalidArgument(format!("need finite t0 < t1, got [{t0}, {t1}]")));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(AdError::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        check_len(field.input_dim(), &x0)?;
        Ok(OdeProblem { field, t0, t1, dt, x0 })
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    /// Number of Euler steps: `(t1 − t0)/dt` rounded up.
    pub fn steps(&self) -> usize {
        let r = (self.t1 - self.t0) / self.dt;
        let nearest = r.round();
        let k = if (r - nearest).abs() <= 1e-9 * nearest.max(1.0) {
            nearest
        } else {
            r.ceil()
        };
        (k as usize).max(1)
    }

    /// The step actually taken, shrunk so the steps span `[t0, t1]` exactly.
    pub fn effective_dt(&self) -> f64 {
        (self.t1 - self.t0) / self.steps() as f64
    }

    /// Same problem with a different nominal step.
    pub fn with_dt(&self, dt: f64) -> OdeProblem<&F> {
        OdeProblem {
            field: &self.field,
            t0: self.t0,
            t1: self.t1,
            dt,
            x0: self.x0.clone(),
        }
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn euler_step<F: Differentiable>(field: &F, x: &[f64], dt: f64) -> Result<Vec<f64>> {
    let g = field.eval(x)?;
    let mut next = x.to_vec();
    axpy(&mut next, dt, &g);
    Ok(next)
}

/// `v + scale·G_k v`. Forward tangents use `scale = dt`, first-order inverse
/// tangents `scale = −dt`; both go through this one call.
pub fn tangent_rhs<F: Differentiable>(field: &F, x: &[f64], v: &[f64], scale: f64) -> Result<Vec<f64>> {
    let jv = field.jvp(x, v)?;
    let mut out = v.to_vec();
    axpy(&mut out, scale, &jv);
    Ok(out)
}

/// `v + scale·G_kᵀ v`, shared by cotangents and first-order inverse
/// cotangents.
pub fn cotangent_rhs<F: Differentiable>(field: &F, x: &[f64], v: &[f64], scale: f64) -> Result<Vec<f64>> {
    let jv = field.vjp(x, v)?;
    let mut out = v.to_vec();
    axpy(&mut out, scale, &jv);
    Ok(out)
}

/// Solves `(I + dt·G_k) w = v`, or its transpose.
fn exact_inverse_step<F: Differentiable>(field: &F, x: &[f64], v: &[f64], dt: f64, transpose: bool) -> Result<Vec<f64>> {
    let n = v.len();
    let mut m = DenseMatrix::identity(n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = field.jvp(x, &e)?;
        e[j] = 0.0;
        for (i, c) in col.iter().enumerate() {
            let (r, s) = if transpose { (j, i) } else { (i, j) };
            m.set(r, s, m.get(r, s) + dt * c);
        }
    }
    let lu = lu_factor(&m, 1e-12).map_err(|pivot| AdError::SingularMatrix { pivot })?;
    Ok(lu.solve(v))
}

/// Euler trajectory `x_0 … x_K`.
pub fn integrate_primal<F: Differentiable>(p: &OdeProblem<F>) -> Result<Vec<Vec<f64>>> {
    let dt = p.effective_dt();
    let mut states = Vec::with_capacity(p.steps() + 1);
    states.push(p.x0.clone());
    for _ in 0..p.steps() {
        let next = euler_step(&p.field, states.last().unwrap(), dt)?;
        states.push(next);
    }
    Ok(states)
}

/// Final state `x_K`.
pub fn final_state<F: Differentiable>(p: &OdeProblem<F>) -> Result<Vec<f64>> {
    let dt = p.effective_dt();
    let mut x = p.x0.clone();
    for _ in 0..p.steps() {
        x = euler_step(&p.field, &x, dt)?;
    }
    Ok(x)
}

/// `ẋ(T1)` from `ẋ(T0)`, in tandem with the primal.
pub fn ode_forward_tangent<F: Differentiable>(p: &OdeProblem<F>, xdot0: &[f64]) -> Result<Vec<f64>> {
    check_len(p.dim(), xdot0)?;
    let dt = p.effective_dt();
    let mut x = p.x0.clone();
    let mut v = xdot0.to_vec();
    for _ in 0..p.steps() {
        v = tangent_rhs(&p.field, &x, &v, dt)?;
        x = euler_step(&p.field, &x, dt)?;
    }
    Ok(v)
}

/// `x̄(T0)` from `x̄(T1)`, backward over the stored trajectory.
pub fn ode_reverse_cotangent<F: Differentiable>(p: &OdeProblem<F>, xbar1: &[f64]) -> Result<Vec<f64>> {
    check_len(p.dim(), xbar1)?;
    let dt = p.effective_dt();
    let states = integrate_primal(p)?;
    let mut v = xbar1.to_vec();
    for x in states[..states.len() - 1].iter().rev() {
        v = cotangent_rhs(&p.field, x, &v, dt)?;
    }
    Ok(v)
}

/// `ẋ*(T0)` from `ẏ*(T1)`, backward over the stored trajectory.
pub fn ode_reverse_inverse<F: Differentiable>(p: &OdeProblem<F>, ystar1: &[f64], how: InverseStep) -> Result<Vec<f64>> {
    check_len(p.dim(), ystar1)?;
    let dt = p.effective_dt();
    let states = integrate_primal(p)?;
    let mut v = ystar1.to_vec();
    for x in states[..states.len() - 1].iter().rev() {
        v = match how {
            InverseStep::FirstOrder => tangent_rhs(&p.field, x, &v, -dt)?,
            InverseStep::ExactSolve => exact_inverse_step(&p.field, x, &v, dt, false)?,
        };
    }
    Ok(v)
}

/// `ȳ*(T1)` from `x̄*(T0)`, in tandem with the primal.
pub fn ode_forward_inverse<F: Differentiable>(p: &OdeProblem<F>, xbar0: &[f64], how: InverseStep) -> Result<Vec<f64>> {
    check_len(p.dim(), xbar0)?;
    let dt = p.effective_dt();
    let mut x = p.x0.clone();
    let mut v = xbar0.to_vec();
    for _ in 0..p.steps() {
        v = match how {
            InverseStep::FirstOrder => cotangent_rhs(&p.field, &x, &v, -dt)?,
            InverseStep::ExactSolve => exact_inverse_step(&p.field, &x, &v, dt, true)?,
        };
        x = euler_step(&p.field, &x, dt)?;
    }
    Ok(v)
}

/// Dispatches to the derivative equation for `mode`.
pub fn ode_mode<F: Differentiable>(p: &OdeProblem<F>, mode: Mode, v: &[f64], how: InverseStep) -> Result<Vec<f64>> {
    match mode {
        Mode::Forward => ode_forward_tangent(p, v),
        Mode::Reverse => ode_reverse_cotangent(p, v),
        Mode::ReverseInverse => ode_reverse_inverse(p, v, how),
        Mode::ForwardInverse => ode_forward_inverse(p, v, how),
    }
}

/// What a convergence study measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OdeQuantity {
    Primal,
    Derivative(Mode),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    /// Nominal step.
    pub dt: f64,
    pub value: Vec<f64>,
    /// `‖value − reference‖∞`
    pub error: f64,
    /// Empirical order against the previous row, `None` on the first row
    /// or when either error is zero.
    pub order: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub quantity: OdeQuantity,
    pub reference: Vec<f64>,
    /// The reference came from Richardson extrapolation, not the caller.
    pub extrapolated: bool,
    pub rows: Vec<ConvergenceRow>,
    /// Every error is zero, so no order can be estimated.
    pub degenerate: bool,
}

impl ConvergenceReport {
    pub fn orders(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.order).collect()
    }
}

fn solve_quantity<F: Differentiable>(p: &OdeProblem<F>, quantity: OdeQuantity, v: &[f64], how: InverseStep) -> Result<Vec<f64>> {
    match quantity {
        OdeQuantity::Primal => final_state(p),
        OdeQuantity::Derivative(mode) => ode_mode(p, mode, v, how),
    }
}

/// Errors of the Euler result at each `dt` against `reference`, or against
/// a Richardson extrapolation `2·y(h/2) − y(h)` from the finest step when no
/// reference is given.
pub fn convergence_report<F: Differentiable>(
    p: &OdeProblem<F>,
    quantity: OdeQuantity,
    v: &[f64],
    dts: &[f64],
    reference: Option<Vec<f64>>,
    how: InverseStep,
) -> Result<ConvergenceReport> {
    if dts.is_empty() {
        return Err(AdError::InvalidArgument("no step sizes given".to_string()));
    }
    if dts.iter().any(|d| !(d.is_finite() && *d > 0.0)) || dts.windows(2).any(|w| w[1] >= w[0]) {
        return Err(AdError::InvalidArgument(
            "step sizes must be positive and strictly decreasing".to_string(),
        ));
    }
    let values = dts
        .iter()
        .map(|&dt| solve_quantity(&p.with_dt(dt), quantity, v, how))
        .collect::<Result<Vec<_>>>()?;
    let extrapolated = reference.is_none();
    let reference = match reference {
        Some(r) => {
            check_len(p.dim(), &r)?;
            r
        }
        None => {
            let h = *dts.last().unwrap();
            let coarse = values.last().unwrap();
            let fine = solve_quantity(&p.with_dt(h / 2.0), quantity, v, how)?;
            fine.iter().zip(coarse).map(|(f, c)| 2.0 * f - c).collect()
        }
    };
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(dts.len());
    for (&dt, value) in dts.iter().zip(values) {
        let error = value
            .iter()
            .zip(&reference)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let order = rows.last().and_then(|prev| {
            if prev.error > 0.0 && error > 0.0 {
                Some((prev.error / error).ln() / (prev.dt / dt).ln())
            } else {
                None
            }
        });
        rows.push(ConvergenceRow { dt, value, error, order });
    }
    let degenerate = rows.iter().all(|r| r.error == 0.0);
    Ok(ConvergenceReport {
        quantity,
        reference,
        extrapolated,
        rows,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisOp::*;
    use crate::trace::{Instruction, Trace};

    fn decay() -> VectorField<Program> {
        let t = Trace::new(1, vec![Instruction::unary(Neg, 0)], vec![0], vec![0]).unwrap();
        VectorField::from_program(Program::Trace(t)).unwrap()
    }

    #[test]
    fn steps_round_up_and_shrink_dt() {
        let p = OdeProblem::new(decay(), 0.0, 1.0, 1e-4, vec![1.0]).unwrap();
        assert_eq!(p.steps(), 10_000);
        let p = OdeProblem::new(decay(), 0.0, 1.0, 0.3, vec![1.0]).unwrap();
        assert_eq!(p.steps(), 4);
        assert_eq!(p.effective_dt(), 0.25);
    }

    #[test]
    fn rejects_bad_intervals() {
        assert!(OdeProblem::new(decay(), 1.0, 1.0, 0.1, vec![1.0]).is_err());
        assert!(OdeProblem::new(decay(), 0.0, 1.0, 0.0, vec![1.0]).is_err());
        assert!(OdeProblem::new(decay(), 0.0, 1.0, 0.1, vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn frozen_slots_stay_put() {
        // r0 = r0 * r1 with r1 a passive rate
        let t = Trace::new(2, vec![Instruction::binary(Mul, 0, 1)], vec![0], vec![0]).unwrap();
        let field = VectorField::from_program(Program::Trace(t)).unwrap();
        let p = OdeProblem::new(field, 0.0, 1.0, 0.01, vec![1.0, -1.0]).unwrap();
        let xk = final_state(&p).unwrap();
        assert_eq!(xk[1], -1.0);
        assert!((xk[0] - 0.99f64.powi(100)).abs() <= 1e-14);
        let tangent = ode_forward_tangent(&p, &[1.0, 1.0]).unwrap();
        assert_eq!(tangent[1], 1.0);
    }
}
