use crate::basis::DEFAULT_SINGULAR_TOL;
use crate::error::Result;
use crate::lumpify::{lumped_mode_eval, Dag};
use crate::modes::{self, Mode};
use crate::trace::Trace;

/// Something with a primal, a Jacobian-vector product and a
/// vector-Jacobian product.
pub trait Differentiable {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn jvp(&self, x: &[f64], xdot: &[f64]) -> Result<Vec<f64>>;
    fn vjp(&self, x: &[f64], ybar: &[f64]) -> Result<Vec<f64>>;
}

impl Differentiable for Trace {
    fn input_dim(&self) -> usize {
        self.width()
    }

    fn output_dim(&self) -> usize {
        self.width()
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        Trace::eval(self, x)
    }

    fn jvp(&self, x: &[f64], xdot: &[f64]) -> Result<Vec<f64>> {
        modes::jvp(self, x, xdot)
    }

    fn vjp(&self, x: &[f64], ybar: &[f64]) -> Result<Vec<f64>> {
        modes::vjp(self, x, ybar)
    }
}

impl Differentiable for Dag {
    fn input_dim(&self) -> usize {
        self.n_inputs()
    }

    fn output_dim(&self) -> usize {
        self.outputs().len()
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        Dag::eval(self, x)
    }

    fn jvp(&self, x: &[f64], xdot: &[f64]) -> Result<Vec<f64>> {
        Dag::jvp(self, x, xdot)
    }

    fn vjp(&self, x: &[f64], ybar: &[f64]) -> Result<Vec<f64>> {
        Dag::vjp(self, x, ybar)
    }
}

/// A parsed program: a register trace or a general graph.
#[derive(Debug, Clone, PartialEq)]
pub enum Program {
    Trace(Trace),
    Dag(Dag),
}

impl Program {
    /// Runs any of the four modes. Graphs go through greedy lumpification.
    pub fn apply_mode(&self, x: &[f64], v: &[f64], mode: Mode) -> Result<Vec<f64>> {
        self.apply_mode_tol(x, v, mode, DEFAULT_SINGULAR_TOL)
    }

    /// As [`Program::apply_mode`] with an explicit singular-step tolerance
    /// for traces. Lump blocks always use their relative pivot rule.
    pub fn apply_mode_tol(&self, x: &[f64], v: &[f64], mode: Mode, tol: f64) -> Result<Vec<f64>> {
        match self {
            Program::Trace(t) => modes::evaluate(t, x, v, mode, tol),
            Program::Dag(d) => lumped_mode_eval(d, x, v, mode),
        }
    }

    fn inner(&self) -> &dyn Differentiable {
        match self {
            Program::Trace(t) => t,
            Program::Dag(d) => d,
        }
    }
}

impl Differentiable for Program {
    fn input_dim(&self) -> usize {
        self.inner().input_dim()
    }

    fn output_dim(&self) -> usize {
        self.inner().output_dim()
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.inner().eval(x)
    }

    fn jvp(&self, x: &[f64], xdot: &[f64]) -> Result<Vec<f64>> {
        self.inner().jvp(x, xdot)
    }

    fn vjp(&self, x: &[f64], ybar: &[f64]) -> Result<Vec<f64>> {
        self.inner().vjp(x, ybar)
    }
}

impl From<Trace> for Program {
    fn from(t: Trace) -> Program {
        Program::Trace(t)
    }
}

impl From<Dag> for Program {
    fn from(d: Dag) -> Program {
        Program::Dag(d)
    }
}
