use std::fmt;

use serde::Serialize;

use crate::basis::BasisOp;
use crate::error::{check_len, AdError, Result};
use crate::trace::{Operand, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// An operand of a graph node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DagArg {
    /// The k-th graph input.
    Input(usize),
    Node(NodeId),
    /// A constant; never active.
    Literal(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DagNode {
    pub id: NodeId,
    pub op: BasisOp,
    pub args: Vec<DagArg>,
    /// True if any argument depends on a graph input.
    pub active: bool,
}

/// A data-flow graph with `n` active inputs.
///
/// Nodes are stored in a topological order: each node only reads graph
/// inputs, literals, or nodes with a smaller id. Values are numbered with
/// inputs first (`0..n`) followed by nodes (`n + id`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dag {
    n_inputs: usize,
    nodes: Vec<DagNode>,
    outputs: Vec<DagArg>,
}

impl Dag {
    pub fn new(n_inputs: usize, nodes: Vec<(BasisOp, Vec<DagArg>)>, outputs: Vec<DagArg>) -> Result<Dag> {
        let mut built: Vec<DagNode> = Vec::with_capacity(nodes.len());
        for (i, (op, args)) in nodes.into_iter().enumerate() {
            if args.len() != op.operand_count() {
                return Err(AdError::InvalidProgram(format!(
                    "node {i}: `{op}` takes {} operands, got {}",
                    op.operand_count(),
                    args.len()
                )));
            }
            if op.takes_literal() && !matches!(args[1], DagArg::Literal(_)) {
                return Err(AdError::InvalidProgram(format!(
                    "node {i}: `{op}` expects a literal second operand"
                )));
            }
            let mut active = false;
            for arg in &args {
                match *arg {
                    DagArg::Input(k) if k >= n_inputs => {
                        return Err(AdError::InvalidProgram(format!("node {i}: input {k} out of range")))
                    }
                    DagArg::Input(_) => active = true,
                    DagArg::Node(NodeId(j)) if j >= i => {
                        return Err(AdError::InvalidProgram(format!(
                            "node {i}: argument n{j} is not an earlier node"
                        )))
                    }
                    DagArg::Node(NodeId(j)) => active |= built[j].active,
                    DagArg::Literal(_) => {}
                }
            }
            built.push(DagNode {
                id: NodeId(i),
                op,
                args,
                active,
            });
        }
        let dag = Dag {
            n_inputs,
            nodes: built,
            outputs,
        };
        let mut seen = Vec::new();
        for out in &dag.outputs {
            let v = dag.value_index(out).ok_or_else(|| {
                AdError::InvalidProgram("outputs must be graph inputs or nodes".to_string())
            })?;
            if let DagArg::Node(NodeId(j)) = out {
                if *j >= dag.nodes.len() {
                    return Err(AdError::InvalidProgram(format!("output n{j} out of range")));
                }
            }
            if let DagArg::Input(k) = out {
                if *k >= n_inputs {
                    return Err(AdError::InvalidProgram(format!("output input {k} out of range")));
                }
            }
            if seen.contains(&v) {
                return Err(AdError::InvalidProgram("duplicate output".to_string()));
            }
            seen.push(v);
        }
        Ok(dag)
    }

    /// Converts a trace whose inputs cover every slot it reads before
    /// writing. Graph inputs follow the trace's input order; outputs follow
    /// its output order.
    pub fn from_trace(trace: &Trace) -> Result<Dag> {
        let mut binding: Vec<Option<DagArg>> = vec![None; trace.width()];
        for (k, s) in trace.input_slots().iter().enumerate() {
            binding[s.0] = Some(DagArg::Input(k));
        }
        let mut nodes = Vec::with_capacity(trace.len());
        for (t, instr) in trace.instrs().iter().enumerate() {
            let args = instr
                .args
                .iter()
                .map(|arg| match arg {
                    Operand::Slot { slot, .. } => binding[slot.0].ok_or_else(|| {
                        AdError::InvalidProgram(format!("step {t}: {slot} is read before it is written"))
                    }),
                    Operand::Literal(v) => Ok(DagArg::Literal(*v)),
                })
                .collect::<Result<Vec<_>>>()?;
            nodes.push((instr.op, args));
            binding[instr.dest.0] = Some(DagArg::Node(NodeId(t)));
        }
        let outputs = trace
            .output_slots()
            .iter()
            .map(|s| binding[s.0].ok_or_else(|| AdError::InvalidProgram(format!("output {s} is never set"))))
            .collect::<Result<Vec<_>>>()?;
        Dag::new(trace.input_slots().len(), nodes, outputs)
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn nodes(&self) -> &[DagNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &DagNode {
        &self.nodes[id.0]
    }

    pub fn outputs(&self) -> &[DagArg] {
        &self.outputs
    }

    pub fn value_count(&self) -> usize {
        self.n_inputs + self.nodes.len()
    }

    /// Value number of an argument, `None` for literals.
    pub fn value_index(&self, arg: &DagArg) -> Option<usize> {
        match *arg {
            DagArg::Input(k) => Some(k),
            DagArg::Node(NodeId(j)) => Some(self.n_inputs + j),
            DagArg::Literal(_) => None,
        }
    }

    pub fn is_value_active(&self, v: usize) -> bool {
        v < self.n_inputs || self.nodes[v - self.n_inputs].active
    }

    pub(crate) fn arg_values(&self, node: &DagNode, values: &[f64]) -> Vec<f64> {
        node.args
            .iter()
            .map(|arg| match self.value_index(arg) {
                Some(v) => values[v],
                None => match arg {
                    DagArg::Literal(c) => *c,
                    _ => unreachable!(),
                },
            })
            .collect()
    }

    /// Every value of the graph at `x`: inputs then nodes.
    pub fn eval_values(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n_inputs, x)?;
        let mut values = Vec::with_capacity(self.value_count());
        values.extend_from_slice(x);
        for node in &self.nodes {
            let args = self.arg_values(node, &values);
            if !node.op.in_domain(&args) {
                return Err(AdError::Domain {
                    step: node.id.0,
                    op: node.op,
                });
            }
            let out = node.op.eval(&args);
            if !out.is_finite() {
                return Err(AdError::Domain {
                    step: node.id.0,
                    op: node.op,
                });
            }
            values.push(out);
        }
        Ok(values)
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let values = self.eval_values(x)?;
        Ok(self.read_outputs(&values))
    }

    pub(crate) fn read_outputs(&self, values: &[f64]) -> Vec<f64> {
        self.outputs
            .iter()
            .map(|o| values[self.value_index(o).expect("outputs are values")])
            .collect()
    }

    /// Partials of `node` with respect to each active argument, as
    /// `(value, partial)` pairs. Repeated arguments appear once per use.
    pub(crate) fn active_partials(&self, node: &DagNode, values: &[f64]) -> Vec<(usize, f64)> {
        let args = self.arg_values(node, values);
        let partials = node.op.partials(&args);
        node.args
            .iter()
            .zip(partials)
            .filter_map(|(arg, p)| {
                self.value_index(arg)
                    .filter(|&v| self.is_value_active(v))
                    .map(|v| (v, p))
            })
            .collect()
    }

    /// Output tangents for input tangent `xdot`, node by node.
    pub fn jvp(&self, x: &[f64], xdot: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n_inputs, xdot)?;
        let values = self.eval_values(x)?;
        let mut tangent = vec![0.0; self.value_count()];
        tangent[..self.n_inputs].copy_from_slice(xdot);
        for node in &self.nodes {
            let v = self.n_inputs + node.id.0;
            tangent[v] = self
                .active_partials(node, &values)
                .into_iter()
                .map(|(u, p)| p * tangent[u])
                .sum();
        }
        Ok(self.read_outputs(&tangent))
    }

    /// Input cotangents for output cotangent `ybar`.
    pub fn vjp(&self, x: &[f64], ybar: &[f64]) -> Result<Vec<f64>> {
        check_len(self.outputs.len(), ybar)?;
        let values = self.eval_values(x)?;
        let mut adjoint = vec![0.0; self.value_count()];
        for (o, w) in self.outputs.iter().zip(ybar) {
            adjoint[self.value_index(o).unwrap()] += w;
        }
        for node in self.nodes.iter().rev() {
            let g = adjoint[self.n_inputs + node.id.0];
            if g == 0.0 {
                continue;
            }
            for (u, p) in self.active_partials(node, &values) {
                adjoint[u] += p * g;
            }
        }
        adjoint.truncate(self.n_inputs);
        Ok(adjoint)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisOp::*;
    use crate::trace::Instruction;

    /// x -> u = 2x, v = 3x, w = u + v
    pub(crate) fn diamond() -> Dag {
        Dag::new(
            1,
            vec![
                (MulConst, vec![DagArg::Input(0), DagArg::Literal(2.0)]),
                (MulConst, vec![DagArg::Input(0), DagArg::Literal(3.0)]),
                (Add, vec![DagArg::Node(NodeId(0)), DagArg::Node(NodeId(1))]),
            ],
            vec![DagArg::Node(NodeId(2))],
        )
        .unwrap()
    }

    #[test]
    fn diamond_derivatives() {
        let d = diamond();
        assert_eq!(d.eval(&[1.5]).unwrap(), vec![7.5]);
        assert_eq!(d.jvp(&[1.5], &[1.0]).unwrap(), vec![5.0]);
        assert_eq!(d.vjp(&[1.5], &[1.0]).unwrap(), vec![5.0]);
    }

    #[test]
    fn rejects_forward_references_and_duplicate_outputs() {
        let fwd = Dag::new(1, vec![(Exp, vec![DagArg::Node(NodeId(0))])], vec![DagArg::Node(NodeId(0))]);
        assert!(fwd.is_err());
        let dup = Dag::new(1, vec![(Exp, vec![DagArg::Input(0)])], vec![DagArg::Node(NodeId(0)), DagArg::Node(NodeId(0))]);
        assert!(dup.is_err());
    }

    #[test]
    fn from_trace_rebinds_registers() {
        let t = Trace::new(
            2,
            vec![Instruction::binary(Mul, 0, 1), Instruction::binary(Add, 1, 0)],
            vec![0, 1],
            vec![0, 1],
        )
        .unwrap();
        let d = Dag::from_trace(&t).unwrap();
        assert_eq!(d.outputs(), &[DagArg::Node(NodeId(0)), DagArg::Node(NodeId(1))]);
        assert_eq!(d.eval(&[3.0, 2.0]).unwrap(), t.eval(&[3.0, 2.0]).unwrap());
        assert_eq!(
            d.jvp(&[3.0, 2.0], &[1.0, 0.5]).unwrap(),
            crate::modes::jvp(&t, &[3.0, 2.0], &[1.0, 0.5]).unwrap()
        );
    }

    #[test]
    fn passive_nodes_are_constants() {
        // p = exp(1) is passive; y = x * p
        let d = Dag::new(
            1,
            vec![
                (Exp, vec![DagArg::Literal(1.0)]),
                (Mul, vec![DagArg::Input(0), DagArg::Node(NodeId(0))]),
            ],
            vec![DagArg::Node(NodeId(1))],
        )
        .unwrap();
        assert!(!d.nodes()[0].active);
        assert!(d.nodes()[1].active);
        let e = 1f64.exp();
        assert_eq!(d.jvp(&[2.0], &[1.0]).unwrap(), vec![e]);
        assert_eq!(d.vjp(&[2.0], &[1.0]).unwrap(), vec![e]);
    }
}
