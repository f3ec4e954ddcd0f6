use serde::Serialize;

use super::dag::{Dag, NodeId};
use super::schedule::{greedy_schedule, LiveTracker, LumpSchedule};
use crate::error::{check_len, AdError, Result};
use crate::linalg::lu_factor;
use crate::modes::Mode;
use crate::oracle::DenseMatrix;

/// Pivot threshold for lump blocks, relative to `‖A‖∞`.
pub const LUMP_PIVOT_TOL: f64 = 1e-12;

/// One lump of a schedule, with the values it consumes and produces.
///
/// `replaced[i]` dies inside the lump and `produced[i]` takes over its slot;
/// `read_only` values are read but stay live. With `l = produced.len()` and
/// `k = l + read_only.len()` the lump's Jacobian, outputs first, is
/// `[[A, B], [0, I]]` with `A: l×l`, `B: l×(k−l)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lump {
    pub index: usize,
    pub nodes: Vec<NodeId>,
    pub replaced: Vec<usize>,
    pub read_only: Vec<usize>,
    pub produced: Vec<usize>,
    pub replaced_slots: Vec<usize>,
    pub read_only_slots: Vec<usize>,
}

impl Lump {
    pub fn l(&self) -> usize {
        self.produced.len()
    }

    pub fn k(&self) -> usize {
        self.produced.len() + self.read_only.len()
    }
}

/// Lumps of a schedule plus the slot each graph output ends up in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LumpPlan {
    pub lumps: Vec<Lump>,
    pub output_slots: Vec<usize>,
}

/// Splits `schedule` into lumps and assigns slots between cuts: graph input
/// `i` starts in slot `i`, and the values a lump produces (in schedule
/// order) take the slots of the values it consumes (in slot order).
pub fn plan_lumps(dag: &Dag, schedule: &LumpSchedule) -> LumpPlan {
    let n = dag.n_inputs();
    let mut tracker = LiveTracker::new(dag);
    let mut slot_of = vec![usize::MAX; dag.value_count()];
    for (k, s) in slot_of.iter_mut().enumerate().take(n) {
        *s = k;
    }
    let mut start_live = tracker.live_set();
    let mut lumps = Vec::with_capacity(schedule.lump_count());
    for (index, w) in schedule.cuts.windows(2).enumerate() {
        let nodes = schedule.order[w[0]..w[1]].to_vec();
        for id in &nodes {
            tracker.schedule(id.0);
        }
        let end_live = tracker.live_set();
        let mut replaced: Vec<usize> = start_live.iter().copied().filter(|v| !end_live.contains(v)).collect();
        replaced.sort_by_key(|&v| slot_of[v]);
        let produced: Vec<usize> = nodes
            .iter()
            .map(|id| n + id.0)
            .filter(|v| end_live.contains(v))
            .collect();
        debug_assert_eq!(replaced.len(), produced.len());
        let read_only: Vec<usize> = start_live
            .iter()
            .copied()
            .filter(|v| end_live.contains(v))
            .filter(|v| nodes.iter().any(|id| tracker.distinct_args(id.0).contains(v)))
            .collect();
        let replaced_slots: Vec<usize> = replaced.iter().map(|&v| slot_of[v]).collect();
        let read_only_slots = read_only.iter().map(|&v| slot_of[v]).collect();
        for (&p, &s) in produced.iter().zip(&replaced_slots) {
            slot_of[p] = s;
        }
        lumps.push(Lump {
            index,
            nodes,
            replaced,
            read_only,
            produced,
            replaced_slots,
            read_only_slots,
        });
        start_live = end_live;
    }
    let output_slots = dag
        .outputs()
        .iter()
        .map(|o| slot_of[dag.value_index(o).unwrap()])
        .collect();
    LumpPlan { lumps, output_slots }
}

/// Block partials of a lump: `A = ∂produced/∂replaced`,
/// `B = ∂produced/∂read_only`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LumpLinearization {
    pub a: DenseMatrix,
    pub b: DenseMatrix,
}

/// Builds `(A, B)` with one forward pass through the lump per consumed
/// value. `values` holds every graph value (see [`Dag::eval_values`]).
pub fn lump_linearization(dag: &Dag, lump: &Lump, values: &[f64]) -> LumpLinearization {
    let n = dag.n_inputs();
    let l = lump.l();
    let partials: Vec<Vec<(usize, f64)>> = lump
        .nodes
        .iter()
        .map(|id| dag.active_partials(dag.node(*id), values))
        .collect();
    let mut a = DenseMatrix::zeros(l, l);
    let mut b = DenseMatrix::zeros(l, lump.read_only.len());
    let mut tangent = vec![0.0; dag.value_count()];
    let seeds = lump.replaced.iter().chain(&lump.read_only).enumerate();
    for (col, &seed) in seeds {
        tangent.iter_mut().for_each(|t| *t = 0.0);
        tangent[seed] = 1.0;
        for (id, parts) in lump.nodes.iter().zip(&partials) {
            tangent[n + id.0] = parts.iter().map(|&(u, p)| p * tangent[u]).sum();
        }
        for (row, &p) in lump.produced.iter().enumerate() {
            if col < l {
                a.set(row, col, tangent[p]);
            } else {
                b.set(row, col - l, tangent[p]);
            }
        }
    }
    LumpLinearization { a, b }
}

/// `A⁻¹` and `−A⁻¹B`, the nontrivial blocks of the inverse lump Jacobian.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvertedLump {
    pub a_inv: DenseMatrix,
    pub neg_a_inv_b: DenseMatrix,
}

/// Inverts a lump's block Jacobian by pivoted elimination on `A`.
/// `index` labels the error.
pub fn invert_lump(lin: &LumpLinearization, index: usize) -> Result<InvertedLump> {
    let l = lin.a.rows;
    if l == 0 {
        return Ok(InvertedLump {
            a_inv: DenseMatrix::zeros(0, 0),
            neg_a_inv_b: DenseMatrix::zeros(0, lin.b.cols),
        });
    }
    let lu = lu_factor(&lin.a, LUMP_PIVOT_TOL).map_err(|pivot| AdError::SingularLump { lump: index, pivot })?;
    let a_inv = lu.inverse();
    let mut neg_a_inv_b = DenseMatrix::zeros(l, lin.b.cols);
    for j in 0..lin.b.cols {
        let col: Vec<f64> = (0..l).map(|i| lin.b.get(i, j)).collect();
        let x = lu.solve(&col);
        for i in 0..l {
            neg_a_inv_b.set(i, j, -x[i]);
        }
    }
    Ok(InvertedLump { a_inv, neg_a_inv_b })
}

fn gather(v: &[f64], slots: &[usize]) -> Vec<f64> {
    slots.iter().map(|&s| v[s]).collect()
}

/// `y += M x` or `y += Mᵀ x`.
fn accumulate(m: &DenseMatrix, transpose: bool, x: &[f64], y: &mut [f64]) {
    for i in 0..m.rows {
        for j in 0..m.cols {
            if transpose {
                y[j] += m.get(i, j) * x[i];
            } else {
                y[i] += m.get(i, j) * x[j];
            }
        }
    }
}

/// The block form of the scalar step kernels: `a → A`, `b → B`,
/// `1/a → A⁻¹`, `−b/a → −A⁻¹B`. Only the lump's replaced and read-only
/// slots are touched; read-only slots only in the transposed modes.
pub fn block_kernel(
    mode: Mode,
    lin: &LumpLinearization,
    inv: Option<&InvertedLump>,
    lump: &Lump,
    v: &mut [f64],
) {
    let vk = gather(v, &lump.replaced_slots);
    let vr = gather(v, &lump.read_only_slots);
    let l = vk.len();
    let mut new_k = vec![0.0; l];
    let mut new_r = vr.clone();
    match mode {
        Mode::Forward => {
            accumulate(&lin.a, false, &vk, &mut new_k);
            accumulate(&lin.b, false, &vr, &mut new_k);
        }
        Mode::Reverse => {
            accumulate(&lin.a, true, &vk, &mut new_k);
            accumulate(&lin.b, true, &vk, &mut new_r);
        }
        Mode::ReverseInverse => {
            let inv = inv.expect("inverse modes need the inverted blocks");
            accumulate(&inv.a_inv, false, &vk, &mut new_k);
            accumulate(&inv.neg_a_inv_b, false, &vr, &mut new_k);
        }
        Mode::ForwardInverse => {
            let inv = inv.expect("inverse modes need the inverted blocks");
            accumulate(&inv.a_inv, true, &vk, &mut new_k);
            accumulate(&inv.neg_a_inv_b, true, &vk, &mut new_r);
        }
    }
    for (&s, x) in lump.replaced_slots.iter().zip(new_k) {
        v[s] = x;
    }
    for (&s, x) in lump.read_only_slots.iter().zip(new_r) {
        v[s] = x;
    }
}

/// Runs `mode` over the greedily lumped graph, treating each lump as a
/// single macro step.
///
/// Vectors on the input side are indexed like the graph inputs and vectors
/// on the output side like the graph outputs: `Forward` and
/// `ForwardInverse` map inputs to outputs, the other two map outputs to
/// inputs.
pub fn lumped_mode_eval(dag: &Dag, x: &[f64], v: &[f64], mode: Mode) -> Result<Vec<f64>> {
    let schedule = greedy_schedule(dag)?;
    lumped_mode_eval_with(dag, &schedule, x, v, mode)
}

/// [`lumped_mode_eval`] over a caller-supplied schedule.
pub fn lumped_mode_eval_with(dag: &Dag, schedule: &LumpSchedule, x: &[f64], v: &[f64], mode: Mode) -> Result<Vec<f64>> {
    let n = dag.n_inputs();
    check_len(n, v)?;
    let values = dag.eval_values(x)?;
    let plan = plan_lumps(dag, schedule);
    let mut blocks = Vec::with_capacity(plan.lumps.len());
    for lump in &plan.lumps {
        let lin = lump_linearization(dag, lump, &values);
        let inv = if mode.is_inverse() {
            Some(invert_lump(&lin, lump.index)?)
        } else {
            None
        };
        blocks.push((lin, inv));
    }

    let mut w = vec![0.0; n];
    if mode.is_backward() {
        for (j, &s) in plan.output_slots.iter().enumerate() {
            w[s] = v[j];
        }
        for (lump, (lin, inv)) in plan.lumps.iter().zip(&blocks).rev() {
            block_kernel(mode, lin, inv.as_ref(), lump, &mut w);
        }
        Ok(w)
    } else {
        w.copy_from_slice(v);
        for (lump, (lin, inv)) in plan.lumps.iter().zip(&blocks) {
            block_kernel(mode, lin, inv.as_ref(), lump, &mut w);
        }
        Ok(plan.output_slots.iter().map(|&s| w[s]).collect())
    }
}
