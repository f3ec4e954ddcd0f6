use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::dag::{Dag, DagArg, NodeId};
use crate::error::{AdError, Result};
use crate::trace::{Instruction, Operand, Trace};

/// Largest graph accepted by [`brute_force_schedule`].
pub const BRUTE_FORCE_NODE_LIMIT: usize = 12;

/// Incremental live-width bookkeeping for a partially scheduled graph.
///
/// A value is live when it is available (a graph input or a scheduled node),
/// active, and either still has an unscheduled consumer or is an output.
#[derive(Clone)]
pub(crate) struct LiveTracker<'a> {
    dag: &'a Dag,
    // distinct argument values per node
    node_args: Vec<Vec<usize>>,
    remaining: Vec<usize>,
    is_output: Vec<bool>,
    scheduled: Vec<bool>,
    width: usize,
}

impl<'a> LiveTracker<'a> {
    pub(crate) fn new(dag: &'a Dag) -> LiveTracker<'a> {
        let nv = dag.value_count();
        let mut remaining = vec![0; nv];
        let node_args: Vec<Vec<usize>> = dag
            .nodes()
            .iter()
            .map(|node| {
                let mut vs: Vec<usize> = node.args.iter().filter_map(|a| dag.value_index(a)).collect();
                vs.sort_unstable();
                vs.dedup();
                vs
            })
            .collect();
        for vs in &node_args {
            for &v in vs {
                remaining[v] += 1;
            }
        }
        let mut is_output = vec![false; nv];
        for o in dag.outputs() {
            is_output[dag.value_index(o).unwrap()] = true;
        }
        let mut tracker = LiveTracker {
            dag,
            node_args,
            remaining,
            is_output,
            scheduled: vec![false; dag.nodes().len()],
            width: 0,
        };
        tracker.width = (0..dag.n_inputs()).filter(|&v| tracker.is_live(v)).count();
        tracker
    }

    pub(crate) fn width(&self) -> usize {
        self.width
    }

    fn available(&self, v: usize) -> bool {
        v < self.dag.n_inputs() || self.scheduled[v - self.dag.n_inputs()]
    }

    fn wanted(&self, v: usize) -> bool {
        self.remaining[v] > 0 || self.is_output[v]
    }

    pub(crate) fn is_live(&self, v: usize) -> bool {
        self.available(v) && self.dag.is_value_active(v) && self.wanted(v)
    }

    pub(crate) fn is_ready(&self, node: usize) -> bool {
        !self.scheduled[node]
            && self.dag.nodes()[node].args.iter().all(|a| match a {
                DagArg::Node(NodeId(j)) => self.scheduled[*j],
                _ => true,
            })
    }

    /// Change in live width if `node` were scheduled next.
    pub(crate) fn delta(&self, node: usize) -> isize {
        let v = self.dag.n_inputs() + node;
        let mut d = 0isize;
        if self.dag.is_value_active(v) && self.wanted(v) {
            d += 1;
        }
        for &u in &self.node_args[node] {
            if self.is_live(u) && self.remaining[u] == 1 && !self.is_output[u] {
                d -= 1;
            }
        }
        d
    }

    pub(crate) fn schedule(&mut self, node: usize) {
        let d = self.delta(node);
        for &u in &self.node_args[node] {
            self.remaining[u] -= 1;
        }
        self.scheduled[node] = true;
        self.width = (self.width as isize + d) as usize;
    }

    pub(crate) fn unschedule(&mut self, node: usize) {
        self.scheduled[node] = false;
        for &u in &self.node_args[node] {
            self.remaining[u] += 1;
        }
        let d = self.delta(node);
        self.width = (self.width as isize - d) as usize;
    }

    pub(crate) fn live_set(&self) -> Vec<usize> {
        (0..self.dag.value_count()).filter(|&v| self.is_live(v)).collect()
    }

    pub(crate) fn distinct_args(&self, node: usize) -> &[usize] {
        &self.node_args[node]
    }
}

/// A total order over the graph's nodes plus the positions (number of
/// nodes scheduled so far) at which the live active width equals `n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LumpSchedule {
    pub n: usize,
    pub order: Vec<NodeId>,
    pub cuts: Vec<usize>,
    /// Live active width after each prefix of `order`, `order.len() + 1`
    /// entries.
    pub widths: Vec<usize>,
}

impl LumpSchedule {
    /// The schedule induced by a caller-chosen topological order.
    pub fn from_order(dag: &Dag, order: Vec<NodeId>) -> Result<LumpSchedule> {
        let n = check_square(dag)?;
        let count = dag.nodes().len();
        if order.len() != count {
            return Err(AdError::InvalidProgram(format!(
                "order has {} nodes, graph has {count}",
                order.len()
            )));
        }
        let mut tracker = LiveTracker::new(dag);
        underflow_at(0, tracker.width(), n)?;
        let mut widths = vec![tracker.width()];
        for (pos, id) in order.iter().enumerate() {
            if id.0 >= count || !tracker.is_ready(id.0) {
                return Err(AdError::InvalidProgram(format!(
                    "position {pos}: {id} is scheduled before its arguments or twice"
                )));
            }
            tracker.schedule(id.0);
            widths.push(tracker.width());
            underflow_at(pos + 1, tracker.width(), n)?;
        }
        if widths.last() != Some(&n) {
            return Err(AdError::WidthUnderflow {
                position: count,
                width: *widths.last().unwrap(),
                n,
            });
        }
        let cuts = (0..widths.len()).filter(|&p| widths[p] == n).collect();
        Ok(LumpSchedule { n, order, cuts, widths })
    }

    /// Node ranges of consecutive cuts.
    pub fn lumps(&self) -> impl Iterator<Item = &[NodeId]> + '_ {
        self.cuts.windows(2).map(|w| &self.order[w[0]..w[1]])
    }

    pub fn lump_count(&self) -> usize {
        self.cuts.len().saturating_sub(1)
    }

    /// Re-derives the widths from `dag` and checks topological order and
    /// cut placement. Returns a description of the first problem.
    pub fn validate(&self, dag: &Dag) -> std::result::Result<(), String> {
        let count = dag.nodes().len();
        if self.order.len() != count {
            return Err(format!("order has {} nodes, graph has {count}", self.order.len()));
        }
        let mut tracker = LiveTracker::new(dag);
        let mut widths = vec![tracker.width()];
        for (pos, id) in self.order.iter().enumerate() {
            if id.0 >= count || !tracker.is_ready(id.0) {
                return Err(format!("position {pos}: {id} is scheduled before its arguments or twice"));
            }
            tracker.schedule(id.0);
            widths.push(tracker.width());
        }
        if widths != self.widths {
            return Err("recorded widths disagree with the graph".to_string());
        }
        let expected: Vec<usize> = (0..widths.len()).filter(|&p| widths[p] == self.n).collect();
        if expected != self.cuts {
            return Err(format!("cuts {:?} differ from width-n positions {:?}", self.cuts, expected));
        }
        if self.cuts.first() != Some(&0) || self.cuts.last() != Some(&count) {
            return Err("schedule does not start and end on a cut".to_string());
        }
        Ok(())
    }
}

fn check_square(dag: &Dag) -> Result<usize> {
    let n = dag.n_inputs();
    if dag.outputs().len() != n {
        return Err(AdError::InvalidProgram(format!(
            "lumpification needs as many outputs as inputs ({} vs {n})",
            dag.outputs().len()
        )));
    }
    Ok(n)
}

fn underflow_at(position: usize, width: usize, n: usize) -> Result<()> {
    if width < n {
        Err(AdError::WidthUnderflow { position, width, n })
    } else {
        Ok(())
    }
}

/// Greedy topological sort that cuts as often as it can.
///
/// Among the ready nodes it prefers one that lowers the live width, then one
/// that keeps it, then the smallest increase; ties go to the lowest id.
pub fn greedy_schedule(dag: &Dag) -> Result<LumpSchedule> {
    let n = check_square(dag)?;
    let count = dag.nodes().len();
    let mut tracker = LiveTracker::new(dag);
    underflow_at(0, tracker.width(), n)?;
    let mut order = Vec::with_capacity(count);
    let mut widths = vec![tracker.width()];
    let mut cuts = vec![0];
    for pos in 1..=count {
        let next = (0..count)
            .filter(|&i| tracker.is_ready(i))
            .min_by_key(|&i| {
                let d = tracker.delta(i);
                match d.cmp(&0) {
                    Ordering::Less => (0, 0, i),
                    Ordering::Equal => (1, 0, i),
                    Ordering::Greater => (2, d, i),
                }
            })
            .expect("an acyclic graph always has a ready node");
        tracker.schedule(next);
        order.push(NodeId(next));
        widths.push(tracker.width());
        underflow_at(pos, tracker.width(), n)?;
        if tracker.width() == n {
            cuts.push(pos);
        }
    }
    // Final width counts distinct live outputs; anything else is singular.
    if cuts.last() != Some(&count) {
        return Err(AdError::WidthUnderflow {
            position: count,
            width: tracker.width(),
            n,
        });
    }
    Ok(LumpSchedule { n, order, cuts, widths })
}

/// What [`brute_force_schedule`] minimizes, over all lumps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Largest node count in a lump.
    Size,
    /// Largest live width inside a lump.
    Width,
    /// Largest `l` (outputs replaced), then largest `k` (values read).
    Lk,
}

impl Objective {
    pub const ALL: [Objective; 3] = [Objective::Size, Objective::Width, Objective::Lk];

    pub fn name(self) -> &'static str {
        match self {
            Objective::Size => "size",
            Objective::Width => "width",
            Objective::Lk => "lk",
        }
    }

    pub fn score(self, stats: &ScheduleStats) -> (usize, usize) {
        match self {
            Objective::Size => (stats.max_lump_size, 0),
            Objective::Width => (stats.max_lump_width, 0),
            Objective::Lk => (stats.max_l, stats.max_k),
        }
    }
}

/// Per-lump shape: `l` values replaced, `k` values read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LumpShape {
    pub size: usize,
    pub max_width: usize,
    pub l: usize,
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
pub struct ScheduleStats {
    pub lump_count: usize,
    pub max_lump_size: usize,
    pub max_lump_width: usize,
    pub max_l: usize,
    pub max_k: usize,
}

impl ScheduleStats {
    fn absorb(&mut self, shape: &LumpShape) {
        self.lump_count += 1;
        self.max_lump_size = self.max_lump_size.max(shape.size);
        self.max_lump_width = self.max_lump_width.max(shape.max_width);
        self.max_l = self.max_l.max(shape.l);
        self.max_k = self.max_k.max(shape.k);
    }
}

/// Shape of a lump given the live sets at its bounding cuts.
fn lump_shape(tracker: &LiveTracker, nodes: &[NodeId], start_live: &[usize], end_live: &[usize], max_width: usize) -> LumpShape {
    let produced = end_live.iter().filter(|v| !start_live.contains(v)).count();
    let readonly = end_live
        .iter()
        .filter(|v| start_live.contains(v))
        .filter(|v| nodes.iter().any(|id| tracker.distinct_args(id.0).contains(v)))
        .count();
    LumpShape {
        size: nodes.len(),
        max_width,
        l: produced,
        k: produced + readonly,
    }
}

/// Shapes of every lump of `schedule`.
pub fn lump_shapes(dag: &Dag, schedule: &LumpSchedule) -> Vec<LumpShape> {
    let mut tracker = LiveTracker::new(dag);
    let mut shapes = Vec::with_capacity(schedule.lump_count());
    let mut start_live = tracker.live_set();
    for w in schedule.cuts.windows(2) {
        let nodes = &schedule.order[w[0]..w[1]];
        for id in nodes {
            tracker.schedule(id.0);
        }
        let end_live = tracker.live_set();
        let max_width = schedule.widths[w[0]..=w[1]].iter().copied().max().unwrap();
        shapes.push(lump_shape(&tracker, nodes, &start_live, &end_live, max_width));
        start_live = end_live;
    }
    shapes
}

pub fn schedule_stats(dag: &Dag, schedule: &LumpSchedule) -> ScheduleStats {
    let mut stats = ScheduleStats::default();
    for shape in lump_shapes(dag, schedule) {
        stats.absorb(&shape);
    }
    stats
}

struct Search<'a> {
    tracker: LiveTracker<'a>,
    objective: Objective,
    n: usize,
    count: usize,
    order: Vec<NodeId>,
    widths: Vec<usize>,
    cuts: Vec<usize>,
    cut_live: Vec<Vec<usize>>,
    closed: Vec<ScheduleStats>,
    best: Option<((usize, usize), Vec<NodeId>)>,
    underflow: Option<AdError>,
}

impl Search<'_> {
    /// Lower bound on the final score from what is already fixed.
    fn partial_score(&self) -> (usize, usize) {
        let closed = self.closed.last().copied().unwrap_or_default();
        let start = *self.cuts.last().unwrap();
        let open_size = self.order.len() - start;
        let open_width = self.widths[start..].iter().copied().max().unwrap();
        match self.objective {
            Objective::Size => (closed.max_lump_size.max(open_size), 0),
            Objective::Width => (closed.max_lump_width.max(open_width), 0),
            Objective::Lk => (closed.max_l, closed.max_k),
        }
    }

    fn dfs(&mut self) {
        if self.underflow.is_some() {
            return;
        }
        if let Some((best, _)) = &self.best {
            if self.partial_score() >= *best {
                return;
            }
        }
        if self.order.len() == self.count {
            let score = self.objective.score(self.closed.last().unwrap());
            self.best = Some((score, self.order.clone()));
            return;
        }
        for node in 0..self.count {
            if !self.tracker.is_ready(node) {
                continue;
            }
            self.tracker.schedule(node);
            self.order.push(NodeId(node));
            let width = self.tracker.width();
            self.widths.push(width);
            let pos = self.order.len();
            if width < self.n {
                self.underflow = Some(AdError::WidthUnderflow {
                    position: pos,
                    width,
                    n: self.n,
                });
            } else if width == self.n {
                let start = *self.cuts.last().unwrap();
                let live = self.tracker.live_set();
                let max_width = self.widths[start..].iter().copied().max().unwrap();
                let shape = lump_shape(
                    &self.tracker,
                    &self.order[start..],
                    self.cut_live.last().unwrap(),
                    &live,
                    max_width,
                );
                let mut stats = self.closed.last().copied().unwrap_or_default();
                stats.absorb(&shape);
                self.cuts.push(pos);
                self.cut_live.push(live);
                self.closed.push(stats);
                self.dfs();
                self.cuts.pop();
                self.cut_live.pop();
                self.closed.pop();
            } else if pos < self.count {
                self.dfs();
            }
            self.widths.pop();
            self.order.pop();
            self.tracker.unschedule(node);
            if self.underflow.is_some() {
                return;
            }
        }
    }
}

/// Exhaustive search over topological orders for the schedule minimizing
/// `objective`. Ties keep the lexicographically first order.
pub fn brute_force_schedule(dag: &Dag, objective: Objective) -> Result<LumpSchedule> {
    let n = check_square(dag)?;
    let count = dag.nodes().len();
    if count > BRUTE_FORCE_NODE_LIMIT {
        return Err(AdError::SizeLimit {
            nodes: count,
            limit: BRUTE_FORCE_NODE_LIMIT,
        });
    }
    let tracker = LiveTracker::new(dag);
    underflow_at(0, tracker.width(), n)?;
    let start_live = tracker.live_set();
    let mut search = Search {
        widths: vec![tracker.width()],
        tracker,
        objective,
        n,
        count,
        order: Vec::with_capacity(count),
        cuts: vec![0],
        cut_live: vec![start_live],
        closed: Vec::new(),
        best: None,
        underflow: None,
    };
    if count == 0 {
        return Ok(LumpSchedule {
            n,
            order: Vec::new(),
            cuts: vec![0],
            widths: search.widths,
        });
    }
    search.dfs();
    if let Some(err) = search.underflow {
        return Err(err);
    }
    let (_, order) = search.best.ok_or(AdError::WidthUnderflow {
        position: count,
        width: 0,
        n,
    })?;
    LumpSchedule::from_order(dag, order)
}

/// Lowers a scheduled graph to a register trace.
///
/// Inputs occupy slots `0..n`. Each node writes into the slot of an argument
/// that dies at that node when there is one, otherwise into the lowest free
/// slot, so the trace is in overwrite form exactly where the schedule keeps
/// constant width.
pub fn lower_dag(dag: &Dag, schedule: &LumpSchedule) -> Result<Trace> {
    let n = dag.n_inputs();
    let nv = dag.value_count();
    let mut remaining = vec![0usize; nv];
    for node in dag.nodes() {
        let mut seen = Vec::new();
        for v in node.args.iter().filter_map(|a| dag.value_index(a)) {
            if seen.contains(&v) {
                return Err(AdError::InvalidProgram(format!(
                    "{} reads the same value twice; it cannot be lowered to distinct slots",
                    node.id
                )));
            }
            seen.push(v);
            remaining[v] += 1;
        }
    }
    let mut is_output = vec![false; nv];
    for o in dag.outputs() {
        is_output[dag.value_index(o).unwrap()] = true;
    }
    let dead = |v: usize, remaining: &[usize]| remaining[v] == 0 && !is_output[v];

    let mut slot_of = vec![usize::MAX; nv];
    let mut free: Vec<usize> = Vec::new();
    let mut slot_count = n;
    for k in 0..n {
        slot_of[k] = k;
        if dead(k, &remaining) {
            free.push(k);
        }
    }

    let mut instrs = Vec::with_capacity(dag.nodes().len());
    for id in &schedule.order {
        let node = dag.node(*id);
        let v = n + id.0;
        let arg_vals: Vec<Option<usize>> = node.args.iter().map(|a| dag.value_index(a)).collect();
        let mut dying = Vec::new();
        for u in arg_vals.iter().flatten() {
            remaining[*u] -= 1;
            if dead(*u, &remaining) {
                dying.push(*u);
            }
        }
        let reuse = dying
            .iter()
            .copied()
            .find(|&u| dag.is_value_active(u))
            .or_else(|| dying.first().copied());
        let dest = match reuse {
            Some(u) => slot_of[u],
            None => {
                free.sort_unstable();
                if free.is_empty() {
                    slot_count += 1;
                    slot_count - 1
                } else {
                    free.remove(0)
                }
            }
        };
        for &u in &dying {
            if Some(u) != reuse {
                free.push(slot_of[u]);
            }
        }
        let args = node
            .args
            .iter()
            .map(|a| match dag.value_index(a) {
                Some(u) => Operand::slot(slot_of[u]),
                None => match a {
                    DagArg::Literal(c) => Operand::Literal(*c),
                    _ => unreachable!(),
                },
            })
            .collect();
        instrs.push(Instruction::new(node.op, dest, args));
        slot_of[v] = dest;
        if dead(v, &remaining) {
            free.push(dest);
        }
    }
    let outputs = dag
        .outputs()
        .iter()
        .map(|o| slot_of[dag.value_index(o).unwrap()])
        .collect();
    Trace::new_general(slot_count, instrs, (0..n).collect(), outputs)
}
