//! LP-based branch-and-bound.
//!
//! Each node is the continuous relaxation with some binaries fixed. A node
//! is closed when its relaxation is integral, infeasible, or no better than
//! the incumbent; the search stops once the relative gap between incumbent
//! and global bound drops below the tolerance. Nodes are warm-started from
//! whatever tableau the worker holds, by rewriting binary bounds.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::{Condvar, Mutex};
use std::time::Instant;

use log::{debug, warn};

use super::lp::{DualSimplex, LpProblem, LpStatus};
use super::propagate::Propagator;
use super::{Branching, NodeSelection, Solution, SolveOptions, SolveStats, SolveStatus};
use crate::milp::MilpModel;

const INT_TOL: f64 = 1e-6;
const ABS_GAP: f64 = 1e-9;
const INCUMBENT_FEAS_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
struct Node {
    id: u64,
    bound: f64,
    /// (binary position, value) pairs accumulated from the root.
    fixings: Vec<(u32, bool)>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // max-heap: the best node (lowest bound, then oldest) compares greatest
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.id.cmp(&self.id))
    }
}

enum OpenSet {
    /// Best-bound heap; until the first incumbent exists, new nodes sit on a
    /// LIFO stack instead so the search keeps diving.
    Best {
        heap: BinaryHeap<Node>,
        stack: Vec<Node>,
        diving: bool,
    },
    Depth(Vec<Node>),
}

impl OpenSet {
    fn push(&mut self, n: Node) {
        match self {
            OpenSet::Best { stack, diving: true, .. } => stack.push(n),
            OpenSet::Best { heap, .. } => heap.push(n),
            OpenSet::Depth(s) => s.push(n),
        }
    }

    fn pop(&mut self) -> Option<Node> {
        match self {
            OpenSet::Best { heap, stack, .. } => stack.pop().or_else(|| heap.pop()),
            OpenSet::Depth(s) => s.pop(),
        }
    }

    /// Moves diving nodes into the heap once an incumbent exists.
    fn settle(&mut self) {
        if let OpenSet::Best { heap, stack, diving } = self {
            heap.extend(stack.drain(..));
            *diving = false;
        }
    }

    fn min_bound(&self) -> f64 {
        match self {
            OpenSet::Best { heap, stack, .. } => {
                let h = heap.peek().map_or(f64::INFINITY, |n| n.bound);
                stack.iter().map(|n| n.bound).fold(h, f64::min)
            }
            OpenSet::Depth(s) => s.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min),
        }
    }

    fn is_empty(&self) -> bool {
        match self {
            OpenSet::Best { heap, stack, .. } => heap.is_empty() && stack.is_empty(),
            OpenSet::Depth(s) => s.is_empty(),
        }
    }

    /// Drops nodes that can no longer beat `cutoff`.
    fn prune(&mut self, cutoff: f64) {
        match self {
            OpenSet::Best { heap, stack, .. } => {
                heap.retain(|n| n.bound < cutoff);
                stack.retain(|n| n.bound < cutoff);
            }
            OpenSet::Depth(s) => s.retain(|n| n.bound < cutoff),
        }
    }
}

struct Shared {
    open: OpenSet,
    incumbent: Option<(f64, Vec<f64>)>,
    /// Bound of the node each worker is currently processing.
    in_flight: Vec<Option<f64>>,
    next_id: u64,
    nodes: u64,
    lp_solves: u64,
    stop: bool,
    timed_out: bool,
    node_limited: bool,
    bound_trace: Vec<(u64, f64, f64)>,
    last_global: f64,
}

impl Shared {
    fn global_bound(&self) -> f64 {
        self.in_flight
            .iter()
            .flatten()
            .copied()
            .fold(self.open.min_bound(), f64::min)
    }

    fn cutoff(&self, gap: f64) -> f64 {
        match &self.incumbent {
            Some((obj, _)) => obj - (gap * obj.abs()).max(ABS_GAP),
            None => f64::INFINITY,
        }
    }

    fn idle(&self) -> bool {
        self.in_flight.iter().all(Option::is_none)
    }
}

struct Search<'a> {
    model: &'a MilpModel,
    problem: LpProblem,
    propagator: Propagator,
    binaries: Vec<usize>,
    options: &'a SolveOptions,
    start: Instant,
    state: Mutex<Shared>,
    wake: Condvar,
}

enum NodeOutcome {
    /// Closed by bound propagation, no LP solved.
    Propagated,
    Infeasible,
    Pruned,
    Integral(f64, Vec<f64>),
    Branch { obj: f64, var: u32, value: f64 },
}

/// Per-worker LP and the column bounds currently loaded into it.
struct Worker {
    lp: DualSimplex,
    lb: Vec<f64>,
    ub: Vec<f64>,
}

impl Worker {
    fn new(lp: DualSimplex, problem: &LpProblem) -> Self {
        Self {
            lp,
            lb: problem.lb.clone(),
            ub: problem.ub.clone(),
        }
    }
}

impl<'a> Search<'a> {
    /// Node bounds: root bounds plus the node's fixings, propagated.
    fn node_bounds(&self, node: &Node) -> Option<(Vec<f64>, Vec<f64>)> {
        let mut lb = self.problem.lb.clone();
        let mut ub = self.problem.ub.clone();
        let mut seeds = Vec::with_capacity(node.fixings.len());
        for &(b, v) in &node.fixings {
            let j = self.binaries[b as usize];
            let v = if v { 1.0 } else { 0.0 };
            lb[j] = v;
            ub[j] = v;
            seeds.push(j);
        }
        self.propagator.propagate(&mut lb, &mut ub, &seeds).ok()?;
        Some((lb, ub))
    }

    fn load(&self, w: &mut Worker, lb: &[f64], ub: &[f64]) {
        for j in 0..lb.len() {
            if w.lb[j] != lb[j] || w.ub[j] != ub[j] {
                w.lp.set_bounds(j, lb[j], ub[j]);
            }
        }
        w.lb.copy_from_slice(lb);
        w.ub.copy_from_slice(ub);
        w.lp.recheck_bounds();
    }

    fn solve_node(&self, w: &mut Worker, node: &Node, lb: &[f64], ub: &[f64]) -> LpStatus {
        self.load(w, lb, ub);
        let mut status = w.lp.solve();
        if status == LpStatus::IterationLimit {
            w.lp.reinvert();
            status = w.lp.solve();
        }
        if status == LpStatus::IterationLimit {
            warn!("node {}: LP iteration limit, rebuilding from scratch", node.id);
            *w = Worker::new(DualSimplex::new(&self.problem, self.options.exec), &self.problem);
            self.load(w, lb, ub);
            status = w.lp.solve();
        }
        status
    }

    fn evaluate(&self, w: &mut Worker, node: &Node, cutoff: f64) -> NodeOutcome {
        let Some((lb, ub)) = self.node_bounds(node) else {
            return NodeOutcome::Propagated;
        };
        match self.solve_node(w, node, &lb, &ub) {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => return NodeOutcome::Infeasible,
            LpStatus::IterationLimit => {
                warn!("node {}: LP failed to converge; treating as infeasible", node.id);
                return NodeOutcome::Infeasible;
            }
        }
        let obj = w.lp.objective();
        if obj >= cutoff {
            return NodeOutcome::Pruned;
        }
        let x = w.lp.values();
        let pick = match self.options.branching {
            Branching::MostFractional => self
                .binaries
                .iter()
                .enumerate()
                .filter(|&(_, &j)| (x[j] - x[j].round()).abs() > INT_TOL)
                .min_by(|a, b| {
                    let fa = (x[*a.1] - 0.5).abs();
                    let fb = (x[*b.1] - 0.5).abs();
                    fa.total_cmp(&fb).then(a.0.cmp(&b.0))
                }),
            Branching::LowestIndex => self
                .binaries
                .iter()
                .enumerate()
                .find(|&(_, &j)| (x[j] - x[j].round()).abs() > INT_TOL),
        };
        match pick {
            Some((b, &j)) => NodeOutcome::Branch {
                obj,
                var: b as u32,
                value: x[j],
            },
            None => NodeOutcome::Integral(obj, x.to_vec()),
        }
    }

    fn run_worker(&self, wid: usize, mut w: Worker) {
        let gap = self.options.mip_gap;
        let mut plunge: Option<Node> = None;
        loop {
            let node = match plunge.take() {
                Some(n) => n,
                None => {
                    let mut s = self.state.lock().unwrap();
                    loop {
                        if s.stop {
                            return;
                        }
                        if let Some(n) = s.open.pop() {
                            s.in_flight[wid] = Some(n.bound);
                            break n;
                        }
                        if s.idle() {
                            s.stop = true;
                            self.wake.notify_all();
                            return;
                        }
                        s = self.wake.wait(s).unwrap();
                    }
                }
            };
            let cutoff = {
                let mut s = self.state.lock().unwrap();
                if self.start.elapsed().as_secs_f64() > self.options.time_limit_s {
                    s.stop = true;
                    s.timed_out = true;
                    s.in_flight[wid] = None;
                    self.wake.notify_all();
                    return;
                }
                if let Some(limit) = self.options.node_limit {
                    if s.nodes >= limit {
                        s.stop = true;
                        s.node_limited = true;
                        s.in_flight[wid] = None;
                        self.wake.notify_all();
                        return;
                    }
                }
                s.cutoff(gap)
            };
            if node.bound >= cutoff {
                let mut s = self.state.lock().unwrap();
                s.in_flight[wid] = None;
                self.wake.notify_all();
                continue;
            }
            let outcome = self.evaluate(&mut w, &node, cutoff);

            let mut s = self.state.lock().unwrap();
            if !matches!(outcome, NodeOutcome::Propagated) {
                s.nodes += 1;
                s.lp_solves += 1;
            }
            match outcome {
                NodeOutcome::Propagated | NodeOutcome::Infeasible | NodeOutcome::Pruned => {}
                NodeOutcome::Integral(obj, x) => {
                    let viol = self.model.max_violation(&x);
                    if viol > INCUMBENT_FEAS_TOL {
                        warn!("node {}: integral LP point violates rows by {viol:e}", node.id);
                    } else if s.incumbent.as_ref().is_none_or(|(best, _)| obj < *best) {
                        debug!("node {}: incumbent {obj}", node.id);
                        s.incumbent = Some((obj, x));
                        let c = s.cutoff(gap);
                        s.open.settle();
                        s.open.prune(c);
                    }
                }
                NodeOutcome::Branch { obj, var, value } => {
                    let mk = |s: &mut Shared, v: bool| {
                        let mut fixings = node.fixings.clone();
                        fixings.push((var, v));
                        let id = s.next_id;
                        s.next_id += 1;
                        Node {
                            id,
                            bound: obj,
                            fixings,
                        }
                    };
                    let up_first = value >= 0.5;
                    let first = mk(&mut s, up_first);
                    let second = mk(&mut s, !up_first);
                    let dive = match self.options.node_selection {
                        NodeSelection::DepthFirst => true,
                        NodeSelection::BestBound => match &s.incumbent {
                            None => true,
                            Some((inc, _)) => {
                                let g = s.global_bound();
                                obj <= g + 0.3 * (inc - g)
                            }
                        },
                    };
                    s.open.push(second);
                    if dive {
                        s.in_flight[wid] = Some(obj);
                        plunge = Some(first);
                    } else {
                        s.open.push(first);
                    }
                    self.wake.notify_all();
                }
            }
            if plunge.is_none() {
                s.in_flight[wid] = None;
            }
            let g = s.global_bound();
            let inc = s.incumbent.as_ref().map_or(f64::INFINITY, |(o, _)| *o);
            if g.is_finite() && g > s.last_global {
                s.last_global = g;
            }
            let n = s.nodes;
            if g.is_finite() {
                s.bound_trace.push((n, g, inc));
            }
            if inc.is_finite() && (inc - g) <= (gap * inc.abs()).max(ABS_GAP) {
                s.stop = true;
                self.wake.notify_all();
                return;
            }
            if s.open.is_empty() && s.idle() && plunge.is_none() {
                s.stop = true;
                self.wake.notify_all();
                return;
            }
        }
    }
}

/// Solves `model` (no presolve) by branch-and-bound over its binaries.
pub fn branch_and_bound(model: &MilpModel, options: &SolveOptions) -> (Solution, SolveStats) {
    let start = Instant::now();
    let problem = LpProblem::from_model(model);
    let binaries: Vec<usize> = model
        .vars()
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_binary())
        .map(|(j, _)| j)
        .collect();
    let workers = if options.deterministic {
        1
    } else {
        options.workers.max(1)
    };
    let open = match options.node_selection {
        NodeSelection::BestBound => OpenSet::Best {
            heap: BinaryHeap::new(),
            stack: Vec::new(),
            diving: true,
        },
        NodeSelection::DepthFirst => OpenSet::Depth(Vec::new()),
    };
    let search = Search {
        model,
        binaries,
        options,
        start,
        state: Mutex::new(Shared {
            open,
            incumbent: None,
            in_flight: vec![None; workers],
            next_id: 1,
            nodes: 0,
            lp_solves: 0,
            stop: false,
            timed_out: false,
            node_limited: false,
            bound_trace: Vec::new(),
            last_global: f64::NEG_INFINITY,
        }),
        wake: Condvar::new(),
        propagator: Propagator::new(model),
        problem,
    };
    let root_lp = DualSimplex::new(&search.problem, options.exec);
    search.state.lock().unwrap().open.push(Node {
        id: 0,
        bound: f64::NEG_INFINITY,
        fixings: Vec::new(),
    });
    let fresh = |lp: DualSimplex| Worker::new(lp, &search.problem);
    if workers == 1 {
        search.run_worker(0, fresh(root_lp));
    } else {
        std::thread::scope(|scope| {
            for wid in 0..workers {
                let w = fresh(root_lp.clone());
                let search = &search;
                scope.spawn(move || search.run_worker(wid, w));
            }
        });
    }

    let s = search.state.into_inner().unwrap();
    let wall = start.elapsed().as_secs_f64();
    let global = s.global_bound();
    let (status, values, objective, gap) = match s.incumbent {
        Some((obj, x)) => {
            let bound = if s.timed_out || s.node_limited {
                global.min(obj)
            } else {
                // search finished or gap closed: bound is the larger of the
                // remaining open bound and the last recorded global bound
                s.last_global.max(global.min(obj)).min(obj)
            };
            let gap = relative_gap(obj, bound);
            let status = if s.timed_out {
                SolveStatus::Timeout
            } else if s.node_limited {
                SolveStatus::Feasible { gap }
            } else {
                SolveStatus::Optimal
            };
            (status, x, obj, gap)
        }
        None => {
            // a search cut short has not proven infeasibility
            let status = if s.timed_out || s.node_limited {
                SolveStatus::Timeout
            } else {
                SolveStatus::Infeasible
            };
            (status, Vec::new(), f64::INFINITY, f64::INFINITY)
        }
    };
    let stats = SolveStats {
        nodes: s.nodes,
        lp_solves: s.lp_solves,
        presolved_binaries: search.binaries.len(),
        wall_time_s: wall,
        gap,
        status: status.label().to_string(),
        bound_trace: s.bound_trace,
    };
    (
        Solution {
            values,
            objective,
            status,
        },
        stats,
    )
}

pub fn relative_gap(incumbent: f64, bound: f64) -> f64 {
    let diff = (incumbent - bound).max(0.0);
    if diff <= ABS_GAP {
        0.0
    } else {
        diff / incumbent.abs().max(1e-10)
    }
}
