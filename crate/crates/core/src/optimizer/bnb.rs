//! Depth-first branch-and-bound over flow-to-switch assignments.
//!
//! Flows are visited in ascending order of their capacity weight. At each
//! flow the search first tries every on-path switch that still fits (least
//! utilized first, then lowest switch id) and finally the skip branch.
//!
//! Two rules prune the tree:
//!
//! * Bound: the remaining flows cannot add more than the number of their
//!   smallest weights that fit into the summed residual capacity, nor more
//!   than `Σ_s ⌊residual_s / w_min⌋`.
//! * Exchange: once flow `f` is skipped, a later flow `g` that weighs at least
//!   as much as `f` in every capacity dimension may not use a switch on `f`'s
//!   path. Any such solution is matched by one that samples `f` there instead.

use std::cmp::Ordering;
use std::time::{Duration, Instant};

use crate::model::Network;

/// Capacity bookkeeping for one formulation.
pub(crate) trait CapacityModel {
    /// Lower bound on the capacity a flow consumes. Search order key.
    fn weight(&self, flow: usize) -> f64;
    /// Secondary order key.
    fn tiebreak(&self, _flow: usize) -> f64 {
        0.0
    }
    fn fits(&self, switch: usize, flow: usize) -> bool;
    fn add(&mut self, switch: usize, flow: usize);
    fn remove(&mut self, switch: usize, flow: usize);
    /// Capacity left before the switch constraint binds.
    fn residual(&self, switch: usize) -> f64;
    fn utilization(&self, switch: usize) -> f64;
    /// Whether every flow dominates all flows before it in search order.
    fn ordered_dominance(&self) -> bool;
    fn dominates(&self, later: usize, earlier: usize) -> bool;
}

pub(crate) struct Limits {
    pub node_limit: u64,
    pub time_limit: Duration,
}

pub(crate) struct Outcome {
    pub assignment: Vec<Option<usize>>,
    pub objective: usize,
    pub optimal: bool,
    pub nodes: u64,
}

// Bound slack so that rounding drift can only loosen the bound.
const BOUND_SLACK: f64 = 1e-9;
// Above this many switches the per-switch bound costs more than it prunes.
const PER_SWITCH_BOUND_MAX: usize = 256;
const CLOCK_EVERY: u64 = 1024;

#[derive(Clone, Copy)]
enum Applied {
    None,
    Switch(usize),
    Skip,
}

struct Frame {
    depth: usize,
    start: usize,
    end: usize,
    next: usize,
    skip_done: bool,
    applied: Applied,
}

struct Search<'a, M> {
    net: &'a Network,
    model: M,
    order: Vec<usize>,
    prefix: Vec<f64>,
    rank: Vec<usize>,
    ordered: bool,
    closed: Vec<u32>,
    closers: Vec<Vec<usize>>,
    open_residual: f64,
    assign: Vec<Option<usize>>,
    count: usize,
    best: usize,
    best_assign: Vec<Option<usize>>,
}

impl<'a, M: CapacityModel> Search<'a, M> {
    fn new(net: &'a Network, model: M) -> Self {
        let n = net.num_flows();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            model
                .weight(a)
                .total_cmp(&model.weight(b))
                .then(model.tiebreak(a).total_cmp(&model.tiebreak(b)))
                .then(a.cmp(&b))
        });
        let mut prefix = Vec::with_capacity(n + 1);
        prefix.push(0.0);
        for &f in &order {
            let last = *prefix.last().unwrap();
            prefix.push(last + model.weight(f).max(0.0));
        }

        let mut by_id: Vec<usize> = (0..net.num_switches()).collect();
        by_id.sort_by(|&a, &b| net.switches()[a].id.cmp(&net.switches()[b].id));
        let mut rank = vec![0; by_id.len()];
        for (r, s) in by_id.into_iter().enumerate() {
            rank[s] = r;
        }

        let ordered = model.ordered_dominance();
        let open_residual = (0..net.num_switches())
            .map(|s| model.residual(s).max(0.0))
            .sum();
        Self {
            net,
            order,
            prefix,
            rank,
            ordered,
            closed: vec![0; net.num_switches()],
            closers: if ordered {
                Vec::new()
            } else {
                vec![Vec::new(); net.num_switches()]
            },
            open_residual,
            assign: vec![None; n],
            count: 0,
            best: 0,
            best_assign: vec![None; n],
            model,
        }
    }

    /// Whether `s` contributes residual to the bound.
    fn counted(&self, s: usize) -> bool {
        !self.ordered || self.closed[s] == 0
    }

    fn usable(&self, s: usize, f: usize) -> bool {
        if self.ordered {
            self.closed[s] == 0
        } else {
            self.closers[s].iter().all(|&g| !self.model.dominates(f, g))
        }
    }

    fn apply(&mut self, s: usize, f: usize) {
        let counted = self.counted(s);
        if counted {
            self.open_residual -= self.model.residual(s).max(0.0);
        }
        self.model.add(s, f);
        if counted {
            self.open_residual += self.model.residual(s).max(0.0);
        }
        self.assign[f] = Some(s);
        self.count += 1;
    }

    fn undo(&mut self, s: usize, f: usize) {
        let counted = self.counted(s);
        if counted {
            self.open_residual -= self.model.residual(s).max(0.0);
        }
        self.model.remove(s, f);
        if counted {
            self.open_residual += self.model.residual(s).max(0.0);
        }
        self.assign[f] = None;
        self.count -= 1;
    }

    fn close(&mut self, f: usize) {
        for i in 0..self.net.path(f).len() {
            let s = self.net.path(f)[i];
            if self.ordered {
                if self.closed[s] == 0 {
                    self.open_residual -= self.model.residual(s).max(0.0);
                }
                self.closed[s] += 1;
            } else {
                self.closers[s].push(f);
            }
        }
    }

    fn reopen(&mut self, f: usize) {
        for i in 0..self.net.path(f).len() {
            let s = self.net.path(f)[i];
            if self.ordered {
                self.closed[s] -= 1;
                if self.closed[s] == 0 {
                    self.open_residual += self.model.residual(s).max(0.0);
                }
            } else {
                self.closers[s].pop();
            }
        }
    }

    /// Upper bound on how many of the flows at `depth..` can still be admitted.
    fn bound(&self, depth: usize) -> usize {
        let n = self.order.len();
        if depth >= n {
            return 0;
        }
        let budget = self.open_residual.max(0.0) * (1.0 + BOUND_SLACK) + BOUND_SLACK;
        let base = self.prefix[depth];
        let by_sum = self.prefix[depth + 1..].partition_point(|&p| p - base <= budget);
        if self.count + by_sum <= self.best || self.net.num_switches() > PER_SWITCH_BOUND_MAX {
            return by_sum;
        }
        let w_min = self.model.weight(self.order[depth]);
        if w_min <= 0.0 {
            return by_sum;
        }
        let mut by_switch = 0usize;
        for s in 0..self.net.num_switches() {
            if self.counted(s) {
                let r = self.model.residual(s).max(0.0) * (1.0 + BOUND_SLACK) + BOUND_SLACK;
                by_switch = by_switch.saturating_add((r / w_min).floor() as usize);
                if by_switch >= by_sum {
                    return by_sum;
                }
            }
        }
        by_switch
    }

    fn push_candidates(&self, f: usize, arena: &mut Vec<usize>) {
        let start = arena.len();
        for &s in self.net.path(f) {
            if self.usable(s, f) && self.model.fits(s, f) {
                arena.push(s);
            }
        }
        arena[start..].sort_by(|&a, &b| {
            self.model
                .utilization(a)
                .partial_cmp(&self.model.utilization(b))
                .unwrap_or(Ordering::Equal)
                .then(self.rank[a].cmp(&self.rank[b]))
        });
    }
}

pub(crate) fn branch_and_bound<M: CapacityModel>(
    net: &Network,
    model: M,
    limits: &Limits,
) -> Outcome {
    let started = Instant::now();
    let n = net.num_flows();
    let mut search = Search::new(net, model);
    let root_bound = search.bound(0).min(n);

    let mut stack: Vec<Frame> = Vec::with_capacity(n + 1);
    let mut arena: Vec<usize> = Vec::new();
    let mut nodes = 0u64;
    let mut aborted = false;
    let mut enter = Some(0usize);

    loop {
        if let Some(depth) = enter.take() {
            nodes += 1;
            if nodes > limits.node_limit
                || (nodes.is_multiple_of(CLOCK_EVERY) && started.elapsed() > limits.time_limit)
            {
                aborted = true;
                break;
            }
            if search.count > search.best {
                search.best = search.count;
                search.best_assign.clone_from(&search.assign);
                if search.best >= root_bound {
                    break;
                }
            }
            if depth < n && search.count + search.bound(depth) > search.best {
                let start = arena.len();
                search.push_candidates(search.order[depth], &mut arena);
                stack.push(Frame {
                    depth,
                    start,
                    end: arena.len(),
                    next: start,
                    skip_done: false,
                    applied: Applied::None,
                });
            }
        }

        let Some(frame) = stack.last_mut() else {
            break;
        };
        let f = search.order[frame.depth];
        let applied = std::mem::replace(&mut frame.applied, Applied::None);
        let (next, end, skip_done, depth, start) = (
            frame.next,
            frame.end,
            frame.skip_done,
            frame.depth,
            frame.start,
        );
        if next < end {
            frame.next += 1;
            frame.applied = Applied::Switch(arena[next]);
        } else if !skip_done {
            frame.skip_done = true;
            frame.applied = Applied::Skip;
        }
        let now = frame.applied;

        match applied {
            Applied::Switch(s) => search.undo(s, f),
            Applied::Skip => search.reopen(f),
            Applied::None => {}
        }
        match now {
            Applied::Switch(s) => {
                search.apply(s, f);
                enter = Some(depth + 1);
            }
            Applied::Skip => {
                search.close(f);
                enter = Some(depth + 1);
            }
            Applied::None => {
                arena.truncate(start);
                stack.pop();
            }
        }
    }

    Outcome {
        assignment: search.best_assign,
        objective: search.best,
        optimal: !aborted,
        nodes,
    }
}
