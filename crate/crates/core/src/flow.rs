//! Min-cost flow by capacity scaling, and the balanced assignment problem
//! solved through it.
//!
//! The assignment network has a source `s`, one node per instance, one node
//! per cluster and a sink `e`:
//!
//! ```text
//! s --[1,1], 0--> x_i --[0,1], c_iy--> w_y --[L,U], 0--> e
//! ```
//!
//! Real costs are quantized as `round(c * scale)` before solving.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// Default fixed-point factor for real-valued assignment costs.
pub const DEFAULT_COST_SCALE: u64 = 1_000_000;

/// Largest scaled arc cost accepted; leaves headroom for path sums in `i64`.
const MAX_SCALED_COST: f64 = (1u64 << 52) as f64;

const INF: i64 = i64::MAX / 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowArc {
    pub from: usize,
    pub to: usize,
    pub lower: i64,
    pub upper: i64,
    pub cost: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowNetwork {
    pub node_count: usize,
    pub arcs: Vec<FlowArc>,
    /// Positive for sources, negative for sinks; sums to zero.
    pub supplies: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowResult {
    pub arc_flows: Vec<i64>,
    pub total_cost: i64,
}

impl FlowNetwork {
    pub fn new(node_count: usize) -> Self {
        Self {
            node_count,
            arcs: Vec::new(),
            supplies: vec![0; node_count],
        }
    }

    pub fn add_arc(&mut self, from: usize, to: usize, lower: i64, upper: i64, cost: i64) -> usize {
        self.arcs.push(FlowArc {
            from,
            to,
            lower,
            upper,
            cost,
        });
        self.arcs.len() - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.supplies.len() != self.node_count {
            return Err(Error::validation(
                "supply vector length differs from node count",
            ));
        }
        for (i, a) in self.arcs.iter().enumerate() {
            if a.from >= self.node_count || a.to >= self.node_count {
                return Err(Error::validation(format!(
                    "arc {i} has an endpoint out of range"
                )));
            }
            if a.lower < 0 || a.lower > a.upper {
                return Err(Error::validation(format!(
                    "arc {i} has invalid capacity [{}, {}]",
                    a.lower, a.upper
                )));
            }
        }
        if self.supplies.iter().sum::<i64>() != 0 {
            return Err(Error::validation("supplies do not sum to zero"));
        }
        Ok(())
    }

    /// Checks capacity bounds and conservation for `flows`; returns the flow cost.
    pub fn check_flow(&self, flows: &[i64]) -> Result<i64> {
        if flows.len() != self.arcs.len() {
            return Err(Error::validation(
                "flow vector length differs from arc count",
            ));
        }
        let mut balance = self.supplies.clone();
        let mut cost = 0i64;
        for (a, &f) in self.arcs.iter().zip(flows) {
            if f < a.lower || f > a.upper {
                return Err(Error::validation(format!(
                    "flow {f} outside [{}, {}] on arc {}->{}",
                    a.lower, a.upper, a.from, a.to
                )));
            }
            balance[a.from] -= f;
            balance[a.to] += f;
            cost += f * a.cost;
        }
        if let Some(v) = balance.iter().position(|&b| b != 0) {
            return Err(Error::validation(format!("flow not conserved at node {v}")));
        }
        Ok(cost)
    }
}

/// Residual graph; edge `2i` is arc `i` forward, `2i + 1` its reverse.
struct Residual {
    to: Vec<usize>,
    cap: Vec<i64>,
    cost: Vec<i64>,
    adj: Vec<Vec<usize>>,
}

impl Residual {
    fn from(&self, e: usize) -> usize {
        self.to[e ^ 1]
    }

    fn push(&mut self, e: usize, amount: i64) {
        self.cap[e] -= amount;
        self.cap[e ^ 1] += amount;
    }
}

/// Minimum-cost feasible flow by capacity scaling with node potentials.
///
/// Lower bounds are removed by the usual shift (`f' = f - lower`, with the
/// supplies adjusted), so the core loop only sees zero-lower-bound arcs.
/// Within a phase `delta`, every residual arc with at least `delta` capacity
/// keeps a non-negative reduced cost, and `delta` units are sent along
/// Dijkstra shortest paths from excess to deficit nodes.
pub fn min_cost_flow(network: &FlowNetwork) -> Result<FlowResult> {
    network.validate()?;
    let n = network.node_count;
    let m = network.arcs.len();
    let mut excess = network.supplies.clone();
    let mut g = Residual {
        to: Vec::with_capacity(2 * m),
        cap: Vec::with_capacity(2 * m),
        cost: Vec::with_capacity(2 * m),
        adj: vec![Vec::new(); n],
    };
    for (i, a) in network.arcs.iter().enumerate() {
        excess[a.from] -= a.lower;
        excess[a.to] += a.lower;
        g.to.extend([a.to, a.from]);
        g.cap.extend([a.upper - a.lower, 0]);
        g.cost.extend([a.cost, -a.cost]);
        g.adj[a.from].push(2 * i);
        g.adj[a.to].push(2 * i + 1);
    }

    let largest = excess
        .iter()
        .map(|e| e.abs())
        .chain(g.cap.iter().copied())
        .max()
        .unwrap_or(0);
    let mut delta: i64 = if largest > 0 {
        1 << (63 - largest.leading_zeros())
    } else {
        1
    };

    let mut potential = vec![0i64; n];
    let mut dist = vec![INF; n];
    let mut pred = vec![usize::MAX; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    let mut touched = Vec::new();

    while delta >= 1 {
        for e in 0..g.to.len() {
            let (u, v) = (g.from(e), g.to[e]);
            if g.cap[e] >= delta && g.cost[e] + potential[u] - potential[v] < 0 {
                let amount = g.cap[e];
                g.push(e, amount);
                excess[u] -= amount;
                excess[v] += amount;
            }
        }

        loop {
            let mut progressed = false;
            for s in 0..n {
                while excess[s] >= delta {
                    // Dijkstra on reduced costs, stopping at the first deficit node.
                    for &v in &touched {
                        dist[v] = INF;
                        pred[v] = usize::MAX;
                        done[v] = false;
                    }
                    touched.clear();
                    heap.clear();
                    dist[s] = 0;
                    touched.push(s);
                    heap.push(Reverse((0i64, s)));
                    let mut processed = Vec::new();
                    let mut target = None;
                    while let Some(Reverse((d, u))) = heap.pop() {
                        if done[u] || d > dist[u] {
                            continue;
                        }
                        done[u] = true;
                        processed.push(u);
                        if excess[u] <= -delta {
                            target = Some(u);
                            break;
                        }
                        for &e in &g.adj[u] {
                            if g.cap[e] < delta {
                                continue;
                            }
                            let v = g.to[e];
                            let nd = d + g.cost[e] + potential[u] - potential[v];
                            if nd < dist[v] {
                                if dist[v] == INF {
                                    touched.push(v);
                                }
                                dist[v] = nd;
                                pred[v] = e;
                                heap.push(Reverse((nd, v)));
                            }
                        }
                    }
                    let Some(t) = target else { break };
                    let dt = dist[t];
                    for &v in &processed {
                        potential[v] += dist[v] - dt;
                    }
                    let mut v = t;
                    while v != s {
                        let e = pred[v];
                        g.push(e, delta);
                        v = g.from(e);
                    }
                    excess[s] -= delta;
                    excess[t] += delta;
                    progressed = true;
                }
            }
            if !progressed {
                break;
            }
        }
        delta /= 2;
    }

    if let Some(v) = excess.iter().position(|&e| e != 0) {
        return Err(Error::Infeasible(format!(
            "supply cannot be routed (node {v} left with excess {})",
            excess[v]
        )));
    }

    let arc_flows: Vec<i64> = network
        .arcs
        .iter()
        .enumerate()
        .map(|(i, a)| a.lower + g.cap[2 * i + 1])
        .collect();
    let total_cost = arc_flows
        .iter()
        .zip(&network.arcs)
        .map(|(f, a)| f * a.cost)
        .sum();
    Ok(FlowResult {
        arc_flows,
        total_cost,
    })
}

fn check_assignment_inputs(costs: ArrayView2<'_, f64>, lower: usize, upper: usize) -> Result<()> {
    let (n, k) = costs.dim();
    if k == 0 || n == 0 {
        return Err(Error::validation("empty cost matrix"));
    }
    if lower > upper || k * lower > n || k * upper < n {
        return Err(Error::config(format!(
            "cluster size bounds [{lower}, {upper}] infeasible for {n} instances in {k} clusters"
        )));
    }
    if let Some(c) = costs.iter().find(|c| !c.is_finite() || **c < 0.0) {
        return Err(Error::validation(format!(
            "assignment costs must be finite and non-negative, found {c}"
        )));
    }
    Ok(())
}

/// Builds the balanced-assignment network. Node 0 is the source, nodes
/// `1..=n` the instances, `n+1..=n+k` the clusters, `n+k+1` the sink. Arcs are
/// created source arcs first, then instance-cluster arcs in row-major order,
/// then cluster-sink arcs.
pub fn build_assignment_network(
    costs: ArrayView2<'_, f64>,
    lower: usize,
    upper: usize,
    scale: u64,
) -> Result<FlowNetwork> {
    check_assignment_inputs(costs, lower, upper)?;
    if scale == 0 {
        return Err(Error::config("cost scale must be positive"));
    }
    let (n, k) = costs.dim();
    let max_cost = costs.iter().fold(0.0f64, |a, &c| a.max(c));
    if max_cost * scale as f64 * (n + k + 2) as f64 > MAX_SCALED_COST {
        return Err(Error::validation(format!(
            "assignment cost {max_cost} too large for fixed-point scale {scale}"
        )));
    }
    let source = 0;
    let sink = n + k + 1;
    let mut net = FlowNetwork::new(n + k + 2);
    for i in 0..n {
        net.add_arc(source, 1 + i, 1, 1, 0);
    }
    for i in 0..n {
        for y in 0..k {
            let c = (costs[[i, y]] * scale as f64).round() as i64;
            net.add_arc(1 + i, 1 + n + y, 0, 1, c);
        }
    }
    for y in 0..k {
        net.add_arc(1 + n + y, sink, lower as i64, upper as i64, 0);
    }
    net.supplies[source] = n as i64;
    net.supplies[sink] = -(n as i64);
    Ok(net)
}

/// Largest scale up to `preferred` for which `costs` fit the fixed-point range.
pub fn fitting_scale(costs: ArrayView2<'_, f64>, preferred: u64) -> u64 {
    let (n, k) = costs.dim();
    let max_cost = costs.iter().fold(0.0f64, |a, &c| a.max(c));
    if max_cost <= 0.0 {
        return preferred.max(1);
    }
    let limit = MAX_SCALED_COST / (max_cost * (n + k + 2) as f64);
    (limit.floor() as u64).clamp(1, preferred.max(1))
}

/// A labeling with its cost under the real and the quantized costs.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub labels: Vec<usize>,
    pub cost: f64,
    pub scaled_cost: i64,
}

/// Minimum-cost labeling with every cluster size in `[lower, upper]`.
pub fn solve_balanced_assignment(
    costs: ArrayView2<'_, f64>,
    lower: usize,
    upper: usize,
    scale: u64,
) -> Result<Assignment> {
    let net = build_assignment_network(costs, lower, upper, scale)?;
    let flow = min_cost_flow(&net)?;
    let (n, k) = costs.dim();
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let base = n + i * k;
        let chosen = (0..k)
            .filter(|&y| flow.arc_flows[base + y] == 1)
            .collect::<Vec<_>>();
        match chosen.as_slice() {
            [y] => labels.push(*y),
            _ => {
                return Err(Error::Solver(format!(
                    "instance {i} routed to {} clusters",
                    chosen.len()
                )))
            }
        }
    }
    let cost = labels.iter().enumerate().map(|(i, &y)| costs[[i, y]]).sum();
    Ok(Assignment {
        labels,
        cost,
        scaled_cost: flow.total_cost,
    })
}

/// Upper bound on the labelings [`brute_force_assignment`] will enumerate.
pub const BRUTE_FORCE_LIMIT: u64 = 10_000_000;

/// Exhaustive search over balanced labelings. Among equal-cost optima the
/// lexicographically smallest label vector wins. Intended as a test oracle.
pub fn brute_force_assignment(
    costs: ArrayView2<'_, f64>,
    lower: usize,
    upper: usize,
) -> Result<(Vec<usize>, f64)> {
    check_assignment_inputs(costs, lower, upper)?;
    let (n, k) = costs.dim();
    let total = (k as u64)
        .checked_pow(n as u32)
        .filter(|&t| t <= BRUTE_FORCE_LIMIT);
    if total.is_none() {
        return Err(Error::config(format!(
            "{k}^{n} labelings exceed the enumeration limit"
        )));
    }
    let mut labels = vec![0usize; n];
    let mut counts = vec![0usize; k];
    counts[0] = n;
    let mut best: Option<(Vec<usize>, f64)> = None;
    loop {
        if counts.iter().all(|&c| c >= lower && c <= upper) {
            let cost: f64 = labels.iter().enumerate().map(|(i, &y)| costs[[i, y]]).sum();
            if best.as_ref().is_none_or(|(_, b)| cost < *b) {
                best = Some((labels.clone(), cost));
            }
        }
        // Odometer increment, last position fastest: lexicographic order.
        let mut pos = n;
        loop {
            if pos == 0 {
                return best.ok_or_else(|| Error::Infeasible("no balanced labeling".into()));
            }
            pos -= 1;
            counts[labels[pos]] -= 1;
            if labels[pos] + 1 < k {
                labels[pos] += 1;
                counts[labels[pos]] += 1;
                break;
            }
            labels[pos] = 0;
            counts[0] += 1;
        }
    }
}
