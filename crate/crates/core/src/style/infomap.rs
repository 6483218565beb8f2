//! Two-level InfoMap.
//!
//! Node visit rates come from PageRank with uniform teleportation; the
//! teleported flow that lands outside a module counts toward that module's
//! exit rate. The partition minimizes the map equation
//!
//! ```text
//! L(M) = q H(Q) + sum_m p_m H(P_m)
//! ```
//!
//! by greedy node moves followed by module aggregation, repeated until the
//! code length stops improving.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MIN_IMPROVEMENT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfomapOptions {
    /// Neighbors kept per node before the mutual-kNN intersection.
    pub knn: usize,
    /// Teleport probability of the underlying random walk.
    pub teleport: f64,
    pub seed: u64,
    /// Independent optimization runs; the shortest code length wins.
    pub trials: usize,
}

impl Default for InfomapOptions {
    fn default() -> Self {
        InfomapOptions {
            knn: 10,
            teleport: 0.15,
            seed: 0,
            trials: 8,
        }
    }
}

/// Undirected graph with positive edge weights and no self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    adj: Vec<Vec<(usize, f64)>>,
}

impl WeightedGraph {
    pub fn new(n: usize) -> Self {
        WeightedGraph {
            adj: vec![Vec::new(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    /// Adds (or accumulates onto) an undirected edge. Non-positive weights and
    /// self-loops are ignored.
    pub fn add_edge(&mut self, a: usize, b: usize, w: f64) {
        if a == b || !(w > 0.0) {
            return;
        }
        for (from, to) in [(a, b), (b, a)] {
            match self.adj[from].iter_mut().find(|(n, _)| *n == to) {
                Some(e) => e.1 += w,
                None => self.adj[from].push((to, w)),
            }
        }
    }

    pub fn neighbors(&self, a: usize) -> &[(usize, f64)] {
        &self.adj[a]
    }

    /// Symmetric dense weights; the diagonal is ignored.
    pub fn from_dense(w: &DMatrix<f64>) -> Self {
        let n = w.nrows();
        let mut g = WeightedGraph::new(n);
        for i in 0..n {
            for j in i + 1..n {
                g.add_edge(i, j, w[(i, j)]);
            }
        }
        g
    }

    /// Similarity graph from a refined distance matrix: weight
    /// `clamp(1 - d, 0, 1)`, keeping only mutual k-nearest neighbors.
    pub fn mutual_knn(refined: &DMatrix<f64>, knn: usize) -> Result<Self> {
        let n = refined.nrows();
        if refined.ncols() != n {
            return Err(Error::ShapeMismatch(format!(
                "refined matrix must be square, got {:?}",
                refined.shape()
            )));
        }
        for i in 0..n {
            for j in i + 1..n {
                if (refined[(i, j)] - refined[(j, i)]).abs() > 1e-9 {
                    return Err(Error::ShapeMismatch(format!(
                        "refined matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        if knn == 0 {
            return Err(Error::InvalidArgument("knn must be >= 1".into()));
        }
        let sim = |i: usize, j: usize| (1.0 - refined[(i, j)]).clamp(0.0, 1.0);
        let mut nearest = vec![vec![false; n]; n];
        for i in 0..n {
            let mut cand: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, sim(i, j)))
                .filter(|&(_, w)| w > 0.0)
                .collect();
            cand.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            for &(j, _) in cand.iter().take(knn) {
                nearest[i][j] = true;
            }
        }
        let mut g = WeightedGraph::new(n);
        for i in 0..n {
            for j in i + 1..n {
                if nearest[i][j] && nearest[j][i] {
                    g.add_edge(i, j, sim(i, j));
                }
            }
        }
        Ok(g)
    }
}

/// Stationary flow of the teleporting random walk on a graph.
#[derive(Debug, Clone)]
pub struct FlowGraph {
    /// Visit rate of each node.
    pub node_flow: Vec<f64>,
    /// Flow each node sends by teleportation (`tau * p`, or `p` for nodes
    /// without links).
    pub teleport_flow: Vec<f64>,
    /// Link flow `(1 - tau) p_a w_ab / w_a` along each directed edge.
    pub links: Vec<Vec<(usize, f64)>>,
}

impl FlowGraph {
    pub fn new(graph: &WeightedGraph, teleport: f64) -> Result<Self> {
        let n = graph.len();
        if n == 0 {
            return Err(Error::EmptyGraph);
        }
        if !(teleport > 0.0 && teleport < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "teleport must lie in (0, 1), got {teleport}"
            )));
        }
        let strength: Vec<f64> = graph
            .adj
            .iter()
            .map(|nb| nb.iter().map(|(_, w)| w).sum())
            .collect();
        let inv_n = 1.0 / n as f64;
        let mut p = vec![inv_n; n];
        let mut next = vec![0.0; n];
        for _ in 0..100_000 {
            let mut jump = 0.0;
            next.iter_mut().for_each(|v| *v = 0.0);
            for a in 0..n {
                if strength[a] > 0.0 {
                    jump += teleport * p[a];
                    let scale = (1.0 - teleport) * p[a] / strength[a];
                    for &(b, w) in &graph.adj[a] {
                        next[b] += scale * w;
                    }
                } else {
                    jump += p[a];
                }
            }
            let mut delta = 0.0;
            let mut total = 0.0;
            for v in next.iter_mut() {
                *v += jump * inv_n;
                total += *v;
            }
            for (v, old) in next.iter_mut().zip(&p) {
                *v /= total;
                delta += (*v - old).abs();
            }
            std::mem::swap(&mut p, &mut next);
            if delta < 1e-15 {
                break;
            }
        }
        let teleport_flow = (0..n)
            .map(|a| if strength[a] > 0.0 { teleport * p[a] } else { p[a] })
            .collect();
        let links = (0..n)
            .map(|a| {
                graph.adj[a]
                    .iter()
                    .map(|&(b, w)| (b, (1.0 - teleport) * p[a] * w / strength[a]))
                    .collect()
            })
            .collect();
        Ok(FlowGraph {
            node_flow: p,
            teleport_flow,
            links,
        })
    }

    pub fn len(&self) -> usize {
        self.node_flow.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_flow.is_empty()
    }
}

fn plogp(x: f64) -> f64 {
    if x > 0.0 {
        x * x.log2()
    } else {
        0.0
    }
}

/// Two-level map equation (bits) of a partition given as module labels.
pub fn map_equation(flow: &FlowGraph, labels: &[usize]) -> f64 {
    let n = flow.len();
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut module_flow = vec![0.0; k];
    let mut module_tele = vec![0.0; k];
    let mut module_size = vec![0usize; k];
    let mut exit_links = vec![0.0; k];
    for a in 0..n {
        let m = labels[a];
        module_flow[m] += flow.node_flow[a];
        module_tele[m] += flow.teleport_flow[a];
        module_size[m] += 1;
        for &(b, f) in &flow.links[a] {
            if labels[b] != m {
                exit_links[m] += f;
            }
        }
    }
    let mut codelength = Codelength::default();
    for m in 0..k {
        if module_size[m] == 0 {
            continue;
        }
        let q = exit_rate(module_tele[m], module_size[m], n, exit_links[m]);
        codelength.add(q, module_flow[m]);
    }
    let nodes: f64 = flow.node_flow.iter().map(|&p| plogp(p)).sum();
    codelength.value(nodes)
}

fn exit_rate(tele: f64, size: usize, n: usize, links: f64) -> f64 {
    tele * (n - size) as f64 / n as f64 + links
}

/// Running sums of the expanded map equation
/// `plogp(sum q) - 2 sum plogp(q_m) + sum plogp(q_m + p_m) - sum plogp(p_a)`.
#[derive(Debug, Clone, Copy, Default)]
struct Codelength {
    sum_exit: f64,
    sum_plogp_exit: f64,
    sum_plogp_total: f64,
}

impl Codelength {
    fn add(&mut self, q: f64, p: f64) {
        self.sum_exit += q;
        self.sum_plogp_exit += plogp(q);
        self.sum_plogp_total += plogp(q + p);
    }

    fn remove(&mut self, q: f64, p: f64) {
        self.sum_exit -= q;
        self.sum_plogp_exit -= plogp(q);
        self.sum_plogp_total -= plogp(q + p);
    }

    fn value(&self, node_plogp: f64) -> f64 {
        plogp(self.sum_exit) - 2.0 * self.sum_plogp_exit + self.sum_plogp_total - node_plogp
    }
}

/// Nodes of one optimization level (original nodes or aggregated modules).
struct Level {
    flow: Vec<f64>,
    tele: Vec<f64>,
    size: Vec<usize>,
    out: Vec<Vec<(usize, f64)>>,
    inn: Vec<Vec<(usize, f64)>>,
    out_total: Vec<f64>,
}

impl Level {
    fn from_flow(flow: &FlowGraph) -> Self {
        let n = flow.len();
        let mut inn = vec![Vec::new(); n];
        for a in 0..n {
            for &(b, f) in &flow.links[a] {
                inn[b].push((a, f));
            }
        }
        Level {
            flow: flow.node_flow.clone(),
            tele: flow.teleport_flow.clone(),
            size: vec![1; n],
            out_total: flow.links.iter().map(|l| l.iter().map(|(_, f)| f).sum()).collect(),
            out: flow.links.clone(),
            inn,
        }
    }

    fn len(&self) -> usize {
        self.flow.len()
    }

    /// Collapses nodes into their modules (labels must be contiguous).
    fn aggregate(&self, labels: &[usize], k: usize) -> Level {
        let mut flow = vec![0.0; k];
        let mut tele = vec![0.0; k];
        let mut size = vec![0; k];
        let mut dense: Vec<Vec<(usize, f64)>> = vec![Vec::new(); k];
        for a in 0..self.len() {
            let m = labels[a];
            flow[m] += self.flow[a];
            tele[m] += self.tele[a];
            size[m] += self.size[a];
            for &(b, f) in &self.out[a] {
                let mb = labels[b];
                if mb != m {
                    dense[m].push((mb, f));
                }
            }
        }
        let mut out = Vec::with_capacity(k);
        for mut edges in dense {
            edges.sort_by_key(|e| e.0);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(edges.len());
            for (b, f) in edges {
                match merged.last_mut() {
                    Some(last) if last.0 == b => last.1 += f,
                    _ => merged.push((b, f)),
                }
            }
            out.push(merged);
        }
        let mut inn = vec![Vec::new(); k];
        for (a, edges) in out.iter().enumerate() {
            for &(b, f) in edges {
                inn[b].push((a, f));
            }
        }
        Level {
            flow,
            tele,
            size,
            out_total: out.iter().map(|l| l.iter().map(|(_, f)| f).sum()).collect(),
            out,
            inn,
        }
    }
}

struct ModuleState {
    flow: Vec<f64>,
    tele: Vec<f64>,
    size: Vec<usize>,
    exit_links: Vec<f64>,
    members: Vec<usize>,
}

impl ModuleState {
    fn exit(&self, m: usize, n_total: usize) -> f64 {
        exit_rate(self.tele[m], self.size[m], n_total, self.exit_links[m])
    }
}

/// Greedy node moves on one level, starting from `assign`. Returns whether
/// any node changed module.
fn local_moves(level: &Level, assign: &mut [usize], n_total: usize, rng: &mut ChaCha8Rng) -> bool {
    let n = level.len();
    let slots = n.max(assign.iter().max().map_or(0, |m| m + 1));
    let mut st = ModuleState {
        flow: vec![0.0; slots],
        tele: vec![0.0; slots],
        size: vec![0; slots],
        exit_links: vec![0.0; slots],
        members: vec![0; slots],
    };
    for a in 0..n {
        let m = assign[a];
        st.flow[m] += level.flow[a];
        st.tele[m] += level.tele[a];
        st.size[m] += level.size[a];
        st.members[m] += 1;
        for &(b, f) in &level.out[a] {
            if assign[b] != m {
                st.exit_links[m] += f;
            }
        }
    }
    let mut code = Codelength::default();
    for m in 0..slots {
        if st.members[m] > 0 {
            code.add(st.exit(m, n_total), st.flow[m]);
        }
    }
    let mut empty: Vec<usize> = (0..slots).rev().filter(|&m| st.members[m] == 0).collect();

    let mut order: Vec<usize> = (0..n).collect();
    let mut out_to = vec![0.0; slots];
    let mut in_from = vec![0.0; slots];
    let mut touched: Vec<usize> = Vec::new();
    let mut any_moved = false;

    for _pass in 0..1000 {
        order.shuffle(rng);
        let mut moved = false;
        for &a in &order {
            let cur = assign[a];
            touched.clear();
            for &(b, f) in &level.out[a] {
                let m = assign[b];
                if out_to[m] == 0.0 && in_from[m] == 0.0 && !touched.contains(&m) {
                    touched.push(m);
                }
                out_to[m] += f;
            }
            for &(b, f) in &level.inn[a] {
                let m = assign[b];
                if out_to[m] == 0.0 && in_from[m] == 0.0 && !touched.contains(&m) {
                    touched.push(m);
                }
                in_from[m] += f;
            }

            let fa = level.flow[a];
            let ta = level.tele[a];
            let sa = level.size[a];
            let oa = level.out_total[a];
            let old_i = (st.exit(cur, n_total), st.flow[cur]);
            let exit_links_i = st.exit_links[cur] - (oa - out_to[cur]) + in_from[cur];
            let new_i_exit = exit_rate(st.tele[cur] - ta, st.size[cur] - sa, n_total, exit_links_i);
            let new_i = (new_i_exit, st.flow[cur] - fa);
            let node_term = 0.0;
            let current = code.value(node_term);

            let mut base = code;
            base.remove(old_i.0, old_i.1);
            if st.members[cur] > 1 {
                base.add(new_i.0, new_i.1);
            }

            let mut best: Option<(usize, f64, f64)> = None;
            let mut best_value = current;
            // Teleportation couples every pair of modules, so all of them
            // are candidates, not just the linked ones.
            let mut candidates: Vec<usize> = (0..slots).filter(|&m| m != cur && st.members[m] > 0).collect();
            if st.members[cur] > 1 {
                if let Some(&e) = empty.last() {
                    candidates.push(e);
                }
            }
            for &j in &candidates {
                let links_j = st.exit_links[j] + (oa - out_to[j]) - in_from[j];
                let new_j_exit = exit_rate(st.tele[j] + ta, st.size[j] + sa, n_total, links_j);
                let mut trial = base;
                if st.members[j] > 0 {
                    trial.remove(st.exit(j, n_total), st.flow[j]);
                }
                trial.add(new_j_exit, st.flow[j] + fa);
                let value = trial.value(node_term);
                if value < best_value - MIN_IMPROVEMENT {
                    best_value = value;
                    best = Some((j, links_j, value));
                }
            }

            if let Some((j, links_j, _)) = best {
                // Apply the move.
                let was_empty = st.members[j] == 0;
                if st.members[j] > 0 {
                    base.remove(st.exit(j, n_total), st.flow[j]);
                }
                st.flow[cur] -= fa;
                st.tele[cur] -= ta;
                st.size[cur] -= sa;
                st.members[cur] -= 1;
                st.exit_links[cur] = exit_links_i;
                st.flow[j] += fa;
                st.tele[j] += ta;
                st.size[j] += sa;
                st.members[j] += 1;
                st.exit_links[j] = links_j;
                base.add(st.exit(j, n_total), st.flow[j]);
                code = base;
                if was_empty {
                    empty.pop();
                }
                if st.members[cur] == 0 {
                    st.flow[cur] = 0.0;
                    st.tele[cur] = 0.0;
                    st.exit_links[cur] = 0.0;
                    empty.push(cur);
                }
                assign[a] = j;
                moved = true;
                any_moved = true;
            }
            for &m in &touched {
                out_to[m] = 0.0;
                in_from[m] = 0.0;
            }
        }
        if !moved {
            break;
        }
    }
    any_moved
}

/// Relabels to contiguous integers in order of first appearance.
fn relabel(assign: &[usize]) -> (Vec<usize>, usize) {
    let mut map = vec![usize::MAX; assign.iter().max().map_or(0, |m| m + 1)];
    let mut next = 0;
    let labels = assign
        .iter()
        .map(|&m| {
            if map[m] == usize::MAX {
                map[m] = next;
                next += 1;
            }
            map[m]
        })
        .collect();
    (labels, next)
}

fn run_trial(flow: &FlowGraph, base: &Level, rng: &mut ChaCha8Rng) -> (Vec<usize>, f64) {
    let n = base.len();
    let mut best: Vec<usize> = (0..n).collect();
    let mut best_len = map_equation(flow, &best);
    let mut current = best.clone();
    for _round in 0..100 {
        // Node-level moves from the current partition.
        local_moves(base, &mut current, n, rng);
        // Module-level moves on successive aggregations.
        loop {
            let (labels, k) = relabel(&current);
            let coarse = base.aggregate(&labels, k);
            let mut super_assign: Vec<usize> = (0..k).collect();
            local_moves(&coarse, &mut super_assign, n, rng);
            let (merged, k2) = relabel(&super_assign);
            current = labels.iter().map(|&m| merged[m]).collect();
            if k2 == k {
                break;
            }
        }
        let len = map_equation(flow, &current);
        if len < best_len - MIN_IMPROVEMENT {
            best_len = len;
            best = current.clone();
        } else {
            break;
        }
    }
    let one = vec![0; n];
    let one_len = map_equation(flow, &one);
    if one_len < best_len - MIN_IMPROVEMENT {
        return (one, one_len);
    }
    (relabel(&best).0, best_len)
}

/// Result of a clustering run.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Contiguous module labels from 0, in order of first appearance.
    pub labels: Vec<usize>,
    pub modules: usize,
    /// Map equation value, bits.
    pub codelength: f64,
}

/// Minimizes the map equation over partitions of `graph`.
pub fn infomap_graph(graph: &WeightedGraph, teleport: f64, seed: u64, trials: usize) -> Result<Clustering> {
    let flow = FlowGraph::new(graph, teleport)?;
    let base = Level::from_flow(&flow);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for t in 0..trials.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(t as u64);
        let (labels, len) = run_trial(&flow, &base, &mut rng);
        if best.as_ref().is_none_or(|(_, b)| len < *b - MIN_IMPROVEMENT) {
            best = Some((labels, len));
        }
    }
    let (labels, codelength) = best.expect("at least one trial");
    let modules = labels.iter().max().map_or(0, |m| m + 1);
    Ok(Clustering {
        labels,
        modules,
        codelength,
    })
}

/// Clusters a refined distance matrix: mutual-kNN similarity graph, then
/// two-level InfoMap.
pub fn infomap_cluster(refined: &DMatrix<f64>, options: &InfomapOptions) -> Result<Clustering> {
    if refined.nrows() == 0 {
        return Err(Error::EmptyGraph);
    }
    let graph = WeightedGraph::mutual_knn(refined, options.knn)?;
    infomap_graph(&graph, options.teleport, options.seed, options.trials)
}
