use crate::costs::state_cost;
use crate::error::{Error, Result};
use crate::gridworld::GridState;

/// Largest support accepted on either side.
pub const OT_MAX_SUPPORT: usize = 12;

const EPS: f64 = 1e-13;

struct Edge {
    to: usize,
    cap: f64,
    cost: f64,
}

/// Residual network with paired forward/backward edges (`e ^ 1` is the twin).
struct Network {
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
}

impl Network {
    fn new(n: usize) -> Self {
        Network {
            edges: Vec::new(),
            adj: vec![Vec::new(); n],
        }
    }

    fn add(&mut self, from: usize, to: usize, cap: f64, cost: f64) {
        self.adj[from].push(self.edges.len());
        self.edges.push(Edge { to, cap, cost });
        self.adj[to].push(self.edges.len());
        self.edges.push(Edge {
            to: from,
            cap: 0.0,
            cost: -cost,
        });
    }

    /// Bellman-Ford shortest path in the residual graph; returns the edge path.
    fn shortest_path(&self, s: usize, t: usize) -> Option<Vec<usize>> {
        let n = self.adj.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut via = vec![usize::MAX; n];
        dist[s] = 0.0;
        for _ in 0..n {
            let mut changed = false;
            for u in 0..n {
                if dist[u].is_infinite() {
                    continue;
                }
                for &e in &self.adj[u] {
                    let edge = &self.edges[e];
                    if edge.cap > EPS && dist[u] + edge.cost < dist[edge.to] - 1e-12 {
                        dist[edge.to] = dist[u] + edge.cost;
                        via[edge.to] = e;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        if dist[t].is_infinite() {
            return None;
        }
        let mut path = Vec::new();
        let mut v = t;
        while v != s {
            let e = via[v];
            path.push(e);
            v = self.edges[e ^ 1].to;
        }
        Some(path)
    }
}

/// Exact optimal transport cost between discrete distributions `p` and `q`
/// under a row-major cost matrix, by successive-shortest-path min-cost flow.
pub fn exact_ot(p: &[f64], q: &[f64], cost: &[f64]) -> Result<f64> {
    let (n, m) = (p.len(), q.len());
    if n == 0 || m == 0 {
        return Err(Error::EmptySequence("ot oracle"));
    }
    if n > OT_MAX_SUPPORT || m > OT_MAX_SUPPORT {
        return Err(Error::InstanceTooLarge {
            oracle: "ot-lp",
            detail: format!("supports {n} x {m}, limit {OT_MAX_SUPPORT}"),
        });
    }
    if cost.len() != n * m {
        return Err(Error::Config("cost matrix shape does not match supports".into()));
    }
    if p.iter().chain(q).any(|w| !(*w >= 0.0)) {
        return Err(Error::Config("weights must be nonnegative".into()));
    }
    let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
    if (sp - sq).abs() > 1e-9 * sp.max(1.0) {
        return Err(Error::Config(format!("unbalanced masses {sp} vs {sq}")));
    }
    let (src, sink) = (n + m, n + m + 1);
    let mut net = Network::new(n + m + 2);
    for (i, w) in p.iter().enumerate() {
        net.add(src, i, *w, 0.0);
    }
    for (j, w) in q.iter().enumerate() {
        net.add(n + j, sink, *w, 0.0);
    }
    for i in 0..n {
        for j in 0..m {
            net.add(i, n + j, f64::INFINITY, cost[i * m + j]);
        }
    }
    let mut total = 0.0;
    while let Some(path) = net.shortest_path(src, sink) {
        let push = path.iter().map(|&e| net.edges[e].cap).fold(f64::INFINITY, f64::min);
        for &e in &path {
            net.edges[e].cap -= push;
            net.edges[e ^ 1].cap += push;
            total += push * net.edges[e].cost;
        }
    }
    Ok(total)
}

/// [`exact_ot`] for weighted grid points under Euclidean cost.
pub fn exact_ot_points(p: &[(GridState, f64)], q: &[(GridState, f64)]) -> Result<f64> {
    let cost: Vec<f64> = p.iter().flat_map(|(a, _)| q.iter().map(move |(b, _)| state_cost(*a, *b))).collect();
    let pw: Vec<f64> = p.iter().map(|(_, w)| *w).collect();
    let qw: Vec<f64> = q.iter().map(|(_, w)| *w).collect();
    exact_ot(&pw, &qw, &cost)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diracs_cost_their_distance() {
        let v = exact_ot_points(&[(GridState::new(0.0, 0.0), 1.0)], &[(GridState::new(3.0, 4.0), 1.0)]).unwrap();
        assert!((v - 5.0).abs() < 1e-12);
    }

    #[test]
    fn assignment_picks_cheapest_matching() {
        // Crossing assignment costs 2 + 2; identity costs 1 + 1.
        let v = exact_ot(&[0.5, 0.5], &[0.5, 0.5], &[1.0, 2.0, 2.0, 1.0]).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn split_mass_matches_hand_solution() {
        // Point 0 must split across both targets.
        let v = exact_ot(&[0.75, 0.25], &[0.5, 0.5], &[0.0, 1.0, 3.0, 0.0]).unwrap();
        assert!((v - 0.25).abs() < 1e-12);
    }

    #[test]
    fn oversized_instances_are_rejected() {
        let p = vec![1.0 / 13.0; 13];
        let c = vec![0.0; 13];
        assert!(matches!(exact_ot(&p, &[1.0], &c), Err(Error::InstanceTooLarge { .. })));
    }
}
