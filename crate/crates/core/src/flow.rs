//! Integer maximum flow (Dinic's algorithm).

use std::collections::VecDeque;

pub(crate) const INF_CAP: i64 = i64::MAX / 4;

#[derive(Debug, Clone)]
struct Edge {
    to: usize,
    cap: i64,
    rev: usize,
    forward: bool,
}

/// Directed flow network with integer capacities.
#[derive(Debug, Clone)]
pub struct FlowNetwork {
    graph: Vec<Vec<Edge>>,
    // Original capacity of every forward edge, by (node, slot).
    initial: Vec<(usize, usize, i64)>,
}

/// Handle to a forward edge, used to read back its flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeId(usize);

impl FlowNetwork {
    pub fn new(nodes: usize) -> Self {
        Self {
            graph: vec![Vec::new(); nodes],
            initial: Vec::new(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.graph.len()
    }

    pub fn add_edge(&mut self, from: usize, to: usize, cap: i64) -> EdgeId {
        assert!(cap >= 0 && from != to);
        let fwd_slot = self.graph[from].len();
        let rev_slot = self.graph[to].len();
        self.graph[from].push(Edge {
            to,
            cap,
            rev: rev_slot,
            forward: true,
        });
        self.graph[to].push(Edge {
            to: from,
            cap: 0,
            rev: fwd_slot,
            forward: false,
        });
        self.initial.push((from, fwd_slot, cap));
        EdgeId(self.initial.len() - 1)
    }

    /// Flow currently carried by a forward edge.
    pub fn flow(&self, id: EdgeId) -> i64 {
        let (node, slot, cap) = self.initial[id.0];
        cap - self.graph[node][slot].cap
    }

    /// Endpoints of a forward edge.
    pub fn endpoints(&self, id: EdgeId) -> (usize, usize) {
        let (node, slot, _) = self.initial[id.0];
        (node, self.graph[node][slot].to)
    }

    /// Forward edges leaving `node` that carry positive flow, as `(to, flow)`.
    pub fn flowing_out(&self, node: usize) -> Vec<(usize, i64)> {
        self.graph[node]
            .iter()
            .filter(|e| e.forward)
            .filter_map(|e| {
                let flow = self.graph[e.to][e.rev].cap;
                (flow > 0).then_some((e.to, flow))
            })
            .collect()
    }

    /// Pushes the maximum flow from `source` to `sink` and returns its value.
    pub fn max_flow(&mut self, source: usize, sink: usize) -> i64 {
        assert_ne!(source, sink);
        let n = self.graph.len();
        let mut total = 0i64;
        let mut level = vec![-1i32; n];
        let mut iter = vec![0usize; n];
        loop {
            level.iter_mut().for_each(|l| *l = -1);
            let mut queue = VecDeque::new();
            level[source] = 0;
            queue.push_back(source);
            while let Some(v) = queue.pop_front() {
                for e in &self.graph[v] {
                    if e.cap > 0 && level[e.to] < 0 {
                        level[e.to] = level[v] + 1;
                        queue.push_back(e.to);
                    }
                }
            }
            if level[sink] < 0 {
                return total;
            }
            iter.iter_mut().for_each(|i| *i = 0);
            loop {
                let pushed = self.augment(source, sink, INF_CAP, &level, &mut iter);
                if pushed == 0 {
                    break;
                }
                total += pushed;
            }
        }
    }

    // Iterative blocking-flow DFS; recursion depth would otherwise scale with
    // the number of layers.
    fn augment(
        &mut self,
        source: usize,
        sink: usize,
        limit: i64,
        level: &[i32],
        iter: &mut [usize],
    ) -> i64 {
        let mut path: Vec<(usize, usize)> = Vec::new();
        let mut v = source;
        loop {
            if v == sink {
                let pushed = path
                    .iter()
                    .map(|&(u, i)| self.graph[u][i].cap)
                    .fold(limit, i64::min);
                for &(u, i) in &path {
                    let (to, rev) = {
                        let e = &mut self.graph[u][i];
                        e.cap -= pushed;
                        (e.to, e.rev)
                    };
                    self.graph[to][rev].cap += pushed;
                }
                return pushed;
            }
            let mut advanced = false;
            while iter[v] < self.graph[v].len() {
                let i = iter[v];
                let e = &self.graph[v][i];
                if e.cap > 0 && level[e.to] == level[v] + 1 {
                    path.push((v, i));
                    v = e.to;
                    advanced = true;
                    break;
                }
                iter[v] += 1;
            }
            if !advanced {
                // Dead end: retreat and skip the edge that led here.
                match path.pop() {
                    Some((u, _)) => {
                        iter[u] += 1;
                        v = u;
                    }
                    None => return 0,
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classic_network() {
        // CLRS figure 26.1, max flow 23.
        let mut g = FlowNetwork::new(6);
        for &(u, v, c) in &[
            (0, 1, 16),
            (0, 2, 13),
            (2, 1, 4),
            (1, 3, 12),
            (3, 2, 9),
            (2, 4, 14),
            (4, 3, 7),
            (3, 5, 20),
            (4, 5, 4),
        ] {
            g.add_edge(u, v, c);
        }
        assert_eq!(g.max_flow(0, 5), 23);
    }

    #[test]
    fn flow_readback_respects_conservation() {
        let mut g = FlowNetwork::new(4);
        let a = g.add_edge(0, 1, 3);
        let b = g.add_edge(0, 2, 2);
        let c = g.add_edge(1, 3, 2);
        let d = g.add_edge(2, 3, 3);
        let e = g.add_edge(1, 2, 5);
        assert_eq!(g.max_flow(0, 3), 5);
        assert_eq!(g.flow(a), g.flow(c) + g.flow(e));
        assert_eq!(g.flow(b) + g.flow(e), g.flow(d));
        assert_eq!(g.endpoints(e), (1, 2));
        let out: i64 = g.flowing_out(0).iter().map(|&(_, f)| f).sum();
        assert_eq!(out, 5);
    }

    #[test]
    fn disconnected_sink_has_zero_flow() {
        let mut g = FlowNetwork::new(3);
        g.add_edge(0, 1, 10);
        assert_eq!(g.max_flow(0, 2), 0);
    }
}
