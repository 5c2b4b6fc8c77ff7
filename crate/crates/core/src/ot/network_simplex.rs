//! Primal network simplex specialised to the bipartite transportation graph.
//!
//! Nodes `0..na` are sources, `na..na+nb` are sinks and `na+nb` is an
//! artificial root. Every non-root node starts attached to the root by an
//! artificial arc that carries its full supply, so the initial spanning
//! tree is strongly feasible. The leaving arc is chosen with the
//! strongly-feasible tie rule, which prevents cycling on degenerate pivots.
//! Transport arcs are uncapacitated; artificial arcs are never re-entered.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dir {
    /// Tree arc points from the node to its parent.
    Up,
    /// Tree arc points from the parent to the node.
    Down,
}

struct Tree<'a> {
    cost: ArrayView2<'a, f64>,
    na: usize,
    nb: usize,
    root: usize,
    transport_arcs: usize,
    art_cost: f64,
    flow: Vec<f64>,
    in_tree: Vec<bool>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    dir: Vec<Dir>,
    pi: Vec<f64>,
    mark: Vec<u32>,
    generation: u32,
    stack: Vec<usize>,
}

impl<'a> Tree<'a> {
    fn new(cost: ArrayView2<'a, f64>, supply: &[f64], demand: &[f64]) -> Self {
        let (na, nb) = cost.dim();
        let nodes = na + nb;
        let transport_arcs = na * nb;
        let max_cost = cost.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let art_cost = (max_cost + 1.0) * (nodes as f64 + 1.0);

        let mut flow = vec![0.0; transport_arcs + nodes];
        let mut parent = vec![nodes; nodes + 1];
        let mut pred = vec![usize::MAX; nodes + 1];
        let mut dir = vec![Dir::Down; nodes + 1];
        for u in 0..nodes {
            let art = transport_arcs + u;
            pred[u] = art;
            parent[u] = nodes;
            if u < na {
                dir[u] = Dir::Up;
                flow[art] = supply[u];
            } else {
                dir[u] = Dir::Down;
                flow[art] = demand[u - na];
            }
        }
        let mut tree = Tree {
            cost,
            na,
            nb,
            root: nodes,
            transport_arcs,
            art_cost,
            flow,
            in_tree: vec![false; transport_arcs],
            parent,
            pred,
            dir,
            pi: vec![0.0; nodes + 1],
            mark: vec![0; nodes + 1],
            generation: 0,
            stack: Vec::new(),
        };
        tree.recompute_potentials();
        tree
    }

    #[inline]
    fn arc_cost(&self, arc: usize) -> f64 {
        if arc < self.transport_arcs {
            self.cost[[arc / self.nb, arc % self.nb]]
        } else if arc - self.transport_arcs < self.na {
            0.0
        } else {
            self.art_cost
        }
    }

    #[inline]
    fn reduced_cost(&self, arc: usize) -> f64 {
        let (i, j) = (arc / self.nb, arc % self.nb);
        self.cost[[i, j]] + self.pi[i] - self.pi[self.na + j]
    }

    fn next_generation(&mut self) -> u32 {
        self.generation = self.generation.wrapping_add(1);
        if self.generation == 0 {
            self.mark.iter_mut().for_each(|m| *m = 0);
            self.generation = 1;
        }
        self.generation
    }

    /// Potentials satisfy `cost + pi[tail] - pi[head] == 0` on tree arcs.
    fn recompute_potentials(&mut self) {
        let done = self.next_generation();
        self.pi[self.root] = 0.0;
        self.mark[self.root] = done;
        for u in 0..self.root {
            let mut w = u;
            while self.mark[w] != done {
                self.stack.push(w);
                w = self.parent[w];
            }
            while let Some(x) = self.stack.pop() {
                let c = self.arc_cost(self.pred[x]);
                let p = self.pi[self.parent[x]];
                self.pi[x] = match self.dir[x] {
                    Dir::Up => p - c,
                    Dir::Down => p + c,
                };
                self.mark[x] = done;
            }
        }
    }

    fn find_join(&mut self, a: usize, b: usize) -> usize {
        let g = self.next_generation();
        let mut w = a;
        loop {
            self.mark[w] = g;
            if w == self.root {
                break;
            }
            w = self.parent[w];
        }
        let mut w = b;
        while self.mark[w] != g {
            w = self.parent[w];
        }
        w
    }

    /// Pushes flow around the cycle closed by `entering` and swaps the
    /// leaving arc out of the tree.
    fn pivot(&mut self, entering: usize) {
        let first = entering / self.nb;
        let second = self.na + entering % self.nb;
        let join = self.find_join(first, second);

        let mut delta = f64::INFINITY;
        let mut u_out = usize::MAX;
        let mut leaving_on_first = true;
        let mut w = first;
        while w != join {
            if self.dir[w] == Dir::Up {
                let d = self.flow[self.pred[w]];
                if d < delta {
                    delta = d;
                    u_out = w;
                }
            }
            w = self.parent[w];
        }
        let mut w = second;
        while w != join {
            if self.dir[w] == Dir::Down {
                let d = self.flow[self.pred[w]];
                if d <= delta {
                    delta = d;
                    u_out = w;
                    leaving_on_first = false;
                }
            }
            w = self.parent[w];
        }
        debug_assert!(
            u_out != usize::MAX,
            "bipartite cycle always has a blocking arc"
        );

        if delta > 0.0 {
            self.flow[entering] += delta;
            let mut w = first;
            while w != join {
                let e = self.pred[w];
                match self.dir[w] {
                    Dir::Up => self.flow[e] -= delta,
                    Dir::Down => self.flow[e] += delta,
                }
                w = self.parent[w];
            }
            let mut w = second;
            while w != join {
                let e = self.pred[w];
                match self.dir[w] {
                    Dir::Up => self.flow[e] += delta,
                    Dir::Down => self.flow[e] -= delta,
                }
                w = self.parent[w];
            }
        }

        let leaving = self.pred[u_out];
        self.flow[leaving] = 0.0;
        if leaving < self.transport_arcs {
            self.in_tree[leaving] = false;
        }
        self.in_tree[entering] = true;

        // Re-hang the detached subtree from the entering arc's endpoint.
        let (u_in, v_in) = if leaving_on_first {
            (first, second)
        } else {
            (second, first)
        };
        let mut w = u_in;
        let mut new_parent = v_in;
        let mut new_pred = entering;
        let mut new_dir = if u_in == first { Dir::Up } else { Dir::Down };
        loop {
            let old_parent = self.parent[w];
            let old_pred = self.pred[w];
            let old_dir = self.dir[w];
            self.parent[w] = new_parent;
            self.pred[w] = new_pred;
            self.dir[w] = new_dir;
            if w == u_out {
                break;
            }
            new_parent = w;
            new_pred = old_pred;
            new_dir = match old_dir {
                Dir::Up => Dir::Down,
                Dir::Down => Dir::Up,
            };
            w = old_parent;
        }
        self.recompute_potentials();
    }
}

/// Solves the balanced transportation problem. `supply` and `demand` must
/// be strictly positive and (approximately) equal in total. Returns the
/// plan and the number of pivots performed.
pub(crate) fn solve(
    cost: ArrayView2<'_, f64>,
    supply: &[f64],
    demand: &[f64],
) -> Result<(Array2<f64>, usize)> {
    let (na, nb) = cost.dim();
    debug_assert_eq!(na, supply.len());
    debug_assert_eq!(nb, demand.len());
    let mut tree = Tree::new(cost, supply, demand);
    let arcs = tree.transport_arcs;
    let block = ((arcs as f64).sqrt().ceil() as usize).max(10).min(arcs);
    let eps = 1e-12 * (1.0 + tree.art_cost);
    let max_pivots = 50 * arcs + 10_000;

    let mut next = 0usize;
    let mut pivots = 0usize;
    loop {
        // Block search: scan blocks cyclically, take the most negative
        // reduced cost of the first block that contains one.
        let mut best = -eps;
        let mut entering = usize::MAX;
        let mut scanned = 0usize;
        let mut in_block = 0usize;
        let mut e = next;
        while scanned < arcs {
            if !tree.in_tree[e] {
                let rc = tree.reduced_cost(e);
                if rc < best {
                    best = rc;
                    entering = e;
                }
            }
            scanned += 1;
            in_block += 1;
            e += 1;
            if e == arcs {
                e = 0;
            }
            if in_block == block {
                if entering != usize::MAX {
                    break;
                }
                in_block = 0;
            }
        }
        if entering == usize::MAX {
            break;
        }
        next = e;
        tree.pivot(entering);
        pivots += 1;
        if pivots > max_pivots {
            return Err(Error::Solver(format!(
                "network simplex exceeded {max_pivots} pivots"
            )));
        }
    }

    let mut plan = Array2::zeros((na, nb));
    for (arc, slot) in plan.iter_mut().enumerate() {
        *slot = tree.flow[arc];
    }
    Ok((plan, pivots))
}
