//! Exact transport LP by brute force, independent of the Sinkhorn code path.
//!
//! The optimum of a linear program over the transport polytope is attained at a
//! vertex. Vertices are basic feasible solutions whose support is a spanning
//! tree of the bipartite row/column graph (n + m - 1 cells), so enumerating
//! every such cell subset and keeping the feasible ones visits all vertices.
//! For square problems with uniform marginals the vertices are exactly the
//! permutation matrices scaled by 1/n (Birkhoff), which is far cheaper.

#![allow(dead_code)]

/// Minimum of `<pi, C>` over the transport polytope `U(a, b)`.
pub fn exact_ot(cost: &[Vec<f64>], a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let m = b.len();
    let uniform = |v: &[f64]| v.iter().all(|x| (x - v[0]).abs() < 1e-15);
    if n == m && uniform(a) && uniform(b) {
        return permutation_ot(cost);
    }
    let cells: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
    let k = n + m - 1;
    let mut best = f64::INFINITY;
    let mut forest = Forest::new(n + m);
    let mut chosen = Vec::with_capacity(k);
    spanning_trees(&cells, n, k, 0, &mut forest, &mut chosen, &mut |support| {
        if let Some(x) = solve_tree(support, a, b) {
            let c: f64 = support.iter().zip(&x).map(|(&(i, j), v)| v * cost[i][j]).sum();
            best = best.min(c);
        }
    });
    best
}

/// Union-find without path compression so unions can be undone in LIFO order.
struct Forest {
    parent: Vec<usize>,
    size: Vec<usize>,
    history: Vec<Option<usize>>,
}

impl Forest {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), size: vec![1; n], history: Vec::new() }
    }

    fn root(&self, mut x: usize) -> usize {
        while self.parent[x] != x {
            x = self.parent[x];
        }
        x
    }

    /// Joins the sets of `x` and `y`; false (and nothing recorded) if already joined.
    fn union(&mut self, x: usize, y: usize) -> bool {
        let (mut rx, mut ry) = (self.root(x), self.root(y));
        if rx == ry {
            return false;
        }
        if self.size[rx] < self.size[ry] {
            std::mem::swap(&mut rx, &mut ry);
        }
        self.parent[ry] = rx;
        self.size[rx] += self.size[ry];
        self.history.push(Some(ry));
        true
    }

    fn undo(&mut self) {
        if let Some(Some(ry)) = self.history.pop() {
            let rx = self.parent[ry];
            self.size[rx] -= self.size[ry];
            self.parent[ry] = ry;
        }
    }
}

/// Visits every set of `k` cells that forms a spanning tree of the row/column graph.
fn spanning_trees(
    cells: &[(usize, usize)],
    n_rows: usize,
    k: usize,
    start: usize,
    forest: &mut Forest,
    chosen: &mut Vec<(usize, usize)>,
    visit: &mut impl FnMut(&[(usize, usize)]),
) {
    if chosen.len() == k {
        visit(chosen);
        return;
    }
    let need = k - chosen.len();
    for idx in start..=cells.len() - need {
        let (i, j) = cells[idx];
        if !forest.union(i, n_rows + j) {
            continue;
        }
        chosen.push(cells[idx]);
        spanning_trees(cells, n_rows, k, idx + 1, forest, chosen, visit);
        chosen.pop();
        forest.undo();
    }
}

fn subsets(
    cells: &[(usize, usize)],
    k: usize,
    start: usize,
    chosen: &mut Vec<(usize, usize)>,
    visit: &mut impl FnMut(&[(usize, usize)]),
) {
    if chosen.len() == k {
        visit(chosen);
        return;
    }
    let need = k - chosen.len();
    for idx in start..=cells.len() - need {
        chosen.push(cells[idx]);
        subsets(cells, k, idx + 1, chosen, visit);
        chosen.pop();
    }
}

/// Solves the marginal equations restricted to `support` by leaf peeling.
/// Returns `None` if the support is not a spanning tree or the solution is infeasible.
fn solve_tree(support: &[(usize, usize)], a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let mut row_left = a.to_vec();
    let mut col_left = b.to_vec();
    let mut alive = vec![true; support.len()];
    let mut x = vec![0.0; support.len()];
    let mut remaining = support.len();
    while remaining > 0 {
        let mut progressed = false;
        for side in 0..2 {
            let size = if side == 0 { a.len() } else { b.len() };
            for node in 0..size {
                let incident: Vec<usize> = (0..support.len())
                    .filter(|&e| alive[e] && if side == 0 { support[e].0 == node } else { support[e].1 == node })
                    .collect();
                if incident.len() != 1 {
                    continue;
                }
                let e = incident[0];
                let (i, j) = support[e];
                let v = if side == 0 { row_left[i] } else { col_left[j] };
                x[e] = v;
                row_left[i] -= v;
                col_left[j] -= v;
                alive[e] = false;
                remaining -= 1;
                progressed = true;
            }
        }
        if !progressed {
            return None;
        }
    }
    let tol = 1e-12;
    if row_left.iter().chain(&col_left).any(|r| r.abs() > tol) || x.iter().any(|&v| v < -tol) {
        return None;
    }
    Some(x)
}

fn permutation_ot(cost: &[Vec<f64>]) -> f64 {
    let n = cost.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    heap_permutations(n, &mut perm, &mut |p| {
        let c: f64 = p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>() / n as f64;
        best = best.min(c);
    });
    best
}

fn heap_permutations(k: usize, p: &mut Vec<usize>, visit: &mut impl FnMut(&[usize])) {
    if k <= 1 {
        visit(p);
        return;
    }
    for i in 0..k - 1 {
        heap_permutations(k - 1, p, visit);
        if k.is_multiple_of(2) {
            p.swap(i, k - 1);
        } else {
            p.swap(0, k - 1);
        }
    }
    heap_permutations(k - 1, p, visit);
}

#[cfg(test)]
mod self_check {
    use super::*;

    #[test]
    fn vertex_enumeration_agrees_with_permutations() {
        let cost = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        let u = vec![1.0 / 3.0; 3];
        let by_perm = permutation_ot(&cost);
        let cells: Vec<(usize, usize)> = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).collect();
        let mut best = f64::INFINITY;
        subsets(&cells, 5, 0, &mut Vec::new(), &mut |s| {
            if let Some(x) = solve_tree(s, &u, &u) {
                best = best.min(s.iter().zip(&x).map(|(&(i, j), v)| v * cost[i][j]).sum());
            }
        });
        let mut tree_best = f64::INFINITY;
        let mut trees = 0;
        spanning_trees(&cells, 3, 5, 0, &mut Forest::new(6), &mut Vec::new(), &mut |s| {
            trees += 1;
            if let Some(x) = solve_tree(s, &u, &u) {
                tree_best = tree_best.min(s.iter().zip(&x).map(|(&(i, j), v)| v * cost[i][j]).sum());
            }
        });
        // optimal permutation (0->1, 1->0, 2->2): (1 + 2 + 2) / 3
        assert!((by_perm - 5.0 / 3.0).abs() < 1e-12);
        assert!((best - by_perm).abs() < 1e-12);
        assert!((tree_best - by_perm).abs() < 1e-12);
        // K_{3,3} has 3^2 * 3^2 spanning trees
        assert_eq!(trees, 81);
    }
}
