use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Immutable sparse adjacency in compressed-row form.
///
/// Column indices inside each row are strictly increasing. Raw graphs built
/// with [`build_csr`] carry no self-loops; self-loops only appear in a
/// [`NormalizedAdjacency`] produced with augmentation on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsrGraph {
    num_nodes: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    edge_weight: Vec<f32>,
}

impl CsrGraph {
    /// Assembles a graph from raw CSR arrays, checking every layout invariant.
    pub fn from_parts(
        num_nodes: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        edge_weight: Vec<f32>,
    ) -> Result<Self> {
        if row_ptr.len() != num_nodes + 1 || row_ptr[0] != 0 {
            return Err(Error::shape("csr", "row_ptr must have num_nodes+1 entries starting at 0"));
        }
        if *row_ptr.last().unwrap() != col_idx.len() || col_idx.len() != edge_weight.len() {
            return Err(Error::shape("csr", "row_ptr end, col_idx and edge_weight disagree"));
        }
        for v in 0..num_nodes {
            if row_ptr[v] > row_ptr[v + 1] {
                return Err(Error::shape("csr", format!("row_ptr decreases at {v}")));
            }
            let row = &col_idx[row_ptr[v]..row_ptr[v + 1]];
            for (k, &c) in row.iter().enumerate() {
                if c >= num_nodes {
                    return Err(Error::IndexOutOfRange { index: c, num_nodes });
                }
                if k > 0 && row[k - 1] >= c {
                    return Err(Error::shape("csr", format!("row {v} not strictly increasing")));
                }
            }
        }
        Ok(CsrGraph {
            num_nodes,
            row_ptr,
            col_idx,
            edge_weight,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Number of stored (directed) entries.
    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn edge_weight(&self) -> &[f32] {
        &self.edge_weight
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[v]..self.row_ptr[v + 1]]
    }

    pub fn weights(&self, v: usize) -> &[f32] {
        &self.edge_weight[self.row_ptr[v]..self.row_ptr[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.row_ptr[v + 1] - self.row_ptr[v]
    }

    pub fn weight(&self, u: usize, v: usize) -> Option<f32> {
        let row = self.neighbors(u);
        row.binary_search(&v)
            .ok()
            .map(|k| self.edge_weight[self.row_ptr[u] + k])
    }

    pub fn has_self_loops(&self) -> bool {
        (0..self.num_nodes).any(|v| self.neighbors(v).binary_search(&v).is_ok())
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.num_nodes).all(|u| {
            self.neighbors(u)
                .iter()
                .zip(self.weights(u))
                .all(|(&v, &w)| self.weight(v, u) == Some(w))
        })
    }

    /// Undirected edge list `(u, v)` with `u < v`.
    pub fn undirected_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for u in 0..self.num_nodes {
            for &v in self.neighbors(u) {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> CsrGraph {
        let mut triples: Vec<(usize, usize, f32)> = Vec::with_capacity(self.nnz());
        for u in 0..self.num_nodes {
            for (&v, &w) in self.neighbors(u).iter().zip(self.weights(u)) {
                triples.push((v, u, w));
            }
        }
        from_sorted_triples(self.num_nodes, triples)
    }

    /// Disjoint union; node ids of graph `k` are offset by the sizes of graphs `0..k`.
    pub fn disjoint_union(graphs: &[&CsrGraph]) -> CsrGraph {
        let total: usize = graphs.iter().map(|g| g.num_nodes).sum();
        let mut row_ptr = Vec::with_capacity(total + 1);
        let mut col_idx = Vec::new();
        let mut edge_weight = Vec::new();
        row_ptr.push(0);
        let mut offset = 0;
        for g in graphs {
            for v in 0..g.num_nodes {
                col_idx.extend(g.neighbors(v).iter().map(|&c| c + offset));
                edge_weight.extend_from_slice(g.weights(v));
                row_ptr.push(col_idx.len());
            }
            offset += g.num_nodes;
        }
        CsrGraph {
            num_nodes: total,
            row_ptr,
            col_idx,
            edge_weight,
        }
    }

    /// Dense `N x N` copy, for small-graph oracles and debugging.
    pub fn to_dense(&self) -> Vec<Vec<f32>> {
        let mut m = vec![vec![0.0; self.num_nodes]; self.num_nodes];
        for (u, row) in m.iter_mut().enumerate() {
            for (&v, &w) in self.neighbors(u).iter().zip(self.weights(u)) {
                row[v] = w;
            }
        }
        m
    }
}

fn from_sorted_triples(num_nodes: usize, mut triples: Vec<(usize, usize, f32)>) -> CsrGraph {
    triples.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    triples.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
    let mut row_ptr = vec![0; num_nodes + 1];
    for &(u, _, _) in &triples {
        row_ptr[u + 1] += 1;
    }
    for v in 0..num_nodes {
        row_ptr[v + 1] += row_ptr[v];
    }
    CsrGraph {
        num_nodes,
        row_ptr,
        col_idx: triples.iter().map(|t| t.1).collect(),
        edge_weight: triples.iter().map(|t| t.2).collect(),
    }
}

/// Builds a unit-weight CSR graph from an edge list.
///
/// Duplicate edges collapse to one entry. With `symmetric` set, every `(u, v)`
/// also inserts `(v, u)`.
pub fn build_csr(edges: &[(usize, usize)], num_nodes: usize, symmetric: bool) -> Result<CsrGraph> {
    let mut triples = Vec::with_capacity(edges.len() * if symmetric { 2 } else { 1 });
    for &(u, v) in edges {
        for idx in [u, v] {
            if idx >= num_nodes {
                return Err(Error::IndexOutOfRange {
                    index: idx,
                    num_nodes,
                });
            }
        }
        if u == v {
            return Err(Error::SelfLoopRejected(u));
        }
        triples.push((u, v, 1.0));
        if symmetric {
            triples.push((v, u, 1.0));
        }
    }
    Ok(from_sorted_triples(num_nodes, triples))
}

/// Degree-normalized adjacency `D^-1/2 (A [+ I]) D^-1/2` with materialized weights.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedAdjacency {
    graph: CsrGraph,
    transpose: Option<CsrGraph>,
    self_loops_added: bool,
}

impl NormalizedAdjacency {
    pub fn graph(&self) -> &CsrGraph {
        &self.graph
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes
    }

    pub fn self_loops_added(&self) -> bool {
        self.self_loops_added
    }

    pub fn weight(&self, u: usize, v: usize) -> Option<f32> {
        self.graph.weight(u, v)
    }

    /// `out = A x` where `x` is `N x cols` row-major. Rows are independent and
    /// each row accumulates in ascending column order.
    pub fn spmm(&self, x: &[f32], cols: usize, out: &mut [f32]) {
        spmm(&self.graph, x, cols, out)
    }

    /// `out = A^T x`, the backward of [`spmm`](Self::spmm).
    pub fn spmm_transpose(&self, x: &[f32], cols: usize, out: &mut [f32]) {
        spmm(self.transpose.as_ref().unwrap_or(&self.graph), x, cols, out)
    }

    /// Wraps an already-normalized graph (e.g. a batch union).
    pub fn from_graph(graph: CsrGraph, self_loops_added: bool) -> Self {
        let transpose = if graph.is_symmetric() {
            None
        } else {
            Some(graph.transpose())
        };
        NormalizedAdjacency {
            graph,
            transpose,
            self_loops_added,
        }
    }

    pub fn into_shared(self) -> Arc<Self> {
        Arc::new(self)
    }
}

fn spmm(g: &CsrGraph, x: &[f32], cols: usize, out: &mut [f32]) {
    let n = g.num_nodes;
    debug_assert_eq!(x.len(), n * cols);
    debug_assert_eq!(out.len(), n * cols);
    if cols == 0 {
        return;
    }
    // f64 accumulation keeps results independent of neighbor order up to
    // the final rounding, so relabeled graphs aggregate identically.
    out.par_chunks_mut(cols).enumerate().for_each_init(
        || vec![0.0f64; cols],
        |acc, (v, row)| {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for (&u, &w) in g.neighbors(v).iter().zip(g.weights(v)) {
                let src = &x[u * cols..(u + 1) * cols];
                for (a, &s) in acc.iter_mut().zip(src) {
                    *a += w as f64 * s as f64;
                }
            }
            for (o, &a) in row.iter_mut().zip(acc.iter()) {
                *o = a as f32;
            }
        },
    );
}

/// Symmetric degree normalization: `weight(u, v) = 1 / sqrt(d_u * d_v)`, with
/// degrees counted after optional self-loop augmentation.
pub fn sym_normalize(g: &CsrGraph, add_self_loops: bool) -> Result<NormalizedAdjacency> {
    let n = g.num_nodes;
    let mut triples: Vec<(usize, usize, f32)> = Vec::with_capacity(g.nnz() + n);
    for u in 0..n {
        for (&v, &w) in g.neighbors(u).iter().zip(g.weights(u)) {
            if u != v {
                triples.push((u, v, w));
            }
        }
        if add_self_loops {
            triples.push((u, u, 1.0));
        }
    }
    let aug = from_sorted_triples(n, triples);
    let degree: Vec<f32> = (0..n).map(|v| aug.weights(v).iter().sum()).collect();
    if let Some(v) = degree.iter().position(|&d| d <= 0.0) {
        return Err(Error::IsolatedNode(v));
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|&d| 1.0 / (d as f64).sqrt()).collect();
    let mut weights = Vec::with_capacity(aug.nnz());
    for u in 0..n {
        for (&v, &w) in aug.neighbors(u).iter().zip(aug.weights(u)) {
            weights.push((w as f64 * inv_sqrt[u] * inv_sqrt[v]) as f32);
        }
    }
    let graph = CsrGraph {
        num_nodes: n,
        row_ptr: aug.row_ptr,
        col_idx: aug.col_idx,
        edge_weight: weights,
    };
    Ok(NormalizedAdjacency::from_graph(graph, add_self_loops))
}

/// Relabels node `i` as `perm[i]`.
pub fn permute(g: &CsrGraph, perm: &[usize]) -> Result<CsrGraph> {
    let n = g.num_nodes;
    check_bijection(perm, n)?;
    let mut triples = Vec::with_capacity(g.nnz());
    for u in 0..n {
        for (&v, &w) in g.neighbors(u).iter().zip(g.weights(u)) {
            triples.push((perm[u], perm[v], w));
        }
    }
    Ok(from_sorted_triples(n, triples))
}

pub(crate) fn check_bijection(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::NotABijection(n));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::NotABijection(n));
        }
        seen[p] = true;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> CsrGraph {
        build_csr(&[(0, 1), (1, 2)], 3, true).unwrap()
    }

    #[test]
    fn builds_path_graph() {
        let g = path3();
        assert_eq!(g.row_ptr(), &[0, 1, 3, 4]);
        assert_eq!(g.col_idx(), &[1, 0, 2, 1]);
        assert!(g.is_symmetric());
        assert!(!g.has_self_loops());
    }

    #[test]
    fn empty_graph() {
        let g = build_csr(&[], 2, true).unwrap();
        assert_eq!(g.row_ptr(), &[0, 0, 0]);
        assert!(g.col_idx().is_empty());
    }

    #[test]
    fn rejects_self_loop_and_bad_index() {
        assert!(matches!(build_csr(&[(0, 0)], 1, true), Err(Error::SelfLoopRejected(0))));
        assert!(matches!(
            build_csr(&[(0, 3)], 3, true),
            Err(Error::IndexOutOfRange { index: 3, .. })
        ));
    }

    #[test]
    fn deduplicates() {
        let g = build_csr(&[(0, 1), (1, 0), (0, 1)], 2, true).unwrap();
        assert_eq!(g.nnz(), 2);
    }

    #[test]
    fn normalize_path_with_loops() {
        let a = sym_normalize(&path3(), true).unwrap();
        let w = a.weight(0, 1).unwrap();
        assert!((w - 1.0 / 6f32.sqrt()).abs() < 1e-6);
        assert!((w - 0.40825).abs() < 1e-5);
        assert!((a.weight(0, 0).unwrap() - 0.5).abs() < 1e-7);
    }

    #[test]
    fn normalize_single_edge_without_loops() {
        let g = build_csr(&[(0, 1)], 2, true).unwrap();
        let a = sym_normalize(&g, false).unwrap();
        assert_eq!(a.weight(0, 1), Some(1.0));
        assert!(!a.self_loops_added());
    }

    #[test]
    fn normalize_k3_uniform_third() {
        let g = build_csr(&[(0, 1), (1, 2), (0, 2)], 3, true).unwrap();
        let a = sym_normalize(&g, true).unwrap();
        for u in 0..3 {
            for v in 0..3 {
                assert!((a.weight(u, v).unwrap() - 1.0 / 3.0).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn isolated_node_policy() {
        let g = build_csr(&[(0, 1)], 3, true).unwrap();
        assert!(matches!(sym_normalize(&g, false), Err(Error::IsolatedNode(2))));
        let a = sym_normalize(&g, true).unwrap();
        assert_eq!(a.graph().neighbors(2), &[2]);
        assert_eq!(a.weight(2, 2), Some(1.0));
    }

    #[test]
    fn permute_reversal_of_path() {
        let g = path3();
        let p = permute(&g, &[2, 1, 0]).unwrap();
        assert_eq!(p, g);
        let mut deg: Vec<_> = (0..3).map(|v| p.degree(v)).collect();
        deg.sort();
        assert_eq!(deg, vec![1, 1, 2]);
        assert_eq!(permute(&g, &[0, 1, 2]).unwrap(), g);
        assert!(matches!(permute(&g, &[0, 0, 1]), Err(Error::NotABijection(3))));
    }

    #[test]
    fn union_offsets_nodes() {
        let a = build_csr(&[(0, 1)], 2, true).unwrap();
        let u = CsrGraph::disjoint_union(&[&a, &a]);
        assert_eq!(u.num_nodes(), 4);
        assert_eq!(u.neighbors(2), &[3]);
        assert!(u.is_symmetric());
    }
}
