use std::cmp::Ordering;

use super::{FeatureSet, SimilarityMatrix};
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Candidate edges in both directions between clouds A (`N` points) and B
/// (`M` points).
///
/// Edges are addressed by position in canonical order: source-major,
/// neighbor-rank-minor. The A→B edge at position `n·K + r` goes from A-node
/// `n` to its `r`-th most similar B-node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BipartiteEdgeSet {
    k: usize,
    a_count: usize,
    b_count: usize,
    a_neighbors: Vec<usize>,
    b_neighbors: Vec<usize>,
    a_reverse: Vec<Option<usize>>,
    b_reverse: Vec<Option<usize>>,
}

impl BipartiteEdgeSet {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn a_count(&self) -> usize {
        self.a_count
    }

    pub fn b_count(&self) -> usize {
        self.b_count
    }

    /// N(n): the K B-nodes connected from A-node `n`, most similar first.
    pub fn a_neighbors(&self, n: usize) -> &[usize] {
        &self.a_neighbors[n * self.k..(n + 1) * self.k]
    }

    pub fn b_neighbors(&self, m: usize) -> &[usize] {
        &self.b_neighbors[m * self.k..(m + 1) * self.k]
    }

    /// Position in B→A of the reverse of the A→B edge at `pos`, if present.
    pub fn a_reverse(&self, pos: usize) -> Option<usize> {
        self.a_reverse[pos]
    }

    pub fn b_reverse(&self, pos: usize) -> Option<usize> {
        self.b_reverse[pos]
    }

    pub fn ab_edge_count(&self) -> usize {
        self.a_neighbors.len()
    }

    pub fn ba_edge_count(&self) -> usize {
        self.b_neighbors.len()
    }

    /// Position of A→B edge `(n, m)`, if it exists.
    pub fn ab_position(&self, n: usize, m: usize) -> Option<usize> {
        self.a_neighbors(n).iter().position(|&t| t == m).map(|r| n * self.k + r)
    }

    /// Position of B→A edge `(m, n)`, if it exists.
    pub fn ba_position(&self, m: usize, n: usize) -> Option<usize> {
        self.b_neighbors(m).iter().position(|&t| t == n).map(|r| m * self.k + r)
    }

    /// The same graph seen with A and B exchanged.
    pub fn swapped(&self) -> BipartiteEdgeSet {
        BipartiteEdgeSet {
            k: self.k,
            a_count: self.b_count,
            b_count: self.a_count,
            a_neighbors: self.b_neighbors.clone(),
            b_neighbors: self.a_neighbors.clone(),
            a_reverse: self.b_reverse.clone(),
            b_reverse: self.a_reverse.clone(),
        }
    }
}

/// Indices of the `k` largest entries of `row`, descending, ties to the
/// lower index.
fn top_k_row(row: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    let by_similarity = |a: &usize, b: &usize| -> Ordering {
        row[*b]
            .partial_cmp(&row[*a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(b))
    };
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, by_similarity);
        idx.truncate(k);
    }
    idx.sort_by(by_similarity);
    idx
}

fn reverse_positions(forward: &[usize], backward: &[usize], k: usize) -> Vec<Option<usize>> {
    forward
        .iter()
        .enumerate()
        .map(|(pos, &target)| {
            let source = pos / k;
            backward[target * k..(target + 1) * k]
                .iter()
                .position(|&t| t == source)
                .map(|r| target * k + r)
        })
        .collect()
}

/// Keeps, for every node on either side, its `k` most similar nodes on the
/// other side.
pub fn select_topk(s: &SimilarityMatrix, k: usize) -> Result<BipartiteEdgeSet> {
    let (n, m) = (s.rows(), s.cols());
    if k == 0 || k > m || k > n {
        return Err(Error::Config(format!(
            "K = {k} must lie in [1, min(N, M)] for N = {n}, M = {m}"
        )));
    }
    let mut a_neighbors = Vec::with_capacity(n * k);
    for i in 0..n {
        a_neighbors.extend(top_k_row(s.values().row(i), k));
    }
    let st = s.values().transpose();
    let mut b_neighbors = Vec::with_capacity(m * k);
    for j in 0..m {
        b_neighbors.extend(top_k_row(st.row(j), k));
    }
    let a_reverse = reverse_positions(&a_neighbors, &b_neighbors, k);
    let b_reverse = reverse_positions(&b_neighbors, &a_neighbors, k);
    Ok(BipartiteEdgeSet {
        k,
        a_count: n,
        b_count: m,
        a_neighbors,
        b_neighbors,
        a_reverse,
        b_reverse,
    })
}

/// Edge features of one direction, one row per edge in canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeFeatureBlock {
    pub rows: Tensor,
}

/// `z = cat(f_source, s, f_target)` for every candidate edge of both
/// directions.
pub fn init_edge_features(
    fa: &FeatureSet,
    fb: &FeatureSet,
    s: &SimilarityMatrix,
    edges: &BipartiteEdgeSet,
) -> Result<(EdgeFeatureBlock, EdgeFeatureBlock)> {
    if fa.point_count() != edges.a_count()
        || fb.point_count() != edges.b_count()
        || s.rows() != edges.a_count()
        || s.cols() != edges.b_count()
    {
        return Err(Error::Structure(
            "edge set, similarity and feature sets disagree on point counts".into(),
        ));
    }
    if fa.dim() != fb.dim() {
        return Err(Error::shape("init_edge_features", fa.tensor().shape(), fb.tensor().shape()));
    }
    let width = 2 * fa.dim() + 1;
    let k = edges.k();

    let build = |src: &FeatureSet, dst: &FeatureSet, neighbors: &dyn Fn(usize) -> Vec<usize>, sim: &dyn Fn(usize, usize) -> f64| {
        let mut data = Vec::with_capacity(src.point_count() * k * width);
        for i in 0..src.point_count() {
            for j in neighbors(i) {
                data.extend_from_slice(src.row(i));
                data.push(sim(i, j));
                data.extend_from_slice(dst.row(j));
            }
        }
        Tensor::new(&[src.point_count() * k, width], data)
    };
    let ab = build(fa, fb, &|i| edges.a_neighbors(i).to_vec(), &|i, j| s.get(i, j))?;
    let ba = build(fb, fa, &|j| edges.b_neighbors(j).to_vec(), &|j, i| s.get(i, j))?;
    Ok((EdgeFeatureBlock { rows: ab }, EdgeFeatureBlock { rows: ba }))
}
