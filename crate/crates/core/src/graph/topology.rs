use std::rc::Rc;

use super::BipartiteEdgeSet;
use crate::nn::SparseRows;

/// Where one pair lives inside a stacked [`EdgeTopology`].
#[derive(Clone, Debug)]
pub struct PairSlot {
    /// First A-node of this pair in the stacked node space.
    pub a_node_offset: usize,
    pub b_node_offset: usize,
    /// First A→B edge row of this pair in the stacked edge block.
    pub ab_row_offset: usize,
    pub ba_row_offset: usize,
    pub edges: BipartiteEdgeSet,
}

/// Both edge directions of one or more pairs stacked into a single block of
/// rows, so that each network layer runs as one batched operation.
///
/// Row order is `[A→B of pair 0, B→A of pair 0, A→B of pair 1, ...]`, each
/// direction in canonical order. Nodes are addressed in a shared node space
/// (the rows of the stacked feature matrix), which doubles as the segment
/// space for per-node max-pooling.
#[derive(Clone, Debug)]
pub struct EdgeTopology {
    node_count: usize,
    source: Vec<usize>,
    target: Vec<usize>,
    endpoints: Rc<Vec<(usize, usize)>>,
    cross: Rc<SparseRows>,
    slots: Vec<PairSlot>,
}

impl EdgeTopology {
    /// `pairs` holds each pair's edges with the node offsets of its A and B
    /// points inside a node space of `node_count` rows.
    pub fn new(node_count: usize, pairs: Vec<(BipartiteEdgeSet, usize, usize)>) -> Self {
        let mut source = Vec::new();
        let mut target = Vec::new();
        let mut slots = Vec::with_capacity(pairs.len());
        for (edges, a_off, b_off) in pairs {
            let k = edges.k();
            let ab_row_offset = source.len();
            for n in 0..edges.a_count() {
                for &m in edges.a_neighbors(n) {
                    source.push(a_off + n);
                    target.push(b_off + m);
                }
            }
            let ba_row_offset = source.len();
            for m in 0..edges.b_count() {
                for &n in edges.b_neighbors(m) {
                    source.push(b_off + m);
                    target.push(a_off + n);
                }
            }
            debug_assert_eq!(ba_row_offset - ab_row_offset, edges.a_count() * k);
            slots.push(PairSlot {
                a_node_offset: a_off,
                b_node_offset: b_off,
                ab_row_offset,
                ba_row_offset,
                edges,
            });
        }

        let rows = source.len();
        let mut cross = SparseRows::new(rows);
        for slot in &slots {
            let e = &slot.edges;
            push_cross_rows(&mut cross, e.ab_edge_count(), e.k(), slot.ba_row_offset, |p| e.a_reverse(p));
            push_cross_rows(&mut cross, e.ba_edge_count(), e.k(), slot.ab_row_offset, |p| e.b_reverse(p));
        }
        let endpoints = source.iter().copied().zip(target.iter().copied()).collect();
        Self {
            node_count,
            source,
            target,
            endpoints: Rc::new(endpoints),
            cross: Rc::new(cross),
            slots,
        }
    }

    /// Topology of a single pair with A-nodes first, then B-nodes.
    pub fn single(edges: BipartiteEdgeSet) -> Self {
        let (n, m) = (edges.a_count(), edges.b_count());
        Self::new(n + m, vec![(edges, 0, n)])
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn row_count(&self) -> usize {
        self.source.len()
    }

    /// Source node of each stacked edge row (the max-pool segment).
    pub fn source(&self) -> &[usize] {
        &self.source
    }

    pub fn target(&self) -> &[usize] {
        &self.target
    }

    /// `(source, target)` node pairs, one per row.
    pub fn endpoints(&self) -> Rc<Vec<(usize, usize)>> {
        Rc::clone(&self.endpoints)
    }

    /// Maps each edge row to the row(s) supplying its cross-stream partner
    /// feature: the reverse edge when it exists, otherwise the mean over the
    /// existing reverse edges of the same source node, otherwise nothing.
    pub fn cross(&self) -> Rc<SparseRows> {
        Rc::clone(&self.cross)
    }

    pub fn slots(&self) -> &[PairSlot] {
        &self.slots
    }
}

fn push_cross_rows(
    cross: &mut SparseRows,
    edge_count: usize,
    k: usize,
    other_offset: usize,
    reverse: impl Fn(usize) -> Option<usize>,
) {
    for pos in 0..edge_count {
        match reverse(pos) {
            Some(q) => cross.push_row([(other_offset + q, 1.0)]),
            None => {
                let node = pos / k;
                let available: Vec<usize> = (node * k..(node + 1) * k)
                    .filter_map(&reverse)
                    .map(|q| other_offset + q)
                    .collect();
                let w = 1.0 / available.len().max(1) as f64;
                cross.push_row(available.into_iter().map(|r| (r, w)));
            }
        }
    }
}
