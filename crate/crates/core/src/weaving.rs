//! The edge-selective feature weaving network.
//!
//! `L − 1` feature weaving layers, each a shared set-encoder followed by an
//! edge-selective cross-concatenation, then an output layer that scores every
//! candidate edge and merges both streams into one `N×M` score matrix.
//!
//! Both streams (A→B and B→A edges) are processed as one stacked block; see
//! [`EdgeTopology`]. Since every parameter is shared between the streams,
//! this is the same computation as running the set-encoder twice, except
//! that batch-norm statistics are taken over the edges of both streams.

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{pairwise_similarity, select_topk, EdgeTopology, FeatureSet, SIMILARITY_EPSILON};
use crate::nn::{BatchNorm, Linear, Mode, PRelu, ParamStore, SparseRows, Tape, Tensor, Var};

/// How the two per-stream score matrices combine into one.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MergeSemantics {
    /// Mean over the directions in which the edge exists. A cell is valid
    /// when either direction has the edge.
    #[default]
    PresenceMean,
    /// Plain average of both streams with absent edges at −∞, so a cell is
    /// valid only when both directions have the edge.
    LiteralAverage,
}

impl MergeSemantics {
    pub fn as_str(self) -> &'static str {
        match self {
            MergeSemantics::PresenceMean => "presence-mean",
            MergeSemantics::LiteralAverage => "literal-eq9",
        }
    }
}

impl fmt::Display for MergeSemantics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MergeSemantics {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "presence-mean" => Ok(MergeSemantics::PresenceMean),
            "literal-eq9" => Ok(MergeSemantics::LiteralAverage),
            other => Err(Error::Config(format!(
                "unknown merge semantics {other:?} (expected presence-mean or literal-eq9)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeavingConfig {
    /// Candidate edges per node.
    pub k: usize,
    /// Total layer count: `layers − 1` weaving layers plus the output layer.
    pub layers: usize,
    /// Set-encoder output width; weaving layers emit `2·dg` channels.
    pub dg: usize,
    /// Width of the per-point input features.
    pub df: usize,
    pub merge: MergeSemantics,
    /// Let gradients flow through the similarity slot of the initial edge
    /// features back into the point features.
    pub similarity_grad: bool,
    /// Residual shortcuts across pairs of weaving layers.
    pub residual: bool,
}

impl WeavingConfig {
    pub fn new(k: usize, layers: usize, dg: usize, df: usize) -> Self {
        Self {
            k,
            layers,
            dg,
            df,
            merge: MergeSemantics::default(),
            similarity_grad: true,
            residual: true,
        }
    }

    /// Channel width of every edge feature after the first weaving layer.
    pub fn dz(&self) -> usize {
        2 * self.dg
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers < 2 {
            return Err(Error::Config(format!("layer count L = {} must be at least 2", self.layers)));
        }
        if self.k == 0 || self.dg == 0 || self.df == 0 {
            return Err(Error::Config("K, D_g and D_f must all be positive".into()));
        }
        Ok(())
    }
}

/// One shared set-encoder: `φ¹`, max-pool, `φ²`, batch norm and (except for
/// the output layer) pReLU. A single instance serves both streams.
#[derive(Clone, Debug)]
pub struct WeavingLayer {
    pub phi1: Linear,
    pub phi2: Linear,
    pub bn: BatchNorm,
    pub act: Option<PRelu>,
}

impl WeavingLayer {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_width: usize,
        pooled_width: usize,
        out_width: usize,
        activation: bool,
        rng: &mut R,
    ) -> Self {
        let phi1 = Linear::new(store, &format!("{name}.phi1"), in_width, pooled_width, rng);
        let phi2 = Linear::new(store, &format!("{name}.phi2"), in_width + pooled_width, out_width, rng);
        let bn = BatchNorm::new(store, &format!("{name}.bn"), out_width);
        let act = activation.then(|| PRelu::new(store, &format!("{name}.act"), out_width));
        Self { phi1, phi2, bn, act }
    }
}

/// Placement of one pair's merged score matrix inside the stacked score
/// column produced by [`WeavingNet::forward`].
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreLayout {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub mask: Vec<bool>,
}

/// Merged correspondence scores with an explicit validity mask in place of
/// −∞ entries.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    pub values: Tensor,
    pub mask: Vec<bool>,
}

impl ScoreMatrix {
    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }

    pub fn is_valid(&self, n: usize, m: usize) -> bool {
        self.mask[n * self.cols() + m]
    }

    pub fn get(&self, n: usize, m: usize) -> f64 {
        self.values.get(n, m)
    }

    /// The matrix with rows and columns exchanged, mask included.
    pub fn transpose(&self) -> ScoreMatrix {
        let (r, c) = (self.rows(), self.cols());
        let mut mask = vec![false; r * c];
        for n in 0..r {
            for m in 0..c {
                mask[m * r + n] = self.mask[n * c + m];
            }
        }
        ScoreMatrix {
            values: self.values.transpose(),
            mask,
        }
    }

    pub(crate) fn from_layout(cells: &Tensor, layout: &ScoreLayout) -> ScoreMatrix {
        let n = layout.rows * layout.cols;
        let mut values = cells.data()[layout.offset..layout.offset + n].to_vec();
        for (v, &valid) in values.iter_mut().zip(&layout.mask) {
            if !valid {
                *v = 0.0;
            }
        }
        ScoreMatrix {
            values: Tensor::new(&[layout.rows, layout.cols], values).expect("layout sized"),
            mask: layout.mask.clone(),
        }
    }
}

/// Row-wise argmax over valid cells, ties to the lowest column. Rows without
/// a valid cell map to `None`.
pub fn predict_matches(p: &ScoreMatrix) -> Vec<Option<usize>> {
    (0..p.rows())
        .map(|n| {
            let mut best: Option<usize> = None;
            for m in 0..p.cols() {
                if p.is_valid(n, m) && best.is_none_or(|b| p.get(n, m) > p.get(n, b)) {
                    best = Some(m);
                }
            }
            best
        })
        .collect()
}

/// Candidate edges for a batch of pairs whose features are rows of `features`.
///
/// `pairs` lists, per pair, the first row and row count of A and of B.
pub fn candidate_topology(
    features: &Tensor,
    pairs: &[(usize, usize, usize, usize)],
    k: usize,
) -> Result<EdgeTopology> {
    let mut slots = Vec::with_capacity(pairs.len());
    for &(a_off, n, b_off, m) in pairs {
        let fa = FeatureSet::new(features.select_rows(&(a_off..a_off + n).collect::<Vec<_>>()))?;
        let fb = FeatureSet::new(features.select_rows(&(b_off..b_off + m).collect::<Vec<_>>()))?;
        let s = pairwise_similarity(&fa, &fb)?;
        slots.push((select_topk(&s, k)?, a_off, b_off));
    }
    Ok(EdgeTopology::new(features.rows(), slots))
}

/// Output of one network pass over a batch.
#[derive(Clone, Debug)]
pub struct NetOutput {
    /// Stacked merged scores, one column entry per cell of every pair.
    pub cells: Var,
    pub layouts: Vec<ScoreLayout>,
}

impl NetOutput {
    pub fn score_matrices(&self, tape: &Tape) -> Vec<ScoreMatrix> {
        let cells = tape.value(self.cells);
        self.layouts
            .iter()
            .map(|l| ScoreMatrix::from_layout(cells, l))
            .collect()
    }
}

/// Edge features entering a set-encoder.
#[derive(Clone, Copy, Debug)]
pub enum EdgeInput {
    /// One row per stacked edge.
    Dense(Var),
    /// `cat(f_source, s, f_target)` kept as per-node features plus the
    /// per-edge similarity column, so the first layer never builds the wide
    /// `2·D_f + 1` block.
    Initial { features: Var, similarity: Var },
}

/// Trainable matching network. Parameters live in an external
/// [`ParamStore`]; batch-norm running statistics live here.
#[derive(Clone, Debug)]
pub struct WeavingNet {
    config: WeavingConfig,
    layers: Vec<WeavingLayer>,
}

impl WeavingNet {
    pub fn new<R: Rng + ?Sized>(config: WeavingConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (dg, dz) = (config.dg, config.dz());
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let name = format!("weave.{l}");
            let in_width = if l == 0 { 2 * config.df + 1 } else { dz };
            let layer = if l + 1 == config.layers {
                WeavingLayer::new(store, &name, in_width, dg, 1, false, rng)
            } else {
                WeavingLayer::new(store, &name, in_width, dg, dg, true, rng)
            };
            layers.push(layer);
        }
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &WeavingConfig {
        &self.config
    }

    pub fn layers(&self) -> &[WeavingLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [WeavingLayer] {
        &mut self.layers
    }

    fn similarity_column(&self, tape: &mut Tape, features: Var, topo: &EdgeTopology) -> Result<Var> {
        if tape.value(features).cols() != self.config.df {
            return Err(Error::shape(
                "initial edge features",
                tape.value(features).shape(),
                &[topo.node_count(), self.config.df],
            ));
        }
        let s = tape.inverse_distance(features, topo.endpoints(), SIMILARITY_EPSILON)?;
        if self.config.similarity_grad {
            Ok(s)
        } else {
            let detached = tape.value(s).clone();
            Ok(tape.input(detached))
        }
    }

    /// Initial edge features `cat(f_source, s, f_target)` for every stacked
    /// edge row, materialized.
    pub fn initial_edge_features(&self, tape: &mut Tape, features: Var, topo: &EdgeTopology) -> Result<Var> {
        let s = self.similarity_column(tape, features, topo)?;
        let src = tape.gather_rows(features, topo.source())?;
        let dst = tape.gather_rows(features, topo.target())?;
        tape.concat_cols(&[src, s, dst])
    }

    /// The same initial edge features in factored form.
    pub fn initial_edge_input(&self, tape: &mut Tape, features: Var, topo: &EdgeTopology) -> Result<EdgeInput> {
        let similarity = self.similarity_column(tape, features, topo)?;
        Ok(EdgeInput::Initial { features, similarity })
    }

    /// Shared set-encoder of layer `l` applied to the stacked edge block.
    pub fn shared_set_encode(
        &mut self,
        l: usize,
        tape: &mut Tape,
        store: &ParamStore,
        input: EdgeInput,
        topo: &EdgeTopology,
        mode: Mode,
    ) -> Result<Var> {
        let layer = &mut self.layers[l];
        let projected = edge_linear(&layer.phi1, tape, store, input, None, topo)?;
        let (pooled, _) = tape.segment_max(projected, topo.source(), topo.node_count())?;
        let mixed = edge_linear(&layer.phi2, tape, store, input, Some(pooled), topo)?;
        let normalized = layer.bn.forward(tape, store, mixed, mode)?;
        match &layer.act {
            Some(act) => act.forward(tape, store, normalized),
            None => Ok(normalized),
        }
    }

    /// Appends to every edge row the feature of its reverse edge in the other
    /// stream (or the fallback described on [`EdgeTopology::cross`]).
    pub fn cross_concat(tape: &mut Tape, g: Var, topo: &EdgeTopology) -> Result<Var> {
        let partner = tape.sparse(g, topo.cross())?;
        tape.concat_cols(&[g, partner])
    }

    /// Runs the `L − 1` weaving layers on `input`. With residuals enabled, the
    /// output of layer `l + 1` gains the output of layer `l − 1` for odd `l`
    /// (`FW₂ += FW₀`, `FW₄ += FW₂`, ...).
    pub fn weave_forward(
        &mut self,
        tape: &mut Tape,
        store: &ParamStore,
        input: EdgeInput,
        topo: &EdgeTopology,
        mode: Mode,
    ) -> Result<Var> {
        let mut outputs: Vec<Var> = Vec::with_capacity(self.config.layers - 1);
        let mut z = input;
        for l in 0..self.config.layers - 1 {
            let g = self.shared_set_encode(l, tape, store, z, topo, mode)?;
            let mut next = Self::cross_concat(tape, g, topo)?;
            if self.config.residual && l >= 2 && l % 2 == 0 {
                next = tape.add(next, outputs[l - 2])?;
            }
            outputs.push(next);
            z = EdgeInput::Dense(next);
        }
        Ok(outputs[outputs.len() - 1])
    }

    /// Scores every edge, scatters both streams into per-pair `N×M` blocks and
    /// merges them.
    pub fn output_layer(
        &mut self,
        tape: &mut Tape,
        store: &ParamStore,
        z: Var,
        topo: &EdgeTopology,
        mode: Mode,
    ) -> Result<NetOutput> {
        let last = self.config.layers - 1;
        let scores = self.shared_set_encode(last, tape, store, EdgeInput::Dense(z), topo, mode)?;
        let (map, layouts) = merge_map(topo, self.config.merge);
        let cells = tape.sparse(scores, Rc::new(map))?;
        Ok(NetOutput { cells, layouts })
    }

    /// Full pass from stacked point features to merged scores.
    pub fn forward(
        &mut self,
        tape: &mut Tape,
        store: &ParamStore,
        features: Var,
        topo: &EdgeTopology,
        mode: Mode,
    ) -> Result<NetOutput> {
        let z0 = self.initial_edge_input(tape, features, topo)?;
        let z = self.weave_forward(tape, store, z0, topo, mode)?;
        self.output_layer(tape, store, z, topo, mode)
    }
}

/// `linear([input, pooled_per_edge])` where `pooled` holds one row per node
/// and is broadcast to the edges leaving that node. Node-level parts are
/// multiplied before being gathered onto edges.
fn edge_linear(
    linear: &Linear,
    tape: &mut Tape,
    store: &ParamStore,
    input: EdgeInput,
    pooled: Option<Var>,
    topo: &EdgeTopology,
) -> Result<Var> {
    let w = tape.param(store, linear.weight);
    let b = tape.param(store, linear.bias);
    let pooled_width = pooled.map_or(0, |p| tape.value(p).cols());
    let input_width = match input {
        EdgeInput::Dense(z) => tape.value(z).cols(),
        EdgeInput::Initial { features, .. } => 2 * tape.value(features).cols() + 1,
    };
    if input_width + pooled_width != linear.in_width {
        return Err(Error::shape(
            "edge_linear",
            &[topo.row_count(), input_width + pooled_width],
            &[linear.in_width, linear.out_width],
        ));
    }
    let mut acc = match input {
        EdgeInput::Dense(z) => {
            let wz = if pooled.is_some() { tape.slice_rows(w, 0, input_width)? } else { w };
            tape.linear(z, wz, b)?
        }
        EdgeInput::Initial { features, similarity } => {
            let df = tape.value(features).cols();
            let w_src = tape.slice_rows(w, 0, df)?;
            let w_sim = tape.slice_rows(w, df, 1)?;
            let w_dst = tape.slice_rows(w, df + 1, df)?;
            let node_src = tape.matmul(features, w_src)?;
            let node_dst = tape.matmul(features, w_dst)?;
            let src = tape.gather_rows(node_src, topo.source())?;
            let dst = tape.gather_rows(node_dst, topo.target())?;
            let sim = tape.linear(similarity, w_sim, b)?;
            let both = tape.add(src, dst)?;
            tape.add(both, sim)?
        }
    };
    if let Some(p) = pooled {
        let w_pool = tape.slice_rows(w, input_width, pooled_width)?;
        let node_part = tape.matmul(p, w_pool)?;
        let edge_part = tape.gather_rows(node_part, topo.source())?;
        acc = tape.add(acc, edge_part)?;
    }
    Ok(acc)
}

/// Sparse map from stacked edge scores to stacked `N×M` cells.
fn merge_map(topo: &EdgeTopology, merge: MergeSemantics) -> (SparseRows, Vec<ScoreLayout>) {
    let mut map = SparseRows::new(topo.row_count());
    let mut layouts = Vec::with_capacity(topo.slots().len());
    let mut offset = 0;
    for slot in topo.slots() {
        let e = &slot.edges;
        let (n, m) = (e.a_count(), e.b_count());
        let mut ab = vec![None; n * m];
        let mut ba = vec![None; n * m];
        for i in 0..n {
            for (r, &j) in e.a_neighbors(i).iter().enumerate() {
                ab[i * m + j] = Some(slot.ab_row_offset + i * e.k() + r);
            }
        }
        for j in 0..m {
            for (r, &i) in e.b_neighbors(j).iter().enumerate() {
                ba[i * m + j] = Some(slot.ba_row_offset + j * e.k() + r);
            }
        }
        let mut mask = vec![false; n * m];
        for cell in 0..n * m {
            let present: Vec<usize> = ab[cell].into_iter().chain(ba[cell]).collect();
            let valid = match merge {
                MergeSemantics::PresenceMean => !present.is_empty(),
                MergeSemantics::LiteralAverage => present.len() == 2,
            };
            if valid {
                let w = 1.0 / present.len() as f64;
                map.push_row(present.into_iter().map(|r| (r, w)));
            } else {
                map.push_row([]);
            }
            mask[cell] = valid;
        }
        layouts.push(ScoreLayout {
            offset,
            rows: n,
            cols: m,
            mask,
        });
        offset += n * m;
    }
    (map, layouts)
}
