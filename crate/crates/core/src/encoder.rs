//! Minimal trainable per-point feature extractor.
//!
//! A shared two-layer perceptron (`3 → 64 → D_f`, pReLU in between) gives
//! each point a local feature; the max-pooled local features of the whole
//! cloud pass through one more linear layer and are added back to every
//! point. Every step is either per-point or a symmetric pooling, so the
//! encoder is permutation-equivariant.

use rand::Rng;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::graph::FeatureSet;
use crate::nn::{Linear, PRelu, ParamStore, Tape, Var};

pub const HIDDEN_WIDTH: usize = 64;

#[derive(Clone, Debug)]
pub struct Encoder {
    pub local1: Linear,
    pub act: PRelu,
    pub local2: Linear,
    pub global: Linear,
    df: usize,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, df: usize, rng: &mut R) -> Self {
        Self {
            local1: Linear::new(store, "encoder.local1", 3, HIDDEN_WIDTH, rng),
            act: PRelu::new(store, "encoder.act", HIDDEN_WIDTH),
            local2: Linear::new(store, "encoder.local2", HIDDEN_WIDTH, df, rng),
            global: Linear::new(store, "encoder.global", df, df, rng),
            df,
        }
    }

    pub fn output_width(&self) -> usize {
        self.df
    }

    /// Encodes a stack of clouds. `cloud_of_row[i]` names the cloud that
    /// stacked point `i` belongs to; global pooling stays within a cloud.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        positions: Var,
        cloud_of_row: &[usize],
        cloud_count: usize,
    ) -> Result<Var> {
        if tape.value(positions).cols() != 3 {
            return Err(Error::shape("encoder", tape.value(positions).shape(), &[cloud_of_row.len(), 3]));
        }
        let hidden = self.local1.forward(tape, store, positions)?;
        let hidden = self.act.forward(tape, store, hidden)?;
        let local = self.local2.forward(tape, store, hidden)?;
        let (pooled, _) = tape.segment_max(local, cloud_of_row, cloud_count)?;
        let global = self.global.forward(tape, store, pooled)?;
        let broadcast = tape.gather_rows(global, cloud_of_row)?;
        tape.add(local, broadcast)
    }

    /// Features of one already-normalized cloud.
    pub fn encode_points(&self, store: &ParamStore, cloud: &PointCloud) -> Result<FeatureSet> {
        let mut tape = Tape::new();
        let x = tape.input(cloud.positions().clone());
        let f = self.forward(&mut tape, store, x, &vec![0; cloud.len()], 1)?;
        FeatureSet::new(tape.value(f).clone())
    }
}
