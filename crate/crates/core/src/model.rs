//! The complete matcher: point encoder followed by the weaving network, with
//! one parameter store and checkpoint support.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cloud::PointCloud;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::graph::{EdgeTopology, FeatureSet};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{Mode, ParamStore, Tape, Tensor, Var};
use crate::weaving::{candidate_topology, MergeSemantics, NetOutput, ScoreMatrix, WeavingConfig, WeavingNet};

/// Result of one batched forward pass.
#[derive(Clone, Debug)]
pub struct BatchForward {
    /// Stacked point features `[A₀; B₀; A₁; B₁; ...]`.
    pub features: Var,
    pub topology: EdgeTopology,
    pub output: NetOutput,
}

impl BatchForward {
    pub fn score_matrices(&self, tape: &Tape) -> Vec<ScoreMatrix> {
        self.output.score_matrices(tape)
    }
}

/// Row offsets `(a_off, n, b_off, m)` of each pair in the stacked layout.
pub fn stacked_layout(sizes: &[(usize, usize)]) -> Vec<(usize, usize, usize, usize)> {
    let mut offset = 0;
    sizes
        .iter()
        .map(|&(n, m)| {
            let entry = (offset, n, offset + n, m);
            offset += n + m;
            entry
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct Esfw {
    store: ParamStore,
    encoder: Encoder,
    net: WeavingNet,
}

impl Esfw {
    /// Fresh model with parameters drawn from `seed`.
    pub fn new(config: WeavingConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, config.df, &mut rng);
        let net = WeavingNet::new(config, &mut store, &mut rng)?;
        Ok(Self { store, encoder, net })
    }

    pub fn config(&self) -> &WeavingConfig {
        self.net.config()
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn net(&self) -> &WeavingNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut WeavingNet {
        &mut self.net
    }

    /// Forward from stacked, already-normalized positions.
    pub fn forward_positions(
        &mut self,
        tape: &mut Tape,
        positions: Var,
        sizes: &[(usize, usize)],
        mode: Mode,
    ) -> Result<BatchForward> {
        run_positions(&self.encoder, &mut self.net, &self.store, tape, positions, sizes, mode)
    }

    /// Like [`Esfw::forward_positions`] but reading parameter values from
    /// `store`, which must have been cloned from this model's store.
    pub fn forward_positions_with(
        &mut self,
        store: &ParamStore,
        tape: &mut Tape,
        positions: Var,
        sizes: &[(usize, usize)],
        mode: Mode,
    ) -> Result<BatchForward> {
        if store.len() != self.store.len() {
            return Err(Error::Structure(format!(
                "parameter store has {} entries, model has {}",
                store.len(),
                self.store.len()
            )));
        }
        run_positions(&self.encoder, &mut self.net, store, tape, positions, sizes, mode)
    }

    /// Forward from stacked point features, bypassing the encoder.
    pub fn forward_features(
        &mut self,
        tape: &mut Tape,
        features: Var,
        sizes: &[(usize, usize)],
        mode: Mode,
    ) -> Result<BatchForward> {
        run_features(&mut self.net, &self.store, tape, features, &stacked_layout(sizes), mode)
    }

    /// Normalizes and stacks the clouds of each pair, then runs the model.
    pub fn forward_clouds(
        &mut self,
        tape: &mut Tape,
        pairs: &[(&PointCloud, &PointCloud)],
        mode: Mode,
    ) -> Result<BatchForward> {
        let (positions, sizes) = stack_clouds(pairs);
        let x = tape.input(positions);
        self.forward_positions(tape, x, &sizes, mode)
    }

    /// Eval-mode score matrix for one pair.
    pub fn score_pair(&mut self, a: &PointCloud, b: &PointCloud) -> Result<ScoreMatrix> {
        let mut tape = Tape::new();
        let out = self.forward_clouds(&mut tape, &[(a, b)], Mode::Eval)?;
        Ok(out.score_matrices(&tape).remove(0))
    }

    /// Encoder features of one cloud after normalization.
    pub fn encode(&self, cloud: &PointCloud) -> Result<FeatureSet> {
        self.encoder.encode_points(&self.store, &cloud.normalized())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let c = self.config();
        let config = vec![
            ("k".to_string(), c.k.to_string()),
            ("layers".to_string(), c.layers.to_string()),
            ("dg".to_string(), c.dg.to_string()),
            ("df".to_string(), c.df.to_string()),
            ("merge".to_string(), c.merge.to_string()),
            ("similarity_grad".to_string(), c.similarity_grad.to_string()),
            ("residual".to_string(), c.residual.to_string()),
        ];
        let mut tensors: Vec<(String, Tensor)> = self
            .store
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect();
        for (l, layer) in self.net.layers().iter().enumerate() {
            tensors.push((format!("weave.{l}.bn.running_mean"), layer.bn.state.running_mean.clone()));
            tensors.push((format!("weave.{l}.bn.running_var"), layer.bn.state.running_var.clone()));
        }
        Checkpoint { config, tensors }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let get = |key: &str| -> Result<&str> {
            ck.config_value(key)
                .ok_or_else(|| Error::Checkpoint(format!("missing config.{key}")))
        };
        let num = |key: &str| -> Result<usize> {
            get(key)?
                .parse()
                .map_err(|e| Error::Checkpoint(format!("config.{key}: {e}")))
        };
        let flag = |key: &str| -> Result<bool> {
            get(key)?
                .parse()
                .map_err(|e| Error::Checkpoint(format!("config.{key}: {e}")))
        };
        let mut config = WeavingConfig::new(num("k")?, num("layers")?, num("dg")?, num("df")?);
        config.merge = get("merge")?.parse::<MergeSemantics>()?;
        config.similarity_grad = flag("similarity_grad")?;
        config.residual = flag("residual")?;

        let mut model = Esfw::new(config, 0)?;
        let expected = model.store.len() + 2 * model.net.layers().len();
        if ck.tensors.len() != expected {
            return Err(Error::Checkpoint(format!(
                "architecture expects {expected} tensors, checkpoint has {}",
                ck.tensors.len()
            )));
        }
        for p in model.store.iter_mut() {
            let t = ck
                .tensor(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {}", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "{}: shape {:?}, architecture expects {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        for (l, layer) in model.net.layers_mut().iter_mut().enumerate() {
            for (suffix, slot) in [
                ("running_mean", &mut layer.bn.state.running_mean),
                ("running_var", &mut layer.bn.state.running_var),
            ] {
                let name = format!("weave.{l}.bn.{suffix}");
                let t = ck
                    .tensor(&name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
                if t.shape() != slot.shape() {
                    return Err(Error::Checkpoint(format!("{name}: shape mismatch")));
                }
                *slot = t.clone();
            }
        }
        Ok(model)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.to_checkpoint().write(dir)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(dir)?)
    }
}

fn run_positions(
    encoder: &Encoder,
    net: &mut WeavingNet,
    store: &ParamStore,
    tape: &mut Tape,
    positions: Var,
    sizes: &[(usize, usize)],
    mode: Mode,
) -> Result<BatchForward> {
    let layout = stacked_layout(sizes);
    let total: usize = sizes.iter().map(|(n, m)| n + m).sum();
    if tape.value(positions).rows() != total {
        return Err(Error::shape("forward_positions", tape.value(positions).shape(), &[total, 3]));
    }
    let mut cloud_of_row = Vec::with_capacity(total);
    for (p, &(n, m)) in sizes.iter().enumerate() {
        cloud_of_row.extend(std::iter::repeat_n(2 * p, n));
        cloud_of_row.extend(std::iter::repeat_n(2 * p + 1, m));
    }
    let features = encoder.forward(tape, store, positions, &cloud_of_row, 2 * sizes.len())?;
    run_features(net, store, tape, features, &layout, mode)
}

fn run_features(
    net: &mut WeavingNet,
    store: &ParamStore,
    tape: &mut Tape,
    features: Var,
    layout: &[(usize, usize, usize, usize)],
    mode: Mode,
) -> Result<BatchForward> {
    let topology = candidate_topology(tape.value(features), layout, net.config().k)?;
    tape.note_discrete(topology.target().iter().map(|&t| t as u64));
    let output = net.forward(tape, store, features, &topology, mode)?;
    Ok(BatchForward {
        features,
        topology,
        output,
    })
}

/// Normalized positions of every pair stacked `[A₀; B₀; A₁; B₁; ...]`, plus
/// the `(N, M)` sizes.
pub fn stack_clouds(pairs: &[(&PointCloud, &PointCloud)]) -> (Tensor, Vec<(usize, usize)>) {
    let mut data = Vec::new();
    let mut sizes = Vec::with_capacity(pairs.len());
    for (a, b) in pairs {
        for cloud in [a, b] {
            data.extend_from_slice(cloud.normalized().positions().data());
        }
        sizes.push((a.len(), b.len()));
    }
    let rows = data.len() / 3;
    (Tensor::new(&[rows, 3], data).expect("3 columns"), sizes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_restores_outputs() {
        let mut config = WeavingConfig::new(3, 3, 4, 6);
        config.merge = MergeSemantics::LiteralAverage;
        let mut model = Esfw::new(config, 11).unwrap();
        let a = PointCloud::from_points(&[
            [0.0, 0.0, 0.0],
            [1.0, 0.2, 0.0],
            [0.3, 1.0, 0.1],
            [0.5, 0.5, 0.9],
        ])
        .unwrap();
        let b = a.select(&[2, 0, 3, 1]);
        // Populate running statistics.
        let mut tape = Tape::new();
        model.forward_clouds(&mut tape, &[(&a, &b)], Mode::Train).unwrap();

        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path()).unwrap();
        let mut restored = Esfw::load(dir.path()).unwrap();
        assert_eq!(restored.config(), model.config());
        let p1 = model.score_pair(&a, &b).unwrap();
        let p2 = restored.score_pair(&a, &b).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn checkpoint_with_other_architecture_is_rejected() {
        let model = Esfw::new(WeavingConfig::new(3, 3, 4, 6), 1).unwrap();
        let mut ck = model.to_checkpoint();
        for (k, v) in &mut ck.config {
            if k == "dg" {
                *v = "5".into();
            }
        }
        assert!(matches!(Esfw::from_checkpoint(&ck), Err(Error::Checkpoint(_))));
    }
}
