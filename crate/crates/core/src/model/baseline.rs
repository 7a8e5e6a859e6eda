use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::BaselineConfig;
use super::trunk::{init_linear, init_trunk, linear, trunk_forward};
use crate::autodiff::{sigmoid, BnMode, BnStats, Graph, Group, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::volume::LabeledCase;

pub const BASELINE_PREFIX: &str = "cnn";

/// Full-volume CNN: conv blocks, then fc(hidden) -> ReLU -> fc(1), with
/// dropout before each fully connected layer while training.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineCnn {
    pub config: BaselineConfig,
    pub params: ParamStore,
    pub bn_stats: Vec<BnStats>,
}

pub struct BaselineForward {
    pub graph: Graph,
    /// `[B]` logits.
    pub logits: Var,
    pub bn_stats: Vec<BnStats>,
}

impl BaselineCnn {
    pub fn new(config: BaselineConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let sup = Group::Supervised;
        let bn_stats = init_trunk(&mut params, BASELINE_PREFIX, &config.trunk, sup, &mut rng)?;
        let flat = config.trunk.output_len(config.volume_side)?;
        init_linear(&mut params, "cnn.fc1", config.fc_hidden, flat, sup, &mut rng)?;
        init_linear(&mut params, "cnn.fc2", 1, config.fc_hidden, sup, &mut rng)?;
        Ok(Self { config, params, bn_stats })
    }

    /// `train` selects batch statistics and dropout (drawn from `rng`).
    pub fn forward(&self, cases: &[&LabeledCase], train: bool, rng: &mut impl Rng) -> Result<BaselineForward> {
        let n = self.config.volume_side;
        for c in cases {
            if c.volume.dims() != [n, n, n] {
                return Err(Error::shape(
                    "baseline_cnn",
                    format!("volume {:?} does not match configured side {n}", c.volume.dims()),
                ));
            }
        }
        let batch = cases.len();
        let mut g = Graph::new();
        let mut voxels = Vec::with_capacity(batch * n * n * n);
        for c in cases {
            voxels.extend(c.volume.voxels().iter().map(|&v| f64::from(v)));
        }
        let x = g.constant(Tensor::new(vec![batch, 1, n, n, n], voxels)?);
        let mut stats = self.bn_stats.clone();
        let mode = if train { BnMode::Train } else { BnMode::Infer };
        let feat = trunk_forward(&mut g, &self.params, BASELINE_PREFIX, &self.config.trunk, x, &mut stats, mode)?;
        let feat = self.dropout(&mut g, feat, train, rng)?;
        let h = linear(&mut g, &self.params, "cnn.fc1", feat)?;
        let h = g.relu(h);
        let h = self.dropout(&mut g, h, train, rng)?;
        let z = linear(&mut g, &self.params, "cnn.fc2", h)?;
        let logits = g.reshape(z, &[batch])?;
        Ok(BaselineForward { graph: g, logits, bn_stats: stats })
    }

    fn dropout(&self, g: &mut Graph, x: Var, train: bool, rng: &mut impl Rng) -> Result<Var> {
        let p = self.config.dropout;
        if !train || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> =
            (0..g.value(x).numel()).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect();
        g.mul_const(x, &Tensor::from_vec(mask))
    }

    /// Probabilities in inference mode, in chunks of `chunk` cases.
    pub fn predict(&self, cases: &[LabeledCase], chunk: usize) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut out = Vec::with_capacity(cases.len());
        for part in cases.chunks(chunk.max(1)) {
            let refs: Vec<&LabeledCase> = part.iter().collect();
            let f = self.forward(&refs, false, &mut rng)?;
            out.extend(f.graph.value(f.logits).data().iter().map(|&z| sigmoid(z)));
        }
        Ok(out)
    }
}
