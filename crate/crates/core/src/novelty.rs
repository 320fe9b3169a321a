//! Random network distillation novelty and per-state update weights.
//!
//! A frozen random target network and a trainable predictor share an input;
//! the squared gap between their embeddings is large for rarely seen states
//! and shrinks wherever the predictor has been trained. Raw novelty is
//! standardized over the batch and clamped to `[1, 3]`, so every sample is
//! learned at least once and no sample is weighted more than three times.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{LossKind, Network, OutputActivation};
use crate::seeding::derive_seed;

/// Weights below/above these bounds are clamped; a degenerate batch
/// (zero standard deviation) maps to all ones.
pub const WEIGHT_MIN: f64 = 1.0;
pub const WEIGHT_MAX: f64 = 3.0;
const STD_FLOOR: f64 = 1e-12;

/// Per-dimension running mean/variance for input normalization.
///
/// Normalized values are clipped to `[-5, 5]`. Before any update the
/// normalizer is the identity (mean 0, variance 1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningNormalizer {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    clip: f64,
}

impl RunningNormalizer {
    pub fn new(dim: usize) -> RunningNormalizer {
        RunningNormalizer {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
            clip: 5.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Population variance per dimension; 1 before any update.
    pub fn variance(&self, d: usize) -> f64 {
        if self.count == 0 {
            1.0
        } else {
            self.m2[d] / self.count as f64
        }
    }

    /// Welford update over every vector in the batch.
    pub fn update_batch(&mut self, states: &[Vec<f64>]) {
        for x in states {
            self.count += 1;
            let n = self.count as f64;
            for d in 0..self.mean.len() {
                let delta = x[d] - self.mean[d];
                self.mean[d] += delta / n;
                self.m2[d] += delta * (x[d] - self.mean[d]);
            }
        }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(d, v)| {
                let denom = (self.variance(d) + 1e-8).sqrt();
                ((v - self.mean[d]) / denom).clamp(-self.clip, self.clip)
            })
            .collect()
    }
}

/// Frozen target plus trainable predictor realizing RND.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NoveltyEstimator {
    target: Network,
    predictor: Network,
    embed_dim: usize,
    normalizer: RunningNormalizer,
}

impl NoveltyEstimator {
    /// Builds target and predictor as `[input, hidden, hidden, embed]`
    /// identity-output networks with independent seeds derived from `seed`.
    pub fn new(input_dim: usize, hidden_dim: usize, embed_dim: usize, seed: u64) -> Result<NoveltyEstimator> {
        let dims = [input_dim, hidden_dim, hidden_dim, embed_dim];
        let target = Network::init(&dims, derive_seed(seed, 0), OutputActivation::Identity)?;
        let predictor = Network::init(&dims, derive_seed(seed, 1), OutputActivation::Identity)?;
        Ok(NoveltyEstimator {
            target,
            predictor,
            embed_dim,
            normalizer: RunningNormalizer::new(input_dim),
        })
    }

    /// Wraps two existing networks (checkpoint loading, tests). They must
    /// agree on input and output dims.
    pub fn from_networks(target: Network, predictor: Network) -> Result<NoveltyEstimator> {
        if target.input_dim() != predictor.input_dim()
            || target.output_dim() != predictor.output_dim()
        {
            return Err(Error::InvalidArgument(
                "target and predictor must share input and embed dims".into(),
            ));
        }
        let embed_dim = target.output_dim();
        let input_dim = target.input_dim();
        Ok(NoveltyEstimator {
            target,
            predictor,
            embed_dim,
            normalizer: RunningNormalizer::new(input_dim),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.target.input_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn target(&self) -> &Network {
        &self.target
    }

    pub fn predictor(&self) -> &Network {
        &self.predictor
    }

    pub fn normalizer(&self) -> &RunningNormalizer {
        &self.normalizer
    }

    /// Copies the frozen target's parameters into the predictor (test and
    /// diagnostic hook: makes every novelty exactly zero).
    pub fn copy_target_into_predictor(&mut self) {
        let params = self.target.params_flat();
        self.predictor
            .set_params_flat(&params)
            .expect("target and predictor are shape-congruent");
    }

    fn check_states(&self, states: &[Vec<f64>]) -> Result<()> {
        if states.is_empty() {
            return Err(Error::InvalidArgument("state batch must be nonempty".into()));
        }
        for s in states {
            if s.len() != self.input_dim() {
                return Err(Error::InvalidArgument(format!(
                    "state length {} does not match estimator input dim {}",
                    s.len(),
                    self.input_dim()
                )));
            }
        }
        Ok(())
    }

    /// Raw novelty per state: `‖predictor(x) - target(x)‖²` after input
    /// normalization. Read-only: neither networks nor normalizer change.
    pub fn novelty_mse(&self, states: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.check_states(states)?;
        states
            .iter()
            .map(|s| {
                let x = self.normalizer.normalize(s);
                let t = self.target.forward(&x)?;
                let p = self.predictor.forward(&x)?;
                Ok(t.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum())
            })
            .collect()
    }

    /// One Adam step on the predictor toward the frozen target.
    ///
    /// Updates the input normalizer from the batch first, then returns the
    /// pre-step mean loss.
    pub fn train_predictor(&mut self, states: &[Vec<f64>], lr: f64) -> Result<f64> {
        self.check_states(states)?;
        self.normalizer.update_batch(states);
        let xs: Vec<Vec<f64>> = states.iter().map(|s| self.normalizer.normalize(s)).collect();
        let targets: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| self.target.forward(x))
            .collect::<Result<_>>()?;
        let unit = vec![1.0; xs.len()];
        let (grads, loss) =
            self.predictor
                .backward_weighted_scalar_loss(LossKind::WeightedMse, &xs, Some(&targets), &unit)?;
        self.predictor.adam_step(&grads, lr, 0.9, 0.999, 1e-8)?;
        Ok(loss)
    }
}

/// The three stages of turning raw novelty into update weights.
#[derive(Clone, Debug, PartialEq)]
pub struct NoveltyWeights {
    pub raw: Vec<f64>,
    pub standardized: Vec<f64>,
    pub clamped: Vec<f64>,
}

/// Standardizes a raw novelty batch (population std) and clamps to `[1, 3]`.
///
/// A batch with standard deviation under `1e-12` (constant or single-element)
/// maps to all ones.
pub fn normalize_and_clamp(raw: &[f64]) -> Result<Vec<f64>> {
    Ok(novelty_weights(raw)?.clamped)
}

/// Like [`normalize_and_clamp`] but keeps the intermediate stages.
pub fn novelty_weights(raw: &[f64]) -> Result<NoveltyWeights> {
    if raw.is_empty() {
        return Err(Error::InvalidArgument("novelty batch must be nonempty".into()));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericInput("novelty batch contains NaN or infinity".into()));
    }
    if raw.iter().any(|v| *v < 0.0) {
        return Err(Error::InvalidArgument("novelty values must be >= 0".into()));
    }
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let std = (raw.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    let (standardized, clamped) = if std < STD_FLOOR {
        (vec![0.0; raw.len()], vec![WEIGHT_MIN; raw.len()])
    } else {
        let standardized: Vec<f64> = raw.iter().map(|v| (v - mean) / std).collect();
        let clamped = standardized.iter().map(|v| clamp_weight(*v)).collect();
        (standardized, clamped)
    };
    Ok(NoveltyWeights {
        raw: raw.to_vec(),
        standardized,
        clamped,
    })
}

pub(crate) fn clamp_weight(v: f64) -> f64 {
    v.clamp(WEIGHT_MIN, WEIGHT_MAX)
}
