//! The Traj2User network.
//!
//! A user id selects a row `e` of the embedding table; the output layer
//! predicts the user's movement descriptor as `sigmoid(W_outᵀ e)`. Training
//! is plain per-segment SGD on the mean binary cross-entropy, and the
//! embedding table is the product.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::factor::CompressionFactor;
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::schema::{MovementDescriptor, UserCorpus};

pub const METHOD_TAG: &str = "traj2user";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Embedding length is `round(|d| / factor)`, at least 1.
    pub factor: CompressionFactor,
    /// Weights start uniform in `(-init_scale, init_scale)`.
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1000,
            learning_rate: 0.025,
            seed: 0,
            factor: CompressionFactor::ONE,
            init_scale: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.init_scale.is_finite() && self.init_scale > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "init scale must be positive, got {}",
                self.init_scale
            )));
        }
        Ok(())
    }

    pub fn embedding_len(&self, dim: usize) -> usize {
        self.factor.round_len(dim)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Traj2UserModel<T> {
    user_index: Vec<String>,
    /// `|U| × k`; row `i` is user `i`'s embedding.
    embeddings: Matrix<T>,
    /// `k × |d|`.
    output: Matrix<T>,
    config: TrainConfig,
}

/// Logistic function, saturating strictly inside `(0, 1)`.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    let raw = if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    };
    let upper = T::one() - T::epsilon() / (T::one() + T::one());
    raw.max(T::min_positive_value()).min(upper)
}

/// Mean binary cross-entropy of a prediction against a 0/1 target.
pub fn loss<T: Scalar>(prediction: &[T], target: &MovementDescriptor) -> Result<T> {
    if prediction.len() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            actual: prediction.len(),
        });
    }
    let mut total = T::zero();
    let mut active = target.active().iter().peekable();
    for (j, &p) in prediction.iter().enumerate() {
        let on = active.next_if_eq(&&j).is_some();
        total = total - if on { p.ln() } else { (T::one() - p).ln() };
    }
    Ok(total / T::of(prediction.len() as f64))
}

impl<T: Scalar> Traj2UserModel<T> {
    /// Fresh model with weights drawn from the config's seeded generator.
    pub fn init(user_index: Vec<String>, dim: usize, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self::init_with(user_index, dim, config, &mut rng))
    }

    fn init_with(
        user_index: Vec<String>,
        dim: usize,
        config: TrainConfig,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let k = config.embedding_len(dim);
        let s = config.init_scale;
        let mut draw = || T::of(rng.random_range(-s..s));
        let embeddings = Matrix::from_fn(user_index.len(), k, |_, _| draw());
        let output = Matrix::from_fn(k, dim, |_, _| draw());
        Traj2UserModel {
            user_index,
            embeddings,
            output,
            config,
        }
    }

    pub fn from_parts(
        user_index: Vec<String>,
        embeddings: Matrix<T>,
        output: Matrix<T>,
        config: TrainConfig,
    ) -> Result<Self> {
        if embeddings.rows() != user_index.len() {
            return Err(Error::DimensionMismatch {
                expected: user_index.len(),
                actual: embeddings.rows(),
            });
        }
        if output.rows() != embeddings.cols() {
            return Err(Error::DimensionMismatch {
                expected: embeddings.cols(),
                actual: output.rows(),
            });
        }
        if !embeddings.is_finite() || !output.is_finite() {
            return Err(Error::DegenerateMatrix("non-finite weight".into()));
        }
        Ok(Traj2UserModel {
            user_index,
            embeddings,
            output,
            config,
        })
    }

    pub fn user_index(&self) -> &[String] {
        &self.user_index
    }

    pub fn embedding_table(&self) -> &Matrix<T> {
        &self.embeddings
    }

    pub fn embedding_table_mut(&mut self) -> &mut Matrix<T> {
        &mut self.embeddings
    }

    pub fn output_layer(&self) -> &Matrix<T> {
        &self.output
    }

    pub fn output_layer_mut(&mut self) -> &mut Matrix<T> {
        &mut self.output
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn k(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn dim(&self) -> usize {
        self.output.cols()
    }

    fn logits(&self, user: usize, z: &mut [T]) {
        z.iter_mut().for_each(|v| *v = T::zero());
        let e = self.embeddings.row(user);
        for (r, &er) in e.iter().enumerate() {
            for (zj, &w) in z.iter_mut().zip(self.output.row(r)) {
                *zj = *zj + er * w;
            }
        }
    }

    /// Predicted descriptor `sigmoid(W_outᵀ e_user)`.
    pub fn forward(&self, user: usize) -> Vec<T> {
        let mut z = vec![T::zero(); self.dim()];
        self.logits(user, &mut z);
        z.into_iter().map(sigmoid).collect()
    }

    pub fn loss(&self, user: usize, target: &MovementDescriptor) -> Result<T> {
        loss(&self.forward(user), target)
    }

    /// Analytic gradients of the loss for one `(user, descriptor)` pair:
    /// `(∂L/∂e_user, ∂L/∂W_out)`. Other embedding rows have zero gradient.
    pub fn gradients(
        &self,
        user: usize,
        target: &MovementDescriptor,
    ) -> Result<(Vec<T>, Matrix<T>)> {
        self.check_target(target)?;
        let delta = self.output_delta(user, target);
        let e = self.embeddings.row(user);
        let grad_e = (0..self.k())
            .map(|r| {
                self.output
                    .row(r)
                    .iter()
                    .zip(&delta)
                    .map(|(&w, &d)| w * d)
                    .sum()
            })
            .collect();
        let grad_out = Matrix::from_fn(self.k(), self.dim(), |r, j| e[r] * delta[j]);
        Ok((grad_e, grad_out))
    }

    /// `∂L/∂z_j = (p_j - t_j) / |d|`.
    fn output_delta(&self, user: usize, target: &MovementDescriptor) -> Vec<T> {
        let mut delta = vec![T::zero(); self.dim()];
        self.logits(user, &mut delta);
        let inv_d = T::one() / T::of(self.dim() as f64);
        for v in delta.iter_mut() {
            *v = sigmoid(*v) * inv_d;
        }
        for &j in target.active() {
            delta[j] = delta[j] - inv_d;
        }
        delta
    }

    fn check_target(&self, target: &MovementDescriptor) -> Result<()> {
        if target.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: target.dim(),
            });
        }
        Ok(())
    }

    /// One SGD step on a single pair. Only row `user` of the embedding table
    /// and the output layer change. Returns `false` if any updated weight
    /// became non-finite.
    pub fn sgd_step(
        &mut self,
        user: usize,
        target: &MovementDescriptor,
        learning_rate: T,
    ) -> Result<bool> {
        self.check_target(target)?;
        let mut delta = vec![T::zero(); self.dim()];
        let mut grad_e = vec![T::zero(); self.k()];
        Ok(self.step_with(user, target, learning_rate, &mut delta, &mut grad_e))
    }

    fn step_with(
        &mut self,
        user: usize,
        target: &MovementDescriptor,
        lr: T,
        delta: &mut [T],
        grad_e: &mut [T],
    ) -> bool {
        self.logits(user, delta);
        let inv_d = T::one() / T::of(delta.len() as f64);
        for v in delta.iter_mut() {
            *v = sigmoid(*v) * inv_d;
        }
        for &j in target.active() {
            delta[j] = delta[j] - inv_d;
        }
        let e = self.embeddings.row(user);
        // Gradient for e uses the pre-update output layer; read then write in one pass.
        for (r, g) in grad_e.iter_mut().enumerate() {
            *g = dot_then_axpy(self.output.row_mut(r), delta, lr * e[r]);
        }
        let mut finite = true;
        for (x, &g) in self.embeddings.row_mut(user).iter_mut().zip(grad_e.iter()) {
            *x = *x - lr * g;
            finite &= x.is_finite();
        }
        finite && grad_e.iter().all(|g| g.is_finite())
    }

    pub fn embeddings(&self) -> EmbeddingMatrix<T> {
        EmbeddingMatrix::new(
            self.user_index.clone(),
            self.embeddings.clone(),
            METHOD_TAG,
            self.config.factor,
        )
        .expect("trained weights are finite and users unique")
    }
}

const LANES: usize = 8;

/// Returns `w · d` for the incoming `w`, then applies `w -= step * d`.
/// Lane-split accumulators let the reduction vectorize; the summation order
/// is fixed, so results stay deterministic.
fn dot_then_axpy<T: Scalar>(w: &mut [T], d: &[T], step: T) -> T {
    let mut acc = [T::zero(); LANES];
    let mut w_chunks = w.chunks_exact_mut(LANES);
    let mut d_chunks = d.chunks_exact(LANES);
    for (wc, dc) in (&mut w_chunks).zip(&mut d_chunks) {
        for l in 0..LANES {
            acc[l] = acc[l] + wc[l] * dc[l];
            wc[l] = wc[l] - step * dc[l];
        }
    }
    let mut tail = T::zero();
    for (wv, &dv) in w_chunks
        .into_remainder()
        .iter_mut()
        .zip(d_chunks.remainder())
    {
        tail = tail + *wv * dv;
        *wv = *wv - step * dv;
    }
    acc.iter().fold(T::zero(), |a, &b| a + b) + tail
}

/// Trains a model on every `(user, descriptor)` pair of the corpus.
pub fn train<T: Scalar>(corpus: &UserCorpus, config: &TrainConfig) -> Result<Traj2UserModel<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Traj2UserModel::init_with(
        corpus.users().to_vec(),
        corpus.dim(),
        config.clone(),
        &mut rng,
    );

    let mut pairs: Vec<(usize, &MovementDescriptor)> = corpus
        .iter()
        .enumerate()
        .flat_map(|(u, (_, ds))| ds.iter().map(move |d| (u, d)))
        .collect();
    let lr = T::of(config.learning_rate);
    let mut delta = vec![T::zero(); model.dim()];
    let mut grad_e = vec![T::zero(); model.k()];
    for epoch in 0..config.epochs {
        pairs.shuffle(&mut rng);
        for &(user, target) in &pairs {
            if !model.step_with(user, target, lr, &mut delta, &mut grad_e) {
                return Err(Error::DivergenceDetected { epoch });
            }
        }
        if !model.output.is_finite() {
            return Err(Error::DivergenceDetected { epoch });
        }
    }
    Ok(model)
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    scalar_bits: u32,
    config: TrainConfig,
    user_index: Vec<String>,
    k: usize,
    dim: usize,
    embeddings: Vec<f64>,
    output: Vec<f64>,
}

const CHECKPOINT_FORMAT: &str = "traj2user-checkpoint";

impl<T: Scalar> Traj2UserModel<T> {
    /// JSON checkpoint; every weight round-trips bit for bit.
    pub fn write_checkpoint<W: Write>(&self, sink: W) -> Result<()> {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: 1,
            scalar_bits: (std::mem::size_of::<T>() * 8) as u32,
            config: self.config.clone(),
            user_index: self.user_index.clone(),
            k: self.k(),
            dim: self.dim(),
            embeddings: self
                .embeddings
                .as_slice()
                .iter()
                .map(|x| x.as_f64())
                .collect(),
            output: self.output.as_slice().iter().map(|x| x.as_f64()).collect(),
        };
        serde_json::to_writer(sink, &ckpt)?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(source: R) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_reader(source)?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != 1 {
            return Err(Error::InvalidConfig(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        if ckpt.scalar_bits as usize != std::mem::size_of::<T>() * 8 {
            return Err(Error::InvalidConfig(format!(
                "checkpoint holds {}-bit weights",
                ckpt.scalar_bits
            )));
        }
        let embeddings = Matrix::from_vec(
            ckpt.user_index.len(),
            ckpt.k,
            ckpt.embeddings.into_iter().map(T::of).collect(),
        )?;
        let output = Matrix::from_vec(
            ckpt.k,
            ckpt.dim,
            ckpt.output.into_iter().map(T::of).collect(),
        )?;
        Self::from_parts(ckpt.user_index, embeddings, output, ckpt.config)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_checkpoint(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_checkpoint(std::io::BufReader::new(file))
    }
}
