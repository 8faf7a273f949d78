//! Branch/trunk operator network mapping `(coefficient, state)` to the
//! boundary control, usable either as a scalar controller or as a feature
//! extractor emitting the branch⊙trunk basis weights.

use std::path::Path;

use crate::dataset::Dataset;
use crate::env::BenchmarkKind;
use crate::error::{Error, Result};
use crate::nn::{Activation, Checkpoint, DenseNet, ForwardCache, Optimizer, OptimizerKind, Parameters};
use crate::numerics::Rng;

/// Query coordinate at which the trunk is evaluated: the actuated boundary.
pub const CONTROL_QUERY: f64 = 1.0;

/// Fixed divisor applied to state samples before they enter the branch.
pub const STATE_INPUT_SCALE: f64 = 10.0;

#[derive(Clone, Debug, PartialEq)]
pub struct DeepONetConfig {
    pub latent_dim: usize,
    pub branch_hidden: Vec<usize>,
    pub trunk_hidden: Vec<usize>,
}

impl Default for DeepONetConfig {
    fn default() -> Self {
        DeepONetConfig {
            latent_dim: 64,
            branch_hidden: vec![128, 128],
            trunk_hidden: vec![64, 64],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeepONet {
    n_points: usize,
    pub branch: DenseNet,
    pub trunk: DenseNet,
    pub output_bias: f64,
    coeff_scale: f64,
    state_scale: f64,
}

/// Intermediates of a batched feature pass.
#[derive(Clone, Debug)]
pub struct DeepONetCache {
    batch: usize,
    branch: ForwardCache,
    trunk: ForwardCache,
    branch_out: Vec<f64>,
    trunk_out: Vec<f64>,
}

impl Parameters for DeepONet {
    fn for_each_param(&self, f: &mut dyn FnMut(&[f64])) {
        self.branch.for_each_param(f);
        self.trunk.for_each_param(f);
        f(std::slice::from_ref(&self.output_bias));
    }

    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.branch.for_each_param_mut(f);
        self.trunk.for_each_param_mut(f);
        f(std::slice::from_mut(&mut self.output_bias));
    }
}

impl DeepONet {
    /// Branch `2n → hidden (relu) → p`, trunk `1 → hidden (tanh) → p (tanh)`.
    /// Inputs are divided by the coefficient amplitude and by
    /// [`STATE_INPUT_SCALE`].
    pub fn new(n_points: usize, kind: BenchmarkKind, cfg: &DeepONetConfig, rng: &mut Rng) -> Result<Self> {
        if n_points == 0 || cfg.latent_dim == 0 {
            return Err(Error::invalid("grid size and latent width must be positive"));
        }
        let branch = DenseNet::mlp(
            2 * n_points,
            &cfg.branch_hidden,
            cfg.latent_dim,
            Activation::Relu,
            Activation::Identity,
            rng,
        );
        let trunk = DenseNet::mlp(
            1,
            &cfg.trunk_hidden,
            cfg.latent_dim,
            Activation::Tanh,
            Activation::Tanh,
            rng,
        );
        DeepONet::from_parts(branch, trunk, 0.0, 1.0 / kind.amplitude(), 1.0 / STATE_INPUT_SCALE)
    }

    pub fn from_parts(
        branch: DenseNet,
        trunk: DenseNet,
        output_bias: f64,
        coeff_scale: f64,
        state_scale: f64,
    ) -> Result<Self> {
        let bi = branch.input_dim();
        if bi == 0 || !bi.is_multiple_of(2) {
            return Err(Error::invalid(format!("branch input width {bi} is not 2·n")));
        }
        if trunk.input_dim() != 1 {
            return Err(Error::invalid("trunk must take a single coordinate"));
        }
        if branch.output_dim() != trunk.output_dim() {
            return Err(Error::invalid(format!(
                "branch emits {} values, trunk emits {}",
                branch.output_dim(),
                trunk.output_dim()
            )));
        }
        Ok(DeepONet {
            n_points: bi / 2,
            branch,
            trunk,
            output_bias,
            coeff_scale,
            state_scale,
        })
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn latent_dim(&self) -> usize {
        self.branch.output_dim()
    }

    /// Multipliers applied to (coefficient, state) before the branch.
    pub fn input_scales(&self) -> (f64, f64) {
        (self.coeff_scale, self.state_scale)
    }

    /// Same shapes and scales, every trainable parameter zero.
    pub fn zeros_like(&self) -> Self {
        DeepONet {
            branch: self.branch.zeros_like(),
            trunk: self.trunk.zeros_like(),
            output_bias: 0.0,
            ..*self
        }
    }

    fn check_lengths(&self, coeff: &[f64], state: &[f64]) -> Result<()> {
        if coeff.len() != self.n_points || state.len() != self.n_points {
            return Err(Error::invalid(format!(
                "inputs of length ({}, {}) given to a network built for {} points",
                coeff.len(),
                state.len(),
                self.n_points
            )));
        }
        Ok(())
    }

    /// Scales raw `batch × 2n` rows `[coeff | state]` into branch inputs.
    fn scale_inputs(&self, raw: &[f64], stride: usize, batch: usize) -> Vec<f64> {
        let n = self.n_points;
        let mut out = Vec::with_capacity(batch * 2 * n);
        for b in 0..batch {
            let row = &raw[b * stride..b * stride + 2 * n];
            out.extend(row[..n].iter().map(|v| v * self.coeff_scale));
            out.extend(row[n..].iter().map(|v| v * self.state_scale));
        }
        out
    }

    fn joined(&self, coeff: &[f64], state: &[f64]) -> Result<Vec<f64>> {
        self.check_lengths(coeff, state)?;
        let mut raw = Vec::with_capacity(2 * self.n_points);
        raw.extend_from_slice(coeff);
        raw.extend_from_slice(state);
        Ok(raw)
    }

    /// `⟨branch(coeff, state), trunk(query)⟩ + output_bias`.
    pub fn forward_scalar(&self, coeff: &[f64], state: &[f64], query: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&query) {
            return Err(Error::invalid(format!("query {query} outside [0, 1]")));
        }
        let raw = self.joined(coeff, state)?;
        let b = self.branch.predict_batch(&self.scale_inputs(&raw, raw.len(), 1), 1)?;
        let t = self.trunk.predict_batch(&[query], 1)?;
        Ok(b.iter().zip(&t).map(|(x, y)| x * y).sum::<f64>() + self.output_bias)
    }

    /// Basis weights `branch ⊙ trunk(CONTROL_QUERY)`.
    pub fn forward_features(&self, coeff: &[f64], state: &[f64]) -> Result<Vec<f64>> {
        let raw = self.joined(coeff, state)?;
        Ok(self.features_batch(&raw, 1)?.0)
    }

    /// Features for `batch` rows of raw `[coeff | state]` inputs.
    pub fn features_batch(&self, raw: &[f64], batch: usize) -> Result<(Vec<f64>, DeepONetCache)> {
        self.features_strided(raw, 2 * self.n_points, batch)
    }

    /// As [`DeepONet::features_batch`] but rows start every `stride` values,
    /// so dataset rows can be consumed without copying.
    pub fn features_strided(&self, raw: &[f64], stride: usize, batch: usize) -> Result<(Vec<f64>, DeepONetCache)> {
        if stride < 2 * self.n_points || (batch > 0 && raw.len() < (batch - 1) * stride + 2 * self.n_points) {
            return Err(Error::invalid(format!(
                "need {batch} rows of {} inputs, got {} values",
                2 * self.n_points,
                raw.len()
            )));
        }
        let input = self.scale_inputs(raw, stride, batch);
        let (branch_out, branch) = self.branch.forward_batch(&input, batch)?;
        let (trunk_out, trunk) = self.trunk.forward_batch(&[CONTROL_QUERY], 1)?;
        let p = self.latent_dim();
        let mut features = branch_out.clone();
        for row in features.chunks_exact_mut(p) {
            row.iter_mut().zip(&trunk_out).for_each(|(f, t)| *f *= t);
        }
        Ok((
            features,
            DeepONetCache {
                batch,
                branch,
                trunk,
                branch_out,
                trunk_out,
            },
        ))
    }

    /// Adds the parameter gradients for upstream feature gradients
    /// `d_features` (`batch × p`) into `grads`.
    pub fn backward_features(&self, cache: &DeepONetCache, d_features: &[f64], grads: &mut DeepONet) -> Result<()> {
        let p = self.latent_dim();
        if d_features.len() != cache.batch * p {
            return Err(Error::invalid("feature gradient does not match the cached batch"));
        }
        let mut d_branch = d_features.to_vec();
        let mut d_trunk = vec![0.0; p];
        for (db, bo) in d_branch.chunks_exact_mut(p).zip(cache.branch_out.chunks_exact(p)) {
            for k in 0..p {
                d_trunk[k] += db[k] * bo[k];
                db[k] *= cache.trunk_out[k];
            }
        }
        self.branch
            .backward_params(&cache.branch, &d_branch, &mut grads.branch)?;
        self.trunk.backward_params(&cache.trunk, &d_trunk, &mut grads.trunk)?;
        Ok(())
    }

    /// Scalar controls at [`CONTROL_QUERY`] for rows spaced `stride` apart.
    pub fn predict_strided(&self, raw: &[f64], stride: usize, batch: usize) -> Result<Vec<f64>> {
        let input = self.scale_inputs(raw, stride, batch);
        let b = self.branch.predict_batch(&input, batch)?;
        let t = self.trunk.predict_batch(&[CONTROL_QUERY], 1)?;
        Ok(b.chunks_exact(self.latent_dim())
            .map(|row| row.iter().zip(&t).map(|(x, y)| x * y).sum::<f64>() + self.output_bias)
            .collect())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.push("branch", self.branch.clone());
        ck.push("trunk", self.trunk.clone());
        ck.push("output_bias", DenseNet::constant(&[self.output_bias]));
        ck.push(
            "input_scales",
            DenseNet::constant(&[self.coeff_scale, self.state_scale]),
        );
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let scalar = |name: &str, len: usize| -> Result<Vec<f64>> {
            let net = ck.get(name)?;
            match net.layers() {
                [l] if l.n_in == 0 && l.n_out == len => Ok(l.bias.clone()),
                _ => Err(Error::CheckpointFormat(format!("{name:?} is not a {len}-value record"))),
            }
        };
        let bias = scalar("output_bias", 1)?;
        let scales = scalar("input_scales", 2)?;
        DeepONet::from_parts(
            ck.get("branch")?.clone(),
            ck.get("trunk")?.clone(),
            bias[0],
            scales[0],
            scales[1],
        )
        .map_err(|e| Error::CheckpointFormat(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        DeepONet::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 50,
            batch_size: 256,
            lr: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mse: f64,
    pub test_mse: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainReport {
    pub epochs: Vec<EpochStats>,
    pub initial_relative_l2: f64,
    pub final_relative_l2: f64,
    pub final_test_mse: f64,
}

/// Mean squared error and relative error `Σ(pred − target)² / Σ target²`
/// over a whole dataset.
pub fn evaluate_imitation(model: &DeepONet, ds: &Dataset) -> Result<(f64, f64)> {
    check_dataset(model, ds)?;
    let w = ds.row_width();
    let n = ds.n_points;
    let (mut sq_err, mut sq_tgt) = (0.0, 0.0);
    for chunk in ds.raw().chunks(w * 1024) {
        let batch = chunk.len() / w;
        let pred = model.predict_strided(chunk, w, batch)?;
        for (b, p) in pred.iter().enumerate() {
            let t = chunk[b * w + 2 * n];
            sq_err += (p - t) * (p - t);
            sq_tgt += t * t;
        }
    }
    let mse = if ds.is_empty() { 0.0 } else { sq_err / ds.len() as f64 };
    let rel = if sq_tgt > 0.0 { sq_err / sq_tgt } else { sq_err };
    Ok((mse, rel))
}

fn check_dataset(model: &DeepONet, ds: &Dataset) -> Result<()> {
    if ds.n_points != model.n_points() {
        return Err(Error::invalid(format!(
            "dataset grid has {} points, model expects {}",
            ds.n_points,
            model.n_points()
        )));
    }
    Ok(())
}

/// Mini-batch Adam on the mean squared imitation error. `on_epoch` sees
/// each epoch's statistics as soon as they are available.
pub fn pretrain(
    model: &mut DeepONet,
    train: &Dataset,
    test: &Dataset,
    cfg: &PretrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<PretrainReport> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::invalid("pretraining needs non-empty train and test sets"));
    }
    if train.kind != test.kind {
        return Err(Error::invalid(format!(
            "train set is {}, test set is {}",
            train.kind, test.kind
        )));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    check_dataset(model, train)?;
    check_dataset(model, test)?;
    let initial_relative_l2 = evaluate_imitation(model, test)?.1;
    let mut rng = Rng::new(cfg.seed);
    let mut opt = Optimizer::new(OptimizerKind::Adam, cfg.lr);
    let (w, n, p) = (train.row_width(), train.n_points, model.latent_dim());
    let data = train.raw();
    let mut batch_raw = Vec::with_capacity(cfg.batch_size * w);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = rng.permutation(train.len());
        let mut sum_sq = 0.0;
        for (batch_index, idx) in order.chunks(cfg.batch_size).enumerate() {
            batch_raw.clear();
            for &i in idx {
                batch_raw.extend_from_slice(&data[i * w..(i + 1) * w]);
            }
            let bsz = idx.len();
            let (features, cache) = model.features_strided(&batch_raw, w, bsz)?;
            let mut d_features = vec![0.0; bsz * p];
            let mut d_bias = 0.0;
            let mut loss = 0.0;
            for b in 0..bsz {
                let pred = features[b * p..(b + 1) * p].iter().sum::<f64>() + model.output_bias;
                let err = pred - batch_raw[b * w + 2 * n];
                loss += err * err;
                let g = 2.0 * err / bsz as f64;
                d_features[b * p..(b + 1) * p].iter_mut().for_each(|d| *d = g);
                d_bias += g;
            }
            if !loss.is_finite() {
                return Err(Error::numerical(format!(
                    "non-finite imitation loss at epoch {epoch}, batch {batch_index} (lr {})",
                    cfg.lr
                )));
            }
            sum_sq += loss;
            let mut grads = model.zeros_like();
            model.backward_features(&cache, &d_features, &mut grads)?;
            grads.output_bias = d_bias;
            opt.step(model, &grads);
        }
        let stats = EpochStats {
            epoch,
            train_mse: sum_sq / train.len() as f64,
            test_mse: evaluate_imitation(model, test)?.0,
        };
        on_epoch(&stats);
        epochs.push(stats);
    }
    let (final_test_mse, final_relative_l2) = evaluate_imitation(model, test)?;
    Ok(PretrainReport {
        epochs,
        initial_relative_l2,
        final_relative_l2,
        final_test_mse,
    })
}
