//! Joint training of the denoiser over both diffusion branches with the causal
//! penalty, checkpointing with exact resume, and table generation.

use std::path::Path;

use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{softmax_rows, time_embedding, Activation, AdamState, AutodiffError, Mlp, Tape};
use crate::causal::{self, CausalGraph, CausalMask, DiscoveryError, NotearsConfig, NotearsFit, NotearsMode};
use crate::diffusion::{
    categorical, forward_mask, forward_noise, sample_joint, Denoiser, DenoiserOutput, DiffusionError, NumericalSchedule,
};
use crate::regularization::{self, BranchMasks, HacrState, RegularizationError, Weighting};
use crate::tabular::{self, DataTable, EncodingMap, TableError};
use crate::util::{mix64, sha256_hex, stream_rng};

pub const CHECKPOINT_VERSION: u32 = 1;

const STREAM_STEP: u64 = 0x7101;
const STREAM_SHUFFLE: u64 = 0x7102;
const STREAM_VALIDATION: u64 = 0x7103;
const STREAM_INIT: u64 = 0x7104;
const SAMPLE_CHUNK: usize = 1024;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("row count must be at least 1, got {0}")]
    InvalidCount(usize),
    #[error("causal discovery failed: {0}")]
    DiscoveryFailed(#[source] DiscoveryError),
    #[error("training diverged: non-finite loss in {0}")]
    Diverged(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Discovery(#[from] DiscoveryError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Regularization(#[from] RegularizationError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Reverse-process steps used when sampling.
    pub steps: usize,
    pub seed: u64,
    pub w_max: f64,
    pub ema_decay: f64,
    pub tau: f64,
    /// Fixed penalty multiplier; `None` selects the adaptive weight.
    pub fcr: Option<f64>,
    pub no_cross_pairs: bool,
    pub notears_mode: NotearsMode,
    pub notears: NotearsConfig,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub embed_dim: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Train / validation / test fractions.
    pub split: (f64, f64, f64),
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 256,
            lr: 1e-3,
            steps: 50,
            seed: 0,
            w_max: 0.1,
            ema_decay: 0.1,
            tau: 0.3,
            fcr: None,
            no_cross_pairs: false,
            notears_mode: NotearsMode::Nonlinear,
            notears: NotearsConfig::default(),
            hidden_width: 256,
            hidden_layers: 2,
            embed_dim: 16,
            sigma_min: 0.002,
            sigma_max: 80.0,
            split: (0.8, 0.1, 0.1),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.epochs < 1 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be >= 2");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if self.steps < 1 {
            return bad("steps must be >= 1");
        }
        if self.hidden_layers < 1 || self.hidden_width < 1 {
            return bad("the denoiser needs at least one hidden layer of width >= 1");
        }
        if self.embed_dim < 2 || self.embed_dim % 2 != 0 {
            return bad("embed_dim must be even and >= 2");
        }
        if !(self.tau >= 0.0) {
            return bad("tau must be non-negative");
        }
        NumericalSchedule::new(self.sigma_min, self.sigma_max).map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        HacrState::new(self.w_max, self.ema_decay, self.weighting()).map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        Ok(())
    }

    pub fn weighting(&self) -> Weighting {
        match self.fcr {
            Some(l) => Weighting::Fixed(l),
            None => Weighting::Adaptive,
        }
    }

    pub fn schedule(&self) -> NumericalSchedule {
        NumericalSchedule {
            sigma_min: self.sigma_min,
            sigma_max: self.sigma_max,
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

/// Training rows split into the two branches' clean states.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    /// Z-scored numerical dims.
    pub x_num: Array2<f64>,
    /// Category codes, one column per categorical feature.
    pub tokens: Array2<usize>,
}

impl TrainingData {
    pub fn from_table(table: &DataTable, map: &EncodingMap) -> Result<Self> {
        let enc = tabular::encode(table, map)?;
        let x_num = enc.values.slice(s![.., ..map.num_dims]).to_owned();
        let mut tokens = Array2::zeros((table.n_rows(), map.cat_blocks.len()));
        for (j, block) in map.cat_blocks.iter().enumerate() {
            let col = table.column(block.feature).as_categorical().expect("encoded layout");
            for (i, &c) in col.iter().enumerate() {
                tokens[[i, j]] = c;
            }
        }
        Ok(Self { x_num, tokens })
    }

    pub fn n_rows(&self) -> usize {
        self.x_num.nrows().max(self.tokens.nrows())
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            x_num: self.x_num.select(Axis(0), rows),
            tokens: self.tokens.select(Axis(0), rows),
        }
    }
}

/// Denoiser over the joint state. Input is `[c_in * x | one-hot tokens with
/// a MASK slot per column | time embedding]`, output is `[eps_hat | logits]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserNet {
    pub mlp: Mlp,
    pub num_dims: usize,
    pub cat_sizes: Vec<usize>,
    pub embed_dim: usize,
    pub schedule: NumericalSchedule,
}

impl DenoiserNet {
    pub fn new<R: Rng>(
        num_dims: usize,
        cat_sizes: Vec<usize>,
        hidden_width: usize,
        hidden_layers: usize,
        embed_dim: usize,
        schedule: NumericalSchedule,
        rng: &mut R,
    ) -> Self {
        let input = num_dims + cat_sizes.iter().map(|k| k + 1).sum::<usize>() + embed_dim;
        let output = num_dims + cat_sizes.iter().sum::<usize>();
        let mut widths = vec![input];
        widths.extend(std::iter::repeat_n(hidden_width, hidden_layers));
        widths.push(output);
        Self {
            mlp: Mlp::new(&widths, Activation::Silu, 0.1, rng),
            num_dims,
            cat_sizes,
            embed_dim,
            schedule,
        }
    }

    pub fn output_width(&self) -> usize {
        self.num_dims + self.cat_sizes.iter().sum::<usize>()
    }

    pub fn build_input(&self, x_num: &Array2<f64>, tokens: &Array2<usize>, t: &[f64]) -> Result<Array2<f64>> {
        let b = t.len();
        let width = self.mlp.input_width();
        let mut input = Array2::zeros((b, width));
        for (r, &tr) in t.iter().enumerate() {
            let sigma = self.schedule.sigma_at(tr)?;
            let c_in = 1.0 / (sigma * sigma + 1.0).sqrt();
            for d in 0..self.num_dims {
                input[[r, d]] = c_in * x_num[[r, d]];
            }
            let mut offset = self.num_dims;
            for (j, &k) in self.cat_sizes.iter().enumerate() {
                input[[r, offset + tokens[[r, j]]]] = 1.0;
                offset += k + 1;
            }
            for (e, v) in time_embedding(tr, self.embed_dim)?.into_iter().enumerate() {
                input[[r, offset + e]] = v;
            }
        }
        Ok(input)
    }

    /// `(eps_hat, logits)` for a batch with per-row times.
    pub fn predict(&self, x_num: &Array2<f64>, tokens: &Array2<usize>, t: &[f64]) -> Result<(Array2<f64>, Array2<f64>)> {
        let out = self.mlp.forward(&self.build_input(x_num, tokens, t)?)?;
        let eps_hat = out.slice(s![.., ..self.num_dims]).to_owned();
        let logits = out.slice(s![.., self.num_dims..]).to_owned();
        Ok((eps_hat, logits))
    }
}

impl Denoiser for DenoiserNet {
    fn num_dims(&self) -> usize {
        self.num_dims
    }

    fn cat_sizes(&self) -> &[usize] {
        &self.cat_sizes
    }

    fn denoise(&self, x_num: &Array2<f64>, tokens: &Array2<usize>, t: f64) -> crate::diffusion::Result<DenoiserOutput> {
        let times = vec![t; x_num.nrows()];
        let (eps_hat, logits) = self
            .predict(x_num, tokens, &times)
            .map_err(|e| DiffusionError::Denoiser(e.to_string()))?;
        let mut probs = Vec::with_capacity(self.cat_sizes.len());
        let mut offset = 0;
        for &k in &self.cat_sizes {
            probs.push(softmax_rows(&logits.slice(s![.., offset..offset + k]).to_owned()));
            offset += k;
        }
        Ok(DenoiserOutput { eps_hat, probs })
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    #[serde(rename = "L_n")]
    pub l_n: f64,
    #[serde(rename = "L_c")]
    pub l_c: f64,
    #[serde(rename = "L_base")]
    pub l_base: f64,
    #[serde(rename = "delta_L")]
    pub delta_l: f64,
    pub sigma_mean: f64,
    pub w: f64,
    #[serde(rename = "L_total")]
    pub l_total: f64,
}

pub fn write_log_csv(rows: &[LogRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Randomness for one batch: a time per row, Gaussian noise and mask uniforms.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNoise {
    pub t: Vec<f64>,
    pub eps: Array2<f64>,
    pub u: Array2<f64>,
}

impl BatchNoise {
    pub fn draw<R: Rng>(rng: &mut R, rows: usize, num_dims: usize, cat_cols: usize) -> Self {
        let t = (0..rows).map(|_| rng.random::<f64>()).collect();
        let eps = Array2::from_shape_simple_fn((rows, num_dims), || rng.sample(StandardNormal));
        let u = Array2::from_shape_simple_fn((rows, cat_cols), || rng.random::<f64>());
        Self { t, eps, u }
    }
}

/// Per-row noise level fed to the weight schedule. Categorical-only tables
/// use `t * sigma_max` in place of `sigma(t)`.
pub fn noise_levels(schedule: &NumericalSchedule, t: &[f64], has_numerical: bool) -> Vec<f64> {
    t.iter()
        .map(|&tr| if has_numerical { schedule.sigma_unchecked(tr) } else { tr * schedule.sigma_max })
        .collect()
}

/// Loss terms, gradients and the advanced regularizer state for one batch.
pub struct StepResult {
    pub row: LogRow,
    pub grads: Vec<Array2<f64>>,
    pub hacr: HacrState,
}

/// Builds the total objective for a batch on a fresh tape and differentiates
/// it with respect to the denoiser parameters. `hacr` is not modified.
pub fn step_objective(
    net: &DenoiserNet,
    hacr: &HacrState,
    masks: &BranchMasks,
    batch: &TrainingData,
    noise: &BatchNoise,
) -> Result<StepResult> {
    let b = noise.t.len();
    let m = net.num_dims;
    let ks = &net.cat_sizes;
    let x_t = forward_noise(&net.schedule, &batch.x_num, &noise.t, &noise.eps)?;
    let tok_t = forward_mask(&batch.tokens, &noise.t, &noise.u, ks)?;
    let input = net.build_input(&x_t, &tok_t, &noise.t)?;

    let mut tape = Tape::new();
    let inp = tape.leaf(input);
    let (out, leaves) = net.mlp.forward_tape(&mut tape, inp)?;

    let l_n = if m > 0 {
        let eps_hat = tape.slice_cols(out, 0, m)?;
        let target = tape.leaf(noise.eps.clone());
        let diff = tape.sub(eps_hat, target)?;
        let sq = tape.square(diff);
        tape.mean(sq)
    } else {
        tape.scalar(0.0)
    };

    let mut l_c = tape.scalar(0.0);
    let mut offset = m;
    for (j, &k) in ks.iter().enumerate() {
        let block = tape.slice_cols(out, offset, offset + k)?;
        let logp = tape.log_softmax(block);
        let mut weights = Array2::zeros((b, k));
        for r in 0..b {
            if tok_t[[r, j]] == k {
                weights[[r, batch.tokens[[r, j]]]] = -categorical::mask_weight(noise.t[r]) / b as f64;
            }
        }
        let picked = tape.mul_const(logp, weights)?;
        let term = tape.sum(picked);
        l_c = if j == 0 { term } else { tape.add(l_c, term)? };
        offset += k;
    }
    let diffusion_total = tape.add(l_n, l_c)?;

    let sigma_rows = noise_levels(&net.schedule, &noise.t, m > 0);
    let sigma_mean = sigma_rows.iter().sum::<f64>() / b.max(1) as f64;
    let mut next = hacr.clone();
    let (total, l_base, delta_l, w) = match regularization::base_losses_on_tape(&mut tape, out, m, ks, masks)? {
        None => (diffusion_total, 0.0, 0.0, 0.0),
        Some((cat, num)) => {
            let base = match (cat, num) {
                (Some(c), Some(n)) => tape.add(c, n)?,
                (Some(c), None) => c,
                (None, Some(n)) => n,
                (None, None) => unreachable!("non-empty masks yield at least one branch"),
            };
            let l_base = tape.scalar_value(base);
            let update = next.observe(l_base, sigma_mean)?;
            let weighted = tape.scale(base, update.w);
            (tape.add(diffusion_total, weighted)?, l_base, update.delta_l, update.w)
        }
    };
    let row = LogRow {
        step: 0,
        l_n: tape.scalar_value(l_n),
        l_c: tape.scalar_value(l_c),
        l_base,
        delta_l,
        sigma_mean,
        w,
        l_total: tape.scalar_value(total),
    };
    if !row.l_total.is_finite() {
        return Err(TrainError::Diverged(format!("{row:?}")));
    }
    let grads = tape.backward(total)?;
    Ok(StepResult {
        row,
        grads: leaves.iter().map(|&l| grads.get(l)).collect(),
        hacr: next,
    })
}

/// Validation objective without gradients: the same total loss with a fixed
/// noise stream and the regularizer state left untouched.
pub fn validation_loss(
    net: &DenoiserNet,
    hacr: &HacrState,
    masks: &BranchMasks,
    data: &TrainingData,
    batch_size: usize,
    seed: u64,
) -> Result<Option<f64>> {
    let n = data.n_rows();
    if n == 0 {
        return Ok(None);
    }
    let mut total = 0.0;
    for (bi, start) in (0..n).step_by(batch_size).enumerate() {
        let rows: Vec<usize> = (start..(start + batch_size).min(n)).collect();
        let batch = data.select(&rows);
        let mut rng = stream_rng(seed, STREAM_VALIDATION, bi as u64);
        let noise = BatchNoise::draw(&mut rng, rows.len(), net.num_dims, net.cat_sizes.len());
        let x_t = forward_noise(&net.schedule, &batch.x_num, &noise.t, &noise.eps)?;
        let tok_t = forward_mask(&batch.tokens, &noise.t, &noise.u, &net.cat_sizes)?;
        let (eps_hat, logits) = net.predict(&x_t, &tok_t, &noise.t)?;
        let l_n = crate::diffusion::loss_numerical(&eps_hat, &noise.eps)?;
        let mut blocks = Vec::with_capacity(net.cat_sizes.len());
        let mut offset = 0;
        for &k in &net.cat_sizes {
            blocks.push(logits.slice(s![.., offset..offset + k]).to_owned());
            offset += k;
        }
        let l_c = crate::diffusion::loss_categorical(&blocks, &batch.tokens, &tok_t, &noise.t)?;
        let mut loss = l_n + l_c;
        if !masks.is_empty() {
            let sigma_rows = noise_levels(&net.schedule, &noise.t, net.num_dims > 0);
            let sigma_mean = sigma_rows.iter().sum::<f64>() / sigma_rows.len() as f64;
            let (cat, num) = regularization::base_losses(&eps_hat, &logits, &net.cat_sizes, masks)?;
            let update = hacr.clone().observe(cat + num, sigma_mean)?;
            loss += update.w * (cat + num);
        }
        total += loss * rows.len() as f64;
    }
    Ok(Some(total / n as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Absent when there are no validation rows.
    pub val_loss: Option<f64>,
}

/// Mutable state of an in-progress run; everything needed to continue it
/// bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResumeState {
    pub current: Mlp,
    pub adam: AdamState,
    pub hacr: HacrState,
    pub epoch: usize,
    pub step: u64,
    pub best_val: Option<f64>,
    pub best_epoch: usize,
}

/// Self-contained training artifact: `generate` needs nothing else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub config_hash: String,
    pub encoding: EncodingMap,
    pub graph: CausalGraph,
    pub mask: CausalMask,
    /// Best-validation denoiser.
    pub denoiser: DenoiserNet,
    pub t_min: f64,
    pub resume: ResumeState,
    pub history: Vec<EpochRecord>,
    pub log_path: Option<String>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(TrainError::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        if ckpt.config.hash() != ckpt.config_hash {
            return Err(TrainError::Checkpoint("config hash does not match the stored config".into()));
        }
        Ok(ckpt)
    }

    /// Writes via a temporary file and rename.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_json()?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(self.to_json()?.as_bytes()))
    }
}

pub struct Trainer {
    pub config: TrainConfig,
    pub encoding: EncodingMap,
    pub graph: CausalGraph,
    pub mask: CausalMask,
    masks: BranchMasks,
    net: DenoiserNet,
    best: DenoiserNet,
    state: ResumeState,
    history: Vec<EpochRecord>,
}

impl Trainer {
    pub fn new(config: TrainConfig, encoding: EncodingMap, graph: CausalGraph, mask: CausalMask) -> Result<Self> {
        config.validate()?;
        if mask.width() != encoding.width {
            return Err(TrainError::InvalidConfig(format!(
                "mask width {} does not match encoded width {}",
                mask.width(),
                encoding.width
            )));
        }
        let mut rng = stream_rng(config.seed, STREAM_INIT, 0);
        let ks = encoding.cat_blocks.iter().map(|b| b.k).collect();
        let net = DenoiserNet::new(
            encoding.num_dims,
            ks,
            config.hidden_width,
            config.hidden_layers,
            config.embed_dim,
            config.schedule(),
            &mut rng,
        );
        let masks = BranchMasks::split(&mask, encoding.num_dims, !config.no_cross_pairs);
        let state = ResumeState {
            current: net.mlp.clone(),
            adam: AdamState::new(&net.mlp.params, config.lr),
            hacr: HacrState::new(config.w_max, config.ema_decay, config.weighting())?,
            epoch: 0,
            step: 0,
            best_val: None,
            best_epoch: 0,
        };
        Ok(Self {
            best: net.clone(),
            net,
            masks,
            state,
            history: Vec::new(),
            config,
            encoding,
            graph,
            mask,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut trainer = Self::new(ckpt.config.clone(), ckpt.encoding.clone(), ckpt.graph.clone(), ckpt.mask.clone())?;
        trainer.net.mlp = ckpt.resume.current.clone();
        trainer.best = ckpt.denoiser.clone();
        trainer.state = ckpt.resume.clone();
        trainer.history = ckpt.history.clone();
        Ok(trainer)
    }

    pub fn epoch(&self) -> usize {
        self.state.epoch
    }

    pub fn masks(&self) -> &BranchMasks {
        &self.masks
    }

    pub fn current(&self) -> &DenoiserNet {
        &self.net
    }

    /// One pass over `data` in a seed- and epoch-keyed shuffled order,
    /// followed by validation and best-model tracking.
    pub fn train_epoch(&mut self, data: &TrainingData, val: &TrainingData, log: &mut Vec<LogRow>) -> Result<EpochRecord> {
        let n = data.n_rows();
        if n == 0 {
            return Err(TrainError::Table(TableError::EmptyTable));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream_rng(self.config.seed, STREAM_SHUFFLE, self.state.epoch as u64));
        let mut loss_sum = 0.0;
        for chunk in order.chunks(self.config.batch_size) {
            let batch = data.select(chunk);
            let mut rng = stream_rng(self.config.seed, STREAM_STEP, self.state.step);
            let noise = BatchNoise::draw(&mut rng, chunk.len(), self.net.num_dims, self.net.cat_sizes.len());
            let result = step_objective(&self.net, &self.state.hacr, &self.masks, &batch, &noise)?;
            self.state.adam.step(&mut self.net.mlp.params, &result.grads)?;
            self.state.hacr = result.hacr;
            self.state.step += 1;
            let row = LogRow {
                step: self.state.step,
                ..result.row
            };
            loss_sum += row.l_total * chunk.len() as f64;
            log.push(row);
        }
        self.state.epoch += 1;
        let val_loss = validation_loss(&self.net, &self.state.hacr, &self.masks, val, self.config.batch_size, self.config.seed)?;
        // without validation rows the latest parameters are kept
        let improved = match (val_loss, self.state.best_val) {
            (None, _) | (Some(_), None) => true,
            (Some(v), Some(best)) => v < best,
        };
        if improved {
            self.state.best_val = val_loss;
            self.state.best_epoch = self.state.epoch;
            self.best = self.net.clone();
        }
        self.state.current = self.net.mlp.clone();
        let record = EpochRecord {
            epoch: self.state.epoch,
            train_loss: loss_sum / n as f64,
            val_loss,
        };
        self.history.push(record);
        log::debug!("epoch {} train {:.5} val {:?}", record.epoch, record.train_loss, record.val_loss);
        Ok(record)
    }

    /// Trains until the configured epoch count is reached.
    pub fn run(&mut self, data: &TrainingData, val: &TrainingData, log: &mut Vec<LogRow>) -> Result<()> {
        while self.state.epoch < self.config.epochs {
            self.train_epoch(data, val, log)?;
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config_hash: self.config.hash(),
            config: self.config.clone(),
            encoding: self.encoding.clone(),
            graph: self.graph.clone(),
            mask: self.mask.clone(),
            denoiser: self.best.clone(),
            t_min: categorical::MASK_T_MIN,
            resume: ResumeState {
                current: self.net.mlp.clone(),
                ..self.state.clone()
            },
            history: self.history.clone(),
            log_path: None,
        }
    }
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRow>,
    pub train: DataTable,
    pub val: DataTable,
    pub test: DataTable,
    pub notears: Option<NotearsFit>,
}

/// Graph and mask for a training split. Without discovery the mask is empty
/// and the run reduces to the plain diffusion objective.
pub fn causal_structure(
    config: &TrainConfig,
    train: &DataTable,
    encoding: &EncodingMap,
    graph: Option<CausalGraph>,
) -> Result<(CausalGraph, CausalMask, Option<NotearsFit>)> {
    if let Some(g) = graph {
        let mask = causal::expand_mask(&g, encoding)?;
        return Ok((g, mask, None));
    }
    match config.notears_mode {
        NotearsMode::Off => Ok((CausalGraph::empty(train.n_cols()), CausalMask::empty(encoding.width), None)),
        mode => {
            let (g, fit) = causal::discover(train, mode, &config.notears, config.tau).map_err(TrainError::DiscoveryFailed)?;
            let mask = causal::expand_mask(&g, encoding)?;
            Ok((g, mask, fit))
        }
    }
}

/// Splits `table`, learns or accepts the causal graph, and trains to the
/// configured number of epochs. The checkpoint holds the best-validation model.
pub fn train(config: &TrainConfig, table: &DataTable, graph: Option<CausalGraph>) -> Result<TrainOutcome> {
    config.validate()?;
    let (train, val, test) = tabular::split(table, config.split, config.seed)?;
    let encoding = tabular::fit_encoder(&train)?;
    let (graph, mask, notears) = causal_structure(config, &train, &encoding, graph)?;
    let data = TrainingData::from_table(&train, &encoding)?;
    let val_data = TrainingData::from_table(&val, &encoding)?;
    let mut trainer = Trainer::new(config.clone(), encoding, graph, mask)?;
    let mut log = Vec::new();
    trainer.run(&data, &val_data, &mut log)?;
    Ok(TrainOutcome {
        checkpoint: trainer.checkpoint(),
        log,
        train,
        val,
        test,
        notears,
    })
}

/// Continues a checkpointed run up to `epochs` total epochs.
pub fn resume(ckpt: &Checkpoint, train: &DataTable, val: &DataTable, epochs: usize) -> Result<(Checkpoint, Vec<LogRow>)> {
    let mut trainer = Trainer::from_checkpoint(ckpt)?;
    trainer.config.epochs = epochs;
    let data = TrainingData::from_table(train, &ckpt.encoding)?;
    let val_data = TrainingData::from_table(val, &ckpt.encoding)?;
    let mut log = Vec::new();
    trainer.run(&data, &val_data, &mut log)?;
    Ok((trainer.checkpoint(), log))
}

/// Samples `n` rows with the checkpoint's step count.
pub fn generate(ckpt: &Checkpoint, n: usize, seed: u64) -> Result<DataTable> {
    generate_with_steps(ckpt, n, seed, ckpt.config.steps)
}

/// Samples in fixed-size row chunks, each with its own seed stream, so the
/// output does not depend on the number of worker threads.
pub fn generate_with_steps(ckpt: &Checkpoint, n: usize, seed: u64, steps: usize) -> Result<DataTable> {
    if n == 0 {
        return Err(TrainError::InvalidCount(n));
    }
    let net = &ckpt.denoiser;
    let chunks: Vec<(usize, usize)> = (0..n).step_by(SAMPLE_CHUNK).map(|s| (s, (s + SAMPLE_CHUNK).min(n))).collect();
    let parts: Vec<(Array2<f64>, Array2<usize>)> = chunks
        .par_iter()
        .enumerate()
        .map(|(c, &(lo, hi))| sample_joint(net, &net.schedule, hi - lo, steps, mix64(seed ^ mix64(c as u64))))
        .collect::<std::result::Result<_, _>>()?;

    let map = &ckpt.encoding;
    let mut encoded = Array2::zeros((n, map.width));
    let mut row = 0;
    for (x, tok) in parts {
        let b = x.nrows().max(tok.nrows());
        encoded.slice_mut(s![row..row + b, ..map.num_dims]).assign(&x);
        for (j, block) in map.cat_blocks.iter().enumerate() {
            for r in 0..b {
                encoded[[row + r, block.offset + tok[[r, j]]]] = 1.0;
            }
        }
        row += b;
    }
    if encoded.iter().any(|v| !v.is_finite()) {
        return Err(TrainError::Diffusion(DiffusionError::Denoiser("sampler produced non-finite values".into())));
    }
    Ok(tabular::decode(encoded.view(), map)?)
}
