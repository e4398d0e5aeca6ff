//! Joint training of both channels with self-masking, cross-channel
//! imputation, and checkpoint persistence.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::Rng as _;
use sha2::{Digest, Sha256};

use crate::continuous::{self, predicted_x0, ContDraws, ContState, DdimOptions, DEFAULT_X0_CLIP};
use crate::denoiser::{ConditioningContext, DenoiserConfig, DenoiserParams};
use crate::discrete::{self, DiscDraws, SimplexState};
use crate::encode::{EncodedBatch, Encoder, Layout, Routing};
use crate::error::{Error, Result};
use crate::missingness::{self_mask_augment, Mechanism};
use crate::nn::{AdamW, AdamWConfig, MlpShape, Parameters};
use crate::rng::{self, child_seed};
use crate::schedule::{make_subsequence, NoiseSchedule, Spacing, TimestepPlan};
use crate::table::{Mask, MaskedTable};

/// Terminal retention `prod(1 - beta_t)` of the discrete kernel.
pub const DISCRETE_TERMINAL_RETENTION: f64 = 0.005;

const STREAM_INIT: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_VALIDATION: u64 = 3;
const STREAM_EPOCH: u64 = 4;
const STREAM_PARAMS: u64 = 5;

/// Where the supervision targets come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Supervision {
    /// Observed cells hidden at random by self-masking.
    #[default]
    SelfMask,
    /// Originally missing cells filled with raw zero (first category).
    ZeroFill,
    /// Originally missing cells filled with the column mean (mode).
    MeanFill,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Diffusion steps `T` of both channels.
    pub steps: usize,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub self_mask_ratio: f64,
    pub self_mask_scheme: Mechanism,
    pub supervision: Supervision,
    pub lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub validation_fraction: f64,
    /// Probability that a training batch sees the other channel's estimates.
    pub cross_prob: f64,
    pub routing: Routing,
    pub denoiser: DenoiserConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 100,
            epochs: 300,
            patience: 20,
            self_mask_ratio: 0.3,
            self_mask_scheme: Mechanism::Mcar,
            supervision: Supervision::SelfMask,
            lr: 1e-4,
            batch_size: 64,
            weight_decay: 1e-4,
            seed: 0,
            validation_fraction: 0.1,
            cross_prob: 0.5,
            routing: Routing::Hybrid,
            denoiser: DenoiserConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.steps == 0 {
            return bad("diffusion steps must be at least 1");
        }
        if self.epochs == 0 || self.epochs > 300 {
            return bad("epochs must lie in 1..=300");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if self.supervision == Supervision::SelfMask {
            if self.self_mask_ratio == 0.0 {
                return bad(
                    "self-mask ratio 0 leaves no supervision targets; use a ratio in (0, 1), e.g. 0.3",
                );
            }
            if !(self.self_mask_ratio > 0.0 && self.self_mask_ratio < 1.0) {
                return bad("self-mask ratio must lie in (0, 1)");
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad("weight decay must be non-negative");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation fraction must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.cross_prob) {
            return bad("cross-estimate probability must lie in [0, 1]");
        }
        if self.denoiser.time_dim == 0 || (self.denoiser.depth > 0 && self.denoiser.hidden == 0) {
            return bad("denoiser widths must be positive");
        }
        Ok(())
    }

    fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_cont: f64,
    pub train_disc: f64,
    pub val_loss: Option<f64>,
}

/// Everything needed to impute: encoder, schedules, weights and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub encoder: Encoder,
    pub cont_schedule: NoiseSchedule,
    pub disc_schedule: NoiseSchedule,
    pub params: DenoiserParams,
    pub config: TrainConfig,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

/// Schedules used by both channels for `steps` diffusion steps.
pub fn schedules(steps: usize) -> Result<(NoiseSchedule, NoiseSchedule)> {
    Ok((
        NoiseSchedule::cosine(steps)?,
        NoiseSchedule::linear_to_terminal(steps, DISCRETE_TERMINAL_RETENTION)?,
    ))
}

/// Fills originally missing cells for the zero/mean supervision arms.
pub fn fill_missing(table: &MaskedTable, supervision: Supervision) -> Result<MaskedTable> {
    let schema = table.schema();
    let mut values = table.values().clone();
    for (j, col) in schema.columns().iter().enumerate() {
        let observed: Vec<f64> = (0..table.n_rows())
            .filter(|&i| !table.is_missing(i, j))
            .map(|i| table.values()[[i, j]])
            .collect();
        let fill = match (supervision, col.kind.cardinality()) {
            (Supervision::SelfMask, _) => return Ok(table.clone()),
            (Supervision::ZeroFill, None) => 0.0,
            (Supervision::ZeroFill, Some(_)) => 1.0,
            (Supervision::MeanFill, None) => {
                if observed.is_empty() {
                    0.0
                } else {
                    observed.iter().sum::<f64>() / observed.len() as f64
                }
            }
            (Supervision::MeanFill, Some(k)) => mode(&observed, k) as f64,
        };
        for i in 0..table.n_rows() {
            if table.is_missing(i, j) {
                values[[i, j]] = fill;
            }
        }
    }
    MaskedTable::complete(schema.clone(), values)
}

/// Most frequent category (1-based) among `observed`; ties go to the lowest.
pub fn mode(observed: &[f64], k: usize) -> usize {
    let mut counts = vec![0usize; k];
    for &v in observed {
        counts[v as usize - 1] += 1;
    }
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best + 1
}

fn column_targets_cont(cells: &Mask, layout: &Layout) -> Array2<f64> {
    Array2::from_shape_fn((cells.nrows(), layout.n_cont()), |(i, c)| {
        cells[[i, layout.cont_dims[c].column()]] as u8 as f64
    })
}

fn column_targets_cat(cells: &Mask, layout: &Layout) -> Array2<f64> {
    Array2::from_shape_fn((cells.nrows(), layout.n_blocks()), |(i, b)| {
        cells[[i, layout.blocks[b].column]] as u8 as f64
    })
}

/// Per-block softmax of a logit matrix.
pub fn block_softmax(logits: &Array2<f64>, layout: &Layout) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        for block in &layout.blocks {
            let mut v = row.slice_mut(s![block.offset..block.offset + block.k]);
            let max = v.fold(f64::NEG_INFINITY, |a, &x| a.max(x));
            v.mapv_inplace(|x| (x - max).exp());
            let total = v.sum();
            v /= total;
        }
    }
    out
}

/// One-step estimates of both channels from the fully noised state at `T`,
/// installed as cross-channel conditioning.
fn install_cold_estimates(
    params: &DenoiserParams,
    ctx: &mut ConditioningContext,
    cont_schedule: &NoiseSchedule,
    seed: u64,
) -> Result<()> {
    let n = ctx.n_rows();
    let big_t = cont_schedule.steps();
    let layout = ctx.layout().clone();
    let cont_est = if layout.n_cont() > 0 {
        let state = ContState::init(ctx, big_t, seed);
        let eps = continuous::estimate_noise(params, state.network_view().view(), &vec![big_t; n], ctx, cont_schedule)?;
        let a = cont_schedule.alpha_bar(big_t);
        let mut x0 = state.x.clone();
        ndarray::Zip::from(&mut x0).and(&eps).for_each(|x, &e| {
            *x = predicted_x0(*x, e, a).clamp(-DEFAULT_X0_CLIP, DEFAULT_X0_CLIP);
        });
        Some(x0)
    } else {
        None
    };
    let cat_est = if layout.n_blocks() > 0 {
        let state = SimplexState::uniform(ctx, big_t);
        let logits = params.predict_logits(state.network_view(&layout).view(), &vec![big_t; n], ctx)?;
        Some(block_softmax(&logits, &layout))
    } else {
        None
    };
    if let Some(x) = cont_est {
        ctx.set_cross_cont(x.view());
    }
    if let Some(p) = cat_est {
        ctx.set_cross_cat(p.view());
    }
    Ok(())
}

struct BatchLoss {
    cont: f64,
    disc: f64,
    grads: DenoiserParams,
    count: usize,
}

#[allow(clippy::too_many_arguments)]
fn batch_loss(
    params: &DenoiserParams,
    encoder: &Encoder,
    table: &MaskedTable,
    config: &TrainConfig,
    cont_schedule: &NoiseSchedule,
    disc_schedule: &NoiseSchedule,
    seed: u64,
    allow_cross: bool,
) -> Result<BatchLoss> {
    let mut r = rng::rng(seed);
    let layout = encoder.layout();
    let (batch, unavailable, targets): (EncodedBatch, Mask, Mask) = match config.supervision {
        Supervision::SelfMask => {
            let sm = self_mask_augment(
                table.mask(),
                config.self_mask_ratio,
                config.self_mask_scheme,
                table.values().view(),
                table.schema(),
                r.random(),
            )?;
            (encoder.encode(table)?, sm.mask, sm.pseudo)
        }
        fill => {
            let filled = fill_missing(table, fill)?;
            let mask = table.mask().clone();
            (encoder.encode(&filled)?, mask.clone(), mask)
        }
    };
    let mut ctx = ConditioningContext::new(&batch, &unavailable)?;
    if allow_cross && r.random::<f64>() < config.cross_prob {
        install_cold_estimates(params, &mut ctx, cont_schedule, r.random())?;
    }
    let n = table.n_rows();
    let t: Vec<usize> = (0..n).map(|_| r.random_range(1..=config.steps)).collect();
    let mut grads = params.zeros_like();
    let (mut cont, mut disc, mut count) = (0.0, 0.0, 0);
    if layout.n_cont() > 0 {
        let mut draws = ContDraws::sample(n, layout.n_cont(), config.steps, &mut r);
        draws.t = t.clone();
        let targets = column_targets_cont(&targets, &layout);
        let lg = continuous::loss_cont(params, batch.cont.view(), targets.view(), &ctx, cont_schedule, &draws)?;
        cont = lg.loss;
        count += lg.count;
        grads.cont = Some(lg.grads);
    }
    if layout.n_blocks() > 0 {
        let draws = DiscDraws { t };
        let targets = column_targets_cat(&targets, &layout);
        let lg = discrete::loss_disc(params, batch.cat.view(), targets.view(), &ctx, disc_schedule, &draws)?;
        disc = lg.loss;
        count += lg.count;
        grads.disc = Some(lg.grads);
    }
    Ok(BatchLoss { cont, disc, grads, count })
}

/// Trains both channels; see [`train_with_progress`].
pub fn train(table: &MaskedTable, config: &TrainConfig) -> Result<Checkpoint> {
    train_with_progress(table, config, |_| {})
}

/// Trains both channels jointly, calling `progress` after every epoch.
///
/// Each batch is self-masked, both channel losses are computed on the same
/// masked sample and summed, and one optimizer step updates both networks.
/// The parameters with the lowest validation loss are kept.
pub fn train_with_progress<F: FnMut(&EpochRecord)>(
    table: &MaskedTable,
    config: &TrainConfig,
    mut progress: F,
) -> Result<Checkpoint> {
    config.validate()?;
    if table.n_rows() == 0 {
        return Err(Error::InvalidArgument("cannot train on an empty table".into()));
    }
    for j in 0..table.n_cols() {
        if (0..table.n_rows()).all(|i| table.is_missing(i, j)) {
            return Err(Error::InvalidArgument(format!(
                "column '{}' is entirely missing",
                table.schema().column(j).name
            )));
        }
    }
    let encoder = Encoder::fit(table, config.routing)?;
    let layout = encoder.layout();
    let (cont_schedule, disc_schedule) = schedules(config.steps)?;
    let mut params = DenoiserParams::new(&layout, config.denoiser, child_seed(config.seed, STREAM_PARAMS));

    let mut rows: Vec<usize> = (0..table.n_rows()).collect();
    rows.shuffle(&mut rng::child_rng(config.seed, STREAM_SPLIT));
    let n_val = if table.n_rows() >= 2 {
        ((config.validation_fraction * table.n_rows() as f64).round() as usize).min(table.n_rows() - 1)
    } else {
        0
    };
    let (val_rows, train_rows) = rows.split_at(n_val);
    let mut train_rows = train_rows.to_vec();
    let val_table = (!val_rows.is_empty()).then(|| {
        let mut v = val_rows.to_vec();
        v.sort_unstable();
        table.select_rows(&v)
    });
    train_rows.sort_unstable();

    let mut opt = AdamW::new(&params, config.optimizer());
    let mut history = Vec::with_capacity(config.epochs);
    let mut best = (f64::INFINITY, 0usize, params.clone());
    let mut stale = 0;
    for epoch in 1..=config.epochs {
        let epoch_seed = child_seed(child_seed(config.seed, STREAM_EPOCH), epoch as u64);
        train_rows.shuffle(&mut rng::rng(epoch_seed));
        let (mut sum_c, mut sum_d, mut batches, mut supervised) = (0.0, 0.0, 0usize, 0usize);
        for (b, chunk) in train_rows.chunks(config.batch_size).enumerate() {
            let sub = table.select_rows(chunk);
            let bl = batch_loss(
                &params,
                &encoder,
                &sub,
                config,
                &cont_schedule,
                &disc_schedule,
                child_seed(epoch_seed, b as u64 + 1),
                true,
            )?;
            if bl.count == 0 {
                continue;
            }
            opt.step(&mut params, &bl.grads)?;
            sum_c += bl.cont;
            sum_d += bl.disc;
            batches += 1;
            supervised += bl.count;
        }
        if supervised == 0 {
            return Err(Error::Training(
                "no supervision targets were produced; raise the self-mask ratio".into(),
            ));
        }
        let train_cont = sum_c / batches as f64;
        let train_disc = sum_d / batches as f64;
        let val_loss = match &val_table {
            Some(v) => {
                let bl = batch_loss(
                    &params,
                    &encoder,
                    v,
                    config,
                    &cont_schedule,
                    &disc_schedule,
                    child_seed(config.seed, STREAM_VALIDATION),
                    false,
                )?;
                Some(bl.cont + bl.disc)
            }
            None => None,
        };
        let record = EpochRecord {
            epoch,
            train_loss: train_cont + train_disc,
            train_cont,
            train_disc,
            val_loss,
        };
        if !record.train_loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
        }
        progress(&record);
        history.push(record);
        let score = val_loss.unwrap_or(f64::NEG_INFINITY);
        if score < best.0 || val_loss.is_none() {
            best = (score, epoch, params.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok(Checkpoint {
        encoder,
        cont_schedule,
        disc_schedule,
        params: best.2,
        config: config.clone(),
        history,
        best_epoch: best.1,
    })
}

/// Sampling options for [`impute`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ImputeOptions {
    /// Reverse steps in the timestep plan.
    pub steps: usize,
    pub eta: f64,
    pub spacing: Spacing,
    /// Seed of the noise injected when `eta > 0`. The starting noise is tied
    /// to the checkpoint, so `eta = 0` output does not depend on it.
    pub seed: u64,
    /// Run the cross-channel refinement passes.
    pub refine: bool,
    /// Exchange estimates at every reverse step instead of between passes.
    pub exchange_every_step: bool,
    pub clip_x0: Option<f64>,
}

impl Default for ImputeOptions {
    fn default() -> Self {
        ImputeOptions {
            steps: 20,
            eta: 0.0,
            spacing: Spacing::Uniform,
            seed: 0,
            refine: true,
            exchange_every_step: false,
            clip_x0: Some(DEFAULT_X0_CLIP),
        }
    }
}

impl Checkpoint {
    pub fn plan(&self, options: &ImputeOptions) -> Result<TimestepPlan> {
        make_subsequence(self.config.steps, options.steps, options.spacing)?.with_eta(options.eta)
    }

    fn init_seed(&self, pass: u64) -> u64 {
        child_seed(child_seed(self.config.seed, STREAM_INIT), pass)
    }

    /// Completes every missing cell of `table`. Observed cells are copied verbatim.
    pub fn impute(&self, table: &MaskedTable, options: &ImputeOptions) -> Result<MaskedTable> {
        if table.schema() != &self.encoder.schema {
            return Err(Error::Schema("table schema differs from the checkpoint's schema".into()));
        }
        let plan = self.plan(options)?;
        let batch = self.encoder.encode(table)?;
        let layout = batch.layout.clone();
        let ctx = ConditioningContext::new(&batch, table.mask())?;
        let ddim = DdimOptions { clip_x0: options.clip_x0 };
        let has_cont = layout.n_cont() > 0;
        let has_disc = layout.n_blocks() > 0;
        let noise_seed = |pass: u64| child_seed(options.seed, pass);

        let (cont, cat) = if options.exchange_every_step && has_cont && has_disc {
            self.joint_pass(&ctx, &plan, ddim, noise_seed(0))?
        } else {
            let mut cont = if has_cont {
                continuous::sample_cont(&self.params, &ctx, &plan, &self.cont_schedule, self.init_seed(0), noise_seed(0), ddim)?
            } else {
                batch.cont.clone()
            };
            let mut cat = if has_disc {
                discrete::sample_disc(&self.params, &ctx, &plan, &self.disc_schedule)?
            } else {
                batch.cat.clone()
            };
            if options.refine && has_cont && has_disc {
                let mut with_cat = ctx.clone();
                with_cat.set_cross_cat(cat.view());
                cont = continuous::sample_cont(&self.params, &with_cat, &plan, &self.cont_schedule, self.init_seed(0), noise_seed(1), ddim)?;
                let mut with_cont = ctx.clone();
                with_cont.set_cross_cont(cont.view());
                cat = discrete::sample_disc(&self.params, &with_cont, &plan, &self.disc_schedule)?;
            }
            (cont, cat)
        };
        self.assemble(table, &batch, &ctx, cont, cat)
    }

    fn joint_pass(
        &self,
        ctx: &ConditioningContext,
        plan: &TimestepPlan,
        ddim: DdimOptions,
        noise_seed: u64,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        let layout = ctx.layout().clone();
        let mut ctx = ctx.clone();
        let mut cs = ContState::init(&ctx, plan.last(), self.init_seed(0));
        let mut ds = SimplexState::uniform(&ctx, plan.last());
        let mut noise = rng::rng(noise_seed);
        for (_, t_prev) in plan.reverse_pairs() {
            let out = continuous::ddim_step(&self.params, &cs, &ctx, t_prev, &self.cont_schedule, plan.eta(), ddim, &mut noise)?;
            let (next, logits) = discrete::reverse_step(&self.params, &ds, &ctx, t_prev, &self.disc_schedule)?;
            ctx.set_cross_cont(out.x0_hat.view());
            ctx.set_cross_cat(block_softmax(&logits, &layout).view());
            cs = out.state;
            ds = next;
        }
        Ok((cs.x, ds.p))
    }

    fn assemble(
        &self,
        table: &MaskedTable,
        batch: &EncodedBatch,
        ctx: &ConditioningContext,
        cont: Array2<f64>,
        cat: Array2<f64>,
    ) -> Result<MaskedTable> {
        let layout = &batch.layout;
        let mut merged_cont = batch.cont.clone();
        ndarray::Zip::from(&mut merged_cont)
            .and(&cont)
            .and(&ctx.hidden_cont)
            .for_each(|m, &c, &h| {
                if h == 1.0 {
                    *m = c;
                }
            });
        let mut merged_cat = batch.cat.clone();
        for i in 0..table.n_rows() {
            for (b, block) in layout.blocks.iter().enumerate() {
                if ctx.hidden_cat[[i, b]] == 1.0 {
                    let range = block.offset..block.offset + block.k;
                    merged_cat.slice_mut(s![i, range.clone()]).assign(&cat.slice(s![i, range]));
                }
            }
        }
        let full = EncodedBatch {
            cont: merged_cont,
            cat: merged_cat,
            mask: Array2::from_elem(table.mask().dim(), false),
            layout: layout.clone(),
            standardizer: batch.standardizer.clone(),
        };
        let decoded = self.encoder.decode(&full)?;
        let mut values = decoded.values().clone();
        for ((i, j), &m) in table.mask().indexed_iter() {
            if !m {
                values[[i, j]] = table.values()[[i, j]];
            }
        }
        if let Some(((i, j), _)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite(format!("imputed cell ({i}, {j})")));
        }
        MaskedTable::complete(table.schema().clone(), values)
    }
}

/// Completes every missing cell of `table` with a trained checkpoint.
pub fn impute(checkpoint: &Checkpoint, table: &MaskedTable, options: &ImputeOptions) -> Result<MaskedTable> {
    checkpoint.impute(table, options)
}

// --- persistence ---------------------------------------------------------

/// File signature of checkpoints.
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HYBIMPCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(serde::Serialize, serde::Deserialize)]
struct Header {
    encoder: Encoder,
    cont_schedule: NoiseSchedule,
    disc_schedule: NoiseSchedule,
    config: TrainConfig,
    history: Vec<EpochRecord>,
    best_epoch: usize,
    cont_shape: Option<MlpShape>,
    disc_shape: Option<MlpShape>,
}

impl Checkpoint {
    /// Serializes to the binary checkpoint layout:
    ///
    /// | field        | encoding                              |
    /// |--------------|---------------------------------------|
    /// | magic        | 8 bytes `HYBIMPCK`                    |
    /// | version      | u32 little endian                     |
    /// | header size  | u64 little endian                     |
    /// | header       | UTF-8 JSON (everything but weights)   |
    /// | weight count | u64 little endian                     |
    /// | weights      | f64 little endian, continuous network first, layer by layer, weights then biases |
    /// | digest       | SHA-256 of all preceding bytes        |
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            encoder: self.encoder.clone(),
            cont_schedule: self.cont_schedule.clone(),
            disc_schedule: self.disc_schedule.clone(),
            config: self.config.clone(),
            history: self.history.clone(),
            best_epoch: self.best_epoch,
            cont_shape: self.params.cont.as_ref().map(|m| m.shape()),
            disc_shape: self.params.disc.as_ref().map(|m| m.shape()),
        };
        let json = serde_json::to_vec(&header)?;
        let flat = self.params.to_flat();
        let mut out = Vec::with_capacity(60 + json.len() + 8 * flat.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(flat.len() as u64).to_le_bytes());
        for v in &flat {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_string());
        if bytes.len() < 8 + 4 + 8 + 8 + 32 {
            return Err(corrupt("file is too short"));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(corrupt("missing checkpoint signature"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("digest mismatch (truncated or modified file)"));
        }
        let mut pos: usize = 12;
        let mut take = |n: usize| -> Result<&[u8]> {
            let end = pos.checked_add(n).filter(|&e| e <= body.len()).ok_or_else(|| corrupt("unexpected end of file"))?;
            let out = &body[pos..end];
            pos = end;
            Ok(out)
        };
        let header_len = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
        let header: Header = serde_json::from_slice(take(header_len)?)
            .map_err(|e| Error::CorruptCheckpoint(format!("header: {e}")))?;
        let count = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
        let raw = take(count.checked_mul(8).ok_or_else(|| corrupt("weight count overflow"))?)?;
        if pos != body.len() {
            return Err(corrupt("trailing bytes after weights"));
        }
        let layout = header.encoder.layout();
        let mut params = DenoiserParams::new(&layout, header.config.denoiser, 0);
        if params.cont.as_ref().map(|m| m.shape()) != header.cont_shape
            || params.disc.as_ref().map(|m| m.shape()) != header.disc_shape
        {
            return Err(corrupt("network shapes disagree with the schema"));
        }
        if params.n_params() != count {
            return Err(corrupt("weight count disagrees with network shapes"));
        }
        let mut values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        for tensor in params.tensors_mut() {
            for v in tensor.iter_mut() {
                *v = values.next().expect("count checked");
            }
        }
        Ok(Checkpoint {
            encoder: header.encoder,
            cont_schedule: header.cont_schedule,
            disc_schedule: header.disc_schedule,
            params,
            config: header.config,
            history: header.history,
            best_epoch: header.best_epoch,
        })
    }

    pub fn write_to<W: Write>(&self, mut writer: W) -> Result<()> {
        writer
            .write_all(&self.to_bytes()?)
            .map_err(|e| Error::io("<checkpoint>", e))
    }

    pub fn read_from<R: Read>(mut reader: R) -> Result<Self> {
        let mut bytes = Vec::new();
        reader
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io("<checkpoint>", e))?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// SHA-256 of the serialized checkpoint, hex encoded.
    pub fn digest_hex(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_bytes()?);
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}
