use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{Dataset, Sample};
use super::loss::{class_weights, final_loss, one_hot, sr_loss, weighted_ce, LossConfig};
use crate::error::{Error, Result};
use crate::evaluation::{confusion, metrics, predict_dataset};
use crate::imaging::{batch_tensor, sr_target, AugmentConfig, AugmentParams, Image, SrMethod};
use crate::model::{forward, ModelBundle};
use crate::tensor::{sgd_step, OptimizerState, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub step_size: usize,
    pub gamma: f64,
    pub seed: u64,
    pub sr_method: SrMethod,
    /// `augment.seed` offsets the per-sample augmentation streams.
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 70,
            batch_size: 32,
            base_lr: 0.01,
            step_size: 15,
            gamma: 0.1,
            seed: 0,
            sr_method: SrMethod::Bilinear,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch_size must be positive".into(),
            ));
        }
        self.schedule()?;
        self.augment.validate()
    }

    pub fn schedule(&self) -> Result<OptimizerState> {
        OptimizerState::new(self.base_lr, self.step_size, self.gamma)
    }
}

/// Sample-weighted means over one epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub loss_wce: f64,
    pub loss_sr: f64,
    pub loss_final: f64,
    pub samples: usize,
}

/// One line of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss_wce: f64,
    pub loss_sr: f64,
    pub loss_final: f64,
    pub val_bacc: f64,
    pub val_acc: f64,
}

/// Independent RNG stream for one sample in one epoch, so results do not
/// depend on batch composition or processing order.
fn sample_rng(cfg: &TrainConfig, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(cfg.augment.seed));
    rng.set_stream(((epoch as u64) << 32) | index as u64);
    rng
}

fn shuffle_rng(cfg: &TrainConfig, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream((1 << 63) | epoch as u64);
    rng
}

/// Augmented input and its SR target. Interpolated targets are computed from
/// the augmented image; file targets receive the same geometric and
/// photometric transform.
pub fn training_pair(
    sample: &Sample,
    cfg: &TrainConfig,
    sr_factor: usize,
    epoch: usize,
    index: usize,
) -> Result<(Image, Image)> {
    let mut rng = sample_rng(cfg, epoch, index);
    let params = AugmentParams::sample(&cfg.augment, &mut rng);
    let input = params.apply(&sample.image, &mut rng);
    let target = match cfg.sr_method {
        SrMethod::File => {
            let raw = sr_target(
                &sample.image,
                SrMethod::File,
                sr_factor,
                sample.source.as_deref(),
            )?;
            params.apply_without_noise(&raw)
        }
        method => sr_target(&input, method, sr_factor, None)?,
    };
    Ok((input, target))
}

/// Builds the batch meta matrix from samples.
pub(crate) fn meta_tensor(samples: &[&Sample], dim: usize) -> Result<Tensor<f32>> {
    let mut data = Vec::with_capacity(samples.len() * dim);
    for s in samples {
        if s.meta.len() != dim {
            return Err(Error::shape(format!(
                "sample `{}` has {} metadata values, model expects {dim}",
                s.id,
                s.meta.len()
            )));
        }
        data.extend_from_slice(&s.meta);
    }
    Tensor::from_vec(&[samples.len(), dim], data)
}

/// Seeded-shuffled pass over `data` with one SGD step per batch.
pub fn train_epoch(
    bundle: &mut ModelBundle,
    data: &Dataset,
    weights: &[f64],
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    epoch: usize,
) -> Result<EpochStats> {
    if data.is_empty() {
        return Err(Error::Contract("cannot train on an empty dataset".into()));
    }
    let lr = cfg.schedule()?.lr_at_epoch(epoch);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut shuffle_rng(cfg, epoch));

    let mcfg = bundle.config().clone();
    let mut sums = [0.0f64; 3];
    for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
        let mut step = || -> Result<[f32; 3]> {
            let mut inputs = Vec::with_capacity(batch.len());
            let mut targets = Vec::with_capacity(batch.len());
            for &i in batch {
                let (x, t) = training_pair(&data.samples[i], cfg, mcfg.sr_factor, epoch, i)?;
                inputs.push(x);
                targets.push(t);
            }
            let samples: Vec<&Sample> = batch.iter().map(|&i| &data.samples[i]).collect();
            let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();

            let mut tape = Tape::new();
            let vars = bundle.bind(&mut tape)?;
            let x = tape.constant(batch_tensor(&inputs.iter().collect::<Vec<_>>())?)?;
            let m = tape.constant(meta_tensor(&samples, mcfg.meta_input_dim)?)?;
            let y = tape.constant(one_hot(&labels, mcfg.n_classes)?)?;
            let t = tape.constant(batch_tensor(&targets.iter().collect::<Vec<_>>())?)?;
            let out = forward(bundle, &mut tape, &vars, x, m, true)?;
            let probs = tape.softmax(out.logits)?;
            let l_wce = weighted_ce(&mut tape, probs, y, weights, loss_cfg.ce_form)?;
            let l_sr = sr_loss(&mut tape, t, out.sr_pred.expect("decoder requested"))?;
            let l_final = final_loss(&mut tape, l_wce, l_sr, loss_cfg)?;
            let values = [l_wce, l_sr, l_final].map(|v| tape.value(v).data()[0]);
            tape.backward(l_final)?;
            bundle.load_grads(&tape, &vars)?;
            sgd_step(bundle.params_mut(), lr)?;
            Ok(values)
        };
        let values = step().map_err(|e| match e {
            Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}, batch {b}: {msg}")),
            other => other,
        })?;
        for (s, v) in sums.iter_mut().zip(values) {
            *s += v as f64 * batch.len() as f64;
        }
    }
    let n = data.len() as f64;
    Ok(EpochStats {
        loss_wce: sums[0] / n,
        loss_sr: sums[1] / n,
        loss_final: sums[2] / n,
        samples: data.len(),
    })
}

/// Outcome of [`fit`].
#[derive(Clone, Debug)]
pub struct FitResult {
    pub best: ModelBundle,
    pub best_epoch: usize,
    pub best_val_bacc: f64,
    pub last: ModelBundle,
    pub history: Vec<HistoryRecord>,
}

/// Called after every epoch with the history row, the current model and
/// whether it is the new best.
pub type EpochHook<'a> = dyn FnMut(&HistoryRecord, &ModelBundle, bool) -> Result<()> + 'a;

/// Trains for `cfg.epochs`, scoring validation BACC after each epoch and
/// keeping the best model (earliest epoch wins ties).
pub fn fit(
    bundle: ModelBundle,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    on_epoch: &mut EpochHook<'_>,
) -> Result<FitResult> {
    cfg.validate()?;
    loss_cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Contract(
            "fit needs non-empty train and val partitions".into(),
        ));
    }
    if train.n_classes() != bundle.config().n_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, model {}",
            train.n_classes(),
            bundle.config().n_classes
        )));
    }
    let weights = class_weights(&train.class_counts(), loss_cfg.weight_mode)?;
    let schedule = cfg.schedule()?;
    let mut model = bundle;
    let mut best: Option<(ModelBundle, usize, f64)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let stats = train_epoch(&mut model, train, &weights, cfg, loss_cfg, epoch)?;
        let preds = predict_dataset(&model, val, cfg.batch_size)?;
        let cm = confusion(&val.labels(), &preds.predictions(), val.n_classes())?;
        let m = metrics(&cm);
        let record = HistoryRecord {
            epoch,
            lr: schedule.lr_at_epoch(epoch),
            loss_wce: stats.loss_wce,
            loss_sr: stats.loss_sr,
            loss_final: stats.loss_final,
            val_bacc: m.bacc,
            val_acc: m.acc,
        };
        let improved = best.as_ref().is_none_or(|(_, _, b)| m.bacc > *b);
        if improved {
            best = Some((model.clone(), epoch, m.bacc));
        }
        on_epoch(&record, &model, improved)?;
        history.push(record);
    }
    let (best, best_epoch, best_val_bacc) = best.expect("at least one epoch");
    Ok(FitResult {
        best,
        best_epoch,
        best_val_bacc,
        last: model,
        history,
    })
}
