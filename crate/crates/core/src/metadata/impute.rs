use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encode::EncodedMeta;
use super::schema::{MetadataSchema, Segment, SegmentKind};
use crate::error::{Error, Result};
use crate::tensor::{sgd_step, Tape, Tensor, Var};

/// How missing metadata entries are filled.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ImputeMode {
    /// Training-set mode for categoricals, median for numerics.
    #[default]
    Statistic,
    /// Denoising autoencoder trained on randomly masked training encodings.
    Autoencoder(AutoencoderConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoencoderConfig {
    pub hidden: usize,
    pub bottleneck: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Probability of hiding an observed column group during training.
    pub mask_prob: f64,
    pub seed: u64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        AutoencoderConfig {
            hidden: 64,
            bottleneck: 32,
            epochs: 60,
            batch_size: 32,
            lr: 0.5,
            mask_prob: 0.2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Dense {
    inputs: usize,
    outputs: usize,
    weight: Vec<f32>,
    bias: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum Filler {
    Statistic { fill: Vec<f32> },
    Autoencoder { layers: Vec<Dense> },
}

/// Fitted imputer. Serializable so inference reuses the training statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Imputer {
    segments: Vec<Segment>,
    width: usize,
    filler: Filler,
}

/// Fits an imputer on `dataset[train]` and applies it to every row.
pub fn impute(
    dataset: &[EncodedMeta],
    train: &[usize],
    schema: &MetadataSchema,
    mode: &ImputeMode,
) -> Result<(Vec<EncodedMeta>, Imputer)> {
    let rows: Vec<&EncodedMeta> = train
        .iter()
        .map(|&i| {
            dataset
                .get(i)
                .ok_or_else(|| Error::Contract(format!("training index {i} out of range")))
        })
        .collect::<Result<_>>()?;
    let imputer = Imputer::fit(&rows, schema, mode)?;
    let out = dataset
        .iter()
        .map(|r| imputer.apply(r))
        .collect::<Result<_>>()?;
    Ok((out, imputer))
}

impl Imputer {
    pub fn fit(train: &[&EncodedMeta], schema: &MetadataSchema, mode: &ImputeMode) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::State(
                "cannot fit an imputer on an empty training partition".into(),
            ));
        }
        let segments = schema.segments();
        let width = schema.encoded_len();
        if let Some(bad) = train
            .iter()
            .find(|r| r.len() != width || r.mask.len() != width)
        {
            return Err(Error::shape(format!(
                "encoded row of length {} does not match schema length {width}",
                bad.len()
            )));
        }
        let filler = match mode {
            ImputeMode::Statistic => Filler::Statistic {
                fill: statistic_fill(train, &segments, width),
            },
            ImputeMode::Autoencoder(cfg) => Filler::Autoencoder {
                layers: train_autoencoder(train, &segments, width, cfg)?,
            },
        };
        Ok(Imputer {
            segments,
            width,
            filler,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Fills every masked group; observed entries are copied through untouched.
    pub fn apply(&self, row: &EncodedMeta) -> Result<EncodedMeta> {
        if row.len() != self.width || row.mask.len() != self.width {
            return Err(Error::shape(format!(
                "encoded row of length {} does not match imputer width {}",
                row.len(),
                self.width
            )));
        }
        if !row.has_missing() {
            return Ok(row.clone());
        }
        let proposal = match &self.filler {
            Filler::Statistic { fill } => fill.clone(),
            Filler::Autoencoder { layers } => reconstruct(layers, &masked_input(row))?,
        };
        let mut out = row.clone();
        for seg in &self.segments {
            let span = seg.start..seg.start + seg.len;
            if !row.mask[span.clone()].iter().any(|&m| m) {
                continue;
            }
            match seg.kind {
                SegmentKind::OneHot => {
                    let best = argmax(&proposal[span.clone()]);
                    for (j, v) in out.values[span].iter_mut().enumerate() {
                        *v = if j == best { 1.0 } else { 0.0 };
                    }
                }
                SegmentKind::Numeric => out.values[seg.start] = proposal[seg.start].clamp(0.0, 1.0),
            }
        }
        Ok(out)
    }
}

/// First index of the maximum.
fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn group_observed(row: &EncodedMeta, seg: &Segment) -> bool {
    !row.mask[seg.start..seg.start + seg.len].iter().any(|&m| m)
}

/// Categorical groups get the training mode (lowest index on ties, first
/// category if never observed); numerics get the median (0.5 if never
/// observed).
fn statistic_fill(train: &[&EncodedMeta], segments: &[Segment], width: usize) -> Vec<f32> {
    let mut fill = vec![0.0f32; width];
    for seg in segments {
        let observed = train.iter().filter(|r| group_observed(r, seg));
        match seg.kind {
            SegmentKind::OneHot => {
                let mut counts = vec![0usize; seg.len];
                for r in observed {
                    counts[argmax(&r.values[seg.start..seg.start + seg.len])] += 1;
                }
                let mut mode = 0;
                for (i, &c) in counts.iter().enumerate() {
                    if c > counts[mode] {
                        mode = i;
                    }
                }
                fill[seg.start + mode] = 1.0;
            }
            SegmentKind::Numeric => {
                let mut vals: Vec<f32> = observed.map(|r| r.values[seg.start]).collect();
                fill[seg.start] = if vals.is_empty() {
                    0.5
                } else {
                    vals.sort_by(f32::total_cmp);
                    let m = vals.len() / 2;
                    if vals.len() % 2 == 1 {
                        vals[m]
                    } else {
                        0.5 * (vals[m - 1] + vals[m])
                    }
                };
            }
        }
    }
    fill
}

fn masked_input(row: &EncodedMeta) -> Vec<f32> {
    row.values
        .iter()
        .zip(&row.mask)
        .map(|(&v, &m)| if m { 0.0 } else { v })
        .collect()
}

fn reconstruct(layers: &[Dense], input: &[f32]) -> Result<Vec<f32>> {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::from_vec(&[1, input.len()], input.to_vec())?)?;
    let (out, _) = ae_forward(&mut tape, layers, x)?;
    Ok(tape.value(out).data().to_vec())
}

/// Four dense layers, ReLU between, sigmoid output.
fn ae_forward(tape: &mut Tape<f32>, layers: &[Dense], x: Var) -> Result<(Var, Vec<Var>)> {
    let mut h = x;
    let mut params = Vec::new();
    for (i, layer) in layers.iter().enumerate() {
        let w = tape.param(&Tensor::from_vec(
            &[layer.inputs, layer.outputs],
            layer.weight.clone(),
        )?)?;
        let b = tape.param(&Tensor::from_vec(&[layer.outputs], layer.bias.clone())?)?;
        params.extend([w, b]);
        h = tape.linear(h, w, b)?;
        h = if i + 1 < layers.len() {
            tape.relu(h)?
        } else {
            tape.sigmoid(h)?
        };
    }
    Ok((h, params))
}

fn train_autoencoder(
    train: &[&EncodedMeta],
    segments: &[Segment],
    width: usize,
    cfg: &AutoencoderConfig,
) -> Result<Vec<Dense>> {
    if cfg.hidden == 0 || cfg.bottleneck == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("autoencoder sizes must be positive".into()));
    }
    if !(0.0..1.0).contains(&cfg.mask_prob) || cfg.lr.is_nan() || cfg.lr <= 0.0 {
        return Err(Error::Config(
            "autoencoder needs lr > 0 and mask_prob in [0, 1)".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dims = [width, cfg.hidden, cfg.bottleneck, cfg.hidden, width];
    let mut layers: Vec<Dense> = dims
        .windows(2)
        .map(|d| {
            let bound = (1.0 / d[0] as f32).sqrt();
            Dense {
                inputs: d[0],
                outputs: d[1],
                weight: (0..d[0] * d[1])
                    .map(|_| rng.random_range(-bound..=bound))
                    .collect(),
                bias: vec![0.0; d[1]],
            }
        })
        .collect();

    let mut order: Vec<usize> = (0..train.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let n = batch.len();
            let mut input = Vec::with_capacity(n * width);
            let mut target = Vec::with_capacity(n * width);
            let mut weight = Vec::with_capacity(n * width);
            for &i in batch {
                let row = train[i];
                let mut x = masked_input(row);
                for seg in segments {
                    if group_observed(row, seg) && rng.random_bool(cfg.mask_prob) {
                        x[seg.start..seg.start + seg.len]
                            .iter_mut()
                            .for_each(|v| *v = 0.0);
                    }
                }
                input.extend(x);
                target.extend(masked_input(row));
                weight.extend(row.mask.iter().map(|&m| if m { 0.0 } else { 1.0f32 }));
            }
            let observed = weight.iter().filter(|&&w| w > 0.0).count();
            if observed == 0 {
                continue;
            }
            let mut tape = Tape::<f32>::new();
            let x = tape.constant(Tensor::from_vec(&[n, width], input)?)?;
            let t = tape.constant(Tensor::from_vec(&[n, width], target)?)?;
            let w = tape.constant(Tensor::from_vec(&[n, width], weight)?)?;
            let (y, params) = ae_forward(&mut tape, &layers, x)?;
            let diff = tape.sub(y, t)?;
            let sq = tape.mul(diff, diff)?;
            let weighted = tape.mul(sq, w)?;
            let total = tape.sum(weighted)?;
            let loss = tape.scale(total, 1.0 / observed as f32)?;
            tape.backward(loss)?;

            let mut tensors = Vec::with_capacity(params.len());
            for &p in &params {
                let mut t = Tensor::from_vec(tape.shape(p), tape.value(p).data().to_vec())?;
                t.accumulate_grad(tape.grad(p).expect("parameter reached by backward"))?;
                tensors.push(t);
            }
            sgd_step(tensors.iter_mut(), cfg.lr)?;
            for (layer, pair) in layers.iter_mut().zip(tensors.chunks(2)) {
                layer.weight.copy_from_slice(pair[0].data());
                layer.bias.copy_from_slice(pair[1].data());
            }
        }
    }
    Ok(layers)
}
