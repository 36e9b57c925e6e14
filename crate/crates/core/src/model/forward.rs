use super::{FusionMode, ModelBundle, ParamVars};
use crate::error::{Error, Result};
use crate::tensor::{kernels, Scalar, Tape, Tensor, Var};

/// Tape handles of every intermediate the losses and tests care about.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub feature_map: Var,
    pub fv_image: Var,
    pub fv_meta: Var,
    /// Fused vector entering the classifier.
    pub embedding: Var,
    pub logits: Var,
    pub sr_pred: Option<Var>,
}

/// Detached forward results.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput<T: Scalar = f32> {
    pub logits: Tensor<T>,
    pub probs: Tensor<T>,
    pub embedding: Tensor<T>,
    pub sr_pred: Option<Tensor<T>>,
}

fn dense<T: Scalar>(tape: &mut Tape<T>, vars: &ParamVars, prefix: &str, x: Var) -> Result<Var> {
    let w = vars.get(&format!("{prefix}.weight"))?;
    let b = vars.get(&format!("{prefix}.bias"))?;
    tape.linear(x, w, b)
}

fn conv<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &ParamVars,
    prefix: &str,
    x: Var,
    stride: usize,
    padding: usize,
) -> Result<Var> {
    let w = vars.get(&format!("{prefix}.weight"))?;
    let b = vars.get(&format!("{prefix}.bias"))?;
    tape.conv2d(x, w, b, stride, padding)
}

/// Encoder stages then the 1×1 bridge with global average pooling.
/// Returns `(feature_map, fv_image)`.
pub fn visual_forward<T: Scalar>(
    bundle: &ModelBundle<T>,
    tape: &mut Tape<T>,
    vars: &ParamVars,
    images: Var,
) -> Result<(Var, Var)> {
    let cfg = bundle.config();
    let s = cfg.input_size;
    let shape = tape.shape(images);
    if shape.len() != 4 || shape[1..] != [3, s, s] {
        return Err(Error::shape(format!(
            "expected images N×3×{s}×{s}, got {shape:?}"
        )));
    }
    let n = shape[0];
    let mut h = images;
    for i in 0..cfg.encoder_channels.len() {
        h = conv(tape, vars, &format!("encoder.{i}"), h, 2, 1)?;
        h = tape.relu(h)?;
    }
    let feature_map = h;
    let b = conv(tape, vars, "bridge", feature_map, 1, 0)?;
    let b = tape.relu(b)?;
    let pooled = tape.adaptive_avg_pool(b, 1, 1)?;
    let fv_image = tape.reshape(pooled, &[n, cfg.fusion_dim])?;
    Ok((feature_map, fv_image))
}

/// Four dense layers with ReLU between; the last is linear. In image-only
/// mode the output is a constant all-ones vector.
pub fn meta_forward<T: Scalar>(
    bundle: &ModelBundle<T>,
    tape: &mut Tape<T>,
    vars: &ParamVars,
    meta: Var,
) -> Result<Var> {
    let cfg = bundle.config();
    let shape = tape.shape(meta);
    if shape.len() != 2 || shape[1] != cfg.meta_input_dim {
        return Err(Error::shape(format!(
            "expected metadata N×{}, got {shape:?}",
            cfg.meta_input_dim
        )));
    }
    let n = shape[0];
    if cfg.fusion_mode == FusionMode::ImageOnly {
        return tape.constant(Tensor::ones(&[n, cfg.fusion_dim]));
    }
    let mut h = meta;
    let layers = cfg.meta_dims.len();
    for i in 0..layers {
        h = dense(tape, vars, &format!("meta.{i}"), h)?;
        if i + 1 < layers {
            h = tape.relu(h)?;
        }
    }
    Ok(h)
}

pub fn fuse<T: Scalar>(
    tape: &mut Tape<T>,
    fv_image: Var,
    fv_meta: Var,
    mode: FusionMode,
) -> Result<Var> {
    match mode {
        FusionMode::Multiply | FusionMode::ImageOnly => tape.mul(fv_image, fv_meta),
        FusionMode::Concat => tape.concat_cols(fv_image, fv_meta),
    }
}

/// Two dense layers with a ReLU between; returns raw logits.
pub fn classify_forward<T: Scalar>(
    _bundle: &ModelBundle<T>,
    tape: &mut Tape<T>,
    vars: &ParamVars,
    fv_final: Var,
) -> Result<Var> {
    let h = dense(tape, vars, "classifier.0", fv_final)?;
    let h = tape.relu(h)?;
    dense(tape, vars, "classifier.1", h)
}

/// Six 3×3 convolutions; each of the first `U` is preceded by a nearest ×2
/// upsampling, ReLU between layers, sigmoid at the end.
pub fn sr_decode<T: Scalar>(
    bundle: &ModelBundle<T>,
    tape: &mut Tape<T>,
    vars: &ParamVars,
    feature_map: Var,
) -> Result<Var> {
    let cfg = bundle.config();
    let ups = cfg.upsample_stages()?;
    let layers = cfg.decoder_channels().len();
    let mut h = feature_map;
    for i in 0..layers {
        if i < ups {
            h = tape.nearest_upsample(h, 2)?;
        }
        h = conv(tape, vars, &format!("decoder.{i}"), h, 1, 1)?;
        h = if i + 1 < layers {
            tape.relu(h)?
        } else {
            tape.sigmoid(h)?
        };
    }
    Ok(h)
}

/// Full network. The decoder is skipped when `with_sr` is false.
pub fn forward<T: Scalar>(
    bundle: &ModelBundle<T>,
    tape: &mut Tape<T>,
    vars: &ParamVars,
    images: Var,
    meta: Var,
    with_sr: bool,
) -> Result<ForwardVars> {
    let (n_img, n_meta) = (tape.shape(images)[0], tape.shape(meta)[0]);
    if n_img != n_meta {
        return Err(Error::shape(format!(
            "batch sizes differ: {n_img} images, {n_meta} metadata rows"
        )));
    }
    let (feature_map, fv_image) = visual_forward(bundle, tape, vars, images)?;
    let fv_meta = meta_forward(bundle, tape, vars, meta)?;
    let embedding = fuse(tape, fv_image, fv_meta, bundle.config().fusion_mode)?;
    let logits = classify_forward(bundle, tape, vars, embedding)?;
    let sr_pred = if with_sr {
        Some(sr_decode(bundle, tape, vars, feature_map)?)
    } else {
        None
    };
    Ok(ForwardVars {
        feature_map,
        fv_image,
        fv_meta,
        embedding,
        logits,
        sr_pred,
    })
}

/// Inference pass without gradient bookkeeping for the caller.
pub fn predict<T: Scalar>(
    bundle: &ModelBundle<T>,
    images: &Tensor<T>,
    meta: &Tensor<T>,
    with_sr: bool,
) -> Result<ForwardOutput<T>> {
    let mut tape = Tape::new();
    let vars = bundle.bind(&mut tape)?;
    let x = tape.constant(images.clone())?;
    let m = tape.constant(meta.clone())?;
    let out = forward(bundle, &mut tape, &vars, x, m, with_sr)?;
    let logits = tape.value(out.logits).clone();
    Ok(ForwardOutput {
        probs: kernels::softmax(&logits)?,
        logits,
        embedding: tape.value(out.embedding).clone(),
        sr_pred: out.sr_pred.map(|v| tape.value(v).clone()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ModelConfig};

    fn small() -> ModelConfig {
        ModelConfig {
            input_size: 16,
            encoder_channels: vec![4, 8],
            fusion_dim: 12,
            meta_input_dim: 5,
            meta_dims: vec![6, 8, 10, 12],
            classifier_hidden: 7,
            ..Default::default()
        }
    }

    fn inputs<T: Scalar>(cfg: &ModelConfig, n: usize) -> (Tensor<T>, Tensor<T>) {
        let s = cfg.input_size;
        let img = (0..n * 3 * s * s)
            .map(|i| T::from_f64(((i * 7919) % 101) as f64 / 100.0))
            .collect();
        let meta = (0..n * cfg.meta_input_dim)
            .map(|i| T::from_f64(((i * 31) % 11) as f64 / 10.0))
            .collect();
        (
            Tensor::from_vec(&[n, 3, s, s], img).unwrap(),
            Tensor::from_vec(&[n, cfg.meta_input_dim], meta).unwrap(),
        )
    }

    #[test]
    fn default_shapes() {
        let cfg = ModelConfig {
            meta_input_dim: 9,
            ..Default::default()
        };
        let m = build_model::<f32>(&cfg).unwrap();
        let (x, meta) = inputs(&cfg, 2);
        let mut tape = Tape::new();
        let vars = m.bind(&mut tape).unwrap();
        let xv = tape.constant(x).unwrap();
        let mv = tape.constant(meta).unwrap();
        let out = forward(&m, &mut tape, &vars, xv, mv, true).unwrap();
        assert_eq!(tape.shape(out.feature_map), &[2, 64, 8, 8]);
        assert_eq!(tape.shape(out.fv_image), &[2, 512]);
        assert_eq!(tape.shape(out.fv_meta), &[2, 512]);
        assert_eq!(tape.shape(out.logits), &[2, 6]);
        let sr = tape.value(out.sr_pred.unwrap());
        assert_eq!(sr.shape(), &[2, 3, 128, 128]);
        assert!(sr.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn wrong_extent_is_shape_error() {
        let cfg = small();
        let m = build_model::<f32>(&cfg).unwrap();
        let (_, meta) = inputs::<f32>(&cfg, 1);
        let bad = Tensor::zeros(&[1, 3, 8, 8]);
        assert!(matches!(
            predict(&m, &bad, &meta, false),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_features() {
        let cfg = small();
        let m = build_model::<f64>(&cfg).unwrap();
        let mut tape = Tape::new();
        let vars = m.bind(&mut tape).unwrap();
        let x = tape.constant(Tensor::zeros(&[1, 3, 16, 16])).unwrap();
        let meta = tape.constant(Tensor::zeros(&[1, 5])).unwrap();
        let (_, fv) = visual_forward(&m, &mut tape, &vars, x).unwrap();
        let fm = meta_forward(&m, &mut tape, &vars, meta).unwrap();
        assert!(tape.value(fv).data().iter().all(|&v| v == 0.0));
        assert!(tape.value(fm).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fusion_arithmetic() {
        let mut tape = Tape::<f64>::new();
        let a = tape
            .constant(Tensor::from_vec(&[1, 2], vec![2.0, 3.0]).unwrap())
            .unwrap();
        let b = tape
            .constant(Tensor::from_vec(&[1, 2], vec![4.0, 5.0]).unwrap())
            .unwrap();
        let ones = tape.constant(Tensor::ones(&[1, 2])).unwrap();
        let zeros = tape.constant(Tensor::zeros(&[1, 2])).unwrap();
        let p = fuse(&mut tape, a, b, FusionMode::Multiply).unwrap();
        assert_eq!(tape.value(p).data(), &[8.0, 15.0]);
        let id = fuse(&mut tape, a, ones, FusionMode::Multiply).unwrap();
        assert_eq!(tape.value(id).data(), &[2.0, 3.0]);
        let z = fuse(&mut tape, a, zeros, FusionMode::Multiply).unwrap();
        assert_eq!(tape.value(z).data(), &[0.0, 0.0]);
        let c = fuse(&mut tape, a, b, FusionMode::Concat).unwrap();
        assert_eq!(tape.value(c).data(), &[2.0, 3.0, 4.0, 5.0]);
        let short = tape.constant(Tensor::ones(&[1, 3])).unwrap();
        assert!(matches!(
            fuse(&mut tape, a, short, FusionMode::Multiply),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn meta_last_layer_is_linear() {
        // Freezing earlier layers, the output is affine in the pre-final
        // activation: with zero final bias, scaling it scales the output.
        let cfg = small();
        let m = build_model::<f64>(&cfg).unwrap();
        let w = m.param("meta.3.weight").unwrap().clone();
        let b = Tensor::zeros(&[12]);
        let h = Tensor::from_vec(&[1, 10], (0..10).map(|i| i as f64 * 0.1).collect()).unwrap();
        let h3 = Tensor::from_vec(&[1, 10], h.data().iter().map(|v| v * 3.0).collect()).unwrap();
        let y = kernels::linear(&h, &w, &b).unwrap();
        let y3 = kernels::linear(&h3, &w, &b).unwrap();
        for (a, b) in y.data().iter().zip(y3.data()) {
            assert!((3.0 * a - b).abs() < 1e-12);
        }
        // and no ReLU clips negative outputs of the final layer
        let (x, meta) = inputs::<f64>(&cfg, 3);
        let out = predict(&m, &x, &meta, false).unwrap();
        let mut tape = Tape::new();
        let vars = m.bind(&mut tape).unwrap();
        let mv = tape.constant(meta).unwrap();
        let fm = meta_forward(&m, &mut tape, &vars, mv).unwrap();
        assert!(tape.value(fm).data().iter().any(|&v| v < 0.0));
        assert_eq!(out.logits.shape(), &[3, 6]);
    }

    #[test]
    fn ones_gate_matches_image_only_heads() {
        let cfg = small();
        let m = build_model::<f64>(&cfg).unwrap();
        let (x, _) = inputs::<f64>(&cfg, 2);
        let mut tape = Tape::new();
        let vars = m.bind(&mut tape).unwrap();
        let xv = tape.constant(x).unwrap();
        let (_, fv) = visual_forward(&m, &mut tape, &vars, xv).unwrap();
        let ones = tape.constant(Tensor::ones(&[2, 12])).unwrap();
        let fused = fuse(&mut tape, fv, ones, FusionMode::Multiply).unwrap();
        let gated = classify_forward(&m, &mut tape, &vars, fused).unwrap();
        let direct = classify_forward(&m, &mut tape, &vars, fv).unwrap();
        assert_eq!(tape.value(gated).data(), tape.value(direct).data());
    }

    #[test]
    fn both_encoders_receive_gradients() {
        let cfg = small();
        let mut m = build_model::<f64>(&cfg).unwrap();
        let (x, meta) = inputs::<f64>(&cfg, 2);
        let mut tape = Tape::new();
        let vars = m.bind(&mut tape).unwrap();
        let xv = tape.constant(x).unwrap();
        let mv = tape.constant(meta).unwrap();
        let out = forward(&m, &mut tape, &vars, xv, mv, false).unwrap();
        let p = tape.softmax(out.logits).unwrap();
        let lp = tape.log_clamped(p, 1e-12).unwrap();
        let onehot = tape
            .constant(
                Tensor::from_vec(
                    &[2, 6],
                    vec![1., 0., 0., 0., 0., 0., 0., 0., 1., 0., 0., 0.],
                )
                .unwrap(),
            )
            .unwrap();
        let picked = tape.mul(lp, onehot).unwrap();
        let s = tape.sum(picked).unwrap();
        let loss = tape.scale(s, -0.5).unwrap();
        tape.backward(loss).unwrap();
        m.load_grads(&tape, &vars).unwrap();
        let nonzero = |g: Vec<f64>| g.iter().any(|&v| v != 0.0);
        assert!(nonzero(m.grads_with_prefix("encoder.")));
        assert!(nonzero(m.grads_with_prefix("meta.")));
        assert!(!nonzero(m.grads_with_prefix("decoder.")));
    }
}
