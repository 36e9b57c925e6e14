use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Floor applied inside every logarithm of the classification loss.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// `w_i = N / (K · n_i)`.
    #[default]
    InverseFrequency,
    Uniform,
}

/// Which cross-entropy expression is minimized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CeForm {
    /// `−Σ_i [w_i·y_i·log ŷ_i + (1 − y_i)·log(1 − ŷ_i)]`, including the
    /// unweighted complement term.
    #[default]
    AsWritten,
    /// `−Σ_i w_i·y_i·log ŷ_i`.
    Categorical,
}

impl std::str::FromStr for CeForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "as_written" => Ok(CeForm::AsWritten),
            "categorical" => Ok(CeForm::Categorical),
            other => Err(Error::Config(format!("unknown CE form `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Weight of the classification term.
    pub alpha: f64,
    /// Weight of the super-resolution term.
    pub beta: f64,
    pub weight_mode: WeightMode,
    pub ce_form: CeForm,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.5,
            beta: 1.0,
            weight_mode: WeightMode::InverseFrequency,
            ce_form: CeForm::AsWritten,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.alpha) || !ok(self.beta) {
            return Err(Error::Config(format!(
                "alpha ({}) and beta ({}) must be finite and ≥ 0",
                self.alpha, self.beta
            )));
        }
        if self.alpha == 0.0 && self.beta == 0.0 {
            return Err(Error::Config("alpha and beta cannot both be 0".into()));
        }
        Ok(())
    }
}

/// Per-class loss weights from class counts.
pub fn class_weights(counts: &[usize], mode: WeightMode) -> Result<Vec<f64>> {
    if counts.is_empty() {
        return Err(Error::Config(
            "class_weights needs at least one class".into(),
        ));
    }
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Config(format!("class {i} has no samples")));
    }
    Ok(match mode {
        WeightMode::Uniform => vec![1.0; counts.len()],
        WeightMode::InverseFrequency => {
            let total: usize = counts.iter().sum();
            let k = counts.len() as f64;
            counts
                .iter()
                .map(|&n| total as f64 / (k * n as f64))
                .collect()
        }
    })
}

/// Batch-mean weighted cross-entropy of softmax probabilities `probs`
/// against one-hot `labels` (both N×K).
pub fn weighted_ce<T: Scalar>(
    tape: &mut Tape<T>,
    probs: Var,
    labels: Var,
    weights: &[f64],
    form: CeForm,
) -> Result<Var> {
    let shape = tape.shape(probs).to_vec();
    let [n, k] = shape[..] else {
        return Err(Error::shape(format!(
            "probabilities must be N×K, got {shape:?}"
        )));
    };
    if tape.shape(labels) != shape.as_slice() {
        return Err(Error::shape(format!(
            "labels {:?} do not match probabilities {shape:?}",
            tape.shape(labels)
        )));
    }
    if weights.len() != k {
        return Err(Error::shape(format!(
            "{} class weights for {k} classes",
            weights.len()
        )));
    }
    let y = tape.value(labels).data().to_vec();
    let wy: Vec<T> = y
        .iter()
        .enumerate()
        .map(|(i, &v)| v * T::from_f64(weights[i % k]))
        .collect();
    let wy = tape.constant(Tensor::from_vec(&shape, wy)?)?;
    let floor = T::from_f64(LOG_FLOOR);
    let log_p = tape.log_clamped(probs, floor)?;
    let pos = tape.mul(wy, log_p)?;
    let mut total = tape.sum(pos)?;
    if form == CeForm::AsWritten {
        let not_y: Vec<T> = y.iter().map(|&v| T::one() - v).collect();
        let not_y = tape.constant(Tensor::from_vec(&shape, not_y)?)?;
        let neg_p = tape.scale(probs, -T::one())?;
        let one_minus = tape.add_scalar(neg_p, T::one())?;
        let log_q = tape.log_clamped(one_minus, floor)?;
        let neg = tape.mul(not_y, log_q)?;
        let neg = tape.sum(neg)?;
        total = tape.add(total, neg)?;
    }
    tape.scale(total, T::from_f64(-1.0 / n as f64))
}

/// Mean squared error over all elements.
pub fn sr_loss<T: Scalar>(tape: &mut Tape<T>, target: Var, pred: Var) -> Result<Var> {
    if tape.shape(target) != tape.shape(pred) {
        return Err(Error::shape(format!(
            "SR target {:?} and prediction {:?} differ",
            tape.shape(target),
            tape.shape(pred)
        )));
    }
    let d = tape.sub(pred, target)?;
    let sq = tape.mul(d, d)?;
    tape.mean(sq)
}

/// `α·l_wce + β·l_sr`.
pub fn final_loss<T: Scalar>(
    tape: &mut Tape<T>,
    l_wce: Var,
    l_sr: Var,
    cfg: &LossConfig,
) -> Result<Var> {
    for (name, v) in [("classification", l_wce), ("SR", l_sr)] {
        if tape.value(v).numel() != 1 {
            return Err(Error::shape(format!("{name} loss must be a scalar")));
        }
    }
    let a = tape.scale(l_wce, T::from_f64(cfg.alpha))?;
    let b = tape.scale(l_sr, T::from_f64(cfg.beta))?;
    tape.add(a, b)
}

/// Scalar form of [`final_loss`].
pub fn final_loss_value(l_wce: f64, l_sr: f64, cfg: &LossConfig) -> Result<f64> {
    if !l_wce.is_finite() || !l_sr.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss component ({l_wce}, {l_sr})"
        )));
    }
    Ok(cfg.alpha * l_wce + cfg.beta * l_sr)
}

/// Tape-free evaluation of [`weighted_ce`].
pub fn weighted_ce_value<T: Scalar>(
    probs: &Tensor<T>,
    labels: &Tensor<T>,
    weights: &[f64],
    form: CeForm,
) -> Result<T> {
    let mut tape = Tape::new();
    let p = tape.constant(probs.clone())?;
    let y = tape.constant(labels.clone())?;
    let l = weighted_ce(&mut tape, p, y, weights, form)?;
    tape.value(l).item()
}

/// Tape-free evaluation of [`sr_loss`].
pub fn sr_loss_value<T: Scalar>(target: &Tensor<T>, pred: &Tensor<T>) -> Result<T> {
    let mut tape = Tape::new();
    let t = tape.constant(target.clone())?;
    let p = tape.constant(pred.clone())?;
    let l = sr_loss(&mut tape, t, p)?;
    tape.value(l).item()
}

/// One-hot N×K matrix for `labels`.
pub fn one_hot<T: Scalar>(labels: &[usize], k: usize) -> Result<Tensor<T>> {
    let mut data = vec![T::zero(); labels.len() * k];
    for (i, &l) in labels.iter().enumerate() {
        if l >= k {
            return Err(Error::Contract(format!(
                "label {l} out of range for {k} classes"
            )));
        }
        data[i * k + l] = T::one();
    }
    Tensor::from_vec(&[labels.len(), k], data)
}
