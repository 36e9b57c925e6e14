use super::kernels;
use super::{same_shape, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    },
    Relu(Var),
    Sigmoid(Var),
    AvgPool {
        input: Var,
        out_h: usize,
        out_w: usize,
    },
    Upsample {
        input: Var,
        factor: usize,
    },
    Softmax(Var),
    LogClamped {
        input: Var,
        floor: T,
    },
    Sum(Var),
    Mean(Var),
    ConcatCols(Var, Var),
    Reshape(Var),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Linear { .. } => "linear",
            Op::Conv2d { .. } => "conv2d",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::AvgPool { .. } => "adaptive_avg_pool",
            Op::Upsample { .. } => "nearest_upsample",
            Op::Softmax(..) => "softmax",
            Op::LogClamped { .. } => "log",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::ConcatCols(..) => "concat",
            Op::Reshape(..) => "reshape",
        }
    }
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Append-only record of a forward pass, consumed by one [`Tape::backward`].
///
/// Every recorded value is checked for NaN/Inf; a non-finite value is a
/// [`Error::Numeric`].
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    /// Records a leaf, keeping the tensor's own `requires_grad` flag.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Result<Var> {
        let requires = tensor.requires_grad();
        self.push(tensor, Op::Leaf, requires)
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> Result<Var> {
        self.push(tensor, Op::Leaf, false)
    }

    /// Records a copy of a trainable parameter.
    pub fn param(&mut self, tensor: &Tensor<T>) -> Result<Var> {
        let mut copy = Tensor::from_vec(tensor.shape(), tensor.data().to_vec())?;
        copy.set_requires_grad(true);
        self.push(copy, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last backward pass with respect to `v`, if it was reached.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    fn push(&mut self, mut value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Result<Var> {
        if self.consumed {
            return Err(Error::State("tape already consumed by backward".into()));
        }
        if !value.all_finite() {
            return Err(Error::Numeric(format!(
                "non-finite value produced by {} (node {})",
                op.name(),
                self.nodes.len()
            )));
        }
        value.set_requires_grad(requires_grad);
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn unary(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Result<Var> {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::from_vec(src.shape(), data)?;
        let req = self.requires(x);
        self.push(out, op, req)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(ta, tb, op.name())?;
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::from_vec(ta.shape(), data)?;
        let req = self.requires(a) || self.requires(b);
        self.push(out, op, req)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        self.unary(x, Op::Scale(x, factor), |v| v * factor)
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Result<Var> {
        self.unary(x, Op::AddScalar(x), |v| v + c)
    }

    /// `max(0, x)`; the subgradient at exactly zero is zero.
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(
            x,
            Op::Relu(x),
            |v| if v > T::zero() { v } else { T::zero() },
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Sigmoid(x), kernels::sigmoid)
    }

    /// `ln(max(x, floor))`; the gradient is zero where the clamp is active.
    pub fn log_clamped(&mut self, x: Var, floor: T) -> Result<Var> {
        self.unary(x, Op::LogClamped { input: x, floor }, |v| v.max(floor).ln())
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = kernels::linear(self.value(input), self.value(weight), self.value(bias))?;
        let req = self.requires(input) || self.requires(weight) || self.requires(bias);
        self.push(
            out,
            Op::Linear {
                input,
                weight,
                bias,
            },
            req,
        )
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let out = kernels::conv2d(
            self.value(input),
            self.value(weight),
            self.value(bias),
            stride,
            padding,
        )?;
        let req = self.requires(input) || self.requires(weight) || self.requires(bias);
        self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            },
            req,
        )
    }

    pub fn adaptive_avg_pool(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let out = kernels::adaptive_avg_pool(self.value(input), out_h, out_w)?;
        let req = self.requires(input);
        self.push(
            out,
            Op::AvgPool {
                input,
                out_h,
                out_w,
            },
            req,
        )
    }

    pub fn nearest_upsample(&mut self, input: Var, factor: usize) -> Result<Var> {
        let out = kernels::nearest_upsample(self.value(input), factor)?;
        let req = self.requires(input);
        self.push(out, Op::Upsample { input, factor }, req)
    }

    pub fn softmax(&mut self, logits: Var) -> Result<Var> {
        let out = kernels::softmax(self.value(logits))?;
        let req = self.requires(logits);
        self.push(out, Op::Softmax(logits), req)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).data().iter().copied().sum();
        let req = self.requires(x);
        self.push(Tensor::scalar(total), Op::Sum(x), req)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let total: T = t.data().iter().copied().sum();
        let mean = total / T::from_f64(t.numel() as f64);
        let req = self.requires(x);
        self.push(Tensor::scalar(mean), Op::Mean(x), req)
    }

    /// Concatenates two N×A and N×B matrices into N×(A+B).
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (&[n, ca], &[nb, cb]) = (ta.shape(), tb.shape()) else {
            return Err(Error::shape("concat expects two matrices"));
        };
        if n != nb {
            return Err(Error::shape(format!(
                "concat: row counts {n} and {nb} differ"
            )));
        }
        let mut data = Vec::with_capacity(n * (ca + cb));
        for i in 0..n {
            data.extend_from_slice(&ta.data()[i * ca..(i + 1) * ca]);
            data.extend_from_slice(&tb.data()[i * cb..(i + 1) * cb]);
        }
        let out = Tensor::from_vec(&[n, ca + cb], data)?;
        let req = self.requires(a) || self.requires(b);
        self.push(out, Op::ConcatCols(a, b), req)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let req = self.requires(x);
        self.push(out, Op::Reshape(x), req)
    }

    /// Reverse pass from a scalar `loss`, populating the gradient of every
    /// node that requires one and is reachable. Consumes the tape.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::State(
                "backward called twice on the same tape".into(),
            ));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].value.requires_grad() {
                continue;
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient reaching {} (node {i})",
                    self.nodes[i].op.name()
                )));
            }
            self.propagate(i, &g, &mut grads)?;
            self.nodes[i].value.accumulate_grad(&g)?;
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let mut send = |v: Var, d: Vec<T>| {
            if !self.requires(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(&d).for_each(|(a, &x)| *a = *a + x),
                slot @ None => *slot = Some(d),
            }
        };
        match node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                send(a, g.to_vec());
                send(b, g.to_vec());
            }
            Op::Sub(a, b) => {
                send(a, g.to_vec());
                send(b, g.iter().map(|&x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(a).data(), self.value(b).data());
                send(a, g.iter().zip(vb).map(|(&x, &y)| x * y).collect());
                send(b, g.iter().zip(va).map(|(&x, &y)| x * y).collect());
            }
            Op::Scale(x, c) => send(x, g.iter().map(|&v| v * c).collect()),
            Op::AddScalar(x) | Op::Reshape(x) => send(x, g.to_vec()),
            Op::Relu(x) => {
                let vx = self.value(x).data();
                send(
                    x,
                    g.iter()
                        .zip(vx)
                        .map(|(&d, &v)| if v > T::zero() { d } else { T::zero() })
                        .collect(),
                );
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                send(
                    x,
                    g.iter()
                        .zip(y)
                        .map(|(&d, &s)| d * s * (T::one() - s))
                        .collect(),
                );
            }
            Op::LogClamped { input, floor } => {
                let vx = self.value(input).data();
                send(
                    input,
                    g.iter()
                        .zip(vx)
                        .map(|(&d, &v)| if v > floor { d / v } else { T::zero() })
                        .collect(),
                );
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let lg = kernels::linear_backward(self.value(input), self.value(weight), g)?;
                send(input, lg.input);
                send(weight, lg.weight);
                send(bias, lg.bias);
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            } => {
                let cg = kernels::conv2d_backward(
                    self.value(input),
                    self.value(weight),
                    g,
                    stride,
                    padding,
                )?;
                send(input, cg.input);
                send(weight, cg.weight);
                send(bias, cg.bias);
            }
            Op::AvgPool {
                input,
                out_h,
                out_w,
            } => {
                send(
                    input,
                    kernels::adaptive_avg_pool_backward(self.shape(input), out_h, out_w, g)?,
                );
            }
            Op::Upsample { input, factor } => {
                send(
                    input,
                    kernels::nearest_upsample_backward(self.shape(input), factor, g)?,
                );
            }
            Op::Softmax(x) => {
                let k = node.value.shape()[1];
                send(x, kernels::softmax_backward(node.value.data(), k, g));
            }
            Op::Sum(x) => send(x, vec![g[0]; self.value(x).numel()]),
            Op::Mean(x) => {
                let n = self.value(x).numel();
                send(x, vec![g[0] / T::from_f64(n as f64); n]);
            }
            Op::ConcatCols(a, b) => {
                let (ca, cb) = (self.shape(a)[1], self.shape(b)[1]);
                let mut ga = Vec::with_capacity(self.value(a).numel());
                let mut gb = Vec::with_capacity(self.value(b).numel());
                for row in g.chunks(ca + cb) {
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                send(a, ga);
                send(b, gb);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(tape: &mut Tape<f64>, shape: &[usize], data: &[f64]) -> Var {
        tape.leaf(Tensor::from_vec(shape, data.to_vec()).unwrap().with_grad())
            .unwrap()
    }

    #[test]
    fn mul_product_rule() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, &[2], &[2.0, 3.0]);
        let b = leaf(&mut tape, &[2], &[4.0, 5.0]);
        let p = tape.mul(a, b).unwrap();
        let s = tape.sum(p).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[4.0, 5.0]);
        assert_eq!(tape.grad(b).unwrap(), &[2.0, 3.0]);
    }

    #[test]
    fn mul_shape_mismatch() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, &[2], &[2.0, 3.0]);
        let b = leaf(&mut tape, &[3], &[4.0, 5.0, 6.0]);
        assert!(matches!(tape.mul(a, b), Err(Error::Shape(_))));
    }

    #[test]
    fn sum_gives_ones_and_square_gives_double() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 7.0]);
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert!(tape.grad(x).unwrap().iter().all(|&g| g == 1.0));

        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1], &[3.0]);
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn relu_forward_and_mask() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[3], &[-1.0, 0.0, 2.0]);
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 0.0, 1.0]);

        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[3], &[-1.0, -0.5, -2.0]);
        let y = tape.relu(x).unwrap();
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
        assert!(tape.grad(x).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_contracts() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[2], &[1.0, 2.0]);
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(Error::State(_))));
        assert!(matches!(tape.sum(x), Err(Error::State(_))));
    }

    #[test]
    fn non_finite_is_rejected() {
        let mut tape = Tape::<f32>::new();
        let x = tape
            .leaf(Tensor::from_vec(&[1], vec![f32::MAX]).unwrap())
            .unwrap();
        assert!(matches!(tape.scale(x, 10.0), Err(Error::Numeric(_))));
        assert!(tape
            .leaf(Tensor::from_vec(&[1], vec![f32::NAN]).unwrap())
            .is_err());
    }

    #[test]
    fn constants_get_no_grad() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[2], &[1.0, 2.0]);
        let c = tape
            .constant(Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap())
            .unwrap();
        let p = tape.mul(x, c).unwrap();
        let s = tape.sum(p).unwrap();
        tape.backward(s).unwrap();
        assert!(tape.grad(c).is_none());
        assert_eq!(tape.grad(x).unwrap(), &[3.0, 4.0]);
    }
}
