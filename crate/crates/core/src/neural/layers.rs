//! Forward/backward primitives. Layers hold only hyperparameters and indices
//! into a [`ParamSet`]; the caller keeps the returned caches for backward.

use rand::Rng;

use super::tensor::{Grads, ParamSet, Scalar, Tensor};
use super::{NeuralError, Result};

/// 2-D convolution, no padding, square kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    weight: usize,
    bias: usize,
}

pub struct ConvCache<T> {
    cols: Vec<T>,
    input_shape: [usize; 4],
    out_hw: (usize, usize),
}

impl Conv2d {
    /// Registers `{name}.weight` `[out, in, k, k]` and `{name}.bias` `[out]`,
    /// uniform in `±1/sqrt(fan_in)` and zero respectively.
    pub fn register<T: Scalar>(
        params: &mut ParamSet<T>,
        name: &str,
        (in_channels, out_channels, kernel, stride): (usize, usize, usize, usize),
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = params.push(
            format!("{name}.weight"),
            Tensor::uniform(&[out_channels, in_channels, kernel, kernel], bound, rng),
        );
        let bias = params.push(format!("{name}.bias"), Tensor::zeros(&[out_channels]));
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            weight,
            bias,
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if h < self.kernel || w < self.kernel {
            return Err(NeuralError::Shape(format!(
                "{h}x{w} input is smaller than the {k}x{k} kernel",
                k = self.kernel
            )));
        }
        Ok((
            (h - self.kernel) / self.stride + 1,
            (w - self.kernel) / self.stride + 1,
        ))
    }

    pub fn forward<T: Scalar>(
        &self,
        params: &ParamSet<T>,
        x: &Tensor<T>,
    ) -> Result<(Tensor<T>, ConvCache<T>)> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != self.in_channels {
            return Err(NeuralError::ShapeMismatch {
                what: "conv2d input".into(),
                expected: vec![0, self.in_channels, 0, 0],
                actual: shape.to_vec(),
            });
        }
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let (oh, ow) = self.output_size(h, w)?;
        let (k, s) = (self.kernel, self.stride);
        let p = oh * ow;
        let np = n * p;
        let ckk = c * k * k;

        // im2col: row (c, ki, kj), column (n, oy, ox), filled in order.
        let mut cols = Vec::with_capacity(ckk * np);
        let xd = x.data();
        for ch in 0..c {
            for ki in 0..k {
                for kj in 0..k {
                    for b in 0..n {
                        let plane = &xd[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
                        for oy in 0..oh {
                            let start = (oy * s + ki) * w + kj;
                            let row = &plane[start..start + (ow - 1) * s + 1];
                            cols.extend(row.iter().step_by(s).copied());
                        }
                    }
                }
            }
        }
        debug_assert_eq!(cols.len(), ckk * np);

        let oc = self.out_channels;
        let mut prod = vec![T::zero(); oc * np];
        T::gemm(
            oc,
            ckk,
            np,
            (params.get(self.weight).data(), ckk as isize, 1),
            (&cols, np as isize, 1),
            T::zero(),
            (&mut prod, np as isize, 1),
        );
        let bias = params.get(self.bias).data();
        let mut y = Tensor::zeros(&[n, oc, oh, ow]);
        let yd = y.data_mut();
        for o in 0..oc {
            for b in 0..n {
                let src = &prod[o * np + b * p..o * np + (b + 1) * p];
                let dst = &mut yd[(b * oc + o) * p..(b * oc + o + 1) * p];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d = v + bias[o];
                }
            }
        }
        Ok((
            y,
            ConvCache {
                cols,
                input_shape: [n, c, h, w],
                out_hw: (oh, ow),
            },
        ))
    }

    /// Accumulates parameter gradients into `grads` when given and returns
    /// the input gradient when `input_grad` is set.
    pub fn backward<T: Scalar>(
        &self,
        params: &ParamSet<T>,
        cache: &ConvCache<T>,
        grad_out: &Tensor<T>,
        grads: Option<&mut Grads<T>>,
        input_grad: bool,
    ) -> Option<Tensor<T>> {
        let [n, c, h, w] = cache.input_shape;
        let (oh, ow) = cache.out_hw;
        let (k, s) = (self.kernel, self.stride);
        let oc = self.out_channels;
        let p = oh * ow;
        let np = n * p;
        let ckk = c * k * k;
        debug_assert_eq!(grad_out.shape(), &[n, oc, oh, ow]);

        let gd = grad_out.data();
        let mut g = vec![T::zero(); oc * np];
        for b in 0..n {
            for o in 0..oc {
                g[o * np + b * p..o * np + (b + 1) * p]
                    .copy_from_slice(&gd[(b * oc + o) * p..(b * oc + o + 1) * p]);
            }
        }

        if let Some(grads) = grads {
            T::gemm(
                oc,
                np,
                ckk,
                (&g, np as isize, 1),
                (&cache.cols, 1, np as isize),
                T::one(),
                (grads.get_mut(self.weight).data_mut(), ckk as isize, 1),
            );
            let db = grads.get_mut(self.bias).data_mut();
            for o in 0..oc {
                db[o] = db[o] + g[o * np..(o + 1) * np].iter().fold(T::zero(), |a, &v| a + v);
            }
        }

        if !input_grad {
            return None;
        }
        let mut dcols = vec![T::zero(); ckk * np];
        T::gemm(
            ckk,
            oc,
            np,
            (params.get(self.weight).data(), 1, ckk as isize),
            (&g, np as isize, 1),
            T::zero(),
            (&mut dcols, np as isize, 1),
        );
        let mut dx = Tensor::zeros(&[n, c, h, w]);
        let dxd = dx.data_mut();
        for b in 0..n {
            for ch in 0..c {
                let plane = &mut dxd[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
                for ki in 0..k {
                    for kj in 0..k {
                        let r = (ch * k + ki) * k + kj;
                        let src = &dcols[r * np + b * p..r * np + (b + 1) * p];
                        for oy in 0..oh {
                            let base = (oy * s + ki) * w + kj;
                            for ox in 0..ow {
                                let i = base + ox * s;
                                plane[i] = plane[i] + src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        Some(dx)
    }
}

/// Fully connected layer, `y = x W^T + b` on `[batch, features]` inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    weight: usize,
    bias: usize,
}

impl Linear {
    pub fn register<T: Scalar>(
        params: &mut ParamSet<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        let weight = params.push(
            format!("{name}.weight"),
            Tensor::uniform(&[out_features, in_features], bound, rng),
        );
        let bias = params.push(format!("{name}.bias"), Tensor::zeros(&[out_features]));
        Self {
            in_features,
            out_features,
            weight,
            bias,
        }
    }

    pub fn weight_index(&self) -> usize {
        self.weight
    }

    pub fn bias_index(&self) -> usize {
        self.bias
    }

    pub fn forward<T: Scalar>(&self, params: &ParamSet<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.shape().len() != 2 || x.shape()[1] != self.in_features {
            return Err(NeuralError::ShapeMismatch {
                what: "linear input".into(),
                expected: vec![x.shape()[0], self.in_features],
                actual: x.shape().to_vec(),
            });
        }
        let n = x.shape()[0];
        let (fi, fo) = (self.in_features, self.out_features);
        let mut y = Tensor::zeros(&[n, fo]);
        let bias = params.get(self.bias).data();
        for row in y.data_mut().chunks_mut(fo) {
            row.copy_from_slice(bias);
        }
        T::gemm(
            n,
            fi,
            fo,
            (x.data(), fi as isize, 1),
            (params.get(self.weight).data(), 1, fi as isize),
            T::one(),
            (y.data_mut(), fo as isize, 1),
        );
        Ok(y)
    }

    pub fn backward<T: Scalar>(
        &self,
        params: &ParamSet<T>,
        x: &Tensor<T>,
        grad_out: &Tensor<T>,
        grads: Option<&mut Grads<T>>,
        input_grad: bool,
    ) -> Option<Tensor<T>> {
        let n = x.shape()[0];
        let (fi, fo) = (self.in_features, self.out_features);
        if let Some(grads) = grads {
            T::gemm(
                fo,
                n,
                fi,
                (grad_out.data(), 1, fo as isize),
                (x.data(), fi as isize, 1),
                T::one(),
                (grads.get_mut(self.weight).data_mut(), fi as isize, 1),
            );
            let db = grads.get_mut(self.bias).data_mut();
            for row in grad_out.data().chunks(fo) {
                for (d, &g) in db.iter_mut().zip(row) {
                    *d = *d + g;
                }
            }
        }
        if !input_grad {
            return None;
        }
        let mut dx = Tensor::zeros(&[n, fi]);
        T::gemm(
            n,
            fo,
            fi,
            (grad_out.data(), fo as isize, 1),
            (params.get(self.weight).data(), fi as isize, 1),
            T::zero(),
            (dx.data_mut(), fi as isize, 1),
        );
        Some(dx)
    }
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let data = x.data().iter().map(|&v| v.max(T::zero())).collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

/// Backward of [`relu`] given its output.
pub fn relu_backward<T: Scalar>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| if y > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(output.shape(), data).expect("same shape")
}

/// Adaptive average pool to 1x1: `[n, c, h, w] -> [n, c]`.
pub fn adaptive_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape().len() != 4 {
        return Err(NeuralError::Shape(format!(
            "pooling expects [n, c, h, w], got {:?}",
            x.shape()
        )));
    }
    let (n, c, hw) = (x.shape()[0], x.shape()[1], x.shape()[2] * x.shape()[3]);
    let inv = T::one() / T::from_usize(hw).expect("pool size");
    let data = x
        .data()
        .chunks(hw)
        .map(|plane| plane.iter().fold(T::zero(), |a, &v| a + v) * inv)
        .collect();
    Tensor::from_vec(&[n, c], data)
}

pub fn adaptive_avg_pool_backward<T: Scalar>(
    input_shape: &[usize],
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let hw = input_shape[2] * input_shape[3];
    let inv = T::one() / T::from_usize(hw).expect("pool size");
    let mut dx = Tensor::zeros(input_shape);
    for (plane, &g) in dx.data_mut().chunks_mut(hw).zip(grad_out.data()) {
        plane.iter_mut().for_each(|v| *v = g * inv);
    }
    dx
}

/// Feature concatenation of two `[n, a]`, `[n, b]` tensors.
pub fn concat<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[0] != b.shape()[0] {
        return Err(NeuralError::Shape(format!(
            "cannot concatenate {:?} with {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let n = a.shape()[0];
    let (fa, fb) = (a.shape()[1], b.shape()[1]);
    let mut data = Vec::with_capacity(n * (fa + fb));
    for i in 0..n {
        data.extend_from_slice(a.row(i));
        data.extend_from_slice(b.row(i));
    }
    Tensor::from_vec(&[n, fa + fb], data)
}

pub fn concat_backward<T: Scalar>(split: usize, grad_out: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let n = grad_out.shape()[0];
    let f = grad_out.shape()[1];
    let mut a = Vec::with_capacity(n * split);
    let mut b = Vec::with_capacity(n * (f - split));
    for i in 0..n {
        let row = grad_out.row(i);
        a.extend_from_slice(&row[..split]);
        b.extend_from_slice(&row[split..]);
    }
    (
        Tensor::from_vec(&[n, split], a).expect("split shape"),
        Tensor::from_vec(&[n, f - split], b).expect("split shape"),
    )
}
