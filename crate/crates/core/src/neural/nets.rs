//! Policy and soft-Q networks over `6 x 56 x 56` image states.
//!
//! Shared backbone (ReLU after every layer):
//!
//! ```text
//! conv 6->8 k7 s3    56 -> 17
//! conv 8->16 k3 s2   17 -> 8
//! conv 16->16 k3 s1   8 -> 6
//! conv 16->32 k3 s1   6 -> 4
//! conv 32->256 k3 s1  4 -> 2
//! adaptive avg pool   2 -> 1
//! linear 256->256
//! ```

use rand::Rng;

use super::layers::{
    adaptive_avg_pool, adaptive_avg_pool_backward, concat, concat_backward, relu, relu_backward,
    Conv2d, ConvCache, Linear,
};
use super::tensor::{Grads, ParamSet, Scalar, Tensor};
use super::{NeuralError, Result};

pub const STATE_CHANNELS: usize = 6;
pub const STATE_SIZE: usize = 56;
pub const FEATURES: usize = 256;
pub const ACTION_DIM: usize = 4;
pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const CONV_SPECS: [(usize, usize, usize, usize); 5] = [
    (6, 8, 7, 3),
    (8, 16, 3, 2),
    (16, 16, 3, 1),
    (16, 32, 3, 1),
    (32, 256, 3, 1),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Backbone {
    convs: [Conv2d; 5],
    fc: Linear,
}

pub struct BackboneTape<T> {
    conv_caches: Vec<ConvCache<T>>,
    conv_outputs: Vec<Tensor<T>>,
    pooled: Tensor<T>,
    features: Tensor<T>,
}

impl Backbone {
    fn register<T: Scalar>(params: &mut ParamSet<T>, rng: &mut impl Rng) -> Self {
        let convs = std::array::from_fn(|i| {
            Conv2d::register(params, &format!("backbone.conv{}", i + 1), CONV_SPECS[i], rng)
        });
        let fc = Linear::register(params, "backbone.fc", FEATURES, FEATURES, rng);
        Self { convs, fc }
    }

    fn forward<T: Scalar>(
        &self,
        params: &ParamSet<T>,
        states: &Tensor<T>,
    ) -> Result<(Tensor<T>, BackboneTape<T>)> {
        let mut conv_caches = Vec::with_capacity(5);
        let mut conv_outputs: Vec<Tensor<T>> = Vec::with_capacity(5);
        for conv in &self.convs {
            let input = conv_outputs.last().unwrap_or(states);
            let (y, cache) = conv.forward(params, input)?;
            conv_caches.push(cache);
            conv_outputs.push(relu(&y));
        }
        let pooled = adaptive_avg_pool(conv_outputs.last().expect("five convs"))?;
        let features = relu(&self.fc.forward(params, &pooled)?);
        Ok((
            features.clone(),
            BackboneTape {
                conv_caches,
                conv_outputs,
                pooled,
                features,
            },
        ))
    }

    fn backward<T: Scalar>(
        &self,
        params: &ParamSet<T>,
        tape: &BackboneTape<T>,
        grad_features: &Tensor<T>,
        grads: &mut Grads<T>,
    ) {
        let g = relu_backward(&tape.features, grad_features);
        let g = self
            .fc
            .backward(params, &tape.pooled, &g, Some(grads), true)
            .expect("input grad requested");
        let last = tape.conv_outputs.last().expect("five convs");
        let mut g = adaptive_avg_pool_backward(last.shape(), &g);
        for i in (0..self.convs.len()).rev() {
            let pre = relu_backward(&tape.conv_outputs[i], &g);
            match self.convs[i].backward(params, &tape.conv_caches[i], &pre, Some(grads), i > 0) {
                Some(dx) => g = dx,
                None => break,
            }
        }
    }
}

fn check_states<T: Scalar>(states: &Tensor<T>) -> Result<()> {
    let s = states.shape();
    if s.len() == 4 && s[1..] == [STATE_CHANNELS, STATE_SIZE, STATE_SIZE] {
        Ok(())
    } else {
        Err(NeuralError::ShapeMismatch {
            what: "state batch".into(),
            expected: vec![s.first().copied().unwrap_or(0), STATE_CHANNELS, STATE_SIZE, STATE_SIZE],
            actual: s.to_vec(),
        })
    }
}

/// Gaussian policy head: `mu` and clamped `log_sigma` per action component.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNetwork<T = f32> {
    params: ParamSet<T>,
    backbone: Backbone,
    mlp: [Linear; 2],
    mean_head: Linear,
    log_std_head: Linear,
}

pub struct PolicyOutput<T> {
    pub mu: Tensor<T>,
    pub log_std: Tensor<T>,
}

pub struct PolicyTape<T> {
    backbone: BackboneTape<T>,
    hidden: [Tensor<T>; 2],
    raw_log_std: Tensor<T>,
}

impl<T: Scalar> PolicyNetwork<T> {
    pub fn new(rng: &mut impl Rng) -> Self {
        let mut params = ParamSet::default();
        let backbone = Backbone::register(&mut params, rng);
        let mlp = [
            Linear::register(&mut params, "mlp.0", FEATURES, FEATURES, rng),
            Linear::register(&mut params, "mlp.1", FEATURES, FEATURES, rng),
        ];
        // The mean head is the network's primary output and shares its name
        // with the Q head; loading one archive into the other fails on shape.
        let mean_head = Linear::register(&mut params, "head", FEATURES, ACTION_DIM, rng);
        let log_std_head = Linear::register(&mut params, "log_std_head", FEATURES, ACTION_DIM, rng);
        Self {
            params,
            backbone,
            mlp,
            mean_head,
            log_std_head,
        }
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn cast<U: Scalar>(&self) -> PolicyNetwork<U> {
        PolicyNetwork {
            params: self.params.cast(),
            backbone: self.backbone.clone(),
            mlp: self.mlp,
            mean_head: self.mean_head,
            log_std_head: self.log_std_head,
        }
    }

    /// Index of the mean head's weight and bias in the parameter set.
    pub fn mean_head_indices(&self) -> (usize, usize) {
        (self.mean_head.weight_index(), self.mean_head.bias_index())
    }

    pub fn forward(&self, states: &Tensor<T>) -> Result<PolicyOutput<T>> {
        self.forward_with_tape(states).map(|(out, _)| out)
    }

    pub fn forward_with_tape(&self, states: &Tensor<T>) -> Result<(PolicyOutput<T>, PolicyTape<T>)> {
        check_states(states)?;
        let p = &self.params;
        let (features, backbone) = self.backbone.forward(p, states)?;
        let h0 = relu(&self.mlp[0].forward(p, &features)?);
        let h1 = relu(&self.mlp[1].forward(p, &h0)?);
        let mu = self.mean_head.forward(p, &h1)?;
        let raw_log_std = self.log_std_head.forward(p, &h1)?;
        let lo = T::from_f64_lossy(LOG_STD_MIN);
        let hi = T::from_f64_lossy(LOG_STD_MAX);
        let log_std = Tensor::from_vec(
            raw_log_std.shape(),
            raw_log_std.data().iter().map(|&v| v.max(lo).min(hi)).collect(),
        )?;
        Ok((
            PolicyOutput { mu, log_std },
            PolicyTape {
                backbone,
                hidden: [h0, h1],
                raw_log_std,
            },
        ))
    }

    /// Backpropagates gradients with respect to `mu` and the clamped
    /// `log_sigma`, accumulating into `grads`.
    pub fn backward(
        &self,
        tape: &PolicyTape<T>,
        grad_mu: &Tensor<T>,
        grad_log_std: &Tensor<T>,
        grads: &mut Grads<T>,
    ) {
        let p = &self.params;
        let lo = T::from_f64_lossy(LOG_STD_MIN);
        let hi = T::from_f64_lossy(LOG_STD_MAX);
        // Clamped entries pass no gradient.
        let masked = Tensor::from_vec(
            grad_log_std.shape(),
            tape.raw_log_std
                .data()
                .iter()
                .zip(grad_log_std.data())
                .map(|(&r, &g)| if r < lo || r > hi { T::zero() } else { g })
                .collect(),
        )
        .expect("same shape");
        let h1 = &tape.hidden[1];
        let mut g_h1 = self
            .mean_head
            .backward(p, h1, grad_mu, Some(grads), true)
            .expect("input grad requested");
        let g2 = self
            .log_std_head
            .backward(p, h1, &masked, Some(grads), true)
            .expect("input grad requested");
        for (a, &b) in g_h1.data_mut().iter_mut().zip(g2.data()) {
            *a = *a + b;
        }
        let g = relu_backward(h1, &g_h1);
        let g = self.mlp[1]
            .backward(p, &tape.hidden[0], &g, Some(grads), true)
            .expect("input grad requested");
        let g = relu_backward(&tape.hidden[0], &g);
        let g = self.mlp[0]
            .backward(p, &tape.backbone.features, &g, Some(grads), true)
            .expect("input grad requested");
        self.backbone.backward(p, &tape.backbone, &g, grads);
    }
}

/// Soft state-action value network.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork<T = f32> {
    params: ParamSet<T>,
    backbone: Backbone,
    action_proj: Linear,
    fuse: Linear,
    mlp: [Linear; 2],
    head: Linear,
}

/// Backbone activations for one state batch, reusable across action batches.
pub struct QEncoding<T> {
    features: Tensor<T>,
    tape: BackboneTape<T>,
}

impl<T: Scalar> QEncoding<T> {
    pub fn features(&self) -> &Tensor<T> {
        &self.features
    }

    pub fn batch(&self) -> usize {
        self.features.shape()[0]
    }
}

pub struct QHeadTape<T> {
    actions: Tensor<T>,
    action_features: Tensor<T>,
    joint: Tensor<T>,
    fused: Tensor<T>,
    hidden: [Tensor<T>; 2],
}

pub struct QTape<T> {
    encoding: QEncoding<T>,
    head: QHeadTape<T>,
}

impl<T: Scalar> QNetwork<T> {
    pub fn new(rng: &mut impl Rng) -> Self {
        let mut params = ParamSet::default();
        let backbone = Backbone::register(&mut params, rng);
        let action_proj = Linear::register(&mut params, "action_proj", ACTION_DIM, FEATURES, rng);
        // A 1x1 convolution over the concatenated 1x1 maps is a linear map.
        let fuse = Linear::register(&mut params, "fuse", 2 * FEATURES, FEATURES, rng);
        let mlp = [
            Linear::register(&mut params, "mlp.0", FEATURES, FEATURES, rng),
            Linear::register(&mut params, "mlp.1", FEATURES, FEATURES, rng),
        ];
        let head = Linear::register(&mut params, "head", FEATURES, 1, rng);
        Self {
            params,
            backbone,
            action_proj,
            fuse,
            mlp,
            head,
        }
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn cast<U: Scalar>(&self) -> QNetwork<U> {
        QNetwork {
            params: self.params.cast(),
            backbone: self.backbone.clone(),
            action_proj: self.action_proj,
            fuse: self.fuse,
            mlp: self.mlp,
            head: self.head,
        }
    }

    pub fn forward(&self, states: &Tensor<T>, actions: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_with_tape(states, actions).map(|(q, _)| q)
    }

    /// Returns `[n]` values.
    pub fn forward_with_tape(
        &self,
        states: &Tensor<T>,
        actions: &Tensor<T>,
    ) -> Result<(Tensor<T>, QTape<T>)> {
        let encoding = self.encode(states)?;
        let (q, head) = self.evaluate(&encoding, actions)?;
        Ok((q, QTape { encoding, head }))
    }

    /// Runs the state backbone.
    pub fn encode(&self, states: &Tensor<T>) -> Result<QEncoding<T>> {
        check_states(states)?;
        let (features, tape) = self.backbone.forward(&self.params, states)?;
        Ok(QEncoding { features, tape })
    }

    /// Values of `actions` (shape `[n, 4]`) at encoded states; returns `[n]`.
    pub fn evaluate(
        &self,
        encoding: &QEncoding<T>,
        actions: &Tensor<T>,
    ) -> Result<(Tensor<T>, QHeadTape<T>)> {
        actions.expect_shape(&[encoding.batch(), ACTION_DIM], "action batch")?;
        let p = &self.params;
        let action_features = relu(&self.action_proj.forward(p, actions)?);
        let joint = concat(&encoding.features, &action_features)?;
        let fused = relu(&self.fuse.forward(p, &joint)?);
        let h0 = relu(&self.mlp[0].forward(p, &fused)?);
        let h1 = relu(&self.mlp[1].forward(p, &h0)?);
        let q = self.head.forward(p, &h1)?;
        let n = q.shape()[0];
        let q = Tensor::from_vec(&[n], q.into_data())?;
        Ok((
            q,
            QHeadTape {
                actions: actions.clone(),
                action_features,
                joint,
                fused,
                hidden: [h0, h1],
            },
        ))
    }

    /// Backpropagates `d loss / d q` through everything above the backbone.
    /// Returns `(d loss / d features, d loss / d action)`.
    pub fn evaluate_backward(
        &self,
        tape: &QHeadTape<T>,
        grad_q: &Tensor<T>,
        mut grads: Option<&mut Grads<T>>,
    ) -> (Tensor<T>, Tensor<T>) {
        let p = &self.params;
        let n = grad_q.len();
        let g = Tensor::from_vec(&[n, 1], grad_q.data().to_vec()).expect("column");
        let g = self
            .head
            .backward(p, &tape.hidden[1], &g, grads.as_deref_mut(), true)
            .expect("input grad requested");
        let g = relu_backward(&tape.hidden[1], &g);
        let g = self.mlp[1]
            .backward(p, &tape.hidden[0], &g, grads.as_deref_mut(), true)
            .expect("input grad requested");
        let g = relu_backward(&tape.hidden[0], &g);
        let g = self.mlp[0]
            .backward(p, &tape.fused, &g, grads.as_deref_mut(), true)
            .expect("input grad requested");
        let g = relu_backward(&tape.fused, &g);
        let g = self
            .fuse
            .backward(p, &tape.joint, &g, grads.as_deref_mut(), true)
            .expect("input grad requested");
        let (g_state, g_action) = concat_backward(FEATURES, &g);
        let g_action = relu_backward(&tape.action_features, &g_action);
        let d_action = self
            .action_proj
            .backward(p, &tape.actions, &g_action, grads, true)
            .expect("input grad requested");
        (g_state, d_action)
    }

    /// Accumulates backbone parameter gradients for `d loss / d features`.
    pub fn encode_backward(&self, encoding: &QEncoding<T>, grad_features: &Tensor<T>, grads: &mut Grads<T>) {
        self.backbone.backward(&self.params, &encoding.tape, grad_features, grads);
    }

    /// Backpropagates `d loss / d q` (shape `[n]`). Parameter gradients are
    /// accumulated only when `grads` is given; the backbone is skipped
    /// entirely otherwise. Returns `d loss / d action`.
    pub fn backward(
        &self,
        tape: &QTape<T>,
        grad_q: &Tensor<T>,
        mut grads: Option<&mut Grads<T>>,
    ) -> Tensor<T> {
        let (g_state, d_action) = self.evaluate_backward(&tape.head, grad_q, grads.as_deref_mut());
        if let Some(grads) = grads {
            self.encode_backward(&tape.encoding, &g_state, grads);
        }
        d_action
    }
}
