use super::tensor::{Grads, ParamSet, Scalar};

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: i32,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamSet<T>, lr: f64) -> Self {
        let zeros: Vec<Vec<T>> = params
            .tensors()
            .iter()
            .map(|t| vec![T::zero(); t.len()])
            .collect();
        Self {
            lr: T::from_f64_lossy(lr),
            beta1: T::from_f64_lossy(0.9),
            beta2: T::from_f64_lossy(0.999),
            eps: T::from_f64_lossy(1e-8),
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &Grads<T>) {
        self.step += 1;
        let one = T::one();
        let c1 = one - self.beta1.powi(self.step);
        let c2 = one - self.beta2.powi(self.step);
        // Moments of parameters with persistently zero gradient decay into
        // the subnormal range, where arithmetic is very slow.
        let tiny = T::min_positive_value();
        let flush = |x: T| if x.abs() < tiny { T::zero() } else { x };
        for (i, tensor) in params.tensors_mut().iter_mut().enumerate() {
            let g = grads.get(i).data();
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (((p, &g), m), v) in tensor.data_mut().iter_mut().zip(g).zip(m).zip(v) {
                *m = flush(self.beta1 * *m + (one - self.beta1) * g);
                *v = flush(self.beta2 * *v + (one - self.beta2) * g * g);
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p = *p - self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Adam on a single scalar (the entropy temperature).
#[derive(Debug, Clone)]
pub struct ScalarAdam {
    lr: f64,
    step: i32,
    first: f64,
    second: f64,
}

impl ScalarAdam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            step: 0,
            first: 0.0,
            second: 0.0,
        }
    }

    pub fn step(&mut self, value: &mut f64, grad: f64) {
        self.step += 1;
        self.first = 0.9 * self.first + 0.1 * grad;
        self.second = 0.999 * self.second + 0.001 * grad * grad;
        let m_hat = self.first / (1.0 - 0.9f64.powi(self.step));
        let v_hat = self.second / (1.0 - 0.999f64.powi(self.step));
        *value -= self.lr * m_hat / (v_hat.sqrt() + 1e-8);
    }
}
