//! Adam-family optimizers over visited parameter lists.
//!
//! Moment state lives in f64 regardless of the model's scalar type and is
//! keyed by visit order, which every model keeps stable.

use super::tensor::{Scalar, Tensor};

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty folded into the gradient (classic Adam) when
    /// `decoupled` is false; applied directly to weights (AdamW) otherwise.
    pub weight_decay: f64,
    pub decoupled: bool,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            decoupled: false,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Adam with decoupled weight decay.
    pub fn adamw(lr: f64, weight_decay: f64) -> Self {
        let mut adam = Self::new(lr);
        adam.weight_decay = weight_decay;
        adam.decoupled = true;
        adam
    }

    /// One update over every (parameter, gradient) pair the visitor yields.
    pub fn step<S: Scalar>(
        &mut self,
        visit: impl FnOnce(&mut dyn FnMut(&str, &mut Tensor<S>, &mut Tensor<S>)),
    ) {
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (lr, b1, b2, eps, wd, decoupled) =
            (self.lr, self.beta1, self.beta2, self.eps, self.weight_decay, self.decoupled);
        let m = &mut self.m;
        let v = &mut self.v;
        let mut cursor = 0usize;
        visit(&mut |_name, param, grad| {
            let n = param.numel();
            if m.len() < cursor + n {
                m.resize(cursor + n, 0.0);
                v.resize(cursor + n, 0.0);
            }
            let pdata = param.data_mut();
            let gdata = grad.data();
            for i in 0..n {
                let mut g = gdata[i].to_f64();
                let mut w = pdata[i].to_f64();
                if wd != 0.0 && !decoupled {
                    g += wd * w;
                }
                let mi = &mut m[cursor + i];
                let vi = &mut v[cursor + i];
                *mi = b1 * *mi + (1.0 - b1) * g;
                *vi = b2 * *vi + (1.0 - b2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                w -= lr * mhat / (vhat.sqrt() + eps);
                if wd != 0.0 && decoupled {
                    w -= lr * wd * w;
                }
                pdata[i] = S::from_f64(w);
            }
            cursor += n;
        });
    }
}
