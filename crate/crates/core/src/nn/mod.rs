//! Minimal neural-network toolkit: named parameters, NHWC layers with
//! explicit backward passes, and an Adam optimizer.

pub mod gradcheck;
pub mod layers;
pub mod params;

pub use layers::{
    col2im, conv_out, im2col, relu, relu_backward, sigmoid, upsample_nearest,
    upsample_nearest_backward, Conv2d, ConvTranspose2d, Dense, MaxPool,
};
pub use params::Params;

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Params,
    v: Params,
}

impl Adam {
    pub fn new(params: &Params, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    /// One update. Only arrays present in `grads` are touched; with `lr == 0`
    /// parameters are left bitwise unchanged.
    pub fn step(&mut self, params: &mut Params, grads: &Params) {
        self.t += 1;
        if self.lr == 0.0 {
            return;
        }
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let step = self.lr * c2.sqrt() / c1;
        for (name, g) in grads.iter() {
            let m = self.m.get_mut(name);
            ndarray::Zip::from(&mut *m).and(g).for_each(|m, &g| *m = b1 * *m + (1.0 - b1) * g);
            let v = self.v.get_mut(name);
            ndarray::Zip::from(&mut *v).and(g).for_each(|v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
            let m = self.m.get(name);
            let v = self.v.get(name);
            let eps = self.eps;
            ndarray::Zip::from(params.get_mut(name))
                .and(m)
                .and(v)
                .for_each(|p, &m, &v| *p -= step * m / (v.sqrt() + eps * c2.sqrt()));
        }
    }
}
