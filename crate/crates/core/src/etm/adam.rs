use super::objective::Gradients;
use super::EtmModel;

/// Adam with L2 weight decay folded into the gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: i32,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    pub fn new(model: &EtmModel, lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: Gradients::zeros_like(model),
            v: Gradients::zeros_like(model),
        }
    }

    /// One update. Alpha (the last group) is untouched when frozen.
    pub fn step(&mut self, model: &mut EtmModel, grads: &Gradients, freeze_alpha: bool) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, lr, eps, wd) = (self.beta1, self.beta2, self.lr, self.eps, self.weight_decay);
        let n_groups = if freeze_alpha { 6 } else { 7 };

        let params = model.param_groups_mut();
        let grads = grads.groups();
        let ms = self.m.groups_mut();
        let vs = self.v.groups_mut();
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(ms).zip(vs).take(n_groups) {
            debug_assert_eq!(p.len(), g.len());
            for i in 0..p.len() {
                let gi = g[i] + wd * p[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
