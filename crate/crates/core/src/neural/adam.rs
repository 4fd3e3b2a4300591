use super::{Gradients, NetworkWeights};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl NetworkWeights {
    /// One bias-corrected Adam update. `step_count` advances even when every
    /// gradient is zero.
    pub fn adam_step(&mut self, grads: &Gradients, lr: f64) {
        assert_eq!(grads.tensors.len(), self.params.len(), "gradient layout");
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        for (((p, m), v), g) in self
            .params
            .iter_mut()
            .zip(&mut self.adam_m)
            .zip(&mut self.adam_v)
            .zip(&grads.tensors)
        {
            assert_eq!(p.shape, g.shape, "gradient shape");
            for (((p, m), v), g) in p
                .data
                .iter_mut()
                .zip(&mut m.data)
                .zip(&mut v.data)
                .zip(&g.data)
            {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
}
