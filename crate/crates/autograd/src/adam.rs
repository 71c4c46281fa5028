use crate::ParamStore;

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Applies one update to every parameter using its current gradient.
    /// Gradients are left untouched; callers zero them explicitly.
    pub fn step(&self, store: &mut ParamStore) {
        for p in store.iter_mut() {
            p.step_count += 1;
            let t = p.step_count as i32;
            let bc1 = 1.0 - self.beta1.powi(t);
            let bc2 = 1.0 - self.beta2.powi(t);
            let grad = p.grad.data();
            let m = p.adam_m.data_mut();
            for (m, &g) in m.iter_mut().zip(grad) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            }
            let v = p.adam_v.data_mut();
            for (v, &g) in v.iter_mut().zip(grad) {
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            }
            let (m, v) = (p.adam_m.data(), p.adam_v.data());
            for ((w, &m), &v) in p.value.data_mut().iter_mut().zip(m).zip(v) {
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}
