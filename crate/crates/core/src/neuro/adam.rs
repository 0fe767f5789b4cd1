use super::{Mlp, NeuroError};

/// Adam over one or more networks treated as a single parameter vector.
///
/// Gradients are clipped to a global L2 norm before the moment update.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, param_count: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to `nets` given per-network gradients in the same
    /// order. Returns the global gradient norm before clipping.
    pub fn step(&mut self, nets: &mut [&mut Mlp], grads: &[Vec<f64>], clip_norm: f64) -> Result<f64, NeuroError> {
        let total: usize = nets.iter().map(|n| n.param_count()).sum();
        if total != self.m.len() || nets.len() != grads.len() {
            return Err(NeuroError::Shape {
                expected: self.m.len(),
                got: total,
            });
        }
        for (net, g) in nets.iter().zip(grads) {
            if net.param_count() != g.len() {
                return Err(NeuroError::Shape {
                    expected: net.param_count(),
                    got: g.len(),
                });
            }
        }
        let sq: f64 = grads.iter().flatten().map(|g| g * g).sum();
        if !sq.is_finite() {
            return Err(NeuroError::NonFiniteGradient);
        }
        let norm = sq.sqrt();
        let scale = if norm > clip_norm { clip_norm / norm } else { 1.0 };

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let mut offset = 0;
        for (net, g) in nets.iter_mut().zip(grads) {
            let params = net.params_mut();
            let m = &mut self.m[offset..offset + params.len()];
            let v = &mut self.v[offset..offset + params.len()];
            for i in 0..params.len() {
                let gi = g[i] * scale;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            debug_assert!(params.iter().all(|p| p.is_finite()), "non-finite parameter after update");
            offset += params.len();
        }
        Ok(norm)
    }
}
