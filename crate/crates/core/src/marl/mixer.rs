use rand::Rng;

use super::MarlError;
use crate::neuro::{BatchCache, Mlp};

/// State-conditioned monotonic mixing network.
///
/// ```text
/// W1 = |hyper_w1(s)|  (n_agents x embed)     b1 = hyper_b1(s)
/// W2 = |hyper_w2(s)|  (embed)                V  = hyper_v(s)
/// Q_tot = elu(q W1 + b1) . W2 + V
/// ```
///
/// The absolute value on the generated weights makes `Q_tot` non-decreasing
/// in every agent's utility.
#[derive(Debug, Clone, PartialEq)]
pub struct QmixMixer {
    n_agents: usize,
    embed: usize,
    pub hyper_w1: Mlp,
    pub hyper_b1: Mlp,
    pub hyper_w2: Mlp,
    pub hyper_v: Mlp,
}

/// Intermediates of a batched mixer forward pass, one row per sample.
#[derive(Debug, Clone)]
pub struct MixCache {
    rows: usize,
    q: Vec<f64>,
    raw_w1: Vec<f64>,
    raw_w2: Vec<f64>,
    pre: Vec<f64>,
    hidden: Vec<f64>,
    caches: [BatchCache; 4],
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl QmixMixer {
    pub fn new<R: Rng + ?Sized>(
        n_agents: usize,
        state_dim: usize,
        embed: usize,
        hyper_embed: usize,
        rng: &mut R,
    ) -> Result<Self, MarlError> {
        Ok(Self {
            n_agents,
            embed,
            hyper_w1: Mlp::new(&[state_dim, hyper_embed, n_agents * embed], rng)?,
            hyper_b1: Mlp::new(&[state_dim, embed], rng)?,
            hyper_w2: Mlp::new(&[state_dim, hyper_embed, embed], rng)?,
            hyper_v: Mlp::new(&[state_dim, embed, 1], rng)?,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn embed(&self) -> usize {
        self.embed
    }

    pub fn state_dim(&self) -> usize {
        self.hyper_w1.input_len()
    }

    pub fn nets(&self) -> [&Mlp; 4] {
        [&self.hyper_w1, &self.hyper_b1, &self.hyper_w2, &self.hyper_v]
    }

    pub fn nets_mut(&mut self) -> [&mut Mlp; 4] {
        [&mut self.hyper_w1, &mut self.hyper_b1, &mut self.hyper_w2, &mut self.hyper_v]
    }

    pub fn param_count(&self) -> usize {
        self.nets().iter().map(|n| n.param_count()).sum()
    }

    fn check_q(&self, q: &[f64], rows: usize) -> Result<(), MarlError> {
        if q.len() != rows * self.n_agents {
            return Err(MarlError::Shape {
                expected: rows * self.n_agents,
                got: q.len(),
            });
        }
        Ok(())
    }

    /// `Q_tot` for `rows` samples: `q` is `rows x n_agents`, `states` is
    /// `rows x state_dim`, both row-major.
    pub fn forward_batch(&self, q: &[f64], states: &[f64], rows: usize) -> Result<(Vec<f64>, MixCache), MarlError> {
        self.check_q(q, rows)?;
        let (raw_w1, c0) = self.hyper_w1.forward_batch(states, rows)?;
        let (b1, c1) = self.hyper_b1.forward_batch(states, rows)?;
        let (raw_w2, c2) = self.hyper_w2.forward_batch(states, rows)?;
        let (v, c3) = self.hyper_v.forward_batch(states, rows)?;
        let mut pre = vec![0.0; rows * self.embed];
        let mut hidden = vec![0.0; rows * self.embed];
        let q_tot = self.mix_rows(q, &raw_w1, &b1, &raw_w2, &v, rows, &mut pre, &mut hidden);
        Ok((
            q_tot,
            MixCache {
                rows,
                q: q.to_vec(),
                raw_w1,
                raw_w2,
                pre,
                hidden,
                caches: [c0, c1, c2, c3],
            },
        ))
    }

    #[allow(clippy::too_many_arguments)]
    fn mix_rows(&self, q: &[f64], raw_w1: &[f64], b1: &[f64], raw_w2: &[f64], v: &[f64], rows: usize, pre: &mut [f64], hidden: &mut [f64]) -> Vec<f64> {
        let (n, e) = (self.n_agents, self.embed);
        let mut q_tot = vec![0.0; rows];
        for r in 0..rows {
            let qr = &q[r * n..(r + 1) * n];
            let w1 = &raw_w1[r * n * e..(r + 1) * n * e];
            for j in 0..e {
                let z = b1[r * e + j] + qr.iter().enumerate().map(|(i, qi)| qi * w1[i * e + j].abs()).sum::<f64>();
                pre[r * e + j] = z;
                hidden[r * e + j] = elu(z);
            }
            q_tot[r] = v[r]
                + hidden[r * e..(r + 1) * e]
                    .iter()
                    .zip(&raw_w2[r * e..(r + 1) * e])
                    .map(|(h, w)| h * w.abs())
                    .sum::<f64>();
        }
        q_tot
    }

    /// Same values as [`Self::forward_batch`] without keeping activations.
    pub fn q_tot_batch(&self, q: &[f64], states: &[f64], rows: usize) -> Result<Vec<f64>, MarlError> {
        self.check_q(q, rows)?;
        let raw_w1 = self.hyper_w1.predict_batch(states, rows)?;
        let b1 = self.hyper_b1.predict_batch(states, rows)?;
        let raw_w2 = self.hyper_w2.predict_batch(states, rows)?;
        let v = self.hyper_v.predict_batch(states, rows)?;
        let mut pre = vec![0.0; rows * self.embed];
        let mut hidden = vec![0.0; rows * self.embed];
        Ok(self.mix_rows(q, &raw_w1, &b1, &raw_w2, &v, rows, &mut pre, &mut hidden))
    }

    pub fn forward(&self, q: &[f64], state: &[f64]) -> Result<(f64, MixCache), MarlError> {
        let (q_tot, cache) = self.forward_batch(q, state, 1)?;
        Ok((q_tot[0], cache))
    }

    pub fn q_tot(&self, q: &[f64], state: &[f64]) -> Result<f64, MarlError> {
        Ok(self.q_tot_batch(q, state, 1)?[0])
    }

    /// Accumulates `sum_r upstream_r * d Q_tot_r` into the four hypernetwork
    /// gradient buffers (same order as [`Self::nets`]) and returns the
    /// `rows x n_agents` gradient with respect to the agent utilities.
    pub fn backward_batch_into(&self, cache: &MixCache, upstream: &[f64], grads: &mut [Vec<f64>]) -> Result<Vec<f64>, MarlError> {
        if grads.len() != 4 {
            return Err(MarlError::Shape {
                expected: 4,
                got: grads.len(),
            });
        }
        let rows = cache.rows;
        if upstream.len() != rows {
            return Err(MarlError::Shape {
                expected: rows,
                got: upstream.len(),
            });
        }
        let (n, e) = (self.n_agents, self.embed);
        let mut d_raw_w1 = vec![0.0; rows * n * e];
        let mut d_raw_w2 = vec![0.0; rows * e];
        let mut d_pre = vec![0.0; rows * e];
        let mut dq = vec![0.0; rows * n];
        for (r, &u) in upstream.iter().enumerate() {
            for j in 0..e {
                let k = r * e + j;
                d_raw_w2[k] = u * cache.hidden[k] * sign(cache.raw_w2[k]);
                d_pre[k] = u * cache.raw_w2[k].abs() * elu_grad(cache.pre[k]);
            }
            for i in 0..n {
                for j in 0..e {
                    let k = r * n * e + i * e + j;
                    let w = cache.raw_w1[k];
                    d_raw_w1[k] = cache.q[r * n + i] * d_pre[r * e + j] * sign(w);
                    dq[r * n + i] += w.abs() * d_pre[r * e + j];
                }
            }
        }
        let [g0, g1, g2, g3] = grads else { unreachable!() };
        self.hyper_w1.backward_batch_into(&cache.caches[0], &d_raw_w1, g0)?;
        self.hyper_b1.backward_batch_into(&cache.caches[1], &d_pre, g1)?;
        self.hyper_w2.backward_batch_into(&cache.caches[2], &d_raw_w2, g2)?;
        self.hyper_v.backward_batch_into(&cache.caches[3], upstream, g3)?;
        Ok(dq)
    }

    pub fn backward_into(&self, cache: &MixCache, upstream: f64, grads: &mut [Vec<f64>]) -> Result<Vec<f64>, MarlError> {
        self.backward_batch_into(cache, &[upstream], grads)
    }

    pub fn copy_params_from(&mut self, src: &QmixMixer) -> Result<(), MarlError> {
        for (dst, src) in self.nets_mut().into_iter().zip(src.nets()) {
            dst.copy_params_from(src)?;
        }
        Ok(())
    }

    /// Smallest distance of any non-smooth point (hidden ReLU inputs and
    /// absolute-value inputs) from zero at `state`.
    pub fn kink_margin(&self, state: &[f64]) -> Result<f64, MarlError> {
        let mut margin = f64::INFINITY;
        for net in self.nets() {
            margin = margin.min(hidden_margin(net, state)?);
        }
        for net in [&self.hyper_w1, &self.hyper_w2] {
            for v in net.predict(state)? {
                margin = margin.min(v.abs());
            }
        }
        Ok(margin)
    }
}

/// Smallest |pre-activation| over the hidden ReLU units of `net` at `x`.
pub(crate) fn hidden_margin(net: &Mlp, x: &[f64]) -> Result<f64, MarlError> {
    let layers = net.sizes().len() - 1;
    let mut margin = f64::INFINITY;
    let mut a = x.to_vec();
    if a.len() != net.input_len() {
        return Err(MarlError::Shape {
            expected: net.input_len(),
            got: a.len(),
        });
    }
    for l in 0..layers.saturating_sub(1) {
        let (w, b) = net.layer(l);
        let z: Vec<f64> = b
            .iter()
            .zip(w.chunks_exact(a.len()))
            .map(|(bias, row)| bias + row.iter().zip(&a).map(|(p, q)| p * q).sum::<f64>())
            .collect();
        margin = z.iter().fold(margin, |m, v| m.min(v.abs()));
        a = z.into_iter().map(|v| v.max(0.0)).collect();
    }
    Ok(margin)
}
