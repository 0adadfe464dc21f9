use crate::numerics::ParamSet;

/// Adam over the parameters selected by a mask; masked-out parameters are never written.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    trainable: Vec<bool>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamSet, lr: f64, trainable: impl Fn(&str) -> bool) -> Self {
        let mask: Vec<bool> = params.iter().map(|(_, p)| trainable(&p.name)).collect();
        let zeros = |on: bool, n: usize| if on { vec![0.0; n] } else { Vec::new() };
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.iter().zip(&mask).map(|((_, p), &on)| zeros(on, p.value.numel())).collect(),
            v: params.iter().zip(&mask).map(|((_, p), &on)| zeros(on, p.value.numel())).collect(),
            trainable: mask,
        }
    }

    pub fn is_trainable(&self, index: usize) -> bool {
        self.trainable[index]
    }

    /// L2 norm of the trainable part of `params`' accumulated gradient.
    pub fn grad_norm(&self, params: &ParamSet) -> f64 {
        params
            .iter()
            .zip(&self.trainable)
            .filter(|(_, &on)| on)
            .flat_map(|((_, p), _)| p.grad.data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// One update from `params[i].grad`, after rescaling to global norm `clip`.
    /// Returns the pre-clipping norm.
    pub fn step(&mut self, params: &mut ParamSet, clip: f64) -> f64 {
        let norm = self.grad_norm(params);
        let scale = if norm > clip { clip / norm } else { 1.0 };
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, (_, p)) in params.iter_mut().enumerate() {
            if !self.trainable[i] {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let grad = p.grad.data().to_vec();
            for (k, w) in p.value.data_mut().iter_mut().enumerate() {
                let g = grad[k] * scale;
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                *w -= self.lr * (m[k] / bc1) / ((v[k] / bc2).sqrt() + self.eps);
            }
        }
        norm
    }
}
