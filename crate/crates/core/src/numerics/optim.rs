use super::param::ParamStore;

/// Adam with optional decoupled weight decay (AdamW when `weight_decay > 0`).
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn adamw(lr: f64, weight_decay: f64) -> Self {
        Self {
            beta1: 0.8,
            beta2: 0.99,
            weight_decay,
            ..Self::new(lr)
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients; does not zero them.
    pub fn step(&mut self, store: &mut ParamStore) {
        if self.m.is_empty() {
            for p in store.iter() {
                self.m.push(vec![0.0; p.value.len()]);
                self.v.push(vec![0.0; p.value.len()]);
            }
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !p.trainable {
                continue;
            }
            let grads = p.grad.data().to_vec();
            for (((w, g), m), v) in p.value.data_mut().iter_mut().zip(&grads).zip(m).zip(v) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let update = (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
                *w -= self.lr * (update + self.weight_decay * *w);
            }
        }
    }
}

/// Multiplies the learning rate by `gamma` every `every` epochs.
#[derive(Debug, Clone, Copy)]
pub struct StepDecay {
    pub base_lr: f64,
    pub gamma: f64,
    pub every: usize,
}

impl StepDecay {
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.base_lr * self.gamma.powi((epoch / self.every.max(1)) as i32)
    }
}
