//! First-order optimizers shared by depth alignment and Gaussian lifting.

/// Adam over one flat parameter group.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Adam::with_eps(len, 1e-8)
    }

    pub fn with_eps(len: usize, eps: f64) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One bias-corrected update of `params` with step size `lr`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let mh = *m / b1t;
            let vh = *v / b2t;
            *p -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Exponential interpolation from `lr0` at `it = 0` to `lr1` at `it = total`.
pub fn exp_decay(lr0: f64, lr1: f64, it: usize, total: usize) -> f64 {
    if total == 0 {
        return lr0;
    }
    let f = (it as f64 / total as f64).min(1.0);
    lr0 * (lr1 / lr0).powf(f)
}
