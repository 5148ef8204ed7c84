//! Adam with Keras-default moments and the learning-rate decay schedule
//! lr_t = lr / (1 + decay * t), t counting optimizer updates.

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64, decay: f64) -> Self {
        Self {
            learning_rate,
            decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Apply one update to every parameter tensor; gradients are left intact
    /// (callers zero them when assembling the next batch).
    pub fn step(&mut self, params_and_grads: &mut [(&mut Vec<f64>, &mut Vec<f64>)]) {
        if self.m.is_empty() {
            self.m = params_and_grads.iter().map(|(p, _)| vec![0.0; p.len()]).collect();
            self.v = params_and_grads.iter().map(|(p, _)| vec![0.0; p.len()]).collect();
        }
        debug_assert_eq!(self.m.len(), params_and_grads.len());
        self.step += 1;
        let t = self.step as f64;
        let lr_t = self.learning_rate / (1.0 + self.decay * t);
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for (k, (params, grads)) in params_and_grads.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..params.len() {
                let g = grads[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                params[i] -= lr_t * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}
