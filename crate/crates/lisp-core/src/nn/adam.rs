//! Adam optimizer with bias correction.

use crate::mat::Mat;

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step_count: u64,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(lr: f64, shapes: &[(usize, usize)]) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            m: shapes.iter().map(|&(r, c)| Mat::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Mat::zeros(r, c)).collect(),
        }
    }

    /// Optimizer state for every parameter of a set of matrices.
    pub fn for_params(lr: f64, params: &[&Mat]) -> Self {
        let shapes: Vec<(usize, usize)> = params.iter().map(|p| (p.rows(), p.cols())).collect();
        Self::new(lr, &shapes)
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update. Parameters move opposite the bias-corrected moment ratio
    /// and are snapped back onto the f32 grid afterwards.
    pub fn step(&mut self, params: &mut [&mut Mat], grads: &[Mat]) {
        assert_eq!(params.len(), self.m.len(), "optimizer/parameter count mismatch");
        assert_eq!(grads.len(), self.m.len(), "gradient/parameter count mismatch");
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            debug_assert_eq!((p.rows(), p.cols()), (g.rows(), g.cols()));
            let pm = p.as_mut_slice();
            let gm = g.as_slice();
            let mm = m.as_mut_slice();
            let vm = v.as_mut_slice();
            for k in 0..pm.len() {
                let gk = gm[k];
                mm[k] = self.beta1 * mm[k] + (1.0 - self.beta1) * gk;
                vm[k] = self.beta2 * vm[k] + (1.0 - self.beta2) * gk * gk;
                let mhat = mm[k] / bc1;
                let vhat = vm[k] / bc2;
                pm[k] = (pm[k] - self.lr * mhat / (vhat.sqrt() + self.eps)) as f32 as f64;
            }
        }
    }
}
