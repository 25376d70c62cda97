//! Squashed-Gaussian policy: an MLP emitting `[mean, raw_log_std]` plus the
//! log-std bounds, with plain and on-tape sampling paths that share the same
//! parametrization.

use rand::Rng;

use crate::mat::Mat;
use crate::nn::head::{BatchSample, HeadBatch, LogStdBounds};
use crate::nn::mlp::Mlp;
use crate::nn::tape::{Tape, Var};

#[derive(Clone, Debug)]
pub struct PolicyNet {
    pub net: Mlp,
    pub bounds: LogStdBounds,
}

impl PolicyNet {
    pub fn new(net: Mlp, bounds: LogStdBounds) -> Self {
        assert!(net.output_dim() % 2 == 0, "policy output must be [mean, log_std]");
        PolicyNet { net, bounds }
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.net.output_dim() / 2
    }

    pub fn head_batch(&self, x: &Mat) -> HeadBatch {
        HeadBatch::from_raw(&self.net.forward_batch(x), self.bounds)
    }

    pub fn sample_batch(&self, x: &Mat, rng: &mut impl Rng) -> BatchSample {
        self.head_batch(x).sample(rng)
    }

    pub fn sample_one(&self, x: &[f64], rng: &mut impl Rng) -> (Vec<f64>, f64) {
        let out = self.sample_batch(&Mat::row_vec(x.to_vec()), rng);
        (out.value.row(0).to_vec(), out.log_prob[0])
    }

    /// Records the reparametrized sample `tanh(mean + std * eps)` and its
    /// per-row log-density on the tape, with `eps` held constant. Gradients
    /// flow into the policy parameters through both outputs.
    pub fn on_tape(&self, tape: &mut Tape, x: Var, eps: &Mat) -> PolicyTapeOut {
        let d = self.out_dim();
        let (raw, params) = self.net.on_tape(tape, x);
        let mean = tape.slice_cols(raw, 0, d);
        let raw_ls = tape.slice_cols(raw, d, 2 * d);
        // log_std = min + 0.5 (max - min) (tanh(raw) + 1)
        let t = tape.tanh(raw_ls);
        let t1 = tape.add_scalar(t, 1.0);
        let scaled = tape.scale(t1, 0.5 * (self.bounds.max - self.bounds.min));
        let log_std = tape.add_scalar(scaled, self.bounds.min);
        let std = tape.exp(log_std);

        let eps_v = tape.constant(eps.clone());
        let noise = tape.mul(std, eps_v);
        let u = tape.add(mean, noise);
        let action = tape.tanh(u);

        // Gaussian part: sum_d (-0.5 eps^2 - log_std) - d/2 ln(2 pi).
        // eps is constant, so only -log_std carries gradient.
        let neg_ls = tape.scale(log_std, -1.0);
        let gauss_rows = tape.sum_rows(neg_ls);
        let mut const_rows = Mat::zeros(eps.rows(), 1);
        for i in 0..eps.rows() {
            let mut acc = -0.5 * 1.837_877_066_409_345_2 * d as f64;
            for &e in eps.row(i) {
                acc += -0.5 * e * e;
            }
            const_rows.set(i, 0, acc);
        }
        let const_v = tape.constant(const_rows);
        let gauss = tape.add(gauss_rows, const_v);

        // Squash correction: - sum_d ln(1 - action^2 + guard).
        let a_sq = tape.square(action);
        let neg_a_sq = tape.scale(a_sq, -1.0);
        let one_minus = tape.add_scalar(neg_a_sq, 1.0 + 1e-6);
        let ln_term = tape.log(one_minus);
        let corr_rows = tape.sum_rows(ln_term);
        let log_prob = tape.sub(gauss, corr_rows);

        PolicyTapeOut {
            action,
            log_prob,
            params,
        }
    }
}

pub struct PolicyTapeOut {
    /// B x d squashed action node.
    pub action: Var,
    /// B x 1 log-density node.
    pub log_prob: Var,
    pub params: Vec<Var>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::mlp::Activation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tape_sample_matches_plain_sample_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pol = PolicyNet::new(Mlp::new(&[3, 8, 4], Activation::Relu, &mut rng), LogStdBounds::DEFAULT);
        let x = Mat::from_vec(2, 3, vec![0.2, -0.4, 0.9, 1.0, 0.0, -1.0]);

        // Draw eps via the plain path, then replay it through the tape.
        let mut srng = ChaCha8Rng::seed_from_u64(99);
        let plain = pol.sample_batch(&x, &mut srng);

        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let out = pol.on_tape(&mut tape, xv, &plain.eps);
        let tape_actions = tape.value(out.action);
        for i in 0..2 {
            for j in 0..2 {
                let pa = plain.value.get(i, j);
                let ta = tape_actions.get(i, j).clamp(-crate::nn::head::SQUASH_LIMIT, crate::nn::head::SQUASH_LIMIT);
                assert!((pa - ta).abs() < 1e-12);
            }
            let lp = tape.value(out.log_prob).get(i, 0);
            assert!((lp - plain.log_prob[i]).abs() < 1e-9, "{} vs {}", lp, plain.log_prob[i]);
        }
    }
}
