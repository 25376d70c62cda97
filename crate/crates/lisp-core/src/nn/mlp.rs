//! Fixed-architecture multilayer perceptrons.

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::mat::Mat;
use crate::nn::tape::{Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

/// A dense feed-forward network. Weights are `in x out` so a batch of row
/// vectors forwards as plain `x * W + b`. The final layer is affine.
#[derive(Clone, Debug)]
pub struct Mlp {
    widths: Vec<usize>,
    hidden_acts: Vec<Activation>,
    weights: Vec<Mat>,
    biases: Vec<Mat>,
}

impl Mlp {
    /// Builds a network with the same activation on every hidden layer.
    /// Weights use uniform fan-in init, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`,
    /// snapped to the f32 grid.
    pub fn new(widths: &[usize], act: Activation, rng: &mut impl Rng) -> Self {
        let hidden_acts = vec![act; widths.len().saturating_sub(2)];
        Self::with_activations(widths, &hidden_acts, rng)
    }

    pub fn with_activations(
        widths: &[usize],
        hidden_acts: &[Activation],
        rng: &mut impl Rng,
    ) -> Self {
        assert!(widths.len() >= 2, "need at least input and output widths");
        assert!(widths.iter().all(|&w| w > 0), "layer widths must be positive");
        assert_eq!(
            hidden_acts.len(),
            widths.len() - 2,
            "one activation per hidden layer"
        );
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut w = Mat::from_fn(fan_in, fan_out, |_, _| rng.gen_range(-bound..bound));
            w.snap_f32();
            weights.push(w);
            biases.push(Mat::zeros(1, fan_out));
        }
        Mlp {
            widths: widths.to_vec(),
            hidden_acts: hidden_acts.to_vec(),
            weights,
            biases,
        }
    }

    /// All-zero parameters; useful as a blank slate for hand-set weights.
    pub fn zeros(widths: &[usize], act: Activation) -> Self {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut net = Self::new(widths, act, &mut rng);
        for w in &mut net.weights {
            w.scale_assign(0.0);
        }
        net
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut Mat {
        &mut self.weights[layer]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut Mat {
        &mut self.biases[layer]
    }

    fn apply_hidden(&self, layer: usize, m: Mat) -> Mat {
        match self.hidden_acts[layer] {
            Activation::Tanh => m.map(f64::tanh),
            Activation::Relu => m.map(|x| x.max(0.0)),
        }
    }

    /// Batched forward pass: `x` is batch x input_dim.
    pub fn forward_batch(&self, x: &Mat) -> Mat {
        assert_eq!(
            x.cols(),
            self.input_dim(),
            "forward: input width {} != declared {}",
            x.cols(),
            self.input_dim()
        );
        let mut h = x.clone();
        for (layer, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = h.matmul(w);
            for i in 0..z.rows() {
                for (zx, &bx) in z.row_mut(i).iter_mut().zip(b.as_slice()) {
                    *zx += bx;
                }
            }
            h = if layer < self.hidden_acts.len() {
                self.apply_hidden(layer, z)
            } else {
                z
            };
        }
        h
    }

    /// Single-vector forward pass.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let out = self.forward_batch(&Mat::row_vec(x.to_vec()));
        out.as_slice().to_vec()
    }

    /// Records this network's forward pass on a tape. Returns the output node
    /// and the parameter leaves in declaration order (w0, b0, w1, b1, ...).
    pub fn on_tape(&self, tape: &mut Tape, x: Var) -> (Var, Vec<Var>) {
        let mut params = Vec::with_capacity(self.weights.len() * 2);
        let mut h = x;
        for layer in 0..self.weights.len() {
            let w = tape.param(self.weights[layer].clone());
            let b = tape.param(self.biases[layer].clone());
            params.push(w);
            params.push(b);
            let z = tape.matmul(h, w);
            let z = tape.add_row(z, b);
            h = if layer < self.hidden_acts.len() {
                match self.hidden_acts[layer] {
                    Activation::Tanh => tape.tanh(z),
                    Activation::Relu => tape.relu(z),
                }
            } else {
                z
            };
        }
        (h, params)
    }

    /// Like `on_tape`, but parameters enter as constants: gradients still
    /// flow through the network to its inputs, but no parameter gradients
    /// are computed. Used where a network participates in another's loss.
    pub fn on_tape_frozen(&self, tape: &mut Tape, x: Var) -> Var {
        let mut h = x;
        for layer in 0..self.weights.len() {
            let w = tape.constant(self.weights[layer].clone());
            let b = tape.constant(self.biases[layer].clone());
            let z = tape.matmul(h, w);
            let z = tape.add_row(z, b);
            h = if layer < self.hidden_acts.len() {
                match self.hidden_acts[layer] {
                    Activation::Tanh => tape.tanh(z),
                    Activation::Relu => tape.relu(z),
                }
            } else {
                z
            };
        }
        h
    }

    /// Parameter matrices in declaration order (w0, b0, w1, b1, ...).
    pub fn params(&self) -> Vec<&Mat> {
        let mut out = Vec::with_capacity(self.weights.len() * 2);
        for i in 0..self.weights.len() {
            out.push(&self.weights[i]);
            out.push(&self.biases[i]);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Mat> {
        let mut out: Vec<&mut Mat> = Vec::with_capacity(self.weights.len() * 2);
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|m| m.len()).sum()
    }

    /// Flat f32 view of all parameters in declaration order.
    pub fn params_f32(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.num_params());
        for p in self.params() {
            out.extend(p.to_f32_vec());
        }
        out
    }

    pub fn load_params_f32(&mut self, data: &[f32]) -> Result<(), String> {
        let expected = self.num_params();
        if data.len() != expected {
            return Err(format!(
                "parameter block length {} != expected {}",
                data.len(),
                expected
            ));
        }
        let mut offset = 0;
        for p in self.params_mut() {
            let n = p.len();
            let (rows, cols) = (p.rows(), p.cols());
            *p = Mat::from_f32_slice(rows, cols, &data[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// SHA-256 over the f32 parameter bytes; used to assert that operations
    /// which must not touch weights really do not.
    pub fn param_hash(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for p in self.params() {
            for v in p.to_f32_vec() {
                hasher.update(v.to_le_bytes());
            }
        }
        hasher.finalize().into()
    }
}
