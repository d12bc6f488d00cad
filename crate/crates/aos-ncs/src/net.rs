//! Minimal dense network: one rectified hidden layer, linear output, exact
//! analytic gradients, and an adaptive-moment optimizer. Everything is f64;
//! the networks here are small enough that precision is worth more than
//! speed.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::rng::Stream;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("non-finite gradient; parameters left untouched")]
    NonFiniteGradient,
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
}

/// Two affine layers with a rectifier in between:
/// `y = W2 * relu(W1 * x + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    /// Row-major `hidden_dim x input_dim`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// Row-major `output_dim x hidden_dim`.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Parameter gradients, same shapes as [`Mlp`].
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            w1: vec![0.0; net.w1.len()],
            b1: vec![0.0; net.b1.len()],
            w2: vec![0.0; net.w2.len()],
            b2: vec![0.0; net.b2.len()],
        }
    }

    pub fn add(&mut self, other: &MlpGrads) {
        for (a, b) in self.iter_mut_slices().into_iter().zip(other.iter_slices()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.iter_mut_slices() {
            for x in s {
                *x *= factor;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.iter_slices().into_iter().flatten().all(|x| x.is_finite())
    }

    fn iter_slices(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn iter_mut_slices(&mut self) -> [&mut [f64]; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

impl Mlp {
    /// Glorot-uniform initialization: each layer uniform in
    /// `+-sqrt(6 / (fan_in + fan_out))`.
    pub fn new(input_dim: usize, hidden_dim: usize, output_dim: usize, rng: &mut Stream) -> Self {
        assert!(input_dim > 0 && hidden_dim > 0 && output_dim > 0);
        let limit1 = (6.0 / (input_dim + hidden_dim) as f64).sqrt();
        let limit2 = (6.0 / (hidden_dim + output_dim) as f64).sqrt();
        let w1 = (0..hidden_dim * input_dim)
            .map(|_| rng.random_range(-limit1..limit1))
            .collect();
        let w2 = (0..output_dim * hidden_dim)
            .map(|_| rng.random_range(-limit2..limit2))
            .collect();
        Self {
            input_dim,
            hidden_dim,
            output_dim,
            w1,
            b1: vec![0.0; hidden_dim],
            w2,
            b2: vec![0.0; output_dim],
        }
    }

    /// All-zero network with the given shape.
    pub fn zeros(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            output_dim,
            w1: vec![0.0; hidden_dim * input_dim],
            b1: vec![0.0; hidden_dim],
            w2: vec![0.0; output_dim * hidden_dim],
            b2: vec![0.0; output_dim],
        }
    }

    fn hidden(&self, x: &[f64]) -> Vec<f64> {
        let mut h = self.b1.clone();
        for (j, hj) in h.iter_mut().enumerate() {
            let row = &self.w1[j * self.input_dim..(j + 1) * self.input_dim];
            let mut acc = *hj;
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            *hj = acc.max(0.0);
        }
        h
    }

    /// Forward pass; rejects inputs of the wrong length.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NetError> {
        if x.len() != self.input_dim {
            return Err(NetError::DimMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        let h = self.hidden(x);
        let mut y = self.b2.clone();
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &self.w2[o * self.hidden_dim..(o + 1) * self.hidden_dim];
            let mut acc = *yo;
            for (w, hj) in row.iter().zip(&h) {
                acc += w * hj;
            }
            *yo = acc;
        }
        Ok(y)
    }

    /// Exact parameter gradients of the scalar loss whose output gradient is
    /// `upstream`, evaluated at input `x`.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<MlpGrads, NetError> {
        if x.len() != self.input_dim {
            return Err(NetError::DimMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        if upstream.len() != self.output_dim {
            return Err(NetError::DimMismatch {
                expected: self.output_dim,
                got: upstream.len(),
            });
        }
        let h = self.hidden(x);
        let mut grads = MlpGrads::zeros_like(self);

        // Output layer.
        for (o, &g) in upstream.iter().enumerate() {
            grads.b2[o] = g;
            let row = &mut grads.w2[o * self.hidden_dim..(o + 1) * self.hidden_dim];
            for (dw, hj) in row.iter_mut().zip(&h) {
                *dw = g * hj;
            }
        }

        // Backprop into the hidden layer; relu derivative is 1 where the
        // post-activation is positive.
        for (j, &hj) in h.iter().enumerate() {
            if hj <= 0.0 {
                continue;
            }
            let mut dh = 0.0;
            for (o, &g) in upstream.iter().enumerate() {
                dh += g * self.w2[o * self.hidden_dim + j];
            }
            grads.b1[j] = dh;
            let row = &mut grads.w1[j * self.input_dim..(j + 1) * self.input_dim];
            for (dw, xi) in row.iter_mut().zip(x) {
                *dw = dh * xi;
            }
        }
        Ok(grads)
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Write the versioned binary checkpoint: magic, dims, then row-major
    /// little-endian f64 parameter arrays.
    pub fn write_to(&self, w: &mut dyn Write) -> Result<(), NetError> {
        w.write_all(MLP_MAGIC)?;
        for dim in [self.input_dim, self.hidden_dim, self.output_dim] {
            w.write_all(&(dim as u32).to_le_bytes())?;
        }
        for arr in [&self.w1, &self.b1, &self.w2, &self.b2] {
            for v in arr.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut dyn Read) -> Result<Self, NetError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| NetError::BadCheckpoint("truncated magic".into()))?;
        if &magic != MLP_MAGIC {
            return Err(NetError::BadCheckpoint(format!(
                "unrecognized magic {magic:?}"
            )));
        }
        let mut dim = [0u8; 4];
        let mut dims = [0usize; 3];
        for d in dims.iter_mut() {
            r.read_exact(&mut dim)
                .map_err(|_| NetError::BadCheckpoint("truncated dims".into()))?;
            *d = u32::from_le_bytes(dim) as usize;
        }
        let [input_dim, hidden_dim, output_dim] = dims;
        if input_dim == 0 || hidden_dim == 0 || output_dim == 0 {
            return Err(NetError::BadCheckpoint("zero dimension".into()));
        }
        let mut net = Mlp::zeros(input_dim, hidden_dim, output_dim);
        let mut buf = [0u8; 8];
        for arr in [&mut net.w1, &mut net.b1, &mut net.w2, &mut net.b2] {
            for v in arr.iter_mut() {
                r.read_exact(&mut buf)
                    .map_err(|_| NetError::BadCheckpoint("truncated parameters".into()))?;
                *v = f64::from_le_bytes(buf);
            }
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<(), NetError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)
    }

    pub fn load(path: &Path) -> Result<Self, NetError> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}

pub const MLP_MAGIC: &[u8; 8] = b"AOSMLP01";

/// Adaptive-moment optimizer state for one [`Mlp`].
#[derive(Debug, Clone)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step_count: u64,
    m: MlpGrads,
    v: MlpGrads,
}

impl AdamState {
    pub fn new(net: &Mlp, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            m: MlpGrads::zeros_like(net),
            v: MlpGrads::zeros_like(net),
        }
    }

    /// One bias-corrected update. Rejects non-finite gradients before
    /// touching any parameter.
    pub fn step(&mut self, net: &mut Mlp, grads: &MlpGrads) -> Result<(), NetError> {
        if !grads.is_finite() {
            return Err(NetError::NonFiniteGradient);
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let params = [
            (&mut net.w1, &grads.w1, &mut self.m.w1, &mut self.v.w1),
            (&mut net.b1, &grads.b1, &mut self.m.b1, &mut self.v.b1),
            (&mut net.w2, &grads.w2, &mut self.m.w2, &mut self.v.w2),
            (&mut net.b2, &grads.b2, &mut self.m.b2, &mut self.v.b2),
        ];
        for (p, g, m, v) in params {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;

    /// Central-difference gradient of the linear loss `sum(c * y)`.
    fn numeric_grad(net: &Mlp, x: &[f64], c: &[f64], perturb: impl Fn(&mut Mlp, f64)) -> f64 {
        let h = 1e-5;
        let mut plus = net.clone();
        perturb(&mut plus, h);
        let mut minus = net.clone();
        perturb(&mut minus, -h);
        let loss = |n: &Mlp| -> f64 {
            n.forward(x)
                .unwrap()
                .iter()
                .zip(c)
                .map(|(y, ci)| y * ci)
                .sum()
        };
        (loss(&plus) - loss(&minus)) / (2.0 * h)
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / (a.abs() + 1e-8)
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(4, 8, 3);
        assert_eq!(net.forward(&[1.0, -2.0, 3.0, 0.5]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn identity_like_net_passes_positive_and_clips_negative() {
        let mut net = Mlp::zeros(1, 1, 1);
        net.w1[0] = 1.0;
        net.w2[0] = 1.0;
        assert_eq!(net.forward(&[2.0]).unwrap(), vec![2.0]);
        assert_eq!(net.forward(&[-2.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let net = Mlp::zeros(4, 8, 3);
        assert!(matches!(
            net.forward(&[1.0, 2.0]),
            Err(NetError::DimMismatch { .. })
        ));
        assert!(net.backward(&[0.0; 4], &[0.0; 2]).is_err());
    }

    #[test]
    fn analytic_gradients_match_central_differences() {
        // Ten random nets and inputs; every parameter checked against the
        // finite-difference oracle at relative error 1e-4.
        for trial in 0..10u64 {
            let mut rng = derive_stream(100 + trial, "net-test", 0);
            let net = Mlp::new(5, 7, 3, &mut rng);
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.5..1.5)).collect();
            let c: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let grads = net.backward(&x, &c).unwrap();

            for j in 0..net.w1.len() {
                let n = numeric_grad(&net, &x, &c, |m, h| m.w1[j] += h);
                assert!(rel_err(grads.w1[j], n) < 1e-4, "w1[{j}]: {} vs {n}", grads.w1[j]);
            }
            for j in 0..net.b1.len() {
                let n = numeric_grad(&net, &x, &c, |m, h| m.b1[j] += h);
                assert!(rel_err(grads.b1[j], n) < 1e-4, "b1[{j}]");
            }
            for j in 0..net.w2.len() {
                let n = numeric_grad(&net, &x, &c, |m, h| m.w2[j] += h);
                assert!(rel_err(grads.w2[j], n) < 1e-4, "w2[{j}]");
            }
            for j in 0..net.b2.len() {
                let n = numeric_grad(&net, &x, &c, |m, h| m.b2[j] += h);
                assert!(rel_err(grads.b2[j], n) < 1e-4, "b2[{j}]");
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = derive_stream(5, "net-test", 0);
        let net = Mlp::new(4, 6, 2, &mut rng);
        let grads = net.backward(&[0.3, -0.1, 0.8, 0.0], &[0.0, 0.0]).unwrap();
        assert!(grads.iter_slices().into_iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn gradient_of_sum_is_sum_of_gradients() {
        let mut rng = derive_stream(6, "net-test", 0);
        let net = Mlp::new(4, 6, 2, &mut rng);
        for _ in 0..2 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let u1: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let u2: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let sum: Vec<f64> = u1.iter().zip(&u2).map(|(a, b)| a + b).collect();
            let mut g1 = net.backward(&x, &u1).unwrap();
            let g2 = net.backward(&x, &u2).unwrap();
            let gs = net.backward(&x, &sum).unwrap();
            g1.add(&g2);
            for (a, b) in g1.iter_slices().into_iter().flatten().zip(gs.iter_slices().into_iter().flatten()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adam_leaves_parameters_alone_on_zero_gradient() {
        let mut rng = derive_stream(7, "net-test", 0);
        let mut net = Mlp::new(3, 4, 2, &mut rng);
        let before = net.clone();
        let zeros = MlpGrads::zeros_like(&net);
        let mut opt = AdamState::new(&net, 0.1);
        opt.step(&mut net, &zeros).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn adam_first_step_is_bias_corrected() {
        // Closed form: with g = 1 the first bias-corrected step moves the
        // parameter by lr / (1 + eps), i.e. almost exactly lr.
        let mut net = Mlp::zeros(1, 1, 1);
        net.w1[0] = 0.5;
        let mut opt = AdamState::new(&net, 0.1);
        let mut grads = MlpGrads::zeros_like(&net);
        grads.w1[0] = 1.0;
        opt.step(&mut net, &grads).unwrap();
        let expected = 0.5 - 0.1 / (1.0 + 1e-8);
        assert!((net.w1[0] - expected).abs() < 1e-12, "{}", net.w1[0]);
    }

    #[test]
    fn non_finite_gradient_rejected_without_touching_parameters() {
        let mut rng = derive_stream(8, "net-test", 0);
        let mut net = Mlp::new(3, 4, 2, &mut rng);
        let before = net.clone();
        let mut opt = AdamState::new(&net, 0.1);
        let mut grads = MlpGrads::zeros_like(&net);
        grads.w2[1] = f64::NAN;
        assert!(matches!(
            opt.step(&mut net, &grads),
            Err(NetError::NonFiniteGradient)
        ));
        assert_eq!(net, before);
    }

    #[test]
    fn optimizer_reduces_regression_loss() {
        let mut rng = derive_stream(9, "net-test", 0);
        let mut net = Mlp::new(3, 16, 1, &mut rng);
        let mut opt = AdamState::new(&net, 1e-2);
        let batch: Vec<(Vec<f64>, f64)> = (0..32)
            .map(|_| {
                let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                let target = x[0] - 2.0 * x[1] + 0.5 * x[2];
                (x, target)
            })
            .collect();
        let loss_of = |net: &Mlp| -> f64 {
            batch
                .iter()
                .map(|(x, t)| (net.forward(x).unwrap()[0] - t).powi(2))
                .sum::<f64>()
                / batch.len() as f64
        };
        let initial = loss_of(&net);
        for _ in 0..100 {
            let mut total = MlpGrads::zeros_like(&net);
            for (x, t) in &batch {
                let y = net.forward(x).unwrap()[0];
                let upstream = [2.0 * (y - t) / batch.len() as f64];
                total.add(&net.backward(x, &upstream).unwrap());
            }
            opt.step(&mut net, &total).unwrap();
        }
        let final_loss = loss_of(&net);
        assert!(
            final_loss < 0.2 * initial,
            "loss {initial} -> {final_loss} did not drop"
        );
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut rng = derive_stream(10, "net-test", 0);
        let net = Mlp::new(17, 64, 6, &mut rng);
        let mut buf = Vec::new();
        net.write_to(&mut buf).unwrap();
        let back = Mlp::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(net, back);
    }

    #[test]
    fn truncated_checkpoint_is_a_typed_error() {
        let mut rng = derive_stream(11, "net-test", 0);
        let net = Mlp::new(4, 4, 2, &mut rng);
        let mut buf = Vec::new();
        net.write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 5);
        assert!(matches!(
            Mlp::read_from(&mut buf.as_slice()),
            Err(NetError::BadCheckpoint(_))
        ));
    }
}
