//! Minimal neural-network toolkit shared by the transmission controller and
//! the patch classifier: numerically stable softmax, an Adam optimizer, and
//! seeded orthogonal weight initialization. Everything works on flat `f64`
//! slices; the owning models define their own parameter layouts.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

/// Numerically stable softmax (subtracts the max logit before
/// exponentiating).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Shannon entropy of a probability vector, in nats.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Samples an index from a categorical distribution. Draws one `f64` from
/// the stream and walks the cumulative mass; any residual probability from
/// floating-point rounding goes to the last index.
pub fn sample_categorical(probs: &[f64], rng: &mut ChaCha12Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Standard normal draw via Box-Muller; consumes two uniforms per call.
pub fn gaussian(rng: &mut ChaCha12Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>(); // (0, 1], avoids ln(0)
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Orthogonal weight initialization, row-major `rows x cols`.
///
/// Draws a Gaussian matrix and orthonormalizes the shorter side with
/// modified Gram-Schmidt, then scales by `gain`. Rows (or columns, when
/// `rows > cols`) of the result are orthonormal up to the gain, which keeps
/// early activations well-conditioned regardless of fan-in.
pub fn orthogonal_init(rows: usize, cols: usize, gain: f64, rng: &mut ChaCha12Rng) -> Vec<f64> {
    let transpose = rows > cols;
    let (n, m) = if transpose { (cols, rows) } else { (rows, cols) };
    // n vectors of length m, n <= m, to be orthonormalized.
    let mut vs: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| gaussian(rng)).collect()).collect();
    for i in 0..n {
        for j in 0..i {
            let dot: f64 = vs[i].iter().zip(&vs[j]).map(|(a, b)| a * b).sum();
            for k in 0..m {
                vs[i][k] -= dot * vs[j][k];
            }
        }
        let norm: f64 = vs[i].iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm > 1e-12, "degenerate random matrix during orthogonalization");
        for x in &mut vs[i] {
            *x = *x / norm * gain;
        }
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = if transpose { vs[c][r] } else { vs[r][c] };
        }
    }
    out
}

/// Adam: first-order gradient steps with per-parameter adaptive moments.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(param_count: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// Applies one update step in place. `grads` must be the gradient of the
    /// loss w.r.t. `params` (same layout, same length).
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient length mismatch");
        assert_eq!(params.len(), self.m.len(), "optimizer sized for a different model");
        self.t += 1;
        let b1c = 1.0 - self.beta1.powi(self.t as i32);
        let b2c = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / b1c;
            let v_hat = self.v[i] / b2c;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
