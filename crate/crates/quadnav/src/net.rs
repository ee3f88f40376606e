//! Dense networks with hand-derived reverse-mode gradients.
//!
//! The architecture is fixed: `in -> hidden -> hidden -> out` with ReLU
//! between hidden layers and a linear output. The policy owns an extra
//! state-independent `log_std` vector. Batches are row-major `Vec<f64>`
//! (`rows x dim`). No autodiff engine: the backward pass is written out
//! layer by layer and verified against central finite differences.
//!
//! Large batches split into fixed 128-row chunks for worker threads; chunk
//! partials combine in chunk order, so results are bit-identical at any
//! thread count.

use crate::parallel::map_chunks;
use rand::Rng;
use rand_distr::StandardNormal;

pub const HIDDEN_DIM: usize = 128;
pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
const LOG_2PI: f64 = 1.8378770664093453;

/// Rows per parallel work chunk. Part of the numeric contract: gradient
/// partials are summed per chunk, so this constant participates in the
/// floating-point association of every training run.
const ROW_CHUNK: usize = 128;

#[derive(Clone, Debug)]
pub struct Linear {
    /// `out_dim x in_dim`, row-major.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

/// `y = x W^T + b`, parallel over row chunks.
fn linear_forward(x: &[f64], rows: usize, layer: &Linear) -> Vec<f64> {
    let (in_dim, out_dim) = (layer.in_dim, layer.out_dim);
    debug_assert_eq!(x.len(), rows * in_dim);
    let chunks = map_chunks(rows, ROW_CHUNK, |s, e| {
        let mut y = Vec::with_capacity((e - s) * out_dim);
        for r in s..e {
            let xr = &x[r * in_dim..(r + 1) * in_dim];
            for o in 0..out_dim {
                let wo = &layer.w[o * in_dim..(o + 1) * in_dim];
                let dot: f64 = xr.iter().zip(wo).map(|(a, b)| a * b).sum();
                y.push(layer.b[o] + dot);
            }
        }
        y
    });
    let mut y = Vec::with_capacity(rows * out_dim);
    for c in chunks {
        y.extend_from_slice(&c);
    }
    y
}

/// Gradients of a linear layer: `dw[o,i] = sum_r dy[r,o] x[r,i]`,
/// `db[o] = sum_r dy[r,o]`, plus `dx = dy W` for the upstream layer.
fn linear_backward(
    x: &[f64],
    rows: usize,
    layer: &Linear,
    dy: &[f64],
    need_dx: bool,
) -> (Vec<f64>, Vec<f64>, Option<Vec<f64>>) {
    let (in_dim, out_dim) = (layer.in_dim, layer.out_dim);
    debug_assert_eq!(dy.len(), rows * out_dim);
    let chunks = map_chunks(rows, ROW_CHUNK, |s, e| {
        let mut dw = vec![0.0; out_dim * in_dim];
        let mut db = vec![0.0; out_dim];
        let mut dx = if need_dx { vec![0.0; (e - s) * in_dim] } else { Vec::new() };
        for r in s..e {
            let xr = &x[r * in_dim..(r + 1) * in_dim];
            let dyr = &dy[r * out_dim..(r + 1) * out_dim];
            for o in 0..out_dim {
                let g = dyr[o];
                if g != 0.0 {
                    let dwo = &mut dw[o * in_dim..(o + 1) * in_dim];
                    for (dwi, xi) in dwo.iter_mut().zip(xr) {
                        *dwi += g * xi;
                    }
                }
                db[o] += g;
            }
            if need_dx {
                let dxr = &mut dx[(r - s) * in_dim..(r - s + 1) * in_dim];
                for o in 0..out_dim {
                    let g = dyr[o];
                    if g != 0.0 {
                        let wo = &layer.w[o * in_dim..(o + 1) * in_dim];
                        for (dxi, wi) in dxr.iter_mut().zip(wo) {
                            *dxi += g * wi;
                        }
                    }
                }
            }
        }
        (dw, db, dx)
    });

    let mut dw = vec![0.0; out_dim * in_dim];
    let mut db = vec![0.0; out_dim];
    let mut dx = need_dx.then(|| Vec::with_capacity(rows * in_dim));
    for (cdw, cdb, cdx) in chunks {
        for (a, b) in dw.iter_mut().zip(&cdw) {
            *a += b;
        }
        for (a, b) in db.iter_mut().zip(&cdb) {
            *a += b;
        }
        if let Some(dx) = dx.as_mut() {
            dx.extend_from_slice(&cdx);
        }
    }
    (dw, db, dx)
}

/// Cached activations from a forward pass: `activations[0]` is the input,
/// each following entry is the post-ReLU hidden (or the final linear output).
pub struct Forward {
    pub activations: Vec<Vec<f64>>,
    pub rows: usize,
}

impl Forward {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("forward pass stores at least the input")
    }
}

#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// Orthogonally initialized network; `gains` holds one gain per layer.
    pub fn new(dims: &[usize], gains: &[f64], rng: &mut impl Rng) -> Mlp {
        assert!(dims.len() >= 2, "need at least input and output dims");
        assert_eq!(gains.len(), dims.len() - 1, "one gain per layer");
        let layers = dims
            .windows(2)
            .zip(gains)
            .map(|(d, &gain)| Linear {
                w: orthogonal(d[1], d[0], gain, rng),
                b: vec![0.0; d[1]],
                in_dim: d[0],
                out_dim: d[1],
            })
            .collect();
        Mlp { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().unwrap().in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Flat parameter vector, layer-major, weights before biases. The layout
    /// is the checkpoint format's array layout; do not reorder.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "flat parameter length mismatch");
        let mut k = 0;
        for l in &mut self.layers {
            let wl = l.w.len();
            l.w.copy_from_slice(&flat[k..k + wl]);
            k += wl;
            let bl = l.b.len();
            l.b.copy_from_slice(&flat[k..k + bl]);
            k += bl;
        }
    }

    pub fn forward(&self, input: &[f64], rows: usize) -> Forward {
        assert_eq!(input.len(), rows * self.in_dim(), "batch width must equal in_dim");
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_vec());
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = linear_forward(activations.last().unwrap(), rows, layer);
            if k + 1 < self.layers.len() {
                for v in &mut z {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            activations.push(z);
        }
        Forward { activations, rows }
    }

    /// Gradients of `sum(dy . output)` with respect to every parameter,
    /// flat in `params_flat` order.
    pub fn backward(&self, fwd: &Forward, dy: &[f64]) -> Vec<f64> {
        assert_eq!(fwd.activations.len(), self.layers.len() + 1, "cache does not match net");
        assert_eq!(dy.len(), fwd.rows * self.out_dim(), "dy must match the output shape");
        let mut grads: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(self.layers.len());
        let mut delta = dy.to_vec();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let x = &fwd.activations[k];
            let (dw, db, dx) = linear_backward(x, fwd.rows, layer, &delta, k > 0);
            grads.push((dw, db));
            if let Some(mut dx) = dx {
                // ReLU gate: the stored activation is post-ReLU, so
                // "activation > 0" is exactly "pre-activation > 0".
                for (d, a) in dx.iter_mut().zip(x) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
                delta = dx;
            }
        }
        grads.reverse();
        let mut flat = Vec::with_capacity(self.param_count());
        for (dw, db) in grads {
            flat.extend_from_slice(&dw);
            flat.extend_from_slice(&db);
        }
        flat
    }
}

/// Semi-orthogonal `out_dim x in_dim` matrix scaled by `gain`: the smaller
/// side's vectors are orthonormal (modified Gram-Schmidt on a Gaussian draw).
fn orthogonal(out_dim: usize, in_dim: usize, gain: f64, rng: &mut impl Rng) -> Vec<f64> {
    let (n, m) = (out_dim.max(in_dim), out_dim.min(in_dim));
    // n x m column-major Gaussian, columns orthonormalized in order.
    let mut cols: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    for j in 0..m {
        for k in 0..j {
            let dot: f64 = cols[j].iter().zip(&cols[k]).map(|(a, b)| a * b).sum();
            let qk = cols[k].clone();
            for (v, q) in cols[j].iter_mut().zip(&qk) {
                *v -= dot * q;
            }
        }
        let norm: f64 = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in &mut cols[j] {
            *v /= norm;
        }
    }
    let mut w = vec![0.0; out_dim * in_dim];
    for o in 0..out_dim {
        for i in 0..in_dim {
            // Tall case: W = Q; wide case: W = Q^T.
            let q = if out_dim >= in_dim { cols[i][o] } else { cols[o][i] };
            w[o * in_dim + i] = gain * q;
        }
    }
    w
}

/// Policy network: MLP producing the Gaussian mean, plus a free log-std
/// vector shared across states, clamped to `[LOG_STD_MIN, LOG_STD_MAX]`.
#[derive(Clone, Debug)]
pub struct GaussianPolicy {
    pub mlp: Mlp,
    pub log_std: Vec<f64>,
}

impl GaussianPolicy {
    pub fn new(obs_dim: usize, act_dim: usize, rng: &mut impl Rng) -> GaussianPolicy {
        // sqrt(2) suits ReLU hidden layers; the small output gain keeps early
        // action means near zero, i.e. near the mid-thrust regime.
        let mlp = Mlp::new(
            &[obs_dim, HIDDEN_DIM, HIDDEN_DIM, act_dim],
            &[std::f64::consts::SQRT_2, std::f64::consts::SQRT_2, 0.01],
            rng,
        );
        GaussianPolicy { mlp, log_std: vec![0.0; act_dim] }
    }

    pub fn act_dim(&self) -> usize {
        self.mlp.out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.mlp.param_count() + self.log_std.len()
    }

    /// MLP parameters followed by log_std.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut p = self.mlp.params_flat();
        p.extend_from_slice(&self.log_std);
        p
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "flat parameter length mismatch");
        let split = self.mlp.param_count();
        self.mlp.set_params_flat(&flat[..split]);
        self.log_std.copy_from_slice(&flat[split..]);
    }

    pub fn clamp_log_std(&mut self) {
        for v in &mut self.log_std {
            *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }

    /// Deterministic action: the mean for a single observation.
    pub fn mean_action(&self, obs: &[f64]) -> Vec<f64> {
        self.mlp.forward(obs, 1).output().to_vec()
    }
}

pub fn value_net(obs_dim: usize, rng: &mut impl Rng) -> Mlp {
    Mlp::new(
        &[obs_dim, HIDDEN_DIM, HIDDEN_DIM, 1],
        &[std::f64::consts::SQRT_2, std::f64::consts::SQRT_2, 1.0],
        rng,
    )
}

/// `a = mu + sigma * z` with per-component standard normal draws, row-major.
/// Returns the raw (unclamped) sample; log-probs are evaluated on it.
pub fn sample_gaussian(
    means: &[f64],
    rows: usize,
    log_std: &[f64],
    rng: &mut impl Rng,
) -> Vec<f64> {
    let dim = log_std.len();
    debug_assert_eq!(means.len(), rows * dim);
    let sigma: Vec<f64> = log_std.iter().map(|l| l.exp()).collect();
    let mut out = Vec::with_capacity(rows * dim);
    for r in 0..rows {
        for i in 0..dim {
            let z: f64 = rng.sample(StandardNormal);
            out.push(means[r * dim + i] + sigma[i] * z);
        }
    }
    out
}

/// Diagonal-Gaussian log densities of `actions` under `means`/`log_std`:
/// `-1/2 sum_i [((a-mu)/sigma)^2 + 2 log sigma + log 2pi]`.
pub fn gaussian_log_prob(means: &[f64], rows: usize, log_std: &[f64], actions: &[f64]) -> Vec<f64> {
    let dim = log_std.len();
    debug_assert_eq!(means.len(), rows * dim);
    debug_assert_eq!(actions.len(), rows * dim);
    let sigma: Vec<f64> = log_std.iter().map(|l| l.exp()).collect();
    (0..rows)
        .map(|r| {
            let mut acc = 0.0;
            for i in 0..dim {
                let z = (actions[r * dim + i] - means[r * dim + i]) / sigma[i];
                acc += z * z + 2.0 * log_std[i] + LOG_2PI;
            }
            -0.5 * acc
        })
        .collect()
}

/// Per-sample entropy; state-independent, so one scalar covers the batch:
/// `sum_i [log sigma_i + 1/2 (1 + log 2pi)]`.
pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|l| l + 0.5 * (1.0 + LOG_2PI)).sum()
}

/// Accumulates gradients of `sum_r coeff[r] * log_prob[r]`:
/// d/d mu = coeff * (a - mu) / sigma^2, d/d log_std_i = sum_r coeff (z^2 - 1).
pub fn gaussian_log_prob_backward(
    means: &[f64],
    rows: usize,
    log_std: &[f64],
    actions: &[f64],
    coeff: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let dim = log_std.len();
    debug_assert_eq!(coeff.len(), rows);
    let sigma: Vec<f64> = log_std.iter().map(|l| l.exp()).collect();
    let mut dmean = vec![0.0; rows * dim];
    let mut dlog_std = vec![0.0; dim];
    for r in 0..rows {
        for i in 0..dim {
            let z = (actions[r * dim + i] - means[r * dim + i]) / sigma[i];
            dmean[r * dim + i] = coeff[r] * z / sigma[i];
            dlog_std[i] += coeff[r] * (z * z - 1.0);
        }
    }
    (dmean, dlog_std)
}

/// Adam with bias correction over a flat parameter vector.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(param_count: usize, lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "parameter count mismatch");
        assert_eq!(grads.len(), self.m.len(), "gradient count mismatch");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for k in 0..params.len() {
            let g = grads[k];
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[k] / bc1;
            let v_hat = self.v[k] / bc2;
            params[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
