use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{invalid, BatchContext, Objective, ObjectiveError};

/// Teacher-student regression with a fully connected tanh network.
///
/// `layer_widths` lists every layer including input and output, so
/// `[4, 16, 1]` is one hidden layer of width 16. Hidden layers use tanh, the
/// output layer is linear, and the loss is the mean squared error over all
/// samples and outputs. Parameters are flattened layer by layer as a
/// row-major weight matrix followed by its bias.
#[derive(Debug, Clone)]
pub struct Mlp {
    widths: Vec<usize>,
    inputs: Vec<f64>,
    targets: Vec<f64>,
    n_samples: usize,
    teacher: Vec<f64>,
    n_params: usize,
}

struct Forward {
    /// Activations per layer, `acts[0]` is the input.
    acts: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn new(
        layer_widths: &[usize],
        dataset_size: usize,
        noise_std: f64,
        seed: u64,
    ) -> Result<Self, ObjectiveError> {
        if layer_widths.is_empty() {
            return Err(invalid("layer_widths", "must not be empty"));
        }
        if layer_widths.len() < 3 {
            return Err(invalid(
                "layer_widths",
                "needs input, at least one hidden layer, and output",
            ));
        }
        if layer_widths.contains(&0) {
            return Err(invalid("layer_widths", "all widths must be positive"));
        }
        if dataset_size == 0 {
            return Err(invalid("dataset_size", "must be positive"));
        }
        if !(noise_std >= 0.0) || !noise_std.is_finite() {
            return Err(invalid(
                "noise_std",
                format!("must be non-negative, got {noise_std}"),
            ));
        }
        let widths = layer_widths.to_vec();
        let n_params = widths.windows(2).map(|w| w[1] * w[0] + w[1]).sum();
        let d_in = widths[0];
        let d_out = *widths.last().unwrap();

        let mut data_rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<f64> = (0..dataset_size * d_in)
            .map(|_| data_rng.random_range(-1.0..=1.0))
            .collect();

        let mut teacher_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let teacher: Vec<f64> = (0..n_params)
            .map(|_| StandardNormal.sample(&mut teacher_rng))
            .collect();

        let mut mlp = Self {
            widths,
            inputs,
            targets: Vec::new(),
            n_samples: dataset_size,
            teacher,
            n_params,
        };
        let noise = Normal::new(0.0, noise_std).expect("validated above");
        let mut targets = Vec::with_capacity(dataset_size * d_out);
        for s in 0..dataset_size {
            let out = mlp.forward(&mlp.teacher, s);
            for v in out.acts.last().unwrap() {
                let eps = if noise_std > 0.0 {
                    noise.sample(&mut data_rng)
                } else {
                    0.0
                };
                targets.push(v + eps);
            }
        }
        mlp.targets = targets;
        Ok(mlp)
    }

    pub fn layer_widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn dataset_size(&self) -> usize {
        self.n_samples
    }

    /// Parameters of the network that generated the targets.
    pub fn teacher_params(&self) -> &[f64] {
        &self.teacher
    }

    fn forward(&self, params: &[f64], sample: usize) -> Forward {
        let d_in = self.widths[0];
        let mut acts = Vec::with_capacity(self.widths.len());
        acts.push(self.inputs[sample * d_in..(sample + 1) * d_in].to_vec());
        let mut offset = 0;
        let n_layers = self.widths.len() - 1;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let weights = &params[offset..offset + fan_out * fan_in];
            let bias = &params[offset + fan_out * fan_in..offset + fan_out * fan_in + fan_out];
            offset += fan_out * fan_in + fan_out;
            let prev = &acts[l];
            let mut out: Vec<f64> = (0..fan_out)
                .map(|j| {
                    let row = &weights[j * fan_in..(j + 1) * fan_in];
                    bias[j] + row.iter().zip(prev).map(|(w, a)| w * a).sum::<f64>()
                })
                .collect();
            if l + 1 < n_layers {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(out);
        }
        Forward { acts }
    }

    fn loss_on(&self, params: &[f64], samples: impl Iterator<Item = usize>) -> f64 {
        let d_out = *self.widths.last().unwrap();
        let mut total = 0.0;
        let mut count = 0usize;
        for s in samples {
            let fwd = self.forward(params, s);
            let target = &self.targets[s * d_out..(s + 1) * d_out];
            total += fwd
                .acts
                .last()
                .unwrap()
                .iter()
                .zip(target)
                .map(|(o, t)| (o - t) * (o - t))
                .sum::<f64>();
            count += d_out;
        }
        total / count as f64
    }

    /// Mean-squared-error gradient restricted to `samples`, by backpropagation.
    /// Samples are accumulated in the order given.
    pub fn gradient_on(&self, params: &[f64], samples: &[usize]) -> Vec<f64> {
        let d_out = *self.widths.last().unwrap();
        let n_layers = self.widths.len() - 1;
        let scale = 2.0 / (samples.len() * d_out) as f64;

        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            offsets.push(off);
            off += self.widths[l + 1] * self.widths[l] + self.widths[l + 1];
        }

        let mut grad = vec![0.0; self.n_params];
        for &s in samples {
            let fwd = self.forward(params, s);
            let target = &self.targets[s * d_out..(s + 1) * d_out];
            let mut delta: Vec<f64> = fwd.acts[n_layers]
                .iter()
                .zip(target)
                .map(|(o, t)| scale * (o - t))
                .collect();
            for l in (0..n_layers).rev() {
                let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
                let w_off = offsets[l];
                let b_off = w_off + fan_out * fan_in;
                let prev = &fwd.acts[l];
                for j in 0..fan_out {
                    for i in 0..fan_in {
                        grad[w_off + j * fan_in + i] += delta[j] * prev[i];
                    }
                    grad[b_off + j] += delta[j];
                }
                if l > 0 {
                    // back through the weights, then through tanh of layer l
                    let weights = &params[w_off..w_off + fan_out * fan_in];
                    delta = (0..fan_in)
                        .map(|i| {
                            let back: f64 = (0..fan_out)
                                .map(|j| weights[j * fan_in + i] * delta[j])
                                .sum();
                            back * (1.0 - prev[i] * prev[i])
                        })
                        .collect();
                }
            }
        }
        grad
    }

    /// Sorted sample indices for the mini-batch at `iteration`.
    pub fn batch_indices(&self, batch: &BatchContext, iteration: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(batch.rng_seed, iteration));
        let mut idx = index::sample(&mut rng, self.n_samples, batch.batch_size).into_vec();
        idx.sort_unstable();
        idx
    }
}

/// SplitMix64 finalizer over the pair, so neighbouring iterations get
/// unrelated generators.
fn mix_seed(seed: u64, iteration: u64) -> u64 {
    let mut z = seed ^ iteration.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Objective for Mlp {
    fn name(&self) -> &str {
        "mlp"
    }

    fn dimension(&self) -> usize {
        self.n_params
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.loss_on(x, 0..self.n_samples)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let all: Vec<usize> = (0..self.n_samples).collect();
        self.gradient_on(x, &all)
    }

    fn supports_batches(&self) -> bool {
        true
    }

    fn batch_gradient(&self, x: &[f64], batch: &BatchContext, iteration: u64) -> Option<Vec<f64>> {
        let idx = self.batch_indices(batch, iteration);
        Some(self.gradient_on(x, &idx))
    }
}
