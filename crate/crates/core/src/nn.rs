//! Parameter storage, the layer building blocks shared by every network,
//! and the Adam optimizer.

use crate::autodiff::{no_grad, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
}

/// Owned, flat storage for one network's parameters.
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], value: Vec<f64>) -> ParamId {
        assert_eq!(value.len(), shape.iter().product::<usize>());
        self.params.push(Param {
            name: name.into(),
            shape: shape.to_vec(),
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn add_normal(&mut self, name: impl Into<String>, shape: &[usize], rng: &mut ChaCha8Rng) -> ParamId {
        let n = shape.iter().product();
        let value = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        self.add(name, shape, value)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        let n = shape.iter().product();
        self.add(name, shape, vec![0.0; n])
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Graph leaves for one forward pass. Trainable leaves accept gradients.
    pub fn bind(&self, trainable: bool) -> Bound {
        let leaves = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    Tensor::variable(p.value.clone(), &p.shape)
                } else {
                    Tensor::new(p.value.clone(), &p.shape)
                }
            })
            .collect();
        Bound { leaves }
    }

    /// Same layout as `self`, all values taken from `other` (shapes must match).
    pub fn load_values(&mut self, other: &ParamStore) -> Result<(), String> {
        if other.params.len() != self.params.len() {
            return Err(format!(
                "parameter count mismatch: expected {}, found {}",
                self.params.len(),
                other.params.len()
            ));
        }
        for (mine, theirs) in self.params.iter_mut().zip(&other.params) {
            if mine.shape != theirs.shape {
                return Err(format!(
                    "shape mismatch for {}: expected {:?}, found {:?}",
                    mine.name, mine.shape, theirs.shape
                ));
            }
            mine.value.clone_from(&theirs.value);
        }
        Ok(())
    }
}

/// Parameters materialized as graph leaves, indexed like the store.
pub struct Bound {
    leaves: Vec<Tensor>,
}

impl Bound {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.leaves[id.0]
    }

    pub fn leaves(&self) -> Vec<&Tensor> {
        self.leaves.iter().collect()
    }
}

/// Dense layer with equalized learning rate: weights are stored at unit
/// variance and scaled by `gain / sqrt(fan_in)` on every forward pass.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
    pub gain: f64,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::with_gain(store, name, fan_in, fan_out, 2f64.sqrt(), rng)
    }

    pub fn with_gain(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        gain: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = store.add_normal(format!("{name}.weight"), &[fan_in, fan_out], rng);
        let bias = store.add_zeros(format!("{name}.bias"), &[fan_out]);
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
            gain,
        }
    }

    /// `x: [rows, fan_in] -> [rows, fan_out]`
    pub fn forward(&self, p: &Bound, x: &Tensor) -> Tensor {
        let scale = self.gain / (self.fan_in as f64).sqrt();
        let w = p.get(self.weight).scale(scale);
        let y = x.matmul(&w);
        y.add(&p.get(self.bias).broadcast_to(y.shape()))
    }
}

/// Stride-1 "same" convolution over NHWC tensors (odd kernel).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub gain: f64,
}

impl Conv2d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self::with_gain(store, name, in_channels, out_channels, kernel, 2f64.sqrt(), rng)
    }

    pub fn with_gain(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        gain: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(kernel % 2 == 1, "kernel must be odd");
        let weight = store.add_normal(
            format!("{name}.weight"),
            &[kernel * kernel * in_channels, out_channels],
            rng,
        );
        let bias = store.add_zeros(format!("{name}.bias"), &[out_channels]);
        Self {
            weight,
            bias,
            kernel,
            in_channels,
            out_channels,
            gain,
        }
    }

    pub fn forward(&self, p: &Bound, x: &Tensor) -> Tensor {
        let sh = x.shape();
        assert_eq!(sh.len(), 4);
        assert_eq!(sh[3], self.in_channels, "conv input channels");
        let (b, h, w) = (sh[0], sh[1], sh[2]);
        let fan_in = self.kernel * self.kernel * self.in_channels;
        let scale = self.gain / (fan_in as f64).sqrt();
        let cols = if self.kernel == 1 {
            x.reshape(&[b * h * w, self.in_channels])
        } else {
            x.im2col(self.kernel)
        };
        let y = cols.matmul(&p.get(self.weight).scale(scale));
        let y = y.add(&p.get(self.bias).broadcast_to(y.shape()));
        y.reshape(&[b, h, w, self.out_channels])
    }
}

pub const LRELU_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.0005,
            beta1: 0.0,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction; one instance per parameter store.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.params().iter().map(|p| vec![0.0; p.value.len()]).collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) {
        assert_eq!(grads.len(), store.len());
        let _g = no_grad();
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, (param, g)) in store.params_mut().iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (&gj, w)) in g.data().iter().zip(param.value.iter_mut()).enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad;
    use rand::SeedableRng;

    #[test]
    fn conv_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let conv = Conv2d::with_gain(&mut store, "c", 2, 3, 3, 1.0, &mut rng);
        let x: Vec<f64> = (0..2 * 4 * 5 * 2).map(|i| (i as f64 * 0.37).sin()).collect();
        let p = store.bind(false);
        let y = conv.forward(&p, &Tensor::new(x.clone(), &[2, 4, 5, 2]));
        let w = &store.params()[conv.weight.0].value;
        let scale = 1.0 / 18f64.sqrt();
        for b in 0..2 {
            for yy in 0..4i32 {
                for xx in 0..5i32 {
                    for o in 0..3 {
                        let mut acc = 0.0;
                        for ky in 0..3i32 {
                            for kx in 0..3i32 {
                                let (iy, ix) = (yy + ky - 1, xx + kx - 1);
                                if !(0..4).contains(&iy) || !(0..5).contains(&ix) {
                                    continue;
                                }
                                for c in 0..2 {
                                    let xi = ((b * 4 + iy as usize) * 5 + ix as usize) * 2 + c;
                                    let wi = ((ky * 3 + kx) as usize * 2 + c) * 3 + o;
                                    acc += x[xi] * w[wi] * scale;
                                }
                            }
                        }
                        let yi = ((b * 4 + yy as usize) * 5 + xx as usize) * 3 + o;
                        assert!((y.data()[yi] - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("x", &[2], vec![3.0, -2.0]);
        let mut opt = Adam::new(
            AdamConfig {
                lr: 0.05,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            &store,
        );
        for _ in 0..2000 {
            let p = store.bind(true);
            let loss = p.get(id).add_scalar(-1.0).square().sum();
            let g = grad(&loss, &p.leaves(), false);
            opt.step(&mut store, &g);
        }
        for v in &store.params()[0].value {
            assert!((v - 1.0).abs() < 1e-3);
        }
    }
}
