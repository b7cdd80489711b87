use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Affine layer stored as `input x output` so a batch is `x.dot(&weight) + bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((input, output)),
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }
}

/// Multilayer perceptron with ReLU on hidden layers and a linear output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp<T> {
    layers: Vec<Dense<T>>,
    /// Bumped on every parameter change; forward caches remember it.
    #[serde(skip)]
    version: u64,
}

impl<T: PartialEq> PartialEq for Mlp<T> {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Activations saved by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    /// Input to each layer.
    inputs: Vec<Array2<T>>,
    /// Pre-activation output of each layer.
    pre: Vec<Array2<T>>,
    version: u64,
}

/// Per-layer parameter gradients, same shapes as the layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Dense<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(net: &Mlp<T>) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Dense::zeros(l.input_dim(), l.output_dim()))
                .collect(),
        }
    }

    pub fn norm(&self) -> T {
        self.layers
            .iter()
            .map(|l| {
                l.weight
                    .iter()
                    .chain(l.bias.iter())
                    .fold(T::zero(), |acc, g| acc + *g * *g)
            })
            .fold(T::zero(), |a, b| a + b)
            .sqrt()
    }

    pub fn flatten(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
            .collect()
    }
}

impl<T: Scalar> Mlp<T> {
    /// He-uniform hidden layers; the output layer is drawn from
    /// `[-output_scale, output_scale]` when `output_scale` is given.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R, output_scale: Option<f64>) -> Self {
        assert!(
            dims.len() >= 2,
            "an MLP needs at least input and output dims"
        );
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let bound = match output_scale {
                    Some(s) if i == last => s,
                    _ => (6.0 / w[0] as f64).sqrt(),
                };
                let weight =
                    Array2::from_shape_fn((w[0], w[1]), |_| T::lit(rng.gen_range(-bound..=bound)));
                Dense {
                    weight,
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        Self {
            layers,
            version: next_version(),
        }
    }

    pub fn from_layers(layers: Vec<Dense<T>>) -> Result<Self> {
        for w in layers.windows(2) {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(Error::Dimension {
                    expected: w[0].output_dim(),
                    actual: w[1].input_dim(),
                });
            }
        }
        for l in &layers {
            if l.bias.len() != l.output_dim() {
                return Err(Error::Dimension {
                    expected: l.output_dim(),
                    actual: l.bias.len(),
                });
            }
        }
        Ok(Self {
            layers,
            version: next_version(),
        })
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.output_dim()))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn params_flat(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub fn set_params_flat(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::Dimension {
                expected: self.num_params(),
                actual: values.len(),
            });
        }
        let mut it = values.iter();
        for l in &mut self.layers {
            for v in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *v = *it.next().expect("length checked");
            }
        }
        self.touch();
        Ok(())
    }

    fn touch(&mut self) {
        self.version = next_version();
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Dense<T>] {
        self.touch();
        &mut self.layers
    }

    fn check_input(&self, x: &ArrayView2<T>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                actual: x.ncols(),
            });
        }
        Ok(())
    }

    /// Batched forward pass (`x` is `batch x input`), keeping activations.
    pub fn forward(&self, x: ArrayView2<T>) -> Result<(Array2<T>, ForwardCache<T>)> {
        self.check_input(&x)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            let z = h.dot(&l.weight) + &l.bias;
            inputs.push(h);
            h = if i == last { z.clone() } else { z.mapv(relu) };
            pre.push(z);
        }
        Ok((
            h,
            ForwardCache {
                inputs,
                pre,
                version: self.version,
            },
        ))
    }

    /// Forward pass without caching.
    pub fn predict(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        self.check_input(&x)?;
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            let z = h.dot(&l.weight) + &l.bias;
            h = if i == last { z } else { z.mapv(relu) };
        }
        Ok(h)
    }

    pub fn predict_one(&self, x: &[T]) -> Result<Vec<T>> {
        let view = ArrayView2::from_shape((1, x.len()), x).map_err(|_| Error::Dimension {
            expected: self.input_dim(),
            actual: x.len(),
        })?;
        Ok(self.predict(view)?.into_raw_vec_and_offset().0)
    }

    /// Reverse-mode pass. `grad_out` is dLoss/dOutput for each batch row;
    /// returns parameter gradients summed over the batch and dLoss/dInput.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        grad_out: ArrayView2<T>,
    ) -> Result<(Gradients<T>, Array2<T>)> {
        if cache.version != self.version || cache.inputs.len() != self.layers.len() {
            return Err(Error::Contract(
                "forward cache does not match the current parameters".into(),
            ));
        }
        if grad_out.ncols() != self.output_dim() || grad_out.nrows() != cache.inputs[0].nrows() {
            return Err(Error::Dimension {
                expected: self.output_dim(),
                actual: grad_out.ncols(),
            });
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = grad_out.to_owned();
        let last = self.layers.len() - 1;
        for i in (0..self.layers.len()).rev() {
            if i != last {
                delta.zip_mut_with(&cache.pre[i], |d, z| {
                    if *z <= T::zero() {
                        *d = T::zero();
                    }
                });
            }
            let weight = cache.inputs[i].t().dot(&delta);
            let bias = delta.sum_axis(Axis(0));
            let next = delta.dot(&self.layers[i].weight.t());
            grads.push(Dense { weight, bias });
            delta = next;
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }

    /// `self <- zeta * behavior + (1 - zeta) * self`.
    pub fn soft_update_from(&mut self, behavior: &Mlp<T>, zeta: T) -> Result<()> {
        if self.dims() != behavior.dims() {
            return Err(Error::Contract(
                "soft update between networks of different shapes".into(),
            ));
        }
        let keep = T::one() - zeta;
        for (t, b) in self.layers.iter_mut().zip(&behavior.layers) {
            t.weight
                .zip_mut_with(&b.weight, |t, b| *t = zeta * *b + keep * *t);
            t.bias
                .zip_mut_with(&b.bias, |t, b| *t = zeta * *b + keep * *t);
        }
        self.touch();
        Ok(())
    }

    /// Converts parameters to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Mlp<U> {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weight: l.weight.mapv(|v| U::lit(v.to_f64_lossy())),
                    bias: l.bias.mapv(|v| U::lit(v.to_f64_lossy())),
                })
                .collect(),
            version: next_version(),
        }
    }
}

static VERSION: AtomicU64 = AtomicU64::new(1);

fn next_version() -> u64 {
    VERSION.fetch_add(1, Ordering::Relaxed)
}

fn relu<T: Scalar>(z: T) -> T {
    if z > T::zero() {
        z
    } else {
        T::zero()
    }
}
