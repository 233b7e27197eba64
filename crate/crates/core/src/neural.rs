//! Forward-only multilayer perceptrons over flat parameter vectors.
//!
//! Parameters are packed layer by layer: the weight matrix in row-major order
//! (one row per output unit) followed by the bias vector. Checkpoints depend on
//! this order, so it must not change.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NeuralError {
    #[error("an MLP needs at least two layer sizes, all positive: {0:?}")]
    InvalidSpec(Vec<usize>),
    #[error("{what}: expected length {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    layer_sizes: Vec<usize>,
    hidden: Activation,
    output: Activation,
}

impl MlpSpec {
    pub fn new(
        layer_sizes: Vec<usize>,
        hidden: Activation,
        output: Activation,
    ) -> Result<Self, NeuralError> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(NeuralError::InvalidSpec(layer_sizes));
        }
        Ok(Self {
            layer_sizes,
            hidden,
            output,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated non-empty")
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    fn activation_for(&self, layer: usize) -> Activation {
        if layer + 2 == self.layer_sizes.len() {
            self.output
        } else {
            self.hidden
        }
    }

    /// Evaluates the network. `params` must hold exactly [`Self::param_count`]
    /// values and `input` exactly [`Self::input_dim`].
    pub fn forward(&self, params: &[f64], input: &[f64]) -> Result<Vec<f64>, NeuralError> {
        if params.len() != self.param_count() {
            return Err(NeuralError::DimensionMismatch {
                what: "mlp parameters",
                expected: self.param_count(),
                got: params.len(),
            });
        }
        if input.len() != self.input_dim() {
            return Err(NeuralError::DimensionMismatch {
                what: "mlp input",
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let mut x = input.to_vec();
        let mut offset = 0;
        for (layer, w) in self.layer_sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &params[offset..offset + n_in * n_out];
            let biases = &params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let act = self.activation_for(layer);
            x = weights
                .chunks_exact(n_in)
                .zip(biases)
                .map(|(row, b)| {
                    let mut z = 0.0;
                    for (wi, xi) in row.iter().zip(&x) {
                        z += wi * xi;
                    }
                    act.apply(z + b)
                })
                .collect();
        }
        Ok(x)
    }

    /// Splits a flat vector into per-layer `(weights, biases)`, weights row-major.
    pub fn unpack(&self, params: &[f64]) -> Result<Vec<DenseLayer>, NeuralError> {
        if params.len() != self.param_count() {
            return Err(NeuralError::DimensionMismatch {
                what: "mlp parameters",
                expected: self.param_count(),
                got: params.len(),
            });
        }
        let mut offset = 0;
        Ok(self
            .layer_sizes
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let weights: Vec<Vec<f64>> = params[offset..offset + n_in * n_out]
                    .chunks_exact(n_in)
                    .map(<[f64]>::to_vec)
                    .collect();
                let biases = params[offset + n_in * n_out..offset + n_in * n_out + n_out].to_vec();
                offset += n_in * n_out + n_out;
                DenseLayer { weights, biases }
            })
            .collect())
    }
}

/// One affine layer: `weights[out][in]`, `biases[out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

pub fn pack(layers: &[DenseLayer]) -> Vec<f64> {
    let mut out = Vec::new();
    for layer in layers {
        for row in &layer.weights {
            out.extend_from_slice(row);
        }
        out.extend_from_slice(&layer.biases);
    }
    out
}

/// Flat vector of trainable weights for one policy component.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl std::ops::Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(sizes: &[usize], hidden: Activation, output: Activation) -> MlpSpec {
        MlpSpec::new(sizes.to_vec(), hidden, output).unwrap()
    }

    #[test]
    fn param_counts() {
        assert_eq!(
            spec(&[2, 3], Activation::Tanh, Activation::Identity).param_count(),
            9
        );
        assert_eq!(
            spec(&[4, 8, 2], Activation::Tanh, Activation::Identity).param_count(),
            58
        );
        assert_eq!(
            spec(&[1, 1], Activation::Tanh, Activation::Identity).param_count(),
            2
        );
    }

    #[test]
    fn invalid_specs() {
        assert!(MlpSpec::new(vec![3], Activation::Tanh, Activation::Tanh).is_err());
        assert!(MlpSpec::new(vec![3, 0, 1], Activation::Tanh, Activation::Tanh).is_err());
    }

    #[test]
    fn identity_network() {
        let s = spec(&[2, 2], Activation::Identity, Activation::Identity);
        let params = [1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        assert_eq!(s.forward(&params, &[0.3, -0.7]).unwrap(), vec![0.3, -0.7]);
    }

    #[test]
    fn zero_tanh_unit() {
        let s = spec(&[1, 1], Activation::Tanh, Activation::Tanh);
        assert_eq!(s.forward(&[0.0, 0.0], &[5.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn dimension_errors() {
        let s = spec(&[2, 2], Activation::Tanh, Activation::Identity);
        assert!(matches!(
            s.forward(&[0.0; 5], &[0.0, 0.0]),
            Err(NeuralError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            s.forward(&[0.0; 6], &[0.0]),
            Err(NeuralError::DimensionMismatch { .. })
        ));
    }

    /// Dense-matrix oracle: explicit W·x + b with matrices built by index.
    fn matrix_oracle(sizes: &[usize], params: &[f64], input: &[f64]) -> Vec<f64> {
        let mut x = input.to_vec();
        let mut off = 0;
        for l in 0..sizes.len() - 1 {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let mut w = vec![vec![0.0; n_in]; n_out];
            for (o, row) in w.iter_mut().enumerate() {
                for (i, cell) in row.iter_mut().enumerate() {
                    *cell = params[off + o * n_in + i];
                }
            }
            off += n_in * n_out;
            let b = &params[off..off + n_out];
            off += n_out;
            let mut y = vec![0.0; n_out];
            for o in 0..n_out {
                let mut acc = 0.0;
                for i in 0..n_in {
                    acc += w[o][i] * x[i];
                }
                let z = acc + b[o];
                y[o] = if l + 2 == sizes.len() { z } else { z.tanh() };
            }
            x = y;
        }
        x
    }

    #[test]
    fn matches_matrix_oracle() {
        let s = spec(&[3, 4, 2], Activation::Tanh, Activation::Identity);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params: Vec<f64> = (0..s.param_count())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let input = [0.25, -1.5, 0.75];
        let got = s.forward(&params, &input).unwrap();
        let want = matrix_oracle(&[3, 4, 2], &params, &input);
        assert_eq!(got, want);
        assert_eq!(got.len(), 2);
    }

    proptest! {
        #[test]
        fn forward_is_deterministic(seed in any::<u64>(), x in proptest::collection::vec(-3.0f64..3.0, 3)) {
            let s = spec(&[3, 5, 2], Activation::Tanh, Activation::Tanh);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let params: Vec<f64> = (0..s.param_count()).map(|_| rng.random_range(-2.0..2.0)).collect();
            let a = s.forward(&params, &x).unwrap();
            let b = s.forward(&params, &x).unwrap();
            prop_assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert!(a.iter().all(|v| v.abs() <= 1.0));
        }

        #[test]
        fn pack_unpack_roundtrip(params in proptest::collection::vec(-10.0f64..10.0, 22)) {
            let s = spec(&[2, 4, 2], Activation::Relu, Activation::Identity);
            let layers = s.unpack(&params).unwrap();
            prop_assert_eq!(pack(&layers), params);
        }

        #[test]
        fn linear_without_bias(
            w in proptest::collection::vec(-2.0f64..2.0, 12),
            x in proptest::collection::vec(-5.0f64..5.0, 3),
            y in proptest::collection::vec(-5.0f64..5.0, 3),
            alpha in -3.0f64..3.0,
            beta in -3.0f64..3.0,
        ) {
            let s = spec(&[3, 2, 2], Activation::Identity, Activation::Identity);
            let mut params = vec![0.0; s.param_count()];
            params[..6].copy_from_slice(&w[..6]);
            params[8..12].copy_from_slice(&w[6..10]);
            let mix: Vec<f64> = x.iter().zip(&y).map(|(a, b)| alpha * a + beta * b).collect();
            let lhs = s.forward(&params, &mix).unwrap();
            let fx = s.forward(&params, &x).unwrap();
            let fy = s.forward(&params, &y).unwrap();
            for k in 0..2 {
                let rhs = alpha * fx[k] + beta * fy[k];
                let scale = lhs[k].abs().max(rhs.abs()).max(1.0);
                prop_assert!((lhs[k] - rhs).abs() <= 1e-12 * scale);
            }
        }
    }
}
