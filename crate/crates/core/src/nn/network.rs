use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::activation::Activation;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::params::Parameters;

/// One fully connected layer: `weights` is `outputs x inputs`, so unit `i`
/// computes `g(bias[i] + sum_j weights[i][j] * x[j])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl LayerParams {
    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::shape(
                "LayerParams::new",
                weights.shape(),
                (bias.len(), 1),
            ));
        }
        Ok(LayerParams { weights, bias })
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        LayerParams {
            weights: Matrix::zeros(outputs, inputs),
            bias: vec![0.0; outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    /// `x * W^T + b` for a batch of rows.
    pub fn affine(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.inputs() {
            return Err(Error::shape(
                "layer input",
                x.shape(),
                (self.outputs(), self.inputs()),
            ));
        }
        let mut z = x.dot(&self.weights.transpose())?;
        z.add_row_broadcast(&self.bias)?;
        Ok(z)
    }
}

/// Inverted-dropout retain probabilities for the input and hidden layers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutSpec {
    pub retain_input: f64,
    pub retain_hidden: f64,
}

impl DropoutSpec {
    pub fn new(retain_input: f64, retain_hidden: f64) -> Result<Self> {
        for (name, p) in [
            ("retain_input", retain_input),
            ("retain_hidden", retain_hidden),
        ] {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Parameter(format!(
                    "{name} must be in (0, 1], got {p}"
                )));
            }
        }
        Ok(DropoutSpec {
            retain_input,
            retain_hidden,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.retain_input == 1.0 && self.retain_hidden == 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub layers: Vec<LayerParams>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl NetworkParams {
    pub fn new(
        layers: Vec<LayerParams>,
        hidden_activation: Activation,
        output_activation: Activation,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Parameter(
                "a network needs at least one layer".into(),
            ));
        }
        if hidden_activation == Activation::Softmax {
            return Err(Error::Unsupported(
                "softmax is only allowed on the output layer".into(),
            ));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::InvalidShape {
                    op: "NetworkParams::new",
                    msg: format!(
                        "layer {l} produces {} units but layer {} expects {}",
                        pair[0].outputs(),
                        l + 1,
                        pair[1].inputs()
                    ),
                });
            }
        }
        Ok(NetworkParams {
            layers,
            hidden_activation,
            output_activation,
        })
    }

    /// Unit counts from input to output.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].inputs()];
        sizes.extend(self.layers.iter().map(LayerParams::outputs));
        sizes
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().map_or(0, LayerParams::outputs)
    }

    pub fn activation_of(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }

    /// A zero-valued copy with the same shapes, used to hold gradients.
    pub fn zeros_like(&self) -> NetworkParams {
        NetworkParams {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams::zeros(l.inputs(), l.outputs()))
                .collect(),
            hidden_activation: self.hidden_activation,
            output_activation: self.output_activation,
        }
    }

    /// Output activations without dropout and without keeping intermediates.
    pub fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        let mut a = self.layers[0].affine(x)?;
        self.activation_of(0).apply_inplace(&mut a);
        for (l, layer) in self.layers.iter().enumerate().skip(1) {
            a = layer.affine(&a)?;
            self.activation_of(l).apply_inplace(&mut a);
        }
        Ok(a)
    }

    pub fn weights_sum_sq(&self) -> f64 {
        self.layers.iter().map(|l| l.weights.sum_sq()).sum()
    }

    pub fn weights_sum_abs(&self) -> f64 {
        self.layers.iter().map(|l| l.weights.sum_abs()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }
}

impl Parameters for NetworkParams {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }
}

/// Everything backprop needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Activation of every layer, input first, before any dropout mask.
    pub activations: Vec<Matrix>,
    /// Per layer input: the inverted-dropout mask (entries `0` or `1/p`),
    /// `None` when that layer's input was not dropped.
    pub masks: Vec<Option<Matrix>>,
    masked_inputs: Vec<Option<Matrix>>,
}

impl ForwardPass {
    pub fn output(&self) -> &Matrix {
        self.activations
            .last()
            .expect("forward pass has an input layer")
    }

    /// The matrix layer `l` actually consumed (masked when dropout hit it).
    pub fn layer_input(&self, l: usize) -> &Matrix {
        self.masked_inputs[l]
            .as_ref()
            .unwrap_or(&self.activations[l])
    }
}

fn sample_mask(rows: usize, cols: usize, retain: f64, rng: &mut (impl Rng + ?Sized)) -> Matrix {
    let scale = 1.0 / retain;
    Matrix::from_fn(rows, cols, |_, _| {
        if rng.gen::<f64>() < retain {
            scale
        } else {
            0.0
        }
    })
}

/// Propagates `x` through the network, keeping every layer's activation.
///
/// With dropout, each example draws a fresh mask per layer input; kept units
/// are scaled by `1/p` so prediction needs no rescaling. A retain
/// probability of exactly 1 draws nothing from `rng`.
pub fn forward(
    net: &NetworkParams,
    x: &Matrix,
    dropout: Option<&DropoutSpec>,
    rng: &mut (impl Rng + ?Sized),
) -> Result<ForwardPass> {
    if x.cols() != net.input_size() {
        return Err(Error::shape(
            "forward",
            x.shape(),
            (net.layers[0].outputs(), net.input_size()),
        ));
    }
    let n_layers = net.layers.len();
    let mut activations = Vec::with_capacity(n_layers + 1);
    let mut masks = Vec::with_capacity(n_layers);
    let mut masked_inputs = Vec::with_capacity(n_layers);
    activations.push(x.clone());
    for (l, layer) in net.layers.iter().enumerate() {
        let retain = match dropout {
            Some(d) if l == 0 => d.retain_input,
            Some(d) => d.retain_hidden,
            None => 1.0,
        };
        let input = &activations[l];
        let (mask, masked) = if retain < 1.0 {
            let mask = sample_mask(input.rows(), input.cols(), retain, rng);
            let masked = input.hadamard(&mask)?;
            (Some(mask), Some(masked))
        } else {
            (None, None)
        };
        let mut z = layer.affine(masked.as_ref().unwrap_or(input))?;
        net.activation_of(l).apply_inplace(&mut z);
        masks.push(mask);
        masked_inputs.push(masked);
        activations.push(z);
    }
    Ok(ForwardPass {
        activations,
        masks,
        masked_inputs,
    })
}

/// Weight initialization scheme; biases always start at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitScheme {
    /// Every weight drawn from `N(0, sigma^2)`.
    Gaussian { sigma: f64 },
    /// Exactly `nonzero` incoming weights per unit drawn from `N(0, sigma^2)`,
    /// the rest zero.
    Sparse { nonzero: usize, sigma: f64 },
}

pub fn gaussian_matrix(
    rows: usize,
    cols: usize,
    sigma: f64,
    rng: &mut (impl Rng + ?Sized),
) -> Matrix {
    if sigma == 0.0 {
        return Matrix::zeros(rows, cols);
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    Matrix::from_fn(rows, cols, |_, _| normal.sample(rng))
}

pub fn init_layer(
    inputs: usize,
    outputs: usize,
    scheme: InitScheme,
    rng: &mut (impl Rng + ?Sized),
) -> Result<LayerParams> {
    let weights = match scheme {
        InitScheme::Gaussian { sigma } => {
            check_sigma(sigma)?;
            gaussian_matrix(outputs, inputs, sigma, rng)
        }
        InitScheme::Sparse { nonzero, sigma } => {
            check_sigma(sigma)?;
            if nonzero > inputs {
                return Err(Error::Parameter(format!(
                    "sparse init wants {nonzero} nonzero weights but fan-in is {inputs}"
                )));
            }
            let normal = Normal::new(0.0, sigma).expect("finite sigma");
            let mut w = Matrix::zeros(outputs, inputs);
            for i in 0..outputs {
                let row = w.row_mut(i);
                for j in rand::seq::index::sample(rng, inputs, nonzero) {
                    row[j] = normal.sample(rng);
                }
            }
            w
        }
    };
    Ok(LayerParams {
        weights,
        bias: vec![0.0; outputs],
    })
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::Parameter(format!(
            "init sigma must be finite and >= 0, got {sigma}"
        )));
    }
    Ok(())
}

/// Builds a network with the given unit counts (input first).
pub fn init_network(
    sizes: &[usize],
    hidden: Activation,
    output: Activation,
    scheme: InitScheme,
    rng: &mut (impl Rng + ?Sized),
) -> Result<NetworkParams> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::Parameter(format!(
            "layer sizes need at least two positive entries, got {sizes:?}"
        )));
    }
    let layers = sizes
        .windows(2)
        .map(|w| init_layer(w[0], w[1], scheme, rng))
        .collect::<Result<Vec<_>>>()?;
    NetworkParams::new(layers, hidden, output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::activation::sigmoid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_network_passes_input_through() {
        let layer = LayerParams::new(Matrix::identity(3), vec![0.0; 3]).unwrap();
        let net = NetworkParams::new(vec![layer], Activation::Linear, Activation::Linear).unwrap();
        let x = Matrix::from_rows(&[[1.0, -2.0, 0.5], [0.0, 4.0, 9.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(forward(&net, &x, None, &mut rng).unwrap().output(), &x);
    }

    #[test]
    fn full_retain_matches_plain_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = init_network(
            &[4, 5, 3],
            Activation::Sigmoid,
            Activation::Softmax,
            InitScheme::Gaussian { sigma: 0.5 },
            &mut rng,
        )
        .unwrap();
        let x = gaussian_matrix(6, 4, 1.0, &mut rng);
        let plain = forward(&net, &x, None, &mut rng).unwrap();
        let d = DropoutSpec::new(1.0, 1.0).unwrap();
        let dropped = forward(&net, &x, Some(&d), &mut rng).unwrap();
        assert_eq!(plain.activations, dropped.activations);
        assert_eq!(&net.predict_proba(&x).unwrap(), plain.output());
    }

    #[test]
    fn two_layer_sigmoid_matches_hand_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = init_network(
            &[3, 4, 2],
            Activation::Sigmoid,
            Activation::Sigmoid,
            InitScheme::Gaussian { sigma: 1.0 },
            &mut rng,
        )
        .unwrap();
        let x = [0.3, -0.7, 1.2];
        let step = |layer: &LayerParams, input: &[f64]| -> Vec<f64> {
            (0..layer.outputs())
                .map(|i| {
                    let mut s = layer.bias[i];
                    for j in 0..layer.inputs() {
                        s += layer.weights.get(i, j) * input[j];
                    }
                    sigmoid(s)
                })
                .collect()
        };
        let expected = step(&net.layers[1], &step(&net.layers[0], &x));
        let got = net.predict_proba(&Matrix::row_vector(&x)).unwrap();
        for (g, e) in got.as_slice().iter().zip(&expected) {
            assert!((g - e).abs() < 1e-14);
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = init_network(
            &[3, 2],
            Activation::Sigmoid,
            Activation::Sigmoid,
            InitScheme::Gaussian { sigma: 0.1 },
            &mut rng,
        )
        .unwrap();
        assert!(matches!(
            forward(&net, &Matrix::zeros(1, 4), None, &mut rng),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn softmax_hidden_rejected() {
        let layers = vec![LayerParams::zeros(2, 2), LayerParams::zeros(2, 2)];
        assert!(NetworkParams::new(layers, Activation::Softmax, Activation::Softmax).is_err());
    }

    #[test]
    fn gaussian_init_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let zero = init_network(
            &[5, 4],
            Activation::Sigmoid,
            Activation::Sigmoid,
            InitScheme::Gaussian { sigma: 0.0 },
            &mut rng,
        )
        .unwrap();
        assert!(zero.layers[0].weights.as_slice().iter().all(|&w| w == 0.0));

        let net = init_network(
            &[100, 10],
            Activation::Sigmoid,
            Activation::Sigmoid,
            InitScheme::Gaussian { sigma: 0.01 },
            &mut rng,
        )
        .unwrap();
        let w = net.layers[0].weights.as_slice();
        assert_eq!(w.len(), 1000);
        let mean = w.iter().sum::<f64>() / 1000.0;
        let std = (w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 999.0).sqrt();
        assert!((0.008..=0.012).contains(&std), "{std}");
        assert!(net.layers[0].bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn sparse_init_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = init_network(
            &[20, 7],
            Activation::Sigmoid,
            Activation::Sigmoid,
            InitScheme::Sparse {
                nonzero: 5,
                sigma: 1.0,
            },
            &mut rng,
        )
        .unwrap();
        for row in net.layers[0].weights.row_iter() {
            assert_eq!(row.iter().filter(|&&w| w != 0.0).count(), 5);
        }
        let full = init_network(
            &[6, 3],
            Activation::Sigmoid,
            Activation::Sigmoid,
            InitScheme::Sparse {
                nonzero: 6,
                sigma: 1.0,
            },
            &mut rng,
        )
        .unwrap();
        assert!(full.layers[0].weights.as_slice().iter().all(|&w| w != 0.0));
        let err = init_network(
            &[4, 3],
            Activation::Sigmoid,
            Activation::Sigmoid,
            InitScheme::Sparse {
                nonzero: 5,
                sigma: 1.0,
            },
            &mut rng,
        );
        assert!(matches!(err, Err(Error::Parameter(_))));
    }
}
