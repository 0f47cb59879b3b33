use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nd::tape::{Gradients, Tape, ValueId};
use crate::nd::tensor::Tensor2;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

/// Layer widths plus activations. `[4, 32, 10]` is 4 inputs, one hidden
/// ReLU layer of 32 and a linear output of 10.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl MlpSpec {
    /// ReLU hidden layers, linear output.
    pub fn relu(widths: &[usize]) -> Result<Self> {
        let spec = MlpSpec {
            widths: widths.to_vec(),
            hidden_activation: Activation::Relu,
            output_activation: Activation::Identity,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::contract(format!("an MLP needs at least two widths, got {:?}", self.widths)));
        }
        if self.widths.contains(&0) {
            return Err(Error::contract(format!("MLP widths must be >= 1, got {:?}", self.widths)));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("validated spec")
    }

    pub fn layer_count(&self) -> usize {
        self.widths.len() - 1
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layer_count() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }
}

/// One dense layer: `y = x W + b` with `W` of shape `fan_in x fan_out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Tensor2,
    pub bias: Tensor2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    pub fn zeros_like(&self) -> MlpParams {
        MlpParams {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: Tensor2::zeros(l.weight.rows(), l.weight.cols()),
                    bias: Tensor2::zeros(1, l.bias.cols()),
                })
                .collect(),
        }
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor2> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor2> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().map(Tensor2::len).sum()
    }
}

/// A network: its shape plus its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: MlpParams,
}

/// Parameter leaves of an [`Mlp`] registered on a particular tape.
#[derive(Debug, Clone)]
pub struct BoundMlp {
    ids: Vec<(ValueId, ValueId)>,
}

impl Mlp {
    /// Uniform `[-sqrt(6/fan_in), sqrt(6/fan_in)]` weights, zero biases.
    pub fn init(spec: &MlpSpec, rng: &mut Rng) -> Result<Mlp> {
        spec.validate()?;
        let layers = spec
            .widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / fan_in as f64).sqrt();
                let weight = Tensor2::from_fn(fan_in, fan_out, |_, _| rng.random_range(-bound..=bound));
                Layer { weight, bias: Tensor2::zeros(1, fan_out) }
            })
            .collect();
        Ok(Mlp { spec: spec.clone(), params: MlpParams { layers } })
    }

    /// Wraps explicit parameters after checking them against the spec.
    pub fn from_params(spec: MlpSpec, params: MlpParams) -> Result<Mlp> {
        spec.validate()?;
        if params.layers.len() != spec.layer_count() {
            return Err(Error::dim("Mlp::from_params layers", spec.layer_count(), params.layers.len()));
        }
        for (i, (l, w)) in params.layers.iter().zip(spec.widths.windows(2)).enumerate() {
            if l.weight.shape() != (w[0], w[1]) || l.bias.shape() != (1, w[1]) {
                return Err(Error::dim(
                    format!("Mlp::from_params layer {i}"),
                    format!("{}x{} weight, 1x{} bias", w[0], w[1], w[1]),
                    format!("{}x{} weight, {}x{} bias", l.weight.rows(), l.weight.cols(), l.bias.rows(), l.bias.cols()),
                ));
            }
        }
        Ok(Mlp { spec, params })
    }

    pub fn input_width(&self) -> usize {
        self.spec.input_width()
    }

    pub fn output_width(&self) -> usize {
        self.spec.output_width()
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_width() {
            return Err(Error::dim("layer 0 input", self.input_width(), cols));
        }
        Ok(())
    }

    /// Puts the parameters on `tape` as leaves.
    pub fn bind(&self, tape: &mut Tape) -> BoundMlp {
        let ids = self.params.layers.iter().map(|l| (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone()))).collect();
        BoundMlp { ids }
    }

    /// Taped forward pass through parameters previously bound with [`Mlp::bind`].
    pub fn forward(&self, bound: &BoundMlp, tape: &mut Tape, input: ValueId) -> Result<ValueId> {
        self.check_input(tape.value(input).cols())?;
        let mut h = input;
        for (i, &(w, b)) in bound.ids.iter().enumerate() {
            let z = tape.matmul(h, w).map_err(|e| Error::dim(format!("layer {i}"), "matching widths", e))?;
            let z = tape.add(z, b)?;
            h = match self.spec.activation(i) {
                Activation::Relu => tape.relu(z),
                Activation::Identity => z,
            };
        }
        Ok(h)
    }

    /// Untaped forward pass. Bit-identical to the taped one.
    pub fn predict(&self, input: &Tensor2) -> Result<Tensor2> {
        self.check_input(input.cols())?;
        let mut h = input.clone();
        for (i, layer) in self.params.layers.iter().enumerate() {
            let z = h.matmul(&layer.weight)?.add_row(&layer.bias)?;
            h = match self.spec.activation(i) {
                Activation::Relu => z.relu(),
                Activation::Identity => z,
            };
        }
        Ok(h)
    }

    /// Every layer's post-activation output, input excluded.
    pub fn activations(&self, input: &Tensor2) -> Result<Vec<Tensor2>> {
        self.check_input(input.cols())?;
        let mut out = Vec::with_capacity(self.params.layers.len());
        let mut h = input.clone();
        for (i, layer) in self.params.layers.iter().enumerate() {
            let z = h.matmul(&layer.weight)?.add_row(&layer.bias)?;
            h = match self.spec.activation(i) {
                Activation::Relu => z.relu(),
                Activation::Identity => z,
            };
            out.push(h.clone());
        }
        Ok(out)
    }

    /// Collects this network's parameter gradients from a backward pass.
    pub fn grads(&self, bound: &BoundMlp, grads: &Gradients) -> MlpParams {
        MlpParams {
            layers: self
                .params
                .layers
                .iter()
                .zip(&bound.ids)
                .map(|(l, &(w, b))| Layer {
                    weight: grads.get_or_zeros(w, &l.weight),
                    bias: grads.get_or_zeros(b, &l.bias),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn rng(seed: u64) -> Rng {
        stream(seed, Stream::ClientInit)
    }

    #[test]
    fn spec_validation() {
        assert!(MlpSpec::relu(&[3]).is_err());
        assert!(MlpSpec::relu(&[3, 0, 1]).is_err());
        assert!(MlpSpec::relu(&[3, 1]).is_ok());
    }

    #[test]
    fn init_zero_bias_and_bounded_weights() {
        let m = Mlp::init(&MlpSpec::relu(&[2, 1]).unwrap(), &mut rng(1)).unwrap();
        assert_eq!(m.params.layers[0].bias.data(), &[0.0]);

        let m = Mlp::init(&MlpSpec::relu(&[4, 3]).unwrap(), &mut rng(2)).unwrap();
        let bound = (6.0f64 / 4.0).sqrt();
        assert!(m.params.layers[0].weight.data().iter().all(|w| w.abs() <= bound));
        assert!(bound < 1.2248 && bound > 1.2247);
    }

    #[test]
    fn init_is_deterministic() {
        let spec = MlpSpec::relu(&[2, 2, 1]).unwrap();
        let a = Mlp::init(&spec, &mut rng(7)).unwrap();
        let b = Mlp::init(&spec, &mut rng(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identity_network_passes_input_through() {
        let spec = MlpSpec::relu(&[2, 2]).unwrap();
        let params = MlpParams { layers: vec![Layer { weight: Tensor2::identity(2), bias: Tensor2::zeros(1, 2) }] };
        let m = Mlp::from_params(spec, params).unwrap();
        let x = Tensor2::from_vec(1, 2, vec![3.0, -2.0]).unwrap();
        assert_eq!(m.predict(&x).unwrap().data(), &[3.0, -2.0]);
    }

    #[test]
    fn relu_kills_negative_preactivations() {
        let spec = MlpSpec::relu(&[2, 3, 1]).unwrap();
        let params = MlpParams {
            layers: vec![
                Layer { weight: Tensor2::filled(2, 3, -1.0), bias: Tensor2::filled(1, 3, -0.5) },
                Layer { weight: Tensor2::filled(3, 1, 1.0), bias: Tensor2::zeros(1, 1) },
            ],
        };
        let m = Mlp::from_params(spec, params).unwrap();
        let x = Tensor2::from_vec(2, 2, vec![1.0, 2.0, 0.5, 0.1]).unwrap();
        let acts = m.activations(&x).unwrap();
        assert!(acts[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn taped_and_plain_forward_are_bit_identical() {
        let m = Mlp::init(&MlpSpec::relu(&[3, 5, 2]).unwrap(), &mut rng(3)).unwrap();
        let x = Tensor2::from_fn(4, 3, |r, c| (r as f64 - 1.5) * 0.3 + c as f64 * 0.7);
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape);
        let xi = tape.leaf(x.clone());
        let y = m.forward(&bound, &mut tape, xi).unwrap();
        assert_eq!(tape.value(y), &m.predict(&x).unwrap());
    }

    #[test]
    fn wrong_input_width_names_the_layer() {
        let m = Mlp::init(&MlpSpec::relu(&[3, 2]).unwrap(), &mut rng(4)).unwrap();
        let err = m.predict(&Tensor2::zeros(1, 4)).unwrap_err();
        assert!(err.to_string().contains("layer 0"), "{err}");
    }
}
