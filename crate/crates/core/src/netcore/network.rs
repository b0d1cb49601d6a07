//! Layer stacks with forward/backward passes over a single sample.

use rand::Rng;

use super::checkpoint::NamedArray;
use super::layers::{Cache, Layer, LayerSpec, Param};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Sequential<T> {
    layers: Vec<Layer<T>>,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
}

impl<T: Scalar> Sequential<T> {
    /// Builds the stack, checking every shape along the way. Parameter names
    /// are `{prefix}.{layer index}.weight|bias`.
    pub fn new(specs: &[LayerSpec], input_shape: &[usize], prefix: &str, rng: &mut impl Rng) -> Result<Self> {
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let (layer, next) = Layer::build(*spec, &shape, &format!("{prefix}.{i}"), rng)?;
            layers.push(layer);
            shape = next;
        }
        Ok(Sequential {
            layers,
            input_shape: input_shape.to_vec(),
            output_shape: shape,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn param_lens(&self) -> Vec<usize> {
        self.params().iter().map(|p| p.values.len()).collect()
    }

    pub fn zero_grads(&self) -> Vec<Vec<T>> {
        self.param_lens().into_iter().map(|n| vec![T::ZERO; n]).collect()
    }

    /// Sets the weights and bias of the last fully connected layer to zero.
    pub fn zero_last_linear(&mut self) {
        if let Some(l) = self.layers.iter_mut().rev().find(|l| matches!(l, Layer::Fc { .. })) {
            for p in l.params_mut() {
                p.values.iter_mut().for_each(|v| *v = T::ZERO);
            }
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<Cache<T>>)> {
        if x.shape() != self.input_shape.as_slice() {
            return Err(Error::shape(format!(
                "network expects input {:?}, got {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let (next, cache) = layer.forward(&cur)?;
            caches.push(cache);
            cur = next;
        }
        Ok((cur, caches))
    }

    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(x)?.0)
    }

    /// Back-propagates `grad_out`, accumulating into `grads` (laid out like
    /// `params()`).
    pub fn backward(
        &self,
        caches: &[Cache<T>],
        grad_out: &Tensor<T>,
        grads: &mut [Vec<T>],
        want_input_grad: bool,
    ) -> Result<Option<Tensor<T>>> {
        if caches.len() != self.layers.len() {
            return Err(Error::shape("cache list does not match the layer stack"));
        }
        let counts: Vec<usize> = self.layers.iter().map(|l| l.params().len()).collect();
        let total: usize = counts.iter().sum();
        if grads.len() != total {
            return Err(Error::shape(format!(
                "expected {total} gradient arrays, got {}",
                grads.len()
            )));
        }
        let mut end = total;
        let mut g = grad_out.clone();
        for i in (0..self.layers.len()).rev() {
            let start = end - counts[i];
            let want = i > 0 || want_input_grad;
            let next = self.layers[i].backward(&caches[i], &g, &mut grads[start..end], want)?;
            end = start;
            match next {
                Some(t) => g = t,
                None => return Ok(None),
            }
        }
        Ok(Some(g))
    }

    pub fn cast<U: Scalar>(&self) -> Sequential<U> {
        let cast_param = |p: &Param<T>| Param {
            name: p.name.clone(),
            shape: p.shape.clone(),
            values: p.values.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        };
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv {
                    in_ch,
                    out_ch,
                    k,
                    stride,
                    pad,
                    weight,
                    bias,
                } => Layer::Conv {
                    in_ch: *in_ch,
                    out_ch: *out_ch,
                    k: *k,
                    stride: *stride,
                    pad: *pad,
                    weight: cast_param(weight),
                    bias: cast_param(bias),
                },
                Layer::Fc {
                    input,
                    output,
                    weight,
                    bias,
                } => Layer::Fc {
                    input: *input,
                    output: *output,
                    weight: cast_param(weight),
                    bias: cast_param(bias),
                },
                Layer::MaxPool(k) => Layer::MaxPool(*k),
                Layer::RoiPool { out_h, out_w } => Layer::RoiPool {
                    out_h: *out_h,
                    out_w: *out_w,
                },
                Layer::Relu => Layer::Relu,
                Layer::Sigmoid => Layer::Sigmoid,
            })
            .collect();
        Sequential {
            layers,
            input_shape: self.input_shape.clone(),
            output_shape: self.output_shape.clone(),
        }
    }

    pub fn export(&self) -> Vec<NamedArray> {
        self.params()
            .into_iter()
            .map(|p| NamedArray {
                name: p.name.clone(),
                shape: p.shape.clone(),
                values: p.values.iter().map(|v| v.to_f64() as f32).collect(),
            })
            .collect()
    }

    /// Loads parameters by name; every parameter must be present with the
    /// right shape.
    pub fn import(&mut self, arrays: &[NamedArray]) -> Result<()> {
        for p in self.params_mut() {
            let a = arrays
                .iter()
                .find(|a| a.name == p.name)
                .ok_or_else(|| Error::invalid(format!("checkpoint lacks `{}`", p.name)))?;
            if a.shape != p.shape {
                return Err(Error::shape(format!(
                    "`{}` has shape {:?} in the checkpoint, model wants {:?}",
                    p.name, a.shape, p.shape
                )));
            }
            p.values = a.values.iter().map(|&v| T::from_f64(v as f64)).collect();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn small() -> Sequential<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        Sequential::new(
            &[
                LayerSpec::Conv { out_ch: 3, k: 3, stride: 1, pad: 1 },
                LayerSpec::Relu,
                LayerSpec::MaxPool(2),
                LayerSpec::RoiPool { out_h: 2, out_w: 2 },
                LayerSpec::Fc(4),
                LayerSpec::Relu,
                LayerSpec::Fc(1),
                LayerSpec::Sigmoid,
            ],
            &[2, 8, 6],
            "net",
            &mut rng,
        )
        .unwrap()
    }

    #[test]
    fn shapes_propagate() {
        let net = small();
        assert_eq!(net.output_shape(), &[1]);
        assert_eq!(net.param_lens(), vec![54, 3, 48, 4, 4, 1]);
        assert_eq!(net.params()[0].name, "net.0.weight");
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let net = small();
        assert!(net.forward(&Tensor::zeros(&[2, 6, 8])).is_err());
    }

    #[test]
    fn zeroed_head_outputs_half() {
        let mut net = small();
        net.zero_last_linear();
        let x = Tensor::from_vec(&[2, 8, 6], (0..96).map(|v| (v as f64).sin()).collect()).unwrap();
        assert_eq!(net.predict(&x).unwrap().data(), &[0.5]);
    }

    #[test]
    fn export_import_round_trip() {
        let net = small();
        let arrays = net.export();
        let mut fresh = small().cast::<f32>();
        fresh.params_mut()[0].values.iter_mut().for_each(|v| *v = 0.0);
        fresh.import(&arrays).unwrap();
        assert_eq!(fresh.export(), arrays);
        let mut missing = arrays.clone();
        missing.pop();
        assert!(fresh.import(&missing).is_err());
    }
}
