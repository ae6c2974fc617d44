//! Minimal differentiable network core: dense and convolutional layers,
//! ReLU, max-pool, flatten, and softmax cross-entropy with explicit
//! per-layer backprop.

pub mod conv;
pub mod linalg;
pub mod loss;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::WeightTensor;

/// One layer of the fixed layer vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { in_dim: usize, out_dim: usize },
    Conv2d { in_ch: usize, out_ch: usize, kernel: usize, stride: usize },
    MaxPool { size: usize, stride: usize },
    Relu,
    Flatten,
}

impl LayerSpec {
    pub fn is_trainable(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. })
    }

    /// Output shape (without the batch dimension) given the input shape.
    pub fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Dense { in_dim, out_dim } => {
                if in_shape != [in_dim] {
                    return Err(Error::Config(format!(
                        "dense layer expects input [{}], got {:?}",
                        in_dim, in_shape
                    )));
                }
                Ok(vec![out_dim])
            }
            LayerSpec::Conv2d { in_ch, out_ch, kernel, stride } => {
                let [c, h, w] = shape3(in_shape)?;
                if c != in_ch {
                    return Err(Error::Config(format!(
                        "conv expects {} input channels, got {}",
                        in_ch, c
                    )));
                }
                let oh = conv::conv_out_dim(h, kernel, stride)?;
                let ow = conv::conv_out_dim(w, kernel, stride)?;
                Ok(vec![out_ch, oh, ow])
            }
            LayerSpec::MaxPool { size, stride } => {
                let [c, h, w] = shape3(in_shape)?;
                let oh = conv::conv_out_dim(h, size, stride)?;
                let ow = conv::conv_out_dim(w, size, stride)?;
                Ok(vec![c, oh, ow])
            }
            LayerSpec::Relu => Ok(in_shape.to_vec()),
            LayerSpec::Flatten => Ok(vec![in_shape.iter().product()]),
        }
    }
}

fn shape3(shape: &[usize]) -> Result<[usize; 3]> {
    match shape {
        [c, h, w] => Ok([*c, *h, *w]),
        other => Err(Error::Config(format!(
            "expected a (channels, h, w) input, got {:?}",
            other
        ))),
    }
}

/// Weights and bias of one trainable layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weights: WeightTensor,
    pub bias: WeightTensor,
}

/// Gradients shape-matching one trainable layer's parameters.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub d_weights: WeightTensor,
    pub d_bias: WeightTensor,
}

/// A feed-forward network: ordered layer specs plus parameters for each
/// trainable layer, in layer order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    input_shape: Vec<usize>,
    specs: Vec<LayerSpec>,
    params: Vec<LayerParams>,
}

/// Cached per-layer inputs from a forward pass, consumed by backward.
pub struct ForwardCache {
    batch: usize,
    /// inputs[i] is the flat input that layer i saw.
    inputs: Vec<Vec<f32>>,
}

impl Network {
    /// Builds a network with He-uniform seeded initialization and
    /// validates that consecutive layer shapes compose.
    pub fn new(input_shape: Vec<usize>, specs: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = input_shape.clone();
        let mut params = Vec::new();
        for spec in &specs {
            shape = spec.out_shape(&shape)?;
            if spec.is_trainable() {
                params.push(init_params(spec, &mut rng));
            }
        }
        if shape.len() != 1 {
            return Err(Error::Config(format!(
                "network must end in a flat logit vector, got shape {:?}",
                shape
            )));
        }
        Ok(Self {
            input_shape,
            specs,
            params,
        })
    }

    /// 784-300-100-10 style multilayer perceptron with ReLU between
    /// dense layers.
    pub fn mlp(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config("mlp needs at least two dims".into()));
        }
        let mut specs = Vec::new();
        for i in 0..dims.len() - 1 {
            specs.push(LayerSpec::Dense {
                in_dim: dims[i],
                out_dim: dims[i + 1],
            });
            if i + 2 < dims.len() {
                specs.push(LayerSpec::Relu);
            }
        }
        Self::new(vec![dims[0]], specs, seed)
    }

    /// LeNet-5 (Caffe variant): 20 and 50 conv filters, 500-unit fc1.
    /// 430.5K weights total. ReLU activations, 2x2 max-pool.
    pub fn lenet5(seed: u64) -> Result<Self> {
        Self::new(
            vec![1, 28, 28],
            vec![
                LayerSpec::Conv2d { in_ch: 1, out_ch: 20, kernel: 5, stride: 1 },
                LayerSpec::MaxPool { size: 2, stride: 2 },
                LayerSpec::Relu,
                LayerSpec::Conv2d { in_ch: 20, out_ch: 50, kernel: 5, stride: 1 },
                LayerSpec::MaxPool { size: 2, stride: 2 },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense { in_dim: 800, out_dim: 500 },
                LayerSpec::Relu,
                LayerSpec::Dense { in_dim: 500, out_dim: 10 },
            ],
            seed,
        )
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn trainable_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[LayerParams] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [LayerParams] {
        &mut self.params
    }

    pub fn class_count(&self) -> usize {
        let mut shape = self.input_shape.clone();
        for spec in &self.specs {
            shape = spec.out_shape(&shape).expect("validated at construction");
        }
        shape[0]
    }

    pub fn weight_numel(&self) -> usize {
        self.params.iter().map(|p| p.weights.numel()).sum()
    }

    /// Forward pass over a flat row-major batch. Returns the logits
    /// (batch x classes) and the cache needed by `backward`.
    pub fn forward(&self, input: &[f32], batch: usize) -> Result<(Vec<f32>, ForwardCache)> {
        let feat: usize = self.input_shape.iter().product();
        if input.len() != batch * feat {
            return Err(Error::Config(format!(
                "batch of {} inputs with shape {:?} needs {} values, got {}",
                batch,
                self.input_shape,
                batch * feat,
                input.len()
            )));
        }
        let mut cache = ForwardCache {
            batch,
            inputs: Vec::with_capacity(self.specs.len()),
        };
        let mut shape = self.input_shape.clone();
        let mut cur = input.to_vec();
        let mut t = 0usize;
        for spec in &self.specs {
            let next_shape = spec.out_shape(&shape)?;
            let out = self.layer_forward(spec, t, &cur, batch, &shape, &next_shape)?;
            cache.inputs.push(cur);
            cur = out;
            shape = next_shape;
            if spec.is_trainable() {
                t += 1;
            }
        }
        Ok((cur, cache))
    }

    fn layer_forward(
        &self,
        spec: &LayerSpec,
        trainable_idx: usize,
        input: &[f32],
        batch: usize,
        in_shape: &[usize],
        out_shape: &[usize],
    ) -> Result<Vec<f32>> {
        match *spec {
            LayerSpec::Dense { in_dim, out_dim } => {
                let p = &self.params[trainable_idx];
                let mut out = vec![0.0f32; batch * out_dim];
                linalg::gemm(batch, in_dim, out_dim, input, p.weights.data(), &mut out);
                let bias = p.bias.data();
                for row in out.chunks_mut(out_dim) {
                    for (v, &b) in row.iter_mut().zip(bias) {
                        *v += b;
                    }
                }
                Ok(out)
            }
            LayerSpec::Conv2d { in_ch, out_ch, kernel, stride } => {
                let p = &self.params[trainable_idx];
                let [_, h, w] = shape3(in_shape)?;
                conv::conv2d_forward(
                    input,
                    batch,
                    in_ch,
                    h,
                    w,
                    p.weights.data(),
                    out_ch,
                    kernel,
                    kernel,
                    stride,
                    p.bias.data(),
                )
            }
            LayerSpec::MaxPool { size, stride } => {
                let [c, h, w] = shape3(in_shape)?;
                conv::maxpool_forward(input, batch, c, h, w, size, stride)
            }
            LayerSpec::Relu => Ok(input.iter().map(|&v| v.max(0.0)).collect()),
            LayerSpec::Flatten => {
                let _ = out_shape;
                Ok(input.to_vec())
            }
        }
    }

    /// Mean softmax cross-entropy and per-trainable-layer gradients.
    pub fn loss_and_grads(
        &self,
        input: &[f32],
        batch: usize,
        labels: &[u8],
    ) -> Result<(f64, Vec<LayerGrads>)> {
        if labels.len() != batch {
            return Err(Error::Input(format!(
                "expected {} labels, got {}",
                batch,
                labels.len()
            )));
        }
        let (logits, cache) = self.forward(input, batch)?;
        let classes = self.class_count();
        let (loss, d_logits) = loss::softmax_cross_entropy(&logits, labels, classes)?;
        let grads = self.backward(&cache, d_logits)?;
        Ok((loss, grads))
    }

    /// Backward pass from a gradient on the logits.
    pub fn backward(&self, cache: &ForwardCache, d_logits: Vec<f32>) -> Result<Vec<LayerGrads>> {
        let batch = cache.batch;
        // Per-layer input shapes, replayed forward.
        let mut shapes = Vec::with_capacity(self.specs.len() + 1);
        let mut shape = self.input_shape.clone();
        shapes.push(shape.clone());
        for spec in &self.specs {
            shape = spec.out_shape(&shape)?;
            shapes.push(shape.clone());
        }

        let mut grads: Vec<Option<LayerGrads>> = (0..self.params.len()).map(|_| None).collect();
        let mut d_cur = d_logits;
        let mut t = self.params.len();
        for (i, spec) in self.specs.iter().enumerate().rev() {
            if spec.is_trainable() {
                t -= 1;
            }
            let x = &cache.inputs[i];
            let in_shape = &shapes[i];
            d_cur = match *spec {
                LayerSpec::Dense { in_dim, out_dim } => {
                    let p = &self.params[t];
                    let mut dw = vec![0.0f32; in_dim * out_dim];
                    linalg::gemm_at_b(in_dim, batch, out_dim, x, &d_cur, &mut dw);
                    let mut db = vec![0.0f32; out_dim];
                    for row in d_cur.chunks(out_dim) {
                        for (b, &g) in db.iter_mut().zip(row) {
                            *b += g;
                        }
                    }
                    let mut dx = vec![0.0f32; batch * in_dim];
                    linalg::gemm_a_bt(batch, out_dim, in_dim, &d_cur, p.weights.data(), &mut dx);
                    grads[t] = Some(LayerGrads {
                        d_weights: WeightTensor::new(vec![in_dim, out_dim], dw)?,
                        d_bias: WeightTensor::new(vec![out_dim], db)?,
                    });
                    dx
                }
                LayerSpec::Conv2d { in_ch, out_ch, kernel, stride } => {
                    let p = &self.params[t];
                    let [_, h, w] = shape3(in_shape)?;
                    let (dx, df, db) = conv::conv2d_backward(
                        x,
                        batch,
                        in_ch,
                        h,
                        w,
                        p.weights.data(),
                        out_ch,
                        kernel,
                        kernel,
                        stride,
                        &d_cur,
                    )?;
                    grads[t] = Some(LayerGrads {
                        d_weights: WeightTensor::new(
                            vec![out_ch, in_ch, kernel, kernel],
                            df,
                        )?,
                        d_bias: WeightTensor::new(vec![out_ch], db)?,
                    });
                    dx
                }
                LayerSpec::MaxPool { size, stride } => {
                    let [c, h, w] = shape3(in_shape)?;
                    conv::maxpool_backward(x, batch, c, h, w, size, stride, &d_cur)?
                }
                LayerSpec::Relu => x
                    .iter()
                    .zip(&d_cur)
                    .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                    .collect(),
                LayerSpec::Flatten => d_cur,
            };
        }
        Ok(grads.into_iter().map(|g| g.expect("all layers visited")).collect())
    }

    /// Classification accuracy over a flat image array.
    pub fn accuracy(&self, images: &[f32], labels: &[u8], batch_size: usize) -> Result<f64> {
        let feat: usize = self.input_shape.iter().product();
        let n = labels.len();
        let classes = self.class_count();
        let mut correct = 0usize;
        let mut start = 0usize;
        while start < n {
            let b = batch_size.min(n - start);
            let slice = &images[start * feat..(start + b) * feat];
            let (logits, _) = self.forward(slice, b)?;
            let preds = loss::argmax_rows(&logits, classes);
            for (p, &l) in preds.iter().zip(&labels[start..start + b]) {
                if *p == l as usize {
                    correct += 1;
                }
            }
            start += b;
        }
        Ok(correct as f64 / n as f64)
    }
}

fn init_params(spec: &LayerSpec, rng: &mut ChaCha8Rng) -> LayerParams {
    match *spec {
        LayerSpec::Dense { in_dim, out_dim } => {
            let limit = (6.0 / in_dim as f32).sqrt();
            let data = (0..in_dim * out_dim)
                .map(|_| rng.random_range(-limit..limit))
                .collect();
            LayerParams {
                weights: WeightTensor::new(vec![in_dim, out_dim], data).unwrap(),
                bias: WeightTensor::zeros(vec![out_dim]),
            }
        }
        LayerSpec::Conv2d { in_ch, out_ch, kernel, .. } => {
            let fan_in = (in_ch * kernel * kernel) as f32;
            let limit = (6.0 / fan_in).sqrt();
            let data = (0..out_ch * in_ch * kernel * kernel)
                .map(|_| rng.random_range(-limit..limit))
                .collect();
            LayerParams {
                weights: WeightTensor::new(vec![out_ch, in_ch, kernel, kernel], data).unwrap(),
                bias: WeightTensor::zeros(vec![out_ch]),
            }
        }
        _ => unreachable!("only trainable layers carry params"),
    }
}
