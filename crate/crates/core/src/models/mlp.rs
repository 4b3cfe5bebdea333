//! Multi-layer perceptron split into consecutive pipeline stages.
//!
//! Parameters of a stage live in one flat slice so the optimizers can treat
//! every worker uniformly. Each layer contributes its weight matrix
//! (`input × output`, row-major) followed by its bias.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngStream, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

impl LayerShape {
    pub fn param_count(&self) -> usize {
        self.input * self.output + self.output
    }
}

/// Consecutive block of layers owned by one pipeline stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageSpec {
    layers: Vec<LayerShape>,
}

impl StageSpec {
    pub fn new(layers: Vec<LayerShape>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidParameter("a stage needs at least one layer".into()));
        }
        if let Some(w) = layers.windows(2).find(|w| w[0].output != w[1].input) {
            return Err(Error::shape(
                format!("layer input {}", w[0].output),
                format!("layer input {}", w[1].input),
            ));
        }
        Ok(StageSpec { layers })
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerShape::param_count).sum()
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::shape(
                format!("{} stage parameters", self.param_count()),
                format!("{} parameters", params.len()),
            ));
        }
        Ok(())
    }

    /// Runs the stage on a batch (`samples × features`).
    pub fn forward(&self, params: &[f64], input: &Matrix) -> Result<(Matrix, StageActivations)> {
        self.check_params(params)?;
        if input.cols() != self.input_dim() {
            return Err(Error::shape(
                format!("{} input features", self.input_dim()),
                format!("{} features", input.cols()),
            ));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut h = input.clone();
        let mut offset = 0;
        for layer in &self.layers {
            let (w, b) = split_layer(params, offset, layer);
            offset += layer.param_count();
            let mut z = matmul_slice(&h, w, layer.output);
            for r in 0..z.rows() {
                for (zv, bv) in z.data_mut()[r * layer.output..(r + 1) * layer.output]
                    .iter_mut()
                    .zip(b)
                {
                    *zv += bv;
                }
            }
            let o = match layer.activation {
                Activation::Tanh => {
                    let mut o = z.clone();
                    o.data_mut().iter_mut().for_each(|v| *v = v.tanh());
                    o
                }
                Activation::Identity => z.clone(),
            };
            inputs.push(h);
            pre.push(z);
            h = o.clone();
            outputs.push(o);
        }
        Ok((
            h,
            StageActivations {
                inputs,
                pre_activations: pre,
                outputs,
            },
        ))
    }

    /// Reverse-mode pass through the stage. Consumes the forward cache.
    pub fn backward(
        &self,
        params: &[f64],
        cache: StageActivations,
        grad_out: &Matrix,
    ) -> Result<(Matrix, Vector)> {
        self.check_params(params)?;
        let n = self.layers.len();
        if cache.inputs.len() != n || cache.outputs.len() != n || cache.pre_activations.len() != n {
            return Err(Error::State(format!(
                "activation cache holds {} layers, stage has {n}",
                cache.inputs.len()
            )));
        }
        for (layer, (h, o)) in self.layers.iter().zip(cache.inputs.iter().zip(&cache.outputs)) {
            if h.cols() != layer.input || o.cols() != layer.output || h.rows() != o.rows() {
                return Err(Error::State("activation cache does not match this stage".into()));
            }
        }
        let batch = cache.inputs[0].rows();
        if grad_out.rows() != batch || grad_out.cols() != self.output_dim() {
            return Err(Error::shape(
                format!("{batch}x{} output gradient", self.output_dim()),
                format!("{}x{}", grad_out.rows(), grad_out.cols()),
            ));
        }

        let mut grads = vec![0.0; self.param_count()];
        let mut offsets = Vec::with_capacity(n);
        let mut acc = 0;
        for layer in &self.layers {
            offsets.push(acc);
            acc += layer.param_count();
        }
        let mut g = grad_out.clone();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let o = &cache.outputs[idx];
            let h = &cache.inputs[idx];
            if layer.activation == Activation::Tanh {
                for (gv, ov) in g.data_mut().iter_mut().zip(o.data()) {
                    *gv *= 1.0 - ov * ov;
                }
            }
            let (w, _) = split_layer(params, offsets[idx], layer);
            let off = offsets[idx];
            let (gw, gb) = grads[off..off + layer.param_count()].split_at_mut(layer.input * layer.output);
            // dW = hᵀ g, db = Σ_rows g
            for r in 0..batch {
                let hr = h.row(r);
                let gr = g.row(r);
                for (i, hv) in hr.iter().enumerate() {
                    if *hv == 0.0 {
                        continue;
                    }
                    let dst = &mut gw[i * layer.output..(i + 1) * layer.output];
                    for (d, gv) in dst.iter_mut().zip(gr) {
                        *d += hv * gv;
                    }
                }
                for (d, gv) in gb.iter_mut().zip(gr) {
                    *d += gv;
                }
            }
            // g_in = g Wᵀ
            let mut gin = Matrix::zeros(batch, layer.input);
            for r in 0..batch {
                let gr = g.row(r);
                let dst = &mut gin.data_mut()[r * layer.input..(r + 1) * layer.input];
                for (i, d) in dst.iter_mut().enumerate() {
                    let wrow = &w[i * layer.output..(i + 1) * layer.output];
                    *d = wrow.iter().zip(gr).map(|(a, b)| a * b).sum();
                }
            }
            g = gin;
        }
        Ok((g, Vector::from(grads)))
    }
}

fn split_layer<'a>(params: &'a [f64], offset: usize, layer: &LayerShape) -> (&'a [f64], &'a [f64]) {
    let w_len = layer.input * layer.output;
    let w = &params[offset..offset + w_len];
    let b = &params[offset + w_len..offset + layer.param_count()];
    (w, b)
}

// h (batch × in) times W (in × out, row-major slice)
fn matmul_slice(h: &Matrix, w: &[f64], out: usize) -> Matrix {
    let mut z = Matrix::zeros(h.rows(), out);
    for r in 0..h.rows() {
        let zr = &mut z.data_mut()[r * out..(r + 1) * out];
        for (i, hv) in h.row(r).iter().enumerate() {
            if *hv == 0.0 {
                continue;
            }
            for (zv, wv) in zr.iter_mut().zip(&w[i * out..(i + 1) * out]) {
                *zv += hv * wv;
            }
        }
    }
    z
}

/// Per-layer cache from one forward call, consumed by the matching backward.
#[derive(Debug, Clone)]
pub struct StageActivations {
    inputs: Vec<Matrix>,
    pre_activations: Vec<Matrix>,
    outputs: Vec<Matrix>,
}

impl StageActivations {
    pub fn pre_activations(&self) -> &[Matrix] {
        &self.pre_activations
    }

    pub fn outputs(&self) -> &[Matrix] {
        &self.outputs
    }
}

/// A tanh MLP (identity on the last layer) split into pipeline stages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagedMlp {
    stages: Vec<StageSpec>,
}

impl StagedMlp {
    /// `dims` lists layer widths from input to output; `layers_per_stage`
    /// partitions the `dims.len() − 1` layers into consecutive stages.
    pub fn new(dims: &[usize], layers_per_stage: &[usize]) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidParameter(
                "an MLP needs at least two positive layer widths".into(),
            ));
        }
        let n_layers = dims.len() - 1;
        if layers_per_stage.is_empty()
            || layers_per_stage.contains(&0)
            || layers_per_stage.iter().sum::<usize>() != n_layers
        {
            return Err(Error::InvalidParameter(format!(
                "stage sizes {layers_per_stage:?} do not partition {n_layers} layers"
            )));
        }
        let layers: Vec<LayerShape> = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| LayerShape {
                input: w[0],
                output: w[1],
                activation: if i + 1 == n_layers {
                    Activation::Identity
                } else {
                    Activation::Tanh
                },
            })
            .collect();
        let mut stages = Vec::with_capacity(layers_per_stage.len());
        let mut start = 0;
        for &count in layers_per_stage {
            stages.push(StageSpec::new(layers[start..start + count].to_vec())?);
            start += count;
        }
        Ok(StagedMlp { stages })
    }

    /// Splits the layers as evenly as possible across `num_stages`.
    pub fn evenly(dims: &[usize], num_stages: usize) -> Result<Self> {
        let n_layers = dims.len().saturating_sub(1);
        if num_stages == 0 || num_stages > n_layers {
            return Err(Error::InvalidParameter(format!(
                "cannot split {n_layers} layers into {num_stages} stages"
            )));
        }
        let sizes: Vec<usize> = (0..num_stages)
            .map(|s| n_layers / num_stages + usize::from(s < n_layers % num_stages))
            .collect();
        StagedMlp::new(dims, &sizes)
    }

    pub fn stages(&self) -> &[StageSpec] {
        &self.stages
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn input_dim(&self) -> usize {
        self.stages[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.stages[self.stages.len() - 1].output_dim()
    }

    /// Per-stage parameters: weights `N(0, 1/fan_in)`, zero biases.
    pub fn init_params(&self, rng: &mut RngStream) -> Vec<Vector> {
        self.stages
            .iter()
            .map(|stage| {
                let mut p = Vec::with_capacity(stage.param_count());
                for layer in stage.layers() {
                    let std = (1.0 / layer.input as f64).sqrt();
                    p.extend((0..layer.input * layer.output).map(|_| std * rng.standard_normal()));
                    p.extend(std::iter::repeat_n(0.0, layer.output));
                }
                Vector::from(p)
            })
            .collect()
    }

    /// Full forward pass through every stage in order.
    pub fn forward(&self, params: &[Vector], input: &Matrix) -> Result<Matrix> {
        if params.len() != self.stages.len() {
            return Err(Error::shape(
                format!("{} stage parameter sets", self.stages.len()),
                params.len(),
            ));
        }
        let mut h = input.clone();
        for (stage, p) in self.stages.iter().zip(params) {
            h = stage.forward(p, &h)?.0;
        }
        Ok(h)
    }
}

/// Mean squared error over every entry, with its gradient w.r.t. `pred`.
pub fn mse_loss(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    if pred.rows() != target.rows() || pred.cols() != target.cols() {
        return Err(Error::shape(
            format!("{}x{} targets", pred.rows(), pred.cols()),
            format!("{}x{}", target.rows(), target.cols()),
        ));
    }
    let n = pred.data().len() as f64;
    let diff = pred.sub(target)?;
    let loss = diff.data().iter().map(|v| v * v).sum::<f64>() / n;
    Ok((loss, diff.scaled(2.0 / n)))
}
