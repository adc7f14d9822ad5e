//! Parameter storage, initialization and the AdamW optimizer.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecayClass {
    Decayed,
    Excluded,
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub class: DecayClass,
}

/// Named parameters in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, class: DecayClass) -> Result<usize> {
        let name = name.into();
        if self.index_of(&name).is_some() {
            return Err(Error::config(format!("duplicate parameter '{name}'")));
        }
        self.params.push(Param { name, value, class });
        Ok(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn get(&self, i: usize) -> &Param {
        &self.params[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.params[i].value)
    }

    /// Replaces a parameter value, keeping its shape.
    pub fn set(&mut self, i: usize, value: Tensor) -> Result<()> {
        let p = &mut self.params[i];
        if p.value.shape() != value.shape() {
            return Err(Error::dim(format!(
                "parameter '{}' has shape {:?}, got {:?}",
                p.name,
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    /// Total number of scalar entries.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Registers every parameter as a gradient-requiring leaf.
    pub fn attach(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.value.clone(), true)).collect()
    }

    /// Gradients for the handles returned by [`ParamSet::attach`].
    pub fn collect_grads(&self, tape: &Tape, vars: &[Var]) -> Vec<Option<Tensor>> {
        vars.iter().map(|&v| tape.grad(v)).collect()
    }
}

/// Names split by decay class.
pub fn partition_decay(params: &ParamSet) -> (Vec<String>, Vec<String>) {
    let mut decayed = Vec::new();
    let mut excluded = Vec::new();
    for p in params.iter() {
        match p.class {
            DecayClass::Decayed => decayed.push(p.name.clone()),
            DecayClass::Excluded => excluded.push(p.name.clone()),
        }
    }
    (decayed, excluded)
}

/// A layer whose weights are drawn by [`init_layer`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    /// `x · W + b` with `W: [inputs, outputs]`.
    Linear { inputs: usize, outputs: usize },
    /// `W: [c_out, c_in, *kernel]`.
    Conv {
        c_in: usize,
        c_out: usize,
        kernel: Vec<usize>,
    },
}

impl LayerSpec {
    pub fn fan_in(&self) -> usize {
        match self {
            LayerSpec::Linear { inputs, .. } => *inputs,
            LayerSpec::Conv { c_in, kernel, .. } => c_in * kernel.iter().product::<usize>(),
        }
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        match self {
            LayerSpec::Linear { inputs, outputs } => vec![*inputs, *outputs],
            LayerSpec::Conv { c_in, c_out, kernel } => {
                let mut s = vec![*c_out, *c_in];
                s.extend_from_slice(kernel);
                s
            }
        }
    }

    pub fn bias_len(&self) -> usize {
        match self {
            LayerSpec::Linear { outputs, .. } => *outputs,
            LayerSpec::Conv { c_out, .. } => *c_out,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight_shape().iter().product::<usize>() + self.bias_len()
    }
}

/// Adds `<prefix>.weight` (decayed, Uniform(±1/√fan_in)) and `<prefix>.bias`
/// (excluded, zero) to `params`. Returns their indices.
pub fn init_layer(params: &mut ParamSet, prefix: &str, spec: &LayerSpec, rng: &mut Rng) -> Result<(usize, usize)> {
    let w = draw_weight(spec, rng)?;
    let wi = params.insert(format!("{prefix}.weight"), w, DecayClass::Decayed)?;
    let bi = params.insert(
        format!("{prefix}.bias"),
        Tensor::zeros(&[spec.bias_len()])?,
        DecayClass::Excluded,
    )?;
    Ok((wi, bi))
}

fn draw_weight(spec: &LayerSpec, rng: &mut Rng) -> Result<Tensor> {
    let fan_in = spec.fan_in();
    if fan_in == 0 {
        return Err(Error::config(format!("layer {spec:?} has zero fan-in")));
    }
    let bound = 1.0 / (fan_in as f64).sqrt();
    let shape = spec.weight_shape();
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|_| rng.uniform_range(-bound, bound)).collect();
    Tensor::new(&shape, w)
}

/// Single-layer parameter set (`weight`, `bias`) from stream 0 of `seed`.
pub fn init_params(spec: &LayerSpec, seed: u64) -> Result<ParamSet> {
    let mut params = ParamSet::new();
    let w = draw_weight(spec, &mut Rng::new(seed, 0))?;
    params.insert("weight", w, DecayClass::Decayed)?;
    params.insert("bias", Tensor::zeros(&[spec.bias_len()])?, DecayClass::Excluded)?;
    Ok(params)
}

/// Adds the fusion scale `alpha = 1`, excluded from decay.
pub fn init_alpha(params: &mut ParamSet, name: &str) -> Result<usize> {
    params.insert(name, Tensor::scalar(1.0), DecayClass::Excluded)
}

#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &ParamSet) -> Self {
        let zeros = |p: &Param| vec![0.0; p.value.len()];
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
        }
    }

    /// One decoupled-decay Adam step. `grads` is aligned with `params`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Option<Tensor>], lr: f64, wd: f64) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::contract(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        if !(lr >= 0.0 && wd >= 0.0) {
            return Err(Error::contract(format!("invalid lr {lr} or weight decay {wd}")));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.is_none() {
                return Err(Error::contract(format!(
                    "missing gradient for '{}'",
                    params.get(i).name
                )));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, g) in grads.iter().enumerate() {
            let g = g.as_ref().unwrap();
            let p = params.get(i);
            if g.len() != p.value.len() {
                return Err(Error::dim(format!("gradient for '{}' has wrong size", p.name)));
            }
            let decay = match p.class {
                DecayClass::Decayed => 1.0 - lr * wd,
                DecayClass::Excluded => 1.0,
            };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let mut theta = p.value.to_vec();
            for j in 0..theta.len() {
                let gj = g.data()[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                theta[j] = theta[j] * decay - lr * mhat / (vhat.sqrt() + self.eps);
            }
            let shape = p.value.shape().to_vec();
            params.set(i, Tensor::new(&shape, theta)?)?;
        }
        Ok(())
    }
}
