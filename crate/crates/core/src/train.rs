//! Training protocol: 9:1 split, per-component normalisation, the
//! multi-field relative ℓ2 loss on the physical scale, AdamW training and
//! test evaluation.

use std::time::Instant;

use crate::autodiff::{Tape, Var};
use crate::datagen::{BenchmarkId, BenchmarkSpec};
use crate::dataio::{Component, Metadata, NodfFile, Role};
use crate::error::{Error, Result};
use crate::models::{Ablation, InputSpec, Model, ModelKind, ModelSpec, Preset, Widths};
use crate::nn_optim::AdamW;
use crate::rng::Rng;
use crate::solvers::{Grid, Mesh};
use crate::tensor::Tensor;

pub const SHUFFLE_STREAM: u64 = 2;
pub const SPLIT_STREAM: u64 = 3;
pub const LOSS_EPS: f64 = 1e-12;
const MIN_STD: f64 = 1e-12;
const EVAL_BATCH: usize = 64;
const PARAM_PREFIX: &str = "param:";

/// Per-sample arrays of one named component.
#[derive(Clone, Debug)]
pub struct FieldData {
    pub name: String,
    pub len: usize,
    pub data: Vec<f64>,
}

impl FieldData {
    pub fn sample(&self, i: usize) -> &[f64] {
        &self.data[i * self.len..(i + 1) * self.len]
    }
}

/// A generated dataset viewed as model inputs, targets and output geometry.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub spec: BenchmarkSpec,
    pub n: usize,
    pub inputs: Vec<FieldData>,
    pub outputs: Vec<FieldData>,
    /// Spatial shape of one output field; empty for mesh outputs.
    pub grid: Vec<usize>,
    /// Query coordinates of every output entry, `[field_len, dim]`.
    pub coords: Tensor,
}

impl Dataset {
    pub fn from_nodf(file: &NodfFile) -> Result<Dataset> {
        let spec = BenchmarkSpec::from_metadata(&file.metadata)?;
        let n = file
            .n_samples()
            .ok_or_else(|| Error::format("dataset has no per-sample components"))?;
        let take = |names: &[&str], role: Role| -> Result<Vec<FieldData>> {
            names
                .iter()
                .map(|name| {
                    let c = file.component(name)?;
                    if c.role != role {
                        return Err(Error::format(format!("component '{name}' has the wrong role")));
                    }
                    Ok(FieldData {
                        name: name.to_string(),
                        len: c.sample_len(),
                        data: c.as_f64()?.to_vec(),
                    })
                })
                .collect()
        };
        let inputs = take(spec.id.inputs(), Role::Input)?;
        let outputs = take(spec.id.outputs(), Role::Output)?;
        let field_len = outputs[0].len;
        if outputs.iter().any(|o| o.len != field_len) {
            return Err(Error::format("output fields differ in size"));
        }
        let (grid, coords) = output_geometry(&spec, file, field_len)?;
        Ok(Dataset {
            spec,
            n,
            inputs,
            outputs,
            grid,
            coords,
        })
    }

    pub fn field_len(&self) -> usize {
        self.outputs[0].len
    }

    /// Model spec matching this dataset. `preset: None` picks the default
    /// for the benchmark.
    pub fn model_spec(&self, kind: ModelKind, preset: Option<Preset>, ablation: Ablation, widths: Widths) -> ModelSpec {
        let preset = preset.unwrap_or_else(|| default_preset(self.spec.id, kind));
        let inputs = self
            .inputs
            .iter()
            .map(|f| {
                let side = (f.len as f64).sqrt().round() as usize;
                let is_field = matches!(f.name.as_str(), "f" | "a" | "w0") && side * side == f.len;
                if is_field && kind == ModelKind::Lnfno {
                    InputSpec::field(&f.name, side)
                } else {
                    InputSpec::trace(&f.name, f.len)
                }
            })
            .collect();
        ModelSpec {
            kind,
            preset,
            ablation,
            inputs,
            outputs: self.outputs.iter().map(|o| o.name.clone()).collect(),
            field_len: self.field_len(),
            grid: self.grid.clone(),
            coord_dim: self.coords.shape()[1],
            widths,
        }
    }
}

pub fn default_preset(id: BenchmarkId, kind: ModelKind) -> Preset {
    match (kind, id) {
        (ModelKind::DeepOnet, BenchmarkId::PbSource) => Preset::Miso,
        (ModelKind::DeepOnet, BenchmarkId::Pnp) => Preset::Mimo,
        (ModelKind::DeepOnet, _) => Preset::Siso,
        (_, BenchmarkId::PbSource | BenchmarkId::DarcySmooth | BenchmarkId::Ns) => Preset::B,
        (_, BenchmarkId::PbFem) => Preset::C,
        (_, BenchmarkId::Pnp) => Preset::D,
        (_, BenchmarkId::Pb3d) => Preset::E,
        _ => Preset::A,
    }
}

fn output_geometry(spec: &BenchmarkSpec, file: &NodfFile, field_len: usize) -> Result<(Vec<usize>, Tensor)> {
    let (grid, coords): (Vec<usize>, Vec<Vec<f64>>) = match spec.id {
        BenchmarkId::Burgers => {
            let (nx, nt) = (spec.res, spec.n_t);
            let c = (0..nx * nt)
                .map(|i| vec![(i / nt) as f64 / nx as f64, ((i % nt) + 1) as f64 / nt as f64])
                .collect();
            (vec![nx, nt], c)
        }
        BenchmarkId::Ns => {
            let (n, nt) = (spec.res, spec.n_t);
            let c = (0..n * n * nt)
                .map(|i| {
                    let p = i / nt;
                    vec![
                        (p % n) as f64 / n as f64,
                        (p / n) as f64 / n as f64,
                        ((i % nt) + 1) as f64 / nt as f64,
                    ]
                })
                .collect();
            (vec![n, n, nt], c)
        }
        BenchmarkId::PbFem => {
            let text = std::str::from_utf8(file.component("mesh")?.as_bytes()?)
                .map_err(|_| Error::format("mesh blob is not UTF-8"))?;
            let mesh = Mesh::parse(text)?;
            (Vec::new(), mesh.nodes.iter().map(|p| p.to_vec()).collect())
        }
        id => {
            let g = if id == BenchmarkId::Pb3d {
                Grid::cube(spec.res)?
            } else {
                Grid::square(spec.res)?
            };
            let c = (0..g.n_nodes()).map(|i| g.coords(i)[..g.dim].to_vec()).collect();
            (vec![spec.res; g.dim], c)
        }
    };
    if coords.len() != field_len {
        return Err(Error::format(format!(
            "output fields hold {field_len} values but the geometry has {}",
            coords.len()
        )));
    }
    let dim = coords[0].len();
    Ok((grid, Tensor::new(&[field_len, dim], coords.concat())?))
}

/// Deterministic 9:1 split of `n` sample indices.
pub fn split_indices(n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 10 {
        return Err(Error::contract(format!("need at least 10 samples to split, got {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    Rng::new(seed, SPLIT_STREAM).shuffle(&mut idx);
    let n_train = n * 9 / 10;
    let test = idx.split_off(n_train);
    Ok((idx, test))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
}

impl Stats {
    fn fit<'a>(values: impl Iterator<Item = &'a [f64]> + Clone) -> Stats {
        let count: usize = values.clone().map(|v| v.len()).sum();
        let mean = values.clone().flatten().sum::<f64>() / count as f64;
        let var = values.flatten().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count as f64;
        let std = var.sqrt();
        Stats {
            mean,
            std: if std < MIN_STD { 1.0 } else { std },
        }
    }
}

/// Global mean and standard deviation per named component.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Normalizer {
    pub inputs: Vec<(String, Stats)>,
    pub outputs: Vec<(String, Stats)>,
}

impl Normalizer {
    /// Fits on the samples listed in `train` only.
    pub fn fit(ds: &Dataset, train: &[usize]) -> Normalizer {
        let fit_all = |fields: &[FieldData]| {
            fields
                .iter()
                .map(|f| (f.name.clone(), Stats::fit(train.iter().map(|&i| f.sample(i)))))
                .collect()
        };
        Normalizer {
            inputs: fit_all(&ds.inputs),
            outputs: fit_all(&ds.outputs),
        }
    }

    pub fn stats(&self, name: &str) -> Result<Stats> {
        self.inputs
            .iter()
            .chain(&self.outputs)
            .find(|(n, _)| n == name)
            .map(|(_, s)| *s)
            .ok_or_else(|| Error::contract(format!("normalizer has no statistics for '{name}'")))
    }

    pub fn normalize(&self, name: &str, x: &[f64]) -> Result<Vec<f64>> {
        let s = self.stats(name)?;
        Ok(x.iter().map(|v| (v - s.mean) / s.std).collect())
    }

    pub fn denormalize(&self, name: &str, x: &[f64]) -> Result<Vec<f64>> {
        let s = self.stats(name)?;
        Ok(x.iter().map(|v| v * s.std + s.mean).collect())
    }

    pub fn write_metadata(&self, m: &mut Metadata) {
        for (prefix, list) in [("norm.input.", &self.inputs), ("norm.output.", &self.outputs)] {
            for (name, s) in list {
                m.set(format!("{prefix}{name}"), format!("{:?},{:?}", s.mean, s.std));
            }
        }
    }

    pub fn from_metadata(m: &Metadata, inputs: &[String], outputs: &[String]) -> Result<Normalizer> {
        let read = |prefix: &str, names: &[String]| -> Result<Vec<(String, Stats)>> {
            names
                .iter()
                .map(|name| {
                    let key = format!("{prefix}{name}");
                    let v = m.require(&key)?;
                    let parsed = v
                        .split_once(',')
                        .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)));
                    let (mean, std) = parsed.ok_or_else(|| Error::format(format!("bad statistics '{v}' for {key}")))?;
                    Ok((name.clone(), Stats { mean, std }))
                })
                .collect()
        };
        Ok(Normalizer {
            inputs: read("norm.input.", inputs)?,
            outputs: read("norm.output.", outputs)?,
        })
    }
}

/// Mean over samples and fields of `‖ŷ − y‖ / (‖y‖ + eps)`. `pred` and
/// `target` are `[B, C·L]` with fields stored consecutively.
pub fn loss_multifield(tape: &mut Tape, pred: Var, target: &Tensor, n_fields: usize, eps: f64) -> Result<Var> {
    let shape = tape.value(pred).shape().to_vec();
    if shape != target.shape() || shape.len() != 2 || n_fields == 0 || shape[1] % n_fields != 0 {
        return Err(Error::dim(format!(
            "prediction {shape:?} and target {:?} do not form {n_fields} fields",
            target.shape()
        )));
    }
    let (b, d) = (shape[0], shape[1]);
    let seg = vec![d / n_fields; n_fields];
    let inv: Vec<f64> = target
        .data()
        .chunks_exact(d / n_fields)
        .map(|f| 1.0 / (f.iter().map(|v| v * v).sum::<f64>().sqrt() + eps))
        .collect();
    let t = tape.constant(target.clone());
    let diff = tape.sub(pred, t)?;
    let norms = tape.segment_norms(diff, &seg)?;
    let w = tape.constant(Tensor::new(&[b, n_fields], inv)?);
    let rel = tape.mul(norms, w)?;
    let total = tape.sum(rel);
    let scale = tape.constant(Tensor::scalar(1.0 / (b * n_fields) as f64));
    tape.mul(total, scale)
}

/// Relative ℓ2 errors per field of one sample on the physical scale.
pub fn rel_l2_per_field(pred: &[f64], target: &[f64], n_fields: usize) -> Vec<f64> {
    let l = target.len() / n_fields;
    pred.chunks_exact(l)
        .zip(target.chunks_exact(l))
        .map(|(p, t)| {
            let num = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let den = t.iter().map(|v| v * v).sum::<f64>().sqrt();
            num / (den + LOSS_EPS)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub weight_decay: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            lr: 1e-3,
            batch: 20,
            weight_decay: 1e-4,
            eps: LOSS_EPS,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn deeponet() -> Self {
        TrainConfig {
            epochs: 5000,
            lr: 1e-4,
            ..TrainConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalMetrics {
    pub fields: Vec<String>,
    pub per_field: Vec<f64>,
    pub mean: f64,
}

#[derive(Clone, Debug)]
pub struct Metrics {
    pub history: Vec<f64>,
    pub eval: EvalMetrics,
    pub wall_seconds: f64,
}

impl Metrics {
    pub fn history_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss\n");
        for (e, l) in self.history.iter().enumerate() {
            s.push_str(&format!("{},{:e}\n", e + 1, l));
        }
        s
    }

    pub fn final_csv(&self) -> String {
        let mut s = String::from("test_rel_l2");
        for f in &self.eval.fields {
            s.push_str(&format!(",{f}"));
        }
        s.push_str(",wall_seconds\n");
        s.push_str(&format!("{:e}", self.eval.mean));
        for v in &self.eval.per_field {
            s.push_str(&format!(",{v:e}"));
        }
        s.push_str(&format!(",{:.3}\n", self.wall_seconds));
        s
    }
}

/// Normalised inputs of the samples `idx`, one `[B, len]` tensor per input.
fn batch_inputs(ds: &Dataset, norm: &Normalizer, idx: &[usize]) -> Result<Vec<(String, Tensor)>> {
    ds.inputs
        .iter()
        .map(|f| {
            let mut data = Vec::with_capacity(idx.len() * f.len);
            for &i in idx {
                data.extend(norm.normalize(&f.name, f.sample(i))?);
            }
            Ok((f.name.clone(), Tensor::new(&[idx.len(), f.len], data)?))
        })
        .collect()
}

/// Physical-scale targets `[B, C·L]`.
fn batch_targets(ds: &Dataset, idx: &[usize]) -> Result<Tensor> {
    let d = ds.field_len() * ds.outputs.len();
    let mut data = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        for f in &ds.outputs {
            data.extend_from_slice(f.sample(i));
        }
    }
    Tensor::new(&[idx.len(), d], data)
}

/// Per-entry output scale and shift rows, tiled over `b` samples.
fn denorm_rows(ds: &Dataset, norm: &Normalizer, b: usize) -> Result<(Tensor, Tensor)> {
    let l = ds.field_len();
    let mut scale = Vec::with_capacity(b * l * ds.outputs.len());
    let mut shift = Vec::with_capacity(scale.capacity());
    for _ in 0..b {
        for f in &ds.outputs {
            let s = norm.stats(&f.name)?;
            scale.extend(std::iter::repeat(s.std).take(l));
            shift.extend(std::iter::repeat(s.mean).take(l));
        }
    }
    let shape = [b, l * ds.outputs.len()];
    Ok((Tensor::new(&shape, scale)?, Tensor::new(&shape, shift)?))
}

/// Forward pass on samples `idx` returning physical-scale predictions.
fn forward_physical(
    tape: &mut Tape,
    model: &Model,
    vars: &[Var],
    ds: &Dataset,
    norm: &Normalizer,
    idx: &[usize],
) -> Result<Var> {
    let inputs = batch_inputs(ds, norm, idx)?;
    let named: Vec<(&str, Var)> = inputs
        .iter()
        .map(|(n, t)| (n.as_str(), tape.constant(t.clone())))
        .collect();
    let coords = match model.spec.kind {
        ModelKind::DeepOnet => Some(tape.constant(ds.coords.clone())),
        ModelKind::Lnfno => None,
    };
    let pred = model.forward(tape, vars, &named, coords)?;
    let (scale, shift) = denorm_rows(ds, norm, idx.len())?;
    let scale = tape.constant(scale);
    let shift = tape.constant(shift);
    let scaled = tape.mul(pred, scale)?;
    tape.add(scaled, shift)
}

fn check_compatible(model: &Model, ds: &Dataset) -> Result<()> {
    let spec = &model.spec;
    let ok = spec.inputs.len() == ds.inputs.len()
        && spec
            .inputs
            .iter()
            .zip(&ds.inputs)
            .all(|(s, f)| s.name == f.name && s.len == f.len)
        && spec.outputs.iter().eq(ds.outputs.iter().map(|f| &f.name))
        && spec.field_len == ds.field_len();
    if ok {
        Ok(())
    } else {
        Err(Error::dim("model and dataset dimensions differ"))
    }
}

/// Trains in place and returns the per-epoch mean training loss.
pub fn train_loop(
    model: &mut Model,
    ds: &Dataset,
    train: &[usize],
    norm: &Normalizer,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    check_compatible(model, ds)?;
    if cfg.batch == 0 || train.is_empty() {
        return Err(Error::config("batch size and training split must be non-empty"));
    }
    let mut opt = AdamW::new(&model.params);
    let mut rng = Rng::new(cfg.seed, SHUFFLE_STREAM);
    let mut order = train.to_vec();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let mut tape = Tape::new();
            let vars = model.params.attach(&mut tape);
            let pred = forward_physical(&mut tape, model, &vars, ds, norm, chunk)?;
            let target = batch_targets(ds, chunk)?;
            let loss = loss_multifield(&mut tape, pred, &target, ds.outputs.len(), cfg.eps)?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::Training {
                    epoch,
                    message: format!("loss is {value}"),
                });
            }
            tape.backward(loss)?;
            let grads = model.params.collect_grads(&tape, &vars);
            opt.step(&mut model.params, &grads, cfg.lr, cfg.weight_decay)?;
            total += value * chunk.len() as f64;
        }
        let mean = total / order.len() as f64;
        on_epoch(epoch, mean);
        history.push(mean);
    }
    Ok(history)
}

/// Physical-scale predictions `[len(idx), C·L]` without gradients.
pub fn predict_samples(model: &Model, ds: &Dataset, norm: &Normalizer, idx: &[usize]) -> Result<Tensor> {
    check_compatible(model, ds)?;
    let d = ds.field_len() * ds.outputs.len();
    let mut out = Vec::with_capacity(idx.len() * d);
    for chunk in idx.chunks(EVAL_BATCH) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = model.params.iter().map(|p| tape.constant(p.value.clone())).collect();
        let pred = forward_physical(&mut tape, model, &vars, ds, norm, chunk)?;
        out.extend_from_slice(tape.value(pred).data());
    }
    Tensor::new(&[idx.len(), d], out)
}

/// Mean relative ℓ2 error per output field over the samples `test`.
pub fn evaluate(model: &Model, ds: &Dataset, test: &[usize], norm: &Normalizer) -> Result<EvalMetrics> {
    let pred = predict_samples(model, ds, norm, test)?;
    let c = ds.outputs.len();
    let d = c * ds.field_len();
    let mut sums = vec![0.0; c];
    for (k, &i) in test.iter().enumerate() {
        let target: Vec<f64> = ds.outputs.iter().flat_map(|f| f.sample(i).iter().copied()).collect();
        for (s, e) in sums
            .iter_mut()
            .zip(rel_l2_per_field(&pred.data()[k * d..(k + 1) * d], &target, c))
        {
            *s += e;
        }
    }
    let per_field: Vec<f64> = sums.iter().map(|s| s / test.len() as f64).collect();
    let mean = per_field.iter().sum::<f64>() / c as f64;
    Ok(EvalMetrics {
        fields: ds.outputs.iter().map(|f| f.name.clone()).collect(),
        per_field,
        mean,
    })
}

/// Everything needed to rebuild a trained model and its test split.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub normalizer: Normalizer,
    pub benchmark: BenchmarkId,
    pub seed: u64,
}

impl Checkpoint {
    pub fn to_nodf(&self) -> Result<NodfFile> {
        let mut file = NodfFile::new();
        let m = &mut file.metadata;
        m.set("kind", "checkpoint");
        m.set("benchmark", self.benchmark);
        m.set("run_seed", self.seed);
        self.model.spec.write_metadata(m);
        self.normalizer.write_metadata(m);
        for p in self.model.params.iter() {
            let dims = if p.value.shape().is_empty() {
                vec![1]
            } else {
                p.value.shape().to_vec()
            };
            file.push(Component::f64(
                format!("{PARAM_PREFIX}{}", p.name),
                Role::Aux,
                &dims,
                p.value.to_vec(),
            ));
        }
        Ok(file)
    }

    pub fn from_nodf(file: &NodfFile) -> Result<Checkpoint> {
        let m = &file.metadata;
        if m.get("kind") != Some("checkpoint") {
            return Err(Error::format("file is not a model checkpoint"));
        }
        let spec = ModelSpec::from_metadata(m)?;
        let seed: u64 = m.parse("run_seed")?;
        let mut model = Model::build(&spec, seed)?;
        for i in 0..model.params.len() {
            let p = model.params.get(i);
            let c = file.component(&format!("{PARAM_PREFIX}{}", p.name))?;
            let shape = p.value.shape().to_vec();
            let value = Tensor::new(&shape, c.as_f64()?.to_vec())
                .map_err(|_| Error::format(format!("parameter '{}' has the wrong size", p.name)))?;
            model.params.set(i, value)?;
        }
        let input_names: Vec<String> = spec.inputs.iter().map(|i| i.name.clone()).collect();
        let normalizer = Normalizer::from_metadata(m, &input_names, &spec.outputs)?;
        Ok(Checkpoint {
            model,
            normalizer,
            benchmark: m.require("benchmark")?.parse()?,
            seed,
        })
    }
}

/// Split, normalise, build, train and evaluate.
pub fn run_training(
    ds: &Dataset,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(usize, f64),
) -> Result<(Checkpoint, Metrics)> {
    let start = Instant::now();
    let (train, test) = split_indices(ds.n, cfg.seed)?;
    let normalizer = Normalizer::fit(ds, &train);
    let mut model = Model::build(spec, cfg.seed)?;
    let history = train_loop(&mut model, ds, &train, &normalizer, cfg, on_epoch)?;
    let eval = evaluate(&model, ds, &test, &normalizer)?;
    let metrics = Metrics {
        history,
        eval,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    let ckpt = Checkpoint {
        model,
        normalizer,
        benchmark: ds.spec.id,
        seed: cfg.seed,
    };
    Ok((ckpt, metrics))
}
