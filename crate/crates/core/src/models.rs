//! LNF-NO (presets A–E and the ablation family) and the DeepONet baseline.
//!
//! LNF-NO computes `u = Dec(α · B_L(z) ⊙ B_N(z))` with `z` the concatenated
//! encoder features. Linear layers compute `x·W + b` with `W: [in, out]`.
//! Encoder features are flattened channel-major; the decoder reads `u_raw`
//! row-major as `(channels, grid…)`.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{conv_output_len, Tape, Var};
use crate::dataio::Metadata;
use crate::error::{Error, Result};
use crate::nn_optim::{init_alpha, init_layer, DecayClass, LayerSpec, ParamSet};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Stream of the run seed used for parameter initialisation.
pub const INIT_STREAM: u64 = 1;

const TRACE_KERNEL: usize = 9;
const GRID_KERNEL: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Lnfno,
    DeepOnet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Encoders, fused branches, grid decoder.
    A,
    /// As A, with a 2-D encoder for field-valued inputs.
    B,
    /// Encoders and branches, no decoder (node outputs).
    C,
    /// Multi-field output with a wider multi-channel decoder.
    D,
    /// No encoder: raw inputs feed the branches; grid decoder.
    E,
    Siso,
    Miso,
    Mimo,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    Full,
    OnlyNonlinear,
    OnlyLinear,
    NoEncoder,
    NoDecoder,
    NoEncDec,
    PureNonlinearMlp,
    PureLinearMlp,
}

macro_rules! named_enum {
    ($t:ty, $what:literal, [$($v:path => $s:literal),* $(,)?]) => {
        impl $t {
            pub fn name(self) -> &'static str {
                match self {
                    $($v => $s),*
                }
            }
        }

        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $t {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($v),)*
                    other => Err(Error::config(format!(concat!("unknown ", $what, " '{}'"), other))),
                }
            }
        }
    };
}

named_enum!(ModelKind, "model kind", [ModelKind::Lnfno => "lnfno", ModelKind::DeepOnet => "deeponet"]);
named_enum!(Preset, "preset", [
    Preset::A => "A", Preset::B => "B", Preset::C => "C", Preset::D => "D", Preset::E => "E",
    Preset::Siso => "siso", Preset::Miso => "miso", Preset::Mimo => "mimo",
]);
named_enum!(Ablation, "ablation", [
    Ablation::Full => "full",
    Ablation::OnlyNonlinear => "only_nonlinear",
    Ablation::OnlyLinear => "only_linear",
    Ablation::NoEncoder => "no_encoder",
    Ablation::NoDecoder => "no_decoder",
    Ablation::NoEncDec => "no_enc_dec",
    Ablation::PureNonlinearMlp => "pure_nonlinear_mlp",
    Ablation::PureLinearMlp => "pure_linear_mlp",
]);

impl Ablation {
    pub const ALL: [Ablation; 8] = [
        Ablation::Full,
        Ablation::OnlyNonlinear,
        Ablation::OnlyLinear,
        Ablation::NoEncoder,
        Ablation::NoDecoder,
        Ablation::NoEncDec,
        Ablation::PureNonlinearMlp,
        Ablation::PureLinearMlp,
    ];

    fn keeps_encoder(self) -> bool {
        matches!(
            self,
            Ablation::Full | Ablation::OnlyNonlinear | Ablation::OnlyLinear | Ablation::NoDecoder
        )
    }

    fn keeps_decoder(self) -> bool {
        matches!(
            self,
            Ablation::Full | Ablation::OnlyNonlinear | Ablation::OnlyLinear | Ablation::NoEncoder
        )
    }

    fn keeps_linear(self) -> bool {
        !matches!(self, Ablation::OnlyNonlinear | Ablation::PureNonlinearMlp)
    }

    fn keeps_nonlinear(self) -> bool {
        !matches!(self, Ablation::OnlyLinear | Ablation::PureLinearMlp)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputKind {
    /// 1-D vector (boundary trace, initial condition).
    Trace,
    /// Square 2-D field of `side × side` values.
    Field { side: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InputSpec {
    pub name: String,
    pub len: usize,
    pub kind: InputKind,
}

impl InputSpec {
    pub fn trace(name: &str, len: usize) -> Self {
        InputSpec {
            name: name.into(),
            len,
            kind: InputKind::Trace,
        }
    }

    pub fn field(name: &str, side: usize) -> Self {
        InputSpec {
            name: name.into(),
            len: side * side,
            kind: InputKind::Field { side },
        }
    }
}

/// Layer widths. `scaled(s)` divides every width by `s`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Widths {
    pub encoder: usize,
    pub source: usize,
    pub pool: usize,
    pub branch: usize,
    pub decoder: usize,
    pub decoder_multi: usize,
    pub deeponet: usize,
    pub basis: usize,
}

impl Default for Widths {
    fn default() -> Self {
        Widths {
            encoder: 64,
            source: 32,
            pool: 8,
            branch: 256,
            decoder: 32,
            decoder_multi: 64,
            deeponet: 256,
            basis: 1024,
        }
    }
}

impl Widths {
    pub fn scaled(divisor: usize) -> Self {
        let d = Widths::default();
        let s = |v: usize| (v / divisor.max(1)).max(1);
        Widths {
            encoder: s(d.encoder),
            source: s(d.source),
            pool: d.pool,
            branch: s(d.branch),
            decoder: s(d.decoder),
            decoder_multi: s(d.decoder_multi),
            deeponet: s(d.deeponet),
            basis: s(d.basis),
        }
    }

    fn to_list(self) -> String {
        [
            self.encoder,
            self.source,
            self.pool,
            self.branch,
            self.decoder,
            self.decoder_multi,
            self.deeponet,
            self.basis,
        ]
        .map(|v| v.to_string())
        .join(",")
    }

    fn from_list(s: &str) -> Result<Self> {
        let v: Vec<usize> = s
            .split(',')
            .map(|p| p.parse().map_err(|_| Error::config(format!("bad width list '{s}'"))))
            .collect::<Result<_>>()?;
        if v.len() != 8 || v.contains(&0) {
            return Err(Error::config(format!("width list '{s}' needs 8 positive entries")));
        }
        Ok(Widths {
            encoder: v[0],
            source: v[1],
            pool: v[2],
            branch: v[3],
            decoder: v[4],
            decoder_multi: v[5],
            deeponet: v[6],
            basis: v[7],
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub preset: Preset,
    pub ablation: Ablation,
    pub inputs: Vec<InputSpec>,
    /// Output field names; the prediction concatenates them channel-major.
    pub outputs: Vec<String>,
    /// Values per output field.
    pub field_len: usize,
    /// Spatial shape of one output field; empty for node-based outputs.
    pub grid: Vec<usize>,
    /// Query-coordinate dimension (DeepONet trunk input).
    pub coord_dim: usize,
    pub widths: Widths,
}

impl ModelSpec {
    pub fn output_len(&self) -> usize {
        self.outputs.len() * self.field_len
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.inputs.is_empty() || self.outputs.is_empty() || self.field_len == 0 {
            return bad("model needs inputs and outputs".into());
        }
        if !self.grid.is_empty() && self.grid.iter().product::<usize>() != self.field_len {
            return bad(format!("grid {:?} does not hold {} values", self.grid, self.field_len));
        }
        for inp in &self.inputs {
            if inp.len == 0 {
                return bad(format!("input '{}' is empty", inp.name));
            }
            if let InputKind::Field { side } = inp.kind {
                if side * side != inp.len {
                    return bad(format!("input '{}' is not a {side}x{side} field", inp.name));
                }
            }
        }
        let lnf = matches!(self.preset, Preset::A | Preset::B | Preset::C | Preset::D | Preset::E);
        match self.kind {
            ModelKind::Lnfno if !lnf => bad(format!("preset {} is not an LNF-NO preset", self.preset)),
            ModelKind::DeepOnet if lnf => bad(format!("preset {} is not a DeepONet preset", self.preset)),
            ModelKind::DeepOnet => {
                if self.preset == Preset::Miso && self.inputs.len() != 2 {
                    return bad("miso DeepONet needs exactly two inputs".into());
                }
                if self.preset == Preset::Siso && (self.inputs.len() != 1 || self.outputs.len() != 1) {
                    return bad("siso DeepONet needs one input and one output".into());
                }
                if !(1..=3).contains(&self.coord_dim) {
                    return bad(format!("coordinate dimension {} unsupported", self.coord_dim));
                }
                Ok(())
            }
            ModelKind::Lnfno => {
                if self.has_decoder() && !(1..=3).contains(&self.grid.len()) {
                    return bad("decoder needs a 1-D, 2-D or 3-D output grid".into());
                }
                Ok(())
            }
        }
    }

    fn has_encoder(&self) -> bool {
        self.preset != Preset::E && self.ablation.keeps_encoder()
    }

    fn has_decoder(&self) -> bool {
        self.preset != Preset::C && !self.grid.is_empty() && self.ablation.keeps_decoder()
    }

    pub fn write_metadata(&self, m: &mut Metadata) {
        m.set("model.kind", self.kind);
        m.set("model.preset", self.preset);
        m.set("model.ablation", self.ablation);
        let inputs: Vec<String> = self
            .inputs
            .iter()
            .map(|i| match i.kind {
                InputKind::Trace => format!("{}:trace:{}", i.name, i.len),
                InputKind::Field { side } => format!("{}:field:{side}", i.name),
            })
            .collect();
        m.set("model.inputs", inputs.join(";"));
        m.set("model.outputs", self.outputs.join(";"));
        m.set("model.field_len", self.field_len);
        m.set(
            "model.grid",
            self.grid.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("x"),
        );
        m.set("model.coord_dim", self.coord_dim);
        m.set("model.widths", self.widths.to_list());
    }

    pub fn from_metadata(m: &Metadata) -> Result<Self> {
        let inputs = m
            .require("model.inputs")?
            .split(';')
            .map(|s| {
                let p: Vec<&str> = s.split(':').collect();
                let n = p.get(2).and_then(|v| v.parse::<usize>().ok());
                match (p.as_slice(), n) {
                    ([name, "trace", _], Some(n)) => Ok(InputSpec::trace(name, n)),
                    ([name, "field", _], Some(n)) => Ok(InputSpec::field(name, n)),
                    _ => Err(Error::config(format!("bad input description '{s}'"))),
                }
            })
            .collect::<Result<_>>()?;
        let grid_s = m.require("model.grid")?;
        let grid = if grid_s.is_empty() {
            Vec::new()
        } else {
            grid_s
                .split('x')
                .map(|v| v.parse().map_err(|_| Error::config(format!("bad grid '{grid_s}'"))))
                .collect::<Result<_>>()?
        };
        let spec = ModelSpec {
            kind: m.require("model.kind")?.parse()?,
            preset: m.require("model.preset")?.parse()?,
            ablation: m.require("model.ablation")?.parse()?,
            inputs,
            outputs: m.require("model.outputs")?.split(';').map(String::from).collect(),
            field_len: m.parse("model.field_len")?,
            grid,
            coord_dim: m.parse("model.coord_dim")?,
            widths: Widths::from_list(m.require("model.widths")?)?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Parameter indices and geometry of one layer.
#[derive(Clone, Debug)]
struct Layer {
    w: usize,
    b: usize,
    stride: usize,
    padding: usize,
}

#[derive(Clone, Debug)]
struct Encoder {
    input: usize,
    layers: Vec<Layer>,
    pool: Option<(usize, usize)>,
}

#[derive(Clone, Debug)]
enum Body {
    Lnfno {
        encoders: Vec<Encoder>,
        linear: Vec<Layer>,
        nonlinear: Vec<Layer>,
        decoder: Vec<Layer>,
        alpha: usize,
    },
    DeepOnet {
        branches: Vec<Vec<Layer>>,
        trunk: Vec<Layer>,
        beta: usize,
    },
}

#[derive(Clone, Debug)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ParamSet,
    body: Body,
}

struct Builder<'a> {
    params: ParamSet,
    rng: &'a mut Rng,
}

impl Builder<'_> {
    fn layer(&mut self, name: &str, spec: LayerSpec, stride: usize, padding: usize) -> Result<Layer> {
        let (w, b) = init_layer(&mut self.params, name, &spec, self.rng)?;
        Ok(Layer { w, b, stride, padding })
    }

    fn linear(&mut self, name: &str, inputs: usize, outputs: usize) -> Result<Layer> {
        self.layer(name, LayerSpec::Linear { inputs, outputs }, 1, 0)
    }

    fn mlp(&mut self, prefix: &str, sizes: &[usize]) -> Result<Vec<Layer>> {
        sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| self.linear(&format!("{prefix}.{i}"), w[0], w[1]))
            .collect()
    }

    /// Encoder layers and flattened feature length for input `idx`.
    fn encoder(&mut self, idx: usize, inp: &InputSpec, widths: &Widths) -> Result<(Encoder, usize)> {
        let prefix = format!("enc{idx}");
        match inp.kind {
            InputKind::Trace => {
                let c = widths.encoder;
                let mut layers = vec![self.layer(
                    &format!("{prefix}.0"),
                    LayerSpec::Conv {
                        c_in: 1,
                        c_out: c,
                        kernel: vec![TRACE_KERNEL],
                    },
                    1,
                    TRACE_KERNEL / 2,
                )?];
                let mut len = inp.len;
                for i in 1..4 {
                    layers.push(self.layer(
                        &format!("{prefix}.{i}"),
                        LayerSpec::Conv {
                            c_in: c,
                            c_out: c,
                            kernel: vec![TRACE_KERNEL],
                        },
                        2,
                        TRACE_KERNEL / 2,
                    )?);
                    len = conv_output_len(len, TRACE_KERNEL, 2, TRACE_KERNEL / 2)
                        .ok_or_else(|| Error::config(format!("input '{}' is too short for the encoder", inp.name)))?;
                }
                Ok((
                    Encoder {
                        input: idx,
                        layers,
                        pool: None,
                    },
                    c * len,
                ))
            }
            InputKind::Field { side } => {
                let c = widths.source;
                let mut layers = Vec::with_capacity(4);
                let mut s = side;
                for i in 0..4 {
                    let stride = if i == 0 { 1 } else { 2 };
                    layers.push(self.layer(
                        &format!("{prefix}.{i}"),
                        LayerSpec::Conv {
                            c_in: if i == 0 { 1 } else { c },
                            c_out: c,
                            kernel: vec![GRID_KERNEL; 2],
                        },
                        stride,
                        GRID_KERNEL / 2,
                    )?);
                    s = conv_output_len(s, GRID_KERNEL, stride, GRID_KERNEL / 2)
                        .ok_or_else(|| Error::config(format!("field '{}' is too small for the encoder", inp.name)))?;
                }
                if s < widths.pool {
                    return Err(Error::config(format!(
                        "field '{}' of side {side} shrinks to {s}, below the {} pool",
                        inp.name, widths.pool
                    )));
                }
                let p = widths.pool;
                Ok((
                    Encoder {
                        input: idx,
                        layers,
                        pool: Some((p, p)),
                    },
                    c * p * p,
                ))
            }
        }
    }
}

impl Model {
    /// Builds the model with parameters drawn from `INIT_STREAM` of `seed`.
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Model> {
        spec.validate()?;
        let mut rng = Rng::new(seed, INIT_STREAM);
        let mut b = Builder {
            params: ParamSet::new(),
            rng: &mut rng,
        };
        let w = spec.widths;
        let body = match spec.kind {
            ModelKind::Lnfno => {
                let mut encoders = Vec::new();
                let d = if spec.has_encoder() {
                    let mut d = 0;
                    for (i, inp) in spec.inputs.iter().enumerate() {
                        let (enc, len) = b.encoder(i, inp, &w)?;
                        encoders.push(enc);
                        d += len;
                    }
                    d
                } else {
                    spec.inputs.iter().map(|i| i.len).sum()
                };
                let out = spec.output_len();
                let linear = match spec.ablation {
                    Ablation::PureLinearMlp => b.mlp("bl", &[d, out])?,
                    a if a.keeps_linear() => b.mlp("bl", &[d, w.branch, out])?,
                    _ => Vec::new(),
                };
                let nonlinear = if spec.ablation.keeps_nonlinear() {
                    b.mlp("bn", &[d, w.branch, w.branch, out])?
                } else {
                    Vec::new()
                };
                let mut decoder = Vec::new();
                if spec.has_decoder() {
                    let ch = spec.outputs.len();
                    let hidden = if ch == 1 { w.decoder } else { w.decoder_multi };
                    let kernel = vec![GRID_KERNEL; spec.grid.len()];
                    for (i, (c_in, c_out)) in [(ch, hidden), (hidden, hidden), (hidden, ch)].into_iter().enumerate() {
                        decoder.push(b.layer(
                            &format!("dec.{i}"),
                            LayerSpec::Conv {
                                c_in,
                                c_out,
                                kernel: kernel.clone(),
                            },
                            1,
                            GRID_KERNEL / 2,
                        )?);
                    }
                }
                let alpha = init_alpha(&mut b.params, "alpha")?;
                Body::Lnfno {
                    encoders,
                    linear,
                    nonlinear,
                    decoder,
                    alpha,
                }
            }
            ModelKind::DeepOnet => {
                let hidden = [w.deeponet; 4];
                let mlp_sizes = |inp: usize, out: usize| {
                    let mut s = vec![inp];
                    s.extend_from_slice(&hidden);
                    s.push(out);
                    s
                };
                let branch_inputs: Vec<usize> = match spec.preset {
                    Preset::Mimo => vec![spec.inputs.iter().map(|i| i.len).sum()],
                    _ => spec.inputs.iter().map(|i| i.len).collect(),
                };
                let mut branches = Vec::new();
                for (i, &n) in branch_inputs.iter().enumerate() {
                    branches.push(b.mlp(&format!("branch{i}"), &mlp_sizes(n, w.basis))?);
                }
                let heads = spec.outputs.len();
                let trunk = b.mlp("trunk", &mlp_sizes(spec.coord_dim, heads * w.basis))?;
                let beta = b
                    .params
                    .insert("beta", Tensor::zeros(&[heads])?, DecayClass::Excluded)?;
                Body::DeepOnet { branches, trunk, beta }
            }
        };
        Ok(Model {
            spec: spec.clone(),
            params: b.params,
            body,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Whether any activation is applied anywhere in the forward pass.
    pub fn has_activation(&self) -> bool {
        match &self.body {
            Body::Lnfno {
                encoders,
                nonlinear,
                decoder,
                ..
            } => !encoders.is_empty() || !nonlinear.is_empty() || !decoder.is_empty(),
            Body::DeepOnet { .. } => true,
        }
    }

    /// Runs the model on named inputs, each `[B, len]`. DeepONet models also
    /// need `coords: [Q, coord_dim]`. Returns `[B, output_len]` (DeepONet:
    /// `[B, heads·Q]`, head-major).
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], inputs: &[(&str, Var)], coords: Option<Var>) -> Result<Var> {
        if vars.len() != self.params.len() {
            return Err(Error::contract("parameter handles do not match the model"));
        }
        let ordered: Vec<Var> = self
            .spec
            .inputs
            .iter()
            .map(|spec| {
                let mut found = inputs.iter().filter(|(n, _)| *n == spec.name);
                match (found.next(), found.next()) {
                    (Some((_, v)), None) => {
                        let shape = tape.value(*v).shape();
                        if shape.len() != 2 || shape[1] != spec.len {
                            return Err(Error::dim(format!(
                                "input '{}' has shape {shape:?}, expected [B, {}]",
                                spec.name, spec.len
                            )));
                        }
                        Ok(*v)
                    }
                    (None, _) => Err(Error::dim(format!("missing input '{}'", spec.name))),
                    _ => Err(Error::dim(format!("input '{}' given twice", spec.name))),
                }
            })
            .collect::<Result<_>>()?;
        let batch = tape.value(ordered[0]).shape()[0];
        if ordered.iter().any(|v| tape.value(*v).shape()[0] != batch) {
            return Err(Error::dim("inputs disagree on batch size"));
        }
        match &self.body {
            Body::Lnfno {
                encoders,
                linear,
                nonlinear,
                decoder,
                alpha,
            } => {
                let z = if encoders.is_empty() {
                    concat(tape, &ordered)?
                } else {
                    let feats = encoders
                        .iter()
                        .map(|e| self.encode(tape, vars, e, ordered[e.input], batch))
                        .collect::<Result<Vec<_>>>()?;
                    concat(tape, &feats)?
                };
                let fused = match (linear.is_empty(), nonlinear.is_empty()) {
                    (false, false) => {
                        let l = mlp(tape, vars, linear, false)(z)?;
                        let n = mlp(tape, vars, nonlinear, true)(z)?;
                        tape.mul(l, n)?
                    }
                    (false, true) => mlp(tape, vars, linear, false)(z)?,
                    (true, false) => mlp(tape, vars, nonlinear, true)(z)?,
                    (true, true) => unreachable!("every variant keeps a branch"),
                };
                let raw = tape.mul(fused, vars[*alpha])?;
                if decoder.is_empty() {
                    return Ok(raw);
                }
                let mut shape = vec![batch, self.spec.outputs.len()];
                shape.extend_from_slice(&self.spec.grid);
                let mut x = tape.reshape(raw, &shape)?;
                for (i, l) in decoder.iter().enumerate() {
                    x = tape.conv(x, vars[l.w], vars[l.b], l.stride, l.padding)?;
                    if i + 1 < decoder.len() {
                        x = tape.tanh(x);
                    }
                }
                tape.reshape(x, &[batch, self.spec.output_len()])
            }
            Body::DeepOnet { branches, trunk, beta } => {
                let coords = coords.ok_or_else(|| Error::contract("DeepONet forward needs query coordinates"))?;
                let cs = tape.value(coords).shape();
                if cs.len() != 2 || cs[1] != self.spec.coord_dim {
                    return Err(Error::dim(format!(
                        "coordinates have shape {cs:?}, expected [Q, {}]",
                        self.spec.coord_dim
                    )));
                }
                let emb = match self.spec.preset {
                    Preset::Mimo => {
                        let x = concat(tape, &ordered)?;
                        mlp(tape, vars, &branches[0], true)(x)?
                    }
                    _ => {
                        let mut acc = mlp(tape, vars, &branches[0], true)(ordered[0])?;
                        for (br, &x) in branches.iter().zip(&ordered).skip(1) {
                            let e = mlp(tape, vars, br, true)(x)?;
                            acc = tape.mul(acc, e)?;
                        }
                        acc
                    }
                };
                let t = mlp(tape, vars, trunk, true)(coords)?;
                let p = self.spec.widths.basis;
                let heads = self.spec.outputs.len();
                let mut outs = Vec::with_capacity(heads);
                for h in 0..heads {
                    let th = if heads == 1 {
                        t
                    } else {
                        tape.slice(t, 1, h * p, (h + 1) * p)?
                    };
                    let tt = tape.transpose(th)?;
                    let pred = tape.matmul(emb, tt)?;
                    let bh = if heads == 1 {
                        vars[*beta]
                    } else {
                        tape.slice(vars[*beta], 0, h, h + 1)?
                    };
                    outs.push(tape.add(pred, bh)?);
                }
                concat(tape, &outs)
            }
        }
    }

    fn encode(&self, tape: &mut Tape, vars: &[Var], enc: &Encoder, x: Var, batch: usize) -> Result<Var> {
        let spec = &self.spec.inputs[enc.input];
        let shape = match spec.kind {
            InputKind::Trace => vec![batch, 1, spec.len],
            InputKind::Field { side } => vec![batch, 1, side, side],
        };
        let mut h = tape.reshape(x, &shape)?;
        for l in &enc.layers {
            h = tape.conv(h, vars[l.w], vars[l.b], l.stride, l.padding)?;
            h = tape.tanh(h);
        }
        if let Some(out) = enc.pool {
            h = tape.adaptive_avg_pool2d(h, out)?;
        }
        let flat: usize = tape.value(h).shape()[1..].iter().product();
        tape.reshape(h, &[batch, flat])
    }

    /// Forward pass without gradients on plain tensors.
    pub fn predict(&self, inputs: &[(&str, Tensor)], coords: Option<&Tensor>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params.iter().map(|p| tape.constant(p.value.clone())).collect();
        let named: Vec<(&str, Var)> = inputs.iter().map(|(n, t)| (*n, tape.constant(t.clone()))).collect();
        let c = coords.map(|c| tape.constant(c.clone()));
        let out = self.forward(&mut tape, &vars, &named, c)?;
        Ok(tape.value(out).clone())
    }

    /// The nonlinear branch alone applied to `z: [B, d]`.
    pub fn nonlinear_branch(&self, tape: &mut Tape, vars: &[Var], z: Var) -> Result<Var> {
        match &self.body {
            Body::Lnfno { nonlinear, .. } if !nonlinear.is_empty() => mlp(tape, vars, nonlinear, true)(z),
            _ => Err(Error::contract("model has no nonlinear branch")),
        }
    }
}

fn concat(tape: &mut Tape, xs: &[Var]) -> Result<Var> {
    if xs.len() == 1 {
        Ok(xs[0])
    } else {
        tape.concat(xs, 1)
    }
}

/// Affine layers with tanh between them (never after the last) when
/// `activate` is set.
fn mlp<'a>(
    tape: &'a mut Tape,
    vars: &'a [Var],
    layers: &'a [Layer],
    activate: bool,
) -> impl FnOnce(Var) -> Result<Var> + 'a {
    move |mut x| {
        for (i, l) in layers.iter().enumerate() {
            let y = tape.matmul(x, vars[l.w])?;
            x = tape.add_bias(y, vars[l.b])?;
            if activate && i + 1 < layers.len() {
                x = tape.tanh(x);
            }
        }
        Ok(x)
    }
}

/// LNF-NO spec with a single boundary trace and one square output field.
pub fn lnfno_trace_to_grid(
    n_b: usize,
    grid: &[usize],
    preset: Preset,
    ablation: Ablation,
    widths: Widths,
) -> ModelSpec {
    ModelSpec {
        kind: ModelKind::Lnfno,
        preset,
        ablation,
        inputs: vec![InputSpec::trace("g", n_b)],
        outputs: vec!["u".into()],
        field_len: grid.iter().product(),
        grid: grid.to_vec(),
        coord_dim: grid.len(),
        widths,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a_spec(n_b: usize, n: usize, ablation: Ablation) -> ModelSpec {
        lnfno_trace_to_grid(n_b, &[n, n], Preset::A, ablation, Widths::default())
    }

    #[test]
    fn preset_a_laplace_count_matches_closed_form() {
        let m = Model::build(&a_spec(200, 51, Ablation::Full), 0).unwrap();
        let (d, dd) = (1600, 2601);
        let encoder = 64 * 9 + 64 + 3 * (64 * 64 * 9 + 64);
        let branches = (d * 256 + 256) + (256 * dd + dd) + (d * 256 + 256) + (256 * 256 + 256) + (256 * dd + dd);
        let decoder = 32 * 9 + 32 + 32 * 32 * 9 + 32 + 32 * 9 + 1;
        assert_eq!(m.param_count(), encoder + branches + decoder + 1);
        assert_eq!(m.param_count(), 2_343_700);
    }

    #[test]
    fn ablation_counts_match_reported_table() {
        let expected = [
            (Ablation::Full, 7_069_300),
            (Ablation::OnlyNonlinear, 3_628_187),
            (Ablation::OnlyLinear, 3_562_395),
            (Ablation::NoEncoder, 5_524_276),
            (Ablation::NoDecoder, 7_059_443),
            (Ablation::NoEncDec, 5_514_419),
            (Ablation::PureNonlinearMlp, 2_790_106),
            (Ablation::PureLinearMlp, 4_090_602),
        ];
        for (a, count) in expected {
            assert_eq!(
                Model::build(&a_spec(400, 101, a), 0).unwrap().param_count(),
                count,
                "{a}"
            );
        }
    }

    #[test]
    fn multi_input_and_multi_output_presets() {
        let w = Widths::default();
        let b = ModelSpec {
            kind: ModelKind::Lnfno,
            preset: Preset::B,
            ablation: Ablation::Full,
            inputs: vec![InputSpec::trace("g", 400), InputSpec::field("f", 101)],
            outputs: vec!["u".into()],
            field_len: 101 * 101,
            grid: vec![101, 101],
            coord_dim: 2,
            widths: w,
        };
        let m = Model::build(&b, 0).unwrap();
        assert_eq!(m.param_count(), 8_145_940);
        let source: usize = m
            .params
            .iter()
            .filter(|p| p.name.starts_with("enc1."))
            .map(|p| p.value.len())
            .sum();
        assert_eq!(source, 28_064);

        let d = ModelSpec {
            kind: ModelKind::Lnfno,
            preset: Preset::D,
            ablation: Ablation::Full,
            inputs: ["g_phi", "g_cp", "g_cm"]
                .iter()
                .map(|n| InputSpec::trace(n, 512))
                .collect(),
            outputs: vec!["phi".into(), "c_plus".into(), "c_minus".into()],
            field_len: 129 * 129,
            grid: vec![129, 129],
            coord_dim: 2,
            widths: w,
        };
        let m = Model::build(&d, 0).unwrap();
        assert_eq!(m.param_count(), 32_392_906);
        let dec: usize = m
            .params
            .iter()
            .filter(|p| p.name.starts_with("dec."))
            .map(|p| p.value.len())
            .sum();
        assert_eq!(dec, (3 * 64 * 9 + 64) + (64 * 64 * 9 + 64) + (64 * 3 * 9 + 3));
    }

    #[test]
    fn preset_e_count() {
        let spec = lnfno_trace_to_grid(6146, &[33, 33, 33], Preset::E, Ablation::Full, Widths::default());
        assert_eq!(Model::build(&spec, 0).unwrap().param_count(), 21_714_116);
    }

    #[test]
    fn deeponet_counts() {
        let don = |inputs: Vec<InputSpec>, outputs: &[&str], coord_dim: usize, preset: Preset| ModelSpec {
            kind: ModelKind::DeepOnet,
            preset,
            ablation: Ablation::Full,
            inputs,
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
            field_len: 1,
            grid: Vec::new(),
            coord_dim,
            widths: Widths::default(),
        };
        let count = |s: ModelSpec| Model::build(&s, 0).unwrap().param_count();
        assert_eq!(
            count(don(vec![InputSpec::trace("g", 200)], &["u"], 2, Preset::Siso)),
            973_313
        );
        assert_eq!(
            count(don(vec![InputSpec::trace("g", 400)], &["u"], 2, Preset::Siso)),
            1_024_513
        );
        assert_eq!(
            count(don(vec![InputSpec::trace("g", 6146)], &["u"], 3, Preset::Siso)),
            2_495_745
        );
        assert_eq!(
            count(don(
                vec![InputSpec::trace("g", 400), InputSpec::field("f", 101)],
                &["u"],
                2,
                Preset::Miso
            )),
            4_096_769
        );
        let mimo_in = ["g_phi", "g_cp", "g_cm"]
            .iter()
            .map(|n| InputSpec::trace(n, 512))
            .collect();
        assert_eq!(
            count(don(mimo_in, &["phi", "c_plus", "c_minus"], 2, Preset::Mimo)),
            1_841_667
        );
    }

    fn tiny(ablation: Ablation) -> ModelSpec {
        lnfno_trace_to_grid(16, &[5, 5], Preset::A, ablation, Widths::scaled(16))
    }

    fn rand_input(b: usize, n: usize, seed: u64) -> Tensor {
        let mut r = Rng::new(seed, 9);
        Tensor::new(&[b, n], (0..b * n).map(|_| r.normal()).collect()).unwrap()
    }

    #[test]
    fn pure_linear_has_no_activation() {
        assert!(!Model::build(&tiny(Ablation::PureLinearMlp), 0)
            .unwrap()
            .has_activation());
        assert!(Model::build(&tiny(Ablation::NoEncDec), 0).unwrap().has_activation());
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Model::build(&tiny(Ablation::Full), 5).unwrap();
        let b = Model::build(&tiny(Ablation::Full), 5).unwrap();
        for (p, q) in a.params.iter().zip(b.params.iter()) {
            assert_eq!(p.value.data(), q.value.data());
        }
    }

    #[test]
    fn zero_linear_branch_annihilates_output() {
        let mut m = Model::build(&tiny(Ablation::NoDecoder), 1).unwrap();
        for i in 0..m.params.len() {
            if m.params.get(i).name.starts_with("bl.") {
                let shape = m.params.get(i).value.shape().to_vec();
                m.params.set(i, Tensor::zeros(&shape).unwrap()).unwrap();
            }
        }
        let out = m.predict(&[("g", rand_input(3, 16, 0))], None).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn alpha_scales_raw_output() {
        let mut m = Model::build(&tiny(Ablation::NoDecoder), 2).unwrap();
        let x = rand_input(2, 16, 1);
        let base = m.predict(&[("g", x.clone())], None).unwrap();
        let ai = m.params.index_of("alpha").unwrap();
        m.params.set(ai, Tensor::scalar(2.0)).unwrap();
        let doubled = m.predict(&[("g", x)], None).unwrap();
        for (a, b) in base.data().iter().zip(doubled.data()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn theorem_one_reduction_is_exact() {
        let mut m = Model::build(&tiny(Ablation::NoEncDec), 3).unwrap();
        let last = m.params.index_of("bl.1.bias").unwrap();
        for i in 0..m.params.len() {
            let p = m.params.get(i);
            if p.name.starts_with("bl.") {
                let shape = p.value.shape().to_vec();
                let fill = if i == last { 1.0 } else { 0.0 };
                m.params.set(i, Tensor::full(&shape, fill).unwrap()).unwrap();
            }
        }
        let x = rand_input(4, 16, 2);
        let fused = m.predict(&[("g", x.clone())], None).unwrap();
        let mut tape = Tape::new();
        let vars: Vec<Var> = m.params.iter().map(|p| tape.constant(p.value.clone())).collect();
        let z = tape.constant(x);
        let bn = m.nonlinear_branch(&mut tape, &vars, z).unwrap();
        let diff = fused
            .data()
            .iter()
            .zip(tape.value(bn).data())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert_eq!(diff, 0.0);
    }

    #[test]
    fn input_order_does_not_matter() {
        let spec = ModelSpec {
            kind: ModelKind::Lnfno,
            preset: Preset::B,
            ablation: Ablation::Full,
            inputs: vec![InputSpec::trace("g", 16), InputSpec::field("f", 17)],
            outputs: vec!["u".into()],
            field_len: 25,
            grid: vec![5, 5],
            coord_dim: 2,
            widths: Widths {
                pool: 2,
                ..Widths::scaled(16)
            },
        };
        let m = Model::build(&spec, 0).unwrap();
        let (g, f) = (rand_input(2, 16, 3), rand_input(2, 289, 4));
        let a = m.predict(&[("g", g.clone()), ("f", f.clone())], None).unwrap();
        let b = m.predict(&[("f", f), ("g", g)], None).unwrap();
        assert_eq!(a.data(), b.data());
        assert!(m.predict(&[("g", rand_input(2, 16, 3))], None).is_err());
    }

    #[test]
    fn batch_matches_per_sample() {
        let m = Model::build(&tiny(Ablation::Full), 4).unwrap();
        let x = rand_input(3, 16, 5);
        let all = m.predict(&[("g", x.clone())], None).unwrap();
        let d = m.spec.output_len();
        for b in 0..3 {
            let xi = Tensor::new(&[1, 16], x.data()[b * 16..(b + 1) * 16].to_vec()).unwrap();
            let one = m.predict(&[("g", xi)], None).unwrap();
            for (p, q) in one.data().iter().zip(&all.data()[b * d..(b + 1) * d]) {
                assert!((p - q).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn deeponet_structure() {
        let spec = ModelSpec {
            kind: ModelKind::DeepOnet,
            preset: Preset::Siso,
            ablation: Ablation::Full,
            inputs: vec![InputSpec::trace("g", 8)],
            outputs: vec!["u".into()],
            field_len: 6,
            grid: Vec::new(),
            coord_dim: 2,
            widths: Widths::scaled(32),
        };
        let mut m = Model::build(&spec, 0).unwrap();
        let coords = Tensor::new(&[6, 2], (0..12).map(|i| i as f64 / 12.0).collect()).unwrap();
        // Zero branch output: prediction equals beta everywhere.
        let bi = m.params.index_of("beta").unwrap();
        m.params.set(bi, Tensor::new(&[1], vec![0.25]).unwrap()).unwrap();
        for i in 0..m.params.len() {
            if m.params.get(i).name.starts_with("branch0.4") {
                let shape = m.params.get(i).value.shape().to_vec();
                m.params.set(i, Tensor::zeros(&shape).unwrap()).unwrap();
            }
        }
        let out = m.predict(&[("g", rand_input(2, 8, 0))], Some(&coords)).unwrap();
        assert_eq!(out.shape(), &[2, 6]);
        assert!(out.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn spec_metadata_round_trip() {
        let spec = ModelSpec {
            kind: ModelKind::Lnfno,
            preset: Preset::B,
            ablation: Ablation::NoDecoder,
            inputs: vec![InputSpec::trace("g", 40), InputSpec::field("f", 11)],
            outputs: vec!["u".into()],
            field_len: 121,
            grid: vec![11, 11],
            coord_dim: 2,
            widths: Widths::scaled(4),
        };
        let mut m = Metadata::new();
        spec.write_metadata(&mut m);
        assert_eq!(ModelSpec::from_metadata(&m).unwrap(), spec);
    }
}
