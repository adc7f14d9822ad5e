//! Run configuration and the end-to-end commands built on it: dataset
//! generation, training, evaluation, the ablation sweep, plot emission and
//! dataset verification.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::datagen::{generate, verify_dataset, BenchmarkId, BenchmarkSpec, VerifyReport};
use crate::dataio::{read_nodf, write_nodf, NodfFile};
use crate::error::{Error, Result};
use crate::models::{Ablation, Model, ModelKind, Preset, Widths};
use crate::train::{
    default_preset, evaluate, predict_samples, run_training, split_indices, Checkpoint, Dataset, EvalMetrics, Metrics,
    TrainConfig,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.nodf";
pub const HISTORY_FILE: &str = "history.csv";
pub const FINAL_FILE: &str = "final.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const ABLATION_FILE: &str = "ablation.csv";

/// Plain-text `key = value` run configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub benchmark: BenchmarkId,
    pub samples: usize,
    /// Stored resolution; `None` keeps the benchmark default.
    pub res: Option<usize>,
    pub k: f64,
    pub data_seed: u64,
    pub data: PathBuf,
    pub out: PathBuf,
    pub model: ModelKind,
    /// `None` picks the benchmark default.
    pub preset: Option<Preset>,
    pub ablation: Ablation,
    pub width_scale: usize,
    /// `None` takes the model-kind default.
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub batch: usize,
    pub wd: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            benchmark: BenchmarkId::Laplace,
            samples: crate::datagen::DEFAULT_SAMPLES,
            res: None,
            k: 1.0,
            data_seed: 0,
            data: PathBuf::from("data.nodf"),
            out: PathBuf::from("run"),
            model: ModelKind::Lnfno,
            preset: None,
            ablation: Ablation::Full,
            width_scale: 1,
            epochs: None,
            lr: None,
            batch: 20,
            wd: 1e-4,
            seed: 0,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("invalid value '{value}' for '{key}'")))
}

fn parse_auto<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse_num(key, value).map(Some)
    }
}

impl RunConfig {
    /// Parses a config file body. Blank lines and `#` comments are skipped;
    /// unknown or repeated keys are rejected.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", n + 1)))?;
            let k = k.trim();
            if seen.contains(&k) {
                return Err(Error::config(format!("line {}: key '{k}' repeated", n + 1)));
            }
            seen.push(k);
            cfg.set(k, v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        RunConfig::parse(&fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "benchmark" => self.benchmark = value.parse()?,
            "samples" => self.samples = parse_num(key, value)?,
            "res" => self.res = parse_auto(key, value)?,
            "k" => self.k = parse_num(key, value)?,
            "data_seed" => self.data_seed = parse_num(key, value)?,
            "data" => self.data = PathBuf::from(value),
            "out" => self.out = PathBuf::from(value),
            "model" => self.model = value.parse()?,
            "preset" => self.preset = if value == "auto" { None } else { Some(value.parse()?) },
            "ablation" => self.ablation = value.parse()?,
            "width_scale" => self.width_scale = parse_num(key, value)?,
            "epochs" => self.epochs = parse_auto(key, value)?,
            "lr" => self.lr = parse_auto(key, value)?,
            "batch" => self.batch = parse_num(key, value)?,
            "wd" => self.wd = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            other => return Err(Error::config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn benchmark_spec(&self) -> BenchmarkSpec {
        let mut spec = BenchmarkSpec::new(self.benchmark, self.samples, self.data_seed);
        if let Some(r) = self.res {
            spec = spec.with_res(r);
        }
        spec.k = self.k;
        spec
    }

    /// Preset for a dataset of benchmark `id`.
    pub fn preset_for(&self, id: BenchmarkId) -> Preset {
        self.preset.unwrap_or_else(|| default_preset(id, self.model))
    }

    pub fn train_config(&self) -> TrainConfig {
        let base = match self.model {
            ModelKind::Lnfno => TrainConfig::default(),
            ModelKind::DeepOnet => TrainConfig::deeponet(),
        };
        TrainConfig {
            epochs: self.epochs.unwrap_or(base.epochs),
            lr: self.lr.unwrap_or(base.lr),
            batch: self.batch,
            weight_decay: self.wd,
            seed: self.seed,
            ..base
        }
    }

    pub fn widths(&self) -> Widths {
        Widths::scaled(self.width_scale)
    }

    /// Canonical form with every default resolved; `parse(dump())` gives an
    /// identical run and dumps to the same bytes.
    pub fn dump(&self) -> String {
        let t = self.train_config();
        let spec = self.benchmark_spec();
        let mut s = String::new();
        let mut line = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(s, "{k} = {v}");
        };
        line("benchmark", &self.benchmark);
        line("samples", &self.samples);
        line("res", &spec.res);
        line("k", &self.k);
        line("data_seed", &self.data_seed);
        line("data", &self.data.display());
        line("out", &self.out.display());
        line("model", &self.model);
        match self.preset {
            Some(p) => line("preset", &p),
            None => line("preset", &"auto"),
        }
        line("ablation", &self.ablation);
        line("width_scale", &self.width_scale);
        line("epochs", &t.epochs);
        line("lr", &t.lr);
        line("batch", &t.batch);
        line("wd", &t.weight_decay);
        line("seed", &t.seed);
        s
    }
}

/// Generates the configured dataset and writes it to `cfg.data`.
pub fn cmd_gen(cfg: &RunConfig) -> Result<NodfFile> {
    let file = generate(&cfg.benchmark_spec())?;
    write_nodf(&file, &cfg.data)?;
    Ok(file)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    Dataset::from_nodf(&read_nodf(path)?)
}

/// Trains on `cfg.data` and writes the checkpoint, history and final
/// metrics under `cfg.out`.
pub fn cmd_train(cfg: &RunConfig, on_epoch: impl FnMut(usize, f64)) -> Result<Metrics> {
    let ds = load_dataset(&cfg.data)?;
    let spec = ds.model_spec(cfg.model, Some(cfg.preset_for(ds.spec.id)), cfg.ablation, cfg.widths());
    let (ckpt, metrics) = run_training(&ds, &spec, &cfg.train_config(), on_epoch)?;
    fs::create_dir_all(&cfg.out)?;
    write_nodf(&ckpt.to_nodf()?, cfg.out.join(CHECKPOINT_FILE))?;
    fs::write(cfg.out.join(HISTORY_FILE), metrics.history_csv())?;
    fs::write(cfg.out.join(FINAL_FILE), metrics.final_csv())?;
    Ok(metrics)
}

pub fn eval_csv(e: &EvalMetrics) -> String {
    let mut s = String::from("test_rel_l2");
    for f in &e.fields {
        let _ = write!(s, ",{f}");
    }
    let _ = write!(s, "\n{:e}", e.mean);
    for v in &e.per_field {
        let _ = write!(s, ",{v:e}");
    }
    s.push('\n');
    s
}

/// Re-evaluates a checkpoint on the test split of `data`; writes `out` if
/// given.
pub fn cmd_eval(checkpoint: &Path, data: &Path, out: Option<&Path>) -> Result<EvalMetrics> {
    let ckpt = Checkpoint::from_nodf(&read_nodf(checkpoint)?)?;
    let ds = load_dataset(data)?;
    if ckpt.benchmark != ds.spec.id {
        return Err(Error::config(format!(
            "checkpoint was trained on {} but the dataset is {}",
            ckpt.benchmark, ds.spec.id
        )));
    }
    let (_, test) = split_indices(ds.n, ckpt.seed)?;
    let e = evaluate(&ckpt.model, &ds, &test, &ckpt.normalizer)?;
    if let Some(path) = out {
        fs::write(path, eval_csv(&e))?;
    }
    Ok(e)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Ablation,
    pub params: usize,
    pub epochs: usize,
    pub seconds: f64,
    pub test_rel_l2: f64,
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("variant,params,epochs,seconds,test_rel_l2\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:.3},{:e}",
            r.variant, r.params, r.epochs, r.seconds, r.test_rel_l2
        );
    }
    s
}

/// Trains every ablation variant on `cfg.data` with a shared split, data
/// order and seed; writes `ablation.csv` under `cfg.out`.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<Vec<AblationRow>> {
    let ds = load_dataset(&cfg.data)?;
    let tc = cfg.train_config();
    let rows = Ablation::ALL
        .par_iter()
        .map(|&variant| {
            let spec = ds.model_spec(
                ModelKind::Lnfno,
                Some(cfg.preset_for(ds.spec.id)),
                variant,
                cfg.widths(),
            );
            let params = Model::build(&spec, tc.seed)?.param_count();
            let (_, m) = run_training(&ds, &spec, &tc, |_, _| {})?;
            Ok(AblationRow {
                variant,
                params,
                epochs: tc.epochs,
                seconds: m.wall_seconds,
                test_rel_l2: m.eval.mean,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join(ABLATION_FILE), ablation_csv(&rows))?;
    Ok(rows)
}

/// Binary graymap of a `rows × cols` panel, min-max scaled to 0..255.
pub fn pgm(values: &[f64], rows: usize, cols: usize) -> Vec<u8> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = hi - lo;
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| {
        if span > 0.0 {
            ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    out
}

/// 2-D view of a field: the grid itself, or the middle slice along the
/// first axis of a 3-D grid.
fn panel(field: &[f64], grid: &[usize]) -> Option<(Vec<f64>, usize, usize)> {
    match *grid {
        [r, c] => Some((field.to_vec(), r, c)),
        [a, r, c] => {
            let mid = a / 2;
            Some((field[mid * r * c..(mid + 1) * r * c].to_vec(), r, c))
        }
        _ => None,
    }
}

/// Writes target, prediction and absolute-error panels of dataset sample
/// `sample` as PGM files plus a CSV of the raw values. Returns the written
/// paths.
pub fn cmd_plot(checkpoint: &Path, data: &Path, sample: usize, out: &Path) -> Result<Vec<PathBuf>> {
    let ckpt = Checkpoint::from_nodf(&read_nodf(checkpoint)?)?;
    let ds = load_dataset(data)?;
    if sample >= ds.n {
        return Err(Error::config(format!(
            "sample {sample} out of range (dataset has {})",
            ds.n
        )));
    }
    let pred = predict_samples(&ckpt.model, &ds, &ckpt.normalizer, &[sample])?;
    fs::create_dir_all(out)?;
    let l = ds.field_len();
    let mut written = Vec::new();
    let mut csv = String::from("field,index,target,prediction,abs_error\n");
    for (c, f) in ds.outputs.iter().enumerate() {
        let target = f.sample(sample);
        let p = &pred.data()[c * l..(c + 1) * l];
        let err: Vec<f64> = p.iter().zip(target).map(|(a, b)| (a - b).abs()).collect();
        for i in 0..l {
            let _ = writeln!(csv, "{},{i},{:e},{:e},{:e}", f.name, target[i], p[i], err[i]);
        }
        for (tag, values) in [("target", target), ("prediction", p), ("abs_error", &err[..])] {
            if let Some((v, r, cols)) = panel(values, &ds.grid) {
                let path = out.join(format!("sample{sample}_{}_{tag}.pgm", f.name));
                fs::write(&path, pgm(&v, r, cols))?;
                written.push(path);
            }
        }
    }
    let path = out.join(format!("sample{sample}.csv"));
    fs::write(&path, csv)?;
    written.push(path);
    Ok(written)
}

pub fn cmd_verify(data: &Path, n_check: usize) -> Result<VerifyReport> {
    verify_dataset(&read_nodf(data)?, n_check)
}
