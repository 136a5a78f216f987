//! Unsupervised training: random ordered pairs, one Adam update per step,
//! fixed validation pairs, CSV metrics and resumable checkpoints.
//!
//! The network runs in `f32`; the loss and its gradient with respect to the
//! emitted fields are evaluated in `f64` and cast back before the network
//! backward pass.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use byteorder::{ByteOrder, LittleEndian};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{dsc, union_labels, Pair};
use crate::field_ops::{njd_percent, warp_nearest, warp_trilinear, DisplacementField};
use crate::losses::{local_ncc_with, total_loss_with_grad, LevelTerms, LossReport};
use crate::model::{ForwardHooks, Model, ModelConfig};
use crate::nn::{Adam, AdamConfig, ConvGrad, ConvLayer, Graph, Tensor};
use crate::volumes::{build_pyramid, write_atomic, LabelMap, Volume};

/// Stream of the pair-sampling generator; model initialisation uses the
/// seed directly and validation pairs use their own stream.
const SAMPLE_STREAM: u64 = 1;
const VALIDATION_STREAM: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f32,
    /// Pairs per update; gradients are averaged.
    pub batch_size: usize,
    pub iterations: u64,
    pub seed: u64,
    pub sigma: f64,
    pub lambda: f64,
    /// Number of registration steps `L`.
    pub levels: usize,
    /// Validate every this many iterations (and at iteration 0).
    pub val_interval: u64,
    pub val_pairs: usize,
    pub checkpoint_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch_size: 1,
            iterations: 2000,
            seed: 0,
            sigma: 1.0,
            lambda: 1e-4,
            levels: 3,
            val_interval: 100,
            val_pairs: 10,
            checkpoint_interval: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::Config("iterations must be ≥ 1".into()));
        }
        if self.val_pairs < 1 {
            return Err(Error::Config("val_pairs must be ≥ 1".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be ≥ 1".into()));
        }
        if self.val_interval < 1 || self.checkpoint_interval < 1 {
            return Err(Error::Config("intervals must be ≥ 1".into()));
        }
        Ok(())
    }

    /// `base` with the steps, σ and λ of this configuration.
    pub fn model_config(&self, base: &ModelConfig) -> ModelConfig {
        let mut m = base.clone();
        m.levels = self.levels;
        m.loss.sigma = self.sigma;
        m.loss.lambda = self.lambda;
        m
    }
}

/// One volume of a dataset, with labels when available.
#[derive(Clone, Debug)]
pub struct Subject {
    pub image: Volume,
    pub labels: Option<LabelMap>,
}

impl Subject {
    pub fn new(image: Volume, labels: Option<LabelMap>) -> Self {
        Subject { image, labels }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationMetrics {
    pub mean_ncc: f64,
    pub mean_dsc: f64,
    pub mean_njd: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    pub iteration: u64,
    pub metrics: ValidationMetrics,
}

/// Two distinct indices below `n`, uniform over ordered pairs; the first is
/// the fixed image.
pub fn sample_indices(n: usize, rng: &mut impl Rng) -> Result<Pair> {
    if n < 2 {
        return Err(Error::Config(format!("need at least two volumes to form a pair, got {n}")));
    }
    let fixed = rng.random_range(0..n);
    let mut moving = rng.random_range(0..n - 1);
    if moving >= fixed {
        moving += 1;
    }
    Ok(Pair { fixed, moving })
}

pub fn sample_pair<'a>(dataset: &'a [Volume], rng: &mut impl Rng) -> Result<(&'a Volume, &'a Volume)> {
    let p = sample_indices(dataset.len(), rng)?;
    Ok((&dataset[p.fixed], &dataset[p.moving]))
}

/// `count` seeded pairs over `n` subjects, fixed for a whole run.
pub fn validation_pairs(n: usize, count: usize, seed: u64) -> Result<Vec<Pair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(VALIDATION_STREAM);
    (0..count).map(|_| sample_indices(n, &mut rng)).collect()
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub config: TrainConfig,
    pub model: Model,
    pub optimizer: Adam,
    pub iteration: u64,
    pub rng: ChaCha8Rng,
    pub best: Option<BestRecord>,
}

impl TrainState {
    pub fn new(config: TrainConfig, base: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::new(config.model_config(base), config.seed)?;
        let optimizer = Adam::new(
            AdamConfig {
                lr: config.lr,
                ..Default::default()
            },
            model.layers(),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(SAMPLE_STREAM);
        Ok(TrainState {
            config,
            model,
            optimizer,
            iteration: 0,
            rng,
            best: None,
        })
    }
}

/// Loss and parameter gradients for one pair, without updating anything.
pub fn loss_and_gradients(model: &Model, fixed: &Volume, moving: &Volume) -> Result<(LossReport, Vec<ConvGrad>)> {
    let cfg = model.config();
    let fp = build_pyramid(fixed, cfg.levels)?;
    let mp = build_pyramid(moving, cfg.levels)?;
    let mut g = Graph::new(model.layers());
    let nodes = model.forward(&mut g, fixed, moving, &mp, &ForwardHooks::default())?;
    let fields: Vec<DisplacementField<f64>> = nodes
        .phi
        .iter()
        .map(|&id| {
            let t = g.value(id);
            DisplacementField::from_vec_unchecked(t.shape(), t.data().iter().map(|&v| v as f64).collect())
        })
        .collect();
    let (report, grads) = total_loss_with_grad(&fp.cast::<f64>(), &mp.cast::<f64>(), &fields, &cfg.loss)?;
    let seeds = nodes
        .phi
        .iter()
        .zip(grads)
        .map(|(&id, gf)| {
            let data = gf.data().iter().map(|&v| v as f32).collect();
            (id, Tensor::from_vec_unchecked(3, gf.shape(), data))
        })
        .collect();
    Ok((report, g.backward(seeds)))
}

fn mean_report(reports: &[LossReport]) -> LossReport {
    let n = reports.len() as f64;
    let levels = reports[0].levels.len();
    LossReport {
        levels: (0..levels)
            .map(|i| LevelTerms {
                sim: reports.iter().map(|r| r.levels[i].sim).sum::<f64>() / n,
                smooth: reports.iter().map(|r| r.levels[i].smooth).sum::<f64>() / n,
                inv: reports.iter().map(|r| r.levels[i].inv).sum::<f64>() / n,
                weight: reports[0].levels[i].weight,
            })
            .collect(),
        total: reports.iter().map(|r| r.total).sum::<f64>() / n,
    }
}

fn grads_finite(grads: &[ConvGrad]) -> bool {
    grads
        .iter()
        .all(|g| g.weight.iter().chain(&g.bias).all(|v| v.is_finite()))
}

/// Draws `batch_size` pairs from `train`, averages their gradients and
/// applies one Adam update.
pub fn train_step(state: &mut TrainState, train: &[Volume]) -> Result<LossReport> {
    let batch = state.config.batch_size;
    let pairs = (0..batch)
        .map(|_| sample_indices(train.len(), &mut state.rng))
        .collect::<Result<Vec<_>>>()?;
    let mut reports = Vec::with_capacity(batch);
    let mut total: Option<Vec<ConvGrad>> = None;
    for p in pairs {
        let (report, grads) = loss_and_gradients(&state.model, &train[p.fixed], &train[p.moving])?;
        if !report.is_finite() || !grads_finite(&grads) {
            return Err(Error::NonFinite {
                iteration: state.iteration + 1,
                detail: format!("pair ({}, {}): {}", p.fixed, p.moving, report.describe()),
            });
        }
        reports.push(report);
        match &mut total {
            None => total = Some(grads),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&grads) {
                    a.weight.iter_mut().zip(&g.weight).for_each(|(x, y)| *x += y);
                    a.bias.iter_mut().zip(&g.bias).for_each(|(x, y)| *x += y);
                }
            }
        }
    }
    let mut grads = total.expect("batch_size ≥ 1");
    if batch > 1 {
        let s = 1.0 / batch as f32;
        for g in &mut grads {
            g.weight.iter_mut().chain(g.bias.iter_mut()).for_each(|v| *v *= s);
        }
    }
    state.optimizer.update(state.model.layers_mut(), &grads);
    state.iteration += 1;
    Ok(mean_report(&reports))
}

/// Mean NCC, Dice and folding percentage of the final field over `pairs`.
/// Only reads the model.
pub fn validate(model: &Model, subjects: &[Subject], pairs: &[Pair]) -> Result<ValidationMetrics> {
    if pairs.is_empty() {
        return Err(Error::Config("no validation pairs".into()));
    }
    let cfg = model.config();
    let (mut ncc, mut dice, mut njd) = (0.0, 0.0, 0.0);
    for p in pairs {
        let (f, m) = (&subjects[p.fixed], &subjects[p.moving]);
        let (Some(lf), Some(lm)) = (&f.labels, &m.labels) else {
            return Err(Error::Data(format!("validation pair {p:?} lacks label maps")));
        };
        let out = model.register(&f.image, &m.image)?;
        let phi = out.final_field();
        let warped = warp_trilinear(&m.image, phi)?;
        ncc += local_ncc_with(&warped, &f.image, cfg.loss.ncc_window, cfg.loss.ncc_mode)? as f64;
        dice += dsc(lf, &warp_nearest(lm, phi)?, &union_labels(lf, lm))?.mean;
        njd += njd_percent(phi)?;
    }
    let n = pairs.len() as f64;
    Ok(ValidationMetrics {
        mean_ncc: ncc / n,
        mean_dsc: dice / n,
        mean_njd: njd / n,
    })
}

// ---------------------------------------------------------------------------
// Checkpoints

const MAGIC: &[u8; 8] = b"NICECKPT";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    iteration: u64,
    adam: AdamConfig,
    adam_step: u64,
    rng_seed: Vec<u8>,
    rng_stream: u64,
    /// Decimal, since JSON numbers cannot hold 128 bits.
    rng_word_pos: String,
    best: Option<BestRecord>,
    layers: Vec<(usize, usize)>,
}

fn push_f32s(buf: &mut Vec<u8>, values: &[f32]) {
    let start = buf.len();
    buf.resize(start + 4 * values.len(), 0);
    LittleEndian::write_f32_into(values, &mut buf[start..]);
}

/// Serialises the full state: configurations, counters, RNG position,
/// parameters and Adam moments.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let header = Header {
        model: state.model.config().clone(),
        train: state.config.clone(),
        iteration: state.iteration,
        adam: state.optimizer.config,
        adam_step: state.optimizer.step,
        rng_seed: state.rng.get_seed().to_vec(),
        rng_stream: state.rng.get_stream(),
        rng_word_pos: state.rng.get_word_pos().to_string(),
        best: state.best,
        layers: state.model.layers().iter().map(|l| (l.in_channels, l.out_channels)).collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Config(e.to_string()))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for l in state.model.layers() {
        push_f32s(&mut buf, &l.weight);
        push_f32s(&mut buf, &l.bias);
    }
    for moments in [&state.optimizer.m, &state.optimizer.v] {
        for g in moments {
            push_f32s(&mut buf, &g.weight);
            push_f32s(&mut buf, &g.bias);
        }
    }
    write_atomic(path, &buf)
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.path, "checkpoint is truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(4 * n)?;
        let mut out = vec![0.0f32; n];
        LittleEndian::read_f32_into(bytes, &mut out);
        Ok(out)
    }

    fn layer_like(&mut self, shapes: &[(usize, usize)]) -> Result<Vec<ConvLayer>> {
        shapes
            .iter()
            .map(|&(ci, co)| {
                let mut l = ConvLayer::zeros(ci, co);
                l.weight = self.f32s(l.weight.len())?;
                l.bias = self.f32s(co)?;
                Ok(l)
            })
            .collect()
    }
}

fn grads_from(layers: Vec<ConvLayer>) -> Vec<ConvGrad> {
    layers
        .into_iter()
        .map(|l| ConvGrad {
            weight: l.weight,
            bias: l.bias,
        })
        .collect()
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        path,
        bytes: &bytes,
        pos: 0,
    };
    if r.take(8)? != MAGIC {
        return Err(Error::format(path, "not a checkpoint file"));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let len = u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize;
    let header: Header =
        serde_json::from_slice(r.take(len)?).map_err(|e| Error::format(path, format!("header: {e}")))?;
    let shapes = header.model.layer_shapes();
    if shapes != header.layers {
        return Err(Error::format(path, "layer shapes do not match the stored configuration"));
    }
    let layers = r.layer_like(&shapes)?;
    let m = grads_from(r.layer_like(&shapes)?);
    let v = grads_from(r.layer_like(&shapes)?);
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after checkpoint payload"));
    }
    let model = Model::from_parts(header.model, layers)?;
    let seed: [u8; 32] = header
        .rng_seed
        .as_slice()
        .try_into()
        .map_err(|_| Error::format(path, "bad RNG seed"))?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(header.rng_stream);
    rng.set_word_pos(
        header
            .rng_word_pos
            .parse()
            .map_err(|_| Error::format(path, "bad RNG position"))?,
    );
    Ok(TrainState {
        config: header.train,
        model,
        optimizer: Adam {
            config: header.adam,
            step: header.adam_step,
            m,
            v,
        },
        iteration: header.iteration,
        rng,
        best: header.best,
    })
}

/// Loads only the network of a checkpoint.
pub fn load_model(path: &Path) -> Result<Model> {
    Ok(load_checkpoint(path)?.model)
}

// ---------------------------------------------------------------------------
// Loop

pub const LATEST_MARKER: &str = "latest";
pub const METRICS_FILE: &str = "metrics.csv";
pub const VALIDATION_FILE: &str = "validation.csv";
pub const VALIDATION_HEADER: &str = "iteration,mean_ncc,mean_dsc,mean_njd";

pub fn checkpoint_path(dir: &Path, iteration: u64) -> PathBuf {
    dir.join(format!("ckpt_{iteration}.bin"))
}

/// Checkpoint named by the `latest` marker in `dir`, if any.
pub fn latest_checkpoint(dir: &Path) -> Result<Option<PathBuf>> {
    let marker = dir.join(LATEST_MARKER);
    match fs::read_to_string(&marker) {
        Ok(name) => Ok(Some(dir.join(name.trim()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(marker, e)),
    }
}

/// Keeps the header and the rows up to `iteration` of a CSV whose first
/// column is the iteration, so a resumed run continues where the checkpoint
/// left off.
fn truncate_csv(path: &Path, header: &str, iteration: u64) -> Result<()> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut out = format!("{header}\n");
    for line in text.lines().skip(1) {
        let it: Option<u64> = line.split(',').next().and_then(|s| s.parse().ok());
        if it.is_some_and(|it| it <= iteration) {
            out.push_str(line);
            out.push('\n');
        }
    }
    write_atomic(path, out.as_bytes())
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = fs::OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub final_checkpoint: Option<PathBuf>,
    pub validation: Vec<(u64, ValidationMetrics)>,
}

fn validation_row(iteration: u64, m: &ValidationMetrics) -> String {
    format!("{iteration},{:?},{:?},{:?}", m.mean_ncc, m.mean_dsc, m.mean_njd)
}

/// Runs training to `cfg.iterations`. With `out_dir`, writes metrics and
/// validation CSVs and checkpoints there, and resumes from its `latest`
/// checkpoint when `resume` is set.
pub fn train_loop(
    cfg: &TrainConfig,
    base: &ModelConfig,
    train: &[Subject],
    val: &[Subject],
    out_dir: Option<&Path>,
    resume: bool,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.len() < 2 {
        return Err(Error::Config("training set needs at least two volumes".into()));
    }
    let images: Vec<Volume> = train.iter().map(|s| s.image.clone()).collect();
    let val_pairs = if val.len() >= 2 {
        validation_pairs(val.len(), cfg.val_pairs, cfg.seed)?
    } else {
        if !val.is_empty() {
            log::warn!("fewer than two validation volumes; validation disabled");
        }
        Vec::new()
    };
    let levels = cfg.levels;

    let mut state = match (out_dir, resume) {
        (Some(dir), true) => match latest_checkpoint(dir)? {
            Some(p) => {
                let s = load_checkpoint(&p)?;
                check_resume_compatible(&s, cfg, base)?;
                log::info!("resuming from {} at iteration {}", p.display(), s.iteration);
                let mut s = s;
                s.config.iterations = cfg.iterations;
                s
            }
            None => TrainState::new(cfg.clone(), base)?,
        },
        _ => TrainState::new(cfg.clone(), base)?,
    };

    let (metrics_path, val_path) = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let m = dir.join(METRICS_FILE);
            let v = dir.join(VALIDATION_FILE);
            truncate_csv(&m, &LossReport::csv_header(levels), state.iteration)?;
            truncate_csv(&v, VALIDATION_HEADER, state.iteration)?;
            (Some(m), Some(v))
        }
        None => (None, None),
    };

    let mut validation = Vec::new();
    let mut run_validation = |state: &mut TrainState| -> Result<()> {
        if val_pairs.is_empty() {
            return Ok(());
        }
        let m = validate(&state.model, val, &val_pairs)?;
        log::info!(
            "iteration {}: val ncc {:.4} dsc {:.4} njd {:.4}%",
            state.iteration,
            m.mean_ncc,
            m.mean_dsc,
            m.mean_njd
        );
        if let Some(p) = &val_path {
            append_line(p, &validation_row(state.iteration, &m))?;
        }
        if state.best.is_none_or(|b| m.mean_dsc > b.metrics.mean_dsc) {
            state.best = Some(BestRecord {
                iteration: state.iteration,
                metrics: m,
            });
            if let Some(dir) = out_dir {
                save_checkpoint(state, &dir.join("best.bin"))?;
            }
        }
        validation.push((state.iteration, m));
        Ok(())
    };

    if state.iteration == 0 {
        run_validation(&mut state)?;
    }
    let mut final_checkpoint = None;
    let start = Instant::now();
    while state.iteration < cfg.iterations {
        let report = train_step(&mut state, &images)?;
        let it = state.iteration;
        if let Some(p) = &metrics_path {
            append_line(p, &report.csv_row(it, start.elapsed().as_secs_f64()))?;
        }
        if it % 50 == 0 {
            log::debug!("iteration {it}: loss {:.6}", report.total);
        }
        if it % cfg.val_interval == 0 {
            run_validation(&mut state)?;
        }
        if let Some(dir) = out_dir {
            if it % cfg.checkpoint_interval == 0 || it == cfg.iterations {
                let path = checkpoint_path(dir, it);
                save_checkpoint(&state, &path)?;
                let name = path.file_name().unwrap().to_string_lossy().into_owned();
                write_atomic(&dir.join(LATEST_MARKER), name.as_bytes())?;
                final_checkpoint = Some(path);
            }
        }
    }
    Ok(TrainOutcome {
        state,
        final_checkpoint,
        validation,
    })
}

fn check_resume_compatible(state: &TrainState, cfg: &TrainConfig, base: &ModelConfig) -> Result<()> {
    if state.model.config() != &cfg.model_config(base) {
        return Err(Error::Config("checkpoint model configuration differs from the requested one".into()));
    }
    let mut stored = state.config.clone();
    stored.iterations = cfg.iterations;
    if &stored != cfg {
        return Err(Error::Config("checkpoint training configuration differs from the requested one".into()));
    }
    if state.iteration > cfg.iterations {
        return Err(Error::Config(format!(
            "checkpoint is at iteration {}, beyond the requested {}",
            state.iteration, cfg.iterations
        )));
    }
    Ok(())
}

/// Trains in memory without validation or files and returns the model.
pub fn train_quiet(cfg: &TrainConfig, base: &ModelConfig, train: &[Subject]) -> Result<Model> {
    Ok(train_loop(cfg, base, train, &[], None, false)?.state.model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_are_distinct_and_reproducible() {
        let mut a = ChaCha8Rng::seed_from_u64(4);
        let mut b = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let p = sample_indices(3, &mut a).unwrap();
            assert_ne!(p.fixed, p.moving);
            assert_eq!(p, sample_indices(3, &mut b).unwrap());
        }
        assert!(matches!(sample_indices(1, &mut a), Err(Error::Config(_))));
    }

    #[test]
    fn csv_truncation_keeps_rows_up_to_iteration() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        fs::write(&p, "iteration,x\n1,a\n2,b\n3,c\n").unwrap();
        truncate_csv(&p, "iteration,x", 2).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "iteration,x\n1,a\n2,b\n");
    }

    #[test]
    fn config_rules() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            TrainConfig { iterations: 0, ..ok.clone() },
            TrainConfig { val_pairs: 0, ..ok.clone() },
            TrainConfig { lr: 0.0, ..ok.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }
}
