//! Evaluation: Dice overlap, folding and runtime statistics over test pairs,
//! per-step similarity curves and the `L`/`λ` ablation harness.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_ops::{njd_percent, upsample_field_2x, warp_nearest, warp_trilinear};
use crate::losses::local_ncc_with;
use crate::model::{Model, ModelConfig, RegistrationOutput};
use crate::training::{train_quiet, Subject, TrainConfig};
use crate::volumes::{build_pyramid, LabelMap, Volume};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiceMode {
    /// Mean of per-label Dice.
    #[default]
    Mean,
    /// One Dice over all foreground voxels pooled across labels.
    Pooled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiceScores {
    /// Dice per label present in at least one map.
    pub per_label: Vec<(u32, f64)>,
    pub mean: f64,
}

/// Dice per label; labels absent from both maps are left out of the mean.
pub fn dsc(a: &LabelMap, b: &LabelMap, labels: &[u32]) -> Result<DiceScores> {
    dsc_with(a, b, labels, DiceMode::Mean)
}

pub fn dsc_with(a: &LabelMap, b: &LabelMap, labels: &[u32], mode: DiceMode) -> Result<DiceScores> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("dsc: {:?} vs {:?}", a.shape(), b.shape())));
    }
    if labels.is_empty() || labels.contains(&0) {
        return Err(Error::Config("dsc needs a non-empty set of foreground labels".into()));
    }
    let index: BTreeMap<u32, usize> = labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    // (|A|, |B|, |A∩B|) per label
    let mut counts = vec![[0usize; 3]; labels.len()];
    for (&la, &lb) in a.data().iter().zip(b.data()) {
        let ia = index.get(&la);
        if let Some(&i) = ia {
            counts[i][0] += 1;
        }
        if let Some(&j) = index.get(&lb) {
            counts[j][1] += 1;
            if la == lb {
                counts[j][2] += 1;
            }
        }
    }
    let mut per_label = Vec::new();
    let (mut inter, mut size) = (0usize, 0usize);
    for (&l, &i) in &index {
        let [na, nb, nab] = counts[i];
        if na + nb == 0 {
            continue;
        }
        per_label.push((l, 2.0 * nab as f64 / (na + nb) as f64));
        inter += nab;
        size += na + nb;
    }
    if per_label.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let mean = match mode {
        DiceMode::Mean => per_label.iter().map(|p| p.1).sum::<f64>() / per_label.len() as f64,
        DiceMode::Pooled => 2.0 * inter as f64 / size as f64,
    };
    Ok(DiceScores { per_label, mean })
}

/// Foreground labels present in either map.
pub fn union_labels(a: &LabelMap, b: &LabelMap) -> Vec<u32> {
    let mut l = a.foreground_labels();
    l.extend(b.foreground_labels());
    l.sort_unstable();
    l.dedup();
    l
}

/// A registration pair; fixed and moving index into a subject list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub fixed: usize,
    pub moving: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub pair: Pair,
    pub dsc: f64,
    pub baseline_dsc: f64,
    pub njd: f64,
    pub ncc: f64,
    pub baseline_ncc: f64,
    pub seconds: f64,
    /// NCC after each step, each on its own pyramid grid.
    pub step_ncc: Vec<f64>,
    /// NCC after each step on the full-resolution grid.
    pub step_ncc_full: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Summary::default();
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        Summary { mean, std: var.sqrt() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pairs: Vec<PairResult>,
    pub dsc: Summary,
    pub baseline_dsc: Summary,
    pub njd: Summary,
    pub ncc: Summary,
    pub baseline_ncc: Summary,
    pub seconds: Summary,
    /// Mean NCC after each step over all pairs, on each step's own grid.
    pub step_ncc: Vec<f64>,
    /// The same on the full-resolution grid.
    pub step_ncc_full: Vec<f64>,
    /// What the runtime column measures.
    pub timing: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub dice: DiceMode,
    /// Time the network pass only, excluding pyramid construction.
    pub network_only: bool,
}

/// NCC of the moving pyramid warped by each `φ_i` against the fixed
/// pyramid at the same level.
pub fn step_ncc(model: &Model, fixed: &Volume, moving: &Volume, out: &RegistrationOutput) -> Result<Vec<f64>> {
    let cfg = model.config();
    let fp = build_pyramid(fixed, cfg.levels)?;
    let mp = build_pyramid(moving, cfg.levels)?;
    out.phi
        .iter()
        .enumerate()
        .map(|(i, phi)| {
            let warped = warp_trilinear(mp.level(i), phi)?;
            Ok(local_ncc_with(&warped, fp.level(i), cfg.loss.ncc_window, cfg.loss.ncc_mode)? as f64)
        })
        .collect()
}

/// NCC at full resolution after each step: every `φ_i` is upsampled to the
/// input grid and applied to the full-resolution moving volume.
pub fn step_ncc_full(model: &Model, fixed: &Volume, moving: &Volume, out: &RegistrationOutput) -> Result<Vec<f64>> {
    let cfg = model.config();
    let finest = out.phi.len() - 1;
    out.phi
        .iter()
        .enumerate()
        .map(|(i, phi)| {
            let mut up = phi.clone();
            for _ in i..finest {
                up = upsample_field_2x(&up);
            }
            let warped = warp_trilinear(moving, &up)?;
            Ok(local_ncc_with(&warped, fixed, cfg.loss.ncc_window, cfg.loss.ncc_mode)? as f64)
        })
        .collect()
}

pub fn evaluate_pair(model: &Model, subjects: &[Subject], pair: Pair, opts: EvalOptions) -> Result<PairResult> {
    let (f, m) = (&subjects[pair.fixed], &subjects[pair.moving]);
    let (Some(lf), Some(lm)) = (&f.labels, &m.labels) else {
        return Err(Error::Data(format!("pair {pair:?} lacks label maps")));
    };
    let cfg = model.config();
    let t0 = Instant::now();
    let out = if opts.network_only {
        let pyr = build_pyramid(&m.image, cfg.levels)?;
        let t1 = Instant::now();
        let out = model.register_with_pyramid(&f.image, &m.image, &pyr)?;
        (out, t1.elapsed().as_secs_f64())
    } else {
        let out = model.register(&f.image, &m.image)?;
        (out, t0.elapsed().as_secs_f64())
    };
    let (out, seconds) = out;
    let phi = out.final_field();
    let labels = union_labels(lf, lm);
    let warped_labels = warp_nearest(lm, phi)?;
    let warped = warp_trilinear(&m.image, phi)?;
    let window = cfg.loss.ncc_window;
    let mode = cfg.loss.ncc_mode;
    Ok(PairResult {
        pair,
        dsc: dsc_with(lf, &warped_labels, &labels, opts.dice)?.mean,
        baseline_dsc: dsc_with(lf, lm, &labels, opts.dice)?.mean,
        njd: njd_percent(phi)?,
        ncc: local_ncc_with(&warped, &f.image, window, mode)? as f64,
        baseline_ncc: local_ncc_with(&m.image, &f.image, window, mode)? as f64,
        seconds,
        step_ncc: step_ncc(model, &f.image, &m.image, &out)?,
        step_ncc_full: step_ncc_full(model, &f.image, &m.image, &out)?,
    })
}

/// Registers every pair and aggregates Dice, folding, NCC and runtime.
/// Pairs are processed in order so timings do not contend.
pub fn evaluate(model: &Model, subjects: &[Subject], pairs: &[Pair], opts: EvalOptions) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::Config("no evaluation pairs".into()));
    }
    let results = pairs
        .iter()
        .map(|&p| evaluate_pair(model, subjects, p, opts))
        .collect::<Result<Vec<_>>>()?;
    let levels = model.config().levels;
    let step_ncc = (0..levels)
        .map(|i| results.iter().map(|r| r.step_ncc[i]).sum::<f64>() / results.len() as f64)
        .collect();
    let step_ncc_full = (0..levels)
        .map(|i| results.iter().map(|r| r.step_ncc_full[i]).sum::<f64>() / results.len() as f64)
        .collect();
    let timing = if opts.network_only {
        "seconds: network pass only (pyramid construction excluded)"
    } else {
        "seconds: full register call"
    };
    Ok(EvalReport {
        dsc: Summary::of(results.iter().map(|r| r.dsc)),
        baseline_dsc: Summary::of(results.iter().map(|r| r.baseline_dsc)),
        njd: Summary::of(results.iter().map(|r| r.njd)),
        ncc: Summary::of(results.iter().map(|r| r.ncc)),
        baseline_ncc: Summary::of(results.iter().map(|r| r.baseline_ncc)),
        seconds: Summary::of(results.iter().map(|r| r.seconds)),
        step_ncc,
        step_ncc_full,
        timing: timing.into(),
        pairs: results,
    })
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "fixed,moving,dsc,baseline_dsc,njd,ncc,baseline_ncc,seconds";

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut s = format!("# {}\n{}\n", self.timing, Self::CSV_HEADER);
        for r in &self.pairs {
            s.push_str(&format!(
                "{},{},{:?},{:?},{:?},{:?},{:?},{:.6}\n",
                r.pair.fixed, r.pair.moving, r.dsc, r.baseline_dsc, r.njd, r.ncc, r.baseline_ncc, r.seconds
            ));
        }
        crate::volumes::write_atomic(path, s.as_bytes())
    }
}

/// Per-step warped volumes of one pair with their NCC to the fixed pyramid.
#[derive(Clone, Debug)]
pub struct StepwiseReport {
    /// `I_m^i ∘ φ_i` on the grid of pyramid level `i`.
    pub warped: Vec<Volume>,
    pub ncc: Vec<f64>,
    /// NCC after each step at full resolution, see [`step_ncc_full`].
    pub ncc_full: Vec<f64>,
    pub output: RegistrationOutput,
}

pub fn stepwise_report(model: &Model, fixed: &Volume, moving: &Volume) -> Result<StepwiseReport> {
    let cfg = model.config();
    let out = model.register(fixed, moving)?;
    let fp = build_pyramid(fixed, cfg.levels)?;
    let mp = build_pyramid(moving, cfg.levels)?;
    let mut warped = Vec::with_capacity(cfg.levels);
    let mut ncc = Vec::with_capacity(cfg.levels);
    for (i, phi) in out.phi.iter().enumerate() {
        let w = warp_trilinear(mp.level(i), phi)?;
        ncc.push(local_ncc_with(&w, fp.level(i), cfg.loss.ncc_window, cfg.loss.ncc_mode)? as f64);
        warped.push(w);
    }
    let ncc_full = step_ncc_full(model, fixed, moving, &out)?;
    Ok(StepwiseReport {
        warped,
        ncc,
        ncc_full,
        output: out,
    })
}

/// Writes the middle axial slice of `vol` as an 8-bit greyscale PNG, with
/// intensities clamped to `[0, 1]`.
pub fn write_mid_slice_png(vol: &Volume, path: &Path) -> Result<()> {
    let [d, h, w] = vol.shape();
    let z = d / 2;
    let pixels: Vec<u8> = vol.data()[z * h * w..(z + 1) * h * w]
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, w as u32, h as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::format(path, e.to_string()))?;
        writer
            .write_image_data(&pixels)
            .map_err(|e| Error::format(path, e.to_string()))?;
    }
    crate::volumes::write_atomic(path, &buf)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub levels: usize,
    pub lambda: f64,
    pub dsc: f64,
    pub njd: f64,
    pub cpu_seconds: f64,
    /// Set when the cell failed; the metrics are then NaN.
    pub error: Option<String>,
}

pub const ABLATION_HEADER: &str = "L,lambda,dsc,njd,cpu_seconds,error";

impl AblationRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:?},{:?},{:?},{:?},{}",
            self.levels,
            self.lambda,
            self.dsc,
            self.njd,
            self.cpu_seconds,
            self.error.as_deref().unwrap_or("").replace([',', '\n'], ";")
        )
    }
}

/// Trains one model per `(L, λ)` cell with the same seed and budget and
/// evaluates it on `test_pairs`. A failing cell is recorded and the sweep
/// continues.
pub fn ablate(
    base_model: &ModelConfig,
    base_train: &TrainConfig,
    levels: &[usize],
    lambdas: &[f64],
    train: &[Subject],
    test: &[Subject],
    test_pairs: &[Pair],
) -> Vec<AblationRow> {
    let mut rows = Vec::new();
    for &l in levels {
        for &lambda in lambdas {
            let cell = || -> Result<EvalReport> {
                let tc = TrainConfig {
                    levels: l,
                    lambda,
                    ..base_train.clone()
                };
                let model = train_quiet(&tc, base_model, train)?;
                evaluate(&model, test, test_pairs, EvalOptions::default())
            };
            rows.push(match cell() {
                Ok(r) => AblationRow {
                    levels: l,
                    lambda,
                    dsc: r.dsc.mean,
                    njd: r.njd.mean,
                    cpu_seconds: r.seconds.mean,
                    error: None,
                },
                Err(e) => {
                    log::error!("ablation cell L={l} lambda={lambda} failed: {e}");
                    AblationRow {
                        levels: l,
                        lambda,
                        dsc: f64::NAN,
                        njd: f64::NAN,
                        cpu_seconds: f64::NAN,
                        error: Some(e.to_string()),
                    }
                }
            });
        }
    }
    rows
}

pub fn write_ablation_csv(rows: &[AblationRow], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "{ABLATION_HEADER}").expect("write to Vec");
    for r in rows {
        writeln!(buf, "{}", r.csv_row()).expect("write to Vec");
    }
    crate::volumes::write_atomic(path, &buf)
}
