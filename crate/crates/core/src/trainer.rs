//! Cross-entropy training under the four data regimes.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{debug, info};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate, render_table, ComparisonTable, EvalReport, Metric, MISSING};
use crate::features::{fill_context, Bandwidth, FeatureScenario, Utterance};
use crate::fsio::{put_str, put_u32, write_atomic, Reader};
use crate::model::{build_model, decode_model, encode_model, save_model, Example, Model, ModelConfig, Params, Variant};
use crate::nnops::softmax_into;
use crate::rng;

/// Training-data regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    /// Wideband data only.
    AM1,
    /// Narrowband data only.
    AM2,
    /// Both bandwidths, each at its own rate.
    AM3,
    /// Both bandwidths, narrowband upsampled to 16 kHz.
    AM4,
}

impl Regime {
    pub const ALL: [Regime; 4] = [Regime::AM1, Regime::AM2, Regime::AM3, Regime::AM4];

    pub fn name(self) -> &'static str {
        match self {
            Regime::AM1 => "AM1",
            Regime::AM2 => "AM2",
            Regime::AM3 => "AM3",
            Regime::AM4 => "AM4",
        }
    }

    /// Featurization of both training and test data for this regime.
    pub fn feature_scenario(self) -> FeatureScenario {
        match self {
            Regime::AM1 | Regime::AM4 => FeatureScenario::Upsample16k,
            Regime::AM2 => FeatureScenario::Downsample8k,
            Regime::AM3 => FeatureScenario::Native,
        }
    }

    pub fn trains_on(self, bw: Bandwidth) -> bool {
        match self {
            Regime::AM1 => bw == Bandwidth::Wideband,
            Regime::AM2 => bw == Bandwidth::Narrowband,
            Regime::AM3 | Regime::AM4 => true,
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown regime {s:?} (expected AM1, AM2, AM3 or AM4)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainScenario {
    pub name: Regime,
    pub variant: Variant,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Learning-rate factor applied when the held-out loss stalls.
    pub lr_decay: f64,
    /// Epochs without held-out improvement before decaying.
    pub patience: usize,
    /// Fraction of utterances per bandwidth held out for validation.
    pub heldout_fraction: f64,
    /// Train on every `frame_stride`-th frame, with the phase rotating each
    /// epoch.
    pub frame_stride: usize,
    pub seed: u64,
    /// Architecture; `variant` and `features` are taken from the scenario.
    pub model: ModelConfig,
}

impl Default for TrainScenario {
    fn default() -> Self {
        TrainScenario {
            name: Regime::AM3,
            variant: Variant::Baseline,
            epochs: 4,
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.9,
            lr_decay: 0.5,
            patience: 2,
            heldout_fraction: 0.1,
            frame_stride: 1,
            seed: 1,
            model: ModelConfig::default(),
        }
    }
}

impl TrainScenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: TrainScenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.frame_stride == 0 {
            return Err(Error::Config("batch_size and frame_stride must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && (0.0..1.0).contains(&self.momentum)) {
            return Err(Error::Config("learning_rate must be >= 0 and momentum in [0, 1)".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config("lr_decay must lie in (0, 1]".into()));
        }
        if !(0.0..0.5).contains(&self.heldout_fraction) {
            return Err(Error::Config("heldout_fraction must lie in [0, 0.5)".into()));
        }
        self.model_config().shape_chain()?;
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig { features: self.name.feature_scenario(), ..self.model.with_variant(self.variant) }
    }
}

/// Utterance indices used for training and for held-out validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataSplit {
    pub train: Vec<usize>,
    pub heldout: Vec<usize>,
}

/// Keeps the utterances the regime trains on and holds out a seeded
/// fraction of each bandwidth.
pub fn split_data(utterances: &[Utterance], scenario: &TrainScenario) -> Result<DataSplit> {
    let mut train = Vec::new();
    let mut heldout = Vec::new();
    for bw in Bandwidth::ALL {
        if !scenario.name.trains_on(bw) {
            continue;
        }
        let mut idx: Vec<usize> = (0..utterances.len()).filter(|&i| utterances[i].bandwidth() == bw).collect();
        let mut r = rng::stream(scenario.seed, &[rng::label::HELDOUT, bw.flag() as u64]);
        idx.shuffle(&mut r);
        let n_held = if idx.len() >= 2 {
            ((idx.len() as f64 * scenario.heldout_fraction).round() as usize).min(idx.len() - 1)
        } else {
            0
        };
        heldout.extend_from_slice(&idx[..n_held]);
        train.extend_from_slice(&idx[n_held..]);
    }
    if train.is_empty() {
        let wanted: Vec<_> = Bandwidth::ALL
            .into_iter()
            .filter(|&bw| scenario.name.trains_on(bw))
            .map(|bw| bw.short_name())
            .collect();
        return Err(Error::Config(format!(
            "scenario {} trains on {} data but the corpus has none",
            scenario.name,
            wanted.join("+")
        )));
    }
    train.sort_unstable();
    heldout.sort_unstable();
    Ok(DataSplit { train, heldout })
}

/// One training example: frame `frame` of utterance `utt`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameRef {
    pub utt: usize,
    pub frame: usize,
}

/// Frames of the training utterances, globally shuffled for `epoch` and cut
/// into batches. Bandwidths mix in corpus proportion.
pub fn compose_batches(
    utterances: &[Utterance],
    train: &[usize],
    scenario: &TrainScenario,
    epoch: usize,
) -> Result<Vec<Vec<FrameRef>>> {
    let stride = scenario.frame_stride;
    let phase = epoch % stride;
    let mut frames: Vec<FrameRef> = train
        .iter()
        .flat_map(|&u| (phase..utterances[u].n_frames()).step_by(stride).map(move |frame| FrameRef { utt: u, frame }))
        .collect();
    if frames.is_empty() {
        return Err(Error::Config("no training frames after filtering".into()));
    }
    frames.shuffle(&mut rng::stream(scenario.seed, &[rng::label::SHUFFLE, epoch as u64]));
    Ok(frames.chunks(scenario.batch_size).map(<[FrameRef]>::to_vec).collect())
}

/// SGD with momentum: `v = mu v + g / n`, `p -= lr v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    pub velocity: Params,
}

impl Sgd {
    pub fn new(params: &Params, learning_rate: f64, momentum: f64) -> Self {
        Sgd { learning_rate, momentum, velocity: params.zeros_like() }
    }

    /// Applies one update from a gradient summed over `n` examples.
    pub fn step(&mut self, params: &mut Params, grad_sum: &Params, n: usize) -> Result<()> {
        let (mu, lr, n) = (self.momentum, self.learning_rate, n as f64);
        self.velocity.zip_apply(grad_sum, |v, g| *v = mu * *v + g / n)?;
        params.zip_apply(&self.velocity, |p, v| *p -= lr * v)
    }
}

/// Reusable context-patch buffer for a batch.
struct BatchBuffer {
    patches: Vec<f64>,
    input_len: usize,
}

impl BatchBuffer {
    fn fill<'a>(&'a mut self, utterances: &[Utterance], batch: &[FrameRef], k: usize) -> Result<Vec<Example<'a>>> {
        let n = self.input_len;
        self.patches.resize(batch.len() * n, 0.0);
        let mut meta = Vec::with_capacity(batch.len());
        for (i, fr) in batch.iter().enumerate() {
            let u = &utterances[fr.utt];
            fill_context(&u.features, fr.frame, k, &mut self.patches[i * n..(i + 1) * n]);
            let labels = u.labels.as_ref().ok_or_else(|| Error::Data(format!("utterance {} has no labels", u.id())))?;
            meta.push((u.bandwidth(), labels[fr.frame] as usize));
        }
        Ok(self
            .patches
            .chunks(n)
            .zip(meta)
            .map(|(patch, (bandwidth, target))| Example { patch, bandwidth, target })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean training loss per frame.
    pub loss: f64,
    pub heldout_loss: Option<f64>,
    pub wb_frame_acc: Option<f64>,
    pub nb_frame_acc: Option<f64>,
    pub learning_rate: f64,
}

pub const METRICS_HEADER: &str = "epoch\tloss\twb_frame_acc\tnb_frame_acc";

pub fn metrics_tsv(rows: &[EpochMetrics]) -> String {
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
    let mut out = format!("{METRICS_HEADER}\n");
    for m in rows {
        out.push_str(&format!("{}\t{:.6}\t{}\t{}\n", m.epoch, m.loss, opt(m.wb_frame_acc), opt(m.nb_frame_acc)));
    }
    out
}

/// Everything needed to continue training bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub scenario: TrainScenario,
    pub model: Model,
    pub sgd: Sgd,
    /// Completed epochs.
    pub epoch: usize,
    pub best_heldout_loss: f64,
    pub stale_epochs: usize,
    pub running_loss: f64,
    pub metrics: Vec<EpochMetrics>,
}

const STATE_MAGIC: &[u8; 4] = b"BNTS";
const STATE_VERSION: u32 = 1;

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_opt(out: &mut Vec<u8>, v: Option<f64>) {
    put_f64(out, v.unwrap_or(f64::NAN));
}

fn get_opt(r: &mut Reader<'_>) -> Result<Option<f64>> {
    let v = r.f64()?;
    Ok((!v.is_nan()).then_some(v))
}

impl TrainState {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(STATE_MAGIC);
        put_u32(&mut out, STATE_VERSION);
        put_str(&mut out, &self.scenario.to_toml());
        put_u64(&mut out, self.epoch as u64);
        put_f64(&mut out, self.sgd.learning_rate);
        put_f64(&mut out, self.sgd.momentum);
        put_f64(&mut out, self.best_heldout_loss);
        put_u64(&mut out, self.stale_epochs as u64);
        put_f64(&mut out, self.running_loss);
        put_u32(&mut out, self.metrics.len() as u32);
        for m in &self.metrics {
            put_u64(&mut out, m.epoch as u64);
            put_f64(&mut out, m.loss);
            put_opt(&mut out, m.heldout_loss);
            put_opt(&mut out, m.wb_frame_acc);
            put_opt(&mut out, m.nb_frame_acc);
            put_f64(&mut out, m.learning_rate);
        }
        let model = encode_model(&self.model);
        put_u64(&mut out, model.len() as u64);
        out.extend_from_slice(&model);
        let cfg = self.model.config();
        for (_, t) in self.sgd.velocity.named(cfg) {
            for v in t.data() {
                put_f64(&mut out, *v);
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<TrainState> {
        let mut r = Reader::new(bytes, "training state");
        if bytes.len() < 4 || r.take(4)? != STATE_MAGIC {
            return Err(Error::Format("not a training state file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != STATE_VERSION {
            return Err(Error::Format(format!("unsupported training state version {version}")));
        }
        let scenario = TrainScenario::from_toml(&r.str()?)
            .map_err(|e| Error::Corruption(format!("training state scenario: {e}")))?;
        let epoch = r.u64()? as usize;
        let learning_rate = r.f64()?;
        let momentum = r.f64()?;
        let best_heldout_loss = r.f64()?;
        let stale_epochs = r.u64()? as usize;
        let running_loss = r.f64()?;
        let n_metrics = r.u32()? as usize;
        let mut metrics = Vec::with_capacity(n_metrics.min(10_000));
        for _ in 0..n_metrics {
            metrics.push(EpochMetrics {
                epoch: r.u64()? as usize,
                loss: r.f64()?,
                heldout_loss: get_opt(&mut r)?,
                wb_frame_acc: get_opt(&mut r)?,
                nb_frame_acc: get_opt(&mut r)?,
                learning_rate: r.f64()?,
            });
        }
        let model_len = r.u64()? as usize;
        let model = decode_model(r.take(model_len)?)?;
        let mut velocity = model.params.zeros_like();
        for (_, t) in velocity.named_mut(model.config()) {
            for v in t.data_mut() {
                *v = r.f64()?;
            }
        }
        if !r.is_empty() {
            return Err(Error::Corruption("trailing bytes in training state".into()));
        }
        Ok(TrainState {
            scenario,
            model,
            sgd: Sgd { learning_rate, momentum, velocity },
            epoch,
            best_heldout_loss,
            stale_epochs,
            running_loss,
            metrics,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<TrainState> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        TrainState::decode(&bytes)
    }
}

/// File name of the state written after `epoch`.
pub fn epoch_checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:03}.state")
}

pub const FINAL_MODEL_NAME: &str = "model.bnmd";
pub const METRICS_NAME: &str = "metrics.tsv";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: Model,
    pub final_model: PathBuf,
    pub metrics: Vec<EpochMetrics>,
}

/// Mean loss and per-bandwidth accuracy over every frame of the held-out
/// utterances.
fn heldout_metrics(model: &Model, utterances: &[Utterance], heldout: &[usize]) -> Result<(Option<f64>, [Option<f64>; 2])> {
    let k = model.config().context;
    let per_utt: Vec<(Bandwidth, f64, usize, usize)> = heldout
        .par_iter()
        .map(|&i| {
            let u = &utterances[i];
            let labels = u.labels.as_ref().ok_or_else(|| Error::Data(format!("utterance {} has no labels", u.id())))?;
            let mut ws = model.workspace();
            let mut patch = vec![0.0; model.config().input_len()];
            let mut probs = vec![0.0; model.config().n_classes];
            let (mut loss, mut correct) = (0.0, 0);
            for (t, &label) in labels.iter().enumerate() {
                fill_context(&u.features, t, k, &mut patch);
                model.forward_into(&mut ws, &patch, u.bandwidth())?;
                let logits = ws.logits();
                let (log_sum, max) = softmax_into(logits, &mut probs);
                loss += log_sum - (logits[label as usize] - max);
                let best = (0..logits.len()).fold(0, |b, c| if logits[c] > logits[b] { c } else { b });
                correct += usize::from(best == label as usize);
            }
            Ok((u.bandwidth(), loss, correct, labels.len()))
        })
        .collect::<Result<_>>()?;
    let mut loss = 0.0;
    let mut frames = 0;
    let mut counts = [(0usize, 0usize); 2];
    for (bw, l, c, n) in per_utt {
        loss += l;
        frames += n;
        let slot = &mut counts[bw.flag() as usize];
        slot.0 += c;
        slot.1 += n;
    }
    let acc = counts.map(|(c, n)| (n > 0).then(|| c as f64 / n as f64));
    Ok(((frames > 0).then(|| loss / frames as f64), acc))
}

fn check_inputs(scenario: &TrainScenario, utterances: &[Utterance], features: FeatureScenario) -> Result<()> {
    scenario.validate()?;
    let expected = scenario.name.feature_scenario();
    if features != expected {
        return Err(Error::Config(format!(
            "scenario {} needs {expected} features, got {features}",
            scenario.name
        )));
    }
    let cfg = scenario.model_config();
    for u in utterances {
        if u.features.dim != cfg.n_mels {
            return Err(Error::Config(format!(
                "utterance {} has {}-dim features, model expects {}",
                u.id(),
                u.features.dim,
                cfg.n_mels
            )));
        }
        match &u.labels {
            Some(l) if l.len() == u.n_frames() => {
                if let Some(&bad) = l.iter().find(|&&c| c as usize >= cfg.n_classes) {
                    return Err(Error::Data(format!("utterance {}: label {bad} exceeds {} classes", u.id(), cfg.n_classes)));
                }
            }
            _ => return Err(Error::Data(format!("utterance {} lacks aligned labels", u.id()))),
        }
    }
    Ok(())
}

/// Finds the first example of a batch with a non-finite loss.
fn locate_nonfinite(model: &Model, examples: &[Example<'_>], batch: &[FrameRef], utterances: &[Utterance]) -> Error {
    for (ex, fr) in examples.iter().zip(batch) {
        if let Ok(l) = model.batch_loss(std::slice::from_ref(ex)) {
            if !l.is_finite() {
                return Error::Numeric(format!(
                    "non-finite loss on utterance {} frame {}",
                    utterances[fr.utt].id(),
                    fr.frame
                ));
            }
        }
    }
    Error::Numeric("non-finite loss in batch".into())
}

/// Trains from scratch, or from the state file `resume`, writing an epoch
/// state after every epoch, the metrics log and the final model into
/// `out_dir`.
pub fn train(
    scenario: &TrainScenario,
    utterances: &[Utterance],
    features: FeatureScenario,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    check_inputs(scenario, utterances, features)?;
    let split = split_data(utterances, scenario)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut state = match resume {
        Some(path) => {
            let state = TrainState::load(path)?;
            if state.scenario != *scenario {
                return Err(Error::Config(format!(
                    "{} was written by a different scenario configuration",
                    path.display()
                )));
            }
            info!("resuming {} after epoch {}", scenario.name, state.epoch);
            state
        }
        None => {
            let model = build_model(&scenario.model_config(), scenario.seed)?;
            let sgd = Sgd::new(&model.params, scenario.learning_rate, scenario.momentum);
            TrainState {
                scenario: scenario.clone(),
                model,
                sgd,
                epoch: 0,
                best_heldout_loss: f64::INFINITY,
                stale_epochs: 0,
                running_loss: 0.0,
                metrics: Vec::new(),
            }
        }
    };
    let n_train_frames: usize = split.train.iter().map(|&u| utterances[u].n_frames()).sum();
    info!(
        "{} {}: {} train utterances ({n_train_frames} frames), {} held out, {} parameters",
        scenario.name,
        scenario.variant,
        split.train.len(),
        split.heldout.len(),
        state.model.params.len()
    );
    let k = state.model.config().context;
    let mut buffer = BatchBuffer { patches: Vec::new(), input_len: state.model.config().input_len() };
    while state.epoch < scenario.epochs {
        let epoch = state.epoch + 1;
        let batches = compose_batches(utterances, &split.train, scenario, epoch)?;
        let (mut loss_sum, mut n_frames) = (0.0, 0usize);
        for batch in &batches {
            let examples = buffer.fill(utterances, batch, k)?;
            let (loss, grads) = match state.model.batch_gradient(&examples) {
                Ok(r) => r,
                Err(Error::Numeric(_)) => return Err(locate_nonfinite(&state.model, &examples, batch, utterances)),
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(locate_nonfinite(&state.model, &examples, batch, utterances));
            }
            state.sgd.step(&mut state.model.params, &grads, examples.len())?;
            loss_sum += loss;
            n_frames += examples.len();
        }
        if !state.model.params.all_finite() {
            return Err(Error::Numeric(format!("parameters became non-finite in epoch {epoch}")));
        }
        let (heldout_loss, [wb, nb]) = heldout_metrics(&state.model, utterances, &split.heldout)?;
        let lr_used = state.sgd.learning_rate;
        if let Some(h) = heldout_loss {
            if h < state.best_heldout_loss {
                state.best_heldout_loss = h;
                state.stale_epochs = 0;
            } else {
                state.stale_epochs += 1;
                if state.stale_epochs >= scenario.patience {
                    state.sgd.learning_rate *= scenario.lr_decay;
                    state.stale_epochs = 0;
                    debug!("held-out loss stalled; learning rate now {}", state.sgd.learning_rate);
                }
            }
        }
        state.running_loss = loss_sum / n_frames as f64;
        state.epoch = epoch;
        let m = EpochMetrics {
            epoch,
            loss: state.running_loss,
            heldout_loss,
            wb_frame_acc: wb,
            nb_frame_acc: nb,
            learning_rate: lr_used,
        };
        info!(
            "epoch {epoch}: loss {:.4}, held-out loss {}, WB acc {}, NB acc {}",
            m.loss,
            heldout_loss.map_or("-".into(), |v| format!("{v:.4}")),
            wb.map_or("-".into(), |v| format!("{v:.4}")),
            nb.map_or("-".into(), |v| format!("{v:.4}"))
        );
        state.metrics.push(m);
        state.save(&out_dir.join(epoch_checkpoint_name(epoch)))?;
        write_atomic(&out_dir.join(METRICS_NAME), metrics_tsv(&state.metrics).as_bytes())?;
    }
    let final_model = out_dir.join(FINAL_MODEL_NAME);
    save_model(&state.model, &final_model)?;
    write_atomic(&out_dir.join(METRICS_NAME), metrics_tsv(&state.metrics).as_bytes())?;
    Ok(TrainOutcome { model: state.model, final_model, metrics: state.metrics })
}

/// One row per embedding size, in the order given.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<(usize, EvalReport)>,
}

impl SweepReport {
    pub fn table(&self, metric: Metric) -> ComparisonTable {
        let rows: Vec<[String; 3]> = self
            .rows
            .iter()
            .map(|(dim, r)| {
                let cell = |bw| {
                    let v = match metric {
                        Metric::FrameErrorRate => r.frame_error_rate(bw),
                        Metric::TokenErrorRate => r.token_error_rate(bw),
                    };
                    v.map_or_else(|| MISSING.to_string(), |v| format!("{:.1}", 100.0 * v))
                };
                [dim.to_string(), cell(Bandwidth::Wideband), cell(Bandwidth::Narrowband)]
            })
            .collect();
        render_table(&["Embedding size", "WB", "NB"], metric.title(), &rows)
    }
}

/// Trains and evaluates one embeddings model per size in `dims`; each run
/// writes into `out_dir/dim_<n>`.
pub fn sweep_embedding_dim(
    dims: &[usize],
    scenario: &TrainScenario,
    train_data: &[Utterance],
    test_data: &[Utterance],
    features: FeatureScenario,
    out_dir: &Path,
) -> Result<SweepReport> {
    if !scenario.variant.has_embeddings() {
        return Err(Error::Variant(format!(
            "an embedding-size sweep needs an embeddings variant, got {}",
            scenario.variant
        )));
    }
    if dims.is_empty() || dims.contains(&0) {
        return Err(Error::Config("embedding sizes must be a non-empty list of positive integers".into()));
    }
    let mut rows = Vec::with_capacity(dims.len());
    for &dim in dims {
        let mut s = scenario.clone();
        s.model.embedding_dim = dim;
        let outcome = train(&s, train_data, features, &out_dir.join(format!("dim_{dim}")), None)?;
        let report = evaluate(&outcome.model, test_data, &format!("{} n={dim}", s.name))?;
        rows.push((dim, report));
    }
    Ok(SweepReport { rows })
}

#[cfg(test)]
mod tests;
