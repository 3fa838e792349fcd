//! Experiment orchestration: configuration, the end-to-end training run,
//! grid search, checkpoints and output artifacts.

mod checkpoint;
mod grid;
mod plots;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{
    generate_channels, generate_splash, load_idx, normalize, split_indices, LabeledImageSet,
    Normalization, Provenance, SplitSpec, UNLABELED,
};
use crate::error::{Error, Result};
use crate::losses::{
    clustering_defined, contrastive_loss, kl_loss, loss_weights, mse_loss, soft_silhouette_loss,
    AuxLoss, LossConfig, LossReport,
};
use crate::metrics::{silhouette_score, ClassScore};
use crate::models::{build_model, reparameterize, sample_noise, LatentVars, Mode, ModelConfig, ModelKind, ModelParams};
use crate::ndmath::{AdamState, Array, Tape, Var};
use crate::projection::{project, Embedding2D, ProjectionConfig};
use crate::pseudolabel::{predict_labels, train_classifier, ClassifierConfig};

pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, parse_checkpoint, read_checkpoint, save_checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use grid::{expand_grid, grid_search, SUMMARY_CSV, parse_grid, resolve_grid_key, write_summary_csv, GridOutcome, SummaryRow};
pub use plots::{
    class_color, emit_plots, loss_svg, projection_svg, write_loss_csv, EMBEDDING_CSV, LOSS_CSV,
    LOSS_SVG, PROJECTION_SVG,
};

/// Relative output directories are resolved against this variable when set.
pub const OUTPUT_ROOT_ENV: &str = "ENSEMBLE_LATENT_OUTPUT_ROOT";
pub const CHECKPOINT_FILE: &str = "model.lfck";
pub const RESULT_FILE: &str = "result.json";

pub const STEP_DECAY_GAMMA: f64 = 0.5;
pub const STEP_DECAY_EVERY: usize = 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Channels {
        n: usize,
    },
    Splash {
        n: usize,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        /// Keep only the first `limit` images.
        #[serde(default)]
        limit: Option<usize>,
    },
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Channels { n: 3000 }
    }
}

impl DatasetConfig {
    /// Generates or reads the images; generators use `seed`.
    pub fn load(&self, seed: u64) -> Result<LabeledImageSet> {
        match self {
            DatasetConfig::Channels { n } => generate_channels(*n, seed),
            DatasetConfig::Splash { n } => generate_splash(*n, seed),
            DatasetConfig::Idx { images, labels, limit } => {
                let set = load_idx(images, labels)?;
                match limit {
                    Some(l) if *l < set.len() => Ok(set.subset(&(0..*l).collect::<Vec<_>>())),
                    _ => Ok(set),
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrScheduler {
    #[default]
    None,
    /// Halves the learning rate every 30 epochs.
    Step,
}

/// Where the training labels of the non-manual images come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Labeling {
    #[default]
    Pseudo,
    GroundTruth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    /// `height` and `width` are overwritten with the dataset's image size.
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub aux: AuxLoss,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_scheduler: LrScheduler,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Fraction of labelled images treated as hand-labelled.
    pub manual_fraction: f64,
    pub labeling: Labeling,
    /// `class_count` and `seed` are filled in by the run.
    pub classifier: ClassifierConfig,
    /// `seed` is filled in by the run.
    pub projection: ProjectionConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            aux: AuxLoss::None,
            epochs: 100,
            batch_size: 128,
            lr: 0.0005,
            lr_scheduler: LrScheduler::None,
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            manual_fraction: 0.2,
            labeling: Labeling::Pseudo,
            classifier: ClassifierConfig::default(),
            projection: ProjectionConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be at least 2, got {}", self.batch_size)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(self.manual_fraction > 0.0 && self.manual_fraction < 1.0) {
            return Err(Error::Config(format!(
                "manual_fraction must lie in (0, 1), got {}",
                self.manual_fraction
            )));
        }
        match self.dataset {
            DatasetConfig::Channels { n } | DatasetConfig::Splash { n } if n == 0 => {
                return Err(Error::Config("dataset size must be positive".into()))
            }
            _ => {}
        }
        let mut model = self.model.clone();
        // Image size comes from the data; only the other fields are checked here.
        model.height = 28;
        model.width = 28;
        model.validate()?;
        self.loss.validate()?;
        self.projection.validate()
    }

    /// Learning rate in effect during `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_scheduler {
            LrScheduler::None => self.lr,
            LrScheduler::Step => self.lr * STEP_DECAY_GAMMA.powi((epoch / STEP_DECAY_EVERY) as i32),
        }
    }

    /// `output_dir`, placed under the output root override when it is
    /// relative and the variable is set.
    pub fn resolved_output_dir(&self) -> PathBuf {
        resolve_output_dir(&self.output_dir)
    }
}

pub fn resolve_output_dir(dir: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if dir.is_relative() && !root.is_empty() => PathBuf::from(root).join(dir),
        _ => dir.to_path_buf(),
    }
}

/// Independent seed for one consumer of randomness within a run.
fn stream_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_DATA: u64 = 1;
const STREAM_MANUAL: u64 = 2;
const STREAM_CLASSIFIER: u64 = 3;
const STREAM_SPLIT: u64 = 4;
const STREAM_INIT: u64 = 5;
const STREAM_TRAIN: u64 = 6;
const STREAM_PROJECTION: u64 = 7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: ExperimentConfig,
    pub train: Vec<LossReport>,
    pub val: Vec<LossReport>,
    pub silhouette: f64,
    pub per_class: Vec<ClassScore>,
    pub classifier_accuracy: Option<f64>,
    pub normalization: Normalization,
    /// Auxiliary-loss evaluations, training and validation combined.
    pub aux_calls: usize,
    /// Training batches whose labels left the auxiliary term undefined.
    pub aux_skipped_batches: usize,
    pub projected_points: usize,
    pub class_names: Option<Vec<String>>,
    pub wall_time_secs: f64,
    pub checkpoint: PathBuf,
    #[serde(skip)]
    pub embedding: Option<Embedding2D>,
}

impl RunResult {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Final-epoch training reconstruction loss.
    pub fn final_reconstruction(&self) -> f64 {
        self.train.last().map(|r| r.l_rec).unwrap_or(f64::NAN)
    }
}

/// Labels for training: manual subset keeps its labels, the rest is either
/// pseudo-labelled or keeps ground truth. Returns the set, the manual
/// indices and the classifier accuracy when one was trained.
fn assign_labels(
    data: &LabeledImageSet,
    config: &ExperimentConfig,
) -> Result<(LabeledImageSet, Vec<usize>, Option<f64>)> {
    let labeled: Vec<usize> = (0..data.len()).filter(|&i| data.labels()[i] != UNLABELED).collect();
    if labeled.len() < 2 {
        return Err(Error::Data("need at least two labelled images".into()));
    }
    let labeled_labels: Vec<i32> = labeled.iter().map(|&i| data.labels()[i]).collect();
    let (manual_pos, _) = split_indices(
        &labeled_labels,
        SplitSpec {
            train_fraction: config.manual_fraction,
            seed: stream_seed(config.seed, STREAM_MANUAL),
        },
    )?;
    let manual: Vec<usize> = manual_pos.iter().map(|&p| labeled[p]).collect();
    let mut is_manual = vec![false; data.len()];
    for &i in &manual {
        is_manual[i] = true;
    }
    let rest: Vec<usize> = (0..data.len()).filter(|&i| !is_manual[i]).collect();
    let mut labels = data.labels().to_vec();
    let mut provenance = vec![Provenance::Manual; data.len()];
    let accuracy = match config.labeling {
        Labeling::GroundTruth => {
            if rest.iter().any(|&i| labels[i] == UNLABELED) {
                return Err(Error::Data("ground-truth labelling needs every image labelled".into()));
            }
            None
        }
        Labeling::Pseudo => {
            let clf_cfg = ClassifierConfig {
                class_count: data.class_count(),
                seed: stream_seed(config.seed, STREAM_CLASSIFIER),
                ..config.classifier.clone()
            };
            let manual_set = data.subset(&manual).relabeled(
                manual.iter().map(|&i| labels[i]).collect(),
                vec![Provenance::Manual; manual.len()],
            )?;
            let (clf, acc) = train_classifier(&manual_set, &clf_cfg)?;
            if !rest.is_empty() {
                let predicted = predict_labels(&clf, &data.subset(&rest).unlabeled())?;
                for (&i, &l) in rest.iter().zip(predicted.labels()) {
                    labels[i] = l;
                    provenance[i] = Provenance::Pseudo;
                }
            }
            Some(acc)
        }
    };
    let mut out = LabeledImageSet::new(data.images().clone(), labels, provenance, data.class_count())?;
    if let Some(names) = data.class_names() {
        out = out.with_class_names(names.to_vec());
    }
    Ok((out, manual, accuracy))
}

#[derive(Default)]
struct Tally {
    weight: f64,
    rec: f64,
    kl: f64,
    total: f64,
    aux: f64,
    aux_batches: usize,
}

impl Tally {
    fn report(&self, kind: ModelKind, aux: AuxLoss) -> LossReport {
        let w = self.weight.max(1e-300);
        let aux_mean = (self.aux_batches > 0).then(|| self.aux / self.aux_batches as f64);
        LossReport {
            l_rec: self.rec / w,
            l_kl: (kind == ModelKind::Vae).then(|| self.kl / w),
            l_cl: aux_mean.filter(|_| aux == AuxLoss::Clustering),
            l_con: aux_mean.filter(|_| aux == AuxLoss::Contrastive),
            soft_silhouette: aux_mean.filter(|_| aux == AuxLoss::Clustering).map(|l| 1.0 - l),
            total: self.total / w,
        }
    }
}

struct Counters {
    aux_calls: usize,
    skipped: usize,
}

fn distinct_labels(labels: &[i32]) -> usize {
    let mut v = labels.to_vec();
    v.sort_unstable();
    v.dedup();
    v.len()
}

/// Builds the weighted objective for one batch on `tape` and accumulates
/// its components into `tally`.
#[allow(clippy::too_many_arguments)]
fn batch_objective(
    model: &ModelParams,
    tape: &mut Tape<f32>,
    vars: &crate::models::Bound,
    images: Array<f32>,
    labels: &[i32],
    mode: &mut Mode<'_>,
    config: &ExperimentConfig,
    class_count: usize,
    epoch: usize,
    counters: &mut Counters,
    tally: &mut Tally,
) -> Result<Var> {
    let b = images.dim(0);
    let x = tape.constant(images);
    let encoded = model.encode_on(tape, vars, x, mode)?;
    let (z, embedding, kl) = match encoded {
        LatentVars::Latent(z) => (z, z, None),
        LatentVars::Gaussian { mu, log_var } => {
            let z = match mode {
                Mode::Train(rng) => {
                    let eps = sample_noise(tape.value(mu).shape(), rng);
                    reparameterize(tape, mu, log_var, &eps)?
                }
                Mode::Eval => mu,
            };
            let pixels = model.config().height * model.config().width;
            let kl = kl_loss(tape, mu, log_var, model.config().beta, pixels)?;
            (z, mu, Some(kl))
        }
    };
    let x_hat = model.decode_on(tape, vars, z)?;
    let rec = mse_loss(tape, x, x_hat)?;

    let aux_var = match config.aux {
        AuxLoss::None => None,
        AuxLoss::Clustering if clustering_defined(labels) => {
            counters.aux_calls += 1;
            Some(soft_silhouette_loss(tape, embedding, labels, class_count)?.loss)
        }
        AuxLoss::Contrastive if distinct_labels(labels) >= 2 => {
            counters.aux_calls += 1;
            Some(contrastive_loss(tape, embedding, labels, config.loss.margin)?)
        }
        _ => {
            if matches!(mode, Mode::Train(_)) {
                counters.skipped += 1;
            }
            None
        }
    };

    let (w_rec, w_aux) = loss_weights(&config.loss, config.aux, epoch);
    let base = match kl {
        Some(k) => tape.add(rec, k)?,
        None => rec,
    };
    let mut total = tape.mul_scalar(base, w_rec as f32);
    if let Some(a) = aux_var {
        let weighted = tape.mul_scalar(a, w_aux as f32);
        total = tape.add(total, weighted)?;
    }

    let bw = b as f64;
    tally.weight += bw;
    tally.rec += bw * f64::from(tape.scalar_value(rec));
    if let Some(k) = kl {
        tally.kl += bw * f64::from(tape.scalar_value(k));
    }
    if let Some(a) = aux_var {
        tally.aux += f64::from(tape.scalar_value(a));
        tally.aux_batches += 1;
    }
    tally.total += bw * f64::from(tape.scalar_value(total));
    Ok(total)
}

/// Runs the whole pipeline and writes its artifacts into the resolved
/// output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunResult> {
    let started = Instant::now();
    config.validate()?;
    let out_dir = config.resolved_output_dir();
    std::fs::create_dir_all(&out_dir)?;

    let data = config.dataset.load(stream_seed(config.seed, STREAM_DATA))?;
    let class_count = data.class_count();
    let (labeled, manual, classifier_accuracy) = assign_labels(&data, config)?;
    let (normed, normalization) = normalize(&labeled)?;
    let (train_idx, val_idx) = split_indices(
        normed.labels(),
        SplitSpec {
            train_fraction: 0.8,
            seed: stream_seed(config.seed, STREAM_SPLIT),
        },
    )?;
    let train = normed.subset(&train_idx);
    let val = normed.subset(&val_idx);

    let mut snapshot = config.clone();
    snapshot.model.height = data.height();
    snapshot.model.width = data.width();
    snapshot.classifier.class_count = class_count;
    snapshot.classifier.seed = stream_seed(config.seed, STREAM_CLASSIFIER);
    snapshot.projection.seed = stream_seed(config.seed, STREAM_PROJECTION);

    let mut model = build_model(&snapshot.model, stream_seed(config.seed, STREAM_INIT))?;
    let names: Vec<String> = model.names().to_vec();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut adam = AdamState::new(config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, STREAM_TRAIN));
    let mut counters = Counters { aux_calls: 0, skipped: 0 };
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut train_reports = Vec::with_capacity(config.epochs);
    let mut val_reports = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        adam.lr = config.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut tally = Tally::default();
        for (bi, batch) in order.chunks(config.batch_size).enumerate() {
            let labels: Vec<i32> = batch.iter().map(|&i| train.labels()[i]).collect();
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape);
            let loss = batch_objective(
                &model,
                &mut tape,
                &vars,
                train.images().select_outer(batch),
                &labels,
                &mut Mode::Train(&mut rng),
                config,
                class_count,
                epoch,
                &mut counters,
                &mut tally,
            )?;
            if !tape.scalar_value(loss).is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}, batch {bi}")));
            }
            let mut grads = tape.backward(loss)?;
            let grads: Vec<Array<f32>> = vars.vars.iter().map(|&v| grads.take(v)).collect();
            adam.update(model.tensors_mut(), &grads, &names)?;
        }
        train_reports.push(tally.report(config.model.kind, config.aux));

        let mut tally = Tally::default();
        let all: Vec<usize> = (0..val.len()).collect();
        for batch in all.chunks(config.batch_size) {
            let labels: Vec<i32> = batch.iter().map(|&i| val.labels()[i]).collect();
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape);
            batch_objective(
                &model,
                &mut tape,
                &vars,
                val.images().select_outer(batch),
                &labels,
                &mut Mode::Eval,
                config,
                class_count,
                epoch,
                &mut counters,
                &mut tally,
            )?;
        }
        val_reports.push(tally.report(config.model.kind, config.aux));
        let (t, v) = (&train_reports[epoch], &val_reports[epoch]);
        log::info!(
            "epoch {epoch}: train rec {:.5} total {:.5}, val rec {:.5} total {:.5}",
            t.l_rec,
            t.total,
            v.l_rec,
            v.total
        );
    }

    let manual_set = normed.subset(&manual);
    let codes = model.embed(manual_set.images(), config.batch_size)?;
    let embedding = project(&codes, manual_set.labels(), &snapshot.projection)?;
    let score = silhouette_score(&embedding.coords, &embedding.labels)?;

    let checkpoint = out_dir.join(CHECKPOINT_FILE);
    save_checkpoint(&model, &checkpoint)?;
    let mut result = RunResult {
        config: snapshot,
        train: train_reports,
        val: val_reports,
        silhouette: score.silhouette,
        per_class: score.per_class,
        classifier_accuracy,
        normalization,
        aux_calls: counters.aux_calls,
        aux_skipped_batches: counters.skipped,
        projected_points: embedding.len(),
        class_names: data.class_names().map(<[String]>::to_vec),
        wall_time_secs: 0.0,
        checkpoint,
        embedding: Some(embedding),
    };
    emit_plots(&result, &out_dir)?;
    result.wall_time_secs = started.elapsed().as_secs_f64();
    std::fs::write(out_dir.join(RESULT_FILE), serde_json::to_string_pretty(&result)?)?;
    log::info!(
        "run finished in {:.1}s, projection silhouette {:.4}",
        result.wall_time_secs,
        result.silhouette
    );
    Ok(result)
}

/// Loads a finished run directory: its result record, embedding and model.
pub fn load_run(dir: impl AsRef<Path>) -> Result<(RunResult, ModelParams)> {
    let dir = dir.as_ref();
    let mut result = RunResult::read(dir.join(RESULT_FILE))?;
    result.embedding = Some(Embedding2D::read_csv(std::fs::File::open(dir.join(EMBEDDING_CSV))?)?);
    let model = load_checkpoint(dir.join(CHECKPOINT_FILE), &result.config.model)?;
    Ok((result, model))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny(dir: &Path, aux: AuxLoss) -> ExperimentConfig {
        ExperimentConfig {
            dataset: DatasetConfig::Splash { n: 120 },
            model: ModelConfig {
                latent_dim: 32,
                ..Default::default()
            },
            aux,
            epochs: 2,
            batch_size: 32,
            lr: 1e-3,
            seed: 3,
            output_dir: dir.to_path_buf(),
            labeling: Labeling::GroundTruth,
            manual_fraction: 0.5,
            projection: ProjectionConfig {
                n_neighbors: 8,
                epochs: 50,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn defaults_and_json_parsing() {
        let c = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!((c.epochs, c.batch_size, c.lr), (100, 128, 0.0005));
        assert_eq!(c.loss.lambda_cl, 0.2);
        assert_eq!(c.lr_scheduler, LrScheduler::None);
        let c = ExperimentConfig::from_json(
            r#"{"dataset": {"kind": "idx", "images": "a", "labels": "b"}, "aux": "contrastive",
                "model": {"kind": "vae", "latent_dim": 64}, "lr_scheduler": "step"}"#,
        )
        .unwrap();
        assert_eq!(c.aux, AuxLoss::Contrastive);
        assert_eq!(c.model.kind, ModelKind::Vae);
        assert!(ExperimentConfig::from_json(r#"{"epoch": 3}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"model": {"latent_dim": 100}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"aux": "both"}"#).is_err());
    }

    #[test]
    fn step_schedule_halves_every_thirty_epochs() {
        let c = ExperimentConfig {
            lr_scheduler: LrScheduler::Step,
            ..Default::default()
        };
        assert_eq!(c.lr_at(0), 0.0005);
        assert_eq!(c.lr_at(29), 0.0005);
        assert_eq!(c.lr_at(30), 0.00025);
        assert_eq!(c.lr_at(65), 0.000125);
        assert_eq!(ExperimentConfig::default().lr_at(99), 0.0005);
    }

    #[test]
    fn stream_seeds_differ() {
        let s: std::collections::BTreeSet<u64> = (1..8).map(|k| stream_seed(0, k)).collect();
        assert_eq!(s.len(), 7);
        assert_ne!(stream_seed(1, 1), stream_seed(2, 1));
    }

    #[test]
    fn baseline_never_calls_aux_and_records_every_epoch() {
        let dir = tempfile::tempdir().unwrap();
        let r = run_experiment(&tiny(dir.path(), AuxLoss::None)).unwrap();
        assert_eq!(r.aux_calls, 0);
        assert_eq!(r.train.len(), 2);
        assert_eq!(r.val.len(), 2);
        assert!((-1.0..=1.0).contains(&r.silhouette));
        assert!(r.train.iter().all(|t| t.l_con.is_none() && t.l_cl.is_none()));
        for f in [LOSS_CSV, LOSS_SVG, PROJECTION_SVG, EMBEDDING_CSV, CHECKPOINT_FILE, RESULT_FILE] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let (loaded, model) = load_run(dir.path()).unwrap();
        assert_eq!(loaded.train, r.train);
        assert_eq!(loaded.embedding, r.embedding);
        assert_eq!(model.config(), &r.config.model);
    }

    #[test]
    fn aux_runs_report_their_term() {
        for aux in [AuxLoss::Clustering, AuxLoss::Contrastive] {
            let dir = tempfile::tempdir().unwrap();
            let r = run_experiment(&tiny(dir.path(), aux)).unwrap();
            assert!(r.aux_calls > 0);
            let t = &r.train[1];
            match aux {
                AuxLoss::Clustering => {
                    let l = t.l_cl.unwrap();
                    assert!((0.0..=2.0).contains(&l));
                    assert!((t.soft_silhouette.unwrap() - (1.0 - l)).abs() < 1e-12);
                }
                _ => assert!(t.l_con.unwrap() >= 0.0),
            }
        }
    }

    #[test]
    fn vae_and_pseudo_labels_run() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tiny(dir.path(), AuxLoss::Contrastive);
        c.model.kind = ModelKind::Vae;
        c.dataset = DatasetConfig::Channels { n: 150 };
        c.labeling = Labeling::Pseudo;
        c.classifier.accuracy_gate = 0.5;
        c.classifier.epochs = 10;
        let r = run_experiment(&c).unwrap();
        assert!(r.classifier_accuracy.unwrap() >= 0.5);
        assert!(r.train.iter().all(|t| t.l_kl.is_some()));
    }

    #[test]
    fn single_class_batches_skip_the_aux_term() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tiny(dir.path(), AuxLoss::Clustering);
        c.batch_size = 2;
        c.epochs = 1;
        let r = run_experiment(&c).unwrap();
        // Pairs of images rarely share a label, so many batches are skipped.
        assert!(r.aux_skipped_batches > 0);
    }

    #[test]
    fn output_root_override_applies_to_relative_dirs() {
        let abs = std::env::temp_dir().join("x");
        assert_eq!(resolve_output_dir(&abs), abs);
    }
}
