//! Image sets: synthetic ensemble stand-ins, IDX ingestion, normalization and
//! train/validation splitting.

mod idx;
mod synthetic;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndmath::Array;

pub use idx::{
    idx_bytes, load_idx, parse_idx_images, parse_idx_labels, set_from_idx_bytes, write_idx,
    write_idx_images, write_idx_labels,
    IdxImages, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
};
pub use synthetic::{
    generate_channels, generate_splash, CHANNELS_CLASSES, CHANNELS_SIDE, SPLASH_CLASSES,
    SPLASH_CLASS_NAMES, SPLASH_HEIGHT, SPLASH_WIDTH,
};

/// Label value carried by unlabelled images.
pub const UNLABELED: i32 = -1;

/// Where an image's label came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Manual,
    Pseudo,
    Unlabeled,
}

/// Monochrome images `[N, 1, H, W]` with per-image labels and provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImageSet {
    images: Array<f32>,
    labels: Vec<i32>,
    provenance: Vec<Provenance>,
    class_count: usize,
    class_names: Option<Vec<String>>,
}

impl LabeledImageSet {
    pub fn new(
        images: Array<f32>,
        labels: Vec<i32>,
        provenance: Vec<Provenance>,
        class_count: usize,
    ) -> Result<Self> {
        let &[n, 1, h, w] = images.shape() else {
            return Err(Error::Data(format!(
                "images must be [N, 1, H, W], got {:?}",
                images.shape()
            )));
        };
        if n == 0 || h == 0 || w == 0 {
            return Err(Error::Data("image set is empty".into()));
        }
        if labels.len() != n || provenance.len() != n {
            return Err(Error::Data(format!(
                "{n} images but {} labels and {} provenance flags",
                labels.len(),
                provenance.len()
            )));
        }
        for (i, (&l, &p)) in labels.iter().zip(&provenance).enumerate() {
            let ok = if p == Provenance::Unlabeled {
                l == UNLABELED
            } else {
                l >= 0 && (l as usize) < class_count
            };
            if !ok {
                return Err(Error::Data(format!(
                    "image {i}: label {l} inconsistent with provenance {p:?} and {class_count} classes"
                )));
            }
        }
        Ok(Self {
            images,
            labels,
            provenance,
            class_count,
            class_names: None,
        })
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Self {
        self.class_names = Some(names);
        self
    }

    pub fn images(&self) -> &Array<f32> {
        &self.images
    }

    pub fn labels(&self) -> &[i32] {
        &self.labels
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn height(&self) -> usize {
        self.images.dim(2)
    }

    pub fn width(&self) -> usize {
        self.images.dim(3)
    }

    /// Labels as class indices; errors if any image is unlabelled.
    pub fn class_indices(&self) -> Result<Vec<usize>> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                usize::try_from(l).map_err(|_| Error::Data(format!("image {i} is unlabelled")))
            })
            .collect()
    }

    /// The images at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            images: self.images.select_outer(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            provenance: indices.iter().map(|&i| self.provenance[i]).collect(),
            class_count: self.class_count,
            class_names: self.class_names.clone(),
        }
    }

    /// Same images, new labels and provenance.
    pub fn relabeled(&self, labels: Vec<i32>, provenance: Vec<Provenance>) -> Result<Self> {
        let mut out = Self::new(self.images.clone(), labels, provenance, self.class_count)?;
        out.class_names = self.class_names.clone();
        Ok(out)
    }

    /// Drops labels, marking every image unlabelled.
    pub fn unlabeled(&self) -> Self {
        let n = self.len();
        let mut out = self.clone();
        out.labels = vec![UNLABELED; n];
        out.provenance = vec![Provenance::Unlabeled; n];
        out
    }

    pub(crate) fn with_images(&self, images: Array<f32>) -> Self {
        Self {
            images,
            ..self.clone()
        }
    }
}

/// Whole-set scalar statistics used to standardize pixel values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: f64,
    pub std: f64,
}

impl Normalization {
    /// Maps raw pixels into the normalized space.
    pub fn apply(&self, images: &Array<f32>) -> Array<f32> {
        let (m, s) = (self.mean, self.std);
        images.map(|v| ((f64::from(v) - m) / s) as f32)
    }

    /// Maps normalized values back to raw pixels.
    pub fn invert(&self, images: &Array<f32>) -> Array<f32> {
        let (m, s) = (self.mean, self.std);
        images.map(|v| (f64::from(v) * s + m) as f32)
    }
}

/// Standardizes all pixels with one global mean and (population) standard
/// deviation, returning the statistics for later inversion.
pub fn normalize(set: &LabeledImageSet) -> Result<(LabeledImageSet, Normalization)> {
    let data = set.images.data();
    let n = data.len() as f64;
    let mean = data.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let var = data
        .iter()
        .map(|&v| (f64::from(v) - mean).powi(2))
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    if !(std > 1e-12) {
        return Err(Error::Data(
            "cannot normalize a constant image set (std = 0)".into(),
        ));
    }
    let stats = Normalization { mean, std };
    Ok((set.with_images(stats.apply(&set.images)), stats))
}

/// Train/validation split parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

/// Stratified seeded split into train and validation index lists (each
/// ascending). Classes with at least two members appear on both sides;
/// singletons go to train with a warning. Unlabelled images form one stratum.
pub fn split_indices(labels: &[i32], spec: SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if labels.len() < 2 {
        return Err(Error::Data(format!(
            "need at least 2 images to split, got {}",
            labels.len()
        )));
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie in (0, 1), got {}",
            spec.train_fraction
        )));
    }
    let mut strata: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        strata.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (label, mut members) in strata {
        members.shuffle(&mut rng);
        let n = members.len();
        if n == 1 {
            log::warn!("class {label} has a single member; it goes to the training split");
            train.extend(members);
            continue;
        }
        let n_train = ((n as f64 * spec.train_fraction).round() as usize).clamp(1, n - 1);
        val.extend_from_slice(&members[n_train..]);
        train.extend(members.into_iter().take(n_train));
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// [`split_indices`] applied to a set.
pub fn split(set: &LabeledImageSet, spec: SplitSpec) -> Result<(LabeledImageSet, LabeledImageSet)> {
    let (train, val) = split_indices(set.labels(), spec)?;
    Ok((set.subset(&train), set.subset(&val)))
}
