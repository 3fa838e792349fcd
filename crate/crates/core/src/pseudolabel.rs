//! Small CNN classifier that turns the hand-labelled subset into labels for
//! the rest of the ensemble.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{split_indices, LabeledImageSet, Provenance, SplitSpec};
use crate::error::{Error, Result};
use crate::ndmath::{AdamState, Array, Tape, Var};

const FILTERS: usize = 32;
const LAYERS: usize = 3;
const EVAL_BATCH: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub class_count: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub accuracy_gate: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            class_count: 0,
            epochs: 20,
            batch_size: 32,
            lr: 2e-3,
            accuracy_gate: 0.95,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.accuracy_gate > 0.0 && self.accuracy_gate <= 1.0) {
            return Err(Error::Config(format!(
                "accuracy_gate must lie in (0, 1], got {}",
                self.accuracy_gate
            )));
        }
        if self.class_count < 2 {
            return Err(Error::Config("a classifier needs at least two classes".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Trained classifier weights plus the input scaling learned from its
/// training split.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    config: ClassifierConfig,
    height: usize,
    width: usize,
    mean: f32,
    std: f32,
    names: Vec<String>,
    params: Vec<Array<f32>>,
    validation_accuracy: f64,
}

fn init_params(c: usize, rng: &mut ChaCha8Rng) -> (Vec<String>, Vec<Array<f32>>) {
    let mut names = Vec::new();
    let mut params = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, fan_in: usize, rng: &mut ChaCha8Rng| {
        let bound = (1.0 / fan_in as f64).sqrt() as f32;
        let len = shape.iter().product();
        let data = (0..len).map(|_| rng.random_range(-bound..=bound)).collect();
        names.push(name);
        params.push(Array::new(&shape, data).expect("length matches shape"));
    };
    let mut cin = 1;
    for i in 0..LAYERS {
        push(format!("conv{i}.weight"), vec![FILTERS, cin, 3, 3], cin * 9, rng);
        push(format!("conv{i}.bias"), vec![FILTERS], cin * 9, rng);
        cin = FILTERS;
    }
    push("head.weight".into(), vec![c, FILTERS], FILTERS, rng);
    push("head.bias".into(), vec![c], FILTERS, rng);
    (names, params)
}

fn logits(tape: &mut Tape<f32>, vars: &[Var], x: Var) -> Result<Var> {
    let mut h = x;
    for i in 0..LAYERS {
        h = tape.conv2d(h, vars[2 * i], vars[2 * i + 1], 2, 1)?;
        h = tape.relu(h);
    }
    let pooled = tape.global_avg_pool(h)?;
    tape.linear(pooled, vars[2 * LAYERS], vars[2 * LAYERS + 1])
}

/// Index of the largest entry; ties go to the lower index.
pub fn argmax(row: &[f32]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

impl Classifier {
    pub fn validation_accuracy(&self) -> f64 {
        self.validation_accuracy
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn passes_gate(&self) -> bool {
        self.validation_accuracy >= self.config.accuracy_gate
    }

    fn scaled(&self, images: &Array<f32>) -> Array<f32> {
        let (m, s) = (self.mean, self.std);
        images.map(|v| (v - m) / s)
    }

    /// Class scores `[N, C]` for a batch of images.
    pub fn logits(&self, images: &Array<f32>) -> Result<Array<f32>> {
        let shape = images.shape();
        if shape.len() != 4 || shape[1..] != [1, self.height, self.width] {
            return Err(Error::shape(
                "classifier",
                format!("expected [N, 1, {}, {}], got {shape:?}", self.height, self.width),
            ));
        }
        let n = shape[0];
        let mut out = Vec::with_capacity(n * self.config.class_count);
        let mut start = 0;
        while start < n {
            let end = (start + EVAL_BATCH).min(n);
            let mut tape = Tape::new();
            let vars: Vec<Var> = self.params.iter().map(|p| tape.constant(p.clone())).collect();
            let x = tape.constant(self.scaled(&images.slice_outer(start, end)));
            let y = logits(&mut tape, &vars, x)?;
            out.extend_from_slice(tape.value(y).data());
            start = end;
        }
        Array::new(&[n, self.config.class_count], out)
    }

    /// Argmax class per image.
    pub fn predict(&self, images: &Array<f32>) -> Result<Vec<usize>> {
        let l = self.logits(images)?;
        Ok((0..l.dim(0)).map(|i| argmax(l.row(i))).collect())
    }
}

fn accuracy(clf: &Classifier, set: &LabeledImageSet) -> Result<f64> {
    let pred = clf.predict(set.images())?;
    let hits = pred
        .iter()
        .zip(set.labels())
        .filter(|&(&p, &l)| p as i32 == l)
        .count();
    Ok(hits as f64 / set.len().max(1) as f64)
}

/// Trains on an 80/20 stratified split of `set` and reports the held-out
/// accuracy, without enforcing the gate.
pub fn fit_classifier(set: &LabeledImageSet, config: &ClassifierConfig) -> Result<Classifier> {
    config.validate()?;
    if set.provenance().iter().any(|&p| p != Provenance::Manual) {
        return Err(Error::Data("the classifier trains on manually labelled images only".into()));
    }
    let c = config.class_count;
    let mut present = vec![false; c];
    for &l in set.labels() {
        if l < 0 || l as usize >= c {
            return Err(Error::Data(format!("label {l} outside [0, {c})")));
        }
        present[l as usize] = true;
    }
    if let Some(missing) = present.iter().position(|&p| !p) {
        return Err(Error::Data(format!("class {missing} has no labelled examples")));
    }
    let (train_idx, val_idx) = split_indices(
        set.labels(),
        SplitSpec {
            train_fraction: 0.8,
            seed: config.seed,
        },
    )?;
    let train = set.subset(&train_idx);
    let val = set.subset(&val_idx);

    let pixels = train.images().data();
    let mean = pixels.iter().map(|&v| f64::from(v)).sum::<f64>() / pixels.len() as f64;
    let var = pixels.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / pixels.len() as f64;
    let std = var.sqrt().max(1e-6);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (names, params) = init_params(c, &mut rng);
    let mut clf = Classifier {
        config: config.clone(),
        height: set.height(),
        width: set.width(),
        mean: mean as f32,
        std: std as f32,
        names,
        params,
        validation_accuracy: 0.0,
    };
    let name_refs: Vec<String> = clf.names.clone();
    let name_refs: Vec<&str> = name_refs.iter().map(String::as_str).collect();
    let mut adam = AdamState::new(config.lr);
    let scaled = clf.scaled(train.images());
    let labels: Vec<usize> = train.labels().iter().map(|&l| l as usize).collect();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let vars: Vec<Var> = clf.params.iter().map(|p| tape.param(p.clone())).collect();
            let x = tape.constant(scaled.select_outer(batch));
            let y = logits(&mut tape, &vars, x)?;
            let batch_labels: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let loss = tape.softmax_cross_entropy(y, &batch_labels)?;
            if !tape.scalar_value(loss).is_finite() {
                return Err(Error::NonFinite(format!("classifier loss at epoch {epoch}")));
            }
            let mut g = tape.backward(loss)?;
            let grads: Vec<Array<f32>> = vars.iter().map(|&v| g.take(v)).collect();
            adam.update(&mut clf.params, &grads, &name_refs)?;
        }
        log::debug!("classifier epoch {epoch} done");
    }
    clf.validation_accuracy = accuracy(&clf, &val)?;
    log::info!("classifier held-out accuracy {:.4}", clf.validation_accuracy);
    Ok(clf)
}

/// [`fit_classifier`], failing with a gate error when the held-out accuracy
/// is below `accuracy_gate`.
pub fn train_classifier(set: &LabeledImageSet, config: &ClassifierConfig) -> Result<(Classifier, f64)> {
    let clf = fit_classifier(set, config)?;
    let acc = clf.validation_accuracy;
    if !clf.passes_gate() {
        return Err(Error::Gate {
            achieved: acc,
            required: config.accuracy_gate,
        });
    }
    Ok((clf, acc))
}

/// Labels every image of `set` with the classifier's argmax and marks it as
/// pseudo-labelled. Refuses classifiers that did not pass their gate.
pub fn predict_labels(clf: &Classifier, set: &LabeledImageSet) -> Result<LabeledImageSet> {
    if !clf.passes_gate() {
        return Err(Error::Gate {
            achieved: clf.validation_accuracy,
            required: clf.config.accuracy_gate,
        });
    }
    let pred = clf.predict(set.images())?;
    let labels = pred.into_iter().map(|p| p as i32).collect();
    let class_count = set.class_count().max(clf.config.class_count);
    let mut out = LabeledImageSet::new(
        set.images().clone(),
        labels,
        vec![Provenance::Pseudo; set.len()],
        class_count,
    )?;
    if let Some(names) = set.class_names() {
        out = out.with_class_names(names.to_vec());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::generate_channels;

    fn toy(n: usize) -> LabeledImageSet {
        // Class 0 is bright on top, class 1 bright at the bottom.
        let (h, w) = (12, 12);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let c = i % 2;
            for y in 0..h {
                for x in 0..w {
                    let top = y < h / 2;
                    let v = if top == (c == 0) { 0.9 } else { 0.1 };
                    data.push(v + 0.01 * ((x * 7 + y * 3 + i) % 5) as f32);
                }
            }
            labels.push(c as i32);
        }
        LabeledImageSet::new(
            Array::new(&[n, 1, h, w], data).unwrap(),
            labels,
            vec![Provenance::Manual; n],
            2,
        )
        .unwrap()
    }

    fn cfg(c: usize) -> ClassifierConfig {
        ClassifierConfig {
            class_count: c,
            epochs: 15,
            seed: 1,
            ..Default::default()
        }
    }

    #[test]
    fn separable_toy_is_learned_perfectly() {
        let set = toy(60);
        let (clf, acc) = train_classifier(&set, &cfg(2)).unwrap();
        assert_eq!(acc, 1.0);
        let (again, acc2) = train_classifier(&set, &cfg(2)).unwrap();
        assert_eq!(acc, acc2);
        assert_eq!(clf, again);
        let out = predict_labels(&clf, &set.unlabeled()).unwrap();
        assert!(out.provenance().iter().all(|&p| p == Provenance::Pseudo));
        assert_eq!(out.labels(), set.labels());
        assert_eq!(out, predict_labels(&clf, &set.unlabeled()).unwrap());
    }

    #[test]
    fn gate_is_enforced() {
        let set = toy(40);
        let mut c = cfg(2);
        c.epochs = 1;
        c.lr = 0.0;
        c.accuracy_gate = 1.0;
        let clf = fit_classifier(&set, &c).unwrap();
        if clf.validation_accuracy() < 1.0 {
            assert!(matches!(train_classifier(&set, &c), Err(Error::Gate { .. })));
            assert!(matches!(predict_labels(&clf, &set), Err(Error::Gate { .. })));
        }
        let mut untrained = clf.clone();
        untrained.validation_accuracy = 0.5;
        match predict_labels(&untrained, &set) {
            Err(Error::Gate { achieved, required }) => {
                assert_eq!(achieved, 0.5);
                assert_eq!(required, 1.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_class_and_bad_provenance_are_rejected() {
        let set = toy(20);
        assert!(fit_classifier(&set, &cfg(3)).is_err());
        let pseudo = set.relabeled(set.labels().to_vec(), vec![Provenance::Pseudo; 20]).unwrap();
        assert!(fit_classifier(&pseudo, &cfg(2)).is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.5, 0.5, 0.1]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let set = toy(20);
        let (clf, _) = train_classifier(&set, &cfg(2)).unwrap();
        let other = generate_channels(5, 0).unwrap();
        assert!(predict_labels(&clf, &other).is_err());
    }
}
