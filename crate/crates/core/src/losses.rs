//! Training objectives, all built from tape operations so they differentiate
//! through the same reverse pass as the model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndmath::{Array, Scalar, Tape, Var};

/// Stabilizer added to `max(a, b)` in the silhouette denominator.
pub const SILHOUETTE_EPS: f64 = 1e-9;

/// Auxiliary objective trained alongside reconstruction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxLoss {
    #[default]
    None,
    Clustering,
    Contrastive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_cl: f64,
    pub lambda_con: f64,
    pub margin: f64,
    pub adaptive: bool,
    pub pretrain_epochs: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_cl: 0.2,
            lambda_con: 0.2,
            margin: 1.0,
            adaptive: false,
            pretrain_epochs: 0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_cl >= 0.0 && self.lambda_cl.is_finite()) {
            return Err(Error::Config(format!("lambda_cl must be >= 0, got {}", self.lambda_cl)));
        }
        if !(self.lambda_con >= 0.0 && self.lambda_con.is_finite()) {
            return Err(Error::Config(format!("lambda_con must be >= 0, got {}", self.lambda_con)));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!("margin must be > 0, got {}", self.margin)));
        }
        Ok(())
    }
}

/// Loss components of one batch or epoch. Terms that were not computed are
/// `None`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_rec: f64,
    pub l_cl: Option<f64>,
    pub l_con: Option<f64>,
    pub l_kl: Option<f64>,
    pub soft_silhouette: Option<f64>,
    pub total: f64,
}

impl LossReport {
    /// Auxiliary term that is present, if any. Both present is an error.
    pub fn aux(&self) -> Result<Option<f64>> {
        match (self.l_cl, self.l_con) {
            (Some(_), Some(_)) => Err(Error::Config(
                "clustering and contrastive losses cannot be combined in one run".into(),
            )),
            (cl, con) => Ok(cl.or(con)),
        }
    }
}

/// Per-point silhouette pieces from [`soft_silhouette`]. `mask[i]` is false
/// for points whose label has a single member in the batch; those points do
/// not enter the mean.
#[derive(Clone, Debug, PartialEq)]
pub struct SilhouetteTerms {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub s: Vec<f64>,
    pub mask: Vec<bool>,
}

/// Tape handles for the loss and its per-point pieces.
#[derive(Clone, Copy, Debug)]
pub struct SilhouetteVars {
    pub loss: Var,
    pub a: Var,
    pub b: Var,
    pub s: Var,
}

/// Mean squared error over all elements.
pub fn mse_loss<T: Scalar>(tape: &mut Tape<T>, x: Var, x_hat: Var) -> Result<Var> {
    tape.mse(x_hat, x)
}

/// KL divergence of `N(mu, exp(log_var))` from the unit Gaussian, averaged
/// over the batch, then scaled by `beta * latent_dim / (height * width)`.
pub fn kl_loss<T: Scalar>(
    tape: &mut Tape<T>,
    mu: Var,
    log_var: Var,
    beta: f64,
    image_pixels: usize,
) -> Result<Var> {
    let shape = tape.value(mu).shape().to_vec();
    if shape.len() != 2 || tape.value(log_var).shape() != shape.as_slice() {
        return Err(Error::shape(
            "kl_loss",
            format!("mu {:?} vs log_var {:?}", shape, tape.value(log_var).shape()),
        ));
    }
    let (batch, latent) = (shape[0], shape[1]);
    let m2 = tape.square(mu);
    let var = tape.exp(log_var);
    let t = tape.add(m2, var)?;
    let t = tape.sub(t, log_var)?;
    let s = tape.sum(t);
    let raw = tape.mul_scalar(s, T::of(0.5 / batch as f64));
    let raw = tape.add_scalar(raw, T::of(-0.5 * latent as f64));
    Ok(tape.mul_scalar(raw, T::of(beta * latent as f64 / image_pixels as f64)))
}

/// One-hot membership matrix `[N, k]`. Labels must lie in `[0, k)`.
pub fn one_hot<T: Scalar>(labels: &[i32], k: usize) -> Result<Array<T>> {
    let mut m = Array::zeros(&[labels.len(), k]);
    for (i, &l) in labels.iter().enumerate() {
        if l < 0 || l as usize >= k {
            return Err(Error::Data(format!("label {l} outside [0, {k})")));
        }
        m.data_mut()[i * k + l as usize] = T::one();
    }
    Ok(m)
}

fn membership_labels<T: Scalar>(membership: &Array<T>, n: usize) -> Result<(Vec<usize>, usize)> {
    let k = match *membership.shape() {
        [rows, k] if rows == n => k,
        _ => {
            return Err(Error::shape(
                "soft_silhouette",
                format!("membership {:?} for {n} points", membership.shape()),
            ))
        }
    };
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let row = membership.row(i);
        let ones: Vec<usize> = (0..k).filter(|&j| row[j] == T::one()).collect();
        let zeros = row.iter().filter(|&&v| v == T::zero()).count();
        if ones.len() != 1 || zeros != k - 1 {
            return Err(Error::Data(format!(
                "membership row {i} is not one-hot; only hard assignments are supported"
            )));
        }
        labels.push(ones[0]);
    }
    Ok((labels, k))
}

/// Whether [`soft_silhouette`] is defined for these labels: at least two
/// distinct labels and at least one label with two or more members.
pub fn clustering_defined(labels: &[i32]) -> bool {
    let mut sorted = labels.to_vec();
    sorted.sort_unstable();
    let distinct = {
        let mut d = sorted.clone();
        d.dedup();
        d.len()
    };
    distinct >= 2 && sorted.windows(2).any(|w| w[0] == w[1])
}

/// Differentiable silhouette loss `1 - mean(s)` over a membership matrix.
///
/// Distances come from the tape's pairwise-distance op; `S = D · M` gives each
/// point's summed distance to every cluster. Dividing by cluster sizes (own
/// cluster excluding the point) and gathering with masked row minima yields
/// `a` and `b`, so every step stays on the tape.
pub fn soft_silhouette<T: Scalar>(
    tape: &mut Tape<T>,
    z: Var,
    membership: &Array<T>,
) -> Result<SilhouetteVars> {
    let n = match *tape.value(z).shape() {
        [n, _] => n,
        _ => return Err(Error::shape("soft_silhouette", "expected [N, D] latent batch")),
    };
    let (labels, k) = membership_labels(membership, n)?;
    let mut counts = vec![0usize; k];
    for &l in &labels {
        counts[l] += 1;
    }
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::SingleCluster);
    }
    let mask: Vec<bool> = labels.iter().map(|&l| counts[l] >= 2).collect();
    let active = mask.iter().filter(|&&m| m).count();
    if active < 2 {
        return Err(Error::Data(
            "soft silhouette needs a label with at least two members in the batch".into(),
        ));
    }

    let mut scale = vec![T::zero(); n * k];
    let mut own = vec![false; n * k];
    let mut other = vec![false; n * k];
    for (i, &l) in labels.iter().enumerate() {
        for c in 0..k {
            let idx = i * k + c;
            if c == l {
                own[idx] = true;
                if counts[c] >= 2 {
                    scale[idx] = T::of(1.0 / (counts[c] - 1) as f64);
                }
            } else if counts[c] > 0 {
                other[idx] = true;
                scale[idx] = T::of(1.0 / counts[c] as f64);
            }
        }
    }

    let d = tape.pairwise_distances(z)?;
    let m = tape.constant(membership.clone());
    let sums = tape.matmul(d, m)?;
    let scale = tape.constant(Array::new(&[n, k], scale)?);
    let means = tape.mul(sums, scale)?;
    let a = tape.row_min(means, &own)?;
    let b = tape.row_min(means, &other)?;
    let num = tape.sub(b, a)?;
    let den = tape.maximum(a, b)?;
    let den = tape.add_scalar(den, T::of(SILHOUETTE_EPS));
    let s = tape.div(num, den)?;
    let weights: Vec<T> = mask
        .iter()
        .map(|&keep| if keep { T::one() } else { T::zero() })
        .collect();
    let weights = tape.constant(Array::new(&[n], weights)?);
    let kept = tape.mul(s, weights)?;
    let total = tape.sum(kept);
    let mean = tape.mul_scalar(total, T::of(-1.0 / active as f64));
    let loss = tape.add_scalar(mean, T::one());
    Ok(SilhouetteVars { loss, a, b, s })
}

/// [`soft_silhouette`] with one-hot memberships from integer labels in `[0, k)`.
pub fn soft_silhouette_loss<T: Scalar>(
    tape: &mut Tape<T>,
    z: Var,
    labels: &[i32],
    k: usize,
) -> Result<SilhouetteVars> {
    let m = one_hot(labels, k)?;
    soft_silhouette(tape, z, &m)
}

/// Evaluates the soft silhouette loss on plain values, returning the loss
/// and its per-point pieces.
pub fn soft_silhouette_value<T: Scalar>(
    z: &Array<T>,
    labels: &[i32],
    k: usize,
) -> Result<(f64, SilhouetteTerms)> {
    let mut tape = Tape::<T>::new();
    let zv = tape.constant(z.clone());
    let vars = soft_silhouette_loss(&mut tape, zv, labels, k)?;
    let mut counts = vec![0usize; k];
    for &l in labels {
        counts[l as usize] += 1;
    }
    let collect = |v: Var| tape.value(v).data().iter().map(|x| x.f64()).collect::<Vec<_>>();
    let terms = SilhouetteTerms {
        a: collect(vars.a),
        b: collect(vars.b),
        s: collect(vars.s),
        mask: labels.iter().map(|&l| counts[l as usize] >= 2).collect(),
    };
    Ok((tape.scalar_value(vars.loss).f64(), terms))
}

/// Margin contrastive loss averaged over all unordered pairs: `D²` for
/// same-label pairs, `max(0, margin - D)²` otherwise.
pub fn contrastive_loss<T: Scalar>(
    tape: &mut Tape<T>,
    z: Var,
    labels: &[i32],
    margin: f64,
) -> Result<Var> {
    let n = match *tape.value(z).shape() {
        [n, _] => n,
        _ => return Err(Error::shape("contrastive_loss", "expected [N, D] latent batch")),
    };
    if labels.len() != n {
        return Err(Error::shape(
            "contrastive_loss",
            format!("{n} points but {} labels", labels.len()),
        ));
    }
    if n < 2 {
        return Err(Error::Data(format!("contrastive loss needs at least 2 points, got {n}")));
    }
    let mut pos = vec![T::zero(); n * n];
    let mut neg = vec![T::zero(); n * n];
    for i in 0..n {
        for j in i + 1..n {
            if labels[i] == labels[j] {
                pos[i * n + j] = T::one();
            } else {
                neg[i * n + j] = T::one();
            }
        }
    }
    let d = tape.pairwise_distances(z)?;
    let d2 = tape.square(d);
    let pos = tape.constant(Array::new(&[n, n], pos)?);
    let pull = tape.mul(d2, pos)?;
    let gap = tape.mul_scalar(d, -T::one());
    let gap = tape.add_scalar(gap, T::of(margin));
    let gap = tape.relu(gap);
    let gap2 = tape.square(gap);
    let neg = tape.constant(Array::new(&[n, n], neg)?);
    let push = tape.mul(gap2, neg)?;
    let both = tape.add(pull, push)?;
    let total = tape.sum(both);
    let pairs = (n * (n - 1) / 2) as f64;
    Ok(tape.mul_scalar(total, T::of(1.0 / pairs)))
}

/// Linear hand-over from reconstruction to the auxiliary objective at 0.01
/// per epoch.
pub fn adaptive_weights(epoch: usize) -> (f64, f64) {
    let t = 0.01 * epoch as f64;
    ((1.0 - t).max(0.0), t.min(1.0))
}

/// Weights `(w_rec, w_aux)` applied to `(L_rec + L_kl)` and the auxiliary
/// loss for `epoch`. Adaptive mode replaces the λ coefficients entirely.
pub fn loss_weights(config: &LossConfig, aux: AuxLoss, epoch: usize) -> (f64, f64) {
    let (w_rec, w_aux) = if config.adaptive {
        adaptive_weights(epoch)
    } else {
        let lambda = match aux {
            AuxLoss::None => 0.0,
            AuxLoss::Clustering => config.lambda_cl,
            AuxLoss::Contrastive => config.lambda_con,
        };
        (1.0, lambda)
    };
    if aux == AuxLoss::None || epoch < config.pretrain_epochs {
        (w_rec, 0.0)
    } else {
        (w_rec, w_aux)
    }
}

/// Combines the components of `report` as the training objective does.
/// Which auxiliary loss is active follows from which term is present.
pub fn total_loss(report: &LossReport, config: &LossConfig, epoch: usize) -> Result<f64> {
    let aux_value = report.aux()?;
    let aux = match (report.l_cl, report.l_con) {
        (Some(_), _) => AuxLoss::Clustering,
        (_, Some(_)) => AuxLoss::Contrastive,
        _ => AuxLoss::None,
    };
    let (w_rec, w_aux) = loss_weights(config, aux, epoch);
    let rec = report.l_rec + report.l_kl.unwrap_or(0.0);
    Ok(w_rec * rec + w_aux * aux_value.unwrap_or(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::silhouette_score;
    use crate::ndmath::gradient_check;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn four_points() -> Array<f64> {
        Array::new(&[4, 2], vec![0.0, 0.0, 0.0, 1.0, 10.0, 0.0, 10.0, 1.0]).unwrap()
    }

    fn eval<F>(f: F) -> f64
    where
        F: FnOnce(&mut Tape<f64>) -> Result<Var>,
    {
        let mut t = Tape::new();
        let v = f(&mut t).unwrap();
        t.scalar_value(v)
    }

    fn pair(d: f64, same: bool, margin: f64) -> f64 {
        let z = Array::new(&[2, 1], vec![0.0, d]).unwrap();
        let labels = if same { [0, 0] } else { [0, 1] };
        eval(|t| {
            let z = t.param(z);
            contrastive_loss(t, z, &labels, margin)
        })
    }

    #[test]
    fn mse_examples() {
        let v = eval(|t| {
            let a = t.constant(Array::zeros(&[2]));
            let b = t.param(Array::full(&[2], 1.0));
            mse_loss(t, a, b)
        });
        assert_eq!(v, 1.0);
        let same = eval(|t| {
            let a = t.constant(Array::full(&[3], 0.7));
            let b = t.param(Array::full(&[3], 0.7));
            mse_loss(t, a, b)
        });
        assert_eq!(same, 0.0);
    }

    #[test]
    fn kl_examples() {
        let kl = |mu: f64, lv: f64, beta: f64, pixels: usize| {
            eval(|t| {
                let mu = t.param(Array::new(&[1, 1], vec![mu]).unwrap());
                let lv = t.param(Array::new(&[1, 1], vec![lv]).unwrap());
                kl_loss(t, mu, lv, beta, pixels)
            })
        };
        assert_eq!(kl(0.0, 0.0, 1.0, 1), 0.0);
        assert!((kl(1.0, 0.0, 1.0, 1) - 0.5).abs() < 1e-12);
        assert_eq!(kl(1.0, 0.0, 2.0, 7), 2.0 * kl(1.0, 0.0, 1.0, 7));
    }

    #[test]
    fn kl_scale_uses_latent_width() {
        let mut mu = vec![0.0; 256];
        mu[0] = 1.0;
        let v = eval(|t| {
            let mu = t.param(Array::new(&[1, 256], mu).unwrap());
            let lv = t.param(Array::zeros(&[1, 256]));
            kl_loss(t, mu, lv, 1.0, 50 * 50)
        });
        assert!((v - 0.0512).abs() < 1e-12);
    }

    #[test]
    fn silhouette_four_point_example() {
        let (l, terms) = soft_silhouette_value(&four_points(), &[0, 0, 1, 1], 2).unwrap();
        let b = (10.0 + 101f64.sqrt()) / 2.0;
        let s = (b - 1.0) / (b + SILHOUETTE_EPS);
        assert!((l - (1.0 - s)).abs() < 1e-9);
        assert!((l - 0.09975).abs() < 1e-5);
        assert!(terms.a.iter().all(|&a| (a - 1.0).abs() < 1e-9));
        assert!(terms.b.iter().all(|&x| (x - b).abs() < 1e-9));
    }

    #[test]
    fn silhouette_interleaved_is_negative() {
        let (l, terms) = soft_silhouette_value(&four_points(), &[0, 1, 0, 1], 2).unwrap();
        assert!(terms.s.iter().all(|&s| s < 0.0));
        assert!((terms.s[0] + 0.4475).abs() < 1e-4);
        assert!(l > 1.0 && l <= 2.0);
    }

    #[test]
    fn silhouette_single_cluster_errors() {
        let r = soft_silhouette_value(&four_points(), &[1, 1, 1, 1], 2);
        assert!(matches!(r, Err(Error::SingleCluster)));
        assert_eq!(
            Error::SingleCluster.to_string(),
            "clustering loss undefined for single-cluster batch"
        );
    }

    #[test]
    fn silhouette_masks_singletons() {
        let z = Array::new(&[3, 1], vec![0.0, 1.0, 5.0]).unwrap();
        let (l, terms) = soft_silhouette_value(&z, &[0, 0, 1], 2).unwrap();
        assert_eq!(terms.mask, vec![true, true, false]);
        // a = 1; b = 5 for point 0 and 4 for point 1.
        let expected = 1.0 - ((4.0 / 5.0) + (3.0 / 4.0)) / 2.0;
        assert!((l - expected).abs() < 1e-8);
        assert!(soft_silhouette_value(&Array::new(&[2, 1], vec![0.0, 1.0]).unwrap(), &[0, 1], 2).is_err());
    }

    #[test]
    fn membership_must_be_one_hot() {
        let mut t = Tape::<f64>::new();
        let z = t.param(four_points());
        let soft = Array::new(&[4, 2], vec![0.5, 0.5, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
        assert!(matches!(soft_silhouette(&mut t, z, &soft), Err(Error::Data(_))));
    }

    #[test]
    fn contrastive_examples() {
        assert!(pair(0.0, true, 1.0).abs() < 1e-5);
        assert_eq!(pair(2.0, false, 1.0), 0.0);
        assert!((pair(0.5, false, 1.0) - 0.25).abs() < 1e-12);
        assert!((pair(3.0, true, 1.0) - 9.0).abs() < 1e-9);
        assert!(pair(1.0, false, 1.0) == 0.0);
    }

    #[test]
    fn contrastive_needs_two_points() {
        let mut t = Tape::<f64>::new();
        let z = t.param(Array::zeros(&[1, 3]));
        assert!(contrastive_loss(&mut t, z, &[0], 1.0).is_err());
    }

    #[test]
    fn schedule_examples() {
        assert_eq!(adaptive_weights(0), (1.0, 0.0));
        assert_eq!(adaptive_weights(50), (0.5, 0.5));
        assert_eq!(adaptive_weights(150), (0.0, 1.0));
    }

    #[test]
    fn total_loss_examples() {
        let cfg = LossConfig::default();
        let r = LossReport {
            l_rec: 0.5,
            l_cl: Some(0.1),
            ..Default::default()
        };
        assert!((total_loss(&r, &cfg, 0).unwrap() - 0.52).abs() < 1e-12);

        let adaptive = LossConfig {
            adaptive: true,
            ..Default::default()
        };
        let r = LossReport {
            l_rec: 0.5,
            l_con: Some(0.1),
            ..Default::default()
        };
        assert!((total_loss(&r, &adaptive, 50).unwrap() - 0.30).abs() < 1e-12);

        let pre = LossConfig {
            pretrain_epochs: 10,
            ..Default::default()
        };
        assert_eq!(total_loss(&r, &pre, 3).unwrap(), 0.5);
        assert!((total_loss(&r, &pre, 10).unwrap() - 0.52).abs() < 1e-12);

        let both = LossReport {
            l_rec: 0.5,
            l_cl: Some(0.1),
            l_con: Some(0.1),
            ..Default::default()
        };
        assert!(matches!(total_loss(&both, &cfg, 0), Err(Error::Config(_))));

        let vae = LossReport {
            l_rec: 0.5,
            l_kl: Some(0.25),
            ..Default::default()
        };
        assert_eq!(total_loss(&vae, &cfg, 0).unwrap(), 0.75);
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::default().validate().is_ok());
        let bad = LossConfig {
            margin: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    fn random_batch(rng: &mut ChaCha8Rng, n: usize, d: usize, k: usize) -> (Array<f64>, Vec<i32>) {
        let labels: Vec<i32> = (0..n).map(|i| (i % k) as i32).collect();
        let z = (0..n * d)
            .map(|i| rng.random_range(-1.0..1.0) + 2.0 * (labels[i / d] as f64) * ((i % d == 0) as i32 as f64))
            .collect();
        (Array::new(&[n, d], z).unwrap(), labels)
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (z, labels) = random_batch(&mut rng, 12, 4, 2);
            let l2 = labels.clone();
            let err = gradient_check(
                move |t: &mut Tape<f64>, x| Ok(soft_silhouette_loss(t, x, &l2, 2)?.loss),
                &z,
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-4, "silhouette seed {seed}: {err}");
            let l2 = labels.clone();
            let err = gradient_check(move |t: &mut Tape<f64>, x| contrastive_loss(t, x, &l2, 1.0), &z, 1e-6).unwrap();
            assert!(err < 1e-4, "contrastive seed {seed}: {err}");
            let target = z.map(|v| v * 0.5);
            let err = gradient_check(
                move |t: &mut Tape<f64>, x| {
                    let c = t.constant(target.clone());
                    mse_loss(t, c, x)
                },
                &z,
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-4, "mse seed {seed}: {err}");
        }
    }

    proptest! {
        #[test]
        fn one_hot_matches_brute_force(seed in any::<u64>(), n in 3usize..40, k in 2usize..6, d in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z: Vec<f64> = (0..n * d).map(|_| rng.random_range(-3.0..3.0)).collect();
            let z = Array::new(&[n, d], z).unwrap();
            let labels: Vec<i32> = (0..n).map(|i| if i < k { i as i32 } else { rng.random_range(0..k as i32) }).collect();
            prop_assume!(clustering_defined(&labels));
            let (l, terms) = soft_silhouette_value(&z, &labels, k).unwrap();
            prop_assert!((0.0..=2.0).contains(&l));
            prop_assert!(terms.s.iter().all(|s| (-1.0..=1.0).contains(s)));
            let r = silhouette_score(&z, &labels).unwrap();
            if terms.mask.iter().all(|&m| m) {
                prop_assert!(((1.0 - l) - r.silhouette).abs() < 1e-5);
            }
        }

        #[test]
        fn translation_invariant(seed in any::<u64>(), shift in prop::collection::vec(-50.0f64..50.0, 3)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (z, labels) = random_batch(&mut rng, 10, 3, 3);
            let moved = Array::new(&[10, 3], z.data().iter().enumerate().map(|(i, v)| v + shift[i % 3]).collect()).unwrap();
            let (a, _) = soft_silhouette_value(&z, &labels, 3).unwrap();
            let (b, _) = soft_silhouette_value(&moved, &labels, 3).unwrap();
            prop_assert!((a - b).abs() < 1e-6);
            let con = |p: &Array<f64>| eval(|t| { let v = t.constant(p.clone()); contrastive_loss(t, v, &labels, 1.0) });
            prop_assert!((con(&z) - con(&moved)).abs() < 1e-6);
        }

        #[test]
        fn far_negative_pairs_contribute_nothing(d in 1.0f64..100.0, margin in 0.1f64..1.0) {
            prop_assert_eq!(pair(d, false, margin), 0.0);
        }
    }
}
