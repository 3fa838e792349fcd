//! Central-difference checks of every differentiable tape primitive.

use ensemble_latent::ndmath::{gradient_check, Array, Tape, Var};
use ensemble_latent::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;
const H: f64 = 1e-6;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Array<f64> {
    let len = shape.iter().product();
    Array::new(shape, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Weighted sum with fixed random weights, so every output element carries a
/// distinct upstream gradient.
fn project(t: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let w = random(t.value(y).shape(), &mut rng);
    let w = t.constant(w);
    let p = t.mul(y, w)?;
    Ok(t.sum(p))
}

fn check(name: &str, f: impl Fn(&mut Tape<f64>, Var, u64) -> Result<Var>, shape: &[usize]) {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(shape, &mut rng);
        let err = gradient_check(|t: &mut Tape<f64>, v| f(t, v, seed), &x, H).unwrap();
        assert!(err < TOL, "{name} seed {seed}: relative error {err}");
    }
}

#[test]
fn conv2d_input_and_weights() {
    check(
        "conv2d input",
        |t, x, s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s + 100);
            let w = t.constant(random(&[4, 2, 3, 3], &mut rng));
            let b = t.constant(random(&[4], &mut rng));
            let y = t.conv2d(x, w, b, 2, 1)?;
            project(t, y, s)
        },
        &[2, 2, 7, 6],
    );
    check(
        "conv2d weight",
        |t, w, s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s + 200);
            let x = t.constant(random(&[2, 2, 5, 5], &mut rng));
            let b = t.param(random(&[3], &mut rng));
            let y = t.conv2d(x, w, b, 2, 1)?;
            project(t, y, s)
        },
        &[3, 2, 3, 3],
    );
}

#[test]
fn conv_transpose2d_input_and_weights() {
    for op in [0, 1] {
        check(
            "conv_transpose2d input",
            move |t, x, s| {
                let mut rng = ChaCha8Rng::seed_from_u64(s + 300);
                let w = t.constant(random(&[3, 2, 3, 3], &mut rng));
                let b = t.constant(random(&[2], &mut rng));
                let y = t.conv_transpose2d(x, w, b, 2, 1, op)?;
                project(t, y, s)
            },
            &[2, 3, 4, 3],
        );
        check(
            "conv_transpose2d weight",
            move |t, w, s| {
                let mut rng = ChaCha8Rng::seed_from_u64(s + 400);
                let x = t.constant(random(&[2, 3, 3, 4], &mut rng));
                let b = t.param(random(&[2], &mut rng));
                let y = t.conv_transpose2d(x, w, b, 2, 1, op)?;
                project(t, y, s)
            },
            &[3, 2, 3, 3],
        );
    }
}

#[test]
fn linear_all_arguments() {
    check(
        "linear input",
        |t, x, s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s + 500);
            let w = t.constant(random(&[3, 5], &mut rng));
            let b = t.constant(random(&[3], &mut rng));
            let y = t.linear(x, w, b)?;
            project(t, y, s)
        },
        &[4, 5],
    );
    check(
        "linear weight",
        |t, w, s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s + 600);
            let x = t.constant(random(&[4, 5], &mut rng));
            let b = t.param(random(&[3], &mut rng));
            let y = t.linear(x, w, b)?;
            project(t, y, s)
        },
        &[3, 5],
    );
    check(
        "linear bias",
        |t, b, s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s + 700);
            let x = t.constant(random(&[4, 5], &mut rng));
            let w = t.constant(random(&[3, 5], &mut rng));
            let y = t.linear(x, w, b)?;
            project(t, y, s)
        },
        &[3],
    );
}

#[test]
fn elementwise_and_reductions() {
    check("relu", |t, x, s| { let y = t.relu(x); project(t, y, s) }, &[5, 4]);
    check("exp", |t, x, s| { let y = t.exp(x); project(t, y, s) }, &[6]);
    check("square", |t, x, s| { let y = t.square(x); project(t, y, s) }, &[6]);
    check("mean", |t, x, _| Ok(t.mean(x)), &[3, 3]);
    check("sum_rows", |t, x, s| { let y = t.sum_rows(x)?; project(t, y, s) }, &[4, 3]);
    check(
        "row_min",
        |t, x, s| {
            let allowed: Vec<bool> = (0..12).map(|i| i % 3 != 1).collect();
            let y = t.row_min(x, &allowed)?;
            project(t, y, s)
        },
        &[4, 3],
    );
    check(
        "div and maximum",
        |t, x, s| {
            let e = t.exp(x);
            let m = t.maximum(x, e)?;
            let sq = t.square(x);
            let den = t.add_scalar(sq, 1.0);
            let y = t.div(m, den)?;
            project(t, y, s)
        },
        &[8],
    );
    check(
        "matmul",
        |t, a, s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s + 800);
            let b = t.param(random(&[3, 2], &mut rng));
            let y = t.matmul(a, b)?;
            project(t, y, s)
        },
        &[4, 3],
    );
}

#[test]
fn distances_pooling_and_classification() {
    check("pairwise_distances", |t, x, s| { let y = t.pairwise_distances(x)?; project(t, y, s) }, &[6, 3]);
    check(
        "global_avg_pool",
        |t, x, s| { let y = t.global_avg_pool(x)?; project(t, y, s) },
        &[2, 3, 4, 4],
    );
    check(
        "crop2d",
        |t, x, s| { let y = t.crop2d(x, 3, 2)?; project(t, y, s) },
        &[2, 2, 4, 3],
    );
    check(
        "softmax_cross_entropy",
        |t, x, _| t.softmax_cross_entropy(x, &[0, 2, 1, 2]),
        &[4, 3],
    );
    check(
        "mse",
        |t, x, s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s + 900);
            let target = t.constant(random(&[3, 4], &mut rng));
            t.mse(x, target)
        },
        &[3, 4],
    );
}
