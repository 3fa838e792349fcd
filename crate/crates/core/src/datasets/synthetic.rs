//! Deterministic synthetic stand-ins for the two scientific ensembles.
//!
//! `channels` mimics soil channel structures (5 regimes, 50×50) and `splash`
//! mimics droplet-on-film impacts (7 regimes, 80×112) whose distinguishing
//! features sit in the lower part of the frame. Each image is drawn from its
//! own ChaCha stream keyed by `(seed, index)`, so sets are pure functions of
//! `(n, seed)` and any prefix of a larger set equals the smaller set.

use std::f32::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datasets::{LabeledImageSet, Provenance};
use crate::error::{Error, Result};
use crate::ndmath::Array;

pub const CHANNELS_CLASSES: usize = 5;
pub const CHANNELS_SIDE: usize = 50;

pub const SPLASH_CLASSES: usize = 7;
pub const SPLASH_HEIGHT: usize = 80;
pub const SPLASH_WIDTH: usize = 112;
pub const SPLASH_CLASS_NAMES: [&str; SPLASH_CLASSES] = [
    "bubble",
    "bubble-splash",
    "column",
    "crown",
    "crown-splash",
    "splash",
    "drop",
];

fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

struct Canvas {
    h: usize,
    w: usize,
    px: Vec<f32>,
}

impl Canvas {
    fn new(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            px: vec![0.0; h * w],
        }
    }

    /// Paints `intensity * coverage(x, y)`, keeping the brighter value.
    fn paint(&mut self, intensity: f32, coverage: impl Fn(f32, f32) -> f32) {
        for y in 0..self.h {
            for x in 0..self.w {
                let c = coverage(x as f32 + 0.5, y as f32 + 0.5).clamp(0.0, 1.0);
                let v = &mut self.px[y * self.w + x];
                *v = v.max(intensity * c);
            }
        }
    }

    fn noise(&mut self, rng: &mut ChaCha8Rng, amplitude: f32) {
        for v in &mut self.px {
            *v = (*v + rng.random_range(0.0..amplitude)).clamp(0.0, 1.0);
        }
    }
}

/// Soft band coverage for a point at distance `d` from a stroke of width `w`.
fn band(d: f32, w: f32) -> f32 {
    w * 0.5 + 0.5 - d.abs()
}

fn disc(cx: f32, cy: f32, r: f32) -> impl Fn(f32, f32) -> f32 {
    move |x, y| r + 0.5 - ((x - cx).powi(2) + (y - cy).powi(2)).sqrt()
}

fn check_n(n: usize, classes: usize, what: &str) -> Result<()> {
    if n < classes {
        return Err(Error::Data(format!(
            "{what} needs n >= {classes} to cover every class, got {n}"
        )));
    }
    Ok(())
}

fn assemble(
    n: usize,
    h: usize,
    w: usize,
    classes: usize,
    seed: u64,
    draw: impl Fn(usize, &mut ChaCha8Rng) -> Vec<f32>,
) -> Result<LabeledImageSet> {
    let mut data = Vec::with_capacity(n * h * w);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % classes;
        let mut rng = sample_rng(seed, i);
        data.extend(draw(class, &mut rng));
        labels.push(class as i32);
    }
    LabeledImageSet::new(
        Array::new(&[n, 1, h, w], data)?,
        labels,
        vec![Provenance::Manual; n],
        classes,
    )
}

/// Soil-channel ensemble stand-in: `n` monochrome 50×50 images in [0, 1],
/// classes assigned round-robin.
///
/// Regimes: 0 horizontal meander, 1 vertical meander, 2 two parallel
/// diagonal channels, 3 three thin anti-diagonal channels, 4 crossing
/// horizontal/vertical network.
pub fn generate_channels(n: usize, seed: u64) -> Result<LabeledImageSet> {
    check_n(n, CHANNELS_CLASSES, "generate_channels")?;
    let side = CHANNELS_SIDE;
    assemble(n, side, side, CHANNELS_CLASSES, seed, |class, rng| {
        let mut c = Canvas::new(side, side);
        let s = side as f32;
        let intensity = rng.random_range(0.75..1.0f32);
        let phase = rng.random_range(0.0..2.0 * PI);
        let wavelength = rng.random_range(18.0..36.0f32);
        let amp = rng.random_range(1.5..4.0f32);
        let wiggle = move |t: f32| amp * (2.0 * PI * t / wavelength + phase).sin();
        match class {
            0 | 1 => {
                let center = s * 0.5 + rng.random_range(-7.0..7.0f32);
                let width = rng.random_range(4.0..7.0f32);
                c.paint(intensity, |x, y| {
                    let (along, across) = if class == 0 { (x, y) } else { (y, x) };
                    band(across - center - wiggle(along), width)
                });
            }
            2 => {
                let gap = rng.random_range(9.0..13.0f32);
                let offset = rng.random_range(-4.0..4.0f32);
                let width = rng.random_range(3.0..5.0f32);
                c.paint(intensity, |x, y| {
                    let across = (x - y) / 2f32.sqrt() - offset;
                    let along = (x + y) / 2f32.sqrt();
                    let d = (across - wiggle(along) * 0.5).abs();
                    band(d - gap * 0.5, width)
                });
            }
            3 => {
                let gap = rng.random_range(9.0..12.0f32);
                let offset = rng.random_range(-3.0..3.0f32);
                let width = rng.random_range(1.5..2.5f32);
                c.paint(intensity, |x, y| {
                    let across = (x + y) / 2f32.sqrt() - s / 2f32.sqrt() - offset;
                    let along = (x - y) / 2f32.sqrt();
                    let across = across - wiggle(along) * 0.3;
                    let nearest = (across / gap).round().clamp(-1.0, 1.0) * gap;
                    band(across - nearest, width)
                });
            }
            _ => {
                let cy = s * 0.5 + rng.random_range(-8.0..8.0f32);
                let cx = s * 0.5 + rng.random_range(-8.0..8.0f32);
                let width = rng.random_range(2.5..4.0f32);
                c.paint(intensity, |x, y| {
                    let h = band(y - cy - wiggle(x) * 0.5, width);
                    let v = band(x - cx - wiggle(y) * 0.5, width);
                    h.max(v)
                });
            }
        }
        c.noise(rng, 0.15);
        c.px
    })
}

/// Droplet-impact ensemble stand-in: `n` monochrome 80×112 images in
/// [0, 1], classes assigned round-robin and named by [`SPLASH_CLASS_NAMES`].
pub fn generate_splash(n: usize, seed: u64) -> Result<LabeledImageSet> {
    check_n(n, SPLASH_CLASSES, "generate_splash")?;
    let (h, w) = (SPLASH_HEIGHT, SPLASH_WIDTH);
    let set = assemble(n, h, w, SPLASH_CLASSES, seed, |class, rng| {
        let mut c = Canvas::new(h, w);
        let film = rng.random_range(60.0..66.0f32);
        let film_width = rng.random_range(2.0..3.5f32);
        let cx = w as f32 * 0.5 + rng.random_range(-4.0..4.0f32);
        let intensity = rng.random_range(0.8..1.0f32);
        c.paint(intensity, |_, y| band(y - film, film_width));
        let droplets = |c: &mut Canvas, rng: &mut ChaCha8Rng, count: usize, spread: f32, top: f32| {
            for _ in 0..count {
                let dx = cx + rng.random_range(-spread..spread);
                let dy = rng.random_range(top..film - 4.0);
                let r = rng.random_range(1.0..2.5f32);
                c.paint(intensity, disc(dx, dy, r));
            }
        };
        let ring = |c: &mut Canvas, r: f32| {
            c.paint(intensity, move |x, y| {
                if y > film {
                    return 0.0;
                }
                let d = ((x - cx).powi(2) + (y - film).powi(2)).sqrt();
                band(d - r, 2.0)
            });
        };
        let crown = |c: &mut Canvas, rng: &mut ChaCha8Rng| {
            let half = rng.random_range(14.0..20.0f32);
            let height = rng.random_range(14.0..20.0f32);
            let flare = rng.random_range(3.0..6.0f32);
            let top = film - height;
            c.paint(intensity, move |x, y| {
                if y < top - 2.0 || y > film {
                    return 0.0;
                }
                // Walls lean outward as they rise.
                let t = (film - y) / height;
                let offset = half + flare * t;
                band((x - cx).abs() - offset, 2.5)
            });
            for side in [-1.0f32, 1.0] {
                for k in 0..3 {
                    let sx = cx + side * (half + flare + k as f32 * 2.5);
                    let sy = top - 3.0 - k as f32 * 2.0 - rng.random_range(0.0..2.0f32);
                    c.paint(intensity, disc(sx, sy, 1.5));
                }
            }
        };
        match class {
            0 => ring(&mut c, rng.random_range(9.0..14.0)),
            1 => {
                ring(&mut c, rng.random_range(9.0..14.0));
                droplets(&mut c, rng, 6, 18.0, film - 30.0);
            }
            2 => {
                let half = rng.random_range(3.0..5.0f32);
                let top = film - rng.random_range(18.0..32.0f32);
                c.paint(intensity, move |x, y| {
                    if y > film {
                        return 0.0;
                    }
                    let body = band((x - cx).abs() - half * 0.5, half).min(y - top + 0.5);
                    body.max(disc(cx, top, half + 1.0)(x, y))
                });
            }
            3 => crown(&mut c, rng),
            4 => {
                crown(&mut c, rng);
                droplets(&mut c, rng, 8, 30.0, film - 40.0);
            }
            5 => {
                droplets(&mut c, rng, 26, 45.0, film - 24.0);
                c.paint(intensity, |x, y| {
                    band(y - film + 3.0 + 2.0 * (x * 0.7).sin(), 3.0)
                });
            }
            _ => {
                let r = rng.random_range(6.0..9.0f32);
                let dy = rng.random_range(18.0..38.0f32);
                c.paint(intensity, disc(cx, dy, r));
            }
        }
        c.noise(rng, 0.1);
        c.px
    })?;
    Ok(set.with_class_names(SPLASH_CLASS_NAMES.iter().map(|s| s.to_string()).collect()))
}
