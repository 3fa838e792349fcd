//! Static CSV and SVG artifacts for a finished run.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::losses::LossReport;
use crate::projection::Embedding2D;

use super::RunResult;

pub const LOSS_CSV: &str = "loss_curves.csv";
pub const LOSS_SVG: &str = "loss_curves.svg";
pub const PROJECTION_SVG: &str = "projection.svg";
pub const EMBEDDING_CSV: &str = "embedding.csv";

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

/// Fill color for the `rank`-th distinct label.
pub fn class_color(rank: usize) -> String {
    if rank < PALETTE.len() {
        PALETTE[rank].to_string()
    } else {
        // Golden-angle hue walk for anything past the fixed palette.
        let hue = (rank as f64 * 137.507_764) % 360.0;
        format!("hsl({hue:.1},65%,45%)")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn aux_of(r: &LossReport) -> Option<f64> {
    r.l_cl.or(r.l_con)
}

pub fn write_loss_csv<W: Write>(train: &[LossReport], val: &[LossReport], writer: W) -> Result<()> {
    if train.len() != val.len() {
        return Err(Error::Data(format!(
            "{} training epochs but {} validation epochs",
            train.len(),
            val.len()
        )));
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "epoch", "train_rec", "train_kl", "train_aux", "train_total", "val_rec", "val_kl", "val_aux",
        "val_total",
    ])?;
    for (e, (t, v)) in train.iter().zip(val).enumerate() {
        w.write_record([
            e.to_string(),
            t.l_rec.to_string(),
            opt(t.l_kl),
            opt(aux_of(t)),
            t.total.to_string(),
            v.l_rec.to_string(),
            opt(v.l_kl),
            opt(aux_of(v)),
            v.total.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const M: f64 = 50.0;

fn polyline(points: &[(f64, f64)], color: &str, dashed: bool) -> String {
    let pts: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let dash = if dashed { " stroke-dasharray=\"6 4\"" } else { "" };
    format!(
        "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"{dash} points=\"{}\"/>\n",
        pts.join(" ")
    )
}

pub fn loss_svg(train: &[LossReport], val: &[LossReport]) -> String {
    let series: Vec<(&str, &str, bool, Vec<f64>)> = vec![
        ("train total", PALETTE[0], false, train.iter().map(|r| r.total).collect()),
        ("val total", PALETTE[0], true, val.iter().map(|r| r.total).collect()),
        ("train reconstruction", PALETTE[1], false, train.iter().map(|r| r.l_rec).collect()),
        ("val reconstruction", PALETTE[1], true, val.iter().map(|r| r.l_rec).collect()),
    ];
    let all: Vec<f64> = series.iter().flat_map(|s| s.3.iter().copied()).filter(|v| v.is_finite()).collect();
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min).min(0.0);
    let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(lo + 1e-12);
    let n = train.len().max(2);
    let sx = |e: usize| M + (W - 2.0 * M) * e as f64 / (n - 1) as f64;
    let sy = |v: f64| H - M - (H - 2.0 * M) * (v - lo) / (hi - lo);

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">"
    );
    let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<line x1=\"{M}\" y1=\"{y}\" x2=\"{x}\" y2=\"{y}\" stroke=\"black\"/><line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{y}\" stroke=\"black\"/>",
        y = H - M,
        x = W - M
    );
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">epoch</text>", W / 2.0, H - 15.0);
    let _ = writeln!(s, "<text x=\"{M}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{hi:.4}</text>", M - 4.0);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{lo:.4}</text>", M - 4.0, H - M);
    for (i, (name, color, dashed, values)) in series.iter().enumerate() {
        let pts: Vec<(f64, f64)> = values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(e, &v)| (sx(e), sy(v)))
            .collect();
        s.push_str(&polyline(&pts, color, *dashed));
        let ly = M + 16.0 * i as f64;
        let dash = if *dashed { " stroke-dasharray=\"6 4\"" } else { "" };
        let _ = writeln!(
            s,
            "<line x1=\"{a}\" y1=\"{ly}\" x2=\"{b}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"{dash}/><text x=\"{t}\" y=\"{ty}\" font-size=\"11\">{name}</text>",
            a = W - 190.0,
            b = W - 165.0,
            t = W - 160.0,
            ty = ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Scatter plot with exactly one `<circle>` per point and a legend drawn
/// with squares.
pub fn projection_svg(e: &Embedding2D, class_names: Option<&[String]>) -> String {
    let n = e.len();
    let distinct: Vec<i32> = e.labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let rank = |l: i32| distinct.binary_search(&l).unwrap_or(0);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..n {
        let p = e.coords.row(i);
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    let span_x = (x1 - x0).max(1e-12);
    let span_y = (y1 - y0).max(1e-12);
    let plot_w = W - 2.0 * M - 120.0;
    let sx = |v: f64| M + plot_w * (v - x0) / span_x;
    let sy = |v: f64| H - M - (H - 2.0 * M) * (v - y0) / span_y;

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">"
    );
    let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    for i in 0..n {
        let p = e.coords.row(i);
        let _ = writeln!(
            s,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{}\" fill-opacity=\"0.8\"/>",
            sx(p[0]),
            sy(p[1]),
            class_color(rank(e.labels[i]))
        );
    }
    for (r, &l) in distinct.iter().enumerate() {
        let name = class_names
            .and_then(|names| usize::try_from(l).ok().and_then(|i| names.get(i)))
            .cloned()
            .unwrap_or_else(|| l.to_string());
        let ly = M + 18.0 * r as f64;
        let _ = writeln!(
            s,
            "<rect x=\"{x}\" y=\"{ry}\" width=\"10\" height=\"10\" fill=\"{c}\"/><text x=\"{tx}\" y=\"{ty}\" font-size=\"11\">{}</text>",
            escape(&name),
            x = W - M - 100.0,
            ry = ly - 9.0,
            c = class_color(r),
            tx = W - M - 84.0,
            ty = ly
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes the loss table, loss plot, embedding table and scatter plot into
/// `dir`, returning the paths written.
pub fn emit_plots(result: &RunResult, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let embedding = result
        .embedding
        .as_ref()
        .ok_or_else(|| Error::Data("run result carries no embedding".into()))?;
    std::fs::create_dir_all(dir)?;
    let paths: Vec<PathBuf> = [LOSS_CSV, LOSS_SVG, EMBEDDING_CSV, PROJECTION_SVG]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    write_loss_csv(&result.train, &result.val, std::fs::File::create(&paths[0])?)?;
    std::fs::write(&paths[1], loss_svg(&result.train, &result.val))?;
    embedding.write_csv(std::fs::File::create(&paths[2])?)?;
    std::fs::write(&paths[3], projection_svg(embedding, result.class_names.as_deref()))?;
    Ok(paths)
}
