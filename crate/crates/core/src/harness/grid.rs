//! Cartesian grid search over experiment settings.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::losses::AuxLoss;

use super::{run_experiment, ExperimentConfig, RunResult};

pub const SUMMARY_CSV: &str = "summary.csv";

/// One summary line: a hyperparameter setting and the projection silhouette
/// reached by each auxiliary mode under it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub hyperparameter: String,
    pub baseline: Option<f64>,
    pub clustering: Option<f64>,
    pub contrastive: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct GridOutcome {
    pub runs: Vec<RunResult>,
    pub summary: Vec<SummaryRow>,
}

const ALIASES: &[(&str, &str)] = &[
    ("latent", "model.latent_dim"),
    ("latent_dim", "model.latent_dim"),
    ("dropout", "model.dropout_p"),
    ("beta", "model.beta"),
    ("model_kind", "model.kind"),
    ("adaptive", "loss.adaptive"),
    ("lambda_cl", "loss.lambda_cl"),
    ("lambda_con", "loss.lambda_con"),
    ("margin", "loss.margin"),
    ("pretrain_epochs", "loss.pretrain_epochs"),
    ("scheduler", "lr_scheduler"),
];

fn display_name(key: &str) -> &str {
    match key {
        "beta" | "model.beta" => "β",
        "dropout" | "model.dropout_p" => "dropout",
        "latent" | "latent_dim" | "model.latent_dim" => "latent",
        "lambda_cl" | "loss.lambda_cl" | "lambda_con" | "loss.lambda_con" => "λ",
        other => other,
    }
}

fn display_value(v: &Value) -> String {
    match v {
        Value::Number(n) => match n.as_f64() {
            Some(f) if n.is_f64() && f.fract() == 0.0 && f.abs() < 1e15 => format!("{}", f as i64),
            _ => n.to_string(),
        },
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Maps a grid key (alias or dotted path) to the dotted path of a settable
/// leaf in the serialized config.
pub fn resolve_grid_key(base: &ExperimentConfig, key: &str) -> Result<String> {
    let path = ALIASES
        .iter()
        .find(|(a, _)| *a == key)
        .map(|(_, p)| p.to_string())
        .unwrap_or_else(|| key.to_string());
    let tree = serde_json::to_value(base)?;
    let mut node = &tree;
    for part in path.split('.') {
        node = node
            .get(part)
            .ok_or_else(|| Error::Config(format!("unknown grid key `{key}`")))?;
    }
    if node.is_object() {
        return Err(Error::Config(format!("grid key `{key}` names a section, not a field")));
    }
    Ok(path)
}

fn set_path(tree: &mut Value, path: &str, value: Value) {
    let mut node = tree;
    let parts: Vec<&str> = path.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        node = &mut node[*part];
    }
    node[parts[parts.len() - 1]] = value;
}

/// Reads a grid file: a JSON object mapping keys to value lists.
pub fn parse_grid(text: &str) -> Result<BTreeMap<String, Vec<Value>>> {
    Ok(serde_json::from_str(text)?)
}

fn product(grid: &BTreeMap<String, Vec<Value>>) -> Vec<Vec<(&str, &Value)>> {
    let mut combos: Vec<Vec<(&str, &Value)>> = vec![Vec::new()];
    for (key, values) in grid {
        combos = combos
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut c = prefix.clone();
                    c.push((key.as_str(), v));
                    c
                })
            })
            .collect();
    }
    combos
}

/// Every configuration of the grid, in run order, with its row label. All
/// keys and values are checked here so nothing runs on a bad grid.
pub fn expand_grid(
    base: &ExperimentConfig,
    grid: &BTreeMap<String, Vec<Value>>,
) -> Result<Vec<(String, ExperimentConfig)>> {
    let mut paths = BTreeMap::new();
    for (key, values) in grid {
        if values.is_empty() {
            return Err(Error::Config(format!("grid key `{key}` has no values")));
        }
        paths.insert(key.as_str(), resolve_grid_key(base, key)?);
    }
    let base_tree = serde_json::to_value(base)?;
    let base_dir = base.output_dir.clone();
    product(grid)
        .into_iter()
        .enumerate()
        .map(|(i, combo)| {
            let mut tree = base_tree.clone();
            let mut label = Vec::new();
            for (key, v) in &combo {
                set_path(&mut tree, &paths[key], (*v).clone());
                if paths[key] != "aux" {
                    label.push(format!("{}={}", display_name(key), display_value(v)));
                }
            }
            let mut config: ExperimentConfig = serde_json::from_value(tree)
                .map_err(|e| Error::Config(format!("grid point {i}: {e}")))?;
            config.output_dir = base_dir.join(format!("run_{i:03}"));
            config.validate()?;
            let label = if label.is_empty() { "base".to_string() } else { label.join(", ") };
            Ok((label, config))
        })
        .collect()
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["hyperparameter", "baseline", "clustering", "contrastive"])?;
    let cell = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.hyperparameter.clone(),
            cell(r.baseline),
            cell(r.clustering),
            cell(r.contrastive),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn summarize(labeled: &[(String, RunResult)]) -> Vec<SummaryRow> {
    let mut rows: Vec<SummaryRow> = Vec::new();
    for (label, r) in labeled {
        let idx = match rows.iter().position(|row| &row.hyperparameter == label) {
            Some(i) => i,
            None => {
                rows.push(SummaryRow {
                    hyperparameter: label.clone(),
                    baseline: None,
                    clustering: None,
                    contrastive: None,
                });
                rows.len() - 1
            }
        };
        let slot = match r.config.aux {
            AuxLoss::None => &mut rows[idx].baseline,
            AuxLoss::Clustering => &mut rows[idx].clustering,
            AuxLoss::Contrastive => &mut rows[idx].contrastive,
        };
        *slot = Some(r.silhouette);
    }
    rows
}

/// Runs every grid point in sequence and writes `summary.csv` into the base
/// output directory. An `aux` key in the grid fills the summary columns
/// rather than adding rows.
pub fn grid_search(base: &ExperimentConfig, grid: &BTreeMap<String, Vec<Value>>) -> Result<GridOutcome> {
    base.validate()?;
    let configs = expand_grid(base, grid)?;
    let mut labeled = Vec::with_capacity(configs.len());
    for (i, (label, config)) in configs.into_iter().enumerate() {
        log::info!("grid run {i}: {label} (aux {:?})", config.aux);
        labeled.push((label, run_experiment(&config)?));
    }
    let summary = summarize(&labeled);
    let dir = base.resolved_output_dir();
    std::fs::create_dir_all(&dir)?;
    write_summary_csv(&summary, std::fs::File::create(dir.join(SUMMARY_CSV))?)?;
    Ok(GridOutcome {
        runs: labeled.into_iter().map(|(_, r)| r).collect(),
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn grid(v: Value) -> BTreeMap<String, Vec<Value>> {
        serde_json::from_value(v).unwrap()
    }

    #[test]
    fn two_by_two_product() {
        let g = grid(json!({"latent": [32, 256], "dropout": [0, 0.4]}));
        let configs = expand_grid(&ExperimentConfig::default(), &g).unwrap();
        assert_eq!(configs.len(), 4);
        let latents: Vec<usize> = configs.iter().map(|(_, c)| c.model.latent_dim).collect();
        assert_eq!(latents, [32, 256, 32, 256]);
        assert_eq!(configs[3].1.model.dropout_p, 0.4);
        assert_eq!(configs[1].0, "dropout=0, latent=256");
        let dirs: std::collections::BTreeSet<_> = configs.iter().map(|(_, c)| c.output_dir.clone()).collect();
        assert_eq!(dirs.len(), 4);
    }

    #[test]
    fn beta_rows_use_the_greek_label() {
        let g = grid(json!({"beta": [0.25, 0.5, 2.0]}));
        let labels: Vec<String> = expand_grid(&ExperimentConfig::default(), &g)
            .unwrap()
            .into_iter()
            .map(|(l, _)| l)
            .collect();
        assert_eq!(labels, ["β=0.25", "β=0.5", "β=2"]);
    }

    #[test]
    fn bad_keys_and_values_fail_before_running() {
        let base = ExperimentConfig::default();
        for g in [
            json!({"latnet": [32]}),
            json!({"model": [1]}),
            json!({"latent": [100]}),
            json!({"aux": ["both"]}),
            json!({"latent": []}),
        ] {
            assert!(matches!(expand_grid(&base, &grid(g)), Err(Error::Config(_))));
        }
        assert_eq!(resolve_grid_key(&base, "model.beta").unwrap(), "model.beta");
        assert_eq!(resolve_grid_key(&base, "epochs").unwrap(), "epochs");
    }

    #[test]
    fn aux_values_become_columns() {
        let mk = |aux, s| {
            let dir = tempfile::tempdir().unwrap();
            let mut c = super::super::tests::tiny(dir.path(), aux);
            c.epochs = 1;
            let mut r = run_experiment(&c).unwrap();
            r.silhouette = s;
            r
        };
        let rows = summarize(&[
            ("β=0.5".into(), mk(AuxLoss::None, 0.1)),
            ("β=0.5".into(), mk(AuxLoss::Contrastive, 0.3)),
            ("β=2".into(), mk(AuxLoss::None, 0.2)),
        ]);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].contrastive, Some(0.3));
        assert_eq!(rows[0].clustering, None);
        let mut buf = Vec::new();
        write_summary_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "hyperparameter,baseline,clustering,contrastive");
        assert!(text.contains("β=0.5,0.1000,,0.3000"));
    }

    #[test]
    fn grid_search_runs_and_summarizes() {
        let dir = tempfile::tempdir().unwrap();
        let mut base = super::super::tests::tiny(dir.path(), AuxLoss::None);
        base.epochs = 1;
        let g = grid(json!({"aux": ["none", "contrastive"], "latent": [32, 64]}));
        let out = grid_search(&base, &g).unwrap();
        assert_eq!(out.runs.len(), 4);
        assert_eq!(out.summary.len(), 2);
        assert!(out.summary.iter().all(|r| r.baseline.is_some() && r.contrastive.is_some()));
        let text = std::fs::read_to_string(dir.path().join(SUMMARY_CSV)).unwrap();
        assert_eq!(text.lines().count(), 3);
    }
}
