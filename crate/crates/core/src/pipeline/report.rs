use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::fingerprint_hex;
use super::data::{Extractors, ImageFeatures};
use super::manifest::ImageSource;
use super::model::{TrainedModel, View};
use crate::classifier::Evaluation;
use crate::error::{Error, Result};
use crate::perturb::{PerturbationKind, PerturbationSpec};

/// Evaluation of each classifier view on one set of images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracies {
    pub combined: Evaluation,
    pub global_only: Evaluation,
    pub local_only: Evaluation,
}

impl Accuracies {
    pub fn get(&self, view: View) -> &Evaluation {
        match view {
            View::Combined => &self.combined,
            View::GlobalOnly => &self.global_only,
            View::LocalOnly => &self.local_only,
        }
    }
}

/// Accuracy under one perturbation setting, averaged over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub kind: PerturbationKind,
    pub n: usize,
    pub seeds: usize,
    pub combined: f64,
    pub global_only: f64,
    /// Clean accuracy minus perturbed accuracy.
    pub combined_drop: f64,
    pub global_only_drop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fingerprint: String,
    pub classes: Vec<String>,
    pub samples: usize,
    pub overall: f64,
    pub per_class: Vec<Option<f64>>,
    pub global_only: f64,
    pub local_only: f64,
    pub robustness: Vec<RobustnessRow>,
}

pub fn evaluate(model: &TrainedModel, feats: &[ImageFeatures], labels: &[usize]) -> Result<Accuracies> {
    if feats.is_empty() {
        return Err(Error::InvalidArgument("evaluation split is empty".into()));
    }
    let reps = model.represent_all(feats)?;
    let eval = |v| model.evaluate_view(v, &reps, labels).map_err(|e| e.in_stage("classifier"));
    Ok(Accuracies {
        combined: eval(View::Combined)?,
        global_only: eval(View::GlobalOnly)?,
        local_only: eval(View::LocalOnly)?,
    })
}

/// Re-extracts `src` under every spec and reports one row per (kind, n) in
/// order of first appearance.
pub fn robustness(
    model: &TrainedModel,
    extractors: &Extractors,
    src: &dyn ImageSource,
    specs: &[PerturbationSpec],
    clean: &Accuracies,
) -> Result<Vec<RobustnessRow>> {
    let labels = src.labels();
    let mut rows: Vec<(RobustnessRow, Vec<f64>, Vec<f64>)> = Vec::new();
    for spec in specs {
        let feats = extractors
            .extract_all(src, Some(spec))
            .map_err(|e| e.in_stage("perturbation"))?;
        let acc = evaluate(model, &feats, &labels)?;
        tracing::info!(%spec, combined = acc.combined.overall, global_only = acc.global_only.overall, "perturbed evaluation");
        let idx = match rows.iter().position(|(r, _, _)| r.kind == spec.kind && r.n == spec.divisor) {
            Some(i) => i,
            None => {
                rows.push((
                    RobustnessRow {
                        kind: spec.kind,
                        n: spec.divisor,
                        seeds: 0,
                        combined: 0.0,
                        global_only: 0.0,
                        combined_drop: 0.0,
                        global_only_drop: 0.0,
                    },
                    Vec::new(),
                    Vec::new(),
                ));
                rows.len() - 1
            }
        };
        rows[idx].1.push(acc.combined.overall);
        rows[idx].2.push(acc.global_only.overall);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(rows
        .into_iter()
        .map(|(mut r, c, g)| {
            r.seeds = c.len();
            r.combined = mean(&c);
            r.global_only = mean(&g);
            r.combined_drop = clean.combined.overall - r.combined;
            r.global_only_drop = clean.global_only.overall - r.global_only;
            r
        })
        .collect())
}

impl EvalReport {
    pub fn new(model: &TrainedModel, acc: &Accuracies, robustness: Vec<RobustnessRow>) -> Self {
        EvalReport {
            fingerprint: fingerprint_hex(&model.fingerprint()),
            classes: model.classes.clone(),
            samples: acc.combined.predictions.len(),
            overall: acc.combined.overall,
            per_class: acc.combined.per_class.clone(),
            global_only: acc.global_only.overall,
            local_only: acc.local_only.overall,
            robustness,
        }
    }

    /// One JSON object per line: a `summary` record, one `class` record per
    /// class and one `robustness` record per perturbation setting.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let summary = serde_json::json!({
            "record": "summary",
            "fingerprint": self.fingerprint,
            "samples": self.samples,
            "combined": self.overall,
            "global_only": self.global_only,
            "local_only": self.local_only,
        });
        out.push_str(&summary.to_string());
        out.push('\n');
        for (name, acc) in self.classes.iter().zip(&self.per_class) {
            let line = serde_json::json!({"record": "class", "class": name, "accuracy": acc});
            out.push_str(&line.to_string());
            out.push('\n');
        }
        for r in &self.robustness {
            let mut v = serde_json::to_value(r).expect("row serializes");
            v["record"] = "robustness".into();
            out.push_str(&v.to_string());
            out.push('\n');
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "config {}  ({} test samples)", self.fingerprint, self.samples);
        let _ = writeln!(out, "{:<14}{:>10}", "view", "accuracy");
        for (name, acc) in [
            ("combined", self.overall),
            ("global-only", self.global_only),
            ("local-only", self.local_only),
        ] {
            let _ = writeln!(out, "{name:<14}{:>9.2}%", 100.0 * acc);
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<20}{:>10}", "class", "accuracy");
        for (name, acc) in self.classes.iter().zip(&self.per_class) {
            match acc {
                Some(a) => writeln!(out, "{name:<20}{:>9.2}%", 100.0 * a),
                None => writeln!(out, "{name:<20}{:>10}", "-"),
            }
            .ok();
        }
        if !self.robustness.is_empty() {
            let _ = writeln!(out);
            let _ = writeln!(
                out,
                "{:<10}{:>6}{:>7}{:>11}{:>13}{:>9}{:>11}",
                "kind", "W/n", "seeds", "combined", "global-only", "drop", "drop(g)"
            );
            for r in &self.robustness {
                let _ = writeln!(
                    out,
                    "{:<10}{:>6}{:>7}{:>10.2}%{:>12.2}%{:>8.2}%{:>10.2}%",
                    r.kind.name(),
                    format!("W/{}", r.n),
                    r.seeds,
                    100.0 * r.combined,
                    100.0 * r.global_only,
                    100.0 * r.combined_drop,
                    100.0 * r.global_only_drop
                );
            }
        }
        out
    }
}
