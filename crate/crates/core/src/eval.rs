//! Confusion-matrix metrics, McNemar's test and run summaries.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// Threshold on the signed McNemar statistic (two-sided 5% level).
pub const MCNEMAR_CRITICAL: f64 = 1.96;

/// `counts[truth][prediction]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let n = counts.len();
        if n == 0 || counts.iter().any(|r| r.len() != n) {
            return Err(contract("confusion matrix must be square and non-empty"));
        }
        Ok(Self { counts })
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(contract(format!(
                "{} labels but {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut counts = vec![vec![0u64; classes]; classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= classes || p >= classes {
                return Err(contract(format!("label pair ({t}, {p}) out of range for {classes} classes")));
            }
            counts[t][p] += 1;
        }
        Self::from_counts(counts)
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, j: usize) -> u64 {
        self.counts[j].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    fn trace(&self) -> u64 {
        (0..self.classes()).map(|j| self.counts[j][j]).sum()
    }

    fn nonempty_total(&self) -> Result<f64> {
        match self.total() {
            0 => Err(contract("confusion matrix is empty")),
            m => Ok(m as f64),
        }
    }
}

pub fn overall_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    Ok(cm.trace() as f64 / cm.nonempty_total()?)
}

/// Cohen's kappa. A degenerate matrix with `p_e = 1` yields 0.
pub fn cohen_kappa(cm: &ConfusionMatrix) -> Result<f64> {
    let m = cm.nonempty_total()?;
    let p_o = cm.trace() as f64 / m;
    let p_e = (0..cm.classes())
        .map(|j| cm.row_sum(j) as f64 * cm.col_sum(j) as f64)
        .sum::<f64>()
        / (m * m);
    if p_e >= 1.0 {
        log::warn!("kappa undefined (p_e = 1); reporting 0");
        return Ok(0.0);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Recall of each class; `None` for classes absent from the truth.
pub fn per_class_accuracy(cm: &ConfusionMatrix) -> Vec<Option<f64>> {
    (0..cm.classes())
        .map(|j| match cm.row_sum(j) {
            0 => None,
            r => Some(cm.counts[j][j] as f64 / r as f64),
        })
        .collect()
}

pub fn average_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let recalls = per_class_accuracy(cm);
    let mut sum = 0.0;
    for (j, r) in recalls.iter().enumerate() {
        sum += r.ok_or_else(|| contract(format!("class {j} has no true samples")))?;
    }
    Ok(sum / recalls.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McNemarResult {
    /// A correct, B wrong.
    pub f12: u64,
    /// A wrong, B correct.
    pub f21: u64,
    pub statistic: f64,
    pub significant: bool,
    pub continuity_corrected: bool,
}

/// Signed McNemar statistic `(f12 - f21) / sqrt(f12 + f21)`.
pub fn mcnemar(preds_a: &[usize], preds_b: &[usize], truth: &[usize]) -> Result<McNemarResult> {
    mcnemar_with(preds_a, preds_b, truth, false)
}

/// As [`mcnemar`], optionally shrinking `|f12 - f21|` by one.
pub fn mcnemar_with(
    preds_a: &[usize],
    preds_b: &[usize],
    truth: &[usize],
    continuity_correction: bool,
) -> Result<McNemarResult> {
    if preds_a.len() != truth.len() || preds_b.len() != truth.len() {
        return Err(contract(format!(
            "McNemar inputs differ in length: {}, {}, {}",
            preds_a.len(),
            preds_b.len(),
            truth.len()
        )));
    }
    let (mut f12, mut f21) = (0u64, 0u64);
    for ((a, b), t) in preds_a.iter().zip(preds_b).zip(truth) {
        match (a == t, b == t) {
            (true, false) => f12 += 1,
            (false, true) => f21 += 1,
            _ => {}
        }
    }
    Ok(mcnemar_from_counts(f12, f21, continuity_correction))
}

pub fn mcnemar_from_counts(f12: u64, f21: u64, continuity_correction: bool) -> McNemarResult {
    let statistic = if f12 + f21 == 0 {
        log::warn!("McNemar: no discordant pairs; statistic set to 0");
        0.0
    } else {
        let diff = f12 as f64 - f21 as f64;
        let magnitude = if continuity_correction {
            (diff.abs() - 1.0).max(0.0)
        } else {
            diff.abs()
        };
        diff.signum() * magnitude / ((f12 + f21) as f64).sqrt()
    };
    McNemarResult {
        f12,
        f21,
        statistic,
        significant: statistic > MCNEMAR_CRITICAL,
        continuity_corrected: continuity_correction,
    }
}

/// Mean and sample standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(contract("cannot summarise zero runs"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Ok(Summary {
        mean,
        std,
        runs: values.len(),
    })
}

/// Metrics of one classifier on one test split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<Option<f64>>,
    pub overall_accuracy: f64,
    pub kappa: f64,
    pub average_accuracy: f64,
}

impl RunMetrics {
    pub fn new(seed: u64, truth: &[usize], predicted: &[usize], classes: usize) -> Result<Self> {
        let confusion = ConfusionMatrix::from_predictions(truth, predicted, classes)?;
        Ok(Self {
            seed,
            per_class: per_class_accuracy(&confusion),
            overall_accuracy: overall_accuracy(&confusion)?,
            kappa: cohen_kappa(&confusion)?,
            average_accuracy: average_accuracy(&confusion)?,
            confusion,
        })
    }
}

/// One method's metrics over several seeded runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub runs: Vec<RunMetrics>,
    pub per_class: Vec<Option<Summary>>,
    pub overall_accuracy: Summary,
    pub kappa: Summary,
    pub average_accuracy: Summary,
}

impl MethodSummary {
    pub fn new(method: impl Into<String>, runs: Vec<RunMetrics>) -> Result<Self> {
        let first = runs.first().ok_or_else(|| contract("no runs to summarise"))?;
        let classes = first.per_class.len();
        if runs.iter().any(|r| r.per_class.len() != classes) {
            return Err(contract("runs disagree on the class count"));
        }
        let per_class = (0..classes)
            .map(|j| {
                let vals: Vec<f64> = runs.iter().filter_map(|r| r.per_class[j]).collect();
                summarize(&vals).ok()
            })
            .collect();
        let field = |f: fn(&RunMetrics) -> f64| summarize(&runs.iter().map(f).collect::<Vec<_>>());
        Ok(Self {
            method: method.into(),
            per_class,
            overall_accuracy: field(|r| r.overall_accuracy)?,
            kappa: field(|r| r.kappa)?,
            average_accuracy: field(|r| r.average_accuracy)?,
            runs,
        })
    }
}

/// McNemar comparison recorded in a report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub method_a: String,
    pub method_b: String,
    /// Seed of the shared test split the test was computed on.
    pub seed: u64,
    pub result: McNemarResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    pub methods: Vec<MethodSummary>,
    pub comparisons: Vec<Comparison>,
}

fn pct(s: &Summary) -> String {
    format!("{:.2} ± {:.2}", 100.0 * s.mean, 100.0 * s.std)
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// Per-class rows, then OA / Kappa / AA, one column per method. Accuracies
    /// are percentages; kappa is reported on its natural scale.
    pub fn to_table(&self) -> String {
        let mut rows: Vec<Vec<String>> = Vec::new();
        let mut header = vec!["Class".to_string()];
        header.extend(self.methods.iter().map(|m| m.method.clone()));
        rows.push(header);
        for (j, name) in self.class_names.iter().enumerate() {
            let mut row = vec![name.clone()];
            for m in &self.methods {
                row.push(m.per_class.get(j).copied().flatten().map_or("-".into(), |s| pct(&s)));
            }
            rows.push(row);
        }
        type Cell = fn(&MethodSummary) -> String;
        let metric_rows: [(&str, Cell); 3] = [
            ("OA", |m| pct(&m.overall_accuracy)),
            ("Kappa", |m| format!("{:.4} ± {:.4}", m.kappa.mean, m.kappa.std)),
            ("AA", |m| pct(&m.average_accuracy)),
        ];
        for (label, f) in metric_rows {
            let mut row = vec![label.to_string()];
            row.extend(self.methods.iter().map(f));
            rows.push(row);
        }
        let cols = rows[0].len();
        let widths: Vec<usize> = (0..cols)
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, row) in rows.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (cell, w))| {
                    if c == 0 {
                        format!("{cell:<w$}")
                    } else {
                        format!("{cell:>w$}")
                    }
                })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
            if i == 0 || i == self.class_names.len() {
                out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (cols - 1)));
                out.push('\n');
            }
        }
        // One-sided: only M_t > critical counts as a significant win for A.
        for c in &self.comparisons {
            out.push_str(&format!(
                "McNemar {} vs {} (seed {}): M_t = {:.4}, f12 = {}, f21 = {}, {}\n",
                c.method_a,
                c.method_b,
                c.seed,
                c.result.statistic,
                c.result.f12,
                c.result.f21,
                if c.result.significant { "A significantly better" } else { "A not significantly better" }
            ));
        }
        out
    }
}
