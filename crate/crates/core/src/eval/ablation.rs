//! Component study: the same splits trained under five flag settings and
//! several seeds.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{compute_metrics, MetricReport};
use crate::config::RunConfig;
use crate::data::Profile;
use crate::model::Ablation;
use crate::pipeline::{encode_split, evaluate, split, train_model, Prepared};
use crate::embedding::train_tokenizer;
use crate::tokenizer::TokenizerKind;
use crate::Result;

pub const VARIANTS: [(&str, Ablation); 5] = [
    ("base", Ablation::BASE),
    (
        "+bpe",
        Ablation {
            use_bpe: true,
            use_mha: false,
            use_grc: false,
        },
    ),
    (
        "+mha",
        Ablation {
            use_bpe: false,
            use_mha: true,
            use_grc: false,
        },
    ),
    (
        "+grc",
        Ablation {
            use_bpe: false,
            use_mha: false,
            use_grc: true,
        },
    ),
    ("full", Ablation::FULL),
];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

impl Summary {
    fn of(reports: &[MetricReport], f: impl Fn(&[f64]) -> f64) -> Self {
        let col = |g: fn(&MetricReport) -> f64| f(&reports.iter().map(g).collect::<Vec<_>>());
        Self {
            precision: col(|r| r.precision),
            recall: col(|r| r.recall),
            f1: col(|r| r.f1),
            accuracy: col(|r| r.accuracy),
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; zero for a single value.
fn spread(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub flags: Ablation,
    /// Test-set reports, one per seed.
    pub runs: Vec<MetricReport>,
    pub best_epochs: Vec<usize>,
    /// Best validation accuracy, one per seed.
    pub best_val_accs: Vec<f64>,
    pub mean: Summary,
    pub spread: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
    /// Accuracy of always predicting the test split's majority class.
    pub majority_accuracy: f64,
    pub test_size: usize,
}

impl AblationReport {
    pub fn row(&self, variant: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned text table: one row per variant, mean ± spread per metric.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(
            out,
            "Component ablation, test split (n={}), seeds {}",
            self.test_size,
            seeds.join(",")
        );
        let _ = writeln!(
            out,
            "{:<8}| {:^17} | {:^17} | {:^17} | {:^17}",
            "Model", "Precision", "Recall", "F1", "Accuracy"
        );
        let _ = writeln!(out, "{}", "-".repeat(8 + 4 * 20));
        for row in &self.rows {
            let cell = |m: f64, s: f64| format!("{m:.4} ± {s:.4}");
            let _ = writeln!(
                out,
                "{:<8}| {:^17} | {:^17} | {:^17} | {:^17}",
                row.variant,
                cell(row.mean.precision, row.spread.precision),
                cell(row.mean.recall, row.spread.recall),
                cell(row.mean.f1, row.spread.f1),
                cell(row.mean.accuracy, row.spread.accuracy)
            );
        }
        let _ = writeln!(out, "Precision and recall are macro averages over both classes, like F1.");
        let _ = writeln!(out, "Majority-class accuracy: {:.4}", self.majority_accuracy);
        out
    }
}

pub fn majority_accuracy(labels: &[bool]) -> f64 {
    let pos = labels.iter().filter(|&&y| y).count();
    pos.max(labels.len() - pos) as f64 / labels.len().max(1) as f64
}

/// Trains every variant under every seed on one fixed split. Seeds drive
/// model initialization, shuffling and dropout; the split and the
/// tokenizers are shared.
pub fn run_ablation(profiles: &[Profile], cfg: &RunConfig) -> Result<AblationReport> {
    let split = split(profiles, cfg)?;
    let make = |kind: TokenizerKind| -> Result<Prepared> {
        let tok = train_tokenizer(kind, &split.train, cfg.tokenizer.target_size)?;
        Ok(encode_split(split.clone(), tok, cfg))
    };
    let with_bpe = make(TokenizerKind::Bpe)?;
    let with_words = make(TokenizerKind::Word)?;
    let mut rows = Vec::new();
    for (name, flags) in VARIANTS {
        let prepared = if flags.use_bpe { &with_bpe } else { &with_words };
        let mut runs = Vec::new();
        let mut best_epochs = Vec::new();
        let mut best_val_accs = Vec::new();
        for &seed in &cfg.ablation.seeds {
            let mut run_cfg = cfg.clone();
            run_cfg.set_ablation(flags);
            run_cfg.train.seed = seed;
            let outcome = train_model(&run_cfg, prepared)?;
            runs.push(evaluate(&outcome.best, &prepared.test, cfg.train.batch_size)?);
            best_epochs.push(outcome.best_epoch);
            best_val_accs.push(outcome.best_val_acc);
        }
        rows.push(AblationRow {
            variant: name.to_string(),
            flags,
            mean: Summary::of(&runs, mean),
            spread: Summary::of(&runs, spread),
            runs,
            best_epochs,
            best_val_accs,
        });
    }
    Ok(AblationReport {
        seeds: cfg.ablation.seeds.clone(),
        rows,
        majority_accuracy: majority_accuracy(&with_bpe.test.labels),
        test_size: with_bpe.test.len(),
    })
}

/// Metrics of the constant majority-class predictor.
pub fn majority_report(train_labels: &[bool], test_labels: &[bool]) -> Result<MetricReport> {
    let pos = train_labels.iter().filter(|&&y| y).count();
    let guess = pos * 2 > train_labels.len();
    Ok(compute_metrics(&vec![guess; test_labels.len()], test_labels)?)
}
