//! TF-IDF features with a logistic-regression classifier.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::data::Profile;

/// Lowercased runs of alphanumeric characters.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn profile_text(p: &Profile) -> String {
    p.fields().join(" ")
}

/// Closed vocabulary with smoothed idf `ln((1 + D) / (1 + df)) + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfIdf {
    vocab: BTreeMap<String, usize>,
    idf: Vec<f64>,
}

impl TfIdf {
    pub fn fit<S: AsRef<str>>(docs: &[S]) -> Result<Self, EvalError> {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for doc in docs {
            let mut seen: Vec<String> = words(doc.as_ref());
            seen.sort_unstable();
            seen.dedup();
            for w in seen {
                *df.entry(w).or_insert(0) += 1;
            }
        }
        if df.is_empty() {
            return Err(EvalError::EmptyCorpus);
        }
        let d = docs.len() as f64;
        let idf = df.values().map(|&n| ((1.0 + d) / (1.0 + n as f64)).ln() + 1.0).collect();
        let vocab = df.into_keys().enumerate().map(|(i, w)| (w, i)).collect();
        Ok(Self { vocab, idf })
    }

    pub fn len(&self) -> usize {
        self.idf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idf.is_empty()
    }

    pub fn index(&self, word: &str) -> Option<usize> {
        self.vocab.get(word).copied()
    }

    pub fn idf(&self, word: &str) -> Option<f64> {
        self.index(word).map(|i| self.idf[i])
    }

    /// L2-normalized tf·idf row; words outside the vocabulary are ignored.
    pub fn transform(&self, doc: &str) -> Vec<f64> {
        let mut row = vec![0.0; self.len()];
        for w in words(doc) {
            if let Some(i) = self.index(&w) {
                row[i] += 1.0;
            }
        }
        for (x, idf) in row.iter_mut().zip(&self.idf) {
            *x *= idf;
        }
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|x| *x /= norm);
        }
        row
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRegConfig {
    pub steps: usize,
    pub lr: f64,
    pub lambda: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 1.0,
            lambda: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogReg {
    pub weights: Vec<f64>,
    pub bias: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean log-loss plus `λ‖w‖²` (bias unpenalized) and its gradient.
pub fn logreg_loss_grad(x: &[Vec<f64>], y: &[bool], model: &LogReg, lambda: f64) -> (f64, Vec<f64>, f64) {
    let n = x.len() as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; model.weights.len()];
    let mut gb = 0.0;
    for (row, &label) in x.iter().zip(y) {
        let z = dot(row, &model.weights) + model.bias;
        loss += if label { softplus(-z) } else { softplus(z) };
        let r = crate::tensor::kernels::sigmoid(z) - label as u8 as f64;
        for (g, xi) in gw.iter_mut().zip(row) {
            *g += r * xi / n;
        }
        gb += r / n;
    }
    for (g, w) in gw.iter_mut().zip(&model.weights) {
        *g += 2.0 * lambda * w;
    }
    let penalty = lambda * model.weights.iter().map(|w| w * w).sum::<f64>();
    (loss / n + penalty, gw, gb)
}

/// Full-batch gradient descent. Ten consecutive loss increases count as
/// divergence.
pub fn logreg_train(x: &[Vec<f64>], y: &[bool], cfg: &LogRegConfig) -> Result<LogReg, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::LengthMismatch {
            preds: x.len(),
            labels: y.len(),
        });
    }
    if x.is_empty() {
        return Err(EvalError::Empty);
    }
    let dim = x[0].len();
    let mut model = LogReg {
        weights: vec![0.0; dim],
        bias: 0.0,
    };
    let mut prev = f64::INFINITY;
    let mut rising = 0;
    for step in 0..cfg.steps {
        let (loss, gw, gb) = logreg_loss_grad(x, y, &model, cfg.lambda);
        if !loss.is_finite() {
            return Err(EvalError::Diverged { step, lr: cfg.lr });
        }
        rising = if loss > prev { rising + 1 } else { 0 };
        if rising >= 10 {
            return Err(EvalError::Diverged { step, lr: cfg.lr });
        }
        prev = loss;
        for (w, g) in model.weights.iter_mut().zip(&gw) {
            *w -= cfg.lr * g;
        }
        model.bias -= cfg.lr * gb;
    }
    Ok(model)
}

impl LogReg {
    pub fn predict(&self, x: &[Vec<f64>]) -> Vec<bool> {
        x.iter().map(|row| dot(row, &self.weights) + self.bias >= 0.0).collect()
    }
}

/// TF-IDF fitted on `train`, logistic regression, hard predictions on `test`.
pub fn tfidf_baseline(train: &[Profile], test: &[Profile], cfg: &LogRegConfig) -> Result<Vec<bool>, EvalError> {
    let docs: Vec<String> = train.iter().map(profile_text).collect();
    let tfidf = TfIdf::fit(&docs)?;
    let x: Vec<Vec<f64>> = docs.iter().map(|d| tfidf.transform(d)).collect();
    let y: Vec<bool> = train.iter().map(Profile::label).collect();
    let model = logreg_train(&x, &y, cfg)?;
    let xt: Vec<Vec<f64>> = test.iter().map(|p| tfidf.transform(&profile_text(p))).collect();
    Ok(model.predict(&xt))
}
