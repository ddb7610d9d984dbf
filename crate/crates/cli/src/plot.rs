//! Character plots of training curves.

use std::fmt::Write as _;

use bgm_han::train::EpochRecord;

const HEIGHT: usize = 8;

/// One row per height step, one column per epoch. `log` plots log10 values,
/// which suits the learning rate.
pub fn chart(title: &str, values: &[f64], log: bool) -> String {
    let ys: Vec<f64> = values.iter().map(|&v| if log { v.max(1e-300).log10() } else { v }).collect();
    let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let level = |y: f64| (((y - lo) / span) * (HEIGHT - 1) as f64).round() as usize;
    let label = |y: f64| if log { format!("{:.0e}", 10f64.powf(y)) } else { format!("{y:.3}") };
    let mut out = format!("{title}\n");
    for row in (0..HEIGHT).rev() {
        let axis = match row {
            r if r == HEIGHT - 1 => label(hi),
            0 => label(lo),
            _ => String::new(),
        };
        let line: String = ys.iter().map(|&y| if level(y) == row { '*' } else { ' ' }).collect();
        let _ = writeln!(out, "{axis:>8} |{}", line.trim_end());
    }
    let _ = writeln!(out, "{:>8} +{}", "", "-".repeat(ys.len()));
    let _ = writeln!(out, "{:>8}  epoch 1..{}", "", ys.len());
    out
}

pub fn history_report(name: &str, history: &[EpochRecord]) -> String {
    let col = |f: fn(&EpochRecord) -> f64| history.iter().map(f).collect::<Vec<_>>();
    let best = history
        .iter()
        .fold(None::<&EpochRecord>, |b, r| match b {
            Some(b) if b.val_acc >= r.val_acc => Some(b),
            _ => Some(r),
        })
        .expect("non-empty history");
    let mut out = format!("== {name}: {} epochs, best val_acc {:.4} at epoch {}\n", history.len(), best.val_acc, best.epoch);
    out.push_str(&chart("train loss", &col(|r| r.train_loss), false));
    out.push_str(&chart("validation loss", &col(|r| r.val_loss), false));
    out.push_str(&chart("validation accuracy", &col(|r| r.val_acc), false));
    out.push_str(&chart("learning rate", &col(|r| r.lr), true));
    out
}
