use bgm_han::config::RunConfig;
use bgm_han::data::generate_synthetic;
use bgm_han::model::{Model, Param};
use bgm_han::pipeline::{prepare, train_model};
use bgm_han::tensor::{finite_diff_grad, relative_error, Graph, Tensor};
use bgm_han::train::{
    accuracy, class_weights, clip_gradients, decisions, l2_penalty, predict_set, read_history, train, weighted_bce,
    write_history, AdamW, EarlyStopping, PlateauScheduler, TrainConfig, BCE_EPS,
};
use proptest::prelude::*;

#[test]
fn scheduler_trace_with_flat_accuracy() {
    let mut s = PlateauScheduler::new(1e-3, 0.1, 2, 1e-7, 0.5);
    let mut decayed_at = Vec::new();
    let mut rates = Vec::new();
    for epoch in 1..=12 {
        if s.step(0.5) {
            decayed_at.push(epoch);
        }
        rates.push(s.lr);
    }
    assert_eq!(&decayed_at[..2], &[2, 4]);
    let want = [1e-3, 1e-4, 1e-4, 1e-5, 1e-5, 1e-6, 1e-6, 1e-7, 1e-7, 1e-7, 1e-7, 1e-7];
    for (got, want) in rates.iter().zip(want) {
        assert!((got - want).abs() <= want * 1e-9, "{rates:?}");
    }
    assert_eq!(s.lr, 1e-7);
}

#[test]
fn scheduler_resets_on_improvement() {
    let mut s = PlateauScheduler::new(1e-3, 0.1, 2, 1e-7, 0.5);
    assert!(!s.step(0.5));
    assert!(!s.step(0.6));
    assert!(!s.step(0.6));
    assert!(s.step(0.6));
    assert!((s.lr - 1e-4).abs() < 1e-15);
    // An increase smaller than the improvement threshold is not progress.
    assert!(!s.step(0.6 + 1e-9));
    assert!(s.step(0.6 + 1e-9));
}

#[test]
fn early_stopping_fires_after_exactly_ten_flat_epochs() {
    let mut e = EarlyStopping::new(10, 0.5);
    let accs = [0.6, 0.7, 0.65, 0.7, 0.7, 0.69, 0.7, 0.7, 0.7, 0.7, 0.7, 0.7];
    let mut fired = None;
    for (i, acc) in accs.iter().chain(std::iter::repeat(&0.7)).enumerate().take(40) {
        if e.step(*acc) {
            fired = Some(i + 1);
            break;
        }
    }
    // Last improvement at epoch 2, so epochs 3..=12 are the ten flat ones.
    assert_eq!(fired, Some(12));
}

#[test]
fn joint_trace_k3_p10() {
    let mut s = PlateauScheduler::new(1e-3, 0.1, 3, 1e-7, 0.5);
    let mut e = EarlyStopping::new(10, 0.5);
    let mut decays = Vec::new();
    let mut stop = None;
    for epoch in 1..=50 {
        if s.step(0.5) {
            decays.push(epoch);
        }
        if e.step(0.5) {
            stop = Some(epoch);
            break;
        }
    }
    assert_eq!(decays, vec![3, 6, 9]);
    assert_eq!(stop, Some(10));
    assert!((s.lr - 1e-6).abs() < 1e-18);
}

#[test]
fn class_weight_and_bce_examples() {
    let labels: Vec<bool> = (0..100).map(|i| i < 20).collect();
    assert_eq!(class_weights(&labels).unwrap(), (0.625, 2.5));
    let n = 37;
    let mixed: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
    let loss = weighted_bce(&vec![0.5; n], &mixed, (1.0, 1.0)).unwrap();
    assert!((loss - n as f64 * std::f64::consts::LN_2).abs() < 1e-9);
}

#[test]
fn clipping_three_four() {
    let mut g = vec![vec![3.0], vec![4.0]];
    assert_eq!(clip_gradients(&mut g, 1.0), 5.0);
    assert!((g[0][0] - 0.6).abs() < 1e-15);
    assert!((g[1][0] - 0.8).abs() < 1e-15);
}

proptest! {
    #[test]
    fn weighted_classes_contribute_equal_mass(labels in prop::collection::vec(any::<bool>(), 2..300)) {
        let pos = labels.iter().filter(|&&y| y).count();
        prop_assume!(pos > 0 && pos < labels.len());
        let (w0, w1) = class_weights(&labels).unwrap();
        let n = labels.len() as f64;
        prop_assert!((w1 * pos as f64 - n / 2.0).abs() < 1e-9);
        prop_assert!((w0 * (labels.len() - pos) as f64 - n / 2.0).abs() < 1e-9);
    }

    #[test]
    fn graph_bce_agrees_with_plain_bce(
        probs in prop::collection::vec(0.01f64..0.99, 1..20),
        seed in any::<u64>(),
    ) {
        let labels: Vec<bool> = probs.iter().enumerate().map(|(i, _)| (seed >> (i % 64)) & 1 == 1).collect();
        let w = (0.8, 1.7);
        let plain = weighted_bce(&probs, &labels, w).unwrap();
        let mut g = Graph::new();
        let p = g.param(Tensor::from_vec(probs.clone()));
        let targets = labels.iter().map(|&y| y as u8 as f64).collect();
        let weights = labels.iter().map(|&y| if y { w.1 } else { w.0 }).collect();
        let l = g.weighted_bce(p, targets, weights, BCE_EPS).unwrap();
        prop_assert!((g.value(l).item() - plain).abs() < 1e-9);
    }
}

#[test]
fn bce_gradient_matches_finite_differences() {
    let probs = Tensor::from_vec(vec![0.2, 0.7, 0.55, 0.9]);
    let labels = [true, false, true, true];
    let w = (1.4, 0.6);
    let mut g = Graph::new();
    let p = g.param(probs.clone());
    let l = g
        .weighted_bce(
            p,
            labels.iter().map(|&y| y as u8 as f64).collect(),
            labels.iter().map(|&y| if y { w.1 } else { w.0 }).collect(),
            BCE_EPS,
        )
        .unwrap();
    let grads = g.backward(l).unwrap();
    let numeric = finite_diff_grad(|t| weighted_bce(t.data(), &labels, w).unwrap(), &probs, 1e-6);
    for (a, n) in grads.get(p).unwrap().iter().zip(numeric.data()) {
        assert!(relative_error(*a, *n, 1e-8) < 1e-6, "{a} vs {n}");
    }
}

fn scalar_param(value: f64, decay: bool) -> Param {
    Param {
        name: "theta".into(),
        value: Tensor::from_vec(vec![value]),
        decay,
    }
}

#[test]
fn adamw_first_step_on_a_square() {
    // f(θ) = θ², θ₀ = 1: m̂ = g, v̂ = g², so the step is lr·g/(|g| + ε).
    let mut params = vec![scalar_param(1.0, true)];
    let mut opt = AdamW::new(&params);
    opt.update(&mut params, &[vec![2.0]], 0.1, 0.0).unwrap();
    let want = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
    assert!((params[0].value.data()[0] - want).abs() < 1e-15);

    // Second step: m = 0.9·0.1·2 + 0.1·g₂, v likewise, bias-corrected.
    let theta = params[0].value.data()[0];
    let g2 = 2.0 * theta;
    opt.update(&mut params, &[vec![g2]], 0.1, 0.0).unwrap();
    let m = 0.9 * 0.2 + 0.1 * g2;
    let v = 0.999 * 0.004 + 0.001 * g2 * g2;
    let m_hat = m / (1.0 - 0.81);
    let v_hat = v / (1.0 - 0.999f64.powi(2));
    let want = theta - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
    assert!((params[0].value.data()[0] - want).abs() < 1e-14);
}

#[test]
fn decoupled_decay_shrinks_only_flagged_parameters() {
    let mut params = vec![scalar_param(2.0, true), scalar_param(2.0, false)];
    let mut opt = AdamW::new(&params);
    for _ in 0..3 {
        opt.update(&mut params, &[vec![0.0], vec![0.0]], 0.1, 0.5).unwrap();
    }
    assert!((params[0].value.data()[0] - 2.0 * 0.95f64.powi(3)).abs() < 1e-15);
    assert_eq!(params[1].value.data()[0], 2.0);
}

#[test]
fn decoupled_decay_differs_from_l2_in_the_gradient() {
    // With zero loss gradient, folding λθ into the gradient makes Adam take a
    // full lr-sized step; decoupled decay moves θ by lr·λ·θ only.
    let (lr, lambda) = (0.01, 0.1);
    let mut decoupled = vec![scalar_param(1.0, true)];
    let mut coupled = vec![scalar_param(1.0, false)];
    let mut a = AdamW::new(&decoupled);
    let mut b = AdamW::new(&coupled);
    let mut trace = Vec::new();
    for _ in 0..3 {
        a.update(&mut decoupled, &[vec![0.0]], lr, lambda).unwrap();
        let theta = coupled[0].value.data()[0];
        b.update(&mut coupled, &[vec![2.0 * lambda * theta]], lr, 0.0).unwrap();
        trace.push((decoupled[0].value.data()[0], coupled[0].value.data()[0]));
    }
    let (d3, c3) = trace[2];
    assert!((d3 - (1.0 - lr * lambda).powi(3)).abs() < 1e-15);
    assert!((c3 - (1.0 - 3.0 * lr)).abs() < 1e-3, "{trace:?}");
}

#[test]
fn l2_penalty_counts_decaying_weights_only() {
    let params = vec![scalar_param(3.0, true), scalar_param(5.0, false)];
    assert!((l2_penalty(&params, 0.1) - 0.9).abs() < 1e-15);
}

#[test]
fn accuracy_and_threshold() {
    assert_eq!(decisions(&[0.5, 0.49, 0.51]), vec![true, false, true]);
    assert_eq!(accuracy(&[true, false], &[true, true]), 0.5);
}

fn small_run(n: usize, signal: f64, extra: &[&str]) -> RunConfig {
    let mut overrides = vec![format!("data.n={n}"), format!("data.signal_strength={signal}")];
    overrides.extend(extra.iter().map(|s| s.to_string()));
    RunConfig::layered(None, Some(&RunConfig::desk().to_toml()), &overrides).unwrap()
}

#[test]
fn overfits_a_small_clean_set() {
    let cfg = small_run(60, 1.0, &["data.blank_fraction=0.0"]);
    let profiles = generate_synthetic(&cfg.synthetic(), 1).unwrap();
    let prepared = prepare(&profiles, &cfg).unwrap();
    let mut all = prepared.train.clone();
    all.inputs.extend(prepared.val.inputs.iter().cloned());
    all.labels.extend(&prepared.val.labels);
    all.inputs.extend(prepared.test.inputs.iter().cloned());
    all.labels.extend(&prepared.test.labels);
    let model = Model::new(cfg.model_config(prepared.tokenizer.vocab_size()), 0).unwrap();
    let train_cfg = TrainConfig {
        batch_size: 8,
        ..cfg.train.clone()
    };
    let outcome = train(model, &all, &all, &train_cfg).unwrap();
    let acc = accuracy(&decisions(&predict_set(&outcome.best, &all, 32).unwrap()), &all.labels);
    assert!(acc >= 0.95, "training accuracy {acc}");
    assert_eq!(acc, outcome.best_val_acc);
}

#[test]
fn stopping_epoch_is_best_plus_patience() {
    let cfg = small_run(80, 0.0, &["train.early_stop_patience=4", "train.max_epochs=40"]);
    let profiles = generate_synthetic(&cfg.synthetic(), 3).unwrap();
    let prepared = prepare(&profiles, &cfg).unwrap();
    let mut one = prepared.val.clone();
    one.inputs.truncate(1);
    one.labels.truncate(1);
    let model = Model::new(cfg.model_config(prepared.tokenizer.vocab_size()), 0).unwrap();
    let outcome = train(model, &prepared.train, &one, &cfg.train).unwrap();
    assert!(outcome.stopped_early);
    assert_eq!(outcome.history.len(), outcome.best_epoch + 4);
    // The winning checkpoint is the first epoch with the maximum accuracy.
    let max = outcome.history.iter().map(|r| r.val_acc).fold(outcome.initial_val_acc, f64::max);
    let first = if outcome.initial_val_acc == max {
        0
    } else {
        outcome.history.iter().find(|r| r.val_acc == max).unwrap().epoch
    };
    assert_eq!(outcome.best_epoch, first);
}

#[test]
fn training_is_deterministic_and_history_round_trips() {
    let cfg = small_run(80, 0.9, &["train.max_epochs=3", "model.dropout=0.2"]);
    let profiles = generate_synthetic(&cfg.synthetic(), 5).unwrap();
    let prepared = prepare(&profiles, &cfg).unwrap();
    let a = train_model(&cfg, &prepared).unwrap();
    let b = train_model(&cfg, &prepared).unwrap();
    assert_eq!(a.best, b.best);
    assert_eq!(a.history, b.history);
    assert_eq!(a.history.len(), 3);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("history.jsonl");
    write_history(&path, &a.history).unwrap();
    assert_eq!(read_history(&path).unwrap(), a.history);

    let mut other = cfg.clone();
    other.train.seed = 1;
    assert_ne!(train_model(&other, &prepared).unwrap().history, a.history);
}

#[test]
fn single_class_training_set_is_rejected() {
    let cfg = small_run(40, 0.9, &[]);
    let profiles = generate_synthetic(&cfg.synthetic(), 0).unwrap();
    let mut prepared = prepare(&profiles, &cfg).unwrap();
    prepared.train.labels.iter_mut().for_each(|y| *y = true);
    let err = train_model(&cfg, &prepared).unwrap_err().to_string();
    assert!(err.contains("both classes"), "{err}");
}
