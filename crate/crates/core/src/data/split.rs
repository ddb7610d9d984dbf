use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, Profile};

/// Train / validation / test shares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fractions(pub [f64; 3]);

impl Default for Fractions {
    fn default() -> Self {
        Fractions([0.90, 0.05, 0.05])
    }
}

impl Fractions {
    pub fn validate(&self) -> Result<(), DataError> {
        let f = self.0;
        let ok = f.iter().all(|x| x.is_finite() && *x >= 0.0) && (f.iter().sum::<f64>() - 1.0).abs() < 1e-9;
        if ok {
            Ok(())
        } else {
            Err(DataError::BadFractions(f))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Profile>,
    pub validation: Vec<Profile>,
    pub test: Vec<Profile>,
    pub seed: u64,
    pub fractions: Fractions,
}

/// Largest-remainder apportionment of `n` items over `fractions`; ties go to
/// the earlier share.
pub(crate) fn apportion(n: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts = [0usize; 3];
    for (c, e) in counts.iter_mut().zip(&exact) {
        *c = e.floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut left = n - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Splits so every part keeps the global class ratio to within one sample.
/// Part sizes are apportioned by largest remainder, then each part's
/// positive count is apportioned against `global_rate × size`. Each class is
/// shuffled with `seed` before it is dealt out, and each part is shuffled
/// again afterwards.
pub fn stratified_split(profiles: &[Profile], fractions: Fractions, seed: u64) -> Result<DatasetSplit, DataError> {
    fractions.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let live = fractions.0.iter().filter(|&&f| f > 0.0).count();
    let mut classes: [Vec<&Profile>; 2] = Default::default();
    for p in profiles {
        classes[(p.label == 1) as usize].push(p);
    }
    for (class, members) in classes.iter().enumerate() {
        if members.len() < live {
            return Err(DataError::TooFewSamples {
                class: class as u8,
                count: members.len(),
                need: live,
            });
        }
    }
    let n = profiles.len();
    let totals = apportion(n, &fractions.0);
    let shares = totals.map(|t| t as f64 / n as f64);
    let positives = apportion(classes[1].len(), &shares);
    let mut parts: [Vec<Profile>; 3] = Default::default();
    for (class, members) in classes.iter_mut().enumerate() {
        members.shuffle(&mut rng);
        let mut it = members.iter();
        for (i, part) in parts.iter_mut().enumerate() {
            let count = if class == 1 { positives[i] } else { totals[i] - positives[i] };
            part.extend(it.by_ref().take(count).map(|p| (*p).clone()));
        }
    }
    for (part, name) in parts.iter_mut().zip(["train", "validation", "test"]) {
        if part.is_empty() {
            return Err(DataError::EmptySplit(name));
        }
        part.shuffle(&mut rng);
    }
    let [train, validation, test] = parts;
    Ok(DatasetSplit {
        train,
        validation,
        test,
        seed,
        fractions,
    })
}
