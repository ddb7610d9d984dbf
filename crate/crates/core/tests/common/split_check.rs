use std::collections::BTreeSet;

use bgm_han::data::{DatasetSplit, Profile};

/// Disjoint, exhaustive, and every part's positive count within one sample
/// of `global_rate × part_size`.
pub fn check_split(all: &[Profile], split: &DatasetSplit) -> Result<(), String> {
    let parts = [&split.train, &split.validation, &split.test];
    let mut seen = BTreeSet::new();
    for part in parts {
        for p in part.iter() {
            if !seen.insert(p.id.clone()) {
                return Err(format!("{} appears twice", p.id));
            }
        }
    }
    let ids: BTreeSet<String> = all.iter().map(|p| p.id.clone()).collect();
    if seen != ids {
        return Err(format!("{} ids in the split, {} in the data", seen.len(), ids.len()));
    }
    let rate = all.iter().filter(|p| p.label == 1).count() as f64 / all.len() as f64;
    for (name, part) in ["train", "validation", "test"].iter().zip(parts) {
        let pos = part.iter().filter(|p| p.label == 1).count() as f64;
        let want = rate * part.len() as f64;
        if (pos - want).abs() > 1.0 + 1e-9 {
            return Err(format!("{name}: {pos} positives of {}, expected about {want:.2}", part.len()));
        }
    }
    Ok(())
}
