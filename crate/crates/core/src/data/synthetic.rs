//! Seeded generator of admissions-like profiles.
//!
//! Every field gets a score in `[-1, 1]` read back from its text alone, and
//! the clean label is `sum(scores) > 0`. Profiles are drawn by rejection so
//! the sum clears the threshold by at least [`MARGIN`]; label noise then
//! replaces a `1 - signal_strength` share of labels with fresh coin flips.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, Profile};
use crate::embedding::split_sentences;
use crate::tokenizer::NAN_TOKEN;

pub const MARGIN: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n: usize,
    pub signal_strength: f64,
    /// Share of positive profiles before noise.
    pub pos_rate: f64,
    /// Chance that any single field is blanked to the missing token.
    pub blank_fraction: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n: 600,
            signal_strength: 0.9,
            pos_rate: 0.4,
            blank_fraction: 0.05,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.n < 4 {
            return Err(DataError::TooFewProfiles(self.n));
        }
        for (name, value, hi) in [
            ("signal_strength", self.signal_strength, 1.0),
            ("pos_rate", self.pos_rate, 1.0),
            ("blank_fraction", self.blank_fraction, 0.5),
        ] {
            if !(0.0..=hi).contains(&value) {
                return Err(DataError::OutOfRange { name, value });
            }
        }
        Ok(())
    }
}

const H2_SUBJECTS: [&str; 10] = [
    "Mathematics",
    "Further Mathematics",
    "Physics",
    "Chemistry",
    "Biology",
    "Economics",
    "History",
    "Geography",
    "Literature",
    "Computing",
];
const O_SUBJECTS: [&str; 10] = [
    "English",
    "Mathematics",
    "Additional Mathematics",
    "Physics",
    "Chemistry",
    "Biology",
    "Geography",
    "History",
    "Literature",
    "Mother Tongue",
];
const A_GRADES: [(&str, f64); 5] = [("A", 1.0), ("B", 0.5), ("C", 0.0), ("D", -0.5), ("E", -1.0)];
const O_GRADES: [(&str, f64); 6] = [("A1", 1.0), ("A2", 1.0), ("B3", 0.0), ("B4", 0.0), ("C5", -1.0), ("C6", -1.0)];
const ROLES: [(&str, f64); 7] = [
    ("President", 1.0),
    ("Captain", 1.0),
    ("Chairperson", 1.0),
    ("Vice-President", 0.5),
    ("Vice-Captain", 0.5),
    ("Committee Member", -0.5),
    ("Member", -1.0),
];
const CLUBS: [&str; 8] = [
    "Robotics Club",
    "Basketball Team",
    "Debate Society",
    "Symphonic Band",
    "Red Cross Youth",
    "Student Council",
    "Chess Club",
    "Drama Club",
];
const CATEGORIES: [&str; 5] = ["Sports", "Clubs and Societies", "Uniformed Groups", "Performing Arts", "Student Leadership"];
const LEVELS: [&str; 4] = ["School", "Zonal", "National", "International"];
const POSITIVE_PIQ: [&str; 5] = [
    "I founded a coding club for younger students",
    "I led my team through a difficult national competition",
    "I mentored juniors who struggled with mathematics",
    "I persevered after failing my first science fair",
    "I took the initiative to organise a charity drive",
];
const NEGATIVE_PIQ: [&str; 4] = [
    "I gave up on the project when it became hard",
    "I avoided group work whenever possible",
    "I was not interested in activities outside class",
    "I rarely completed tasks without reminders",
];
const NEUTRAL_PIQ: [&str; 5] = [
    "I enjoy reading about history",
    "My family moved to a new neighbourhood last year",
    "I like playing the piano on weekends",
    "I spent the holidays at home with my cousins",
    "My favourite subject is geography",
];
const POSITIVE_SIGNALS: [&str; 5] = ["founded", "led my team", "mentored", "persevered", "took the initiative"];
const NEGATIVE_SIGNALS: [&str; 4] = ["gave up", "avoided", "not interested", "rarely completed"];

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = xs.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

fn lookup(table: &[(&str, f64)], key: &str) -> Option<f64> {
    table.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
}

fn a_level_score(text: &str) -> f64 {
    mean(
        split_sentences(text)
            .into_iter()
            .filter_map(|s| lookup(&A_GRADES, s.split_whitespace().last()?)),
    )
}

fn o_level_score(text: &str) -> f64 {
    mean(
        split_sentences(text)
            .into_iter()
            .filter_map(|s| lookup(&O_GRADES, s.split_whitespace().last()?)),
    )
}

fn leadership_score(text: &str) -> f64 {
    mean(
        split_sentences(text)
            .into_iter()
            .filter_map(|s| lookup(&ROLES, s.split(',').next()?.trim())),
    )
}

fn piq_score(text: &str) -> f64 {
    mean(split_sentences(text).into_iter().map(|s| {
        if POSITIVE_SIGNALS.iter().any(|p| s.contains(p)) {
            1.0
        } else if NEGATIVE_SIGNALS.iter().any(|p| s.contains(p)) {
            -1.0
        } else {
            0.0
        }
    }))
}

/// Per-field scores in `[-1, 1]`, computed from the text only.
pub fn field_scores(p: &Profile) -> [f64; 4] {
    [
        a_level_score(&p.gcea),
        o_level_score(&p.gceo),
        leadership_score(&p.leadership),
        piq_score(&p.piq),
    ]
}

pub fn latent_score(p: &Profile) -> f64 {
    field_scores(p).iter().sum()
}

/// The generator's noise-free decision rule.
pub fn latent_label(p: &Profile) -> bool {
    latent_score(p) > 0.0
}

/// A positive-scoring entry with probability `q`, otherwise a non-positive one.
fn pick_grade<'a>(rng: &mut ChaCha8Rng, grades: &[(&'a str, f64)], q: f64) -> &'a str {
    let good = rng.gen_bool(q);
    let pool: Vec<&str> = grades
        .iter()
        .filter(|(_, v)| if good { *v > 0.0 } else { *v <= 0.0 })
        .map(|(g, _)| *g)
        .collect();
    pool[rng.gen_range(0..pool.len())]
}

fn join(sentences: Vec<String>) -> String {
    let mut out = sentences.join(". ");
    out.push('.');
    out
}

fn gen_gcea(rng: &mut ChaCha8Rng, q: f64) -> String {
    let mut subjects: Vec<&str> = H2_SUBJECTS.choose_multiple(rng, 3).copied().collect();
    subjects.sort_unstable();
    let mut lines: Vec<String> = subjects
        .into_iter()
        .map(|s| format!("H2 {s} {}", pick_grade(rng, &A_GRADES, q)))
        .collect();
    lines.push(format!("H1 General Paper {}", pick_grade(rng, &A_GRADES, q)));
    join(lines)
}

fn gen_gceo(rng: &mut ChaCha8Rng, q: f64) -> String {
    let subjects: Vec<&str> = O_SUBJECTS.choose_multiple(rng, 4).copied().collect();
    join(
        subjects
            .into_iter()
            .map(|s| format!("{s} {}", pick_grade(rng, &O_GRADES, q)))
            .collect(),
    )
}

fn gen_leadership(rng: &mut ChaCha8Rng, q: f64) -> String {
    let entries = rng.gen_range(1..=3);
    join(
        (0..entries)
            .map(|_| {
                format!(
                    "{}, {}, {}, {} level, {}",
                    pick_grade(rng, &ROLES, q),
                    CLUBS.choose(rng).unwrap(),
                    CATEGORIES.choose(rng).unwrap(),
                    LEVELS.choose(rng).unwrap(),
                    rng.gen_range(2018..=2023)
                )
            })
            .collect(),
    )
}

fn gen_piq(rng: &mut ChaCha8Rng, q: f64) -> String {
    let count = rng.gen_range(2..=4);
    join(
        (0..count)
            .map(|_| {
                let pool: &[&str] = if rng.gen_bool(0.25) {
                    &NEUTRAL_PIQ
                } else if rng.gen_bool(q) {
                    &POSITIVE_PIQ
                } else {
                    &NEGATIVE_PIQ
                };
                pool.choose(rng).unwrap().to_string()
            })
            .collect(),
    )
}

fn draw_profile(rng: &mut ChaCha8Rng, id: String, positive: bool, blank: f64) -> Profile {
    loop {
        let q = if positive {
            rng.gen_range(0.55..0.95)
        } else {
            rng.gen_range(0.05..0.45)
        };
        let mut fields = [gen_gcea(rng, q), gen_gceo(rng, q), gen_leadership(rng, q), gen_piq(rng, q)];
        for f in &mut fields {
            if blank > 0.0 && rng.gen_bool(blank) {
                *f = NAN_TOKEN.to_string();
            }
        }
        let [gcea, gceo, leadership, piq] = fields;
        let p = Profile {
            id: id.clone(),
            gcea,
            gceo,
            leadership,
            piq,
            label: positive as u8,
        };
        let score = latent_score(&p);
        if (positive && score >= MARGIN) || (!positive && score <= -MARGIN) {
            return p;
        }
    }
}

pub fn generate_synthetic(cfg: &SyntheticConfig, seed: u64) -> Result<Vec<Profile>, DataError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..cfg.n)
        .map(|i| {
            let positive = rng.gen_bool(cfg.pos_rate);
            let mut p = draw_profile(&mut rng, format!("s{i:05}"), positive, cfg.blank_fraction);
            if !rng.gen_bool(cfg.signal_strength) {
                p.label = rng.gen_bool(cfg.pos_rate) as u8;
            }
            p
        })
        .collect())
}
