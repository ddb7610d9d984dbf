//! Applicant profiles, line-delimited JSON records and dataset splits.

mod split;
mod synthetic;

pub use split::{stratified_split, DatasetSplit, Fractions};
pub use synthetic::{field_scores, generate_synthetic, latent_label, latent_score, SyntheticConfig, MARGIN};

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::tokenizer::NAN_TOKEN;

pub const FIELD_NAMES: [&str; 4] = ["gcea", "gceo", "leadership", "piq"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: label must be 0 or 1, got {value}")]
    InvalidLabel { line: usize, value: String },
    #[error("{} bad records; first: {}", .0.len(), .0[0])]
    Records(Vec<DataError>),
    #[error("split fractions must be non-negative and sum to 1, got {0:?}")]
    BadFractions([f64; 3]),
    #[error("class {class} has {count} samples, need at least {need} to stratify")]
    TooFewSamples { class: u8, count: usize, need: usize },
    #[error("split `{0}` would be empty")]
    EmptySplit(&'static str),
    #[error("need at least 4 profiles, got {0}")]
    TooFewProfiles(usize),
    #[error("{name} must lie in [0, 1], got {value}")]
    OutOfRange { name: &'static str, value: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One applicant: four text fields and the binary decision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Profile {
    pub id: String,
    pub gcea: String,
    pub gceo: String,
    pub leadership: String,
    pub piq: String,
    pub label: u8,
}

impl Profile {
    /// Fields in model order.
    pub fn fields(&self) -> [&str; 4] {
        [&self.gcea, &self.gceo, &self.leadership, &self.piq]
    }

    fn fields_mut(&mut self) -> [&mut String; 4] {
        [&mut self.gcea, &mut self.gceo, &mut self.leadership, &mut self.piq]
    }

    pub fn label(&self) -> bool {
        self.label == 1
    }
}

/// Replaces every blank field with the missing-value token and returns the
/// names of the fields it touched.
pub fn handle_missing(profile: &mut Profile) -> Vec<&'static str> {
    let mut touched = Vec::new();
    for (name, field) in FIELD_NAMES.into_iter().zip(profile.fields_mut()) {
        if field.trim().is_empty() {
            *field = NAN_TOKEN.to_string();
            touched.push(name);
        }
    }
    touched
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    /// `(line, field)` for every field that was absent or blank.
    pub missing: Vec<(usize, &'static str)>,
}

impl fmt::Display for LoadReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.missing.is_empty() {
            return write!(f, "no missing fields");
        }
        write!(f, "{} missing fields replaced with {NAN_TOKEN}:", self.missing.len())?;
        for (line, field) in &self.missing {
            write!(f, " {line}:{field}")?;
        }
        Ok(())
    }
}

fn parse_label(v: &Value, line: usize) -> Result<u8, DataError> {
    let bad = || DataError::InvalidLabel { line, value: v.to_string() };
    match v {
        Value::Number(n) => match n.as_u64() {
            Some(x @ (0 | 1)) => Ok(x as u8),
            _ => Err(bad()),
        },
        Value::String(s) => match s.trim() {
            "0" => Ok(0),
            "1" => Ok(1),
            _ => Err(bad()),
        },
        Value::Bool(b) => Ok(*b as u8),
        _ => Err(bad()),
    }
}

fn parse_record(text: &str, line: usize, report: &mut LoadReport) -> Result<Profile, DataError> {
    let malformed = |msg: String| DataError::Malformed { line, msg };
    let value: Value = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
    let obj = value.as_object().ok_or_else(|| malformed("record is not an object".into()))?;
    let id = match obj.get("id") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        None => format!("line{line}"),
        Some(other) => return Err(malformed(format!("id must be a string, got {other}"))),
    };
    let label = parse_label(obj.get("label").ok_or_else(|| malformed("missing label".into()))?, line)?;
    let mut fields = [String::new(), String::new(), String::new(), String::new()];
    for (name, slot) in FIELD_NAMES.into_iter().zip(fields.iter_mut()) {
        match obj.get(name) {
            None | Some(Value::Null) => {}
            Some(Value::String(s)) => *slot = s.clone(),
            Some(other) => return Err(malformed(format!("{name} must be text, got {other}"))),
        }
    }
    let [gcea, gceo, leadership, piq] = fields;
    let mut profile = Profile {
        id,
        gcea,
        gceo,
        leadership,
        piq,
        label,
    };
    report
        .missing
        .extend(handle_missing(&mut profile).into_iter().map(|f| (line, f)));
    Ok(profile)
}

/// Parses JSON-lines records; blank lines are skipped. Every bad line is
/// collected before failing.
pub fn parse_profiles(reader: impl BufRead) -> Result<(Vec<Profile>, LoadReport), DataError> {
    let mut report = LoadReport::default();
    let mut profiles = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        match parse_record(&text, line_no, &mut report) {
            Ok(p) => profiles.push(p),
            Err(e) => errors.push(e),
        }
    }
    match errors.len() {
        0 => Ok((profiles, report)),
        1 => Err(errors.pop().unwrap()),
        _ => Err(DataError::Records(errors)),
    }
}

pub fn load_profiles(path: impl AsRef<Path>) -> Result<(Vec<Profile>, LoadReport), DataError> {
    let file = std::fs::File::open(path)?;
    parse_profiles(std::io::BufReader::new(file))
}

pub fn write_profiles(mut w: impl Write, profiles: &[Profile]) -> std::io::Result<()> {
    for p in profiles {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_profiles(path: impl AsRef<Path>, profiles: &[Profile]) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_profiles(&mut w, profiles)?;
    w.flush()
}

pub fn labels(profiles: &[Profile]) -> Vec<bool> {
    profiles.iter().map(Profile::label).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<(Vec<Profile>, LoadReport), DataError> {
        parse_profiles(text.as_bytes())
    }

    #[test]
    fn loads_well_formed_records() {
        let text = r#"{"id":"a","gcea":"H2 Physics A","gceo":"English A1","leadership":"Captain","piq":"I led.","label":1}
{"id":"b","gcea":"x","gceo":"y","leadership":"z","piq":"w","label":0}
{"id":"c","gcea":"x","gceo":"y","leadership":"z","piq":"w","label":"1"}
"#;
        let (ps, report) = parse(text).unwrap();
        assert_eq!(ps.len(), 3);
        assert_eq!(ps[2].label, 1);
        assert!(report.missing.is_empty());
    }

    #[test]
    fn missing_field_becomes_nan_and_is_reported() {
        let text = r#"{"id":"a","gcea":"x","gceo":"y","leadership":"  ","label":0}"#;
        let (ps, report) = parse(text).unwrap();
        assert_eq!(ps[0].piq, NAN_TOKEN);
        assert_eq!(ps[0].leadership, NAN_TOKEN);
        assert_eq!(report.missing, vec![(1, "leadership"), (1, "piq")]);
    }

    #[test]
    fn bad_label_is_rejected_with_line() {
        let text = "{\"id\":\"a\",\"label\":0}\n{\"id\":\"b\",\"label\":2}\n";
        match parse(text) {
            Err(DataError::InvalidLabel { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected invalid label, got {other:?}"),
        }
        let text = "{\"label\":\"2\"}\nnot json\n";
        match parse(text) {
            Err(DataError::Records(errs)) => assert_eq!(errs.len(), 2),
            other => panic!("expected two errors, got {other:?}"),
        }
    }

    #[test]
    fn handle_missing_is_identity_on_present_fields() {
        let mut p = Profile {
            id: "x".into(),
            gcea: " H2 Physics A ".into(),
            gceo: String::new(),
            leadership: String::new(),
            piq: "\t".into(),
            label: 0,
        };
        let before = p.gcea.clone();
        assert_eq!(handle_missing(&mut p), vec!["gceo", "leadership", "piq"]);
        assert_eq!(p.gcea, before);
        assert_eq!(p.gceo, NAN_TOKEN);
    }

    #[test]
    fn save_load_round_trip_is_identical() {
        let ps = generate_synthetic(&SyntheticConfig { n: 12, ..SyntheticConfig::default() }, 5).unwrap();
        let mut buf = Vec::new();
        write_profiles(&mut buf, &ps).unwrap();
        let (back, _) = parse_profiles(buf.as_slice()).unwrap();
        let mut again = Vec::new();
        write_profiles(&mut again, &back).unwrap();
        assert_eq!(buf, again);
        assert_eq!(back, ps);
    }
}
