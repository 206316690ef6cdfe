//! Notes and label files, and the seeded train/val/test split.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tabular::read_lines;

pub const NOTES_FILE: &str = "notes.jsonl";
pub const LABELS_FILE: &str = "labels.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoteLine {
    pub admission_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelLine {
    pub admission_id: String,
    pub labels: Vec<String>,
}

fn parse_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    read_lines(path)?
        .into_iter()
        .map(|(line, text)| {
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(&row)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Notes keyed by admission id.
pub fn read_notes(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut notes = BTreeMap::new();
    for n in parse_jsonl::<NoteLine>(path)? {
        if notes.insert(n.admission_id.clone(), n.text).is_some() {
            return Err(Error::DuplicateAdmission(n.admission_id));
        }
    }
    if notes.is_empty() {
        return Err(Error::Invalid(format!("{} holds no notes", path.display())));
    }
    Ok(notes)
}

/// Label sets keyed by admission id.
pub fn read_labels(path: &Path) -> Result<BTreeMap<String, BTreeSet<String>>> {
    let mut labels = BTreeMap::new();
    for l in parse_jsonl::<LabelLine>(path)? {
        if labels
            .insert(l.admission_id.clone(), l.labels.into_iter().collect())
            .is_some()
        {
            return Err(Error::DuplicateAdmission(l.admission_id));
        }
    }
    Ok(labels)
}

/// Admission ids per partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Split {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("split serializes")
    }
}

/// Shuffles `ids` and cuts them by `ratios` (rounded to the nearest count;
/// the test part takes the remainder).
pub fn split(ids: &[String], ratios: [f64; 3], rng: &mut impl rand::Rng) -> Result<Split> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Invalid(format!("split ratios {ratios:?} must sum to 1")));
    }
    let n = ids.len();
    let n_train = (n as f64 * ratios[0]).round() as usize;
    let n_val = (n as f64 * ratios[1]).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::Invalid(format!(
            "split of {n} documents by {ratios:?} leaves a partition empty"
        )));
    }
    let mut shuffled = ids.to_vec();
    shuffled.sort();
    shuffled.shuffle(rng);
    let test = shuffled.split_off(n_train + n_val);
    let val = shuffled.split_off(n_train);
    Ok(Split {
        train: shuffled,
        val,
        test,
    })
}
