//! Seeded synthetic admissions: a note, structured records and a label set
//! per admission, with label evidence planted in the text, the tables or both.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{write_jsonl, LabelLine, NoteLine, LABELS_FILE, NOTES_FILE};
use crate::error::{Error, Result};
use crate::tabular::{
    EventCategory, EventLine, SingletonLine, SingletonValue, TimeSeriesLine, EVENTS_FILE,
    SINGLETONS_FILE, TIMESERIES_FILE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalSource {
    /// A label-specific n-gram is planted somewhere in the note.
    Text,
    /// A label-specific drug event or a raised lab series is planted.
    Tabular,
    /// Both of the above are needed; negatives may carry either one alone.
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelSignal {
    pub source: SignalSource,
    /// Probability that the planted evidence follows the label; otherwise it
    /// is drawn independently of it.
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_docs: usize,
    pub labels: Vec<LabelSignal>,
    pub label_prior: f64,
    /// Number of distinct filler words.
    pub vocab_size: usize,
    pub doc_len_min: usize,
    pub doc_len_max: usize,
    pub ngram_len: usize,
    /// Probability that a filler position holds a number or punctuation.
    pub junk_rate: f64,
    /// Probability that a note mentions the cue word of a label with tabular
    /// evidence, independent of the label.
    pub cue_rate: f64,
    pub n_ts_classes: usize,
    pub ts_points: usize,
    /// Probability that an admission has no measurements for a series.
    pub ts_missing_rate: f64,
    pub n_items: usize,
    pub item_rate: f64,
    pub n_singletons: usize,
}

impl Default for SyntheticSpec {
    /// Ten labels of mixed sources with about 5.7 labels per admission.
    fn default() -> Self {
        let sources = [
            SignalSource::Text,
            SignalSource::Tabular,
            SignalSource::Both,
            SignalSource::Text,
            SignalSource::Tabular,
        ];
        Self {
            n_docs: 200,
            labels: (0..10)
                .map(|i| LabelSignal {
                    source: sources[i % sources.len()],
                    strength: 0.9,
                })
                .collect(),
            label_prior: 0.57,
            vocab_size: 300,
            doc_len_min: 40,
            doc_len_max: 120,
            ngram_len: 2,
            junk_rate: 0.05,
            cue_rate: 0.5,
            n_ts_classes: 6,
            ts_points: 4,
            ts_missing_rate: 0.1,
            n_items: 30,
            item_rate: 0.1,
            n_singletons: 3,
        }
    }
}

impl SyntheticSpec {
    /// 64 admissions, 8 labels, every label fully determined by its evidence.
    pub fn memorize() -> Self {
        let sources = [SignalSource::Text, SignalSource::Tabular];
        Self {
            n_docs: 64,
            labels: (0..8)
                .map(|i| LabelSignal {
                    source: sources[i % 2],
                    strength: 1.0,
                })
                .collect(),
            label_prior: 0.4,
            doc_len_min: 20,
            doc_len_max: 40,
            ..Self::default()
        }
    }

    /// Four text-source and four tabular-source labels; every note names the
    /// cue word of each tabular label, whatever its value.
    pub fn lift() -> Self {
        let mut labels = vec![
            LabelSignal {
                source: SignalSource::Text,
                strength: 1.0,
            };
            4
        ];
        labels.extend(
            [LabelSignal {
                source: SignalSource::Tabular,
                strength: 1.0,
            }; 4],
        );
        Self {
            n_docs: 128,
            labels,
            label_prior: 0.4,
            cue_rate: 1.0,
            doc_len_min: 20,
            doc_len_max: 40,
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "memorize" => Ok(Self::memorize()),
            "lift" => Ok(Self::lift()),
            _ => Err(Error::Invalid(format!(
                "unknown preset {name} (expected default, memorize or lift)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(format!("synthetic spec: {m}")));
        if self.n_docs == 0 || self.labels.is_empty() || self.vocab_size == 0 {
            return bad("n_docs, labels and vocab_size must be nonempty");
        }
        if self.doc_len_min == 0 || self.doc_len_min > self.doc_len_max {
            return bad("need 1 <= doc_len_min <= doc_len_max");
        }
        if self.ngram_len == 0 || self.ts_points == 0 {
            return bad("ngram_len and ts_points must be positive");
        }
        let probs = [
            self.label_prior,
            self.junk_rate,
            self.cue_rate,
            self.ts_missing_rate,
            self.item_rate,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("rates and the label prior must lie in [0, 1]");
        }
        if self.labels.iter().any(|l| !(0.0..=1.0).contains(&l.strength)) {
            return bad("signal strengths must lie in [0, 1]");
        }
        Ok(())
    }

    /// Checks that every source kind in `kinds` routes at least one label.
    pub fn require_sources(&self, kinds: &[SignalSource]) -> Result<()> {
        for kind in kinds {
            if !self.labels.iter().any(|l| l.source == *kind) {
                return Err(Error::Invalid(format!("synthetic spec has no {kind:?} label")));
            }
        }
        Ok(())
    }
}

/// Lowercase alphabetic word for `i` under a prefix, e.g. `("w", 27) -> "wbb"`.
fn word(prefix: &str, mut i: usize) -> String {
    let mut letters = Vec::new();
    loop {
        letters.push(b'a' + (i % 26) as u8);
        i /= 26;
        if i == 0 {
            break;
        }
    }
    letters.resize(letters.len().max(2), b'a');
    letters.reverse();
    format!("{prefix}{}", String::from_utf8(letters).expect("ascii"))
}

pub fn label_name(l: usize) -> String {
    format!("D{l:03}")
}

pub fn marker_words(label: usize, ngram_len: usize) -> Vec<String> {
    (0..ngram_len).map(|j| word("mk", label * ngram_len + j)).collect()
}

pub fn cue_word(label: usize) -> String {
    word("cue", label)
}

/// Structured evidence used for a label: even labels get a drug event, odd
/// labels a raised lab series.
fn signal_item(label: usize) -> Option<String> {
    (label % 2 == 0).then(|| format!("rx{label}"))
}

fn signal_series(label: usize) -> Option<String> {
    (label % 2 == 1).then(|| format!("lab{label}"))
}

const CATEGORIES: [EventCategory; 5] = [
    EventCategory::LabAbnormal,
    EventCategory::Drug,
    EventCategory::Organism,
    EventCategory::Specimen,
    EventCategory::Antibiotic,
];

const JUNK: [&str; 5] = ["120/80", "5mg", "2.5", "-", "q4h"];

struct Admission {
    id: String,
    text: String,
    labels: Vec<String>,
    series: Vec<(String, Vec<f64>)>,
    events: Vec<(EventCategory, String)>,
    singletons: Vec<(String, SingletonValue)>,
}

fn admission(spec: &SyntheticSpec, index: usize, rng: &mut ChaCha8Rng) -> Admission {
    let n_labels = spec.labels.len();
    let mut gold = vec![false; n_labels];
    let mut text_on = vec![false; n_labels];
    let mut table_on = vec![false; n_labels];
    for (l, signal) in spec.labels.iter().enumerate() {
        let y = rng.gen_bool(spec.label_prior);
        let z = if rng.gen_bool(signal.strength) {
            y
        } else {
            rng.gen_bool(spec.label_prior)
        };
        gold[l] = y;
        match signal.source {
            SignalSource::Text => text_on[l] = z,
            SignalSource::Tabular => table_on[l] = z,
            SignalSource::Both => {
                if z {
                    text_on[l] = true;
                    table_on[l] = true;
                } else if rng.gen_bool(0.5) {
                    text_on[l] = true;
                } else {
                    table_on[l] = true;
                }
            }
        }
    }

    let len = rng.gen_range(spec.doc_len_min..=spec.doc_len_max);
    let mut tokens: Vec<String> = (0..len)
        .map(|_| {
            if rng.gen_bool(spec.junk_rate) {
                JUNK[rng.gen_range(0..JUNK.len())].to_string()
            } else {
                word("w", rng.gen_range(0..spec.vocab_size))
            }
        })
        .collect();
    // Planted units go into gaps between filler tokens so none is split.
    let mut units: Vec<(usize, Vec<String>)> = Vec::new();
    for (l, signal) in spec.labels.iter().enumerate() {
        if signal.source != SignalSource::Text && rng.gen_bool(spec.cue_rate) {
            units.push((rng.gen_range(0..=len), vec![cue_word(l)]));
        }
        if text_on[l] {
            units.push((rng.gen_range(0..=len), marker_words(l, spec.ngram_len)));
        }
    }
    units.sort_by_key(|u| u.0);
    for (at, unit) in units.into_iter().rev() {
        tokens.splice(at..at, unit);
    }

    let mut series = Vec::new();
    for k in 0..spec.n_ts_classes {
        if !rng.gen_bool(spec.ts_missing_rate) {
            let vals = (0..spec.ts_points).map(|_| rng.gen_range(-1.0..1.0)).collect();
            series.push((format!("vital{k}"), vals));
        }
    }
    let mut events = Vec::new();
    for k in 0..spec.n_items {
        if rng.gen_bool(spec.item_rate) {
            events.push((CATEGORIES[k % CATEGORIES.len()], format!("item{k}")));
        }
    }
    for l in 0..n_labels {
        if let Some(item) = signal_item(l) {
            if table_on[l] {
                events.push((EventCategory::Drug, item));
            }
        }
        if let Some(class) = signal_series(l) {
            let shift = if table_on[l] { 2.0 } else { 0.0 };
            let vals = (0..spec.ts_points)
                .map(|_| shift + rng.gen_range(-1.0..1.0))
                .collect();
            series.push((class, vals));
        }
    }
    let mut singletons = vec![(
        "admission_type".to_string(),
        SingletonValue::Categorical(["elective", "emergency", "urgent"][rng.gen_range(0..3)].to_string()),
    )];
    for k in 0..spec.n_singletons {
        singletons.push((format!("score{k}"), SingletonValue::Numeric(rng.gen_range(0.0..100.0))));
    }

    Admission {
        id: format!("adm{index:05}"),
        text: tokens.join(" "),
        labels: (0..n_labels).filter(|&l| gold[l]).map(label_name).collect(),
        series,
        events,
        singletons,
    }
}

/// Writes the notes, labels and three structured files into `dir`.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64, dir: &Path) -> Result<()> {
    spec.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let docs: Vec<Admission> = (0..spec.n_docs).map(|i| admission(spec, i, &mut rng)).collect();

    write_jsonl(
        &dir.join(NOTES_FILE),
        docs.iter().map(|d| NoteLine {
            admission_id: d.id.clone(),
            text: d.text.clone(),
        }),
    )?;
    write_jsonl(
        &dir.join(LABELS_FILE),
        docs.iter().map(|d| LabelLine {
            admission_id: d.id.clone(),
            labels: d.labels.clone(),
        }),
    )?;
    write_jsonl(
        &dir.join(TIMESERIES_FILE),
        docs.iter().flat_map(|d| {
            d.series.iter().flat_map(move |(class, vals)| {
                vals.iter().enumerate().map(move |(t, &value)| TimeSeriesLine {
                    admission_id: &d.id,
                    class_id: class,
                    timestamp: t as f64,
                    value,
                })
            })
        }),
    )?;
    write_jsonl(
        &dir.join(EVENTS_FILE),
        docs.iter().flat_map(|d| {
            d.events.iter().map(move |(category, item)| EventLine {
                admission_id: &d.id,
                category: *category,
                item_id: item,
            })
        }),
    )?;
    write_jsonl(
        &dir.join(SINGLETONS_FILE),
        docs.iter().flat_map(|d| {
            d.singletons.iter().map(move |(field, value)| SingletonLine {
                admission_id: &d.id,
                field,
                value,
            })
        }),
    )?;
    let spec_path = dir.join("synthetic_spec.json");
    let spec_json = serde_json::json!({ "seed": seed, "spec": spec });
    fs::write(&spec_path, serde_json::to_string_pretty(&spec_json)?).map_err(|e| Error::io(&spec_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::data::{read_labels, read_notes};
    use crate::harness::vocab::clean_tokens;
    use crate::tabular::read_structured_dir;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            n_docs: 12,
            ..SyntheticSpec::default()
        }
    }

    fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut out: Vec<_> = fs::read_dir(dir)
            .unwrap()
            .map(|e| {
                let p = e.unwrap().path();
                (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
            })
            .collect();
        out.sort();
        out
    }

    #[test]
    fn words_are_alphabetic_and_distinct() {
        assert_eq!(word("w", 0), "waa");
        assert_eq!(word("w", 27), "wbb");
        assert_eq!(word("w", 26 * 26), "wbaa");
        let m = marker_words(3, 2);
        assert_eq!(m.len(), 2);
        assert!(m.iter().all(|w| clean_tokens(w) == vec![w.clone()]));
        assert_ne!(cue_word(1), cue_word(2));
    }

    #[test]
    fn byte_identical_under_seed() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let c = tempfile::tempdir().unwrap();
        generate_synthetic(&small(), 9, a.path()).unwrap();
        generate_synthetic(&small(), 9, b.path()).unwrap();
        generate_synthetic(&small(), 10, c.path()).unwrap();
        assert_eq!(files(a.path()), files(b.path()));
        assert_ne!(files(a.path()), files(c.path()));
    }

    #[test]
    fn files_parse_and_signals_are_planted() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            n_docs: 40,
            ..SyntheticSpec::lift()
        };
        generate_synthetic(&spec, 3, dir.path()).unwrap();
        let notes = read_notes(&dir.path().join(NOTES_FILE)).unwrap();
        let labels = read_labels(&dir.path().join(LABELS_FILE)).unwrap();
        let sets = read_structured_dir(dir.path()).unwrap();
        assert_eq!(notes.len(), 40);
        assert_eq!(labels.len(), 40);
        for (id, text) in &notes {
            let toks = clean_tokens(text);
            let gold = &labels[id];
            for (l, signal) in spec.labels.iter().enumerate() {
                let has = gold.contains(&label_name(l));
                match signal.source {
                    SignalSource::Text => {
                        let m = marker_words(l, spec.ngram_len);
                        let found = toks.windows(m.len()).any(|w| w == m.as_slice());
                        assert_eq!(found, has, "{id} label {l}");
                    }
                    SignalSource::Tabular => {
                        let set = &sets[id];
                        if let Some(item) = signal_item(l) {
                            let found = set.multivalued.iter().any(|(_, i)| *i == item);
                            assert_eq!(found, has, "{id} label {l}");
                        } else {
                            let class = signal_series(l).unwrap();
                            let ts = set.time_series.iter().find(|t| t.class_id == class).unwrap();
                            let mean: f64 = ts.points.iter().map(|p| p.1).sum::<f64>() / ts.points.len() as f64;
                            assert_eq!(mean > 1.0, has, "{id} label {l}");
                        }
                    }
                    SignalSource::Both => unreachable!(),
                }
            }
        }
    }

    #[test]
    fn default_label_density() {
        let dir = tempfile::tempdir().unwrap();
        generate_synthetic(&SyntheticSpec::default(), 1, dir.path()).unwrap();
        let labels = read_labels(&dir.path().join(LABELS_FILE)).unwrap();
        let mean = labels.values().map(|l| l.len()).sum::<usize>() as f64 / labels.len() as f64;
        assert!((mean - 5.7).abs() < 0.4, "mean labels/doc {mean}");
    }

    #[test]
    fn spec_validation() {
        assert!(SyntheticSpec { doc_len_min: 0, ..small() }.validate().is_err());
        assert!(SyntheticSpec { label_prior: 1.5, ..small() }.validate().is_err());
        assert!(SyntheticSpec::preset("nope").is_err());
        let lift = SyntheticSpec::lift();
        lift.require_sources(&[SignalSource::Text, SignalSource::Tabular]).unwrap();
        assert!(lift.require_sources(&[SignalSource::Both]).is_err());
        assert_eq!(lift.labels.iter().filter(|l| l.source == SignalSource::Tabular).count(), 4);
    }
}
