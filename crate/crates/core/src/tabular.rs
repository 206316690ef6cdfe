//! Structured-record featurization.
//!
//! Each admission carries three kinds of structured data:
//!
//! * time series (vital signs, chart items) are reduced to mean, max and min
//!   per class;
//! * multivalued events (abnormal labs, drugs, microbiology) become binary
//!   presence indicators;
//! * singleton fields (age, admission type) are copied as numbers or one-hot
//!   encoded when categorical.
//!
//! A [`FeatureSchema`] is fitted on the training split with
//! [`build_feature_table`] and then frozen; [`apply_schema`] featurizes any
//! other split against it. Missing numeric cells stay `None` and are never
//! imputed: the tree learner routes them by a learned default direction.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// A feature cell. `None` is the MISSING sentinel.
pub type Cell = Option<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventCategory {
    LabAbnormal,
    Drug,
    Organism,
    Specimen,
    Antibiotic,
}

impl EventCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            EventCategory::LabAbnormal => "lab_abnormal",
            EventCategory::Drug => "drug",
            EventCategory::Organism => "organism",
            EventCategory::Specimen => "specimen",
            EventCategory::Antibiotic => "antibiotic",
        }
    }
}

impl fmt::Display for EventCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SingletonValue {
    Numeric(f64),
    Categorical(String),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TimeSeries {
    pub class_id: String,
    /// `(timestamp, value)` pairs.
    pub points: Vec<(f64, f64)>,
}

/// All structured records of one admission.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StructuredRecordSet {
    pub admission_id: String,
    pub time_series: Vec<TimeSeries>,
    pub multivalued: Vec<(EventCategory, String)>,
    pub singletons: Vec<(String, SingletonValue)>,
}

impl StructuredRecordSet {
    pub fn new(admission_id: impl Into<String>) -> Self {
        Self {
            admission_id: admission_id.into(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    TsMean,
    TsMax,
    TsMin,
    BinaryIndicator,
    SingletonNumeric,
    SingletonOnehot,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    pub source_id: String,
}

/// Frozen column layout fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub version: u32,
    pub columns: Vec<Column>,
    /// Per categorical singleton field, value -> position inside its one-hot block.
    pub categorical_maps: BTreeMap<String, BTreeMap<String, usize>>,
    #[serde(skip)]
    index: SchemaIndex,
}

#[derive(Debug, Clone, PartialEq, Default)]
struct SchemaIndex {
    ts: HashMap<String, [usize; 3]>,
    events: HashMap<(EventCategory, String), usize>,
    numeric: HashMap<String, usize>,
    onehot: HashMap<String, usize>,
}

impl FeatureSchema {
    fn from_parts(
        columns: Vec<Column>,
        categorical_maps: BTreeMap<String, BTreeMap<String, usize>>,
    ) -> Result<Self> {
        let mut schema = Self {
            version: SCHEMA_VERSION,
            columns,
            categorical_maps,
            index: SchemaIndex::default(),
        };
        schema.reindex()?;
        Ok(schema)
    }

    fn reindex(&mut self) -> Result<()> {
        let mut index = SchemaIndex::default();
        let mut names = HashSet::new();
        for (i, col) in self.columns.iter().enumerate() {
            if !names.insert(col.name.as_str()) {
                return Err(Error::Invalid(format!("duplicate column name {}", col.name)));
            }
            match col.kind {
                ColumnKind::TsMean | ColumnKind::TsMax | ColumnKind::TsMin => {
                    let slot = match col.kind {
                        ColumnKind::TsMean => 0,
                        ColumnKind::TsMax => 1,
                        _ => 2,
                    };
                    index
                        .ts
                        .entry(col.source_id.clone())
                        .or_insert([usize::MAX; 3])[slot] = i;
                }
                ColumnKind::BinaryIndicator => {
                    let (cat, item) = col.source_id.split_once(':').ok_or_else(|| {
                        Error::Invalid(format!("bad indicator source id {}", col.source_id))
                    })?;
                    let cat: EventCategory =
                        serde_json::from_value(Value::String(cat.to_string()))?;
                    index.events.insert((cat, item.to_string()), i);
                }
                ColumnKind::SingletonNumeric => {
                    index.numeric.insert(col.source_id.clone(), i);
                }
                ColumnKind::SingletonOnehot => {
                    let (field, _) = col.source_id.split_once('=').ok_or_else(|| {
                        Error::Invalid(format!("bad one-hot source id {}", col.source_id))
                    })?;
                    index.onehot.entry(field.to_string()).or_insert(i);
                }
            }
        }
        if index.ts.values().any(|slots| slots.contains(&usize::MAX)) {
            return Err(Error::Invalid("incomplete time-series column triple".into()));
        }
        for (field, map) in &self.categorical_maps {
            if !index.onehot.contains_key(field) && !map.is_empty() {
                return Err(Error::Invalid(format!("categorical field {field} has no columns")));
            }
        }
        self.index = index;
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    /// SHA-256 of the canonical serialized form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("schema serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut schema: FeatureSchema = serde_json::from_str(text)?;
        if schema.version != SCHEMA_VERSION {
            return Err(Error::Version {
                what: "feature schema",
                expected: SCHEMA_VERSION,
                found: schema.version,
            });
        }
        schema.reindex()?;
        Ok(schema)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub admission_id: String,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub width: usize,
    pub schema_hash: String,
    pub rows: Vec<FeatureRow>,
}

impl FeatureTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, admission_id: &str) -> Option<&FeatureRow> {
        self.rows.iter().find(|r| r.admission_id == admission_id)
    }

    /// Writes one JSON object per row; MISSING cells serialize as `null`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for row in &self.rows {
            serde_json::to_writer(&mut out, row)?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, schema: &FeatureSchema) -> Result<Self> {
        let mut rows = Vec::new();
        for (line_no, line) in read_lines(path)? {
            let row: FeatureRow = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: e.to_string(),
            })?;
            if row.cells.len() != schema.width() {
                return Err(Error::shape("feature row", &[row.cells.len()], &[schema.width()]));
            }
            rows.push(row);
        }
        Ok(Self {
            width: schema.width(),
            schema_hash: schema.hash(),
            rows,
        })
    }
}

/// Mean, maximum and minimum of a series; all MISSING when empty.
///
/// Values are summed in sorted order so the result does not depend on record
/// order.
pub fn aggregate_time_series(values: &[f64]) -> Result<[Cell; 3]> {
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Invalid(format!("non-finite time-series value {bad}")));
    }
    if values.is_empty() {
        return Ok([None, None, None]);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
    Ok([Some(mean), sorted.last().copied(), sorted.first().copied()])
}

/// Sets the indicator cell of every `(category, item)` pair present in the
/// schema. Pairs unseen at training time are ignored.
pub fn binarize_multivalued(
    records: &[(EventCategory, String)],
    schema: &FeatureSchema,
    cells: &mut [Cell],
) {
    for (cat, item) in records {
        if let Some(&col) = schema.index.events.get(&(*cat, item.clone())) {
            cells[col] = Some(1.0);
        }
    }
}

/// Copies numeric singletons and one-hot encodes categorical ones.
///
/// Absent numeric fields stay MISSING; absent or unseen categorical values
/// leave their one-hot block at zero.
pub fn encode_singletons(
    singletons: &[(String, SingletonValue)],
    schema: &FeatureSchema,
    cells: &mut [Cell],
) {
    for (field, value) in singletons {
        match value {
            SingletonValue::Numeric(x) => {
                if let Some(&col) = schema.index.numeric.get(field) {
                    cells[col] = Some(*x);
                }
            }
            SingletonValue::Categorical(v) => {
                let start = schema.index.onehot.get(field);
                let pos = schema.categorical_maps.get(field).and_then(|m| m.get(v));
                if let (Some(&start), Some(&pos)) = (start, pos) {
                    cells[start + pos] = Some(1.0);
                }
            }
        }
    }
}

fn featurize_one(set: &StructuredRecordSet, schema: &FeatureSchema) -> Result<FeatureRow> {
    let mut cells: Vec<Cell> = schema
        .columns
        .iter()
        .map(|c| match c.kind {
            ColumnKind::BinaryIndicator | ColumnKind::SingletonOnehot => Some(0.0),
            _ => None,
        })
        .collect();

    // A class may appear in several TimeSeries entries; pool them.
    let mut pooled: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for ts in &set.time_series {
        pooled
            .entry(ts.class_id.as_str())
            .or_default()
            .extend(ts.points.iter().map(|&(_, v)| v));
    }
    for (class_id, values) in pooled {
        let agg = aggregate_time_series(&values).map_err(|e| Error::RejectedRecord {
            admission_id: set.admission_id.clone(),
            class_id: class_id.to_string(),
            reason: e.to_string(),
        })?;
        if let Some(slots) = schema.index.ts.get(class_id) {
            for (slot, value) in slots.iter().zip(agg) {
                cells[*slot] = value;
            }
        }
    }

    for (field, value) in &set.singletons {
        if let SingletonValue::Numeric(x) = value {
            if !x.is_finite() {
                return Err(Error::RejectedRecord {
                    admission_id: set.admission_id.clone(),
                    class_id: field.clone(),
                    reason: format!("non-finite singleton value {x}"),
                });
            }
        }
    }

    binarize_multivalued(&set.multivalued, schema, &mut cells);
    encode_singletons(&set.singletons, schema, &mut cells);
    Ok(FeatureRow {
        admission_id: set.admission_id.clone(),
        cells,
    })
}

fn check_unique(record_sets: &[StructuredRecordSet]) -> Result<()> {
    let mut seen = HashSet::new();
    for set in record_sets {
        if !seen.insert(set.admission_id.as_str()) {
            return Err(Error::DuplicateAdmission(set.admission_id.clone()));
        }
    }
    Ok(())
}

/// Fits a schema on the training split and featurizes it.
pub fn build_feature_table(
    record_sets: &[StructuredRecordSet],
) -> Result<(FeatureTable, FeatureSchema)> {
    if record_sets.is_empty() {
        return Err(Error::NoTrainingRecords);
    }
    check_unique(record_sets)?;

    let mut ts_classes = BTreeSet::new();
    let mut events = BTreeSet::new();
    let mut numeric = BTreeSet::new();
    let mut categorical: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for set in record_sets {
        for ts in &set.time_series {
            ts_classes.insert(ts.class_id.clone());
        }
        for (cat, item) in &set.multivalued {
            events.insert((*cat, item.clone()));
        }
        for (field, value) in &set.singletons {
            match value {
                SingletonValue::Numeric(_) => {
                    numeric.insert(field.clone());
                }
                SingletonValue::Categorical(v) => {
                    categorical.entry(field.clone()).or_default().insert(v.clone());
                }
            }
        }
    }
    if let Some(field) = numeric.iter().find(|f| categorical.contains_key(*f)) {
        return Err(Error::Invalid(format!(
            "singleton field {field} has both numeric and categorical values"
        )));
    }

    let mut columns = Vec::new();
    for (kind, prefix) in [
        (ColumnKind::TsMean, "ts_mean"),
        (ColumnKind::TsMax, "ts_max"),
        (ColumnKind::TsMin, "ts_min"),
    ] {
        for class in &ts_classes {
            columns.push(Column {
                name: format!("{prefix}:{class}"),
                kind,
                source_id: class.clone(),
            });
        }
    }
    for (cat, item) in &events {
        columns.push(Column {
            name: format!("bin:{cat}:{item}"),
            kind: ColumnKind::BinaryIndicator,
            source_id: format!("{cat}:{item}"),
        });
    }
    for field in &numeric {
        columns.push(Column {
            name: format!("num:{field}"),
            kind: ColumnKind::SingletonNumeric,
            source_id: field.clone(),
        });
    }
    let mut categorical_maps = BTreeMap::new();
    for (field, values) in &categorical {
        let mut map = BTreeMap::new();
        for (pos, value) in values.iter().enumerate() {
            map.insert(value.clone(), pos);
            columns.push(Column {
                name: format!("cat:{field}={value}"),
                kind: ColumnKind::SingletonOnehot,
                source_id: format!("{field}={value}"),
            });
        }
        categorical_maps.insert(field.clone(), map);
    }

    let schema = FeatureSchema::from_parts(columns, categorical_maps)?;
    let table = apply_schema(record_sets, &schema)?;
    Ok((table, schema))
}

/// Featurizes record sets against a frozen schema.
pub fn apply_schema(
    record_sets: &[StructuredRecordSet],
    schema: &FeatureSchema,
) -> Result<FeatureTable> {
    check_unique(record_sets)?;
    let rows = record_sets
        .iter()
        .map(|set| featurize_one(set, schema))
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureTable {
        width: schema.width(),
        schema_hash: schema.hash(),
        rows,
    })
}

// ---------------------------------------------------------------------------
// Line-delimited input files
// ---------------------------------------------------------------------------

pub const TIMESERIES_FILE: &str = "timeseries.jsonl";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const SINGLETONS_FILE: &str = "singletons.jsonl";

pub(crate) fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            lines.push((i + 1, line));
        }
    }
    Ok(lines)
}

/// Accepts either a JSON string or a JSON number as an identifier.
pub(crate) fn id_string(value: &Value) -> Option<String> {
    match value {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn field<'a>(obj: &'a Value, key: &str, path: &Path, line: usize) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("missing field `{key}`"),
    })
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

#[derive(Serialize)]
pub(crate) struct TimeSeriesLine<'a> {
    pub admission_id: &'a str,
    pub class_id: &'a str,
    pub timestamp: f64,
    pub value: f64,
}

#[derive(Serialize)]
pub(crate) struct EventLine<'a> {
    pub admission_id: &'a str,
    pub category: EventCategory,
    pub item_id: &'a str,
}

#[derive(Serialize)]
pub(crate) struct SingletonLine<'a> {
    pub admission_id: &'a str,
    pub field: &'a str,
    pub value: &'a SingletonValue,
}

fn record_set(
    sets: &mut BTreeMap<String, StructuredRecordSet>,
    admission_id: String,
) -> &mut StructuredRecordSet {
    sets.entry(admission_id.clone())
        .or_insert_with(|| StructuredRecordSet::new(admission_id))
}

/// Reads the three structured files of a directory and groups records by
/// admission. Missing files are treated as empty.
pub fn read_structured_dir(dir: &Path) -> Result<BTreeMap<String, StructuredRecordSet>> {
    let mut sets: BTreeMap<String, StructuredRecordSet> = BTreeMap::new();

    let ts_path = dir.join(TIMESERIES_FILE);
    if ts_path.exists() {
        let mut series: BTreeMap<(String, String), Vec<(f64, f64)>> = BTreeMap::new();
        for (line, text) in read_lines(&ts_path)? {
            let v: Value = serde_json::from_str(&text).map_err(|e| parse_err(&ts_path, line, e.to_string()))?;
            let adm = id_string(field(&v, "admission_id", &ts_path, line)?)
                .ok_or_else(|| parse_err(&ts_path, line, "bad admission_id"))?;
            let class = id_string(field(&v, "class_id", &ts_path, line)?)
                .ok_or_else(|| parse_err(&ts_path, line, "bad class_id"))?;
            let ts = field(&v, "timestamp", &ts_path, line)?
                .as_f64()
                .ok_or_else(|| parse_err(&ts_path, line, "bad timestamp"))?;
            let value = field(&v, "value", &ts_path, line)?
                .as_f64()
                .ok_or_else(|| Error::RejectedRecord {
                    admission_id: adm.clone(),
                    class_id: class.clone(),
                    reason: format!("{}:{line}: value is not a finite number", ts_path.display()),
                })?;
            series.entry((adm, class)).or_default().push((ts, value));
        }
        for ((adm, class), mut points) in series {
            points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
            record_set(&mut sets, adm).time_series.push(TimeSeries {
                class_id: class,
                points,
            });
        }
    }

    let ev_path = dir.join(EVENTS_FILE);
    if ev_path.exists() {
        for (line, text) in read_lines(&ev_path)? {
            let v: Value = serde_json::from_str(&text).map_err(|e| parse_err(&ev_path, line, e.to_string()))?;
            let adm = id_string(field(&v, "admission_id", &ev_path, line)?)
                .ok_or_else(|| parse_err(&ev_path, line, "bad admission_id"))?;
            let cat: EventCategory = serde_json::from_value(field(&v, "category", &ev_path, line)?.clone())
                .map_err(|e| parse_err(&ev_path, line, e.to_string()))?;
            let item = id_string(field(&v, "item_id", &ev_path, line)?)
                .ok_or_else(|| parse_err(&ev_path, line, "bad item_id"))?;
            record_set(&mut sets, adm).multivalued.push((cat, item));
        }
    }

    let sg_path = dir.join(SINGLETONS_FILE);
    if sg_path.exists() {
        for (line, text) in read_lines(&sg_path)? {
            let v: Value = serde_json::from_str(&text).map_err(|e| parse_err(&sg_path, line, e.to_string()))?;
            let adm = id_string(field(&v, "admission_id", &sg_path, line)?)
                .ok_or_else(|| parse_err(&sg_path, line, "bad admission_id"))?;
            let name = field(&v, "field", &sg_path, line)?
                .as_str()
                .ok_or_else(|| parse_err(&sg_path, line, "bad field"))?
                .to_string();
            let value = match field(&v, "value", &sg_path, line)? {
                Value::Number(n) => SingletonValue::Numeric(n.as_f64().unwrap_or(f64::NAN)),
                Value::String(s) => SingletonValue::Categorical(s.clone()),
                other => return Err(parse_err(&sg_path, line, format!("bad value {other}"))),
            };
            record_set(&mut sets, adm).singletons.push((name, value));
        }
    }
    Ok(sets)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(class: &str, values: &[f64]) -> TimeSeries {
        TimeSeries {
            class_id: class.into(),
            points: values.iter().enumerate().map(|(i, &v)| (i as f64, v)).collect(),
        }
    }

    fn sample() -> Vec<StructuredRecordSet> {
        let mut a = StructuredRecordSet::new("a1");
        a.time_series.push(ts("hr", &[80.0, 90.0, 100.0]));
        a.multivalued.push((EventCategory::Drug, "4821".into()));
        a.singletons.push(("age".into(), SingletonValue::Numeric(63.0)));
        let mut b = StructuredRecordSet::new("a2");
        b.multivalued.push((EventCategory::Drug, "17".into()));
        b.multivalued.push((EventCategory::Drug, "17".into()));
        vec![a, b]
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(
            aggregate_time_series(&[1.0, 2.0, 3.0]).unwrap(),
            [Some(2.0), Some(3.0), Some(1.0)]
        );
        assert_eq!(aggregate_time_series(&[]).unwrap(), [None, None, None]);
        assert_eq!(
            aggregate_time_series(&[5.0]).unwrap(),
            [Some(5.0), Some(5.0), Some(5.0)]
        );
        assert!(aggregate_time_series(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn non_finite_names_admission_and_class() {
        let mut a = StructuredRecordSet::new("adm9");
        a.time_series.push(ts("spo2", &[97.0, f64::INFINITY]));
        let err = build_feature_table(&[a]).unwrap_err();
        match err {
            Error::RejectedRecord {
                admission_id,
                class_id,
                ..
            } => {
                assert_eq!(admission_id, "adm9");
                assert_eq!(class_id, "spo2");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn column_count_by_construction() {
        let (table, schema) = build_feature_table(&sample()).unwrap();
        assert_eq!(schema.width(), 6);
        let names: Vec<_> = schema.columns.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(
            names,
            [
                "ts_mean:hr",
                "ts_max:hr",
                "ts_min:hr",
                "bin:drug:17",
                "bin:drug:4821",
                "num:age"
            ]
        );
        assert_eq!(
            table.rows[0].cells,
            vec![Some(90.0), Some(100.0), Some(80.0), Some(0.0), Some(1.0), Some(63.0)]
        );
        assert_eq!(
            table.rows[1].cells,
            vec![None, None, None, Some(1.0), Some(0.0), None]
        );
    }

    #[test]
    fn empty_and_duplicate_inputs() {
        assert!(matches!(build_feature_table(&[]), Err(Error::NoTrainingRecords)));
        let dup = vec![StructuredRecordSet::new("x"), StructuredRecordSet::new("x")];
        assert!(matches!(build_feature_table(&dup), Err(Error::DuplicateAdmission(_))));
        let (_, schema) = build_feature_table(&sample()).unwrap();
        assert!(matches!(apply_schema(&dup, &schema), Err(Error::DuplicateAdmission(_))));
    }

    #[test]
    fn schema_is_deterministic() {
        let (_, s1) = build_feature_table(&sample()).unwrap();
        let (_, s2) = build_feature_table(&sample()).unwrap();
        assert_eq!(s1.to_json(), s2.to_json());
        assert_eq!(s1.hash(), s2.hash());
    }

    #[test]
    fn unseen_items_are_ignored() {
        let (_, schema) = build_feature_table(&sample()).unwrap();
        let empty = apply_schema(&[StructuredRecordSet::new("z")], &schema).unwrap();
        let mut unseen = StructuredRecordSet::new("z");
        unseen.multivalued.push((EventCategory::Drug, "9999".into()));
        unseen.time_series.push(ts("never_seen", &[1.0]));
        unseen.singletons.push(("weight".into(), SingletonValue::Numeric(70.0)));
        let unseen = apply_schema(&[unseen], &schema).unwrap();
        assert_eq!(empty.rows, unseen.rows);
        assert_eq!(unseen.rows[0].cells.len(), schema.width());
        assert_eq!(
            empty.rows[0].cells,
            vec![None, None, None, Some(0.0), Some(0.0), None]
        );
    }

    #[test]
    fn categorical_one_hot() {
        let mut a = StructuredRecordSet::new("a");
        a.singletons
            .push(("admission_type".into(), SingletonValue::Categorical("EMERGENCY".into())));
        let mut b = StructuredRecordSet::new("b");
        b.singletons
            .push(("admission_type".into(), SingletonValue::Categorical("ELECTIVE".into())));
        let (table, schema) = build_feature_table(&[a, b]).unwrap();
        // Values are indexed in sorted order: ELECTIVE=0, EMERGENCY=1.
        assert_eq!(schema.categorical_maps["admission_type"]["ELECTIVE"], 0);
        assert_eq!(table.rows[0].cells, vec![Some(0.0), Some(1.0)]);
        assert_eq!(table.rows[1].cells, vec![Some(1.0), Some(0.0)]);

        let mut c = StructuredRecordSet::new("c");
        c.singletons
            .push(("admission_type".into(), SingletonValue::Categorical("NEWBORN".into())));
        let row = apply_schema(&[c], &schema).unwrap();
        assert_eq!(row.rows[0].cells, vec![Some(0.0), Some(0.0)]);
    }

    #[test]
    fn mixed_singleton_kinds_rejected() {
        let mut a = StructuredRecordSet::new("a");
        a.singletons.push(("age".into(), SingletonValue::Numeric(1.0)));
        let mut b = StructuredRecordSet::new("b");
        b.singletons
            .push(("age".into(), SingletonValue::Categorical("old".into())));
        assert!(build_feature_table(&[a, b]).is_err());
    }

    #[test]
    fn apply_reproduces_build() {
        let sets = sample();
        let (table, schema) = build_feature_table(&sets).unwrap();
        assert_eq!(apply_schema(&sets, &schema).unwrap(), table);
    }

    #[test]
    fn schema_json_round_trip() {
        let (_, schema) = build_feature_table(&sample()).unwrap();
        let back = FeatureSchema::from_json(&schema.to_json()).unwrap();
        assert_eq!(back, schema);
        assert_eq!(back.hash(), schema.hash());
    }

    #[test]
    fn structured_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join(TIMESERIES_FILE),
            "{\"admission_id\":1,\"class_id\":\"hr\",\"timestamp\":2.0,\"value\":90.0}\n\
             {\"admission_id\":1,\"class_id\":\"hr\",\"timestamp\":1.0,\"value\":80.0}\n",
        )
        .unwrap();
        std::fs::write(
            dir.path().join(EVENTS_FILE),
            "{\"admission_id\":\"1\",\"category\":\"drug\",\"item_id\":4821}\n",
        )
        .unwrap();
        std::fs::write(
            dir.path().join(SINGLETONS_FILE),
            "{\"admission_id\":\"2\",\"field\":\"admission_type\",\"value\":\"EMERGENCY\"}\n",
        )
        .unwrap();
        let sets = read_structured_dir(dir.path()).unwrap();
        assert_eq!(sets.len(), 2);
        assert_eq!(sets["1"].time_series[0].points, vec![(1.0, 80.0), (2.0, 90.0)]);
        assert_eq!(sets["1"].multivalued, vec![(EventCategory::Drug, "4821".to_string())]);
        assert_eq!(
            sets["2"].singletons[0].1,
            SingletonValue::Categorical("EMERGENCY".into())
        );

        let sets: Vec<_> = sets.into_values().collect();
        let (table, schema) = build_feature_table(&sets).unwrap();
        let path = dir.path().join("features.jsonl");
        table.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("null"));
        assert_eq!(FeatureTable::load(&path, &schema).unwrap(), table);
    }
}
