//! End-to-end runs: data preparation, training, evaluation, ablation and
//! sweeps. Every run writes its artifacts under one seed-named directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use super::data::{read_labels, read_notes, split, write_jsonl, Split, LABELS_FILE, NOTES_FILE};
use super::vocab::{read_word_vectors, Vocabulary};
use crate::error::{Error, Result, StageContext};
use crate::forest::{train_ensemble, TreeEnsemble};
use crate::metrics::MetricsReport;
use crate::model::{self, Checkpoint, Example, FusionMode, ModelParams};
use crate::tabular::{apply_schema, build_feature_table, read_structured_dir, FeatureSchema, FeatureTable, StructuredRecordSet};

pub const CONFIG_FILE: &str = "config.toml";
pub const SPLIT_FILE: &str = "split.json";
pub const VOCAB_FILE: &str = "vocab.json";
pub const SCHEMA_FILE: &str = "schema.json";
pub const FEATURES_FILE: &str = "features.jsonl";
pub const ENSEMBLE_FILE: &str = "ensemble.json";
pub const LEAVES_FILE: &str = "leaves.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_TXT: &str = "metrics.txt";

/// Independent random streams derived from the run seed.
#[derive(Debug, Clone, Copy)]
enum Stream {
    Split = 1,
    Init = 2,
    Shuffle = 3,
}

fn rng_for(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn run_dir(out_dir: &Path, seed: u64) -> PathBuf {
    out_dir.join(format!("seed-{seed}"))
}

/// Tree side of a prepared dataset.
#[derive(Debug, Clone)]
pub struct TreeArtifacts {
    pub schema: FeatureSchema,
    pub features: FeatureTable,
    pub ensemble: TreeEnsemble,
    /// Per-tree local leaf ids keyed by admission.
    pub leaves: BTreeMap<String, Vec<usize>>,
}

/// Everything derived from the input files before the network is trained.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub seed: u64,
    pub labels: Vec<String>,
    pub split: Split,
    pub vocab: Vocabulary,
    pub trees: Option<TreeArtifacts>,
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
}

#[derive(Serialize)]
struct LeafLine<'a> {
    admission_id: &'a str,
    leaves: &'a [usize],
}

impl Prepared {
    pub fn schema_hash(&self) -> Option<String> {
        self.trees.as_ref().map(|t| t.schema.hash())
    }

    pub fn ensemble_hash(&self) -> Option<String> {
        self.trees.as_ref().map(|t| sha256_hex(&t.ensemble.to_json()))
    }

    pub fn leaf_counts(&self) -> Vec<usize> {
        self.trees.as_ref().map(|t| t.ensemble.leaf_counts()).unwrap_or_default()
    }

    /// Writes split, vocabulary and (when present) tree artifacts.
    pub fn write(&self, dir: &Path) -> Result<()> {
        ensure_dir(dir)?;
        write_file(&dir.join(SPLIT_FILE), &self.split.to_json())?;
        self.vocab.save(&dir.join(VOCAB_FILE))?;
        if let Some(t) = &self.trees {
            t.schema.save(&dir.join(SCHEMA_FILE))?;
            t.features.save(&dir.join(FEATURES_FILE))?;
            t.ensemble.save(&dir.join(ENSEMBLE_FILE))?;
            write_jsonl(
                &dir.join(LEAVES_FILE),
                t.leaves.iter().map(|(id, l)| LeafLine {
                    admission_id: id,
                    leaves: l,
                }),
            )?;
        }
        Ok(())
    }
}

/// Reads the data directory and builds vocabulary, features, trees and
/// encoded examples. Tree stages are skipped when `with_trees` is false.
pub fn prepare(config: &ExperimentConfig, with_trees: bool) -> Result<Prepared> {
    config.validate()?;
    let seed = config.seed()?;
    let data = &config.data_dir;

    let notes = read_notes(&data.join(NOTES_FILE)).stage("load")?;
    let label_sets = read_labels(&data.join(LABELS_FILE)).stage("load")?;
    let labels: Vec<String> = label_sets
        .values()
        .flatten()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if labels.is_empty() {
        return Err(Error::Invalid("labels file names no labels".into())).stage("load");
    }
    if let Some(&k) = config.ks.iter().find(|&&k| k > labels.len()) {
        return Err(Error::Config(format!("k = {k} exceeds the {} labels", labels.len())));
    }
    let label_index: BTreeMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let targets = |id: &str| -> Vec<f64> {
        let mut y = vec![0.0; labels.len()];
        if let Some(set) = label_sets.get(id) {
            for l in set {
                y[label_index[l.as_str()]] = 1.0;
            }
        }
        y
    };

    let ids: Vec<String> = notes.keys().cloned().collect();
    let split = split(
        &ids,
        [config.train_ratio, config.val_ratio, config.test_ratio],
        &mut rng_for(seed, Stream::Split),
    )
    .stage("split")?;

    let vocab = Vocabulary::build(split.train.iter().map(|id| notes[id].as_str()));

    let trees = if with_trees {
        let mut structured = read_structured_dir(data).stage("load")?;
        let mut sets_for = |part: &[String]| -> Vec<StructuredRecordSet> {
            part.iter()
                .map(|id| {
                    structured
                        .remove(id)
                        .unwrap_or_else(|| StructuredRecordSet::new(id.clone()))
                })
                .collect()
        };
        let train_sets = sets_for(&split.train);
        let mut other_sets = sets_for(&split.val);
        other_sets.extend(sets_for(&split.test));

        let (train_table, schema) = build_feature_table(&train_sets).stage("featurize")?;
        let other_table = apply_schema(&other_sets, &schema).stage("featurize")?;
        let train_targets: Vec<Vec<f64>> = split.train.iter().map(|id| targets(id)).collect();
        let ensemble = train_ensemble(&train_table, &train_targets, &config.tree_config()).stage("train-trees")?;

        let mut rows = train_table.rows;
        rows.extend(other_table.rows);
        rows.sort_by(|a, b| a.admission_id.cmp(&b.admission_id));
        let features = FeatureTable {
            width: schema.width(),
            schema_hash: schema.hash(),
            rows,
        };
        let leaves = features
            .rows
            .iter()
            .map(|r| Ok((r.admission_id.clone(), ensemble.assign_leaves(&r.cells)?.0)))
            .collect::<Result<BTreeMap<_, _>>>()
            .stage("assign-leaves")?;
        Some(TreeArtifacts {
            schema,
            features,
            ensemble,
            leaves,
        })
    } else {
        None
    };

    let offsets = match &trees {
        Some(t) => t.ensemble.leaf_offsets().stage("assign-leaves")?,
        None => Vec::new(),
    };
    let examples = |part: &[String]| -> Vec<Example> {
        part.iter()
            .map(|id| Example {
                admission_id: id.clone(),
                tokens: vocab.encode(&notes[id], config.max_len),
                leaves: trees
                    .as_ref()
                    .map(|t| crate::forest::LeafAssignment(t.leaves[id].clone()).global_ids(&offsets))
                    .unwrap_or_default(),
                labels: targets(id),
            })
            .collect()
    };
    let (train, val, test) = (examples(&split.train), examples(&split.val), examples(&split.test));

    Ok(Prepared {
        seed,
        labels,
        split,
        vocab,
        trees,
        train,
        val,
        test,
    })
}

/// Result of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub dir: PathBuf,
    pub seed: u64,
    pub fusion: FusionMode,
    pub best_epoch: usize,
    pub test: MetricsReport,
}

fn metrics_text(report: &MetricsReport, best_epoch: usize) -> String {
    format!("best_epoch={best_epoch}\n{}", report.to_kv_text())
}

/// Featurizes, trains the trees (unless text-only), trains the network and
/// evaluates the best checkpoint on the test split. Artifacts go to
/// `<out_dir>/seed-<seed>`.
pub fn run_train(config: &ExperimentConfig) -> Result<RunResult> {
    let seed = config.seed()?;
    let prepared = prepare(config, config.fusion.uses_trees())?;
    let dir = run_dir(&config.out_dir, seed);
    ensure_dir(&dir).stage("write")?;
    config.save(&dir.join(CONFIG_FILE)).stage("write")?;
    prepared.write(&dir).stage("write")?;

    let dims = config.model_dims(prepared.vocab.len(), &prepared.leaf_counts(), prepared.labels.len());
    let mut params = ModelParams::init(dims, &mut rng_for(seed, Stream::Init)).stage("init")?;
    if let Some(path) = &config.embeddings {
        let rows = read_word_vectors(path, &prepared.vocab, config.d_embed).stage("embeddings")?;
        params.load_word_vectors(&rows).stage("embeddings")?;
    }

    let train_cfg = config.train_config(rng_for(seed, Stream::Shuffle).next_u64());
    let outcome = model::train(params, &prepared.train, &prepared.val, &train_cfg).stage("train")?;
    write_file(&dir.join(TRAIN_LOG_FILE), &model::log_to_csv(&outcome.log, &config.ks)).stage("write")?;
    let ckpt = Checkpoint::new(
        &outcome.best,
        config.fusion,
        outcome.best_epoch,
        prepared.labels.clone(),
        prepared.vocab.hash(),
        prepared.schema_hash(),
        prepared.ensemble_hash(),
    );
    ckpt.save(&dir.join(CHECKPOINT_FILE)).stage("write")?;

    let test = model::evaluate(&outcome.best, &prepared.test, config.fusion, config.threshold, &config.ks)
        .stage("evaluate")?;
    write_file(&dir.join(METRICS_JSON), &test.to_json()).stage("write")?;
    write_file(&dir.join(METRICS_TXT), &metrics_text(&test, outcome.best_epoch)).stage("write")?;
    Ok(RunResult {
        dir,
        seed,
        fusion: config.fusion,
        best_epoch: outcome.best_epoch,
        test,
    })
}

/// Writes split, vocabulary, schema and feature table without training.
pub fn run_featurize(config: &ExperimentConfig) -> Result<PathBuf> {
    let prepared = prepare(config, true)?;
    let dir = run_dir(&config.out_dir, prepared.seed);
    ensure_dir(&dir)?;
    config.save(&dir.join(CONFIG_FILE))?;
    let trees = prepared.trees.as_ref().expect("trees requested");
    write_file(&dir.join(SPLIT_FILE), &prepared.split.to_json())?;
    trees.schema.save(&dir.join(SCHEMA_FILE))?;
    trees.features.save(&dir.join(FEATURES_FILE))?;
    Ok(dir)
}

/// Like [`run_featurize`] and additionally writes the ensemble and the leaf
/// assignment of every admission.
pub fn run_train_trees(config: &ExperimentConfig) -> Result<PathBuf> {
    let prepared = prepare(config, true)?;
    let dir = run_dir(&config.out_dir, prepared.seed);
    ensure_dir(&dir)?;
    config.save(&dir.join(CONFIG_FILE))?;
    prepared.write(&dir)?;
    Ok(dir)
}

/// Which documents [`run_eval`] scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    Train,
    Val,
    Test,
    All,
}

impl std::str::FromStr for EvalSplit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "val" => Ok(Self::Val),
            "test" => Ok(Self::Test),
            "all" => Ok(Self::All),
            _ => Err(Error::Invalid(format!("unknown split {s}"))),
        }
    }
}

fn check_hash(what: &'static str, expected: Option<&str>, found: Option<&str>) -> Result<()> {
    if expected != found {
        return Err(Error::HashMismatch {
            what,
            expected: expected.unwrap_or("none").to_string(),
            found: found.unwrap_or("none").to_string(),
        });
    }
    Ok(())
}

/// Scores a finished run directory. The data named by the stored config is
/// prepared again and its vocabulary, schema and ensemble hashes must match
/// the checkpoint.
pub fn run_eval(dir: &Path, data_dir: Option<&Path>, part: EvalSplit) -> Result<MetricsReport> {
    let mut config = ExperimentConfig::load(&dir.join(CONFIG_FILE)).stage("load")?;
    if let Some(d) = data_dir {
        config.data_dir = d.to_path_buf();
    }
    let ckpt = Checkpoint::load(&dir.join(CHECKPOINT_FILE)).stage("load")?;
    let stored_vocab = Vocabulary::load(&dir.join(VOCAB_FILE)).stage("load")?;
    check_hash("vocabulary file", Some(&ckpt.vocab_hash), Some(&stored_vocab.hash()))?;

    let prepared = prepare(&config, ckpt.fusion.uses_trees())?;
    check_hash("vocabulary", Some(&ckpt.vocab_hash), Some(&prepared.vocab.hash()))?;
    check_hash("feature schema", ckpt.schema_hash.as_deref(), prepared.schema_hash().as_deref())?;
    check_hash("tree ensemble", ckpt.ensemble_hash.as_deref(), prepared.ensemble_hash().as_deref())?;
    if ckpt.labels != prepared.labels {
        return Err(Error::Invalid("label set differs from the checkpoint".into()));
    }
    let params = ckpt.params()?;
    let examples: Vec<Example> = match part {
        EvalSplit::Train => prepared.train,
        EvalSplit::Val => prepared.val,
        EvalSplit::Test => prepared.test,
        EvalSplit::All => {
            let mut all = prepared.train;
            all.extend(prepared.val);
            all.extend(prepared.test);
            all
        }
    };
    model::evaluate(&params, &examples, ckpt.fusion, config.threshold, &config.ks).stage("evaluate")
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Test metrics of one configuration over several seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub metric_names: Vec<String>,
    pub seeds: Vec<u64>,
    /// `runs[i][m]` is metric `m` of seed `i`.
    pub runs: Vec<Vec<f64>>,
}

impl Summary {
    fn from_results(results: &[RunResult]) -> Self {
        let metric_names = results[0].test.entries().into_iter().map(|(n, _)| n).collect();
        Self {
            metric_names,
            seeds: results.iter().map(|r| r.seed).collect(),
            runs: results
                .iter()
                .map(|r| r.test.entries().into_iter().map(|(_, v)| v).collect())
                .collect(),
        }
    }

    pub fn metric(&self, name: &str) -> Option<Vec<f64>> {
        let m = self.metric_names.iter().position(|n| n == name)?;
        Some(self.runs.iter().map(|r| r[m]).collect())
    }

    pub fn mean_std(&self) -> Vec<(f64, f64)> {
        (0..self.metric_names.len())
            .map(|m| mean_std(&self.runs.iter().map(|r| r[m]).collect::<Vec<_>>()))
            .collect()
    }

    pub fn mean(&self, name: &str) -> Option<f64> {
        self.metric(name).map(|v| mean_std(&v).0)
    }

    fn header(&self, key: &str) -> String {
        let mut s = key.to_string();
        for n in &self.metric_names {
            let _ = write!(s, ",{n},{n}_std");
        }
        s
    }

    fn row(&self, key: &str) -> String {
        let mut s = key.to_string();
        for (mean, std) in self.mean_std() {
            let _ = write!(s, ",{mean},{std}");
        }
        s
    }

    /// One row per seed followed by mean and standard deviation rows.
    pub fn to_csv(&self) -> String {
        let mut s = format!("seed,{}\n", self.metric_names.join(","));
        for (seed, run) in self.seeds.iter().zip(&self.runs) {
            let vals: Vec<String> = run.iter().map(f64::to_string).collect();
            let _ = writeln!(s, "{seed},{}", vals.join(","));
        }
        for (label, pick) in [("mean", 0), ("std", 1)] {
            let vals: Vec<String> = self
                .mean_std()
                .iter()
                .map(|ms| if pick == 0 { ms.0 } else { ms.1 }.to_string())
                .collect();
            let _ = writeln!(s, "{label},{}", vals.join(","));
        }
        s
    }
}

/// Runs `config` for seeds `seed, seed + 1, ..` and writes `summary.csv`
/// next to the per-seed directories.
pub fn run_repeats(config: &ExperimentConfig, repeats: usize) -> Result<Summary> {
    if repeats == 0 {
        return Err(Error::Config("repeats must be positive".into()));
    }
    let base = config.seed()?;
    let results = (0..repeats as u64)
        .map(|i| {
            run_train(&ExperimentConfig {
                seed: Some(base + i),
                ..config.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = Summary::from_results(&results);
    ensure_dir(&config.out_dir)?;
    write_file(&config.out_dir.join("summary.csv"), &summary.to_csv())?;
    Ok(summary)
}

/// One summary per ablation mode, in [`FusionMode::ALL`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<(FusionMode, Summary)>,
}

impl AblationTable {
    pub fn get(&self, mode: FusionMode) -> Option<&Summary> {
        self.rows.iter().find(|(m, _)| *m == mode).map(|(_, s)| s)
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.rows[0].1.header("mode");
        s.push('\n');
        for (mode, summary) in &self.rows {
            s.push_str(&summary.row(mode.as_str()));
            s.push('\n');
        }
        s
    }
}

/// Trains every fusion mode on the same data, seeds and settings and writes
/// `ablation.csv` (means and standard deviations over seeds).
pub fn run_ablation(config: &ExperimentConfig, repeats: usize) -> Result<AblationTable> {
    let mut rows = Vec::new();
    for mode in FusionMode::ALL {
        let cfg = ExperimentConfig {
            fusion: mode,
            out_dir: config.out_dir.join(mode.as_str()),
            ..config.clone()
        };
        rows.push((mode, run_repeats(&cfg, repeats)?));
    }
    let table = AblationTable { rows };
    write_file(&config.out_dir.join("ablation.csv"), &table.to_csv())?;
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    TreeDepth,
    LeafDim,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::TreeDepth => "tree_depth",
            SweepAxis::LeafDim => "leaf_dim",
        }
    }

    fn apply(self, config: &mut ExperimentConfig, value: usize) {
        match self {
            SweepAxis::TreeDepth => config.tree_max_depth = value,
            SweepAxis::LeafDim => config.d_leaf = value,
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tree_depth" => Ok(Self::TreeDepth),
            "leaf_dim" => Ok(Self::LeafDim),
            _ => Err(Error::Invalid(format!("unknown sweep axis {s} (expected tree_depth or leaf_dim)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub rows: Vec<(usize, Summary)>,
    pub table_path: PathBuf,
    pub plot_path: PathBuf,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut s = self.rows[0].1.header(self.axis.as_str());
        s.push('\n');
        for (value, summary) in &self.rows {
            s.push_str(&summary.row(&value.to_string()));
            s.push('\n');
        }
        s
    }

    /// Long format for plotting: one line per (value, metric).
    pub fn plot_data(&self) -> String {
        let mut s = format!("{},metric,mean,std\n", self.axis.as_str());
        for (value, summary) in &self.rows {
            for (name, (mean, std)) in summary.metric_names.iter().zip(summary.mean_std()) {
                let _ = writeln!(s, "{value},{name},{mean},{std}");
            }
        }
        s
    }
}

/// One full run per value with everything else fixed. Writes
/// `sweep_<axis>.csv` and `sweep_<axis>_plot.csv`.
pub fn run_sweep(config: &ExperimentConfig, axis: SweepAxis, values: &[usize], repeats: usize) -> Result<SweepTable> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let mut rows = Vec::new();
    for &value in values {
        let mut cfg = ExperimentConfig {
            out_dir: config.out_dir.join(format!("{}-{value}", axis.as_str())),
            ..config.clone()
        };
        axis.apply(&mut cfg, value);
        cfg.validate()?;
        rows.push((value, run_repeats(&cfg, repeats)?));
    }
    let table = SweepTable {
        axis,
        rows,
        table_path: config.out_dir.join(format!("sweep_{}.csv", axis.as_str())),
        plot_path: config.out_dir.join(format!("sweep_{}_plot.csv", axis.as_str())),
    };
    write_file(&table.table_path, &table.to_csv())?;
    write_file(&table.plot_path, &table.plot_data())?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synthetic::{generate_synthetic, SyntheticSpec};

    fn tiny(data: &Path, out: &Path) -> ExperimentConfig {
        ExperimentConfig {
            seed: Some(4),
            data_dir: data.to_path_buf(),
            out_dir: out.to_path_buf(),
            d_embed: 4,
            d_lstm: 3,
            d_tree: 3,
            d_leaf: 2,
            epochs: 2,
            learning_rate: 0.01,
            min_positives: 2,
            tree_max_depth: 2,
            train_ratio: 0.6,
            val_ratio: 0.2,
            test_ratio: 0.2,
            ks: vec![1, 3],
            ..ExperimentConfig::default()
        }
    }

    fn data() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            n_docs: 20,
            doc_len_min: 5,
            doc_len_max: 10,
            ..SyntheticSpec::lift()
        };
        generate_synthetic(&spec, 1, dir.path()).unwrap();
        dir
    }

    #[test]
    fn mean_std_values() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn prepare_builds_one_tree_per_label() {
        let d = data();
        let out = tempfile::tempdir().unwrap();
        let p = prepare(&tiny(d.path(), out.path()), true).unwrap();
        assert_eq!(p.labels.len(), 8);
        let t = p.trees.as_ref().unwrap();
        assert_eq!(t.ensemble.len(), 8);
        assert_eq!((p.train.len(), p.val.len(), p.test.len()), (12, 4, 4));
        let total = t.ensemble.total_leaves();
        for ex in p.train.iter().chain(&p.val).chain(&p.test) {
            assert_eq!(ex.leaves.len(), 8);
            assert!(ex.leaves.iter().all(|&l| l < total));
        }
        let text_only = prepare(&tiny(d.path(), out.path()), false).unwrap();
        assert!(text_only.trees.is_none());
        assert!(text_only.train.iter().all(|e| e.leaves.is_empty()));
        assert_eq!(text_only.vocab, p.vocab);
    }

    #[test]
    fn train_then_eval_and_guard() {
        let d = data();
        let out = tempfile::tempdir().unwrap();
        let cfg = tiny(d.path(), out.path());
        let res = run_train(&cfg).unwrap();
        for f in [CONFIG_FILE, CHECKPOINT_FILE, TRAIN_LOG_FILE, METRICS_JSON, METRICS_TXT, ENSEMBLE_FILE, VOCAB_FILE] {
            assert!(res.dir.join(f).exists(), "{f}");
        }
        let stored = ExperimentConfig::load(&res.dir.join(CONFIG_FILE)).unwrap();
        assert_eq!(stored, cfg);
        let again = run_eval(&res.dir, None, EvalSplit::Test).unwrap();
        assert_eq!(again, res.test);

        let other = tempfile::tempdir().unwrap();
        generate_synthetic(
            &SyntheticSpec {
                n_docs: 20,
                doc_len_min: 5,
                doc_len_max: 10,
                vocab_size: 17,
                ..SyntheticSpec::lift()
            },
            2,
            other.path(),
        )
        .unwrap();
        let err = run_eval(&res.dir, Some(other.path()), EvalSplit::Test).unwrap_err();
        assert!(matches!(err, Error::HashMismatch { .. }), "{err}");
    }

    #[test]
    fn missing_data_names_the_stage() {
        let out = tempfile::tempdir().unwrap();
        let cfg = tiny(Path::new("/nonexistent/data"), out.path());
        let err = run_train(&cfg).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "load", .. }), "{err}");
    }
}
