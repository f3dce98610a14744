//! Per-language labeled corpora.
//!
//! A dataset is described by a JSON manifest naming one entry per language,
//! each with its ordered label set and `text<TAB>label` files for the
//! train/dev/test splits. Paths in the manifest are resolved relative to the
//! manifest's own directory.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default batch size.
pub const DEFAULT_BATCH_SIZE: usize = 64;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LanguageId {
    pub code: String,
    pub index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// Ordered label set of one language's task.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSchema {
    pub task: String,
    pub labels: Vec<String>,
}

impl LabelSchema {
    pub fn new(task: impl Into<String>, labels: Vec<String>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for label in &labels {
            if !seen.insert(label.as_str()) {
                return Err(Error::Config(format!("duplicate label `{label}`")));
            }
        }
        if labels.is_empty() {
            return Err(Error::Config("label schema is empty".into()));
        }
        Ok(Self {
            task: task.into(),
            labels,
        })
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// One labeled text. `id` is the example's position in
/// [`MultilingualDataset::examples`]; `label` indexes the language's schema.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: usize,
    pub text: String,
    pub language: usize,
    pub label: usize,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultilingualDataset {
    pub source: String,
    pub task: String,
    pub languages: Vec<LanguageId>,
    pub schemas: Vec<LabelSchema>,
    pub examples: Vec<Example>,
}

#[derive(Debug, Deserialize, Serialize)]
struct Manifest {
    task: String,
    languages: Vec<ManifestLanguage>,
}

#[derive(Debug, Deserialize, Serialize)]
struct ManifestLanguage {
    code: String,
    labels: Vec<String>,
    train: PathBuf,
    #[serde(default)]
    dev: Option<PathBuf>,
    #[serde(default)]
    test: Option<PathBuf>,
}

impl MultilingualDataset {
    pub fn n_languages(&self) -> usize {
        self.languages.len()
    }

    pub fn language(&self, code: &str) -> Result<&LanguageId> {
        self.languages
            .iter()
            .find(|l| l.code == code)
            .ok_or_else(|| Error::UnknownLanguage(code.to_string()))
    }

    pub fn label_name(&self, example: &Example) -> &str {
        &self.schemas[example.language].labels[example.label]
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Example> + '_ {
        self.examples.iter().filter(move |e| e.split == split)
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn has_split(&self, split: Split) -> bool {
        self.split(split).next().is_some()
    }

    /// Appends an example, validating its text and label.
    pub fn push(&mut self, language: usize, split: Split, text: &str, label: &str) -> Result<()> {
        let schema = self.schemas.get(language).ok_or(Error::IndexOutOfRange {
            what: "language",
            index: language,
            len: self.schemas.len(),
        })?;
        let label = schema.index_of(label).ok_or_else(|| Error::UnknownLabel {
            language: self.languages[language].code.clone(),
            label: label.to_string(),
        })?;
        let text = text.trim();
        if text.is_empty() {
            return Err(Error::Config("example text is empty".into()));
        }
        self.examples.push(Example {
            id: self.examples.len(),
            text: text.to_string(),
            language,
            label,
            split,
        });
        Ok(())
    }

    /// An empty dataset with the given languages, each sharing `labels`.
    pub fn with_languages(task: &str, codes: &[&str], labels: &[&str]) -> Result<Self> {
        let labels: Vec<String> = labels.iter().map(|s| s.to_string()).collect();
        let mut languages = Vec::new();
        let mut schemas = Vec::new();
        for (index, code) in codes.iter().enumerate() {
            languages.push(LanguageId {
                code: code.to_string(),
                index,
            });
            schemas.push(LabelSchema::new(task, labels.clone())?);
        }
        if languages.is_empty() {
            return Err(Error::Config("dataset needs at least one language".into()));
        }
        Ok(Self {
            source: "<memory>".into(),
            task: task.to_string(),
            languages,
            schemas,
            examples: Vec::new(),
        })
    }

    /// Writes the dataset as a manifest plus one TSV file per (language, split).
    pub fn write_manifest(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let mut entries = Vec::new();
        for lang in &self.languages {
            let mut files: BTreeMap<Split, PathBuf> = BTreeMap::new();
            for split in Split::ALL {
                let rows: Vec<String> = self
                    .split(split)
                    .filter(|e| e.language == lang.index)
                    .map(|e| format!("{}\t{}\n", e.text, self.label_name(e)))
                    .collect();
                if rows.is_empty() {
                    continue;
                }
                let name = PathBuf::from(format!("{}_{}.tsv", lang.code, split));
                fs::write(dir.join(&name), rows.concat())?;
                files.insert(split, name);
            }
            let train = files.remove(&Split::Train).ok_or_else(|| {
                Error::EmptySplit(format!("{}/train", lang.code))
            })?;
            entries.push(ManifestLanguage {
                code: lang.code.clone(),
                labels: self.schemas[lang.index].labels.clone(),
                train,
                dev: files.remove(&Split::Dev),
                test: files.remove(&Split::Test),
            });
        }
        let manifest = Manifest {
            task: self.task.clone(),
            languages: entries,
        };
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(path)
    }
}

/// Loads and validates a dataset manifest.
pub fn load_dataset(manifest_path: &Path) -> Result<MultilingualDataset> {
    let raw = fs::read_to_string(manifest_path).map_err(|source| Error::Load {
        path: manifest_path.to_path_buf(),
        source,
    })?;
    let manifest: Manifest = serde_json::from_str(&raw).map_err(|e| Error::Manifest {
        path: manifest_path.to_path_buf(),
        message: e.to_string(),
    })?;
    if manifest.languages.is_empty() {
        return Err(Error::Manifest {
            path: manifest_path.to_path_buf(),
            message: "no languages declared".into(),
        });
    }
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));

    let mut ds = MultilingualDataset {
        source: manifest_path.display().to_string(),
        task: manifest.task.clone(),
        languages: Vec::new(),
        schemas: Vec::new(),
        examples: Vec::new(),
    };
    for (index, entry) in manifest.languages.iter().enumerate() {
        if ds.languages.iter().any(|l| l.code == entry.code) {
            return Err(Error::Manifest {
                path: manifest_path.to_path_buf(),
                message: format!("language `{}` declared twice", entry.code),
            });
        }
        let schema = LabelSchema::new(&manifest.task, entry.labels.clone()).map_err(|e| {
            Error::Manifest {
                path: manifest_path.to_path_buf(),
                message: format!("language `{}`: {e}", entry.code),
            }
        })?;
        ds.languages.push(LanguageId {
            code: entry.code.clone(),
            index,
        });
        ds.schemas.push(schema);

        let files = [
            (Split::Train, Some(&entry.train)),
            (Split::Dev, entry.dev.as_ref()),
            (Split::Test, entry.test.as_ref()),
        ];
        let mut used: Vec<PathBuf> = Vec::new();
        for (split, file) in files {
            let Some(file) = file else { continue };
            let path = base.join(file);
            if used.contains(&path) {
                return Err(Error::Manifest {
                    path: manifest_path.to_path_buf(),
                    message: format!(
                        "language `{}`: {} reused for split {split}",
                        entry.code,
                        path.display()
                    ),
                });
            }
            read_split_file(&mut ds, index, split, &path)?;
            used.push(path);
        }
    }
    Ok(ds)
}

fn read_split_file(
    ds: &mut MultilingualDataset,
    language: usize,
    split: Split,
    path: &Path,
) -> Result<()> {
    let raw = fs::read_to_string(path).map_err(|source| Error::Load {
        path: path.to_path_buf(),
        source,
    })?;
    let before = ds.examples.len();
    for (lineno, line) in raw.lines().enumerate() {
        let line_no = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let schema_err = |message: String| Error::Schema {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let (text, label) = line
            .rsplit_once('\t')
            .ok_or_else(|| schema_err("expected `text<TAB>label`".into()))?;
        let label = label.trim();
        if ds.schemas[language].index_of(label).is_none() {
            return Err(schema_err(format!(
                "label `{label}` not in schema {:?}",
                ds.schemas[language].labels
            )));
        }
        if text.trim().is_empty() {
            return Err(schema_err("empty text".into()));
        }
        ds.push(language, split, text, label)?;
    }
    if ds.examples.len() == before {
        return Err(Error::EmptyDataFile(path.to_path_buf()));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionRow {
    pub language: String,
    pub split: Split,
    pub label: String,
    pub count: usize,
    pub proportion: f64,
}

/// Label counts and proportions per (language, split).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub task: String,
    pub rows: Vec<DistributionRow>,
}

impl DistributionReport {
    pub fn group(&self, language: &str, split: Split) -> Vec<&DistributionRow> {
        self.rows
            .iter()
            .filter(|r| r.language == language && r.split == split)
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!("# Label distribution: {}\n\n", self.task);
        out.push_str("| Language | Split | Label | Count | Proportion |\n");
        out.push_str("|---|---|---|---:|---:|\n");
        for r in &self.rows {
            out.push_str(&format!(
                "| {} | {} | {} | {} | {:.4} |\n",
                r.language, r.split, r.label, r.count, r.proportion
            ));
        }
        out
    }
}

pub fn dataset_stats(ds: &MultilingualDataset) -> DistributionReport {
    let mut counts: BTreeMap<(usize, Split), Vec<usize>> = BTreeMap::new();
    for lang in &ds.languages {
        for split in Split::ALL {
            counts.insert((lang.index, split), vec![0; ds.schemas[lang.index].len()]);
        }
    }
    for ex in &ds.examples {
        counts.get_mut(&(ex.language, ex.split)).expect("declared language")[ex.label] += 1;
    }
    let mut rows = Vec::new();
    for ((lang, split), per_label) in counts {
        let total: usize = per_label.iter().sum();
        for (label, &count) in per_label.iter().enumerate() {
            rows.push(DistributionRow {
                language: ds.languages[lang].code.clone(),
                split,
                label: ds.schemas[lang].labels[label].clone(),
                count,
                proportion: if total == 0 {
                    0.0
                } else {
                    count as f64 / total as f64
                },
            });
        }
    }
    DistributionReport {
        task: ds.task.clone(),
        rows,
    }
}

/// How examples of different languages are grouped into batches.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchPolicy {
    /// One shuffled pool across all languages.
    #[default]
    Mixed,
    /// Each batch holds examples of a single language; batch order is shuffled.
    Monolingual,
}

/// Example ids (indices into [`MultilingualDataset::examples`]).
pub type Batch = Vec<usize>;

pub fn make_batches(
    ds: &MultilingualDataset,
    split: Split,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<Batch>> {
    make_batches_with(ds, split, batch_size, seed, BatchPolicy::Mixed)
}

pub fn make_batches_with(
    ds: &MultilingualDataset,
    split: Split,
    batch_size: usize,
    seed: u64,
    policy: BatchPolicy,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let ids: Vec<usize> = ds.split(split).map(|e| e.id).collect();
    if ids.is_empty() {
        return Err(Error::EmptySplit(split.to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match policy {
        BatchPolicy::Mixed => {
            let mut ids = ids;
            ids.shuffle(&mut rng);
            Ok(ids.chunks(batch_size).map(<[usize]>::to_vec).collect())
        }
        BatchPolicy::Monolingual => {
            let mut batches = Vec::new();
            for lang in &ds.languages {
                let mut group: Vec<usize> = ids
                    .iter()
                    .copied()
                    .filter(|&id| ds.examples[id].language == lang.index)
                    .collect();
                group.shuffle(&mut rng);
                batches.extend(group.chunks(batch_size).map(<[usize]>::to_vec));
            }
            batches.shuffle(&mut rng);
            Ok(batches)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) {
        fs::write(dir.join(name), body).unwrap();
    }

    fn five_labels() -> Vec<String> {
        ["Positive", "Negative", "Mixed_feelings", "unknown_state", "not-lang"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    #[test]
    fn loads_three_language_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut langs = Vec::new();
        for code in ["ta", "ml", "kn"] {
            write(
                dir.path(),
                &format!("{code}.tsv"),
                "padam super\tPositive\nmosam\tNegative\n",
            );
            langs.push(serde_json::json!({
                "code": code, "labels": five_labels(), "train": format!("{code}.tsv")
            }));
        }
        let manifest = serde_json::json!({ "task": "sentiment", "languages": langs });
        write(dir.path(), "m.json", &manifest.to_string());
        let ds = load_dataset(&dir.path().join("m.json")).unwrap();
        assert_eq!(ds.n_languages(), 3);
        assert!(ds.schemas.iter().all(|s| s.len() == 5));
        assert_eq!(ds.examples.len(), 6);
        assert_eq!(ds.languages[2].code, "kn");
        assert_eq!(ds.languages[2].index, 2);
    }

    #[test]
    fn minimal_manifest_single_example() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.tsv", "hello\tA\n");
        write(
            dir.path(),
            "m.json",
            r#"{"task":"t","languages":[{"code":"xx","labels":["A"],"train":"a.tsv"}]}"#,
        );
        let ds = load_dataset(&dir.path().join("m.json")).unwrap();
        assert_eq!(ds.examples.len(), 1);
        assert_eq!(ds.examples[0].split, Split::Train);
    }

    #[test]
    fn label_outside_schema_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.tsv", "fine\tA\nwow\thappy\n");
        write(
            dir.path(),
            "m.json",
            r#"{"task":"t","languages":[{"code":"xx","labels":["A","B"],"train":"a.tsv"}]}"#,
        );
        match load_dataset(&dir.path().join("m.json")) {
            Err(Error::Schema { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("happy"));
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn missing_and_empty_files() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_dataset(&dir.path().join("nope.json")).unwrap_err();
        assert!(err.to_string().contains("nope.json"));

        write(dir.path(), "a.tsv", "\n\n");
        write(
            dir.path(),
            "m.json",
            r#"{"task":"t","languages":[{"code":"xx","labels":["A"],"train":"a.tsv"}]}"#,
        );
        assert!(matches!(
            load_dataset(&dir.path().join("m.json")),
            Err(Error::EmptyDataFile(_))
        ));

        write(
            dir.path(),
            "m2.json",
            r#"{"task":"t","languages":[{"code":"xx","labels":["A"],"train":"gone.tsv"}]}"#,
        );
        let err = load_dataset(&dir.path().join("m2.json")).unwrap_err();
        assert!(err.to_string().contains("gone.tsv"));
    }

    #[test]
    fn reload_is_deterministic() {
        let mut ds = MultilingualDataset::with_languages("t", &["a", "b"], &["x", "y"]).unwrap();
        for i in 0..7 {
            ds.push(i % 2, Split::Train, &format!("w{i} v{i}"), "x").unwrap();
        }
        ds.push(0, Split::Dev, "dev text", "y").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = ds.write_manifest(dir.path()).unwrap();
        let a = load_dataset(&path).unwrap();
        let b = load_dataset(&path).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.examples.len(), 8);
    }

    #[test]
    fn stats_balanced_and_hand_counted() {
        let mut ds = MultilingualDataset::with_languages("t", &["a"], &["A", "B"]).unwrap();
        for label in ["A", "A", "B", "B"] {
            ds.push(0, Split::Train, "w", label).unwrap();
        }
        for label in ["A", "A", "B"] {
            ds.push(0, Split::Dev, "w", label).unwrap();
        }
        let report = dataset_stats(&ds);
        let train: Vec<f64> = report.group("a", Split::Train).iter().map(|r| r.proportion).collect();
        assert_eq!(train, vec![0.5, 0.5]);
        let dev = report.group("a", Split::Dev);
        assert_eq!(dev[0].count, 2);
        assert_eq!(dev[1].count, 1);
        assert!((dev[0].proportion - 2.0 / 3.0).abs() < 1e-15);
        assert!((dev[1].proportion - 1.0 / 3.0).abs() < 1e-15);
        // undeclared split is reported with zero counts
        assert!(report.group("a", Split::Test).iter().all(|r| r.count == 0));
        assert!(report.to_markdown().contains("| a | dev | A | 2 | 0.6667 |"));
    }

    #[test]
    fn batch_sizes_and_determinism() {
        let mut ds = MultilingualDataset::with_languages("t", &["a", "b"], &["x"]).unwrap();
        for i in 0..10 {
            ds.push(i % 2, Split::Train, &format!("t{i}"), "x").unwrap();
        }
        let batches = make_batches(&ds, Split::Train, 4, 7).unwrap();
        let sizes: Vec<usize> = batches.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        assert_eq!(batches, make_batches(&ds, Split::Train, 4, 7).unwrap());
        assert!(make_batches(&ds, Split::Dev, 4, 7).is_err());
        assert!(make_batches(&ds, Split::Train, 0, 7).is_err());

        let mono = make_batches_with(&ds, Split::Train, 4, 7, BatchPolicy::Monolingual).unwrap();
        for batch in &mono {
            let lang = ds.examples[batch[0]].language;
            assert!(batch.iter().all(|&id| ds.examples[id].language == lang));
        }
        assert_eq!(DEFAULT_BATCH_SIZE, 64);
    }
}
