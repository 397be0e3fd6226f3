//! Training/holdout emission, ablation subsets and distribution reports.
//! File layouts are described in docs/formats.md.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::qa::{ChoiceQuestion, QaCategory, QaRecord};
use crate::relation::RelationClass;
use crate::seed;
use crate::skg::{corpus_stats, DistributionReport, SkgError, SpatialKg};

pub const IMAGE_TOKEN: &str = "<image>";
pub const TRAIN_FILE: &str = "train.json";
pub const HOLDOUT_FILE: &str = "holdout.json";
pub const TRAIN_MANIFEST: &str = "train_manifest.json";
pub const HOLDOUT_MANIFEST: &str = "holdout_manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("item {item} references missing or discarded image {image}")]
    MissingImage { item: String, image: String },
    #[error("{path}: {reason}")]
    WriteFailure { path: PathBuf, reason: String },
    #[error("holdout instance {0} also appears in the training set")]
    ContaminationDetected(String),
    #[error("asked for {wanted} items but only {available} match")]
    InsufficientItems { wanted: usize, available: usize },
    #[error("unknown subset filter {0:?}")]
    UnknownFilter(String),
    #[error(transparent)]
    Corpus(#[from] SkgError),
}

fn write_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |e| DatasetError::WriteFailure { path: path.to_path_buf(), reason: e.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemMetadata {
    pub category: QaCategory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slice: Option<RelationClass>,
    pub entity_count: usize,
    pub instance_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingItem {
    pub id: String,
    pub image: String,
    pub conversation: Vec<Turn>,
    pub metadata: ItemMetadata,
}

impl TrainingItem {
    pub fn from_qa(qa: &QaRecord) -> Self {
        Self {
            id: qa.id.clone(),
            image: qa.image.clone(),
            conversation: vec![
                Turn { role: Role::User, text: format!("{IMAGE_TOKEN}\n{}", qa.question) },
                Turn { role: Role::Assistant, text: qa.answer.clone() },
            ],
            metadata: ItemMetadata {
                category: qa.category,
                slice: qa.slice,
                entity_count: qa.entity_count,
                instance_id: qa.instance_id.clone(),
            },
        }
    }

    /// Image token first, roles alternating from the user.
    pub fn is_well_formed(&self) -> bool {
        let starts = self.conversation.first().is_some_and(|t| {
            t.role == Role::User && t.text.lines().next() == Some(IMAGE_TOKEN)
        });
        let alternates = self
            .conversation
            .iter()
            .enumerate()
            .all(|(i, t)| t.role == if i % 2 == 0 { Role::User } else { Role::Assistant });
        starts && alternates
    }
}

pub type HoldoutItem = ChoiceQuestion;

/// What subsetting and splitting need to know about an item.
pub trait Stratified {
    fn slice(&self) -> Option<RelationClass>;
    fn entity_count(&self) -> usize;
    fn instance_id(&self) -> &str;
    fn image(&self) -> &str;
    fn item_id(&self) -> &str;
    fn category(&self) -> QaCategory;
}

impl Stratified for TrainingItem {
    fn slice(&self) -> Option<RelationClass> {
        self.metadata.slice
    }
    fn entity_count(&self) -> usize {
        self.metadata.entity_count
    }
    fn instance_id(&self) -> &str {
        &self.metadata.instance_id
    }
    fn image(&self) -> &str {
        &self.image
    }
    fn item_id(&self) -> &str {
        &self.id
    }
    fn category(&self) -> QaCategory {
        self.metadata.category
    }
}

impl Stratified for ChoiceQuestion {
    fn slice(&self) -> Option<RelationClass> {
        self.slice
    }
    fn entity_count(&self) -> usize {
        self.entity_count
    }
    fn instance_id(&self) -> &str {
        &self.instance_id
    }
    fn image(&self) -> &str {
        &self.image
    }
    fn item_id(&self) -> &str {
        &self.id
    }
    fn category(&self) -> QaCategory {
        self.category
    }
}

pub fn slice_key(slice: Option<RelationClass>) -> &'static str {
    slice.map_or("entity", RelationClass::key)
}

/// Splits instance ids into (training, holdout). The holdout takes
/// `holdout_images` instances when given, else `fraction` of them.
pub fn split_instances(
    ids: &[String],
    fraction: f64,
    holdout_images: Option<usize>,
    seed: u64,
) -> (BTreeSet<String>, BTreeSet<String>) {
    let mut sorted: Vec<&String> = ids.iter().collect::<BTreeSet<_>>().into_iter().collect();
    let n = sorted.len();
    let k = holdout_images.unwrap_or((fraction * n as f64).round() as usize).min(n);
    sorted.shuffle(&mut seed::rng(seed));
    let hold = sorted[..k].iter().map(|s| (*s).clone()).collect();
    let train = sorted[k..].iter().map(|s| (*s).clone()).collect();
    (train, hold)
}

/// Picks up to `quota` questions spread round-robin over images, so every
/// image contributes before any contributes twice. No quota keeps all.
pub fn select_holdout_questions(items: Vec<ChoiceQuestion>, quota: Option<usize>, seed: u64) -> Vec<ChoiceQuestion> {
    let Some(quota) = quota else {
        let mut all = items;
        all.sort_by(|a, b| a.id.cmp(&b.id));
        return all;
    };
    let mut rng = seed::rng(seed);
    let mut by_image: BTreeMap<String, Vec<ChoiceQuestion>> = BTreeMap::new();
    for q in items {
        by_image.entry(q.image.clone()).or_default().push(q);
    }
    let mut queues: Vec<Vec<ChoiceQuestion>> = by_image
        .into_values()
        .map(|mut v| {
            v.sort_by(|a, b| a.id.cmp(&b.id));
            v.shuffle(&mut rng);
            v
        })
        .collect();
    let mut out = Vec::new();
    'fill: while out.len() < quota {
        let mut took = false;
        for q in queues.iter_mut() {
            if out.len() == quota {
                break 'fill;
            }
            if let Some(item) = q.pop() {
                out.push(item);
                took = true;
            }
        }
        if !took {
            break;
        }
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RunInfo {
    /// Unix seconds. Excluded from determinism checks.
    pub emitted_at: u64,
}

impl RunInfo {
    pub fn now() -> Self {
        let secs = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        Self { emitted_at: secs }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmitManifest {
    pub kind: String,
    /// Question-answer items (or single-choice questions for the holdout).
    pub items: usize,
    /// Distinct images, the other reading of a dataset's size.
    pub images: usize,
    pub instances: usize,
    pub per_category: BTreeMap<String, usize>,
    pub per_slice: BTreeMap<String, usize>,
    pub instance_ids: Vec<String>,
    pub seed: u64,
    pub config_hash: String,
    pub run_info: RunInfo,
}

impl EmitManifest {
    fn build<T: Stratified>(kind: &str, items: &[T], seed: u64, config_hash: &str) -> Self {
        let mut per_category = BTreeMap::new();
        let mut per_slice = BTreeMap::new();
        for i in items {
            *per_category.entry(i.category().key().to_string()).or_insert(0) += 1;
            *per_slice.entry(slice_key(i.slice()).to_string()).or_insert(0) += 1;
        }
        let images: BTreeSet<&str> = items.iter().map(Stratified::image).collect();
        let instances: BTreeSet<&str> = items.iter().map(Stratified::instance_id).collect();
        Self {
            kind: kind.into(),
            items: items.len(),
            images: images.len(),
            instances: instances.len(),
            per_category,
            per_slice,
            instance_ids: instances.into_iter().map(str::to_string).collect(),
            seed,
            config_hash: config_hash.into(),
            run_info: RunInfo::now(),
        }
    }

    /// The manifest without its run timestamps, for comparisons.
    pub fn stable(&self) -> Self {
        Self { run_info: RunInfo::default(), ..self.clone() }
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), DatasetError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(write_err(dir))?;
    }
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| DatasetError::WriteFailure { path: path.to_path_buf(), reason: e.to_string() })?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(write_err(path))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, DatasetError> {
    let bytes = std::fs::read(path).map_err(write_err(path))?;
    serde_json::from_slice(&bytes).map_err(|e| DatasetError::WriteFailure { path: path.to_path_buf(), reason: e.to_string() })
}

fn copy_images<T: Stratified>(items: &[T], image_root: &Path, out_dir: &Path) -> Result<(), DatasetError> {
    let images: BTreeSet<&str> = items.iter().map(Stratified::image).collect();
    for i in items {
        let src = image_root.join(i.image());
        if i.image().starts_with("images/discarded/") || !src.is_file() {
            return Err(DatasetError::MissingImage { item: i.item_id().into(), image: i.image().into() });
        }
    }
    let same = image_root.canonicalize().ok() == out_dir.canonicalize().ok();
    if same {
        return Ok(());
    }
    for img in images {
        let (src, dst) = (image_root.join(img), out_dir.join(img));
        std::fs::create_dir_all(dst.parent().expect("nested path")).map_err(write_err(&dst))?;
        std::fs::copy(&src, &dst).map_err(write_err(&dst))?;
    }
    Ok(())
}

fn sorted<T: Stratified + Clone>(items: &[T]) -> Vec<T> {
    let mut v = items.to_vec();
    v.sort_by(|a, b| a.item_id().cmp(b.item_id()));
    v
}

/// Writes train.json, its images and manifest under `out_dir`.
pub fn emit_training(
    items: &[TrainingItem],
    image_root: &Path,
    out_dir: &Path,
    seed: u64,
    config_hash: &str,
) -> Result<EmitManifest, DatasetError> {
    let items = sorted(items);
    copy_images(&items, image_root, out_dir)?;
    write_json(&out_dir.join(TRAIN_FILE), &items)?;
    let manifest = EmitManifest::build("training", &items, seed, config_hash);
    write_json(&out_dir.join(TRAIN_MANIFEST), &manifest)?;
    Ok(manifest)
}

/// Writes holdout.json, its images and manifest, refusing any instance the
/// training manifest already lists.
pub fn emit_holdout(
    items: &[HoldoutItem],
    training: Option<&EmitManifest>,
    image_root: &Path,
    out_dir: &Path,
    seed: u64,
    config_hash: &str,
) -> Result<EmitManifest, DatasetError> {
    if let Some(train) = training {
        let seen: BTreeSet<&str> = train.instance_ids.iter().map(String::as_str).collect();
        if let Some(clash) = items.iter().find(|i| seen.contains(i.instance_id.as_str())) {
            return Err(DatasetError::ContaminationDetected(clash.instance_id.clone()));
        }
    }
    let items = sorted(items);
    copy_images(&items, image_root, out_dir)?;
    write_json(&out_dir.join(HOLDOUT_FILE), &items)?;
    let manifest = EmitManifest::build("holdout", &items, seed, config_hash);
    write_json(&out_dir.join(HOLDOUT_MANIFEST), &manifest)?;
    Ok(manifest)
}

/// Built-in ablation predicates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubsetFilter {
    DirectionalOnly,
    DistanceOnly,
    EntityCountAtLeast(usize),
    EntityCountBelow(usize),
}

impl SubsetFilter {
    pub fn matches<T: Stratified>(&self, item: &T) -> bool {
        match *self {
            Self::DirectionalOnly => item.slice() == Some(RelationClass::Directional),
            Self::DistanceOnly => item.slice() == Some(RelationClass::Distance),
            Self::EntityCountAtLeast(n) => item.entity_count() >= n,
            Self::EntityCountBelow(n) => item.entity_count() < n,
        }
    }
}

impl FromStr for SubsetFilter {
    type Err = DatasetError;

    /// `directional-only`, `distance-only`, `entities-ge:N`, `entities-lt:N`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DatasetError::UnknownFilter(s.to_string());
        match s.trim() {
            "directional-only" => Ok(Self::DirectionalOnly),
            "distance-only" => Ok(Self::DistanceOnly),
            other => {
                let (kind, n) = other.split_once(':').ok_or_else(bad)?;
                let n: usize = n.parse().map_err(|_| bad())?;
                match kind {
                    "entities-ge" => Ok(Self::EntityCountAtLeast(n)),
                    "entities-lt" => Ok(Self::EntityCountBelow(n)),
                    _ => Err(bad()),
                }
            }
        }
    }
}

/// Uniform sample without replacement among items passing `keep`, in the
/// input order.
pub fn sample_subset_where<T: Clone>(
    items: &[T],
    size: usize,
    seed: u64,
    keep: impl Fn(&T) -> bool,
) -> Result<Vec<T>, DatasetError> {
    let pool: Vec<&T> = items.iter().filter(|i| keep(i)).collect();
    if size > pool.len() {
        return Err(DatasetError::InsufficientItems { wanted: size, available: pool.len() });
    }
    let mut picked = rand::seq::index::sample(&mut seed::rng(seed), pool.len(), size).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| pool[i].clone()).collect())
}

pub fn sample_subset<T: Stratified + Clone>(
    items: &[T],
    size: usize,
    seed: u64,
    filter: Option<SubsetFilter>,
) -> Result<Vec<T>, DatasetError> {
    sample_subset_where(items, size, seed, |i| filter.is_none_or(|f| f.matches(i)))
}

pub fn report(skgs: &[SpatialKg]) -> Result<DistributionReport, DatasetError> {
    Ok(corpus_stats(skgs)?)
}

/// `rank,label,count` rows; labels with commas or quotes are quoted.
pub fn report_csv(rows: &[(String, u64)]) -> String {
    let mut out = String::from("rank,label,count\n");
    for (i, (label, count)) in rows.iter().enumerate() {
        let label = if label.contains([',', '"']) { format!("\"{}\"", label.replace('"', "\"\"")) } else { label.clone() };
        let _ = writeln!(out, "{},{label},{count}", i + 1);
    }
    out
}

pub fn report_table(report: &DistributionReport, k: usize) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "graphs {}  entities {}  triplets {}  object labels {}  relation phrases {}",
        report.graph_count,
        report.node_count,
        report.triplet_count,
        report.distinct_object_labels,
        report.distinct_relation_phrases
    );
    for (title, rows) in [("objects", report.top_objects(k)), ("relations", report.top_relations(k))] {
        let _ = writeln!(out, "\ntop {k} {title}");
        let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(5);
        for (i, (label, count)) in rows.iter().enumerate() {
            let _ = writeln!(out, "{:>3}  {label:<width$}  {count:>7}", i + 1);
        }
    }
    out
}
