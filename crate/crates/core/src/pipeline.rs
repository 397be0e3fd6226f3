//! End-to-end orchestration: a TOML config, stage manifests for resuming,
//! and the stage bodies themselves.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use crate::backend::{
    BackendConfig, CatalogBackend, ImageGenBackend, KnowledgeFetcher, KnowledgeMode, ProceduralRenderer,
    PromptTemplates, RemoteImageBackend, RemoteTextBackend, RenderStyle, SceneCatalog, TextGenBackend,
};
use crate::builder::{build_skg_batch, gen_scene_objects, BuilderConfig, SceneObjects, StageFailure};
use crate::dataset::{
    emit_holdout, emit_training, read_json, select_holdout_questions, split_instances, write_json, DatasetError,
    EmitManifest, RunInfo, TrainingItem,
};
use crate::images::{filter_images, load, render_variants, restore_discarded, FilterVerdict, ImageRecord};
use crate::layout::{build_instance, SceneInstance, SolverConfig};
use crate::par;
use crate::qa::{filter_qa, gen_qa, make_choice, paraphrase, QaRecord};
use crate::relation::{Canvas, SynonymTable};
use crate::seed;
use crate::skg::SpatialKg;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("stage {stage} needs a completed {needs} stage (no matching manifest)")]
    MissingUpstreamManifest { stage: &'static str, needs: &'static str },
    #[error("stage {stage} failed: {reason}")]
    Stage { stage: &'static str, reason: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

impl PipelineError {
    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::ConfigInvalid(_) => 2,
            _ => 1,
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::ConfigInvalid(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TextBackendSpec {
    Catalog,
    Remote(BackendConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImageBackendSpec {
    Procedural,
    Remote(BackendConfig),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnowledgeSpec {
    pub mode: KnowledgeMode,
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Backends {
    pub text: TextBackendSpec,
    pub image: ImageBackendSpec,
    pub knowledge: KnowledgeSpec,
}

impl Default for Backends {
    fn default() -> Self {
        Self { text: TextBackendSpec::Catalog, image: ImageBackendSpec::Procedural, knowledge: KnowledgeSpec::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Not part of the config hash.
    pub out_dir: PathBuf,
    pub variants: usize,
    pub holdout_fraction: f64,
    /// Holdout instance count; overrides the fraction when set.
    pub holdout_images: Option<usize>,
    /// Cap on holdout questions, spread evenly over holdout images.
    pub holdout_questions: Option<usize>,
    pub choice_options: usize,
    pub paraphrase: bool,
    pub builder: BuilderConfig,
    pub canvas: Canvas,
    pub solver: SolverConfig,
    pub render: RenderStyle,
    pub backends: Backends,
    pub scene_catalog: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub synonyms: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            variants: crate::images::DEFAULT_VARIANTS,
            holdout_fraction: 0.1,
            holdout_images: None,
            holdout_questions: None,
            choice_options: 4,
            paraphrase: false,
            builder: BuilderConfig::default(),
            canvas: Canvas::default(),
            solver: SolverConfig::default(),
            render: RenderStyle::default(),
            backends: Backends::default(),
            scene_catalog: None,
            templates: None,
            synonyms: None,
        }
    }
}

/// Replaces `${VAR}` in `token` values. Any other string holding `${`
/// is rejected, so interpolation cannot leak into hashed settings.
fn interpolate(value: &mut toml::Value, key: Option<&str>) -> Result<(), PipelineError> {
    match value {
        toml::Value::String(s) if s.contains("${") => {
            if key != Some("token") {
                return Err(invalid(format!("${{...}} is only allowed in token values (found in {:?})", key.unwrap_or(""))));
            }
            let mut out = String::new();
            let mut rest = s.as_str();
            while let Some(start) = rest.find("${") {
                out.push_str(&rest[..start]);
                let end = rest[start..].find('}').ok_or_else(|| invalid("unterminated ${"))? + start;
                let var = &rest[start + 2..end];
                out.push_str(&std::env::var(var).map_err(|_| invalid(format!("environment variable {var} is not set")))?);
                rest = &rest[end + 1..];
            }
            out.push_str(rest);
            *s = out;
        }
        toml::Value::Table(t) => {
            for (k, v) in t.iter_mut() {
                interpolate(v, Some(k))?;
            }
        }
        toml::Value::Array(a) => {
            for v in a {
                interpolate(v, key)?;
            }
        }
        _ => {}
    }
    Ok(())
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let mut value: toml::Value = toml::from_str(text).map_err(invalid)?;
        interpolate(&mut value, None)?;
        value.try_into().map_err(invalid)
    }

    /// Loads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let mut c = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut c.scene_catalog, &mut c.templates, &mut c.synonyms, &mut c.backends.knowledge.cache_dir]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        Ok(c)
    }

    /// Forces the offline catalog and procedural backends.
    pub fn force_offline(&mut self) {
        self.backends.text = TextBackendSpec::Catalog;
        self.backends.image = ImageBackendSpec::Procedural;
        self.backends.knowledge.mode = KnowledgeMode::Offline;
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.canvas.validate().map_err(invalid)?;
        self.builder.validate().map_err(invalid)?;
        self.solver.sizes.validate(&self.canvas).map_err(invalid)?;
        if self.solver.max_attempts == 0 {
            return Err(invalid("solver.max_attempts must be positive"));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(invalid("holdout_fraction must lie in [0, 1)"));
        }
        if self.variants == 0 {
            return Err(invalid("variants must be at least 1"));
        }
        if !(2..=4).contains(&self.choice_options) {
            return Err(invalid("choice_options must be 2, 3 or 4"));
        }
        if let TextBackendSpec::Remote(c) = &self.backends.text {
            c.validate().map_err(invalid)?;
        }
        if let ImageBackendSpec::Remote(c) = &self.backends.image {
            c.validate().map_err(invalid)?;
        }
        for p in [&self.scene_catalog, &self.synonyms].into_iter().flatten() {
            if !p.is_file() {
                return Err(invalid(format!("{} does not exist", p.display())));
            }
        }
        if let Some(d) = &self.templates {
            if !d.is_dir() {
                return Err(invalid(format!("{} is not a directory", d.display())));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the settings that shape outputs.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().take(16).map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    GenScenes,
    BuildSkg,
    Solve,
    Render,
    Filter,
    Qa,
    Emit,
}

impl Stage {
    pub const ALL: [Stage; 7] =
        [Self::GenScenes, Self::BuildSkg, Self::Solve, Self::Render, Self::Filter, Self::Qa, Self::Emit];

    pub fn name(self) -> &'static str {
        match self {
            Self::GenScenes => "gen-scenes",
            Self::BuildSkg => "build-skg",
            Self::Solve => "solve",
            Self::Render => "render",
            Self::Filter => "filter",
            Self::Qa => "qa",
            Self::Emit => "emit",
        }
    }

    pub fn upstream(self) -> Option<Stage> {
        let i = Self::ALL.iter().position(|s| *s == self).expect("listed");
        i.checked_sub(1).map(|j| Self::ALL[j])
    }

    fn work_file(self) -> &'static str {
        match self {
            Self::GenScenes => "scenes.json",
            Self::BuildSkg => "skgs.json",
            Self::Solve => "instances.json",
            Self::Render => "images.json",
            Self::Filter => "filtered_images.json",
            Self::Qa => "qa.json",
            Self::Emit => "emit.json",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    pub items: usize,
    pub counts: BTreeMap<String, usize>,
    pub failures: Vec<StageFailure>,
    pub run_info: RunInfo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    pub stage: Stage,
    pub resumed: bool,
    pub manifest: StageManifest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config_hash: String,
    pub seed: u64,
    pub training: EmitManifest,
    pub holdout: EmitManifest,
}

pub struct Pipeline {
    pub config: PipelineConfig,
    hash: String,
    out: PathBuf,
    text: Box<dyn TextGenBackend>,
    image: Box<dyn ImageGenBackend>,
    knowledge: KnowledgeFetcher,
    synonyms: SynonymTable,
}

fn stage_err(stage: Stage) -> impl Fn(String) -> PipelineError {
    move |reason| PipelineError::Stage { stage: stage.name(), reason }
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let templates = match &config.templates {
            Some(d) => PromptTemplates::with_overrides(d).map_err(invalid)?,
            None => PromptTemplates::embedded(),
        };
        let text: Box<dyn TextGenBackend> = match &config.backends.text {
            TextBackendSpec::Catalog => {
                let catalog = match &config.scene_catalog {
                    Some(p) => SceneCatalog::load(p).map_err(invalid)?,
                    None => SceneCatalog::bundled(),
                };
                Box::new(CatalogBackend::new(catalog, config.canvas, config.builder.min_objects))
            }
            TextBackendSpec::Remote(c) => Box::new(RemoteTextBackend::new(c.clone(), templates).map_err(invalid)?),
        };
        let image: Box<dyn ImageGenBackend> = match &config.backends.image {
            ImageBackendSpec::Procedural => Box::new(ProceduralRenderer::new(config.render.clone())),
            ImageBackendSpec::Remote(c) => Box::new(RemoteImageBackend::new(c.clone()).map_err(invalid)?),
        };
        let out = config.out_dir.clone();
        let knowledge = match config.backends.knowledge.mode {
            KnowledgeMode::Offline => KnowledgeFetcher::offline(),
            mode => KnowledgeFetcher::new(
                mode,
                config.backends.knowledge.cache_dir.clone().unwrap_or_else(|| out.join("knowledge")),
            ),
        };
        let synonyms = match &config.synonyms {
            Some(p) => SynonymTable::load(p).map_err(invalid)?,
            None => SynonymTable::bundled().clone(),
        };
        Ok(Self { hash: config.hash(), config, out, text, image, knowledge, synonyms })
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.out.join("dataset")
    }

    fn manifest_path(&self, stage: Stage) -> PathBuf {
        self.out.join("stages").join(format!("{}.json", stage.name()))
    }

    fn work_path(&self, stage: Stage) -> PathBuf {
        self.out.join("work").join(stage.work_file())
    }

    /// The stage's manifest if it was completed under the current config.
    pub fn completed(&self, stage: Stage) -> Option<StageManifest> {
        let m: StageManifest = read_json(&self.manifest_path(stage)).ok()?;
        (m.config_hash == self.hash && self.work_path(stage).is_file()).then_some(m)
    }

    fn read_work<T: serde::de::DeserializeOwned>(&self, stage: Stage) -> Result<T, PipelineError> {
        Ok(read_json(&self.work_path(stage))?)
    }

    fn finish<T: Serialize>(
        &self,
        stage: Stage,
        work: &T,
        items: usize,
        counts: BTreeMap<String, usize>,
        failures: Vec<StageFailure>,
    ) -> Result<StageManifest, PipelineError> {
        write_json(&self.work_path(stage), work)?;
        let m = StageManifest {
            stage: stage.name().into(),
            config_hash: self.hash.clone(),
            seed: self.config.seed,
            items,
            counts,
            failures,
            run_info: RunInfo::now(),
        };
        // written last: a manifest marks a finished stage
        write_json(&self.manifest_path(stage), &m)?;
        Ok(m)
    }

    /// Runs one stage, or reuses its outputs when a matching manifest
    /// exists and `force` is off.
    pub fn run_stage(&self, stage: Stage, force: bool) -> Result<StageReport, PipelineError> {
        if let Some(up) = stage.upstream() {
            if self.completed(up).is_none() {
                return Err(PipelineError::MissingUpstreamManifest { stage: stage.name(), needs: up.name() });
            }
        }
        if !force {
            if let Some(manifest) = self.completed(stage) {
                log::info!("{}: up to date, skipping", stage.name());
                return Ok(StageReport { stage, resumed: true, manifest });
            }
        }
        log::info!("{}: running", stage.name());
        let manifest = match stage {
            Stage::GenScenes => self.gen_scenes()?,
            Stage::BuildSkg => self.build_skgs()?,
            Stage::Solve => self.solve()?,
            Stage::Render => self.render()?,
            Stage::Filter => self.filter()?,
            Stage::Qa => self.qa()?,
            Stage::Emit => self.emit()?,
        };
        log::info!("{}: {} items, {} failures", stage.name(), manifest.items, manifest.failures.len());
        Ok(StageReport { stage, resumed: false, manifest })
    }

    /// Every stage in order. Returns the reports and whether emission is
    /// complete (all items judged, none left pending).
    pub fn run(&self) -> Result<RunSummary, PipelineError> {
        let mut reports = Vec::new();
        for s in Stage::ALL {
            reports.push(self.run_stage(s, false)?);
        }
        let pending: usize = reports.iter().map(|r| r.manifest.counts.get("pending").copied().unwrap_or(0)).sum();
        Ok(RunSummary { complete: pending == 0, pending, reports })
    }

    fn gen_scenes(&self) -> Result<StageManifest, PipelineError> {
        let (scenes, failures) =
            gen_scene_objects(self.config.builder.scenes, self.text.as_ref(), &self.knowledge, self.config.seed)
                .map_err(|e| stage_err(Stage::GenScenes)(e.to_string()))?;
        let counts = BTreeMap::from([
            ("scenes".into(), scenes.len()),
            ("objects".into(), scenes.iter().map(|s| s.objects.len()).sum()),
        ]);
        self.finish(Stage::GenScenes, &scenes, scenes.len(), counts, failures)
    }

    fn build_skgs(&self) -> Result<StageManifest, PipelineError> {
        let scenes: Vec<SceneObjects> = self.read_work(Stage::GenScenes)?;
        let (skgs, failures) =
            build_skg_batch(&self.config.builder, &scenes, self.text.as_ref(), &self.synonyms, self.config.seed);
        let counts = BTreeMap::from([
            ("entities".into(), skgs.iter().map(|g| g.entities.len()).sum()),
            ("triplets".into(), skgs.iter().map(|g| g.triplets.len()).sum()),
        ]);
        self.finish(Stage::BuildSkg, &skgs, skgs.len(), counts, failures)
    }

    fn solve(&self) -> Result<StageManifest, PipelineError> {
        let scenes: Vec<SceneObjects> = self.read_work(Stage::GenScenes)?;
        let skgs: Vec<SpatialKg> = self.read_work(Stage::BuildSkg)?;
        let objects: BTreeMap<&str, &SceneObjects> = scenes.iter().map(|s| (s.scene.id.as_str(), s)).collect();
        let c = &self.config;
        let results = par::map(&skgs, |g| {
            let objs = objects.get(g.scene.id.as_str()).map_or(&[][..], |s| &s.objects[..]);
            build_instance(g, objs, &c.solver, &c.canvas, c.builder.negative_probability, self.text.as_ref()).map_err(|e| {
                StageFailure { stage: "solve".into(), scene: g.scene.name.clone(), reason: format!("{}: {e}", g.id) }
            })
        });
        let (instances, failures) = split_results(results);
        let counts = BTreeMap::from([
            ("with_negative".into(), instances.iter().filter(|i| i.negative_object.is_some()).count()),
            ("failed".into(), failures.len()),
        ]);
        self.finish(Stage::Solve, &instances, instances.len(), counts, failures)
    }

    fn render(&self) -> Result<StageManifest, PipelineError> {
        let instances: Vec<SceneInstance> = self.read_work(Stage::Solve)?;
        let results = par::map(&instances, |inst| {
            render_variants(inst, self.config.variants, self.image.as_ref(), &self.out).map(|(recs, errs)| {
                let fails: Vec<StageFailure> = errs
                    .into_iter()
                    .map(|e| StageFailure {
                        stage: "render".into(),
                        scene: inst.skg.scene.name.clone(),
                        reason: format!("{}: {e}", inst.id),
                    })
                    .collect();
                (recs, fails)
            })
        });
        let mut records = Vec::new();
        let mut failures = Vec::new();
        for r in results {
            let (recs, fails) = r.map_err(|e| stage_err(Stage::Render)(e.to_string()))?;
            records.extend(recs);
            failures.extend(fails);
        }
        let counts = BTreeMap::from([("images".into(), records.len())]);
        self.finish(Stage::Render, &records, records.len(), counts, failures)
    }

    fn filter(&self) -> Result<StageManifest, PipelineError> {
        let instances: Vec<SceneInstance> = self.read_work(Stage::Solve)?;
        let mut records: Vec<ImageRecord> = self.read_work(Stage::Render)?;
        // an interrupted earlier attempt may have moved files already
        restore_discarded(&mut records, &self.out).map_err(|e| stage_err(Stage::Filter)(e.to_string()))?;
        let by_instance = group(&records);
        let results = par::map(&instances, |inst| {
            let recs = by_instance.get(inst.id.as_str()).cloned().unwrap_or_default();
            filter_images(&recs, inst, self.text.as_ref(), &self.out)
        });
        let mut out = Vec::new();
        for r in results {
            out.extend(r.map_err(|e| stage_err(Stage::Filter)(e.to_string()))?);
        }
        let counts = verdict_counts(out.iter().map(|r| r.filter_verdict));
        let failures = out
            .iter()
            .filter(|r| r.filter_verdict == FilterVerdict::Discarded)
            .map(|r| StageFailure {
                stage: "filter".into(),
                scene: r.instance_id.clone(),
                reason: r.discard_reason.clone().unwrap_or_default(),
            })
            .collect();
        self.finish(Stage::Filter, &out, out.len(), counts, failures)
    }

    fn qa(&self) -> Result<StageManifest, PipelineError> {
        let instances: Vec<SceneInstance> = self.read_work(Stage::Solve)?;
        let records: Vec<ImageRecord> = self.read_work(Stage::Filter)?;
        let by_instance = group(&records);
        let results = par::map(&instances, |inst| -> Result<Vec<QaRecord>, String> {
            let mut out = Vec::new();
            for rec in by_instance.get(inst.id.as_str()).into_iter().flatten() {
                if rec.filter_verdict != FilterVerdict::Kept {
                    continue;
                }
                let v = variant_index(rec);
                let mut qa = gen_qa(inst, v, &rec.path);
                if self.config.paraphrase {
                    paraphrase(&mut qa, self.text.as_ref(), seed::derive(inst.seed, 3, 1 << 20 | v as u64))
                        .map_err(|e| format!("{}: {e}", inst.id))?;
                }
                let img = load(&self.out, rec).map_err(|e| e.to_string())?;
                filter_qa(&mut qa, &img, self.text.as_ref());
                out.extend(qa);
            }
            Ok(out)
        });
        let mut qa = Vec::new();
        let mut failures = Vec::new();
        for (inst, r) in instances.iter().zip(results) {
            match r {
                Ok(q) => qa.extend(q),
                Err(reason) => failures.push(StageFailure {
                    stage: "qa".into(),
                    scene: inst.skg.scene.name.clone(),
                    reason,
                }),
            }
        }
        let counts = verdict_counts(qa.iter().map(|q| q.verdict));
        self.finish(Stage::Qa, &qa, qa.len(), counts, failures)
    }

    fn emit(&self) -> Result<StageManifest, PipelineError> {
        let c = &self.config;
        let instances: Vec<SceneInstance> = self.read_work(Stage::Solve)?;
        let qa: Vec<QaRecord> = self.read_work(Stage::Qa)?;
        let kept: Vec<&QaRecord> = qa.iter().filter(|q| q.verdict == FilterVerdict::Kept).collect();
        let ids: Vec<String> = kept.iter().map(|q| q.instance_id.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        let (train_ids, hold_ids) =
            split_instances(&ids, c.holdout_fraction, c.holdout_images, seed::stage(c.seed, "split"));

        let training: Vec<TrainingItem> =
            kept.iter().filter(|q| train_ids.contains(&q.instance_id)).map(|q| TrainingItem::from_qa(q)).collect();

        let by_id: BTreeMap<&str, &SceneInstance> = instances.iter().map(|i| (i.id.as_str(), i)).collect();
        let mut failures = Vec::new();
        let mut choices = Vec::new();
        for id in &hold_ids {
            let inst = by_id[id.as_str()];
            // one image per holdout instance: its lowest kept variant
            let mine: Vec<&&QaRecord> = kept.iter().filter(|q| &q.instance_id == id).collect();
            let Some(image) = mine.iter().map(|q| q.image.as_str()).min() else { continue };
            for (i, q) in mine.iter().filter(|q| q.image == image).enumerate() {
                let s = seed::derive(seed::derive(inst.seed, 3, 1 << 21), i as u64, 0);
                match make_choice(q, inst, c.choice_options, s) {
                    Ok(ch) => choices.push(ch),
                    Err(e) => failures.push(StageFailure {
                        stage: "emit".into(),
                        scene: inst.skg.scene.name.clone(),
                        reason: format!("{}: {e}", q.id),
                    }),
                }
            }
        }
        let holdout = select_holdout_questions(choices, c.holdout_questions, seed::stage(c.seed, "holdout"));

        let dir = self.dataset_dir();
        let train_m = emit_training(&training, &self.out, &dir, c.seed, &self.hash)?;
        let hold_m = emit_holdout(&holdout, Some(&train_m), &self.out, &dir, c.seed, &self.hash)?;
        let manifest =
            DatasetManifest { config_hash: self.hash.clone(), seed: c.seed, training: train_m, holdout: hold_m };
        write_json(&dir.join("manifest.json"), &manifest)?;
        let counts = BTreeMap::from([
            ("training_items".into(), manifest.training.items),
            ("training_images".into(), manifest.training.images),
            ("holdout_images".into(), manifest.holdout.images),
            ("holdout_questions".into(), manifest.holdout.items),
        ]);
        self.finish(Stage::Emit, &manifest, manifest.training.items + manifest.holdout.items, counts, failures)
    }

    pub fn skgs(&self) -> Result<Vec<SpatialKg>, PipelineError> {
        if self.completed(Stage::BuildSkg).is_none() {
            return Err(PipelineError::MissingUpstreamManifest { stage: "stats", needs: Stage::BuildSkg.name() });
        }
        self.read_work(Stage::BuildSkg)
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub reports: Vec<StageReport>,
    pub complete: bool,
    pub pending: usize,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        if self.complete {
            0
        } else {
            1
        }
    }
}

fn split_results<T>(results: Vec<Result<T, StageFailure>>) -> (Vec<T>, Vec<StageFailure>) {
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for r in results {
        match r {
            Ok(t) => ok.push(t),
            Err(f) => failed.push(f),
        }
    }
    (ok, failed)
}

fn group(records: &[ImageRecord]) -> BTreeMap<&str, Vec<ImageRecord>> {
    let mut m: BTreeMap<&str, Vec<ImageRecord>> = BTreeMap::new();
    for r in records {
        m.entry(r.instance_id.as_str()).or_default().push(r.clone());
    }
    m
}

fn verdict_counts(vs: impl Iterator<Item = FilterVerdict>) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::from([("kept".into(), 0), ("discarded".into(), 0), ("pending".into(), 0)]);
    for v in vs {
        let k = match v {
            FilterVerdict::Kept => "kept",
            FilterVerdict::Discarded => "discarded",
            FilterVerdict::Pending => "pending",
        };
        *m.get_mut(k).expect("preset") += 1;
    }
    m
}

/// Variant number from an image path ending in `<v>.png`.
pub fn variant_index(record: &ImageRecord) -> usize {
    Path::new(&record.path).file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse().ok()).unwrap_or(0)
}
