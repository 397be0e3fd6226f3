//! Entity and relation question–answer generation, single-choice
//! conversion, and the image-only answer filter.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

use crate::backend::oracle::judge_answer;
use crate::backend::procedural::{Legend, LegendEntry, Shape};
use crate::backend::{BackendError, GroundTruth, TextGenBackend, COLOR_PALETTE};
use crate::bitmap::Bitmap;
use crate::images::FilterVerdict;
use crate::layout::SceneInstance;
use crate::question::{pluralize, relation_words, with_article, Question};
use crate::relation::{
    classify, evaluate, invert, DirectionalRelation, DistanceRelation, RelationClass, RelationSpec,
};
use crate::seed;
use crate::skg::{CatalogObject, Entity};

pub const OPTION_LABELS: [&str; 4] = ["A", "B", "C", "D"];

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum QaError {
    #[error("cannot form {wanted} distinct options for {question:?}")]
    DistractorCollision { question: String, wanted: usize },
    #[error("the stated answer {0:?} does not hold")]
    AnswerRejected(String),
    #[error("option count must be 2, 3 or 4")]
    BadOptionCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QaCategory {
    EntityExistence,
    EntityCount,
    EntityAttribute,
    RelationDirection,
    RelationDistance,
    RelationBoth,
}

impl QaCategory {
    pub const ALL: [QaCategory; 6] = [
        Self::EntityExistence,
        Self::EntityCount,
        Self::EntityAttribute,
        Self::RelationDirection,
        Self::RelationDistance,
        Self::RelationBoth,
    ];

    pub fn for_relation(class: RelationClass) -> Self {
        match class {
            RelationClass::Directional => Self::RelationDirection,
            RelationClass::Distance => Self::RelationDistance,
            RelationClass::Both => Self::RelationBoth,
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Self::EntityExistence => "entity_existence",
            Self::EntityCount => "entity_count",
            Self::EntityAttribute => "entity_attribute",
            Self::RelationDirection => "relation_direction",
            Self::RelationDistance => "relation_distance",
            Self::RelationBoth => "relation_both",
        }
    }

    pub fn is_relation(self) -> bool {
        matches!(self, Self::RelationDirection | Self::RelationDistance | Self::RelationBoth)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaRecord {
    pub id: String,
    pub instance_id: String,
    pub image: String,
    /// Possibly paraphrased surface text.
    pub question: String,
    pub answer: String,
    /// The templated form the answer was derived from.
    pub form: Question,
    /// Entity ids the question is about.
    pub entities: Vec<String>,
    pub category: QaCategory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slice: Option<RelationClass>,
    pub entity_count: usize,
    pub verdict: FilterVerdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceQuestion {
    pub id: String,
    pub instance_id: String,
    pub image: String,
    pub question: String,
    pub options: BTreeMap<String, String>,
    pub answer_key: String,
    pub category: QaCategory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slice: Option<RelationClass>,
    pub entity_count: usize,
}

/// Ground truth straight from the solved layout, in the shape the image
/// oracle reads from pixels.
pub fn layout_truth(instance: &SceneInstance) -> GroundTruth {
    let entities = instance
        .skg
        .entities
        .iter()
        .map(|e| LegendEntry {
            id: e.id.clone(),
            description: e.description.clone(),
            label: e.base_object.display_name(),
            color: e.color().map(str::to_string),
            rgb: [0, 0, 0],
            shape: Shape::Rectangle,
        })
        .collect();
    let boxes = instance.skg.entities.iter().map(|e| instance.layout.boxes.get(&e.id).copied()).collect();
    GroundTruth {
        legend: Legend { scene: instance.skg.scene.name.clone(), canvas: instance.layout.canvas, entities },
        boxes,
    }
}

struct Draft {
    form: Question,
    answer: String,
    entities: Vec<String>,
    category: QaCategory,
    slice: Option<RelationClass>,
}

fn finish(instance: &SceneInstance, image: &str, drafts: Vec<Draft>, first: usize) -> Vec<QaRecord> {
    drafts
        .into_iter()
        .enumerate()
        .map(|(i, d)| QaRecord {
            id: format!("{}-q{:02}", instance.id, first + i),
            instance_id: instance.id.clone(),
            image: image.to_string(),
            question: d.form.render(),
            answer: d.answer,
            form: d.form,
            entities: d.entities,
            category: d.category,
            slice: d.slice,
            entity_count: instance.skg.entities.len(),
            verdict: FilterVerdict::Pending,
        })
        .collect()
}

/// Existence (positive and, when an absent object was chosen, negative),
/// count and unambiguous color questions.
pub fn gen_entity_qa(instance: &SceneInstance, image: &str) -> Vec<QaRecord> {
    let es = &instance.skg.entities;
    let mut drafts = Vec::new();
    for e in es {
        drafts.push(Draft {
            form: Question::Exists { phrase: e.bare_description().to_string() },
            answer: "Yes".into(),
            entities: vec![e.id.clone()],
            category: QaCategory::EntityExistence,
            slice: None,
        });
    }
    if let Some(neg) = &instance.negative_object {
        drafts.push(Draft {
            form: Question::Exists { phrase: neg.display_name() },
            answer: "No".into(),
            entities: vec![],
            category: QaCategory::EntityExistence,
            slice: None,
        });
    }
    let mut groups: BTreeMap<String, Vec<&Entity>> = BTreeMap::new();
    for e in es {
        groups.entry(e.base_object.display_name()).or_default().push(e);
    }
    for (name, members) in &groups {
        drafts.push(Draft {
            form: Question::Count { plural: pluralize(name) },
            answer: members.len().to_string(),
            entities: members.iter().map(|e| e.id.clone()).collect(),
            category: QaCategory::EntityCount,
            slice: None,
        });
        if let [only] = members.as_slice() {
            if let Some(color) = only.color() {
                drafts.push(Draft {
                    form: Question::Color { label: name.clone() },
                    answer: color.to_string(),
                    entities: vec![only.id.clone()],
                    category: QaCategory::EntityAttribute,
                    slice: None,
                });
            }
        }
    }
    finish(instance, image, drafts, 0)
}

fn bare<'a>(instance: &'a SceneInstance, id: &'a str) -> &'a str {
    instance.skg.entity(id).map_or(id, Entity::bare_description)
}

/// One question per triplet: the relation itself, the object standing in
/// it (when unique), or a yes/no check, the latter sometimes joined by its
/// false counterpart.
pub fn gen_relation_qa(instance: &SceneInstance, image: &str, seed: u64) -> Vec<QaRecord> {
    let mut rng = seed::rng(seed);
    let boxes = &instance.layout.boxes;
    let canvas = &instance.layout.canvas;
    let mut drafts = Vec::new();
    for t in &instance.skg.triplets {
        let (a, b) = (bare(instance, &t.subject).to_string(), bare(instance, &t.object).to_string());
        let slice = classify(&t.relation);
        let category = QaCategory::for_relation(slice);
        let ids = vec![t.subject.clone(), t.object.clone()];
        let unique = instance
            .skg
            .entities
            .iter()
            .filter(|e| e.id != t.object)
            .filter(|e| evaluate(&t.relation, &boxes[&e.id], &boxes[&t.object], canvas))
            .count()
            == 1;
        let kinds = if unique { 3 } else { 2 };
        let kind = rng.random_range(0..kinds);
        let counterpart = rng.random_bool(0.5);
        let draft = |form, answer: &str| Draft {
            form,
            answer: answer.to_string(),
            entities: ids.clone(),
            category,
            slice: Some(slice),
        };
        match kind {
            0 => drafts.push(draft(Question::RelationOf { subject: a, object: b }, &t.relation.canonical_phrase())),
            1 => {
                drafts.push(draft(
                    Question::Verify { subject: a.clone(), relation: relation_words(&t.relation), object: b.clone() },
                    "Yes",
                ));
                let false_rel = if t.relation.direction.is_some() {
                    invert(&t.relation)
                } else {
                    RelationSpec::distance_only(t.relation.distance.expect("distance part").opposite())
                };
                let holds = evaluate(&false_rel, &boxes[&t.subject], &boxes[&t.object], canvas);
                if counterpart && !holds {
                    drafts.push(draft(
                        Question::Verify { subject: a, relation: relation_words(&false_rel), object: b },
                        "No",
                    ));
                }
            }
            _ => {
                let desc = instance.skg.entity(&t.subject).map_or(a, |e| e.description.clone());
                drafts.push(draft(Question::WhichObject { relation: relation_words(&t.relation), object: b }, &desc));
            }
        }
    }
    finish(instance, image, drafts, 100)
}

/// All questions for one image variant, with ids unique across variants.
pub fn gen_qa(instance: &SceneInstance, variant: usize, image: &str) -> Vec<QaRecord> {
    let prefix = format!("{}-v{variant}", instance.id);
    let mut out = gen_entity_qa(instance, image);
    out.extend(gen_relation_qa(instance, image, seed::derive(instance.seed, 3, variant as u64)));
    for r in &mut out {
        r.id = r.id.replacen(&instance.id, &prefix, 1);
    }
    out
}

/// Rewrites question text through the backend; answers are untouched.
pub fn paraphrase(records: &mut [QaRecord], backend: &dyn TextGenBackend, seed: u64) -> Result<(), BackendError> {
    for (i, r) in records.iter_mut().enumerate() {
        r.question = backend.paraphrase_question(&r.question, seed::derive(seed, i as u64, 0))?;
    }
    Ok(())
}

fn all_relation_specs() -> Vec<RelationSpec> {
    let mut out = Vec::new();
    for d in DirectionalRelation::ALL {
        out.push(RelationSpec::directional(d));
    }
    for r in DistanceRelation::ALL {
        out.push(RelationSpec::distance_only(r));
    }
    for d in DirectionalRelation::ALL {
        for r in DistanceRelation::ALL {
            out.push(RelationSpec::new(Some(d), Some(r)).expect("both parts"));
        }
    }
    out
}

/// Distractor candidates in preference groups; the first acceptable member
/// of each group is taken before the rest fill in.
fn distractor_groups(qa: &QaRecord, instance: &SceneInstance, rng: &mut impl Rng) -> Vec<Vec<String>> {
    let absent: Vec<&CatalogObject> = {
        let present: BTreeSet<String> = instance.skg.entities.iter().map(|e| e.base_object.display_name()).collect();
        let mut v: Vec<&CatalogObject> = instance.negative_object.iter().collect();
        v.extend(instance.scene_objects.iter().filter(|o| !present.contains(&o.display_name())));
        v
    };
    let asked = match &qa.form {
        Question::Exists { phrase } => phrase.as_str(),
        _ => "",
    };
    let claim = absent
        .iter()
        .map(|o| o.display_name())
        .find(|n| !n.eq_ignore_ascii_case(asked))
        .map_or("The image is blank".to_string(), |n| format!("There is {} instead", with_article(&n)));
    let mut shuffled = |mut v: Vec<String>| {
        v.shuffle(rng);
        v
    };
    match &qa.form {
        Question::Exists { .. } | Question::Verify { .. } => {
            let other = if qa.answer == "Yes" { "No" } else { "Yes" };
            vec![vec![other.into()], vec!["Cannot be determined".into()], vec![claim, "The image is blank".into()]]
        }
        Question::Count { .. } => {
            let c: i64 = qa.answer.parse().unwrap_or(0);
            vec![vec![(c - 1).to_string()], vec![(c + 1).to_string()], vec![(c + 3).to_string(), (c + 2).to_string()]]
        }
        Question::Color { .. } => {
            vec![shuffled(COLOR_PALETTE.iter().map(|(c, _)| c.to_string()).collect())]
        }
        Question::RelationOf { .. } => {
            let Ok(ans) = crate::relation::canonicalize(&qa.answer) else { return vec![] };
            let first = match ans.direction {
                Some(_) => invert(&ans),
                None => RelationSpec::distance_only(ans.distance.expect("distance part").opposite()),
            };
            let orthogonal: Vec<String> = DirectionalRelation::ALL
                .iter()
                .filter(|d| ans.direction.is_none_or(|x| x.axis() != d.axis()))
                .map(|d| d.phrase().to_string())
                .collect();
            let cross: Vec<String> = if ans.direction.is_some() {
                DistanceRelation::ALL.iter().map(|r| r.phrase().to_string()).collect()
            } else {
                DirectionalRelation::ALL.iter().map(|d| d.phrase().to_string()).collect()
            };
            let rest = all_relation_specs().iter().map(|s| s.canonical_phrase()).collect();
            vec![vec![first.canonical_phrase()], shuffled(orthogonal), shuffled(cross), shuffled(rest)]
        }
        Question::WhichObject { .. } => {
            let others: Vec<String> = instance
                .skg
                .entities
                .iter()
                .filter(|e| !qa.entities.contains(&e.id))
                .map(|e| e.description.clone())
                .chain(absent.iter().map(|o| with_article(&o.display_name())))
                .collect();
            vec![shuffled(others)]
        }
    }
}

/// Builds a single-choice item whose options are checked against the
/// layout: the stated answer must hold and every distractor must not.
pub fn make_choice(
    qa: &QaRecord,
    instance: &SceneInstance,
    n_options: usize,
    seed: u64,
) -> Result<ChoiceQuestion, QaError> {
    if !(2..=4).contains(&n_options) {
        return Err(QaError::BadOptionCount);
    }
    let truth = layout_truth(instance);
    let template = qa.form.render();
    if !judge_answer(&truth, &template, &qa.answer).accepted {
        return Err(QaError::AnswerRejected(qa.answer.clone()));
    }
    let mut rng = seed::rng(seed);
    let groups = distractor_groups(qa, instance, &mut rng);
    let mut options = vec![qa.answer.clone()];
    let usable = |o: &String, taken: &[String]| {
        !taken.iter().any(|t| t.eq_ignore_ascii_case(o)) && !judge_answer(&truth, &template, o).accepted
    };
    for g in &groups {
        if options.len() == n_options {
            break;
        }
        if let Some(o) = g.iter().find(|o| usable(o, &options)) {
            options.push(o.clone());
        }
    }
    for o in groups.iter().flatten() {
        if options.len() == n_options {
            break;
        }
        if usable(o, &options) {
            options.push(o.clone());
        }
    }
    if options.len() < n_options {
        return Err(QaError::DistractorCollision { question: qa.question.clone(), wanted: n_options });
    }
    options.shuffle(&mut rng);
    let key = options.iter().position(|o| *o == qa.answer).expect("answer among options");
    Ok(ChoiceQuestion {
        id: qa.id.clone(),
        instance_id: qa.instance_id.clone(),
        image: qa.image.clone(),
        question: qa.question.clone(),
        options: OPTION_LABELS.iter().map(|l| l.to_string()).zip(options).collect(),
        answer_key: OPTION_LABELS[key].to_string(),
        category: qa.category,
        slice: qa.slice,
        entity_count: qa.entity_count,
    })
}

/// Sets each pending or kept record's verdict from the backend, given only
/// the image. An unreachable backend leaves records pending.
pub fn filter_qa(records: &mut [QaRecord], image: &Bitmap, backend: &dyn TextGenBackend) {
    let open: Vec<usize> = (0..records.len()).filter(|&i| records[i].verdict != FilterVerdict::Discarded).collect();
    let pairs: Vec<(&str, &str)> =
        open.iter().map(|&i| (records[i].question.as_str(), records[i].answer.as_str())).collect();
    let verdicts = backend.verify_qa_many(image, &pairs);
    for (i, v) in open.into_iter().zip(verdicts) {
        let r = &mut records[i];
        r.verdict = match v {
            Ok(v) if v.accepted => FilterVerdict::Kept,
            Ok(_) => FilterVerdict::Discarded,
            Err(BackendError::BackendUnavailable(e)) => {
                log::warn!("qa filter for {} pending: {e}", r.id);
                FilterVerdict::Pending
            }
            Err(e) => {
                log::warn!("qa filter for {} rejected: {e}", r.id);
                FilterVerdict::Discarded
            }
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{CatalogBackend, ImageGenBackend, ProceduralRenderer};
    use crate::images::render_request;
    use crate::layout::{build_instance, SolverConfig};
    use crate::relation::Canvas;
    use crate::skg::{new_skg, Scene, SceneSource, Triplet};

    fn balloons(rel: RelationSpec, negative: bool) -> SceneInstance {
        let s = Scene::new("birthday party", SceneSource::Catalog).unwrap();
        let b = CatalogObject::new(&s.id, "balloon");
        let color = |c: &str| [("color".to_string(), c.to_string())].into();
        let es = vec![
            Entity::new(&s.id, 0, b.clone(), "a blue balloon", color("blue")),
            Entity::new(&s.id, 1, b, "a yellow balloon", color("yellow")),
            Entity::new(&s.id, 2, CatalogObject::new(&s.id, "cake"), "a pink cake", color("pink")),
        ];
        let t = Triplet::new(&es[0].id, rel, &es[1].id);
        let g = new_skg(s.clone(), es, vec![t], 17).unwrap();
        let objs: Vec<CatalogObject> = ["balloon", "cake", "lamp", "gift"].iter().map(|l| CatalogObject::new(&s.id, l)).collect();
        let mut inst = build_instance(&g, &objs, &SolverConfig::default(), &Canvas::default(), 0.0, &CatalogBackend::bundled()).unwrap();
        if negative {
            inst.negative_object = Some(CatalogObject::new(&s.id, "lamp"));
        }
        inst
    }

    #[test]
    fn entity_questions() {
        let inst = balloons(RelationSpec::directional(DirectionalRelation::LeftOf), true);
        let qa = gen_entity_qa(&inst, "img.png");
        let find = |q: &str| qa.iter().find(|r| r.question == q).map(|r| r.answer.as_str());
        assert_eq!(find("Is there a lamp in the image?"), Some("No"));
        assert_eq!(find("Is there a blue balloon in the image?"), Some("Yes"));
        assert_eq!(find("How many balloons are in the image?"), Some("2"));
        assert_eq!(find("What color is the cake?"), Some("pink"));
        // two balloons with different colors make the color question ambiguous
        assert_eq!(find("What color is the balloon?"), None);
        let without = balloons(RelationSpec::directional(DirectionalRelation::LeftOf), false);
        assert!(gen_entity_qa(&without, "i").iter().all(|r| r.answer != "No"));
    }

    #[test]
    fn relation_questions_hold_on_layout() {
        let rel = RelationSpec::new(Some(DirectionalRelation::Above), Some(DistanceRelation::Near)).unwrap();
        for seed in 0..40 {
            let inst = balloons(rel.clone(), false);
            let truth = layout_truth(&inst);
            for r in gen_relation_qa(&inst, "i", seed) {
                assert_eq!(r.slice, Some(RelationClass::Both));
                assert_eq!(r.category, QaCategory::RelationBoth);
                assert!(judge_answer(&truth, &r.question, &r.answer).accepted, "{} / {}", r.question, r.answer);
            }
        }
    }

    #[test]
    fn verification_counterpart_inverts() {
        let inst = balloons(RelationSpec::directional(DirectionalRelation::LeftOf), false);
        let mut saw = false;
        for seed in 0..64 {
            let qa = gen_relation_qa(&inst, "i", seed);
            if let Some(no) = qa.iter().find(|r| r.answer == "No") {
                assert_eq!(no.question, "Is the blue balloon to the right of the yellow balloon?");
                assert!(qa.iter().any(|r| r.question == "Is the blue balloon to the left of the yellow balloon?" && r.answer == "Yes"));
                saw = true;
            }
        }
        assert!(saw);
    }

    #[test]
    fn choices_have_exactly_one_correct_option() {
        let inst = balloons(RelationSpec::directional(DirectionalRelation::LeftOf), true);
        let truth = layout_truth(&inst);
        let mut qa = gen_entity_qa(&inst, "i");
        qa.extend(gen_relation_qa(&inst, "i", 1));
        for (i, r) in qa.iter().enumerate() {
            let c = make_choice(r, &inst, 4, i as u64).unwrap();
            assert_eq!(c.options.len(), 4);
            let distinct: BTreeSet<&String> = c.options.values().collect();
            assert_eq!(distinct.len(), 4);
            let correct: Vec<&String> =
                c.options.iter().filter(|(_, o)| judge_answer(&truth, &r.question, o).accepted).map(|(k, _)| k).collect();
            assert_eq!(correct, vec![&c.answer_key], "{c:?}");
        }
    }

    #[test]
    fn count_options() {
        let inst = balloons(RelationSpec::directional(DirectionalRelation::LeftOf), false);
        let qa = gen_entity_qa(&inst, "i");
        let count = qa.iter().find(|r| r.answer == "2").unwrap();
        let c = make_choice(count, &inst, 4, 0).unwrap();
        let opts: BTreeSet<&str> = c.options.values().map(String::as_str).collect();
        assert_eq!(opts, BTreeSet::from(["1", "2", "3", "5"]));
    }

    #[test]
    fn relation_options_follow_the_recipe() {
        let inst = balloons(RelationSpec::directional(DirectionalRelation::LeftOf), false);
        let qa = (0..64)
            .flat_map(|s| gen_relation_qa(&inst, "i", s))
            .find(|r| matches!(r.form, Question::RelationOf { .. }))
            .unwrap();
        let c = make_choice(&qa, &inst, 4, 3).unwrap();
        let opts: Vec<&String> = c.options.values().collect();
        assert!(opts.iter().any(|o| *o == "to the right of"));
        assert_eq!(c.options[&c.answer_key], "to the left of");
    }

    #[test]
    fn filter_rejects_corrupted_answers() {
        let inst = balloons(RelationSpec::directional(DirectionalRelation::LeftOf), true);
        let img = ProceduralRenderer::default().render(&render_request(&inst), 0).unwrap();
        let cat = CatalogBackend::bundled();
        let mut qa = gen_entity_qa(&inst, "i");
        qa.extend(gen_relation_qa(&inst, "i", 5));
        filter_qa(&mut qa, &img, &cat);
        assert!(qa.iter().all(|r| r.verdict == FilterVerdict::Kept));
        let mut bad: Vec<QaRecord> = qa
            .iter()
            .cloned()
            .map(|mut r| {
                r.answer = match r.answer.as_str() {
                    "Yes" => "No".into(),
                    "No" => "Yes".into(),
                    "2" => "3".into(),
                    "to the left of" => "to the right of".into(),
                    other if other.starts_with("a ") => "a pink cake".into(),
                    _ => "purple".into(),
                };
                r
            })
            .collect();
        filter_qa(&mut bad, &img, &cat);
        assert!(bad.iter().all(|r| r.verdict == FilterVerdict::Discarded), "{bad:?}");
    }

    #[test]
    fn answer_keys_are_uniform() {
        let inst = balloons(RelationSpec::directional(DirectionalRelation::LeftOf), true);
        let qa = gen_entity_qa(&inst, "i");
        let mut counts = BTreeMap::new();
        let n = 4000;
        for i in 0..n {
            let c = make_choice(&qa[i % qa.len()], &inst, 4, i as u64).unwrap();
            *counts.entry(c.answer_key).or_insert(0usize) += 1;
        }
        for l in OPTION_LABELS {
            let f = counts[l] as f64 / n as f64;
            assert!((f - 0.25).abs() < 0.03, "{l}: {f}");
        }
    }

    #[test]
    fn no_geometry_leaks_into_questions() {
        let inst = balloons(RelationSpec::directional(DirectionalRelation::Below), true);
        let mut qa = gen_entity_qa(&inst, "i");
        qa.extend(gen_relation_qa(&inst, "i", 2));
        for r in qa {
            let q = r.question.to_lowercase();
            assert!(!q.contains("bounding box") && !q.contains("coordinate") && !q.contains('['));
            assert!(!q.chars().any(|c| c.is_ascii_digit()));
        }
    }
}
