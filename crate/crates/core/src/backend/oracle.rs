//! Exact judgements over procedural images, computed from recovered pixel
//! geometry.

use std::collections::BTreeSet;

use super::{GroundTruth, Verdict};
use crate::question::{parse_relation, pluralize, Question};
use crate::relation::{evaluate, BoundingBox};
use crate::skg::{strip_article, Entity, Triplet};

/// Whether the drawn image shows exactly the entities and satisfies every
/// triplet.
pub fn check_alignment(truth: &GroundTruth, entities: &[Entity], triplets: &[Triplet]) -> Verdict {
    let drawn: BTreeSet<&str> = truth.legend.entities.iter().map(|e| e.id.as_str()).collect();
    let wanted: BTreeSet<&str> = entities.iter().map(|e| e.id.as_str()).collect();
    if drawn != wanted {
        return Verdict::no("image shows a different entity set");
    }
    for e in entities {
        if truth.box_of(&e.id).is_none() {
            return Verdict::no(format!("{} is not visible", e.description));
        }
    }
    let canvas = &truth.legend.canvas;
    for t in triplets {
        let (Some(a), Some(b)) = (truth.box_of(&t.subject), truth.box_of(&t.object)) else {
            return Verdict::no(format!("triplet endpoint missing: {} / {}", t.subject, t.object));
        };
        if !evaluate(&t.relation, &a, &b, canvas) {
            let name = |id: &str| {
                entities.iter().find(|e| e.id == id).map_or(id.to_string(), |e| e.description.clone())
            };
            return Verdict::no(format!(
                "violated: {} {} {}",
                name(&t.subject),
                t.relation.canonical_phrase(),
                name(&t.object)
            ));
        }
    }
    Verdict::yes()
}

fn eq(a: &str, b: &str) -> bool {
    a.trim().eq_ignore_ascii_case(b.trim())
}

fn yes_no(answer: &str) -> Option<bool> {
    let a = answer.trim().trim_end_matches('.').to_ascii_lowercase();
    match a.as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

fn expect(cond: bool, stated: &str, truth: &str) -> Verdict {
    if cond {
        Verdict::yes()
    } else {
        Verdict::no(format!("answer {stated:?} disagrees with the image ({truth})"))
    }
}

/// Judges a templated question/answer pair from the image alone.
pub fn judge_answer(truth: &GroundTruth, question: &str, answer: &str) -> Verdict {
    let entries = &truth.legend.entities;
    let bare: Vec<&str> = entries.iter().map(|e| strip_article(&e.description)).collect();
    let mut names: Vec<&str> = bare.clone();
    names.extend(entries.iter().map(|e| e.label.as_str()));
    // longest first so "blue chair" wins over "chair"
    names.sort_by_key(|n| std::cmp::Reverse(n.len()));
    names.dedup();
    let Some(q) = Question::parse(question, &names) else {
        return Verdict::no("question does not follow a known template");
    };
    let canvas = &truth.legend.canvas;
    // name → unique visible box
    let locate = |name: &str| -> Option<BoundingBox> {
        let mut hits: Vec<usize> = (0..entries.len()).filter(|&i| eq(bare[i], name)).collect();
        if hits.is_empty() {
            hits = (0..entries.len()).filter(|&i| eq(&entries[i].label, name)).collect();
        }
        match hits.as_slice() {
            [i] => truth.boxes[*i],
            _ => None,
        }
    };
    match q {
        Question::Exists { phrase } => {
            let present = (0..entries.len()).any(|i| {
                truth.boxes[i].is_some() && (eq(bare[i], &phrase) || eq(&entries[i].label, &phrase))
            });
            match yes_no(answer) {
                Some(stated) => expect(stated == present, answer, if present { "present" } else { "absent" }),
                None => Verdict::no("expected a yes/no answer"),
            }
        }
        Question::Count { plural } => {
            let n = (0..entries.len())
                .filter(|&i| truth.boxes[i].is_some() && eq(&pluralize(&entries[i].label), &plural))
                .count();
            expect(answer.trim().parse::<usize>() == Ok(n), answer, &n.to_string())
        }
        Question::Color { label } => {
            let hits: Vec<_> = entries.iter().filter(|e| eq(&e.label, &label)).collect();
            match hits.as_slice() {
                [e] => match &e.color {
                    Some(c) => expect(eq(c, answer.trim_end_matches('.')), answer, c),
                    None => Verdict::no("object has no color"),
                },
                _ => Verdict::no("color question is ambiguous"),
            }
        }
        Question::RelationOf { subject, object } => {
            let (Some(a), Some(b)) = (locate(&subject), locate(&object)) else {
                return Verdict::no("objects not uniquely visible");
            };
            match parse_relation(answer.trim().trim_end_matches('.')) {
                Some(rel) => expect(evaluate(&rel, &a, &b, canvas), answer, "relation does not hold"),
                None => Verdict::no("answer is not a spatial relation"),
            }
        }
        Question::WhichObject { relation, object } => {
            let (Some(rel), Some(b)) = (parse_relation(&relation), locate(&object)) else {
                return Verdict::no("reference object not uniquely visible");
            };
            let satisfiers: Vec<usize> = (0..entries.len())
                .filter(|&i| !eq(bare[i], &object) && !eq(&entries[i].label, &object))
                .filter(|&i| truth.boxes[i].is_some_and(|a| evaluate(&rel, &a, &b, canvas)))
                .collect();
            let stated = strip_article(answer.trim().trim_end_matches('.'));
            match satisfiers.as_slice() {
                [i] => expect(eq(bare[*i], stated), answer, bare[*i]),
                [] => Verdict::no("no object satisfies the relation"),
                _ => Verdict::no("several objects satisfy the relation"),
            }
        }
        Question::Verify { subject, relation, object } => {
            let (Some(rel), Some(a), Some(b)) =
                (parse_relation(&relation), locate(&subject), locate(&object))
            else {
                return Verdict::no("objects not uniquely visible");
            };
            let holds = evaluate(&rel, &a, &b, canvas);
            match yes_no(answer) {
                Some(stated) => expect(stated == holds, answer, if holds { "holds" } else { "does not hold" }),
                None => Verdict::no("expected a yes/no answer"),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ImageGenBackend, ProceduralRenderer, RenderItem, RenderRequest};
    use crate::relation::{Canvas, DirectionalRelation, RelationSpec};
    use crate::skg::CatalogObject;
    use std::collections::BTreeMap;

    fn ent(i: usize, label: &str, color: &str) -> Entity {
        Entity::new(
            "scene-t",
            i,
            CatalogObject::new("scene-t", label),
            &format!("a {color} {label}"),
            BTreeMap::from([("color".to_string(), color.to_string())]),
        )
    }

    fn fixture() -> (Vec<Entity>, GroundTruth) {
        let es = vec![ent(0, "balloon", "blue"), ent(1, "balloon", "yellow"), ent(2, "chair", "red")];
        let boxes = [
            BoundingBox::new(10, 100, 50, 50),
            BoundingBox::new(300, 100, 50, 50),
            BoundingBox::new(150, 400, 80, 80),
        ];
        let req = RenderRequest {
            scene_name: "party".into(),
            caption: String::new(),
            canvas: Canvas::default(),
            items: es.iter().zip(boxes).map(|(e, b)| RenderItem { entity: e.clone(), bbox: b }).collect(),
        };
        let img = ProceduralRenderer::default().render(&req, 0).unwrap();
        (es, GroundTruth::from_bitmap(&img).unwrap())
    }

    #[test]
    fn alignment() {
        let (es, gt) = fixture();
        let ok = Triplet::new(&es[0].id, RelationSpec::directional(DirectionalRelation::LeftOf), &es[1].id);
        assert!(check_alignment(&gt, &es, &[ok]).accepted);
        let bad = Triplet::new(&es[0].id, RelationSpec::directional(DirectionalRelation::RightOf), &es[1].id);
        let v = check_alignment(&gt, &es, &[bad]);
        assert!(!v.accepted);
        assert!(v.reason.unwrap().contains("a blue balloon to the right of a yellow balloon"));
        assert!(!check_alignment(&gt, &es[..2], &[]).accepted);
    }

    #[test]
    fn answers() {
        let (_, gt) = fixture();
        let cases = [
            ("Is there a blue balloon in the image?", "Yes", true),
            ("Is there a lamp in the image?", "No", true),
            ("Is there a lamp in the image?", "Yes", false),
            ("Is there a lamp in the image?", "Cannot be determined", false),
            ("How many balloons are in the image?", "2", true),
            ("How many balloons are in the image?", "3", false),
            ("What color is the chair?", "red", true),
            ("What color is the chair?", "blue", false),
            ("What color is the balloon?", "blue", false),
            ("Is the blue balloon to the left of the yellow balloon?", "Yes", true),
            ("Is the blue balloon to the right of the yellow balloon?", "No", true),
            ("Is the blue balloon to the right of the yellow balloon?", "Yes", false),
            ("What is the spatial relation of the blue balloon to the yellow balloon?", "to the left of", true),
            ("What is the spatial relation of the blue balloon to the yellow balloon?", "to the right of", false),
            ("What is the spatial relation of the red chair to the blue balloon?", "below", true),
            ("Which object is to the right of the blue balloon?", "a yellow balloon", false),
            ("Which object is above the red chair?", "a blue balloon", false),
            ("Which object is to the left of the yellow balloon?", "a blue balloon", false),
            ("Which object is to the right of the red chair?", "a yellow balloon", true),
            ("Tell me a story", "Yes", false),
        ];
        for (q, a, want) in cases {
            assert_eq!(judge_answer(&gt, q, a).accepted, want, "{q} / {a}");
        }
    }
}
