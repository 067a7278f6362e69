use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{BoundaryPolicy, EntityShiftRule, LineAnnotation, Segment, SegmentationError};
use crate::corpus::{EmotionLabel, Poem};

/// Whether a new segment would start at `cur`, given the line before it.
pub fn is_shift(prev: &LineAnnotation, cur: &LineAnnotation, policy: &BoundaryPolicy) -> bool {
    if prev.emotion != cur.emotion {
        return true;
    }
    if prev.entities.is_empty() && cur.entities.is_empty() {
        return false;
    }
    match policy.entity_shift_rule {
        EntityShiftRule::SetInequality => prev.categories() != cur.categories(),
        EntityShiftRule::NewEntityIntroduced => {
            let seen: BTreeSet<&str> = prev.entities.iter().map(|e| e.surface.as_str()).collect();
            cur.entities.iter().any(|e| !seen.contains(e.surface.as_str()))
        }
    }
}

/// Every shift position, before any length constraint is applied.
pub fn candidate_boundaries(annotations: &[LineAnnotation], policy: &BoundaryPolicy) -> Vec<usize> {
    (1..annotations.len())
        .filter(|&i| is_shift(&annotations[i - 1], &annotations[i], policy))
        .collect()
}

/// Shift positions after suppressing any that would leave a segment shorter
/// than `min_segment_lines`. Scanning left to right, a candidate is kept only
/// if the segment it closes is long enough; a short trailing segment is
/// folded back by dropping the last kept boundary.
pub fn detect_boundaries(annotations: &[LineAnnotation], policy: &BoundaryPolicy) -> Vec<usize> {
    let min = policy.min_segment_lines.max(1);
    let n = annotations.len();
    let mut kept = Vec::new();
    let mut start = 0;
    for b in candidate_boundaries(annotations, policy) {
        if b - start >= min {
            kept.push(b);
            start = b;
        }
    }
    while n - start < min {
        match kept.pop() {
            Some(_) => start = kept.last().copied().unwrap_or(0),
            None => break,
        }
    }
    kept
}

/// Modal emotion, then highest summed confidence, then the earliest line's emotion.
pub fn dominant_emotion(lines: &[LineAnnotation]) -> EmotionLabel {
    let mut tally: Vec<(EmotionLabel, usize, f64, usize)> = Vec::new();
    for (pos, a) in lines.iter().enumerate() {
        match tally.iter_mut().find(|t| t.0 == a.emotion) {
            Some(t) => {
                t.1 += 1;
                t.2 += a.emotion_confidence;
            }
            None => tally.push((a.emotion, 1, a.emotion_confidence, pos)),
        }
    }
    tally
        .into_iter()
        .max_by(|a, b| {
            a.1.cmp(&b.1)
                .then(a.2.total_cmp(&b.2))
                .then(b.3.cmp(&a.3))
        })
        .map(|t| t.0)
        .unwrap_or(EmotionLabel::Neutral)
}

pub fn segments_from_boundaries(poem_id: &str, annotations: &[LineAnnotation], boundaries: &[usize]) -> Vec<Segment> {
    let n = annotations.len();
    let mut edges = Vec::with_capacity(boundaries.len() + 2);
    edges.push(0);
    edges.extend(boundaries.iter().copied().filter(|&b| b > 0 && b < n));
    edges.push(n);
    edges
        .windows(2)
        .enumerate()
        .map(|(index, w)| {
            let members = &annotations[w[0]..w[1]];
            Segment {
                poem_id: poem_id.to_string(),
                index,
                start: w[0],
                end: w[1],
                dominant_emotion: dominant_emotion(members),
                entities: members.iter().flat_map(|a| a.entities.iter().cloned()).collect(),
            }
        })
        .collect()
}

pub fn segment_poem(
    poem: &Poem,
    annotations: &[LineAnnotation],
    policy: &BoundaryPolicy,
) -> Result<Vec<Segment>, SegmentationError> {
    policy.validate()?;
    if annotations.len() != poem.lines.len() {
        return Err(SegmentationError::Annotations(format!(
            "{} annotations for {} lines",
            annotations.len(),
            poem.lines.len()
        )));
    }
    if let Some((i, a)) = annotations.iter().enumerate().find(|(i, a)| a.line_index != *i) {
        return Err(SegmentationError::Annotations(format!(
            "annotation at position {i} has line_index {}",
            a.line_index
        )));
    }
    let boundaries = detect_boundaries(annotations, policy);
    Ok(segments_from_boundaries(&poem.id, annotations, &boundaries))
}

/// Segments taken from the poem's gold annotation, if any. Entities are
/// filled from `annotations` when given.
pub fn segments_from_gold(poem: &Poem, annotations: Option<&[LineAnnotation]>) -> Option<Vec<Segment>> {
    let gold = poem.gold_segments.as_ref()?;
    Some(
        gold.iter()
            .enumerate()
            .map(|(index, g)| Segment {
                poem_id: poem.id.clone(),
                index,
                start: g.start,
                end: g.end,
                dominant_emotion: g.emotion,
                entities: annotations
                    .map(|a| {
                        a.iter()
                            .filter(|l| (g.start..g.end).contains(&l.line_index))
                            .flat_map(|l| l.entities.iter().cloned())
                            .collect()
                    })
                    .unwrap_or_default(),
            })
            .collect(),
    )
}

pub fn gold_boundaries(poem: &Poem) -> Option<Vec<usize>> {
    let gold = poem.gold_segments.as_ref()?;
    Some(gold.iter().skip(1).map(|g| g.start).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryAgreement {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub exact: bool,
}

/// Exact-position agreement between two boundary lists. Empty against empty
/// counts as perfect agreement.
pub fn boundary_agreement(reference: &[usize], predicted: &[usize]) -> BoundaryAgreement {
    let r: BTreeSet<usize> = reference.iter().copied().collect();
    let p: BTreeSet<usize> = predicted.iter().copied().collect();
    let hits = r.intersection(&p).count() as f64;
    let precision = if p.is_empty() { if r.is_empty() { 1.0 } else { 0.0 } } else { hits / p.len() as f64 };
    let recall = if r.is_empty() { if p.is_empty() { 1.0 } else { 0.0 } } else { hits / r.len() as f64 };
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    BoundaryAgreement { precision, recall, f1, exact: r == p }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmentation::{Entity, EntityLabel};
    use proptest::prelude::*;
    use EmotionLabel::*;

    fn ann(emotions: &[EmotionLabel]) -> Vec<LineAnnotation> {
        emotions
            .iter()
            .enumerate()
            .map(|(i, &e)| LineAnnotation { line_index: i, entities: BTreeSet::new(), emotion: e, emotion_confidence: 1.0 })
            .collect()
    }

    fn with_entities(mut a: Vec<LineAnnotation>, ents: &[&[(&str, EntityLabel)]]) -> Vec<LineAnnotation> {
        for (l, e) in a.iter_mut().zip(ents) {
            l.entities = e.iter().map(|(s, lab)| Entity::new(*s, *lab)).collect();
        }
        a
    }

    fn p1() -> BoundaryPolicy {
        BoundaryPolicy { min_segment_lines: 1, ..Default::default() }
    }

    #[test]
    fn constant_lines_have_no_boundaries() {
        assert!(detect_boundaries(&ann(&[Joy; 5]), &BoundaryPolicy::default()).is_empty());
    }

    #[test]
    fn emotion_change_starts_segment() {
        assert_eq!(detect_boundaries(&ann(&[Joy, Joy, Sadness, Sadness]), &BoundaryPolicy::default()), vec![2]);
    }

    #[test]
    fn alternating_short_runs_collapse() {
        assert_eq!(detect_boundaries(&ann(&[Joy, Sadness, Joy]), &BoundaryPolicy::default()), Vec::<usize>::new());
        assert_eq!(detect_boundaries(&ann(&[Joy, Sadness, Joy]), &p1()), vec![1, 2]);
    }

    #[test]
    fn category_change_is_a_shift_but_paraphrase_is_not() {
        let a = with_entities(
            ann(&[Neutral; 4]),
            &[&[("Ozymandias", EntityLabel::Person)], &[("the king", EntityLabel::Person)], &[], &[("Egypt", EntityLabel::Location)]],
        );
        assert_eq!(candidate_boundaries(&a, &p1()), vec![2, 3]);
        let newer = BoundaryPolicy { entity_shift_rule: EntityShiftRule::NewEntityIntroduced, ..p1() };
        assert_eq!(candidate_boundaries(&a, &newer), vec![1, 3]);
    }

    #[test]
    fn dominant_tie_uses_confidence_then_order() {
        let mut a = ann(&[Joy, Sadness]);
        a[0].emotion_confidence = 0.9;
        a[1].emotion_confidence = 0.4;
        assert_eq!(dominant_emotion(&a), Joy);
        a[1].emotion_confidence = 0.95;
        assert_eq!(dominant_emotion(&a), Sadness);
        a[1].emotion_confidence = 0.9;
        assert_eq!(dominant_emotion(&a), Joy);
    }

    #[test]
    fn segments_carry_dominants() {
        let a = ann(&[Joy, Joy, Sadness]);
        let s = segments_from_boundaries("p", &a, &detect_boundaries(&a, &p1()));
        let d: Vec<_> = s.iter().map(|s| (s.start, s.end, s.dominant_emotion)).collect();
        assert_eq!(d, vec![(0, 2, Joy), (2, 3, Sadness)]);
        assert_eq!(s[1].id(), "p#1");
    }

    #[test]
    fn agreement_scores() {
        let a = boundary_agreement(&[2, 5], &[2, 4]);
        assert_eq!((a.precision, a.recall, a.exact), (0.5, 0.5, false));
        assert!(boundary_agreement(&[], &[]).exact);
        assert_eq!(boundary_agreement(&[3], &[]).f1, 0.0);
    }

    fn arb_annotations() -> impl Strategy<Value = Vec<LineAnnotation>> {
        let line = (0usize..3, prop::collection::btree_set(0usize..4, 0..3), 0.0f64..=1.0);
        prop::collection::vec(line, 1..40).prop_map(|v| {
            let labels = [EntityLabel::Person, EntityLabel::Location, EntityLabel::Organization, EntityLabel::Other];
            v.into_iter()
                .enumerate()
                .map(|(i, (e, ents, c))| LineAnnotation {
                    line_index: i,
                    entities: ents.into_iter().map(|k| Entity::new(format!("e{k}"), labels[k])).collect(),
                    emotion: [Joy, Sadness, Fear][e],
                    emotion_confidence: c,
                })
                .collect()
        })
    }

    fn arb_policy() -> impl Strategy<Value = BoundaryPolicy> {
        (1usize..6, any::<bool>()).prop_map(|(m, r)| BoundaryPolicy {
            min_segment_lines: m,
            entity_shift_rule: if r { EntityShiftRule::SetInequality } else { EntityShiftRule::NewEntityIntroduced },
            ..Default::default()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn segments_tile_the_poem(a in arb_annotations(), policy in arb_policy()) {
            let s = segments_from_boundaries("p", &a, &detect_boundaries(&a, &policy));
            let mut next = 0;
            for seg in &s {
                prop_assert_eq!(seg.start, next);
                prop_assert!(seg.end > seg.start);
                next = seg.end;
            }
            prop_assert_eq!(next, a.len());
            if a.len() >= policy.min_segment_lines {
                prop_assert!(s.iter().all(|seg| seg.len() >= policy.min_segment_lines));
            } else {
                prop_assert_eq!(s.len(), 1);
            }
        }

        #[test]
        fn kept_boundaries_are_candidates(a in arb_annotations(), policy in arb_policy()) {
            let cands = candidate_boundaries(&a, &policy);
            prop_assert!(detect_boundaries(&a, &policy).iter().all(|b| cands.contains(b)));
        }

        #[test]
        fn raising_min_never_adds_segments(a in arb_annotations(), policy in arb_policy()) {
            let looser = detect_boundaries(&a, &policy).len();
            let stricter = detect_boundaries(&a, &BoundaryPolicy { min_segment_lines: policy.min_segment_lines + 1, ..policy }).len();
            prop_assert!(stricter <= looser);
        }

        #[test]
        fn unsuppressed_segments_have_no_interior_shift(a in arb_annotations(), policy in arb_policy()) {
            let s = segments_from_boundaries("p", &a, &candidate_boundaries(&a, &policy));
            for seg in s {
                for i in seg.start + 1..seg.end {
                    prop_assert!(!is_shift(&a[i - 1], &a[i], &policy));
                }
            }
        }

        #[test]
        fn constant_emotion_without_entities_is_one_segment(n in 1usize..50, m in 1usize..5) {
            let a = ann(&vec![Fear; n]);
            let policy = BoundaryPolicy { min_segment_lines: m, ..Default::default() };
            prop_assert_eq!(segments_from_boundaries("p", &a, &detect_boundaries(&a, &policy)).len(), 1);
        }

        #[test]
        fn detection_is_deterministic(a in arb_annotations(), policy in arb_policy()) {
            prop_assert_eq!(detect_boundaries(&a, &policy), detect_boundaries(&a.clone(), &policy));
        }
    }
}
