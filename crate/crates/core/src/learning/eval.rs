use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::concepts::{ConceptKind, Registry};
use crate::executor::{predict, ExecError, Executor, Mode};
use crate::par;
use crate::worldgen::domain::Attribute;
use crate::worldgen::{Dataset, SceneRecord};

use super::TrainError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub correct: usize,
    pub total: usize,
}

impl Tally {
    pub fn add(&mut self, hit: bool) {
        self.total += 1;
        self.correct += usize::from(hit);
    }

    pub fn merge(&mut self, other: Tally) {
        self.total += other.total;
        self.correct += other.correct;
    }

    /// Fraction correct; 0 for an empty tally.
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: Tally,
    /// Keyed by template name.
    pub per_type: BTreeMap<String, Tally>,
    /// Object-score thresholding at 0.5 against ground truth, per concept.
    pub per_concept: BTreeMap<String, Tally>,
}

impl EvalReport {
    pub fn accuracy(&self) -> f64 {
        self.overall.accuracy()
    }

    /// Pooled accuracy over all (object, concept) decisions.
    pub fn concept_accuracy(&self) -> f64 {
        let mut all = Tally::default();
        self.per_concept.values().for_each(|t| all.merge(*t));
        all.accuracy()
    }

    /// Accuracy of the worst concept.
    pub fn min_concept_accuracy(&self) -> f64 {
        self.per_concept.values().map(Tally::accuracy).fold(1.0, f64::min)
    }
}

fn answer_hits(registry: &Registry, data: &Dataset) -> Vec<Result<bool, ExecError>> {
    let idx: Vec<usize> = (0..data.len()).collect();
    par::map(&idx, |&i| {
        let q = &data.questions[i];
        predict(registry, &q.program, &data.scenes[i], Mode::Soft).map(|a| a == q.answer)
    })
}

/// Argmax answers of the soft executor scored against gold, plus per-concept accuracy.
pub fn evaluate(registry: &Registry, data: &Dataset) -> Result<EvalReport, TrainError> {
    let mut report = EvalReport::default();
    for (i, hit) in answer_hits(registry, data).into_iter().enumerate() {
        let hit = hit?;
        report.overall.add(hit);
        report.per_type.entry(data.questions[i].template.name().to_string()).or_default().add(hit);
    }
    report.per_concept = concept_accuracy(registry, &data.scenes)?;
    Ok(report)
}

/// Answer accuracy alone, skipping the per-concept pass.
pub fn answer_accuracy(registry: &Registry, data: &Dataset) -> Result<Tally, TrainError> {
    let mut t = Tally::default();
    for hit in answer_hits(registry, data) {
        t.add(hit?);
    }
    Ok(t)
}

/// For every object-attribute concept with ground truth in the world,
/// thresholds its object score at 0.5 on every object in `scenes`.
pub fn concept_accuracy(registry: &Registry, scenes: &[SceneRecord]) -> Result<BTreeMap<String, Tally>, TrainError> {
    let concepts: Vec<(crate::concepts::ConceptId, String)> = registry
        .concepts()
        .iter()
        .enumerate()
        .filter(|(_, c)| matches!(c.kind, ConceptKind::ObjectAttribute(_)) && Attribute::of_value(&c.name).is_some())
        .map(|(i, c)| (crate::concepts::ConceptId(i), c.name.clone()))
        .collect();
    let per_scene = par::map(scenes, |scene| -> Result<Vec<Tally>, TrainError> {
        let mut tallies = vec![Tally::default(); concepts.len()];
        let mut scorer = registry.score_context();
        let mut ex = Executor::new(&mut scorer, scene, Mode::Soft)?;
        for (oi, o) in scene.objects.iter().enumerate() {
            for (k, (id, name)) in concepts.iter().enumerate() {
                let s = ex.object_score(oi, *id)?;
                tallies[k].add((ex.scorer.tape.scalar(s) >= 0.5) == o.has(name));
            }
        }
        Ok(tallies)
    });
    let mut out: BTreeMap<String, Tally> = concepts.iter().map(|(_, n)| (n.clone(), Tally::default())).collect();
    for tallies in per_scene {
        for ((_, name), t) in concepts.iter().zip(tallies?) {
            out.get_mut(name).expect("initialized").merge(t);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concepts::{FeatureSpec, ScoringConfig};
    use crate::worldgen::{build_dataset, DatasetSpec};

    #[test]
    fn empty_split_is_empty_report() {
        let reg = Registry::standard(ScoringConfig { dim: 8, ..Default::default() }, 0);
        let r = evaluate(&reg, &Dataset::default()).unwrap();
        assert_eq!(r.overall, Tally::default());
        assert_eq!(r.accuracy(), 0.0);
        assert!(r.per_concept.values().all(|t| t.total == 0));
    }

    #[test]
    fn tallies_cover_every_example() {
        let reg = Registry::standard(ScoringConfig { dim: 8, ..Default::default() }, 0);
        let d = build_dataset(&DatasetSpec::curriculum(0, 30, FeatureSpec::default())).unwrap();
        let r = evaluate(&reg, &d).unwrap();
        assert_eq!(r.overall.total, 30);
        assert_eq!(r.per_type.values().map(|t| t.total).sum::<usize>(), 30);
        let objects: usize = d.scenes.iter().map(|s| s.len()).sum();
        assert_eq!(r.per_concept["red"].total, objects);
        assert!(!r.per_concept.contains_key("teal"));
    }
}
