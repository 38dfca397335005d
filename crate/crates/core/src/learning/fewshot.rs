use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::concepts::{AttributeId, FeatureSpec, KindRequest, LexTarget, ParamKey, Registry, TrainableSelector};
use crate::dsl::{Program, ProgramNode};
use crate::executor::{answer_loss, Executor, Mode};
use crate::worldgen::domain::Attribute;
use crate::worldgen::{
    derive_seed, gen_scene, oracle_execute, parse_question, render_question, synth_features, Answer, Palette,
    SceneRecord,
};

use super::optim::Optimizer;
use super::{OptimizerKind, TrainError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FewShotConfig {
    pub learning_rate: f64,
    pub steps: usize,
    /// Weight of the term that keeps the namespace query distribution of
    /// confidently explained example objects where the old registry put it.
    pub distill_weight: f64,
    pub seed: u64,
}

impl Default for FewShotConfig {
    fn default() -> Self {
        Self { learning_rate: 0.05, steps: 200, distill_weight: 1.0, seed: 0 }
    }
}

/// A scene with a question that mentions the new word.
#[derive(Clone, Debug, PartialEq)]
pub struct FewShotExample {
    pub scene: SceneRecord,
    pub question: String,
    pub answer: Answer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FewShotReport {
    pub concept: String,
    pub namespace: String,
    pub examples: usize,
    pub steps: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
}

const SCENE_OBJECTS: usize = 6;
const SCENE_TRIES: u64 = 64;

/// `k` counting questions about `word`, each on a fresh full-palette scene
/// that holds at least one object with `word` and one without.
pub fn fewshot_examples(
    seed: u64,
    word: &str,
    k: usize,
    features: &FeatureSpec,
) -> Result<Vec<FewShotExample>, TrainError> {
    let attr = Attribute::of_value(word).ok_or_else(|| TrainError::Config(format!("`{word}` is not a world value")))?;
    let program = Program::new(ProgramNode::count(ProgramNode::filter(ProgramNode::Scene, word)));
    let question = render_question(&program)?;
    let mut out = Vec::with_capacity(k);
    for i in 0..k as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xFE5, i));
        let found = (0..SCENE_TRIES).find_map(|_| {
            let mut scene = gen_scene(rng.random(), SCENE_OBJECTS, &Palette::full()).ok()?;
            let hits = scene.objects.iter().filter(|o| o.value(attr) == word).count();
            if hits == 0 || hits == scene.len() {
                return None;
            }
            scene.id = i;
            synth_features(&mut scene, features);
            Some(scene)
        });
        let scene = found.ok_or_else(|| TrainError::Config(format!("could not place `{word}` in a scene")))?;
        let answer = oracle_execute(&program, &scene).ok_or(TrainError::NoExamples)?;
        out.push(FewShotExample { scene, question: question.clone(), answer });
    }
    Ok(out)
}

/// `n` full-palette scenes of `SCENE_OBJECTS` objects for held-out concept
/// classification, disjoint in seed stream from [`fewshot_examples`].
pub fn probe_scenes(seed: u64, n: usize, features: &FeatureSpec) -> Result<Vec<SceneRecord>, TrainError> {
    (0..n as u64)
        .map(|i| {
            let mut scene = gen_scene(derive_seed(seed, 0x9B0BE, i), SCENE_OBJECTS, &Palette::full())?;
            scene.id = i;
            synth_features(&mut scene, features);
            Ok(scene)
        })
        .collect()
}

/// Adds `word` to `namespace` and fits only its embedding to `examples`.
///
/// Every pre-existing array is frozen first, so the returned registry agrees
/// bit for bit with the input on everything but the new concept. Questions
/// are parsed after the word is bound.
pub fn fewshot_learn_concept(
    registry: &Registry,
    word: &str,
    namespace: &str,
    examples: &[FewShotExample],
    config: &FewShotConfig,
) -> Result<(Registry, FewShotReport), TrainError> {
    if registry.lexicon.contains(word) || registry.concept_id(word).is_ok() {
        return Err(TrainError::AlreadyBound(word.into()));
    }
    if examples.is_empty() {
        return Err(TrainError::NoExamples);
    }
    if config.learning_rate.is_nan() || config.learning_rate <= 0.0 || config.steps == 0 {
        return Err(TrainError::Config("few-shot needs a positive learning rate and step count".into()));
    }
    let mut reg = registry.clone();
    reg.set_trainable(&TrainableSelector::All, false)?;
    let id = reg.register_concept(word, KindRequest::ObjectAttribute, Some(namespace), config.seed)?;
    reg.lexicon.bind(word, LexTarget::Concept(word.into()));
    let programs = examples.iter().map(|e| parse_question(&e.question, &reg.lexicon)).collect::<Result<Vec<_>, _>>()?;
    let key = ParamKey::Embedding(id);
    let old = old_beliefs(registry, namespace, examples)?;
    reg.param_mut(key).value = prototype(&old);
    let ns = reg.attribute_id(namespace)?;
    let (initial_loss, final_loss) = fit_embedding(&mut reg, key, ns, examples, &programs, &old, config)?;
    let report = FewShotReport {
        concept: word.into(),
        namespace: namespace.into(),
        examples: examples.len(),
        steps: config.steps,
        initial_loss,
        final_loss,
    };
    Ok((reg, report))
}

/// What the registry believed about one example object before the new concept.
struct OldBelief {
    /// Largest membership score over the namespace's existing members.
    explained: f64,
    /// Query distribution over the existing members.
    query: Vec<f64>,
    /// Unit projected feature.
    direction: Vec<f64>,
}

fn old_beliefs(
    registry: &Registry,
    namespace: &str,
    examples: &[FewShotExample],
) -> Result<Vec<Vec<OldBelief>>, TrainError> {
    let ns = registry.attribute_id(namespace)?;
    let members = registry.namespace(ns).members.clone();
    examples
        .iter()
        .map(|e| {
            let mut scorer = registry.score_context();
            let mut ex = Executor::new(&mut scorer, &e.scene, Mode::Soft)?;
            (0..e.scene.len())
                .map(|i| {
                    let mut explained: f64 = 0.0;
                    for &m in &members {
                        let p = ex.object_score(i, m)?;
                        explained = explained.max(ex.scorer.tape.scalar(p));
                    }
                    let q = ex.query_distribution(i, ns)?;
                    let query = ex.scorer.tape.value(q).to_vec();
                    let h = ex.scorer.encode_object(&e.scene.object_features[i])?;
                    let z = ex.scorer.project(h, ns)?;
                    let v = ex.scorer.tape.value(z);
                    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                    Ok(OldBelief { explained, query, direction: v.iter().map(|x| x / norm).collect() })
                })
                .collect()
        })
        .collect()
}

/// Starting embedding: the mean projected direction of the example objects,
/// each weighted by how poorly the existing members explain it.
fn prototype(old: &[Vec<OldBelief>]) -> Vec<f64> {
    let dim = old.iter().flatten().next().map_or(0, |b| b.direction.len());
    let mut proto = vec![0.0; dim];
    for b in old.iter().flatten() {
        proto.iter_mut().zip(&b.direction).for_each(|(p, x)| *p += (1.0 - b.explained) * x);
    }
    proto
}

/// Adam on the embedding at `key` alone; returns the first and last mean loss.
///
/// The objective per example is its answer loss plus `distill_weight` times
/// the mean cross-entropy from the old query distribution to the new one over
/// objects an existing member explains (score at least 0.5).
fn fit_embedding(
    reg: &mut Registry,
    key: ParamKey,
    ns: AttributeId,
    examples: &[FewShotExample],
    programs: &[Program],
    old: &[Vec<OldBelief>],
    config: &FewShotConfig,
) -> Result<(f64, f64), TrainError> {
    let mut opt = Optimizer::new(OptimizerKind::default(), config.learning_rate);
    let mut initial_loss = f64::NAN;
    let mut final_loss = f64::NAN;
    for step in 0..=config.steps {
        let mut loss_sum = 0.0;
        let mut grad = vec![0.0; reg.config.dim];
        for ((e, p), beliefs) in examples.iter().zip(programs).zip(old) {
            let mut scorer = reg.score_context();
            let mut ex = Executor::new(&mut scorer, &e.scene, Mode::Soft)?;
            let dist = ex.run(p)?;
            let mut loss = answer_loss(ex.scorer, &dist, &e.answer)?;
            let confident: Vec<usize> = (0..beliefs.len()).filter(|&i| beliefs[i].explained >= 0.5).collect();
            if config.distill_weight > 0.0 && !confident.is_empty() {
                let w = config.distill_weight / confident.len() as f64;
                for &i in &confident {
                    let q = ex.query_distribution(i, ns)?;
                    for (c, &target) in beliefs[i].query.iter().enumerate() {
                        let pc = ex.scorer.tape.index(q, c)?;
                        let lc = ex.scorer.tape.log(pc)?;
                        let term = ex.scorer.tape.affine(lc, -w * target, 0.0)?;
                        loss = ex.scorer.tape.add(loss, term)?;
                    }
                }
            }
            loss_sum += scorer.tape.scalar(loss);
            for (k, g) in scorer.gradients(loss)? {
                if k == key {
                    grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b / examples.len() as f64);
                }
            }
        }
        let mean = loss_sum / examples.len() as f64;
        if step == 0 {
            initial_loss = mean;
        }
        final_loss = mean;
        if !mean.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::NonFinite { stage: 0, epoch: step, batch: 0, scene: 0, detail: "few-shot".into() });
        }
        if step == config.steps {
            break;
        }
        opt.begin_step();
        opt.update(key, &mut reg.param_mut(key).value, &grad);
    }
    Ok((initial_loss, final_loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concepts::ScoringConfig;
    use crate::worldgen::NOVEL_COLOR;

    fn reg() -> Registry {
        Registry::standard(ScoringConfig { dim: 8, ..Default::default() }, 0)
    }

    #[test]
    fn examples_mention_the_word() {
        let ex = fewshot_examples(1, NOVEL_COLOR, 5, &FeatureSpec::default()).unwrap();
        assert_eq!(ex.len(), 5);
        for e in &ex {
            assert!(e.question.contains(NOVEL_COLOR));
            assert!(matches!(e.answer, Answer::Count(n) if (1..SCENE_OBJECTS).contains(&n)));
        }
        assert_eq!(ex, fewshot_examples(1, NOVEL_COLOR, 5, &FeatureSpec::default()).unwrap());
    }

    #[test]
    fn old_parameters_are_bit_identical() {
        let base = reg();
        let ex = fewshot_examples(2, NOVEL_COLOR, 5, &FeatureSpec::default()).unwrap();
        let cfg = FewShotConfig { steps: 20, ..Default::default() };
        let (new, report) = fewshot_learn_concept(&base, NOVEL_COLOR, "color", &ex, &cfg).unwrap();
        assert!(report.final_loss < report.initial_loss);
        for key in base.param_keys() {
            let (a, b) = (&base.param(key).value, &new.param(key).value);
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()), "{key:?} moved");
        }
        assert!(new.concept_id(NOVEL_COLOR).is_ok());
    }

    #[test]
    fn bound_word_is_rejected() {
        let ex = fewshot_examples(3, NOVEL_COLOR, 1, &FeatureSpec::default()).unwrap();
        let err = fewshot_learn_concept(&reg(), "red", "color", &ex, &FewShotConfig::default());
        assert!(matches!(err, Err(TrainError::AlreadyBound(w)) if w == "red"));
    }
}
