//! Monolithic baseline: bag-of-words question encoding, mean and max pooled
//! raw object features, and a two-layer perceptron over the answer vocabulary.
//! It has no notion of concepts or programs.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::executor::{ExecError, COUNT_MAX};
use crate::par;
use crate::worldgen::domain::{Attribute, RAW_OBJECT_DIM};
use crate::worldgen::{derive_seed, Answer, Dataset, QAExample, SceneRecord};

use super::optim::{mean_gradients, Optimizer};
use super::{EpochRecord, EvalReport, StagedData, TrainConfig, TrainError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub word_dim: usize,
    pub hidden: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { word_dim: 32, hidden: 128 }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum BKey {
    Words,
    W1,
    B1,
    W2,
    B2,
}

type BGrads = Vec<(BKey, Vec<f64>)>;

const KEYS: [BKey; 5] = [BKey::Words, BKey::W1, BKey::B1, BKey::W2, BKey::B2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub config: BaselineConfig,
    pub vocab: Vec<String>,
    pub answers: Vec<Answer>,
    /// `word_dim x |vocab|`, row-major.
    pub words: Vec<f64>,
    /// `hidden x (word_dim + 2 * RAW_OBJECT_DIM)`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `|answers| x hidden`.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Lowercased words of a question without punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(str::to_lowercase).collect()
}

/// yes, no, the counts, and every world value.
pub fn answer_vocabulary() -> Vec<Answer> {
    let mut out = vec![Answer::Bool(true), Answer::Bool(false)];
    out.extend((0..=COUNT_MAX).map(Answer::Count));
    for attr in Attribute::ALL {
        out.extend(attr.values().iter().map(|v| Answer::Concept(v.to_string())));
    }
    out
}

fn init(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<f64> {
    let b = (3.0 / fan_in.max(1) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-b..b)).collect()
}

impl BaselineModel {
    /// Vocabulary from the training questions, parameters from `seed`.
    pub fn new(config: BaselineConfig, train: &Dataset, seed: u64) -> Self {
        let mut vocab: Vec<String> = train.questions.iter().flat_map(|q| tokenize(&q.question)).collect();
        vocab.sort();
        vocab.dedup();
        let answers = answer_vocabulary();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = config.word_dim + 2 * RAW_OBJECT_DIM;
        let words = init(&mut rng, config.word_dim * vocab.len(), config.word_dim);
        let w1 = init(&mut rng, config.hidden * input, input);
        let w2 = init(&mut rng, answers.len() * config.hidden, config.hidden);
        Self { b1: vec![0.0; config.hidden], b2: vec![0.0; answers.len()], config, vocab, answers, words, w1, w2 }
    }

    fn array(&self, key: BKey) -> &Vec<f64> {
        match key {
            BKey::Words => &self.words,
            BKey::W1 => &self.w1,
            BKey::B1 => &self.b1,
            BKey::W2 => &self.w2,
            BKey::B2 => &self.b2,
        }
    }

    fn array_mut(&mut self, key: BKey) -> &mut Vec<f64> {
        match key {
            BKey::Words => &mut self.words,
            BKey::W1 => &mut self.w1,
            BKey::B1 => &mut self.b1,
            BKey::W2 => &mut self.w2,
            BKey::B2 => &mut self.b2,
        }
    }

    fn bag(&self, question: &str) -> Vec<f64> {
        let mut counts = vec![0.0; self.vocab.len()];
        for w in tokenize(question) {
            if let Ok(i) = self.vocab.binary_search(&w) {
                counts[i] += 1.0;
            }
        }
        counts
    }

    /// Answer probabilities; returns the tape, the parameter nodes and the softmax node.
    fn forward(&self, question: &str, scene: &SceneRecord) -> Result<(Tape, Vec<NodeId>, NodeId), TrainError> {
        let mut t = Tape::new();
        let p = KEYS.iter().map(|k| t.parameter(self.array(*k).clone())).collect::<Result<Vec<_>, _>>()?;
        let bag = t.constant(self.bag(question))?;
        let q = t.matvec(p[0], bag, self.config.word_dim)?;
        let n = scene.len().max(1) as f64;
        let mut mean = vec![0.0; RAW_OBJECT_DIM];
        let mut max = vec![f64::NEG_INFINITY; RAW_OBJECT_DIM];
        for f in &scene.object_features {
            for k in 0..RAW_OBJECT_DIM {
                mean[k] += f[k] / n;
                max[k] = max[k].max(f[k]);
            }
        }
        max.iter_mut().filter(|v| !v.is_finite()).for_each(|v| *v = 0.0);
        let pooled = t.constant([mean, max].concat())?;
        let x = t.concat(&[q, pooled])?;
        let h = t.matvec(p[1], x, self.config.hidden)?;
        let h = t.add(h, p[2])?;
        let h = t.relu(h)?;
        let z = t.matvec(p[3], h, self.answers.len())?;
        let z = t.add(z, p[4])?;
        let probs = t.softmax(z)?;
        Ok((t, p, probs))
    }

    pub fn predict(&self, question: &str, scene: &SceneRecord) -> Result<Answer, TrainError> {
        let (t, _, probs) = self.forward(question, scene)?;
        let v = t.value(probs);
        let best = (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b });
        Ok(self.answers[best].clone())
    }

    fn example_gradient(&self, q: &QAExample, scene: &SceneRecord) -> Result<(f64, BGrads), TrainError> {
        let (mut t, params, probs) = self.forward(&q.question, scene)?;
        let gold = self
            .answers
            .iter()
            .position(|a| *a == q.answer)
            .ok_or_else(|| ExecError::GoldNotInSupport(q.answer.to_string()))?;
        let pg = t.index(probs, gold)?;
        let pg = t.affine(pg, 1.0, 1e-12)?;
        let lg = t.log(pg)?;
        let loss = t.affine(lg, -1.0, 0.0)?;
        let grads = t.backward(loss)?;
        let out = KEYS
            .iter()
            .zip(&params)
            .map(|(k, id)| (*k, grads.get(*id).expect("parameter gradient").to_vec()))
            .collect();
        Ok((t.scalar(loss), out))
    }
}

pub fn evaluate_baseline(model: &BaselineModel, data: &Dataset) -> Result<EvalReport, TrainError> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let hits = par::map(&idx, |&i| {
        let q = &data.questions[i];
        model.predict(&q.question, &data.scenes[i]).map(|a| a == q.answer)
    });
    let mut report = EvalReport::default();
    for (i, hit) in hits.into_iter().enumerate() {
        let hit = hit?;
        report.overall.add(hit);
        report.per_type.entry(data.questions[i].template.name().to_string()).or_default().add(hit);
    }
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct BaselineOutcome {
    pub model: BaselineModel,
    pub history: Vec<EpochRecord>,
}

/// Trains on all stages pooled, for up to `max_epochs_per_stage` times the
/// number of stages epochs, the largest budget the curriculum can use.
/// Stops early on pooled validation accuracy like the last curriculum stage.
pub fn train_baseline(
    config: &TrainConfig,
    baseline: &BaselineConfig,
    data: &StagedData,
) -> Result<BaselineOutcome, TrainError> {
    config.validate()?;
    let pool = data.pooled_train();
    if pool.is_empty() {
        return Err(TrainError::NoExamples);
    }
    let val = data.pooled_val();
    let mut model = BaselineModel::new(baseline.clone(), &pool, config.seed);
    let mut opt: Optimizer<BKey> = Optimizer::new(config.optimizer, config.learning_rate);
    let epochs = config.max_epochs_per_stage * data.train.len().max(1);
    let mut history = Vec::new();
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0xBA5E, epoch as u64)));
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let results = par::map(chunk, |&i| model.example_gradient(&pool.questions[i], &pool.scenes[i]));
            let mut grads = Vec::with_capacity(chunk.len());
            for (r, &i) in results.into_iter().zip(chunk) {
                let (loss, g) = r?;
                if !loss.is_finite() || g.iter().any(|(_, v)| v.iter().any(|x| !x.is_finite())) {
                    return Err(TrainError::NonFinite {
                        stage: 0,
                        epoch,
                        batch: b,
                        scene: pool.scenes[i].id,
                        detail: "baseline".into(),
                    });
                }
                loss_sum += loss;
                grads.push(g);
            }
            let mean: BTreeMap<BKey, Vec<f64>> = mean_gradients(grads);
            opt.begin_step();
            for (k, g) in &mean {
                opt.update(*k, model.array_mut(*k), g);
            }
        }
        let val_accuracy = if val.is_empty() { None } else { Some(evaluate_baseline(&model, &val)?.accuracy()) };
        history.push(EpochRecord {
            stage: 0,
            epoch,
            steps: opt.steps(),
            train_loss: loss_sum / pool.len() as f64,
            val_accuracy,
        });
        if config.early_stop.is_some_and(|t| val_accuracy.is_some_and(|a| a >= t)) {
            break;
        }
    }
    Ok(BaselineOutcome { model, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concepts::FeatureSpec;

    #[test]
    fn tokenizer_strips_punctuation() {
        assert_eq!(tokenize("Is there a red cube?"), vec!["is", "there", "a", "red", "cube"]);
    }

    #[test]
    fn vocabulary_covers_every_answer() {
        let data = StagedData::generate(0, 90, 0, &FeatureSpec::default()).unwrap();
        let answers = answer_vocabulary();
        assert!(data.pooled_train().questions.iter().all(|q| answers.contains(&q.answer)));
    }

    #[test]
    fn training_lowers_loss_and_is_deterministic() {
        let data = StagedData::generate(1, 60, 10, &FeatureSpec::default()).unwrap();
        let cfg = TrainConfig { max_epochs_per_stage: 2, early_stop: None, ..Default::default() };
        let small = BaselineConfig { word_dim: 8, hidden: 16 };
        let a = train_baseline(&cfg, &small, &data).unwrap();
        let b = train_baseline(&cfg, &small, &data).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.history, b.history);
        assert_eq!(a.history.len(), 6);
        assert!(a.history.last().unwrap().train_loss < a.history[0].train_loss);
    }
}
