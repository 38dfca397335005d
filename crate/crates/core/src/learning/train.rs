use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::AutodiffError;
use crate::concepts::{FeatureSpec, ParamKey, Registry};
use crate::executor::{answer_loss, ExecError, Executor, Mode};
use crate::par;
use crate::worldgen::{build_dataset, derive_seed, Dataset, DatasetSpec, Palette, QAExample, SceneRecord, StageSpec};

use super::eval::answer_accuracy;
use super::optim::{mean_gradients, Optimizer};
use super::{TrainConfig, TrainError};

/// Per-stage training pools and validation sets, index-aligned.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StagedData {
    pub train: Vec<Dataset>,
    pub val: Vec<Dataset>,
}

/// Scene-id offsets keep every generated split in its own id range.
const TRAIN_IDS: u64 = 0;
const VAL_IDS: u64 = 10_000_000;
const STAGE_IDS: u64 = 1_000_000;

impl StagedData {
    /// Standard three-stage curriculum with `train_size` questions split evenly.
    pub fn generate(
        seed: u64,
        train_size: usize,
        val_per_stage: usize,
        features: &FeatureSpec,
    ) -> Result<Self, TrainError> {
        let stages = (1..=3).map(StageSpec::standard).collect::<Result<Vec<_>, _>>()?;
        Self::from_stages(seed, &stages, train_size, val_per_stage, features)
    }

    pub fn from_stages(
        seed: u64,
        stages: &[StageSpec],
        train_size: usize,
        val_per_stage: usize,
        features: &FeatureSpec,
    ) -> Result<Self, TrainError> {
        let mut data = StagedData::default();
        let k = stages.len().max(1);
        for (si, stage) in stages.iter().enumerate() {
            let size = train_size / k + usize::from(si < train_size % k);
            let spec = |stream: u64, size: usize, offset: u64| DatasetSpec {
                seed: derive_seed(seed, stream, si as u64),
                size,
                stages: vec![stage.clone()],
                palette: Palette::base(),
                features: features.clone(),
                id_offset: offset + si as u64 * STAGE_IDS,
            };
            data.train.push(build_dataset(&spec(1, size, TRAIN_IDS))?);
            data.val.push(build_dataset(&spec(2, val_per_stage, VAL_IDS))?);
        }
        Ok(data)
    }

    /// Keeps the first `ceil(fraction * len)` training examples of each stage.
    pub fn fraction(&self, fraction: f64) -> StagedData {
        let train = self
            .train
            .iter()
            .map(|d| d.truncate(((d.len() as f64 * fraction).ceil() as usize).clamp(1.min(d.len()), d.len())))
            .collect();
        StagedData { train, val: self.val.clone() }
    }

    pub fn train_len(&self) -> usize {
        self.train.iter().map(Dataset::len).sum()
    }

    /// All training stages pooled into one dataset.
    pub fn pooled_train(&self) -> Dataset {
        let mut all = Dataset::default();
        self.train.iter().for_each(|d| all.extend(d.clone()));
        all
    }

    pub fn pooled_val(&self) -> Dataset {
        let mut all = Dataset::default();
        self.val.iter().for_each(|d| all.extend(d.clone()));
        all
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: usize,
    pub epoch: usize,
    pub steps: u64,
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub registry: Registry,
    pub history: Vec<EpochRecord>,
}

type ExampleGrad = (f64, Vec<(ParamKey, Vec<f64>)>);

/// Loss and gradients of one question under the soft executor.
pub(crate) fn example_gradient(
    registry: &Registry,
    scene: &SceneRecord,
    q: &QAExample,
) -> Result<ExampleGrad, ExecError> {
    let mut scorer = registry.score_context();
    let mut ex = Executor::new(&mut scorer, scene, Mode::Soft)?;
    let dist = ex.run(&q.program)?;
    let loss = answer_loss(ex.scorer, &dist, &q.answer)?;
    let value = scorer.tape.scalar(loss);
    Ok((value, scorer.gradients(loss)?))
}

/// Curriculum training.
///
/// Stage `s` trains on the pooled examples of stages `1..=s`. The curriculum
/// advances once the stage's validation accuracy reaches the threshold or
/// after `max_epochs_per_stage` epochs; the last stage may stop early on
/// `early_stop`. Batches are shuffled from a seed derived from the config
/// seed, and per-example gradients are reduced in batch order, so a run is a
/// pure function of its inputs.
pub fn train(config: &TrainConfig, registry: Registry, data: &StagedData) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(TrainError::NoExamples);
    }
    let mut reg = registry;
    let mut opt: Optimizer<ParamKey> = Optimizer::new(config.optimizer, config.learning_rate);
    let mut history = Vec::new();
    let mut pool: Vec<(usize, usize)> = Vec::new();
    let last = data.train.len() - 1;
    for (si, stage_data) in data.train.iter().enumerate() {
        pool.extend((0..stage_data.len()).map(|k| (si, k)));
        for epoch in 0..config.max_epochs_per_stage {
            let mut order = pool.clone();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, si as u64 + 1, epoch as u64)));
            let mut loss_sum = 0.0;
            for (b, chunk) in order.chunks(config.batch_size).enumerate() {
                let results = par::map(chunk, |&(s, k)| {
                    example_gradient(&reg, &data.train[s].scenes[k], &data.train[s].questions[k])
                });
                let mut grads = Vec::with_capacity(chunk.len());
                for (r, &(s, k)) in results.into_iter().zip(chunk) {
                    let non_finite = |detail: String| TrainError::NonFinite {
                        stage: si as u8 + 1,
                        epoch,
                        batch: b,
                        scene: data.train[s].scenes[k].id,
                        detail,
                    };
                    let (loss, g) = match r {
                        Ok(v) => v,
                        Err(ExecError::Autodiff(e @ AutodiffError::NonFinite { .. })) => {
                            return Err(non_finite(e.to_string()))
                        }
                        Err(e) => return Err(e.into()),
                    };
                    if !loss.is_finite() {
                        return Err(non_finite(format!("loss {loss}")));
                    }
                    if let Some((key, _)) = g.iter().find(|(_, v)| v.iter().any(|x| !x.is_finite())) {
                        return Err(non_finite(format!("gradient of {key:?}")));
                    }
                    loss_sum += loss;
                    grads.push(g);
                }
                let mean = mean_gradients(grads);
                opt.begin_step();
                for (key, g) in &mean {
                    opt.update(*key, &mut reg.param_mut(*key).value, g);
                }
            }
            let val = &data.val[si];
            let val_accuracy = if val.is_empty() { None } else { Some(answer_accuracy(&reg, val)?.accuracy()) };
            history.push(EpochRecord {
                stage: si + 1,
                epoch,
                steps: opt.steps(),
                train_loss: loss_sum / order.len().max(1) as f64,
                val_accuracy,
            });
            let reached = |t: f64| val_accuracy.is_some_and(|a| a >= t);
            if si < last && reached(config.advance_threshold) {
                break;
            }
            if si == last && config.early_stop.is_some_and(reached) {
                break;
            }
        }
    }
    Ok(TrainOutcome { registry: reg, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concepts::ScoringConfig;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            max_epochs_per_stage: 2,
            scoring: ScoringConfig { dim: 8, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn curriculum_is_monotone_and_deterministic() {
        let cfg = tiny_config();
        let data = StagedData::generate(1, 60, 10, &FeatureSpec::default()).unwrap();
        let a = train(&cfg, Registry::standard(cfg.scoring.clone(), 0), &data).unwrap();
        let b = train(&cfg, Registry::standard(cfg.scoring.clone(), 0), &data).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.registry, b.registry);
        assert!(a.history.windows(2).all(|w| w[0].stage <= w[1].stage));
        assert!(a.history.iter().all(|r| r.train_loss.is_finite()));
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let cfg = tiny_config();
        let data = StagedData::generate(2, 30, 5, &FeatureSpec::default()).unwrap();
        let mut reg = Registry::standard(cfg.scoring.clone(), 0);
        reg.set_trainable(&crate::concepts::TrainableSelector::All, false).unwrap();
        let out = train(&cfg, reg.clone(), &data).unwrap();
        assert_eq!(out.registry, reg);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = TrainConfig { batch_size: 0, ..tiny_config() };
        let data = StagedData::default();
        assert!(matches!(train(&cfg, Registry::standard(cfg.scoring.clone(), 0), &data), Err(TrainError::Config(_))));
    }

    #[test]
    fn fractions_keep_every_stage() {
        let data = StagedData::generate(3, 90, 5, &FeatureSpec::default()).unwrap();
        let tenth = data.fraction(0.1);
        assert_eq!(tenth.train.iter().map(Dataset::len).collect::<Vec<_>>(), vec![3, 3, 3]);
        assert_eq!(tenth.train[0].questions[..], data.train[0].questions[..3]);
    }
}
