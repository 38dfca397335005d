//! The three experiment suites: data efficiency against the baseline,
//! compositional generalization to larger scenes and deeper programs, and
//! zero-shot caption retrieval with a QA-trained registry.

use serde::{Deserialize, Serialize};

use crate::concepts::{FeatureSpec, Registry};
use crate::executor::{execute, Mode};
use crate::par;
use crate::worldgen::{
    build_dataset, gen_captions, Answer, CaptionExample, CaptionSpec, Dataset, DatasetSpec, Palette, SceneRecord,
    StageSpec, Template, NOVEL_COLOR,
};

use super::baseline::{evaluate_baseline, train_baseline, BaselineConfig};
use super::{evaluate, train, EpochRecord, EvalReport, MetricRow, StagedData, Tally, TrainConfig, TrainError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SuiteKind {
    DataEfficiency,
    Compositional,
    Retrieval,
}

impl SuiteKind {
    pub fn from_name(s: &str) -> Option<Self> {
        match s.replace('_', "-").as_str() {
            "data-efficiency" => Some(Self::DataEfficiency),
            "compositional" => Some(Self::Compositional),
            "retrieval" => Some(Self::Retrieval),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub train: TrainConfig,
    pub baseline: BaselineConfig,
    pub features: FeatureSpec,
    pub seed: u64,
    pub train_size: usize,
    pub val_per_stage: usize,
    pub test_size: usize,
    pub fractions: Vec<f64>,
    pub captions: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            baseline: BaselineConfig::default(),
            features: FeatureSpec::default(),
            seed: 0,
            train_size: 5000,
            val_per_stage: 200,
            test_size: 1000,
            fractions: vec![0.01, 0.1, 1.0],
            captions: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub model: String,
    pub fraction: f64,
    pub history: Vec<EpochRecord>,
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub kind: SuiteKind,
    /// One block of rows per (model, split, fraction).
    pub rows: Vec<MetricRow>,
    pub curves: Vec<Curve>,
    /// Concept model trained on the most data, if the suite trained one.
    pub checkpoint: Option<Registry>,
}

impl SuiteReport {
    /// Overall accuracy of one cell.
    pub fn accuracy(&self, model: &str, split: &str, fraction: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.split == split && r.fraction == fraction && r.question_type == "overall")
            .map(|r| r.accuracy)
    }
}

pub const CONCEPT_MODEL: &str = "concept";
pub const BASELINE_MODEL: &str = "baseline";

const TEST_IDS: u64 = 20_000_000;
const GEN_IDS: u64 = 30_000_000;

/// Fresh registry over the base world for `config`.
pub fn fresh_registry(config: &TrainConfig, features: &FeatureSpec) -> Registry {
    Registry::for_world(config.scoring.clone(), features.clone(), config.seed, &[NOVEL_COLOR])
}

fn test_split(
    seed: u64,
    size: usize,
    stages: Vec<StageSpec>,
    features: &FeatureSpec,
    id_offset: u64,
) -> Result<Dataset, TrainError> {
    Ok(build_dataset(&DatasetSpec {
        seed,
        size,
        stages,
        palette: Palette::base(),
        features: features.clone(),
        id_offset,
    })?)
}

fn standard_stages() -> Result<Vec<StageSpec>, TrainError> {
    Ok((1..=3).map(StageSpec::standard).collect::<Result<Vec<_>, _>>()?)
}

/// Both models trained on the same data and scored on the same test split.
fn paired(
    config: &SuiteConfig,
    data: &StagedData,
    fraction: f64,
    tests: &[(&str, &Dataset)],
    report: &mut SuiteReport,
) -> Result<Registry, TrainError> {
    let concept = train(&config.train, fresh_registry(&config.train, &config.features), data)?;
    let base = train_baseline(&config.train, &config.baseline, data)?;
    for (split, test) in tests {
        let mut c = evaluate(&concept.registry, test)?;
        c.per_concept.retain(|_, t| t.total > 0);
        report.rows.extend(MetricRow::rows_of(CONCEPT_MODEL, split, fraction, &c));
        let b = evaluate_baseline(&base.model, test)?;
        report.rows.extend(MetricRow::rows_of(BASELINE_MODEL, split, fraction, &b));
    }
    report.curves.push(Curve { model: CONCEPT_MODEL.into(), fraction, history: concept.history });
    report.curves.push(Curve { model: BASELINE_MODEL.into(), fraction, history: base.history });
    Ok(concept.registry)
}

/// Trains both models at every fraction of the curriculum data.
pub fn data_efficiency(config: &SuiteConfig) -> Result<SuiteReport, TrainError> {
    let stages = standard_stages()?;
    let full =
        StagedData::from_stages(config.seed, &stages, config.train_size, config.val_per_stage, &config.features)?;
    let test = test_split(config.seed ^ 0x7E57, config.test_size, stages, &config.features, TEST_IDS)?;
    let mut report =
        SuiteReport { kind: SuiteKind::DataEfficiency, rows: Vec::new(), curves: Vec::new(), checkpoint: None };
    let mut fractions = config.fractions.clone();
    fractions.sort_by(f64::total_cmp);
    for f in fractions {
        if !(f > 0.0 && f <= 1.0) {
            return Err(TrainError::Config(format!("fraction {f} outside (0, 1]")));
        }
        let reg = paired(config, &full.fraction(f), f, &[("test", &test)], &mut report)?;
        report.checkpoint = Some(reg);
    }
    Ok(report)
}

/// Training stages of the compositional split: scenes of at most four
/// objects, programs of depth at most three.
pub fn compositional_train_stages() -> Vec<StageSpec> {
    let stage = |stage: u8, templates: Vec<Template>| StageSpec {
        stage,
        min_objects: 1,
        max_objects: 4,
        templates,
        min_depth: 1,
        max_depth: 3,
        max_count: 3,
    };
    vec![
        stage(1, vec![Template::QueryAttr, Template::Exist, Template::Count]),
        stage(2, vec![Template::ExistPair, Template::AttrEqual, Template::CountCompare]),
    ]
}

/// Generalization split: 8-10 objects and programs of depth exactly five.
pub fn compositional_test_stage() -> StageSpec {
    StageSpec {
        stage: 3,
        min_objects: 8,
        max_objects: 10,
        templates: vec![
            Template::ExistRelate,
            Template::CountRelate,
            Template::QueryRelate,
            Template::CountSame,
            Template::CountBoolean,
        ],
        min_depth: 5,
        max_depth: 5,
        max_count: 5,
    }
}

pub fn compositional(config: &SuiteConfig) -> Result<SuiteReport, TrainError> {
    let stages = compositional_train_stages();
    let data =
        StagedData::from_stages(config.seed, &stages, config.train_size, config.val_per_stage, &config.features)?;
    let in_dist = test_split(config.seed ^ 0x7E57, config.test_size, stages, &config.features, TEST_IDS)?;
    let general = test_split(
        config.seed ^ 0x6E4E,
        config.test_size,
        vec![compositional_test_stage()],
        &config.features,
        GEN_IDS,
    )?;
    let mut report =
        SuiteReport { kind: SuiteKind::Compositional, rows: Vec::new(), curves: Vec::new(), checkpoint: None };
    let reg = paired(config, &data, 1.0, &[("in-distribution", &in_dist), ("generalization", &general)], &mut report)?;
    report.checkpoint = Some(reg);
    Ok(report)
}

/// Caption classification: a caption is predicted true when the soft
/// executor puts at least half its mass on `yes`.
pub fn caption_accuracy(
    registry: &Registry,
    scenes: &[SceneRecord],
    captions: &[CaptionExample],
) -> Result<Tally, TrainError> {
    let idx: Vec<usize> = (0..captions.len()).collect();
    let hits = par::map(&idx, |&i| -> Result<bool, TrainError> {
        let mut scorer = registry.score_context();
        let (dist, _) = execute(&captions[i].program(), &scenes[i], &mut scorer, Mode::Soft)?;
        let p = dist.prob_of(&scorer, &Answer::Bool(true)).unwrap_or(0.0);
        Ok((p >= 0.5) == captions[i].label)
    });
    let mut t = Tally::default();
    for h in hits {
        t.add(h?);
    }
    Ok(t)
}

/// Scores captions with `checkpoint`, or with a concept model trained on the
/// full curriculum when none is given. No caption ever reaches training.
pub fn retrieval(config: &SuiteConfig, checkpoint: Option<&Registry>) -> Result<SuiteReport, TrainError> {
    let mut report = SuiteReport { kind: SuiteKind::Retrieval, rows: Vec::new(), curves: Vec::new(), checkpoint: None };
    let trained;
    let registry = match checkpoint {
        Some(r) => r,
        None => {
            let data = StagedData::from_stages(
                config.seed,
                &standard_stages()?,
                config.train_size,
                config.val_per_stage,
                &config.features,
            )?;
            let out = train(&config.train, fresh_registry(&config.train, &config.features), &data)?;
            report.curves.push(Curve { model: CONCEPT_MODEL.into(), fraction: 1.0, history: out.history });
            trained = out.registry;
            &trained
        }
    };
    let mut spec = CaptionSpec::new(config.seed ^ 0xCA7, config.captions, config.features.clone());
    spec.id_offset = TEST_IDS;
    let (scenes, captions) = gen_captions(&spec)?;
    let tally = caption_accuracy(registry, &scenes, &captions)?;
    let mut eval = EvalReport { overall: tally, ..Default::default() };
    eval.per_type.insert(Template::ExistPair.name().into(), tally);
    report.rows.extend(MetricRow::rows_of(CONCEPT_MODEL, "captions", 1.0, &eval));
    report.checkpoint = checkpoint.is_none().then(|| registry.clone());
    Ok(report)
}

pub fn run_suite(
    kind: SuiteKind,
    config: &SuiteConfig,
    checkpoint: Option<&Registry>,
) -> Result<SuiteReport, TrainError> {
    match kind {
        SuiteKind::DataEfficiency => data_efficiency(config),
        SuiteKind::Compositional => compositional(config),
        SuiteKind::Retrieval => retrieval(config, checkpoint),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concepts::ScoringConfig;

    fn tiny() -> SuiteConfig {
        SuiteConfig {
            train: TrainConfig {
                max_epochs_per_stage: 1,
                scoring: ScoringConfig { dim: 8, ..Default::default() },
                ..Default::default()
            },
            baseline: BaselineConfig { word_dim: 4, hidden: 8 },
            train_size: 60,
            val_per_stage: 5,
            test_size: 20,
            fractions: vec![0.5, 1.0],
            captions: 10,
            ..Default::default()
        }
    }

    #[test]
    fn one_block_per_model_split_fraction() {
        let r = data_efficiency(&tiny()).unwrap();
        for f in [0.5, 1.0] {
            for m in [CONCEPT_MODEL, BASELINE_MODEL] {
                let overall = r.rows.iter().filter(|x| x.model == m && x.fraction == f && x.question_type == "overall");
                assert_eq!(overall.count(), 1);
            }
        }
        assert_eq!(r.curves.len(), 4);
        assert!(r.rows.iter().all(|x| (0.0..=1.0).contains(&x.accuracy)));
    }

    #[test]
    fn compositional_splits_meet_their_constraints() {
        let cfg = tiny();
        for s in compositional_train_stages() {
            let d = test_split(1, 12, vec![s], &cfg.features, 0).unwrap();
            assert!(d.questions.iter().all(|q| q.program.depth() <= 3));
            assert!(d.scenes.iter().all(|s| s.len() <= 4));
        }
        let g = test_split(2, 12, vec![compositional_test_stage()], &cfg.features, 0).unwrap();
        assert!(g.questions.iter().all(|q| q.program.depth() == 5));
        assert!(g.scenes.iter().all(|s| (8..=10).contains(&s.len())));
    }

    #[test]
    fn retrieval_with_given_checkpoint() {
        let cfg = tiny();
        let reg = fresh_registry(&cfg.train, &cfg.features);
        let r = retrieval(&cfg, Some(&reg)).unwrap();
        assert!(r.checkpoint.is_none());
        assert_eq!(r.rows[0].n, 10);
    }

    #[test]
    fn suite_names() {
        assert_eq!(SuiteKind::from_name("data_efficiency"), Some(SuiteKind::DataEfficiency));
        assert_eq!(SuiteKind::from_name("retrieval"), Some(SuiteKind::Retrieval));
        assert_eq!(SuiteKind::from_name("nope"), None);
    }
}
