use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use nscl::actions::{plan, verify_goal, Goal, TabletopState, DEFAULT_PLAN_DEPTH};
use nscl::concepts::Registry;
use nscl::executor::{execute, Mode};
use nscl::learning::suite::{caption_accuracy, fresh_registry, run_suite, SuiteConfig, CONCEPT_MODEL};
use nscl::learning::{
    concept_accuracy, evaluate, fewshot_examples, fewshot_learn_concept, probe_scenes, read_metrics_csv, train,
    write_curve_csv, write_metrics_csv, EvalReport, FewShotConfig, MetricRow, RunManifest, StagedData,
};
use nscl::worldgen::io::{read_captions, read_qa, read_scenes, write_captions, write_qa, write_scenes};
use nscl::worldgen::{
    build_dataset, gen_captions, parse_question, synth_features, CaptionExample, CaptionSpec, Dataset, DatasetSpec,
    SceneRecord, Template,
};

use crate::{Command, Format, Global, UsageError};

/// Scene ids of generated captions start here, after the question scenes.
const CAPTION_IDS: u64 = 20_000_000;

/// The single JSON config document. Flags override its values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CliConfig {
    #[serde(flatten)]
    pub suite: SuiteConfig,
    pub fewshot: FewShotConfig,
    /// Examples given to few-shot learning.
    pub shots: usize,
    /// Held-out scenes scoring a few-shot concept.
    pub probe_scenes: usize,
    pub plan_depth: usize,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            suite: SuiteConfig::default(),
            fewshot: FewShotConfig::default(),
            shots: 5,
            probe_scenes: 200,
            plan_depth: DEFAULT_PLAN_DEPTH,
        }
    }
}

impl CliConfig {
    fn set_seed(&mut self, seed: u64) {
        self.suite.seed = seed;
        self.suite.train.seed = seed;
        self.fewshot.seed = seed;
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn load_config(global: &Global) -> Result<CliConfig> {
    let mut cfg = match &global.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| usage(format!("--config {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("--config {}: {e}", path.display())))?
        }
        None => CliConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

/// Output directory plus the manifest that records everything written there.
struct Run {
    out: PathBuf,
    manifest: RunManifest,
}

impl Run {
    fn start(command: &str, out: &Path, cfg: &CliConfig) -> Result<Self> {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let mut manifest = RunManifest::start(command, serde_json::to_value(cfg)?);
        manifest.seeds.insert("seed".into(), cfg.suite.seed);
        manifest.seeds.insert("train".into(), cfg.suite.train.seed);
        manifest.seeds.insert("fewshot".into(), cfg.fewshot.seed);
        manifest.seeds.insert("features".into(), cfg.suite.features.mixing_seed);
        Ok(Self { out: out.to_path_buf(), manifest })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.manifest.hash_file(true, path)?;
        Ok(())
    }

    fn output(&mut self, name: &str) -> Result<()> {
        let p = self.path(name);
        self.manifest.hash_file(false, &p)?;
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.manifest.finish();
        self.manifest.write(&self.out.join("manifest.json"))?;
        Ok(())
    }
}

/// A dataset directory: question scenes, questions, and captions with their scenes.
struct DataDir {
    qa: Dataset,
    caption_scenes: Vec<SceneRecord>,
    captions: Vec<CaptionExample>,
    files: Vec<PathBuf>,
}

fn load_data(dir: &Path) -> Result<DataDir> {
    let scenes_path = dir.join("scenes.jsonl");
    let qa_path = dir.join("qa.jsonl");
    let scenes = read_scenes(&scenes_path)?;
    let by_id: HashMap<u64, &SceneRecord> = scenes.iter().map(|s| (s.id, s)).collect();
    let lookup = |id: u64| {
        by_id.get(&id).map(|s| (*s).clone()).ok_or_else(|| anyhow!("scene {id} missing from {}", scenes_path.display()))
    };
    let mut files = vec![scenes_path.clone()];
    let mut qa = Dataset::default();
    if qa_path.exists() {
        for q in read_qa(&qa_path)? {
            qa.scenes.push(lookup(q.scene_id)?);
            qa.questions.push(q);
        }
        files.push(qa_path);
    }
    let captions_path = dir.join("captions.jsonl");
    let (mut caption_scenes, mut captions) = (Vec::new(), Vec::new());
    if captions_path.exists() {
        for c in read_captions(&captions_path)? {
            caption_scenes.push(lookup(c.scene_id)?);
            captions.push(c);
        }
        files.push(captions_path);
    }
    Ok(DataDir { qa, caption_scenes, captions, files })
}

/// Splits a dataset into curriculum stages by each question's stage tag.
fn by_stage(data: &Dataset) -> BTreeMap<u8, Dataset> {
    let mut out: BTreeMap<u8, Dataset> = BTreeMap::new();
    for (s, q) in data.scenes.iter().zip(&data.questions) {
        let d = out.entry(q.stage).or_default();
        d.scenes.push(s.clone());
        d.questions.push(q.clone());
    }
    out
}

fn load_registry(path: &Path) -> Result<Registry> {
    Registry::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn print_overall(rows: &[MetricRow]) {
    for r in rows.iter().filter(|r| r.question_type == "overall") {
        println!("{} {} fraction={} accuracy={:.4} ({}/{})", r.model, r.split, r.fraction, r.accuracy, r.correct, r.n);
    }
}

pub fn run(global: &Global, command: Command) -> Result<()> {
    let mut cfg = load_config(global)?;
    match command {
        Command::Gen { out, size, captions, embed_features } => {
            let size = size.unwrap_or(cfg.suite.train_size);
            let n_captions = captions.unwrap_or(cfg.suite.captions);
            cfg.suite.train_size = size;
            cfg.suite.captions = n_captions;
            let mut run = Run::start("gen", &out, &cfg)?;
            let data = build_dataset(&DatasetSpec::curriculum(cfg.suite.seed, size, cfg.suite.features.clone()))?;
            let mut spec = CaptionSpec::new(cfg.suite.seed, n_captions, cfg.suite.features.clone());
            spec.id_offset = CAPTION_IDS;
            let (caption_scenes, caption_list) = gen_captions(&spec)?;
            let mut scenes = data.scenes.clone();
            scenes.extend(caption_scenes);
            write_scenes(&run.path("scenes.jsonl"), &scenes, embed_features)?;
            write_qa(&run.path("qa.jsonl"), &data.questions)?;
            write_captions(&run.path("captions.jsonl"), &caption_list)?;
            for f in ["scenes.jsonl", "qa.jsonl", "captions.jsonl"] {
                run.output(f)?;
            }
            println!(
                "{} questions, {} captions, {} scenes -> {}",
                data.len(),
                caption_list.len(),
                scenes.len(),
                out.display()
            );
            run.finish()
        }
        Command::Train { data, val, out, epochs, lr } => {
            if let Some(e) = epochs {
                cfg.suite.train.max_epochs_per_stage = e;
            }
            if let Some(lr) = lr {
                cfg.suite.train.learning_rate = lr;
            }
            let mut run = Run::start("train", &out, &cfg)?;
            let train_dir = load_data(&data)?;
            train_dir.files.iter().try_for_each(|f| run.input(f))?;
            if train_dir.qa.is_empty() {
                bail!("{} holds no questions", data.display());
            }
            let train_stages = by_stage(&train_dir.qa);
            let mut val_stages = BTreeMap::new();
            if let Some(v) = &val {
                let val_dir = load_data(v)?;
                val_dir.files.iter().try_for_each(|f| run.input(f))?;
                val_stages = by_stage(&val_dir.qa);
            }
            let staged = StagedData {
                val: train_stages.keys().map(|s| val_stages.remove(s).unwrap_or_default()).collect(),
                train: train_stages.into_values().collect(),
            };
            let outcome = train(&cfg.suite.train, fresh_registry(&cfg.suite.train, &cfg.suite.features), &staged)?;
            outcome.registry.save(&run.path("checkpoint.json"))?;
            write_curve_csv(&run.path("curve.csv"), &[(CONCEPT_MODEL, 1.0, &outcome.history)])?;
            run.output("checkpoint.json")?;
            run.output("curve.csv")?;
            if let Some(last) = outcome.history.last() {
                println!(
                    "trained {} epochs; final loss {:.4}, validation accuracy {}",
                    outcome.history.len(),
                    last.train_loss,
                    last.val_accuracy.map_or("n/a".into(), |a| format!("{a:.4}"))
                );
            }
            run.finish()
        }
        Command::Eval { checkpoint, data, out } => {
            let mut run = Run::start("eval", &out, &cfg)?;
            let reg = load_registry(&checkpoint)?;
            run.input(&checkpoint)?;
            let dir = load_data(&data)?;
            dir.files.iter().try_for_each(|f| run.input(f))?;
            let mut rows = Vec::new();
            if !dir.qa.is_empty() {
                rows.extend(MetricRow::rows_of(CONCEPT_MODEL, "eval", 1.0, &evaluate(&reg, &dir.qa)?));
            }
            if !dir.captions.is_empty() {
                let tally = caption_accuracy(&reg, &dir.caption_scenes, &dir.captions)?;
                let mut report = EvalReport { overall: tally, ..Default::default() };
                report.per_type.insert(Template::ExistPair.name().into(), tally);
                rows.extend(MetricRow::rows_of(CONCEPT_MODEL, "captions", 1.0, &report));
            }
            write_metrics_csv(&run.path("metrics.csv"), &rows)?;
            run.output("metrics.csv")?;
            print_overall(&rows);
            run.finish()
        }
        Command::Suite { kind, out, checkpoint, size, test_size, fractions, captions, epochs } => {
            let s = &mut cfg.suite;
            if let Some(v) = size {
                s.train_size = v;
            }
            if let Some(v) = test_size {
                s.test_size = v;
            }
            if let Some(v) = fractions {
                s.fractions = v;
            }
            if let Some(v) = captions {
                s.captions = v;
            }
            if let Some(v) = epochs {
                s.train.max_epochs_per_stage = v;
            }
            let mut run =
                Run::start(&format!("suite {}", serde_json::to_value(kind)?.as_str().unwrap_or("")), &out, &cfg)?;
            let reg = match &checkpoint {
                Some(p) => {
                    run.input(p)?;
                    Some(load_registry(p)?)
                }
                None => None,
            };
            let report = run_suite(kind, &cfg.suite, reg.as_ref())?;
            write_metrics_csv(&run.path("metrics.csv"), &report.rows)?;
            run.output("metrics.csv")?;
            let curves: Vec<(&str, f64, &[_])> =
                report.curves.iter().map(|c| (c.model.as_str(), c.fraction, c.history.as_slice())).collect();
            write_curve_csv(&run.path("curve.csv"), &curves)?;
            run.output("curve.csv")?;
            if let Some(r) = &report.checkpoint {
                r.save(&run.path("checkpoint.json"))?;
                run.output("checkpoint.json")?;
            }
            print_overall(&report.rows);
            run.finish()
        }
        Command::Fewshot { checkpoint, word, namespace, shots, data, out, steps } => {
            if let Some(k) = shots {
                cfg.shots = k;
            }
            if let Some(s) = steps {
                cfg.fewshot.steps = s;
            }
            let mut run = Run::start("fewshot", &out, &cfg)?;
            let reg = load_registry(&checkpoint)?;
            run.input(&checkpoint)?;
            let examples = fewshot_examples(cfg.fewshot.seed, &word, cfg.shots, &reg.features)?;
            let (new, report) = fewshot_learn_concept(&reg, &word, &namespace, &examples, &cfg.fewshot)?;
            let probe = probe_scenes(cfg.fewshot.seed, cfg.probe_scenes, &reg.features)?;
            let held_out = concept_accuracy(&new, &probe)?;
            let probe_report = EvalReport {
                overall: held_out.get(&word).copied().unwrap_or_default(),
                per_concept: held_out,
                ..Default::default()
            };
            let mut rows = MetricRow::rows_of(CONCEPT_MODEL, "probe", 1.0, &probe_report);
            if let Some(d) = &data {
                let dir = load_data(d)?;
                dir.files.iter().try_for_each(|f| run.input(f))?;
                let before = evaluate(&reg, &dir.qa)?;
                let after = evaluate(&new, &dir.qa)?;
                rows.extend(MetricRow::rows_of(
                    CONCEPT_MODEL,
                    "eval-before",
                    1.0,
                    &EvalReport { per_concept: BTreeMap::new(), ..before },
                ));
                rows.extend(MetricRow::rows_of(
                    CONCEPT_MODEL,
                    "eval-after",
                    1.0,
                    &EvalReport { per_concept: BTreeMap::new(), ..after },
                ));
            }
            new.save(&run.path("checkpoint.json"))?;
            fs::write(run.path("fewshot.json"), serde_json::to_string_pretty(&report)? + "\n")?;
            write_metrics_csv(&run.path("metrics.csv"), &rows)?;
            for f in ["checkpoint.json", "fewshot.json", "metrics.csv"] {
                run.output(f)?;
            }
            println!(
                "learned `{word}` in `{namespace}` from {} examples: loss {:.4} -> {:.4}, held-out accuracy {:.4}",
                report.examples,
                report.initial_loss,
                report.final_loss,
                probe_report.overall.accuracy()
            );
            print_overall(&rows[1..]);
            run.finish()
        }
        Command::Query { scene, scene_id, question, checkpoint, trace, out } => {
            let scenes = read_scenes(&scene)?;
            let record = match scene_id {
                Some(id) => {
                    scenes.iter().find(|s| s.id == id).ok_or_else(|| anyhow!("no scene {id} in {}", scene.display()))?
                }
                None => scenes.first().ok_or_else(|| anyhow!("{} holds no scenes", scene.display()))?,
            };
            let mut record = record.clone();
            let (reg, mode) = match &checkpoint {
                Some(p) => (load_registry(p)?, Mode::Soft),
                None => (Registry::standard(cfg.suite.train.scoring.clone(), cfg.suite.seed), Mode::Hard),
            };
            if mode == Mode::Soft && !record.has_features() {
                synth_features(&mut record, &reg.features);
            }
            let program = parse_question(&question, &reg.lexicon)?;
            let mut scorer = reg.score_context();
            let (dist, exec_trace) = execute(&program, &record, &mut scorer, mode)?;
            let mut text = format!("program: {program}\nanswer: {}\n", dist.argmax(&scorer));
            if trace {
                text.push_str(&exec_trace.dump());
            }
            print!("{text}");
            if let Some(out) = out {
                let mut run = Run::start("query", &out, &cfg)?;
                run.input(&scene)?;
                if let Some(p) = &checkpoint {
                    run.input(p)?;
                }
                fs::write(run.path("query.txt"), &text)?;
                run.output("query.txt")?;
                run.finish()?;
            }
            Ok(())
        }
        Command::Plan { state, goal, depth, checkpoint, out } => {
            if let Some(d) = depth {
                cfg.plan_depth = d;
            }
            let start: TabletopState = serde_json::from_str(
                &fs::read_to_string(&state).with_context(|| format!("reading {}", state.display()))?,
            )
            .with_context(|| format!("parsing {}", state.display()))?;
            let goal: Goal = goal.parse()?;
            let mut text = String::new();
            match plan(&start, &goal, cfg.plan_depth)? {
                Some(p) => {
                    text.push_str(&p.dump());
                    if let Some(c) = &checkpoint {
                        let reg = load_registry(c)?;
                        let prob = verify_goal(&p, &start, &goal, &reg)?;
                        text.push_str(&format!("verified: {prob:.4}\n"));
                    }
                }
                None => text.push_str(&format!("no plan within {} steps\n", cfg.plan_depth)),
            }
            print!("{text}");
            if let Some(out) = out {
                let mut run = Run::start("plan", &out, &cfg)?;
                run.input(&state)?;
                if let Some(p) = &checkpoint {
                    run.input(p)?;
                }
                fs::write(run.path("plan.txt"), &text)?;
                run.output("plan.txt")?;
                run.finish()?;
            }
            Ok(())
        }
        Command::Export { metrics, format, out } => {
            let mut run = Run::start("export", &out, &cfg)?;
            let rows = read_metrics_csv(&metrics).with_context(|| format!("reading {}", metrics.display()))?;
            run.input(&metrics)?;
            let name = match format {
                Format::Json => {
                    fs::write(run.path("metrics.json"), serde_json::to_string_pretty(&rows)? + "\n")?;
                    "metrics.json"
                }
                Format::Csv => {
                    write_metrics_csv(&run.path("metrics.csv"), &rows)?;
                    "metrics.csv"
                }
            };
            run.output(name)?;
            println!("{} rows -> {}", rows.len(), run.path(name).display());
            run.finish()
        }
    }
}
