//! Acceptance suite: one pass/fail line per criterion.
//!
//! Runs without the libtest harness so every line is printed even when an
//! earlier criterion fails. The process exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nscl::actions::{plan, random_goal, verify_goal, TabletopState, DEFAULT_PLAN_DEPTH};
use nscl::autodiff::{grad_check, NodeId, Tape};
use nscl::concepts::{FeatureSpec, Registry, ScoringConfig};
use nscl::dsl::{enumerate_programs, parse_program, type_check, Program, ValueType};
use nscl::executor::{answer_loss, predict, Executor, Mode};
use nscl::learning::suite::{
    compositional, data_efficiency, fresh_registry, retrieval, SuiteConfig, BASELINE_MODEL, CONCEPT_MODEL,
};
use nscl::learning::{
    evaluate, fewshot_examples, fewshot_learn_concept, probe_scenes, train, FewShotConfig, StagedData,
};
use nscl::worldgen::domain::Attribute;
use nscl::worldgen::{
    build_dataset, derive_seed, gen_scene, oracle_execute, synth_features, Dataset, DatasetSpec, Palette, StageSpec,
    NOVEL_COLOR,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(bool, String), String>;

const GRAD_CASES: u64 = 100;
const GRAD_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;
const ORACLE_SCENES: u64 = 100;
const ORACLE_PROGRAMS: usize = 10_000;
const QA_ACCURACY: f64 = 0.95;
const CONCEPT_ACCURACY: f64 = 0.98;
const EFFICIENCY_MARGIN: f64 = 0.10;
const COMPOSITIONAL_DROP: f64 = 0.05;
const FEWSHOT_ACCURACY: f64 = 0.90;
const FEWSHOT_SHOTS: usize = 5;
const RETRIEVAL_ACCURACY: f64 = 0.90;
const GOALS: u64 = 100;
const VERIFY_PROBABILITY: f64 = 0.9;
const VERIFY_SHARE: f64 = 0.95;

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

type Probe = Box<dyn Fn(&mut Tape, NodeId) -> nscl::autodiff::Result<NodeId>>;

/// Each primitive applied to the input, reduced to a scalar by a dot with a
/// fixed random weight vector.
fn primitive_probes(rng: &mut ChaCha8Rng, n: usize) -> Vec<(&'static str, Probe)> {
    let w = random_vec(rng, 2 * n);
    let c = random_vec(rng, n);
    let m = random_vec(rng, 3 * n);
    let s = rng.random_range(-2.0..2.0);
    let shift = rng.random_range(-1.0..1.0);
    let k = rng.random_range(0..n);
    let reduce = move |t: &mut Tape, v: NodeId| {
        let len = t.value(v).len();
        let wk = t.constant(w[..len].to_vec())?;
        t.dot(v, wk)
    };
    let c2 = c.clone();
    let c3 = c.clone();
    let c4 = c.clone();
    let mut probes: Vec<(&'static str, Probe)> = Vec::new();
    let r = reduce.clone();
    probes.push((
        "add",
        Box::new(move |t, x| {
            let k = t.constant(c.clone())?;
            let y = t.add(x, k)?;
            let y = t.mul(y, y)?;
            r(t, y)
        }),
    ));
    let r = reduce.clone();
    probes.push((
        "sub",
        Box::new(move |t, x| {
            let k = t.constant(c2.clone())?;
            let y = t.sub(k, x)?;
            let y = t.mul(y, x)?;
            r(t, y)
        }),
    ));
    let r = reduce.clone();
    probes.push((
        "mul",
        Box::new(move |t, x| {
            let y = t.mul(x, x)?;
            r(t, y)
        }),
    ));
    let r = reduce.clone();
    probes.push((
        "scale",
        Box::new(move |t, x| {
            let first = t.index(x, 0)?;
            let y = t.scale(x, first)?;
            r(t, y)
        }),
    ));
    let r = reduce.clone();
    probes.push((
        "affine",
        Box::new(move |t, x| {
            let y = t.affine(x, s, shift)?;
            let y = t.mul(y, y)?;
            r(t, y)
        }),
    ));
    probes.push(("dot", Box::new(|t, x| t.dot(x, x))));
    probes.push((
        "sum",
        Box::new(|t, x| {
            let y = t.mul(x, x)?;
            t.sum(y)
        }),
    ));
    probes.push((
        "max",
        Box::new(|t, x| {
            let y = t.mul(x, x)?;
            t.max(y)
        }),
    ));
    let r = reduce.clone();
    probes.push((
        "sigmoid",
        Box::new(move |t, x| {
            let y = t.sigmoid(x)?;
            r(t, y)
        }),
    ));
    let r = reduce.clone();
    probes.push((
        "exp",
        Box::new(move |t, x| {
            let y = t.exp(x)?;
            r(t, y)
        }),
    ));
    let r = reduce.clone();
    probes.push((
        "log",
        Box::new(move |t, x| {
            let sq = t.mul(x, x)?;
            let pos = t.affine(sq, 1.0, 0.1)?;
            let y = t.log(pos)?;
            r(t, y)
        }),
    ));
    let r = reduce.clone();
    probes.push((
        "div",
        Box::new(move |t, x| {
            let sq = t.mul(x, x)?;
            let pos = t.affine(sq, 1.0, 0.5)?;
            let y = t.div(x, pos)?;
            r(t, y)
        }),
    ));
    let r = reduce.clone();
    probes.push((
        "softmax",
        Box::new(move |t, x| {
            let y = t.softmax(x)?;
            r(t, y)
        }),
    ));
    let r = reduce.clone();
    probes.push((
        "matvec",
        Box::new(move |t, x| {
            let mat = t.constant(m.clone())?;
            let y = t.matvec(mat, x, 3)?;
            r(t, y)
        }),
    ));
    probes.push((
        "cosine",
        Box::new(move |t, x| {
            let k = t.constant(c3.clone())?;
            t.cosine(x, k)
        }),
    ));
    let r = reduce.clone();
    probes.push((
        "concat",
        Box::new(move |t, x| {
            let sq = t.mul(x, x)?;
            let y = t.concat(&[x, sq])?;
            r(t, y)
        }),
    ));
    probes.push((
        "index",
        Box::new(move |t, x| {
            let e = t.exp(x)?;
            t.index(e, k)
        }),
    ));
    let r = reduce.clone();
    probes.push((
        "relu",
        Box::new(move |t, x| {
            let k = t.constant(c4.clone())?;
            let y = t.mul(x, k)?;
            let y = t.relu(y)?;
            r(t, y)
        }),
    ));
    probes
}

/// Programs covering every executor operation and scoring path.
const SCORING_PROGRAMS: [&str; 10] = [
    "(count (filter scene red))",
    "(exist (relate left-of (unique (filter scene cube))))",
    "(query color (unique (filter scene sphere)))",
    "(attr-equal shape (unique (filter scene red)) (unique (filter scene blue)))",
    "(count (relate-same material (unique (filter scene large))))",
    "(count-compare greater (filter scene cube) (filter scene metal))",
    "(exist-pair cube sphere behind)",
    "(count (intersect (filter scene small) (relate front-of (unique (filter scene cylinder)))))",
    "(exist (union (filter scene green) (filter scene rubber)))",
    "(query shape (unique (relate right-of (unique (filter scene gray)))))",
];

type Grads = Vec<(nscl::concepts::ParamKey, Vec<f64>)>;

fn program_loss(
    reg: &Registry,
    program: &Program,
    scene: &nscl::worldgen::SceneRecord,
) -> Result<(f64, Grads), String> {
    let mut scorer = reg.score_context();
    let mut ex = Executor::new(&mut scorer, scene, Mode::Soft).map_err(|e| e.to_string())?;
    let dist = ex.run(program).map_err(|e| e.to_string())?;
    let gold = dist.argmax(ex.scorer);
    let loss = answer_loss(&mut scorer, &dist, &gold).map_err(|e| e.to_string())?;
    let grads = scorer.gradients(loss).map_err(|e| e.to_string())?;
    Ok((scorer.tape.scalar(loss), grads))
}

fn gradient_correctness() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut worst_at = String::new();
    let mut checks = 0usize;
    let programs: Vec<Program> = SCORING_PROGRAMS.iter().map(|p| parse_program(p).unwrap()).collect();
    for case in 0..GRAD_CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(1, 0x6AD, case));
        let n = rng.random_range(3..8);
        let point = random_vec(&mut rng, n);
        for (name, probe) in primitive_probes(&mut rng, n) {
            let err = grad_check(probe, &point, FD_STEP).map_err(|e| format!("{name}: {e}"))?;
            checks += n;
            if err > worst {
                worst = err;
                worst_at = format!("{name} case {case}");
            }
        }
        let rows = rng.random_range(2..5);
        let v = random_vec(&mut rng, n);
        let w = random_vec(&mut rng, rows);
        let matrix = random_vec(&mut rng, rows * n);
        let err = grad_check(
            |t, m| {
                let x = t.constant(v.clone())?;
                let y = t.matvec(m, x, rows)?;
                let wk = t.constant(w.clone())?;
                t.dot(y, wk)
            },
            &matrix,
            FD_STEP,
        )
        .map_err(|e| e.to_string())?;
        checks += matrix.len();
        if err > worst {
            worst = err;
            worst_at = format!("matvec matrix case {case}");
        }

        let mut reg = Registry::standard(ScoringConfig { dim: 8, ..Default::default() }, case);
        let mut scene =
            gen_scene(rng.random(), rng.random_range(3..=6), &Palette::base()).map_err(|e| e.to_string())?;
        synth_features(&mut scene, &reg.features);
        let program = &programs[case as usize % programs.len()];
        let (_, grads) = program_loss(&reg, program, &scene)?;
        for (key, g) in grads {
            let largest = (0..g.len()).max_by(|&a, &b| g[a].abs().total_cmp(&g[b].abs())).unwrap_or(0);
            let random = rng.random_range(0..g.len());
            for i in [largest, random] {
                let original = reg.param(key).value[i];
                reg.param_mut(key).value[i] = original + FD_STEP;
                let (up, _) = program_loss(&reg, program, &scene)?;
                reg.param_mut(key).value[i] = original - FD_STEP;
                let (down, _) = program_loss(&reg, program, &scene)?;
                reg.param_mut(key).value[i] = original;
                let numeric = (up - down) / (2.0 * FD_STEP);
                let err = (g[i] - numeric).abs() / numeric.abs().max(1.0);
                checks += 1;
                if err > worst {
                    worst = err;
                    worst_at = format!("{key:?}[{i}] on `{program}`");
                }
            }
        }
    }
    Ok((
        worst < GRAD_TOL,
        format!(
            "worst rel err {worst:.2e} at {worst_at}; {checks} coordinates, {GRAD_CASES} cases, tol {GRAD_TOL:.0e}"
        ),
    ))
}

fn oracle_equivalence() -> Outcome {
    let reg = Registry::for_world(ScoringConfig { dim: 8, ..Default::default() }, FeatureSpec::default(), 0, &[]);
    let mut types = vec![ValueType::Bool, ValueType::Int];
    types.extend(Attribute::ALL.iter().map(|a| ValueType::ConceptName(a.name().into())));
    let mut samplers: Vec<_> = types
        .iter()
        .enumerate()
        .map(|(k, ty)| enumerate_programs(6, &reg, ty.clone(), derive_seed(2, 0x0AC, k as u64)))
        .collect();
    let per_scene = ORACLE_PROGRAMS / ORACLE_SCENES as usize;
    let (mut valid, mut excluded, mut mismatches) = (0usize, 0usize, Vec::new());
    for s in 0..ORACLE_SCENES {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(2, 0x5CE, s));
        let mut scene =
            gen_scene(rng.random(), rng.random_range(1..=6), &Palette::full()).map_err(|e| e.to_string())?;
        synth_features(&mut scene, &reg.features);
        for k in 0..per_scene {
            let sampler = &mut samplers[k % types.len()];
            let program = sampler.next().ok_or("sampler ran dry")?;
            if program.depth() > 6 {
                return Ok((false, format!("sampled depth {} > 6", program.depth())));
            }
            type_check(&program, &reg).map_err(|e| format!("{program}: {e}"))?;
            let Some(expected) = oracle_execute(&program, &scene) else {
                excluded += 1;
                continue;
            };
            valid += 1;
            match predict(&reg, &program, &scene, Mode::Hard) {
                Ok(got) if got == expected => {}
                other => mismatches.push(format!("{program} on scene {s}: {other:?} vs {expected}")),
            }
        }
    }
    let detail = format!(
        "{}/{valid} agree, {excluded} oracle-invalid excluded, {ORACLE_PROGRAMS} programs over {ORACLE_SCENES} scenes{}",
        valid - mismatches.len(),
        mismatches.first().map(|m| format!("; first mismatch {m}")).unwrap_or_default()
    );
    Ok((mismatches.is_empty() && valid > 0, detail))
}

fn held_out(config: &SuiteConfig) -> Result<Dataset, String> {
    let stages = (1..=3).map(StageSpec::standard).collect::<Result<Vec<_>, _>>().map_err(|e| e.to_string())?;
    build_dataset(&DatasetSpec {
        seed: config.seed ^ 0x7E57,
        size: config.test_size,
        stages,
        palette: Palette::base(),
        features: config.features.clone(),
        id_offset: 20_000_000,
    })
    .map_err(|e| e.to_string())
}

fn learnability(config: &SuiteConfig, test: &Dataset) -> Result<((bool, String), Registry), String> {
    let data = StagedData::generate(config.seed, config.train_size, config.val_per_stage, &config.features)
        .map_err(|e| e.to_string())?;
    let out =
        train(&config.train, fresh_registry(&config.train, &config.features), &data).map_err(|e| e.to_string())?;
    let report = evaluate(&out.registry, test).map_err(|e| e.to_string())?;
    let worst = report
        .per_concept
        .iter()
        .filter(|(_, t)| t.total > 0)
        .min_by(|a, b| a.1.accuracy().total_cmp(&b.1.accuracy()))
        .map(|(n, t)| (n.clone(), t.accuracy()))
        .unwrap_or_default();
    let pass = report.accuracy() >= QA_ACCURACY && worst.1 >= CONCEPT_ACCURACY;
    let detail = format!(
        "QA {:.4} (>= {QA_ACCURACY}) on {} held-out questions; worst concept {} {:.4} (>= {CONCEPT_ACCURACY}); {} epochs",
        report.accuracy(),
        test.len(),
        worst.0,
        worst.1,
        out.history.len()
    );
    Ok(((pass, detail), out.registry))
}

fn data_efficiency_direction(config: &SuiteConfig) -> Outcome {
    let cfg = SuiteConfig { fractions: vec![0.1], ..config.clone() };
    let report = data_efficiency(&cfg).map_err(|e| e.to_string())?;
    let c = report.accuracy(CONCEPT_MODEL, "test", 0.1).ok_or("missing concept row")?;
    let b = report.accuracy(BASELINE_MODEL, "test", 0.1).ok_or("missing baseline row")?;
    Ok((
        c - b >= EFFICIENCY_MARGIN,
        format!("at 10% data concept {c:.4} vs baseline {b:.4}, margin {:.4} (>= {EFFICIENCY_MARGIN})", c - b),
    ))
}

fn compositional_generalization(config: &SuiteConfig) -> Outcome {
    let report = compositional(config).map_err(|e| e.to_string())?;
    let acc = |model: &str, split: &str| report.accuracy(model, split, 1.0).ok_or(format!("missing {model} {split}"));
    let (ci, cg) = (acc(CONCEPT_MODEL, "in-distribution")?, acc(CONCEPT_MODEL, "generalization")?);
    let (bi, bg) = (acc(BASELINE_MODEL, "in-distribution")?, acc(BASELINE_MODEL, "generalization")?);
    let (cd, bd) = (ci - cg, bi - bg);
    Ok((
        cd <= COMPOSITIONAL_DROP && bd > cd,
        format!("concept {ci:.4} -> {cg:.4} (drop {cd:.4} <= {COMPOSITIONAL_DROP}); baseline {bi:.4} -> {bg:.4} (drop {bd:.4})"),
    ))
}

fn fewshot_continual(config: &SuiteConfig, reg: &Registry, test: &Dataset) -> Outcome {
    let start = Instant::now();
    let fs = FewShotConfig::default();
    let examples =
        fewshot_examples(config.seed, NOVEL_COLOR, FEWSHOT_SHOTS, &reg.features).map_err(|e| e.to_string())?;
    let (new, _) =
        fewshot_learn_concept(reg, NOVEL_COLOR, Attribute::Color.name(), &examples, &fs).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    let probe = probe_scenes(config.seed, 200, &reg.features).map_err(|e| e.to_string())?;
    let after = nscl::learning::concept_accuracy(&new, &probe).map_err(|e| e.to_string())?;
    let teal = after.get(NOVEL_COLOR).copied().unwrap_or_default();
    let identical = reg.param_keys().iter().all(|&k| {
        let (a, b) = (&reg.param(k).value, &new.param(k).value);
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
    });
    let before = evaluate(reg, test).map_err(|e| e.to_string())?;
    let after_eval = evaluate(&new, test).map_err(|e| e.to_string())?;
    let flips = (0..test.len())
        .filter(|&i| {
            let q = &test.questions[i];
            let a = predict(reg, &q.program, &test.scenes[i], Mode::Soft).ok();
            let b = predict(&new, &q.program, &test.scenes[i], Mode::Soft).ok();
            a != b
        })
        .count();
    let unchanged = before.overall == after_eval.overall;
    Ok((
        teal.accuracy() >= FEWSHOT_ACCURACY && identical && unchanged && elapsed < 120.0,
        format!(
            "{NOVEL_COLOR} {:.4} (>= {FEWSHOT_ACCURACY}) on {} held-out objects; old params bit-identical: {identical}; eval {:.4} -> {:.4} ({flips} answers changed); fit {elapsed:.1}s",
            teal.accuracy(),
            teal.total,
            before.accuracy(),
            after_eval.accuracy()
        ),
    ))
}

fn retrieval_transfer(config: &SuiteConfig, reg: &Registry) -> Outcome {
    let report = retrieval(config, Some(reg)).map_err(|e| e.to_string())?;
    let row = report
        .rows
        .iter()
        .find(|r| r.split == "captions" && r.question_type == "overall")
        .ok_or("missing caption row")?;
    Ok((
        row.accuracy >= RETRIEVAL_ACCURACY,
        format!("{}/{} captions, {:.4} (>= {RETRIEVAL_ACCURACY})", row.correct, row.n, row.accuracy),
    ))
}

fn action_transfer(reg: &Registry) -> Outcome {
    let (mut sound, mut verified, mut executed) = (0usize, 0usize, 0usize);
    let mut problems = Vec::new();
    for g in 0..GOALS {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(8, 0xAC7, g));
        let state = TabletopState::random(rng.random(), rng.random_range(2..=5)).map_err(|e| e.to_string())?;
        let goal = random_goal(rng.random(), &state).map_err(|e| e.to_string())?;
        let Some(p) = plan(&state, &goal, DEFAULT_PLAN_DEPTH).map_err(|e| e.to_string())? else {
            problems.push(format!("no plan for `{goal}`"));
            continue;
        };
        let reached = p.execute(&state).map(|end| goal.holds(&end)).unwrap_or(false);
        let shortest = p.is_empty() || plan(&state, &goal, p.len() - 1).map_err(|e| e.to_string())?.is_none();
        if reached && shortest {
            sound += 1;
        } else {
            problems.push(format!("`{goal}`: reached {reached}, shortest {shortest}"));
        }
        executed += 1;
        if verify_goal(&p, &state, &goal, reg).map_err(|e| e.to_string())? >= VERIFY_PROBABILITY {
            verified += 1;
        }
    }
    let share = verified as f64 / executed.max(1) as f64;
    Ok((
        sound as u64 == GOALS && share >= VERIFY_SHARE,
        format!(
            "{sound}/{GOALS} sound shortest plans; {verified}/{executed} verified at >= {VERIFY_PROBABILITY} ({share:.2} >= {VERIFY_SHARE}){}",
            problems.first().map(|p| format!("; {p}")).unwrap_or_default()
        ),
    ))
}

fn nscl(args: &[&str], cwd: &Path) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_nscl")).args(args).current_dir(cwd).output().map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!("nscl {}: {}", args.join(" "), String::from_utf8_lossy(&o.stderr)))
    }
}

/// Every file under `dir`, with manifest timing fields removed.
fn snapshot(dir: &Path, prefix: &str, out: &mut BTreeMap<String, Vec<u8>>) -> Result<(), String> {
    let mut entries: Vec<_> = fs::read_dir(dir).map_err(|e| e.to_string())?.map(|e| e.unwrap().path()).collect();
    entries.sort();
    for path in entries {
        let name = format!("{prefix}/{}", path.file_name().unwrap().to_string_lossy());
        if path.is_dir() {
            snapshot(&path, &name, out)?;
            continue;
        }
        let mut bytes = fs::read(&path).map_err(|e| e.to_string())?;
        if name.ends_with("manifest.json") {
            let mut v: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| e.to_string())?;
            for k in ["started_unix_ms", "finished_unix_ms", "wall_clock_secs"] {
                v.as_object_mut().ok_or("manifest is not an object")?.remove(k);
            }
            bytes = serde_json::to_vec(&v).map_err(|e| e.to_string())?;
        }
        out.insert(name, bytes);
    }
    Ok(())
}

const SMALL_CONFIG: &str = r#"{"seed": 11, "train": {"max_epochs_per_stage": 2, "scoring": {"dim": 16, "gamma": 0.4, "tau": 0.08, "tau_query": 0.25}},
"train_size": 240, "val_per_stage": 20, "test_size": 60, "captions": 30, "fewshot": {"steps": 20}}"#;

fn run_commands(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    fs::write(dir.join("config.json"), SMALL_CONFIG).map_err(|e| e.to_string())?;
    let state = r#"{"objects": [
        {"color":"red","shape":"cube","size":"small","material":"rubber","x":0.5,"y":0.5},
        {"color":"blue","shape":"sphere","size":"large","material":"metal","x":0.3,"y":0.7}]}"#;
    fs::write(dir.join("state.json"), state).map_err(|e| e.to_string())?;
    let c = ["--config", "config.json"];
    let with = |rest: &[&str]| -> Vec<String> { c.iter().chain(rest).map(|s| s.to_string()).collect() };
    for args in [
        with(&["gen", "--out", "data", "--size", "240", "--captions", "30"]),
        with(&["train", "--data", "data", "--out", "train"]),
        with(&["eval", "--checkpoint", "train/checkpoint.json", "--data", "data", "--out", "eval"]),
        with(&["suite", "data-efficiency", "--fractions", "0.5,1.0", "--out", "suite-de"]),
        with(&["suite", "compositional", "--out", "suite-comp"]),
        with(&["suite", "retrieval", "--checkpoint", "train/checkpoint.json", "--out", "suite-ret"]),
        with(&[
            "fewshot",
            "--checkpoint",
            "train/checkpoint.json",
            "--word",
            NOVEL_COLOR,
            "--data",
            "data",
            "--out",
            "fewshot",
        ]),
        with(&[
            "query",
            "--scene",
            "data/scenes.jsonl",
            "--question",
            "How many red things are there?",
            "--checkpoint",
            "train/checkpoint.json",
            "--trace",
            "--out",
            "query",
        ]),
        with(&[
            "plan",
            "--state",
            "state.json",
            "--goal",
            "left(a,b) & red(a)",
            "--checkpoint",
            "train/checkpoint.json",
            "--out",
            "plan",
        ]),
        with(&["export", "--metrics", "eval/metrics.csv", "--out", "export"]),
    ] {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        nscl(&args, dir)?;
    }
    let mut files = BTreeMap::new();
    snapshot(dir, "", &mut files)?;
    Ok(files)
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
    let first = run_commands(a.path())?;
    let second = run_commands(b.path())?;
    let differing: Vec<&String> = first.keys().filter(|k| first.get(*k) != second.get(*k)).collect();
    let same_set = first.keys().eq(second.keys());
    Ok((
        same_set && differing.is_empty(),
        format!(
            "{} files from gen/train/eval/suite/fewshot/query/plan/export compared across two runs; differing: {:?}",
            first.len(),
            differing
        ),
    ))
}

fn report(n: usize, name: &str, start: Instant, outcome: Outcome, failures: &mut usize) {
    let secs = start.elapsed().as_secs_f64();
    let (pass, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    if !pass {
        *failures += 1;
    }
    println!("criterion {n} {name}: {} ({detail}; {secs:.1}s)", if pass { "PASS" } else { "FAIL" });
}

fn main() {
    let mut failures = 0;
    let config = SuiteConfig::default();

    let t = Instant::now();
    report(1, "gradient correctness", t, gradient_correctness(), &mut failures);
    let t = Instant::now();
    report(2, "oracle equivalence", t, oracle_equivalence(), &mut failures);

    let t = Instant::now();
    let trained = held_out(&config).and_then(|test| learnability(&config, &test).map(|r| (r, test)));
    let (reg, test) = match trained {
        Ok((((pass, detail), reg), test)) => {
            report(3, "learnability", t, Ok((pass, detail)), &mut failures);
            (Some(reg), Some(test))
        }
        Err(e) => {
            report(3, "learnability", t, Err(e), &mut failures);
            (None, None)
        }
    };
    let need = || -> Result<(&Registry, &Dataset), String> {
        Ok((reg.as_ref().ok_or("no trained registry")?, test.as_ref().ok_or("no test split")?))
    };

    let t = Instant::now();
    report(4, "data-efficiency direction", t, data_efficiency_direction(&config), &mut failures);
    let t = Instant::now();
    report(5, "compositional generalization", t, compositional_generalization(&config), &mut failures);
    let t = Instant::now();
    report(
        6,
        "few-shot continual learning",
        t,
        need().and_then(|(r, d)| fewshot_continual(&config, r, d)),
        &mut failures,
    );
    let t = Instant::now();
    report(7, "zero-shot retrieval", t, need().and_then(|(r, _)| retrieval_transfer(&config, r)), &mut failures);
    let t = Instant::now();
    report(8, "action-domain transfer", t, need().and_then(|(r, _)| action_transfer(r)), &mut failures);
    let t = Instant::now();
    report(9, "determinism", t, determinism(), &mut failures);

    println!("acceptance: {} of 9 criteria passed", 9 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
