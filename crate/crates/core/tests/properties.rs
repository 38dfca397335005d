use proptest::prelude::*;

use nscl::actions::{apply_action, grounded_actions, plan, random_goal, Goal, GroundedAction, Plan, TabletopState};
use nscl::autodiff::{gradient_at, Tape};
use nscl::concepts::{FeatureSpec, Registry, ScoringConfig};
use nscl::dsl::{enumerate_programs, parse_program, type_check, Program, ValueType};
use nscl::executor::{execute, predict, Mode};
use nscl::par;
use nscl::worldgen::domain::Attribute;
use nscl::worldgen::{gen_scene, oracle_execute, synth_features, Palette, SceneRecord};

fn answer_types() -> Vec<ValueType> {
    let mut types = vec![ValueType::Bool, ValueType::Int];
    types.extend(Attribute::ALL.iter().map(|a| ValueType::ConceptName(a.name().into())));
    types
}

fn sampled(reg: &Registry, seed: u64, ty: usize, max_depth: usize) -> Program {
    let types = answer_types();
    enumerate_programs(max_depth, reg, types[ty % types.len()].clone(), seed).next().expect("program fits")
}

fn small_registry() -> Registry {
    Registry::standard(ScoringConfig { dim: 8, ..Default::default() }, 3)
}

fn scene(seed: u64, n: usize, palette: &Palette, features: &FeatureSpec) -> SceneRecord {
    let mut s = gen_scene(seed, n, palette).unwrap();
    synth_features(&mut s, features);
    s
}

/// `scene` with slot `i` holding old object `perm[i]`.
fn permuted(scene: &SceneRecord, perm: &[usize]) -> SceneRecord {
    let n = scene.len();
    let mut out = scene.clone();
    out.objects = perm.iter().map(|&p| scene.objects[p].clone()).collect();
    out.object_features = perm.iter().map(|&p| scene.object_features[p].clone()).collect();
    out.pair_features = (0..n * n).map(|k| scene.pair_features[perm[k / n] * n + perm[k % n]].clone()).collect();
    out
}

fn exhaustive_shortest(state: &TabletopState, goal: &Goal, cap: usize) -> Option<usize> {
    let actions = grounded_actions(state.objects.len());
    let mut level = vec![state.clone()];
    for depth in 0..=cap {
        if level.iter().any(|s| goal.holds(s)) {
            return Some(depth);
        }
        level = level.iter().flat_map(|s| actions.iter().filter_map(|a| apply_action(a, s).ok())).collect();
    }
    None
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn linear_gradient_is_the_coefficient(c in prop::collection::vec(-5.0f64..5.0, 1..10)) {
        let x = vec![0.25; c.len()];
        let f = |t: &mut Tape, x| { let k = t.constant(c.clone())?; t.dot(x, k) };
        prop_assert_eq!(gradient_at(&f, &x).unwrap(), c.clone());
    }

    #[test]
    fn softmax_sum_has_no_gradient(x in prop::collection::vec(-10.0f64..10.0, 1..10)) {
        let f = |t: &mut Tape, x| { let s = t.softmax(x)?; t.sum(s) };
        prop_assert!(gradient_at(&f, &x).unwrap().iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn sampled_programs_type_check_and_round_trip(seed in any::<u64>(), ty in 0usize..6, depth in 2usize..=6) {
        let reg = small_registry();
        let p = sampled(&reg, seed, ty, depth);
        prop_assert!(p.depth() <= depth);
        prop_assert!(type_check(&p, &reg).is_ok());
        prop_assert_eq!(parse_program(&p.to_string()).unwrap(), p);
    }

    #[test]
    fn hard_mode_matches_oracle(seed in any::<u64>(), ty in 0usize..6, n in 1usize..=6) {
        let reg = Registry::for_world(ScoringConfig { dim: 8, ..Default::default() }, FeatureSpec::default(), 0, &[]);
        let s = scene(seed, n, &Palette::full(), &reg.features);
        let p = sampled(&reg, seed ^ 0x5EED, ty, 6);
        if let Some(expected) = oracle_execute(&p, &s) {
            prop_assert_eq!(predict(&reg, &p, &s, Mode::Hard).unwrap(), expected);
        }
    }

    #[test]
    fn soft_answers_are_permutation_invariant(seed in any::<u64>(), ty in 0usize..6, n in 2usize..=6, rot in 1usize..6) {
        let reg = small_registry();
        let s = scene(seed, n, &Palette::base(), &reg.features);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.rotate_left(rot % n);
        perm.swap(0, n - 1);
        let t = permuted(&s, &perm);
        let p = sampled(&reg, seed ^ 0xA11, ty, 4);
        let (mut a, mut b) = (reg.score_context(), reg.score_context());
        let (da, _) = execute(&p, &s, &mut a, Mode::Soft).unwrap();
        let (db, _) = execute(&p, &t, &mut b, Mode::Soft).unwrap();
        prop_assert_eq!(&da.support, &db.support);
        for (x, y) in da.probabilities(&a).iter().zip(db.probabilities(&b)) {
            prop_assert!((x - y).abs() < 1e-9, "{} vs {} for {}", x, y, p);
        }
        prop_assert_eq!(oracle_execute(&p, &s), oracle_execute(&p, &t));
    }

    #[test]
    fn scenes_are_a_function_of_the_seed(seed in any::<u64>(), n in 1usize..=10) {
        let a = scene(seed, n, &Palette::base(), &FeatureSpec::default());
        prop_assert_eq!(a.len(), n);
        prop_assert_eq!(&a, &scene(seed, n, &Palette::base(), &FeatureSpec::default()));
        prop_assert!(a.objects.iter().all(|o| (0.0..=1.0).contains(&o.x) && (0.0..=1.0).contains(&o.y)));
    }

    #[test]
    fn parallel_map_matches_sequential(xs in prop::collection::vec(any::<i64>(), 0..200)) {
        let f = |x: &i64| x.wrapping_mul(31).rotate_left(7);
        prop_assert_eq!(par::map(&xs, f), par::map_sequential(&xs, f));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn checkpoints_round_trip(seed in any::<u64>()) {
        let reg = Registry::standard(ScoringConfig { dim: 4, ..Default::default() }, seed);
        let text = reg.to_json();
        prop_assert_eq!(Registry::from_json(&text).unwrap().to_json(), text);
    }

    #[test]
    fn plans_are_sound_and_shortest(seed in any::<u64>(), n in 2usize..=3, goal_seed in any::<u64>()) {
        let state = TabletopState::random(seed, n).unwrap();
        let goal = random_goal(goal_seed, &state).unwrap();
        let cap = 3;
        let found = plan(&state, &goal, cap).unwrap();
        prop_assert_eq!(found.as_ref().map(Plan::len), exhaustive_shortest(&state, &goal, cap));
        if let Some(p) = found {
            prop_assert!(goal.holds(&p.execute(&state).unwrap()));
        }
    }

    #[test]
    fn goals_round_trip_through_text(seed in any::<u64>(), n in 2usize..=6) {
        let state = TabletopState::random(seed, n).unwrap();
        let goal = random_goal(seed.rotate_left(17), &state).unwrap();
        prop_assert_eq!(goal.to_string().parse::<Goal>().unwrap(), goal);
    }

    #[test]
    fn applicable_actions_establish_their_postcondition(seed in any::<u64>(), n in 2usize..=5, pick in any::<prop::sample::Index>()) {
        let mut state = TabletopState::random(seed, n).unwrap();
        state = apply_action(&GroundedAction::pick(pick.index(n)), &state).unwrap();
        for a in grounded_actions(n) {
            match apply_action(&a, &state) {
                Ok(next) => prop_assert!(a.postcondition(&state).unwrap().iter().all(|atom| atom.holds(&next)), "{}", a),
                Err(_) => prop_assert!(!a.precondition(&state).unwrap().iter().all(|atom| atom.holds(&state)), "{}", a),
            }
        }
    }
}
