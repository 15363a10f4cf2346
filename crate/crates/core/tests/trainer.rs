mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use routerag::reward::{GrpoConfig, RewardConfig, Stage};
use routerag::trainer::{
    grpo_update, rollout_group, surrogate_gradient, surrogate_objective, train_stage, train_two_stage, Decision,
    QuestionType, ReportRecord, SimAction, SimEnv, SimTrajectory, TabularPolicy, TrainConfig, TrainError,
    GRAPH_EVIDENCE, PASSAGE_EVIDENCE,
};

use common::{finite_difference, kink_distance, random_gradient_case, relative_error};

fn forcing(env: &SimEnv, action: SimAction) -> TabularPolicy {
    let mut p = TabularPolicy::uniform(env.state_count());
    for s in 0..env.state_count() {
        let mut l = [-30.0; 4];
        l[action.index()] = 30.0;
        p.set_state_logits(s, l);
    }
    p
}

#[test]
fn forced_answer_never_retrieves() {
    let env = SimEnv::default();
    let policy = forcing(&env, SimAction::Answer);
    for qt in 0..env.question_types.len() {
        for t in rollout_group(&env, &policy, qt, 5, 11) {
            assert_eq!(t.retrieval_turns, 0);
            assert_eq!(t.decisions.len(), 1);
            assert!(t.answered);
            assert_eq!(t.correct, env.question_types[qt].requirement == 0);
        }
    }
}

#[test]
fn uniform_rollouts_respect_the_cap() {
    let env = SimEnv::default();
    let policy = TabularPolicy::uniform(env.state_count());
    for seed in 0..50 {
        for t in rollout_group(&env, &policy, (seed % 4) as usize, 5, seed) {
            assert!(t.decisions.len() <= env.cap);
            assert!(t.retrieval_turns <= env.cap);
            if !t.answered {
                assert!(!t.correct);
                assert_eq!(t.decisions.len(), env.cap);
            }
            let cost: f64 = t
                .decisions
                .iter()
                .filter_map(|d| d.action.mode())
                .map(|m| env.unit_costs.for_mode(m))
                .sum();
            assert_eq!(cost, t.cost);
        }
    }
}

#[test]
fn rollouts_are_seed_deterministic_and_record_log_probs() {
    let env = SimEnv::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let policy = common::random_policy(&mut rng, env.state_count(), 2.0);
    let a = rollout_group(&env, &policy, 3, 5, 42);
    let b = rollout_group(&env, &policy, 3, 5, 42);
    assert_eq!(a, b);
    assert_ne!(a, rollout_group(&env, &policy, 3, 5, 43));
    for d in a.iter().flat_map(|t| &t.decisions) {
        assert_eq!(d.old_log_prob, policy.log_probability(d.state, d.action.index()));
    }
}

#[test]
fn exact_evaluation_matches_monte_carlo() {
    let env = SimEnv::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let policy = common::random_policy(&mut rng, env.state_count(), 1.5);
    let exact = env.evaluate(&policy);
    let n = 200_000;
    let (mut correct, mut turns, mut cost) = (0.0, 0.0, 0.0);
    for _ in 0..n {
        let qt = env.sample_question_type(&mut rng);
        let t = env.rollout(&policy, qt, &mut rng);
        correct += f64::from(t.outcome());
        turns += t.retrieval_turns as f64;
        cost += t.cost;
    }
    let n = n as f64;
    // five standard errors at most
    assert!((correct / n - exact.accuracy).abs() < 5.0 * (0.25 / n).sqrt());
    assert!((turns / n - exact.mean_turns).abs() < 5.0 * (4.0 / n).sqrt());
    assert!((cost / n - exact.mean_cost).abs() < 5.0 * (256.0 / n).sqrt());
}

#[test]
fn gradient_matches_finite_differences_on_random_instances() {
    let mut checked = 0;
    let mut seed = 0;
    while checked < 50 {
        let case = random_gradient_case(seed);
        seed += 1;
        if kink_distance(&case) < 1e-3 {
            continue;
        }
        let analytic = surrogate_gradient(&case.current, &case.reference, &case.groups, &case.advantages, &case.grpo);
        let numeric = finite_difference(&case.current, 1e-5, |p| {
            surrogate_objective(p, &case.reference, &case.groups, &case.advantages, &case.grpo)
        });
        let err = relative_error(&analytic.gradient, &numeric);
        assert!(err <= 1e-5, "seed {}: relative error {err}", seed - 1);
        let direct = surrogate_objective(&case.current, &case.reference, &case.groups, &case.advantages, &case.grpo);
        assert!((analytic.objective - direct).abs() < 1e-12);
        checked += 1;
    }
}

#[test]
fn gradient_on_hand_built_two_state_env() {
    // one question type that needs passage evidence, cap 2
    let env = SimEnv {
        question_types: vec![QuestionType::new("p", PASSAGE_EVIDENCE, 1.0)],
        cap: 2,
        ..SimEnv::default()
    };
    let old = TabularPolicy::uniform(env.state_count());
    let mut current = old.clone();
    current.logits_mut()[0] += 0.1;
    current.logits_mut()[7] -= 0.05;
    let grpo = GrpoConfig {
        kl_coefficient: 0.1,
        ..GrpoConfig::default()
    };
    let groups = vec![rollout_group(&env, &old, 0, 6, 9)];
    let advantages = vec![vec![1.0, -1.0, 0.5, -0.5, 0.25, -0.25]];
    let analytic = surrogate_gradient(&current, &old, &groups, &advantages, &grpo);
    let numeric = finite_difference(&current, 1e-5, |p| surrogate_objective(p, &old, &groups, &advantages, &grpo));
    assert!(relative_error(&analytic.gradient, &numeric) <= 1e-5);
}

fn single_decision(state: usize, action: SimAction, old_log_prob: f64) -> Vec<Vec<SimTrajectory>> {
    vec![vec![SimTrajectory {
        question_type: 0,
        decisions: vec![Decision {
            state,
            action,
            old_log_prob,
        }],
        answered: true,
        correct: true,
        retrieval_turns: 0,
        cost: 0.0,
    }]]
}

#[test]
fn clipping_removes_the_policy_gradient() {
    let policy = TabularPolicy::from_logits(vec![2.0, 0.0, 0.0, 0.0]);
    let reference = policy.clone();
    let grpo = GrpoConfig {
        kl_coefficient: 0.0,
        ..GrpoConfig::default()
    };
    // ratio = pi / pi_old = 2, far above 1 + eps
    let old = policy.log_probability(0, 0) - 2f64.ln();
    let groups = single_decision(0, SimAction::SearchPassage, old);

    let positive = surrogate_gradient(&policy, &reference, &groups, &[vec![1.0]], &grpo);
    assert_eq!(positive.clipped, 1);
    assert!(positive.gradient.iter().all(|g| *g == 0.0));
    assert!((positive.objective - 1.2).abs() < 1e-12);

    let negative = surrogate_gradient(&policy, &reference, &groups, &[vec![-1.0]], &grpo);
    assert_eq!(negative.clipped, 0);
    assert_eq!(negative.out_of_range, 1);
    assert!(negative.gradient[0] < 0.0);
    assert!((negative.objective + 2.0).abs() < 1e-12);
}

#[test]
fn probabilities_stay_normalized_through_training() {
    let env = SimEnv::default();
    let (policy, _) = train_two_stage(&env, &TrainConfig::default(), 10, 10, 1).unwrap();
    for s in 0..env.state_count() {
        let p = policy.probabilities(s);
        assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert!(p.iter().all(|x| *x >= 0.0));
    }
}

#[test]
fn zero_advantages_leave_logits_unchanged() {
    // every question is answered correctly at once, so every reward is 1
    let env = SimEnv::answer_immediately();
    let policy = forcing(&env, SimAction::Answer);
    let groups = vec![rollout_group(&env, &policy, 0, 5, 1), rollout_group(&env, &policy, 0, 5, 2)];
    let grpo = GrpoConfig {
        kl_coefficient: 0.1,
        ..GrpoConfig::default()
    };
    for stage in [Stage::One, Stage::Two] {
        let reward = RewardConfig {
            stage,
            ..RewardConfig::default()
        };
        let mut updated = policy.clone();
        let stats = grpo_update(&mut updated, &policy, &groups, &reward, &grpo, 1.0, 2).unwrap();
        assert_eq!(updated, policy);
        assert!(stats.objective <= 0.0);

        // with a different reference only the KL term remains, and it is a penalty
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let reference = common::random_policy(&mut rng, env.state_count(), 1.0);
        let mut updated = policy.clone();
        let stats = grpo_update(&mut updated, &reference, &groups, &reward, &grpo, 1e-3, 1).unwrap();
        assert!(stats.objective <= 0.0);
    }
}

#[test]
fn non_finite_logits_are_reported() {
    let env = SimEnv::default();
    let clean = TabularPolicy::uniform(env.state_count());
    let groups: Vec<Vec<SimTrajectory>> = (0..8).map(|g| rollout_group(&env, &clean, g % 4, 5, g as u64)).collect();
    let mut broken = TabularPolicy::from_logits(vec![f64::NAN; clean.logits().len()]);
    let err = grpo_update(&mut broken, &clean, &groups, &RewardConfig::default(), &GrpoConfig::default(), 1.0, 1);
    assert_eq!(err.unwrap_err(), TrainError::NonFiniteGradient);
}

#[test]
fn invalid_configurations_are_rejected() {
    let env = SimEnv::default();
    let small_group = TrainConfig {
        grpo: GrpoConfig {
            group_size: 1,
            ..GrpoConfig::default()
        },
        ..TrainConfig::default()
    };
    assert!(matches!(train_stage(&env, &small_group, Stage::One, 1, 0), Err(TrainError::InvalidConfig(_))));
    assert!(matches!(
        train_two_stage(&env, &TrainConfig::default(), 0, 5, 0),
        Err(TrainError::InvalidConfig(_))
    ));
    let bad_env = SimEnv {
        cap: 0,
        ..SimEnv::default()
    };
    assert!(matches!(train_stage(&bad_env, &TrainConfig::default(), Stage::One, 1, 0), Err(TrainError::InvalidConfig(_))));
}

#[test]
fn stage_one_improves_accuracy_for_seed_seven() {
    let env = SimEnv::default();
    let (_, report) = train_stage(&env, &TrainConfig::default(), Stage::One, 20, 7).unwrap();
    let last = report.last_update(Stage::One).unwrap();
    assert_eq!(report.updates().count(), 20);
    assert!(last.accuracy > report.baseline.accuracy, "{} <= {}", last.accuracy, report.baseline.accuracy);
}

#[test]
fn stage_two_cuts_cost_for_seed_seven() {
    let env = SimEnv::default();
    let (_, report) = train_two_stage(&env, &TrainConfig::default(), 20, 20, 7).unwrap();
    let s1 = report.last_update(Stage::One).unwrap();
    let s2 = report.last_update(Stage::Two).unwrap();
    assert!(s2.mean_cost < s1.mean_cost, "{} >= {}", s2.mean_cost, s1.mean_cost);
    assert!(s2.accuracy - s1.accuracy >= -0.02, "{} vs {}", s2.accuracy, s1.accuracy);
    assert_eq!(report.records[20], ReportRecord::StageBoundary { after_step: 20 });
    assert_eq!(report.records.len(), 41);
    let steps: Vec<usize> = report.updates().map(|u| u.step).collect();
    assert_eq!(steps, (1..=40).collect::<Vec<_>>());
}

#[test]
fn zero_stage_two_steps_equals_stage_one_training() {
    let env = SimEnv::default();
    let cfg = TrainConfig::default();
    let (p1, r1) = train_two_stage(&env, &cfg, 6, 0, 13).unwrap();
    let (p2, r2) = train_stage(&env, &cfg, Stage::One, 6, 13).unwrap();
    assert_eq!(p1, p2);
    assert_eq!(r1, r2);
    assert!(r1.records.iter().all(|r| matches!(r, ReportRecord::Update(_))));
}

#[test]
fn immediate_answer_env_learns_not_to_retrieve() {
    let env = SimEnv::answer_immediately();
    let (policy, _) = train_two_stage(&env, &TrainConfig::default(), 20, 20, 7).unwrap();
    let eval = env.evaluate(&policy);
    assert!(eval.mean_turns < 0.1, "{}", eval.mean_turns);
}

#[test]
fn training_is_deterministic() {
    let env = SimEnv::default();
    let cfg = TrainConfig::default();
    let (pa, ra) = train_two_stage(&env, &cfg, 4, 4, 21).unwrap();
    let (pb, rb) = train_two_stage(&env, &cfg, 4, 4, 21).unwrap();
    assert_eq!(pa, pb);
    let (mut a, mut b) = (Vec::new(), Vec::new());
    ra.write_jsonl(&mut a).unwrap();
    rb.write_jsonl(&mut b).unwrap();
    assert_eq!(a, b);
}

#[test]
fn graph_questions_shift_toward_graph_modes() {
    let env = SimEnv {
        question_types: vec![QuestionType::new("graph", GRAPH_EVIDENCE, 1.0)],
        ..SimEnv::default()
    };
    let (policy, _) = train_stage(&env, &TrainConfig::default(), Stage::One, 20, 7).unwrap();
    let first = policy.probabilities(env.state_index(0, 0, 0));
    assert!(first[SimAction::SearchPassage.index()] < first[SimAction::SearchGraph.index()] + first[SimAction::SearchHybrid.index()]);
}
