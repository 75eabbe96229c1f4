use dwrl_core::baselines::{
    bt_batch_gradient, bt_batch_loss, pairwise_grpo_gradient, pairwise_grpo_objective, pointwise_grpo_gradient,
    pointwise_grpo_objective, rollout_pairwise, rollout_pointwise, train_bt,
};
use dwrl_core::data::generate_channel_cue;
use dwrl_core::estimators::exact_loss;
use dwrl_core::pairwise::PairwiseGpm;
use dwrl_core::training::{
    ablation_no_misalignment, ablation_prefilled_thoughts, recompute_weights, rollout, score_gradient, score_step,
    thought_step, train_dwrl, FrozenThoughts, StepOptions, TrainState,
};
use dwrl_core::verify::{central_difference, relative_error};
use dwrl_core::*;

fn small_task() -> SyntheticTask {
    SyntheticTask {
        vocab: 3,
        thought_len: 2,
        dim: 6,
        ..SyntheticTask::default()
    }
}

fn small_config() -> TrainConfig {
    TrainConfig {
        rollout_batch: 16,
        train_batch: 8,
        epochs: 2,
        ..TrainConfig::default()
    }
}

#[test]
fn history_has_one_record_per_batch_and_is_deterministic() {
    let data = generate_channel_cue(&small_task(), 60, Split::Train, 1).unwrap();
    let cfg = small_config();
    let a = train_dwrl(&cfg, &data).unwrap();
    let b = train_dwrl(&cfg, &data).unwrap();
    assert_eq!(a.history.records.len(), cfg.epochs * 60usize.div_ceil(cfg.train_batch));
    assert_eq!(a.history.epoch_exact_loss.len(), cfg.epochs);
    assert!(a.history.epoch_exact_loss.iter().all(|l| l.is_some()));
    assert_eq!(a.history.to_csv(), b.history.to_csv());
    assert_eq!(a.model, b.model);
    let other = train_dwrl(&TrainConfig { seed: 5, ..cfg }, &data).unwrap();
    assert_ne!(a.model, other.model);
}

#[test]
fn training_is_independent_of_thread_count() {
    let data = generate_channel_cue(&small_task(), 40, Split::Train, 2).unwrap();
    let cfg = small_config();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| train_dwrl(&cfg, &data).unwrap())
    };
    let one = run(1);
    let four = run(4);
    assert_eq!(one.model, four.model);
    assert_eq!(one.history.to_csv(), four.history.to_csv());
}

#[test]
fn group_of_one_has_unit_weight_and_zero_advantage() {
    let data = generate_channel_cue(&small_task(), 5, Split::Train, 3).unwrap();
    let batch: Vec<&PreferencePair> = data.pairs.iter().collect();
    let mut rng = SeedStream::new(3).rng();
    let state = TrainState::new(GpmModel::random(3, 2, 6, 1.0, &mut rng).unwrap());
    for w in rollout(&state, &batch, 1, &SeedStream::new(4)).unwrap() {
        assert_eq!(w.group_plus.norm_weights, vec![1.0]);
        assert_eq!(w.group_minus.advantages, vec![0.0]);
    }
}

#[test]
fn zero_length_scoring_step_leaves_weights_unchanged() {
    let data = generate_channel_cue(&small_task(), 5, Split::Train, 4).unwrap();
    let batch: Vec<&PreferencePair> = data.pairs.iter().collect();
    let mut rng = SeedStream::new(4).rng();
    let mut state = TrainState::new(GpmModel::random(3, 2, 6, 1.0, &mut rng).unwrap());
    let opts = StepOptions::from_config(&TrainConfig::default(), true);
    let weights = rollout(&state, &batch, 4, &SeedStream::new(5)).unwrap();
    score_step(&mut state, &batch, &weights, 0.0, &opts).unwrap();
    assert_eq!(recompute_weights(&state.model, &batch, &weights).unwrap(), weights);
}

#[test]
fn scoring_step_does_not_raise_misalignment_on_misaligned_pair() {
    let data = generate_channel_cue(&small_task(), 40, Split::Train, 5).unwrap();
    let mut rng = SeedStream::new(5).rng();
    let model = GpmModel::random(3, 2, 6, 1.0, &mut rng).unwrap();
    let opts = StepOptions::from_config(&TrainConfig::default(), true);
    let mut checked = 0;
    for (j, pair) in data.pairs.iter().enumerate() {
        let batch = vec![pair];
        let mut state = TrainState::new(model.clone());
        let weights = rollout(&state, &batch, 4, &SeedStream::new(6).child(j as u64)).unwrap();
        if weights[0].misalignment <= 0.5 {
            continue;
        }
        checked += 1;
        score_step(&mut state, &batch, &weights, 1e-4, &opts).unwrap();
        let after = recompute_weights(&state.model, &batch, &weights).unwrap();
        assert!(after[0].misalignment <= weights[0].misalignment + 1e-15);
    }
    assert!(checked > 0);
}

#[test]
fn scoring_only_training_descends_exact_loss_with_enumerated_groups() {
    let data = generate_channel_cue(&small_task(), 8, Split::Train, 6).unwrap();
    let batch: Vec<&PreferencePair> = data.pairs.iter().collect();
    let mut rng = SeedStream::new(6).rng();
    let mut state = TrainState::new(GpmModel::random(3, 2, 6, 0.5, &mut rng).unwrap());
    let opts = StepOptions::from_config(&TrainConfig::default(), true);
    let loss = |m: &GpmModel| -> f64 { batch.iter().map(|p| exact_loss(m, p, 9).unwrap().loss).sum() };
    let mut prev = loss(&state.model);
    for step in 0..50 {
        let weights = rollout(&state, &batch, 4096, &SeedStream::new(7).child(step)).unwrap();
        score_step(&mut state, &batch, &weights, 1e-3, &opts).unwrap();
        let now = loss(&state.model);
        assert!(now <= prev + 1e-9, "step {step}: {prev} -> {now}");
        prev = now;
    }
}

#[test]
fn no_misalignment_updates_where_dwrl_is_nearly_frozen() {
    let data = generate_channel_cue(&small_task(), 4, Split::Train, 7).unwrap();
    let batch: Vec<&PreferencePair> = data.pairs.iter().collect();
    let mut model = GpmModel::zeros(3, 2, 6).unwrap();
    model.set_head_bias(0.0);
    let state = TrainState::new(model);
    let weights: Vec<DualWeights> = rollout(&state, &batch, 4, &SeedStream::new(8))
        .unwrap()
        .into_iter()
        .map(|w| {
            let plus = ThoughtGroup::new(w.group_plus.thoughts.clone(), vec![1.0 - 1e-9; 4]).unwrap();
            let minus = ThoughtGroup::new(w.group_minus.thoughts.clone(), vec![1e-9; 4]).unwrap();
            DualWeights::new(plus, minus).unwrap()
        })
        .collect();
    let cfg = TrainConfig::default();
    let with = score_gradient(&state.model, &batch, &weights, &StepOptions::from_config(&cfg, true)).unwrap();
    let without = score_gradient(&state.model, &batch, &weights, &StepOptions::from_config(&cfg, false)).unwrap();
    assert!(weights.iter().all(|w| w.misalignment < 1e-8));
    assert!(with.norm() < 1e-6 * without.norm());
}

#[test]
fn ablations_train_the_expected_blocks() {
    let data = generate_channel_cue(&small_task(), 40, Split::Train, 8).unwrap();
    let cfg = small_config();
    let init = GpmModel::zeros(3, 2, 6).unwrap();
    let frozen = FrozenThoughts::new(init.clone(), 3);
    let pre = ablation_prefilled_thoughts(&cfg, &data, &frozen).unwrap();
    let layout = init.layout();
    assert_eq!(&pre.model.params().as_slice()[layout.policy_block()], &init.params().as_slice()[layout.policy_block()]);
    assert!(pre.model.params().as_slice()[layout.head_block()].iter().any(|&v| v != 0.0));

    let full = train_dwrl(&cfg, &data).unwrap();
    let plain = ablation_no_misalignment(&cfg, &data).unwrap();
    assert_ne!(full.model, plain.model);
    assert!(plain.history.records.iter().all(|r| r.mean_misalignment.is_some()));
}

#[test]
fn thought_step_with_frozen_snapshot_has_zero_head_block() {
    let data = generate_channel_cue(&small_task(), 6, Split::Train, 9).unwrap();
    let batch: Vec<&PreferencePair> = data.pairs.iter().collect();
    let mut rng = SeedStream::new(9).rng();
    let mut state = TrainState::new(GpmModel::random(3, 2, 6, 1.0, &mut rng).unwrap());
    let opts = StepOptions::from_config(&TrainConfig::default(), true);
    let weights = rollout(&state, &batch, 4, &SeedStream::new(10)).unwrap();
    let grad = thought_step(&mut state, &batch, &weights, 0.1, &opts).unwrap();
    assert!(grad.as_slice()[state.model.layout().head_block()].iter().all(|&v| v == 0.0));
}

#[test]
fn bt_separable_data_reaches_perfect_training_accuracy() {
    let pairs: Vec<PreferencePair> = (0..20)
        .map(|i| {
            let a = 0.1 + i as f64 * 0.05;
            PreferencePair::new(
                format!("p{i}"),
                FeatureVector::new(vec![a]).unwrap(),
                FeatureVector::new(vec![-a]).unwrap(),
            )
            .unwrap()
        })
        .collect();
    let batch: Vec<&PreferencePair> = pairs.iter().collect();
    let mut scorer = BaselineScorer::zeros(1);
    let start = bt_batch_loss(&scorer, &batch);
    for _ in 0..200 {
        let (g, gb) = bt_batch_gradient(&scorer, &batch);
        scorer.weights[0] -= 0.1 * g[0];
        scorer.bias -= 0.1 * gb;
    }
    assert!(bt_batch_loss(&scorer, &batch) < start);
    assert!(pairs.iter().all(|p| scorer.score(&p.ctx_plus) > scorer.score(&p.ctx_minus)));
}

#[test]
fn bt_gradient_matches_finite_differences_and_symmetric_data_is_stationary() {
    let data = generate_channel_cue(&small_task(), 30, Split::Train, 10).unwrap();
    let batch: Vec<&PreferencePair> = data.pairs.iter().collect();
    let scorer = BaselineScorer::zeros(6);
    let (g, _) = bt_batch_gradient(&scorer, &batch);
    let x = ParamVector::zeros(6);
    let fd = central_difference(&x, 1e-5, |p| {
        let s = BaselineScorer {
            weights: p.as_slice().to_vec(),
            bias: 0.0,
        };
        Ok(bt_batch_loss(&s, &batch))
    })
    .unwrap();
    assert!(relative_error(&ParamVector::from_vec(g), &fd) <= 1e-5);

    let mut mirrored = data.clone();
    mirrored.pairs.extend(data.pairs.iter().map(|p| p.swapped()));
    let full_batch = TrainConfig {
        epochs: 3,
        train_batch: mirrored.len(),
        rollout_batch: mirrored.len(),
        ..small_config()
    };
    let trained = train_bt(&full_batch, &mirrored).unwrap();
    assert!(trained.model.weights.iter().all(|w| w.abs() < 1e-12));
}

#[test]
fn grpo_surrogates_match_finite_differences_at_unit_ratio() {
    let data = generate_channel_cue(&small_task(), 6, Split::Train, 11).unwrap();
    let batch: Vec<&PreferencePair> = data.pairs.iter().collect();
    let mut rng = SeedStream::new(11).rng();

    let mut judge = PairwiseGpm::zeros(3, 2, 6).unwrap();
    let params = ParamVector::from_vec((0..judge.param_count()).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect());
    judge = judge.with_params(params);
    let groups = rollout_pairwise(&judge, &batch, 4, &SeedStream::new(12)).unwrap();
    let g = pairwise_grpo_gradient(&judge, &groups, 0.2).unwrap();
    let fd = central_difference(judge.params(), 1e-5, |p| pairwise_grpo_objective(&judge.with_params(p.clone()), &groups, 0.2)).unwrap();
    assert!(relative_error(&g, &fd) <= 1e-5);

    let model = GpmModel::random(3, 2, 6, 1.0, &mut rng).unwrap();
    let groups = rollout_pointwise(&model, &batch, 4, &SeedStream::new(13)).unwrap();
    let g = pointwise_grpo_gradient(&model, &batch, &groups, 0.2).unwrap();
    let fd = central_difference(model.params(), 1e-5, |p| pointwise_grpo_objective(&model.with_params(p.clone()), &batch, &groups, 0.2)).unwrap();
    assert!(relative_error(&g, &fd) <= 1e-5);
}

#[test]
fn identical_rewards_give_zero_grpo_update() {
    let data = generate_channel_cue(&small_task(), 4, Split::Train, 12).unwrap();
    let batch: Vec<&PreferencePair> = data.pairs.iter().collect();
    // A zero judge with a huge bias always says "first", so every group has
    // identical rewards.
    let mut judge = PairwiseGpm::zeros(3, 2, 6).unwrap();
    judge.set_bias(60.0);
    let groups = rollout_pairwise(&judge, &batch, 4, &SeedStream::new(14)).unwrap();
    assert!(groups.iter().all(|g| g.advantages.iter().all(|&a| a == 0.0)));
    let g = pairwise_grpo_gradient(&judge, &groups, 0.2).unwrap();
    assert_eq!(g.max_abs(), 0.0);
}
