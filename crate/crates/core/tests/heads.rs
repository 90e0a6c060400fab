mod common;

use common::{labelled, random_corners};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use setpiece::autodiff::{AdamConfig, AdamState, Tape};
use setpiece::cornergraph::{apply, CornerGraph, D2Element, Team, PLAYER_COUNT};
use setpiece::heads::{
    decompose_shot, gaussian_kl, kl_terms, predict_receiver, predict_shot, predict_shot_conditional, sample_adjustments,
    shot_given_each_receiver, top_k, HeadError, Model, ModelSpec, SampleOptions, Task,
};
use setpiece::harness::TrainConfig;
use setpiece::synth::{generate, SynthConfig};

fn zero_head(model: &mut Model) {
    for name in model.head_param_names() {
        let id = model.params().id(&name).unwrap();
        model.params_mut().value_mut(id).data_mut().fill(0.0);
    }
}

fn synthetic(n: usize, seed: u64) -> Vec<CornerGraph> {
    generate(&SynthConfig {
        n_samples: n,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn unconditional_shot() -> ModelSpec {
    TrainConfig {
        conditional: false,
        ..TrainConfig::for_task(Task::Shot)
    }
    .model_spec()
}

#[test]
fn zeroed_heads_give_uninformed_predictions() {
    let mut receiver = Model::new(ModelSpec::receiver(), 1).unwrap();
    zero_head(&mut receiver);
    let mut shot = Model::new(ModelSpec::shot(), 2).unwrap();
    zero_head(&mut shot);
    for c in random_corners(5, 3) {
        let report = predict_receiver(&c, &receiver).unwrap();
        let probs = report.receiver_probs.unwrap();
        assert!(probs.iter().all(|p| (p - 1.0 / 22.0).abs() < 1e-12));
        // Uniform ties resolve to the lowest indices.
        assert_eq!(report.top3.unwrap(), vec![0, 1, 2]);
        assert_eq!(predict_shot_conditional(&c, 4, &shot).unwrap(), 0.5);
    }
}

#[test]
fn receiver_probabilities_form_a_distribution() {
    let model = Model::new(ModelSpec::receiver(), 5).unwrap();
    for c in random_corners(10, 4) {
        let report = predict_receiver(&c, &model).unwrap();
        let probs = report.receiver_probs.unwrap();
        assert_eq!(probs.len(), PLAYER_COUNT);
        assert!(probs.iter().all(|p| *p >= 0.0));
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        let top3 = report.top3.unwrap();
        assert!(probs[top3[0]] >= probs[top3[1]] && probs[top3[1]] >= probs[top3[2]]);
    }
}

#[test]
fn top_k_breaks_ties_by_index() {
    assert_eq!(top_k(&[0.1, 0.3, 0.3, 0.2, 0.3], 3), vec![1, 2, 4]);
    assert_eq!(top_k(&[0.5, 0.5], 3), vec![0, 1]);
}

#[test]
fn predictions_survive_reflection() {
    let receiver = Model::new(ModelSpec::receiver(), 7).unwrap();
    let shot = Model::new(ModelSpec::shot(), 8).unwrap();
    for c in random_corners(20, 9) {
        let top3 = predict_receiver(&c, &receiver).unwrap().top3.unwrap();
        let p = predict_shot_conditional(&c, 5, &shot).unwrap();
        assert!(p > 0.0 && p < 1.0);
        for g in D2Element::ALL {
            let r = apply(g, &c);
            assert_eq!(predict_receiver(&r, &receiver).unwrap().top3.unwrap(), top3);
            assert!((predict_shot_conditional(&r, 5, &shot).unwrap() - p).abs() < 1e-5);
        }
    }
}

#[test]
fn decomposition_edge_cases() {
    let mut onehot = vec![0.0; PLAYER_COUNT];
    onehot[6] = 1.0;
    let conds: Vec<f64> = (0..PLAYER_COUNT).map(|i| i as f64 / 30.0).collect();
    assert_eq!(decompose_shot(&onehot, &conds), conds[6]);
    let uniform = vec![1.0 / 22.0; PLAYER_COUNT];
    assert!((decompose_shot(&uniform, &[0.37; PLAYER_COUNT]) - 0.37).abs() < 1e-12);
}

#[test]
fn decomposed_shot_matches_an_explicit_loop() {
    let receiver = Model::new(ModelSpec::receiver(), 11).unwrap();
    let shot = Model::new(ModelSpec::shot(), 12).unwrap();
    for c in random_corners(100, 13) {
        let report = predict_shot(&c, &receiver, &shot).unwrap();
        let probs = receiver.receiver_probs(&[&c]).unwrap().remove(0);
        let mut explicit = 0.0;
        for (i, p) in probs.iter().enumerate() {
            explicit += p * predict_shot_conditional(&c, i, &shot).unwrap();
        }
        let p = report.shot_prob.unwrap();
        assert!((p - explicit).abs() < 1e-6);
        assert!((0.0..=1.0).contains(&p));
        let per = report.per_receiver.unwrap();
        assert_eq!(per.len(), PLAYER_COUNT);
        assert_eq!(per[3].index, 3);
    }
}

#[test]
fn unconditional_models_refuse_receiver_queries() {
    let model = Model::new(unconditional_shot(), 1).unwrap();
    let c = &random_corners(1, 1)[0];
    assert!(matches!(shot_given_each_receiver(c, &model), Err(HeadError::Invalid(_))));
}

#[test]
fn task_mismatch_is_rejected() {
    let shot = Model::new(ModelSpec::shot(), 1).unwrap();
    let c = &random_corners(1, 1)[0];
    assert!(matches!(predict_receiver(c, &shot), Err(HeadError::TaskMismatch { .. })));
    let receiver = Model::new(ModelSpec::receiver(), 1).unwrap();
    assert!(matches!(predict_shot_conditional(c, 3, &receiver), Err(HeadError::Invalid(_)) | Err(HeadError::TaskMismatch { .. })));
    let options = SampleOptions {
        n_samples: 1,
        seed: 0,
        noise_scale: 1.0,
    };
    assert!(matches!(
        sample_adjustments(c, true, options, &receiver, &receiver),
        Err(HeadError::TaskMismatch { .. })
    ));
    assert!(predict_shot_conditional(c, PLAYER_COUNT, &shot).is_err());
}

#[test]
fn unlabelled_corners_cannot_train() {
    let model = Model::new(ModelSpec::receiver(), 1).unwrap();
    let c = &random_corners(1, 1)[0];
    let mut t = Tape::new();
    assert!(matches!(model.loss(&mut t, &[c], 0), Err(HeadError::MissingLabel { .. })));
}

#[test]
fn kl_closed_form_cases() {
    assert_eq!(gaussian_kl(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
    assert!((gaussian_kl(&[1.0, 1.0], &[1.0, 1.0]) - 1.0).abs() < 1e-15);
    // The tape version agrees elementwise.
    let mut t = Tape::new();
    let mu = t.constant(setpiece::autodiff::DenseArray::vector(vec![1.0, 0.3, -2.0]));
    let ls = t.constant(setpiece::autodiff::DenseArray::vector(vec![0.0, -0.5, 0.7]));
    let k = kl_terms(&mut t, mu, ls).unwrap();
    for (i, (m, s)) in [(1.0, 0.0f64), (0.3, -0.5), (-2.0, 0.7)].into_iter().enumerate() {
        assert!((t.value(k).data()[i] - gaussian_kl(&[m], &[s.exp()])).abs() < 1e-12);
        assert!(t.value(k).data()[i] >= 0.0);
    }
}

#[test]
fn kl_matches_monte_carlo() {
    let mu = [0.8, -0.4];
    let sigma = [0.6, 1.5];
    let exact = gaussian_kl(&mu, &sigma);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 100_000;
    let mut total = 0.0;
    for _ in 0..n {
        for d in 0..2 {
            let e: f64 = StandardNormal.sample(&mut rng);
            let z = mu[d] + sigma[d] * e;
            // log q(z) - log p(z), constants cancel.
            total += -sigma[d].ln() - 0.5 * e * e + 0.5 * z * z;
        }
    }
    let estimate = total / n as f64;
    assert!(((estimate - exact) / exact).abs() < 0.02, "mc {estimate} vs {exact}");
}

#[test]
fn cvae_overfits_a_small_set() {
    let data = synthetic(64, 3);
    let refs: Vec<&CornerGraph> = data.iter().collect();
    let mut model = Model::new(ModelSpec::generator(Team::Defending), 4).unwrap();
    let loss_at = |m: &Model| {
        let mut t = Tape::new();
        let l = m.loss(&mut t, &refs, 1234).unwrap();
        t.value(l).data()[0]
    };
    let before = loss_at(&model);
    let mut adam = AdamState::new(
        AdamConfig {
            learning_rate: 3e-3,
            ..AdamConfig::default()
        },
        model.params(),
    )
    .unwrap();
    for step in 0..60 {
        let mut t = Tape::new();
        let l = model.loss(&mut t, &refs, step).unwrap();
        t.backward(l).unwrap();
        model.params_mut().zero_grads();
        model.params_mut().accumulate(&t, 1.0);
        adam.step(model.params_mut()).unwrap();
    }
    let after = loss_at(&model);
    assert!(after.is_finite() && after < 0.8 * before, "{before} -> {after}");
}

fn generation_models() -> (Model, Model) {
    (Model::new(ModelSpec::generator(Team::Defending), 21).unwrap(), Model::new(ModelSpec::receiver(), 22).unwrap())
}

#[test]
fn generation_only_moves_the_configured_team() {
    let receiver = Model::new(ModelSpec::receiver(), 22).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for team in [Team::Defending, Team::Attacking] {
        let generator = Model::new(ModelSpec::generator(team), 23).unwrap();
        for (k, c) in random_corners(6, 6).into_iter().enumerate() {
            // Half labelled, half relying on the receiver model.
            let c = if k % 2 == 0 { labelled(&c, &mut rng) } else { c };
            let options = SampleOptions {
                n_samples: 3,
                seed: 8,
                noise_scale: 1.0,
            };
            let samples = sample_adjustments(&c, false, options, &generator, &receiver).unwrap();
            assert_eq!(samples.len(), 3);
            for s in &samples {
                assert_eq!(s.receiver_index(), c.receiver_index());
                assert_eq!(s.shot_taken(), c.shot_taken());
                for (i, (p, q)) in c.players().iter().zip(s.players()).enumerate() {
                    if Team::of_index(i) == team {
                        assert_ne!((p.x, p.y, p.vx, p.vy), (q.x, q.y, q.vx, q.vy));
                        assert_eq!((p.height, p.weight, p.has_ball, p.team), (q.height, q.weight, q.has_ball, q.team));
                    } else {
                        assert_eq!(p, q);
                    }
                }
            }
        }
    }
}

#[test]
fn generation_is_seeded() {
    let (generator, receiver) = generation_models();
    let c = &random_corners(1, 7)[0];
    let options = |seed, noise_scale| SampleOptions {
        n_samples: 2,
        seed,
        noise_scale,
    };
    let a = sample_adjustments(c, true, options(3, 1.0), &generator, &receiver).unwrap();
    assert_eq!(a, sample_adjustments(c, true, options(3, 1.0), &generator, &receiver).unwrap());
    assert_ne!(a, sample_adjustments(c, true, options(4, 1.0), &generator, &receiver).unwrap());
    // Without noise every sample is the decoded posterior mean.
    let m = sample_adjustments(c, true, options(3, 0.0), &generator, &receiver).unwrap();
    let n = sample_adjustments(c, true, options(77, 0.0), &generator, &receiver).unwrap();
    assert_eq!(m[0].players(), m[1].players());
    assert_eq!(m[0].players(), n[0].players());
    assert!(sample_adjustments(c, true, SampleOptions { n_samples: 0, ..options(3, 0.0) }, &generator, &receiver).is_err());
}

/// Largest relative error between the tape gradient and central
/// differences over a random subset of parameter entries.
fn loss_gradient_error(model: &mut Model, graphs: &[&CornerGraph], entries: usize, seed: u64) -> f64 {
    let loss = |m: &Model| {
        let mut t = Tape::new();
        let l = m.loss(&mut t, graphs, 5).unwrap();
        t.value(l).data()[0]
    };
    let mut t = Tape::new();
    let l = model.loss(&mut t, graphs, 5).unwrap();
    t.backward(l).unwrap();
    model.params_mut().zero_grads();
    model.params_mut().accumulate(&t, 1.0);
    let ids: Vec<_> = model.params().ids().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for k in 0..entries {
        // Cover every tensor at least once before sampling at random.
        let id = if k < ids.len() { ids[k] } else { ids[rng.random_range(0..ids.len())] };
        let j = rng.random_range(0..model.params().value(id).len());
        let analytic = model.params().grad(id).data()[j];
        let orig = model.params().value(id).data()[j];
        model.params_mut().value_mut(id).data_mut()[j] = orig + h;
        let up = loss(model);
        model.params_mut().value_mut(id).data_mut()[j] = orig - h;
        let down = loss(model);
        model.params_mut().value_mut(id).data_mut()[j] = orig;
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0));
    }
    worst
}

#[test]
fn model_losses_match_finite_differences() {
    let data = synthetic(4, 17);
    let refs: Vec<&CornerGraph> = data.iter().collect();
    let specs = [
        ModelSpec::receiver(),
        ModelSpec::shot(),
        unconditional_shot(),
        ModelSpec::generator(Team::Defending),
        ModelSpec::generator(Team::Attacking),
    ];
    for (i, spec) in specs.into_iter().enumerate() {
        let mut model = Model::new(spec, 30 + i as u64).unwrap();
        let err = loss_gradient_error(&mut model, &refs, 80, i as u64);
        assert!(err < 1e-4, "{:?} relative error {err}", spec.task);
    }
}

#[test]
fn task_names_parse() {
    assert_eq!("receiver".parse::<Task>().unwrap(), Task::Receiver);
    assert_eq!("generation".parse::<Task>().unwrap(), Task::Generate);
    assert!("goal".parse::<Task>().is_err());
}
