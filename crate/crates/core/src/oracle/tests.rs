use super::*;
use crate::seqmodel::{log_joint, Prev};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn shape(v: usize, n: usize, l: usize, varlen: bool) -> TaskShape {
    TaskShape::new(v, n, l, varlen).unwrap()
}

#[test]
fn enumeration_counts() {
    let joint = enumerate_joint(&PolicyParams::zeros(2), &shape(2, 1, 1, true), &Question(vec![0])).unwrap();
    assert_eq!(joint.outcomes.len(), 4);
    assert!(joint.outcomes.iter().all(|o| (o.2 - 0.25).abs() < 1e-15));

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = PolicyParams::random(2, 2.0, &mut rng);
    let joint = enumerate_joint(&p, &shape(2, 3, 2, true), &Question(vec![1, 0, 1])).unwrap();
    assert_eq!(joint.outcomes.len(), 12);
    assert!((joint.total - 1.0).abs() < 1e-12);
}

#[test]
fn enumeration_refuses_large_shapes() {
    let s = shape(5, 4, 9, true);
    match enumerate_joint(&PolicyParams::zeros(5), &s, &Question(vec![0; 4])) {
        Err(Error::TooLarge { outcomes, .. }) => assert_eq!(outcomes, s.outcome_count()),
        other => panic!("expected refusal, got {other:?}"),
    }
    // the default task is still enumerable
    assert!(TaskShape::default().outcome_count() <= MAX_OUTCOMES);
}

#[test]
fn log_joint_matches_enumeration() {
    let s = shape(3, 2, 2, true);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..10 {
        let p = PolicyParams::random(3, 2.0, &mut rng);
        let x = Question(vec![rng.gen_range(0..3), rng.gen_range(0..3)]);
        for (z, y, prob) in enumerate_joint(&p, &s, &x).unwrap().outcomes {
            let lj = log_joint(&p, &s, &x, &z, y).unwrap().0;
            assert!((lj - prob.ln()).abs() < 1e-10);
        }
    }
}

#[test]
fn normalization_on_fixed_length_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for l in 1..=3 {
        let s = shape(3, 2, l, false);
        let p = PolicyParams::random(3, 3.0, &mut rng);
        let joint = enumerate_joint(&p, &s, &Question(vec![2, 1])).unwrap();
        assert_eq!(joint.outcomes.len(), 3usize.pow(l as u32) * 3);
        assert!((joint.total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn posterior_cases() {
    let s = shape(2, 1, 2, true);
    let post = exact_posterior(&PolicyParams::zeros(2), &s, &Question(vec![1]), Answer(0)).unwrap();
    assert_eq!(post.len(), 6);
    assert!(post.iter().all(|(_, p)| (p - 1.0 / 6.0).abs() < 1e-15));

    let s = shape(3, 3, 3, true);
    let star = PolicyParams::prefix_sum(&s, 30.0);
    let x = Question(vec![2, 2, 1]);
    let post = exact_posterior(&star, &s, &x, Answer(2)).unwrap();
    let (best, p) = post.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    assert_eq!(best.0, vec![2, 1, 2]);
    assert!((p - 1.0).abs() < 1e-12);
}

#[test]
fn posterior_zero_mass_is_an_error() {
    let s = shape(2, 1, 1, true);
    let mut p = PolicyParams::zeros(2);
    for last in 0..2 {
        let off = p.answer_offset(last);
        p.as_mut_slice()[off] = 1e4;
    }
    assert!(matches!(exact_posterior(&p, &s, &Question(vec![0]), Answer(1)), Err(Error::ZeroPosteriorMass)));
}

#[test]
fn dp_messages_agree_with_enumeration() {
    let s = shape(3, 2, 3, true);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..10 {
        let p = PolicyParams::random(3, 2.0, &mut rng);
        let x = Question(vec![rng.gen_range(0..3), rng.gen_range(0..3)]);
        let y = Answer(rng.gen_range(0..3));
        let msgs = crate::samplers::compute_messages(&p, &s, &x, y).unwrap();
        let joint = enumerate_joint(&p, &s, &x).unwrap();
        assert!((msgs.log_beta(0, Prev::Bos).exp() - joint.marginal(y)).abs() < 1e-10);
    }
}

#[test]
fn scheme_laws_are_normalized() {
    let s = shape(3, 2, 2, true);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = PolicyParams::random(3, 2.0, &mut rng);
    let dp = Datapoint::from_question(Question(vec![1, 2]), 3);
    for scheme in ["rs:1", "rs:4", "pps:0.3", "star:0.3", "star:0", "exact"] {
        let scheme: SchemeSpec = scheme.parse().unwrap();
        let total: f64 = scheme_law(&scheme, &p, &s, &dp).unwrap().iter().map(|o| o.2).sum();
        assert!((total - 1.0).abs() < 1e-12, "{scheme}: {total}");
    }
}

#[test]
fn rs_law_acceptance_is_closed_form() {
    let s = shape(3, 2, 2, true);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = PolicyParams::random(3, 2.0, &mut rng);
    let dp = Datapoint::from_question(Question(vec![0, 2]), 3);
    let base = enumerate_joint(&p, &s, &dp.x).unwrap().marginal(dp.y_star);
    let mut prev = 0.0;
    for m in 1..=6 {
        let law = scheme_law(&SchemeSpec::Rs { budget: m }, &p, &s, &dp).unwrap();
        let acc: f64 = law.iter().filter(|o| o.1 == dp.y_star).map(|o| o.2).sum();
        assert!((acc - (1.0 - (1.0 - base).powi(m as i32))).abs() < 1e-12);
        assert!(acc >= prev);
        prev = acc;
    }
    // STaR interpolation
    let eps = 0.2;
    let law = scheme_law(&SchemeSpec::Star { fidelity: eps }, &p, &s, &dp).unwrap();
    let acc: f64 = law.iter().filter(|o| o.1 == dp.y_star).map(|o| o.2).sum();
    let expected = base + (1.0 - base) * ((1.0 - eps) + eps * base);
    assert!((acc - expected).abs() < 1e-12);
}

#[test]
fn filtered_gradient_of_exact_posterior_is_em_gradient() {
    let s = shape(3, 2, 2, true);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let theta_q = PolicyParams::random(3, 2.0, &mut rng);
    let theta = PolicyParams::random(3, 2.0, &mut rng);
    let dp = Datapoint::from_question(Question(vec![2, 2]), 3);
    let a = exact_filtered_grad(&theta, &SchemeSpec::ExactPosterior, &theta_q, &s, &dp).unwrap();
    let b = em_objective_grad(&theta, &theta_q, &s, &dp).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-10);
    }
}

#[test]
fn em_gradient_matches_finite_differences_of_objective() {
    let s = shape(2, 2, 2, true);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let theta_q = PolicyParams::random(2, 1.0, &mut rng);
    let theta = PolicyParams::random(2, 1.0, &mut rng);
    let dp = Datapoint::from_question(Question(vec![1, 0]), 2);
    let post = exact_posterior(&theta_q, &s, &dp.x, dp.y_star).unwrap();
    let objective = |t: &PolicyParams| em_objective(t, &s, std::slice::from_ref(&dp), std::slice::from_ref(&post));
    let g = em_objective_grad(&theta, &theta_q, &s, &dp).unwrap();
    let h = 1e-5;
    for (j, &gj) in g.iter().enumerate() {
        let mut up = theta.clone();
        up.as_mut_slice()[j] += h;
        let mut down = theta.clone();
        down.as_mut_slice()[j] -= h;
        let fd = (objective(&up) - objective(&down)) / (2.0 * h);
        assert!(rel_error(gj, fd) < 1e-6, "coord {j}: {gj} vs {fd}");
    }
}

#[test]
fn filtered_gradient_zero_when_reward_is_unreachable() {
    let s = shape(2, 1, 2, true);
    let mut p = PolicyParams::zeros(2);
    for last in 0..2 {
        let off = p.answer_offset(last);
        p.as_mut_slice()[off] = 1e4;
    }
    let dp = Datapoint::from_question(Question(vec![1]), 2);
    assert_eq!(dp.y_star, Answer(1));
    let g = exact_filtered_grad(&p, &SchemeSpec::Rs { budget: 2 }, &p, &s, &dp).unwrap();
    assert!(g.iter().all(|&v| v == 0.0));
}

#[test]
fn lemma1_tight_when_q_is_the_policy() {
    let s = shape(3, 2, 2, true);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..5 {
        let p = PolicyParams::random(3, 2.0, &mut rng);
        let dp = Datapoint::from_question(Question(vec![rng.gen_range(0..3), 1]), 3);
        let r = check_lemma1(&p, &SchemeSpec::Rs { budget: 1 }, &p, &s, &dp).unwrap();
        assert!(r.gap.abs() <= 1e-9 && r.holds && r.c >= 0.0, "{r:?}");
    }
}

#[test]
fn lemma1_zero_reward_mass() {
    let s = shape(2, 1, 2, true);
    let mut p = PolicyParams::zeros(2);
    for last in 0..2 {
        let off = p.answer_offset(last);
        p.as_mut_slice()[off] = 1e3;
    }
    let dp = Datapoint::from_question(Question(vec![1]), 2);
    let r = check_lemma1(&p, &SchemeSpec::Rs { budget: 1 }, &p, &s, &dp).unwrap();
    assert_eq!((r.rhs, r.lhs_plus_c, r.c), (0.0, 0.0, 0.0));
    assert!(r.holds);
}

#[test]
fn lemma1_holds_for_posterior_proposals() {
    let s = shape(3, 2, 3, true);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let theta = PolicyParams::random(3, 2.0, &mut rng);
        let theta_q = PolicyParams::random(3, 2.0, &mut rng);
        let dp = Datapoint::from_question(Question(vec![rng.gen_range(0..3), rng.gen_range(0..3)]), 3);
        for scheme in ["exact", "pps:0.4", "star:0.1", "rs:3"] {
            let r = check_lemma1(&theta, &scheme.parse().unwrap(), &theta_q, &s, &dp).unwrap();
            assert!(r.holds, "{scheme}: {r:?}");
        }
    }
}

#[test]
fn em_step_without_inner_steps_is_identity() {
    let s = shape(2, 2, 2, true);
    let data = crate::taskgen::generate_dataset(&s, 8, 1, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = PolicyParams::random(2, 1.0, &mut rng);
    let r = exact_em_step(&p, &s, &data.train, 0, 0.1).unwrap();
    assert_eq!(r.params, p);
    assert_eq!((r.j_after, r.marginal_after), (r.j_before, r.marginal_before));
}

#[test]
fn em_step_is_stationary_at_the_optimum() {
    let s = shape(2, 2, 2, true);
    let data = crate::taskgen::generate_dataset(&s, 8, 1, 4).unwrap();
    let star = PolicyParams::prefix_sum(&s, 30.0);
    let r = exact_em_step(&star, &s, &data.train, 10, 0.1).unwrap();
    assert!(r.marginal_before.abs() < 1e-6);
    assert!((r.marginal_after - r.marginal_before).abs() < 1e-6);
}

#[test]
fn em_steps_increase_the_marginal() {
    let s = shape(2, 2, 2, true);
    let data = crate::taskgen::generate_dataset(&s, 16, 1, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut theta = PolicyParams::random(2, 1.0, &mut rng);
    for _ in 0..20 {
        let r = exact_em_step(&theta, &s, &data.train, 10, 0.1).unwrap();
        assert!(r.j_after >= r.j_before);
        assert!(r.marginal_after >= r.marginal_before - 1e-10);
        theta = r.params;
    }
}

#[test]
fn fd_of_a_single_softmax_row() {
    // v = 2, L_max = 1: log π(z=0, y) depends on the (BOS, x) row only through
    // log softmax([a, b])[0], whose derivative in a is 1/2 at a = b = 0
    let s = shape(2, 1, 1, true);
    let p = PolicyParams::zeros(2);
    let x = Question(vec![0]);
    let fd = fd_gradient(&p, &s, &x, &Rationale(vec![0]), Answer(1), 1e-5).unwrap();
    let off = p.transition_offset(2, 0);
    assert!((fd[off] - 0.5).abs() < 1e-8);
    assert!((fd[off + 1] + 0.5).abs() < 1e-8);
    // STOP is masked at t = 1 and rows for other features are untouched
    assert_eq!(fd[off + 2], 0.0);
    let other = p.transition_offset(2, 1);
    assert!(fd[other..other + 3].iter().all(|&g| g == 0.0));
    assert!(fd_gradient(&p, &s, &x, &Rationale(vec![0]), Answer(1), 0.0).is_err());
}

#[test]
fn analytic_gradient_matches_fd() {
    let s = shape(3, 2, 2, true);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let p = PolicyParams::random(3, 2.0, &mut rng);
        let x = Question(vec![rng.gen_range(0..3), rng.gen_range(0..3)]);
        let (z, y) = crate::seqmodel::sample_rollout(&p, &s, &x, &mut rng).unwrap();
        let g = crate::seqmodel::grad_log_joint(&p, &s, &x, &z, y).unwrap();
        let fd = fd_gradient(&p, &s, &x, &z, y, 1e-5).unwrap();
        for (a, b) in g.iter().zip(&fd) {
            assert!(rel_error(*a, *b) < 1e-6);
        }
    }
}
