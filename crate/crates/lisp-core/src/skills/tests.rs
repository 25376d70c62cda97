use super::*;
use crate::dynamics::EnsembleDynamics;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn constant_logq(v: f64) -> impl Fn(&[f64]) -> f64 {
    move |_z: &[f64]| v
}

#[test]
fn constant_density_gives_zero_reward() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let r = intrinsic_reward_from(constant_logq(-3.2), &[0.1, 0.2], 2, 16, &mut rng);
    assert!(r.abs() < 1e-12, "got {r}");
}

#[test]
fn half_density_prior_gives_log_two() {
    // q(s'|s,z) = p on the query skill, p/2 on every prior sample.
    let z_query = vec![0.5, -0.5];
    let zq = z_query.clone();
    let logq = move |z: &[f64]| {
        if z == zq.as_slice() {
            -1.0
        } else {
            -1.0 + 0.5f64.ln()
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let r = intrinsic_reward_from(logq, &z_query, 2, 16, &mut rng);
    assert!((r - 2.0f64.ln()).abs() < 1e-12, "got {r}");
}

#[test]
fn intrinsic_matches_brute_force_loops() {
    // Random Gaussian discriminator vs a direct formula evaluation with
    // explicit loops over the same prior draws.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..50 {
        let mut init = ChaCha8Rng::seed_from_u64(100 + trial);
        let disc = Discriminator::new(3, 2, &[16, 16], 3e-4, &mut init);
        let s: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let z: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sn: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();

        // Library path and oracle share the prior draws via a cloned rng.
        let mut lib_rng = ChaCha8Rng::seed_from_u64(500 + trial);
        let got = intrinsic_reward(&disc, &s, &z, &sn, 16, &mut lib_rng);

        let mut oracle_rng = ChaCha8Rng::seed_from_u64(500 + trial);
        let num = disc.log_density(&s, &z, &sn).max(DENSITY_FLOOR_LOG);
        let mut densities = Vec::new();
        for _ in 0..16 {
            let zi: Vec<f64> = (0..2).map(|_| oracle_rng.gen_range(-1.0..1.0)).collect();
            densities.push(disc.log_density(&s, &zi, &sn).max(DENSITY_FLOOR_LOG).exp());
        }
        let denom = densities.iter().sum::<f64>() / 16.0;
        let expected = num - denom.ln();
        let rel = (got - expected).abs() / expected.abs().max(1e-9);
        assert!(rel < 1e-6, "trial {trial}: {got} vs {expected}");
    }
}

#[test]
fn intrinsic_is_invariant_to_density_rescaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut init = ChaCha8Rng::seed_from_u64(4);
    let disc = Discriminator::new(2, 2, &[16], 3e-4, &mut init);
    let s = vec![0.3, -0.2];
    let z = vec![0.7, 0.1];
    let sn = vec![0.35, -0.25];
    for c in [0.25, 0.5, 2.0, 7.3] {
        let mut r1 = rng.clone();
        let mut r2 = rng.clone();
        let base = intrinsic_reward_from(|zz| disc.log_density(&s, zz, &sn), &z, 2, 16, &mut r1);
        let scaled = intrinsic_reward_from(
            |zz| disc.log_density(&s, zz, &sn) + (c as f64).ln(),
            &z,
            2,
            16,
            &mut r2,
        );
        assert!(
            (base - scaled).abs() <= 1e-9,
            "scale {c}: {base} vs {scaled}"
        );
    }
}

#[test]
fn batched_intrinsic_matches_single_path() {
    let mut init = ChaCha8Rng::seed_from_u64(9);
    let disc = Discriminator::new(2, 2, &[16], 3e-4, &mut init);
    let b = 5;
    let s = Mat::from_fn(b, 2, |i, j| (i + j) as f64 * 0.1);
    let z = Mat::from_fn(b, 2, |i, j| ((i * 2 + j) % 4) as f64 * 0.3 - 0.5);
    let sn = Mat::from_fn(b, 2, |i, j| (i + j) as f64 * 0.1 + 0.05);
    let mut rng_batch = ChaCha8Rng::seed_from_u64(42);
    let got = intrinsic_reward_batch(&disc, &s, &z, &sn, 8, &mut rng_batch);
    // Oracle: same rng stream, explicit per-row loop in the same draw order.
    let mut rng_single = ChaCha8Rng::seed_from_u64(42);
    for i in 0..b {
        let num = disc.log_density(s.row(i), z.row(i), sn.row(i)).max(DENSITY_FLOOR_LOG);
        let mut logs = Vec::new();
        for _ in 0..8 {
            let zi: Vec<f64> = (0..2).map(|_| rng_single.gen_range(-1.0..1.0)).collect();
            logs.push(disc.log_density(s.row(i), &zi, sn.row(i)).max(DENSITY_FLOOR_LOG));
        }
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
        let expected = num - (lse - (8f64).ln());
        assert!(
            (got[i] - expected).abs() < 1e-9,
            "row {i}: {} vs {expected}",
            got[i]
        );
    }
}

#[test]
fn adjusted_reward_is_inclusive_hard_switch() {
    // at the threshold exactly: keep r
    assert_eq!(adjusted_reward(1.7, 0.05, 0.05, 30.0), 1.7);
    // just above: -kappa
    assert_eq!(adjusted_reward(1.7, 0.05 + 1e-12, 0.05, 30.0), -30.0);
    // zero disagreement: unchanged
    assert_eq!(adjusted_reward(-0.3, 0.0, 0.05, 30.0), -0.3);
}

#[test]
fn adjusted_reward_monotone_step_and_bounds() {
    let r = 2.5;
    let kappa = 30.0;
    let mut prev = adjusted_reward(r, 0.0, 0.1, kappa);
    for i in 1..100 {
        let d = i as f64 * 0.005;
        let cur = adjusted_reward(r, d, 0.1, kappa);
        assert!(cur <= prev, "not monotone at dis {d}");
        assert!(cur >= -kappa && cur <= r);
        prev = cur;
    }
}

fn small_world() -> (SkillBundle, EnsembleDynamics, ReplayBuffer) {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut cfg = SkillConfig::defaults(2, 1e9); // effectively no penalty
    cfg.rollouts_per_iter = 32;
    cfg.batch = 32;
    cfg.policy_steps = 1;
    cfg.disc_steps = 1;
    cfg.practice_steps = 1;
    let bundle = SkillBundle::new(2, 2, cfg, &mut rng);
    let ens = EnsembleDynamics::new(2, 2, 2, &[16], 1e-3, 5);
    let mut buf = ReplayBuffer::new(2, 2, 0, 1000);
    let mut drng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..200 {
        let s = vec![drng.gen_range(-1.0..1.0), drng.gen_range(-1.0..1.0)];
        let a = vec![drng.gen_range(-1.0..1.0), drng.gen_range(-1.0..1.0)];
        let sn = vec![s[0] + 0.1 * a[0], s[1] + 0.1 * a[1]];
        buf.push(Transition {
            state: s,
            action: a,
            skill: vec![],
            reward: 0.0,
            next_state: sn,
        })
        .unwrap();
    }
    (bundle, ens, buf)
}

#[test]
fn zero_rollouts_leave_gen_buffer_unchanged() {
    let (bundle, ens, buf) = small_world();
    let mut gen = bundle.make_gen_buffer();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let fresh = bundle
        .generate_rollouts(&ens, &buf, &mut gen, 0, true, &mut rng)
        .unwrap();
    assert!(fresh.is_empty());
    assert_eq!(gen.len(), 0);
}

#[test]
fn empty_replay_is_an_error() {
    let (bundle, ens, _) = small_world();
    let empty = ReplayBuffer::new(2, 2, 0, 10);
    let mut gen = bundle.make_gen_buffer();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(
        bundle.generate_rollouts(&ens, &empty, &mut gen, 4, true, &mut rng),
        Err(SkillsError::EmptyReplay)
    ));
}

#[test]
fn single_state_buffer_forces_shared_start() {
    let (bundle, ens, _) = small_world();
    let mut buf = ReplayBuffer::new(2, 2, 0, 10);
    buf.push(Transition {
        state: vec![0.25, -0.75],
        action: vec![0.0, 0.0],
        skill: vec![],
        reward: 0.0,
        next_state: vec![0.25, -0.75],
    })
    .unwrap();
    let mut gen = bundle.make_gen_buffer();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let fresh = bundle
        .generate_rollouts(&ens, &buf, &mut gen, 16, true, &mut rng)
        .unwrap();
    assert!(fresh.iter().all(|t| t.state == vec![0.25, -0.75]));
}

#[test]
fn member_choice_is_uniform_chi_squared() {
    let (bundle, _, buf) = small_world();
    // Deterministic members with well-separated constant deltas, so each
    // generated transition identifies its member exactly.
    let nets: Vec<Mlp> = (0..4)
        .map(|m| {
            let mut net = Mlp::zeros(&[4, 4], Activation::Tanh);
            net.bias_mut(0).set(0, 0, 10.0 * m as f64 + 5.0);
            net
        })
        .collect();
    let ens = EnsembleDynamics::manual(nets, (-1600.0, -1600.0), 2, 2);
    let mut gen = ReplayBuffer::new(2, 2, 2, 200_000);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n_rollouts = 100_000;
    let fresh = bundle
        .generate_rollouts(&ens, &buf, &mut gen, n_rollouts, false, &mut rng)
        .unwrap();
    assert_eq!(fresh.len(), n_rollouts);
    let mut counts = [0usize; 4];
    for t in &fresh {
        let delta = t.next_state[0] - t.state[0];
        let m = ((delta - 5.0) / 10.0).round() as usize;
        counts[m.min(3)] += 1;
    }
    // Chi-squared against uniform, 3 dof: P(chi2 > 11.34) = 0.01.
    let expected = n_rollouts as f64 / 4.0;
    let chi2: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    assert!(chi2 < 11.34, "chi2 {chi2}, counts {counts:?}");
}

#[test]
fn discriminator_nll_decreases_on_separable_data() {
    // s1 - s0 is a deterministic function of z: delta = 0.2 * z.
    let mut init = ChaCha8Rng::seed_from_u64(20);
    let mut disc = Discriminator::new(2, 2, &[32, 32], 1e-3, &mut init);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let b = 64;
    let mut make_batch = |rng: &mut ChaCha8Rng| {
        let mut s = Mat::zeros(b, 2);
        let mut z = Mat::zeros(b, 2);
        let mut sn = Mat::zeros(b, 2);
        for i in 0..b {
            for d in 0..2 {
                let sv = rng.gen_range(-1.0..1.0);
                let zv = rng.gen_range(-1.0..1.0);
                s.set(i, d, sv);
                z.set(i, d, zv);
                sn.set(i, d, sv + 0.2 * zv);
            }
        }
        (s, z, sn)
    };
    let mut first = 0.0;
    let mut last = 0.0;
    for it in 0..100 {
        let (s, z, sn) = make_batch(&mut rng);
        let loss = disc.nll_step(&s, &z, &sn).unwrap();
        if it == 0 {
            first = loss;
        }
        last = loss;
    }
    assert!(
        last < first - 0.5,
        "NLL did not decrease: first {first}, last {last}"
    );
}

#[test]
fn shuffled_skills_collapse_reward_toward_zero() {
    // Permutation control: a discriminator trained on skill-shuffled data
    // (z independent of the transition) cannot separate skills, so r_tilde
    // statistics collapse toward zero mean; a correctly-trained one carries
    // positive reward on matched pairs.
    let train = |shuffle: bool| {
        let mut init = ChaCha8Rng::seed_from_u64(30);
        let mut disc = Discriminator::new(1, 1, &[32, 32], 1e-3, &mut init);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let b = 64;
        for _ in 0..300 {
            let mut s = Mat::zeros(b, 1);
            let mut z = Mat::zeros(b, 1);
            let mut sn = Mat::zeros(b, 1);
            for i in 0..b {
                let zv = rng.gen_range(-1.0f64..1.0);
                let z_label = if shuffle { rng.gen_range(-1.0f64..1.0) } else { zv };
                z.set(i, 0, z_label);
                sn.set(i, 0, 0.5 * zv);
                s.set(i, 0, 0.0);
            }
            disc.nll_step(&s, &z, &sn).unwrap();
        }
        disc
    };
    let disc_true = train(false);
    let disc_shuf = train(true);
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let n = 256;
    let mut r_true = 0.0;
    let mut r_shuf = 0.0;
    for i in 0..n {
        let z = rng.gen_range(-1.0f64..1.0);
        let sn = [0.5 * z];
        let mut r1 = ChaCha8Rng::seed_from_u64(1000 + i as u64);
        r_true += intrinsic_reward(&disc_true, &[0.0], &[z], &sn, 16, &mut r1);
        let mut r2 = ChaCha8Rng::seed_from_u64(1000 + i as u64);
        r_shuf += intrinsic_reward(&disc_shuf, &[0.0], &[z], &sn, 16, &mut r2);
    }
    r_true /= n as f64;
    r_shuf /= n as f64;
    assert!(
        r_true > r_shuf + 0.5,
        "informative skills {r_true} vs shuffled {r_shuf}"
    );
    assert!(
        r_shuf.abs() < 0.5,
        "independence-trained mean should sit near zero, got {r_shuf}"
    );
}

#[test]
fn update_policy_never_touches_ensemble_params() {
    let (mut bundle, ens, buf) = small_world();
    let mut gen = bundle.make_gen_buffer();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let before = ens.param_hash();
    bundle
        .update_policy(&ens, &buf, &mut gen, true, &mut rng)
        .unwrap();
    assert_eq!(before, ens.param_hash());
}

#[test]
fn update_policy_is_deterministic_given_seed() {
    let run = || {
        let (mut bundle, ens, buf) = small_world();
        let mut gen = bundle.make_gen_buffer();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut out = Vec::new();
        for _ in 0..3 {
            let d = bundle
                .update_policy(&ens, &buf, &mut gen, true, &mut rng)
                .unwrap();
            out.push((d.intrinsic_mean, d.disc_loss, d.policy_losses.critic));
        }
        out
    };
    assert_eq!(run(), run());
}

#[test]
fn zero_step_budgets_leave_networks_untouched() {
    let (mut bundle, ens, buf) = small_world();
    bundle.cfg.policy_steps = 0;
    bundle.cfg.disc_steps = 0;
    bundle.cfg.practice_steps = 0;
    let mut gen = bundle.make_gen_buffer();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pol_hash = bundle.policy.actor.net.param_hash();
    let disc_hash = bundle.discriminator.net.param_hash();
    bundle
        .update_policy(&ens, &buf, &mut gen, true, &mut rng)
        .unwrap();
    assert_eq!(gen.len(), bundle.cfg.rollouts_per_iter); // pure rollout generation
    assert_eq!(pol_hash, bundle.policy.actor.net.param_hash());
    assert_eq!(disc_hash, bundle.discriminator.net.param_hash());
    assert_eq!(bundle.optimizer_steps(), 0);
}

#[test]
fn skill_directions_cover_quadrants_on_separable_world() {
    // 2D world where actions translate the state directly: after training,
    // discretized skills should reach distinct state-space quadrants.
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut cfg = SkillConfig::defaults(2, 1e9);
    cfg.rollouts_per_iter = 64;
    cfg.batch = 64;
    cfg.policy_steps = 2;
    cfg.disc_steps = 2;
    cfg.practice_steps = 1;
    cfg.policy_hidden = vec![32, 32];
    cfg.critic_hidden = vec![32, 32];
    cfg.disc_hidden = vec![32, 32];
    let mut bundle = SkillBundle::new(2, 2, cfg, &mut rng);
    // Perfect tiny model of s' = s + 0.25 a with near-zero noise.
    let mut net = Mlp::zeros(&[4, 4], Activation::Tanh);
    net.weight_mut(0).set(2, 0, 0.25);
    net.weight_mut(0).set(3, 1, 0.25);
    let ens = EnsembleDynamics::manual(vec![net], (-12.0, -12.0), 2, 2);
    let mut buf = ReplayBuffer::new(2, 2, 0, 4000);
    let mut drng = ChaCha8Rng::seed_from_u64(51);
    for _ in 0..2000 {
        let s = vec![drng.gen_range(-1.0..1.0), drng.gen_range(-1.0..1.0)];
        let a = vec![drng.gen_range(-1.0..1.0), drng.gen_range(-1.0..1.0)];
        buf.push(Transition {
            next_state: vec![s[0] + 0.25 * a[0], s[1] + 0.25 * a[1]],
            state: s,
            action: a,
            skill: vec![],
            reward: 0.0,
        })
        .unwrap();
    }
    let mut gen = bundle.make_gen_buffer();
    let mut urng = ChaCha8Rng::seed_from_u64(52);
    for _ in 0..600 {
        bundle
            .update_policy(&ens, &buf, &mut gen, true, &mut urng)
            .unwrap();
    }
    // Probe 8 skill directions; roll each for a few steps under the model
    // mean and record the displacement quadrant.
    let mut quadrants = std::collections::HashSet::new();
    let mut reached = 0;
    for k in 0..8 {
        let angle = k as f64 * std::f64::consts::PI / 4.0;
        let z = vec![angle.cos() * 0.9, angle.sin() * 0.9];
        let mut s = vec![0.0, 0.0];
        let mut prng = ChaCha8Rng::seed_from_u64(60 + k as u64);
        for _ in 0..12 {
            let mut obs = s.clone();
            obs.extend_from_slice(&z);
            let (a, _) = bundle.policy.act(&obs, &mut prng);
            let next = ens.mean_next_batch(
                0,
                &Mat::row_vec(s.clone()),
                &Mat::row_vec(a.clone()),
            );
            s = vec![next.get(0, 0), next.get(0, 1)];
        }
        let norm = (s[0] * s[0] + s[1] * s[1]).sqrt();
        if norm > 0.3 {
            reached += 1;
            quadrants.insert((s[0] > 0.0, s[1] > 0.0));
        }
    }
    assert!(
        reached >= 4 && quadrants.len() >= 3,
        "skills reached {reached} far states across {} quadrants",
        quadrants.len()
    );
}
