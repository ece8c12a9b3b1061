mod common;

use common::r;
use patrolbench::instances;
use patrolbench::learn::*;
use patrolbench::mdp::{legal_actions, MdpConfig};
use patrolbench::policy::{run_policy, Policy, TspCyclePolicy};
use patrolbench::Rational;
use proptest::prelude::*;

/// Textbook GAE over a fully active rollout.
fn standard_gae(b: &RolloutBatch) -> Vec<f64> {
    let n = b.rewards.len();
    let mut adv = vec![0.0; n];
    let mut a_next = 0.0;
    for i in (0..n).rev() {
        let v_next = if i + 1 < n { b.values[i + 1] } else if b.terminal { 0.0 } else { b.bootstrap };
        let delta = b.rewards[i] + b.gamma * v_next - b.values[i];
        a_next = delta + b.gamma * b.lambda * a_next;
        adv[i] = a_next;
    }
    adv
}

/// Folded advantages written out with explicit powers.
fn folded_gae(b: &RolloutBatch) -> Vec<f64> {
    let n = b.rewards.len();
    let mut adv = vec![0.0; n];
    for i in (0..n).rev().filter(|&i| b.active[i]) {
        let next = (i + 1..n).find(|&k| b.active[k]);
        let end = next.unwrap_or(n);
        let l = (end - i - 1) as i32;
        let folded: f64 = (0..=l).map(|j| b.gamma.powi(j) * b.rewards[i + j as usize]).sum();
        let (v, a) = match next {
            Some(k) => (b.values[k], adv[k]),
            None => (if b.terminal { 0.0 } else { b.bootstrap }, 0.0),
        };
        adv[i] = folded + b.gamma.powi(l + 1) * v - b.values[i] + (b.gamma * b.lambda).powi(l + 1) * a;
    }
    adv
}

fn batches(all_active: bool) -> impl Strategy<Value = RolloutBatch> {
    (1usize..40).prop_flat_map(move |n| {
        (
            prop::collection::vec(-5.0f64..5.0, n),
            prop::collection::vec(-5.0f64..5.0, n),
            prop::collection::vec(any::<bool>(), n),
            any::<bool>(),
            -5.0f64..5.0,
            0.0f64..=1.0,
            0.0f64..=1.0,
        )
            .prop_map(move |(rewards, values, active, terminal, bootstrap, gamma, lambda)| RolloutBatch {
                dts: vec![1.0; rewards.len()],
                active: if all_active { vec![true; rewards.len()] } else { active },
                rewards,
                values,
                terminal,
                bootstrap,
                gamma,
                lambda,
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn all_active_is_standard_gae_bit_for_bit(b in batches(true)) {
        let out = trans_gae(&b).unwrap();
        let reference = standard_gae(&b);
        for (x, y) in out.advantages.iter().zip(&reference) {
            prop_assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn folded_recursion_matches_explicit_sums(b in batches(false)) {
        let out = trans_gae(&b).unwrap();
        let reference = folded_gae(&b);
        for i in 0..b.rewards.len() {
            if b.active[i] {
                prop_assert!((out.advantages[i] - reference[i]).abs() <= 1e-9 * (1.0 + reference[i].abs()));
                prop_assert_eq!(out.returns[i], out.advantages[i] + b.values[i]);
            } else {
                prop_assert_eq!(out.advantages[i], 0.0);
                prop_assert_eq!(out.returns[i], 0.0);
            }
        }
    }

    #[test]
    fn lambda_one_telescopes_to_return_minus_value(mut b in batches(false)) {
        b.lambda = 1.0;
        b.terminal = true;
        let out = trans_gae(&b).unwrap();
        let g = mc_returns(&b.rewards, b.gamma);
        for i in (0..b.rewards.len()).filter(|&i| b.active[i]) {
            prop_assert!((out.advantages[i] - (g[i] - b.values[i])).abs() <= 1e-10 * (1.0 + g[i].abs()));
        }
    }

    #[test]
    fn merged_shards_equal_one_stream(xs in prop::collection::vec(-1e3f64..1e3, 0..60), cut in any::<prop::sample::Index>()) {
        let k = if xs.is_empty() { 0 } else { cut.index(xs.len() + 1) };
        let mut whole = RunningStat::default();
        whole.extend(xs.iter().copied());
        let (mut left, mut right) = (RunningStat::default(), RunningStat::default());
        left.extend(xs[..k].iter().copied());
        right.extend(xs[k..].iter().copied());
        left.merge(&right);
        prop_assert_eq!(left.count, whole.count);
        prop_assert!((left.mean - whole.mean).abs() <= 1e-9 * (1.0 + whole.mean.abs()));
        prop_assert!((left.variance() - whole.variance()).abs() <= 1e-7 * (1.0 + whole.variance()));
    }
}

#[test]
fn malformed_batches_are_rejected() {
    let b = RolloutBatch { rewards: vec![1.0], values: vec![], active: vec![true], dts: vec![], terminal: true, bootstrap: 0.0, gamma: 0.9, lambda: 0.9 };
    assert!(trans_gae(&b).is_err());
    let b = RolloutBatch { values: vec![0.0], gamma: 1.5, ..b };
    assert!(trans_gae(&b).is_err());
}

#[test]
fn normalizer_examples() {
    let mut s = RunningStat::default();
    s.extend([4.0; 10]);
    assert_eq!(s.apply(4.0), 0.0);
    let mut s = RunningStat::default();
    s.extend([0.0, 2.0]);
    assert_eq!(s.mean, 1.0);
    assert!((s.apply(2.0) - 1.0 / (1.0 + EPS)).abs() < 1e-15);
}

fn demo(threads: usize) -> DemoDataset {
    let g = instances::weighted_path3::<Rational>();
    let cfg = MdpConfig::new(Some(r(2, 1)), r(1, 2), 2).unwrap();
    let settings = DemoSettings { episodes: 6, gamma: 0.9, horizon: r(12, 1), seed: 5, gpe_dim: 2 };
    let make = || Box::new(patrolbench::policy::RandomPolicy::new()) as Box<dyn Policy<Rational>>;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| build_demo_dataset(&g, &cfg, &[0, 2], &make, &settings)).unwrap()
}

#[test]
fn demo_dataset_statistics_and_format() {
    let data = demo(3);
    let single = demo(1);
    assert_eq!(data.header, single.header);
    for (a, b) in data.tuples.iter().zip(&single.tuples) {
        assert_eq!(a, b);
    }
    assert_eq!(data.tuples.len(), single.tuples.len());
    let rets: Vec<f64> = data.tuples.iter().map(|t| t.ret).collect();
    let mean = rets.iter().sum::<f64>() / rets.len() as f64;
    let var = rets.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / rets.len() as f64;
    assert!((data.header.mean - mean).abs() < 1e-9 * (1.0 + mean.abs()));
    assert!((data.header.std - var.sqrt()).abs() < 1e-9 * (1.0 + var.sqrt()));
    for t in &data.tuples {
        assert!(t.mask[t.action]);
        assert_eq!(t.normalized_return, (t.ret - data.header.mean) / (data.header.std + data.header.eps));
    }
    let mut buf = Vec::new();
    data.write_jsonl(&mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert_eq!(text.lines().count(), data.tuples.len() + 1);
    assert!(text.lines().nth(1).unwrap().contains("\"return\""));
    assert_eq!(DemoDataset::read_jsonl(&buf[..]).unwrap(), data);
}

#[test]
fn demo_returns_follow_the_episode_rewards() {
    let g = instances::triangle::<Rational>();
    let cfg = MdpConfig::new(Some(r(0, 1)), r(1, 1), 1).unwrap();
    let settings = DemoSettings { episodes: 1, gamma: 0.5, horizon: r(9, 1), seed: 0, gpe_dim: 2 };
    let make = || Box::new(TspCyclePolicy::new()) as Box<dyn Policy<Rational>>;
    let data = build_demo_dataset(&g, &cfg, &[0], &make, &settings).unwrap();
    let traj = run_policy(&g, &cfg, &[0], &mut TspCyclePolicy::new(), &r(9, 1), episode_seed(0, 0)).unwrap();
    let rewards: Vec<f64> = traj.steps.iter().map(|s| (s.state.z * s.dt).to_integer() as f64).collect();
    // single robot, always ready: one tuple per step
    assert_eq!(data.tuples.len(), rewards.len());
    let mut g_next = 0.0;
    for (t, rw) in data.tuples.iter().zip(&rewards).rev() {
        g_next = rw + 0.5 * g_next;
        assert_eq!(t.ret, g_next);
        let mask = legal_actions(&g, &cfg, &traj.steps[t.step].state, 0).unwrap().flat();
        assert_eq!(t.mask, mask);
    }
}

#[test]
fn q_learning_edge_cases() {
    let g = instances::two_node::<Rational>(r(3, 1));
    let cfg = MdpConfig::new(Some(r(0, 1)), r(1, 1), 2).unwrap();
    let qc = QConfig { budget: 0, ..QConfig::default() };
    let table = smdp_q_learn(&g, &cfg, &[0], &qc, None).unwrap();
    assert_eq!((table.states(), table.updates), (0, 0));
    // an empty table acts like the random policy
    let acts = |seed| {
        let traj = run_policy(&g, &cfg, &[0], &mut QPolicy::new(table.clone()), &r(30, 1), seed).unwrap();
        traj.steps.iter().map(|s| s.actions.clone()).collect::<Vec<_>>()
    };
    assert_ne!(acts(1), acts(2));
    let tiny = QConfig { max_states: 3, ..QConfig::default() };
    assert!(matches!(smdp_q_learn(&g, &cfg, &[0], &tiny, None), Err(patrolbench::Error::Limit(_))));
    let no_t = MdpConfig::new(None, r(1, 1), 2).unwrap();
    assert!(smdp_q_learn(&g, &no_t, &[0], &QConfig::default(), None).is_err());
}

#[test]
fn q_learning_is_reproducible_and_counts_updates() {
    let g = instances::triangle::<Rational>();
    let cfg = MdpConfig::new(Some(r(0, 1)), r(1, 1), 1).unwrap();
    let qc = QConfig { budget: 5_000, seed: 3, ..QConfig::default() };
    let a = smdp_q_learn(&g, &cfg, &[0], &qc, None).unwrap();
    let b = smdp_q_learn(&g, &cfg, &[0], &qc, None).unwrap();
    assert_eq!(a.values, b.values);
    assert_eq!(a.updates, 5_000);
    assert!(a.values.values().flatten().all(|q| q.is_finite() && *q >= 0.0));
}
