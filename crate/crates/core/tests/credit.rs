mod common;

use common::{cases, r, Case};
use patrolbench::mdp::{actions_for, commands_for, counterfactual_rewards, mdp_transition, AgentAction, Baseline, EventState};
use patrolbench::policy::{run_policy, RandomPolicy};
use patrolbench::world::{world_step, WorldState};
use patrolbench::Rational;
use proptest::prelude::*;

/// A state reached by a random rollout and a random legal joint action.
fn fuzz(c: &Case, stop: u8, picks: &[u8]) -> (EventState<Rational>, Vec<AgentAction>) {
    let traj = run_policy(&c.g, &c.cfg, &c.p0, &mut RandomPolicy::new(), &r(10, 1), c.seed).unwrap();
    let s = traj.steps[stop as usize % traj.steps.len()].state.clone();
    let joint = (0..s.robots())
        .map(|i| {
            let opts = actions_for(&c.g, &c.cfg, &s, i);
            opts[picks[i] as usize % opts.len()]
        })
        .collect();
    (s, joint)
}

fn weighted_worst(w: &[Rational], l: &[Rational]) -> Rational {
    w.iter().zip(l).map(|(a, b)| a * b).fold(r(0, 1), Rational::max)
}

fn drop_at<T: Clone>(v: &[T], x: usize) -> Vec<T> {
    v.iter().enumerate().filter(|(i, _)| *i != x).map(|(_, p)| p.clone()).collect()
}

/// Removes robot `x` from the world and replays the others over the same
/// interval; returns `(R_L, R_z)`.
fn without_robot(c: &Case, s: &EventState<Rational>, joint: &[AgentAction], x: usize) -> (Rational, Rational) {
    let w = c.g.weights();
    let factual = mdp_transition(&c.g, &c.cfg, s, joint).unwrap();
    let cmds = commands_for(&c.g, &c.cfg, s, joint).unwrap();
    let world = WorldState::custom(&c.g, drop_at(&s.world.poses, x), s.world.latencies.clone(), s.world.clock).unwrap();
    let out = world_step(&c.g, &world, &drop_at(&cmds, x), Some(&factual.dt)).unwrap();
    assert_eq!(out.dt, factual.dt);
    let r_l = w.iter().zip(out.state.latencies.iter().zip(factual.next.latencies())).map(|(w, (a, b))| w * (a - b)).sum();
    let t = c.cfg.horizon_t.unwrap_or(r(1_000_000, 1));
    let z = if s.eta >= t {
        s.z.max(out.interval_sup)
    } else if s.eta + factual.dt >= t {
        weighted_worst(w, &out.state.latencies)
    } else {
        r(0, 1)
    };
    (r_l, z - factual.next.z)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn removing_a_robot_never_helps(c in cases(), stop in any::<u8>(), picks in prop::collection::vec(any::<u8>(), 3)) {
        let (s, joint) = fuzz(&c, stop, &picks);
        for x in (0..s.robots()).filter(|&x| s.poses()[x].is_ready()) {
            let credit = counterfactual_rewards(&c.g, &c.cfg, &s, &joint, x).unwrap();
            prop_assert!(credit.r_l >= r(0, 1) && credit.r_z >= r(0, 1));
            prop_assert_eq!((credit.r_l, credit.r_z), without_robot(&c, &s, &joint, x));
            prop_assert_eq!(credit.combined, c.cfg.lambda_l * credit.r_l + c.cfg.lambda_z * credit.r_z);
        }
    }

    #[test]
    fn waiting_under_the_stay_baseline_earns_nothing(c in cases(), stop in any::<u8>(), picks in prop::collection::vec(any::<u8>(), 3), k in 1u32..=3) {
        let (s, mut joint) = fuzz(&c, stop, &picks);
        let cfg = patrolbench::mdp::MdpConfig { baseline: Baseline::HoldAndVisit, ..c.cfg.clone() };
        for x in (0..s.robots()).filter(|&x| s.poses()[x].is_ready()) {
            joint[x] = AgentAction::Wait(k.min(cfg.kappa_max));
            let credit = counterfactual_rewards(&c.g, &cfg, &s, &joint, x).unwrap();
            prop_assert_eq!((credit.r_l, credit.r_z, credit.combined), (r(0, 1), r(0, 1), r(0, 1)));
        }
    }
}

#[test]
fn busy_robots_have_no_credit() {
    let c = common::make_case(3, 1, 1, Some(0), false, 1, 0);
    let s = patrolbench::mdp::mdp_reset(&c.g, &c.p0, &c.cfg).unwrap();
    let to = c.g.neighbors(c.p0[0])[0].0;
    let next = mdp_transition(&c.g, &c.cfg, &s, &[AgentAction::Move(to)]).unwrap().next;
    assert!(next.poses()[0].is_ready());
    let mid = patrolbench::mdp::mdp_transition_capped(&c.g, &c.cfg, &s, &[AgentAction::Move(to)], Some(&r(1, 2))).unwrap().next;
    assert!(counterfactual_rewards(&c.g, &c.cfg, &mid, &[AgentAction::Noop], 0).is_err());
}
