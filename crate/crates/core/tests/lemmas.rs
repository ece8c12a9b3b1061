mod common;

use common::{cases, r, Case};
use patrolbench::oracle::{close_and_loop, pose_point};
use patrolbench::policy::{run_policy, RandomPolicy};
use patrolbench::world::{WorldState, EventLog};
use patrolbench::{ExactLog, Rational};
use proptest::prelude::*;

fn rollout(c: &Case, horizon: i64) -> ExactLog {
    run_policy(&c.g, &c.cfg, &c.p0, &mut RandomPolicy::new(), &r(horizon, 1), c.seed).unwrap().log
}

/// Node `v` is seen in `[a, b]` when a robot arrives there or stands on it.
fn visited(log: &ExactLog, v: usize, a: &Rational, b: &Rational) -> bool {
    log.visits.iter().any(|x| x.node == v && x.t >= *a && x.t <= *b)
        || log.records.iter().any(|rec| rec.occupied[v] && rec.t <= *b && rec.t.clone() + rec.dt.clone() >= *a)
}

fn window(log: &ExactLog, i: usize, j: usize) -> (Rational, Rational) {
    let times = log.event_times();
    let (i, j) = (i % times.len(), j % times.len());
    (times[i.min(j)], times[i.max(j)])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn long_windows_cover_every_node(c in cases(), i in any::<usize>(), j in any::<usize>()) {
        let log = rollout(&c, 30);
        let (a, b) = window(&log, i, j);
        let sup = log.tail_sup(&a, &b).unwrap();
        if b - a > sup / *c.g.w_min() {
            for v in 0..c.g.node_count() {
                prop_assert!(visited(&log, v, &a, &b), "node {} unvisited in [{}, {}]", v, a, b);
            }
        }
    }

    #[test]
    fn latency_forgets_its_start_once_visited(c in cases(), i in any::<usize>(), j in any::<usize>(), bumps in prop::collection::vec(0i64..20, 6)) {
        let log = rollout(&c, 20);
        let (a, b) = window(&log, i, j);
        let ia = log.event_times().iter().position(|t| *t == a).unwrap();
        let start = log.state_at_event(ia).unwrap();
        // any latencies in [0, a] except on occupied nodes, which stay at 0
        let occupied = start.occupied(c.g.node_count());
        let lat: Vec<Rational> = (0..c.g.node_count())
            .map(|v| if occupied[v] { r(0, 1) } else { a * r(bumps[v], 19) })
            .collect();
        let moved = WorldState::custom(&c.g, start.poses.clone(), lat.clone(), a).unwrap();
        let mut other = EventLog::start(&c.g, moved);
        for rec in &log.records[ia..] {
            if rec.t >= b { break; }
            other.step(&c.g, rec.commands.clone(), Some(&rec.dt)).unwrap();
        }
        let (x, y) = (log.latencies_at(&b).unwrap(), other.latencies_at(&b).unwrap());
        for v in 0..c.g.node_count() {
            if visited(&log, v, &a, &b) {
                prop_assert_eq!(x[v], y[v], "node {}", v);
            } else {
                prop_assert_eq!(y[v] - x[v], lat[v] - start.latencies[v], "node {}", v);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn closing_a_segment_costs_at_most_w_max_theta(c in cases(), i in any::<usize>(), j in any::<usize>()) {
        let log = rollout(&c, 16);
        let (a, b) = window(&log, i, j);
        prop_assume!(a < b);
        let closed = close_and_loop(&c.g, &log, &a, &b).unwrap();
        let s = &closed.strategy;
        prop_assert_eq!(&s.initial, &log.state_at_event(log.event_times().iter().position(|t| *t == a).unwrap()).unwrap());
        prop_assert!(closed.theta >= closed.max_displacement || closed.theta == r(0, 1));
        // one pass of the loop is the segment followed by the connection
        let pass = s.simulate(&c.g, 1).unwrap();
        prop_assert_eq!(pass.horizon(), &(b + closed.theta));
        prop_assert_eq!(pass.tail_sup(&a, &b).unwrap(), log.tail_sup(&a, &b).unwrap());
        let at = |poses: &[patrolbench::world::RobotPose<Rational>]| poses.iter().map(|p| pose_point(&c.g, p)).collect::<Vec<_>>();
        prop_assert_eq!(at(&pass.final_state.poses), at(&s.initial.poses));
        let bound = log.tail_sup(&a, &b).unwrap() + *c.g.w_max() * closed.theta;
        prop_assert!(pass.tail_sup(&a, pass.horizon()).unwrap() <= bound);
    }
}
