mod common;

use common::r;
use patrolbench::graph::MonitorGraph;
use patrolbench::instances;
use patrolbench::mdp::MdpConfig;
use patrolbench::oracle::{close_and_loop, evaluate_periodic, exact_optimum, verify_discretization, Extended, PeriodicStrategy, SearchBounds};
use patrolbench::world::{run_plan, world_reset, RobotPlan, Segment};
use patrolbench::{ExactGraph, Rational};

/// Tail value of per-robot lasso plans by direct simulation: after the
/// longest prefix plus one joint period the latencies repeat, so one more
/// joint period (and everything from `T`) bounds the supremum.
fn lasso_value(g: &ExactGraph, p0: &[usize], plans: &[RobotPlan<Rational>], t: Rational) -> Option<Rational> {
    let len = |segs: &[Segment<Rational>], at: usize| {
        let mut here = at;
        let mut total = r(0, 1);
        for s in segs {
            match s {
                Segment::Traverse(x) => {
                    total += *g.edge_length(here, *x).unwrap();
                    here = *x;
                }
                Segment::Wait(d) => total += *d,
            }
        }
        (total, here)
    };
    let mut pre = r(0, 1);
    let mut periods = Vec::new();
    for (plan, &v) in plans.iter().zip(p0) {
        let (a, at) = len(&plan.prefix, v);
        let (b, _) = len(&plan.cycle, at);
        pre = pre.max(a);
        periods.push(b);
    }
    // joint period: least common multiple of rational periods
    let joint = periods.iter().fold(periods[0], |acc, p| {
        let (n, d) = (num_integer::lcm(*acc.numer() * p.denom(), *p.numer() * acc.denom()), acc.denom() * p.denom());
        Rational::new(n, d)
    });
    let end = t.max(pre + joint) + joint + joint;
    let log = run_plan(g, world_reset(g, p0).unwrap(), plans, &end).unwrap();
    if log.final_state.latencies.iter().any(|l| *l > joint) {
        return None;
    }
    Some(log.tail_sup(&t.min(end), &end).unwrap())
}

/// All single-robot segment sequences of exactly `n` steps from `v`.
fn sequences(g: &ExactGraph, v: usize, n: usize, waits: &[Rational]) -> Vec<(Vec<Segment<Rational>>, usize)> {
    if n == 0 {
        return vec![(Vec::new(), v)];
    }
    let mut out = Vec::new();
    for (seq, at) in sequences(g, v, n - 1, waits) {
        for &(x, _) in g.neighbors(at) {
            let mut s = seq.clone();
            s.push(Segment::Traverse(x));
            out.push((s, x));
        }
        for w in waits {
            let mut s = seq.clone();
            s.push(Segment::Wait(*w));
            out.push((s, at));
        }
    }
    out
}

/// Best single-robot lasso with prefix and cycle lengths up to the limits.
fn brute_force(g: &ExactGraph, v: usize, t: Rational, delta: Rational, kappa: i64, max_prefix: usize, max_cycle: usize) -> Rational {
    let waits: Vec<Rational> = (1..=kappa).map(|k| delta * r(k, 1)).collect();
    let mut best: Option<Rational> = None;
    for p in 0..=max_prefix {
        for (prefix, at) in sequences(g, v, p, &waits) {
            for c in 1..=max_cycle {
                for (cycle, end) in sequences(g, at, c, &waits) {
                    if end != at || cycle.iter().all(|s| matches!(s, Segment::Wait(_))) && g.node_count() > 1 {
                        continue;
                    }
                    let plan = RobotPlan { prefix: prefix.clone(), cycle };
                    if let Some(j) = lasso_value(g, &[v], &[plan], t) {
                        best = Some(best.map_or(j, |b: Rational| b.min(j)));
                    }
                }
            }
        }
    }
    best.expect("some lasso covers the graph")
}

fn optimum(g: &ExactGraph, p0: &[usize], t: Rational, delta: Rational, kappa: u32) -> (Rational, PeriodicStrategy<Rational>) {
    let cfg = MdpConfig::new(Some(t), delta, kappa).unwrap();
    let res = exact_optimum(g, &cfg, p0, &SearchBounds::default()).unwrap();
    assert!(res.certified, "search not certified");
    (res.j_star.unwrap(), res.strategy.unwrap())
}

#[test]
fn oracle_agrees_with_lasso_enumeration() {
    let cases: Vec<(ExactGraph, Rational, Rational, i64, usize, usize)> = vec![
        (instances::two_node(r(2, 1)), r(0, 1), r(1, 1), 1, 1, 2),
        (instances::triangle(), r(0, 1), r(1, 1), 1, 1, 3),
        (instances::triangle(), r(3, 1), r(1, 1), 2, 2, 3),
        (instances::weighted_path3(), r(0, 1), r(1, 1), 1, 1, 4),
        (instances::weighted_path3(), r(4, 1), r(1, 1), 1, 2, 4),
    ];
    for (g, t, delta, kappa, p, c) in cases {
        let (j, strategy) = optimum(&g, &[0], t, delta, kappa as u32);
        assert_eq!(j, brute_force(&g, 0, t, delta, kappa, p, c), "graph {:?}", g.edges());
        // the returned strategy reproduces the optimum by simulation
        assert_eq!(evaluate_periodic(&g, &strategy, &t).unwrap(), Extended::Finite(j));
    }
}

#[test]
fn oracle_never_beats_a_feasible_lasso() {
    for seed in 0..6 {
        let g = instances::random_connected::<Rational>(3, seed, 2);
        let (j, strategy) = optimum(&g, &[0], r(0, 1), r(1, 1), 1);
        assert!(j <= brute_force(&g, 0, r(0, 1), r(1, 1), 1, 1, 4), "seed {seed}");
        assert_eq!(evaluate_periodic(&g, &strategy, &r(0, 1)).unwrap(), Extended::Finite(j));
    }
}

#[test]
fn ground_truth_examples() {
    assert_eq!(optimum(&instances::two_node(r(20, 1)), &[0], r(0, 1), r(1, 1), 2).0, r(40, 1));
    assert_eq!(optimum(&instances::triangle(), &[0], r(0, 1), r(1, 1), 2).0, r(3, 1));
    assert_eq!(optimum(&instances::triangle(), &[0, 0, 0], r(0, 1), r(1, 1), 1).0, r(1, 1));
    assert_eq!(optimum(&instances::triangle(), &[0, 1, 2], r(0, 1), r(1, 1), 1).0, r(0, 1));
    let (j, s) = optimum(&instances::two_node(r(3, 1)), &[0, 0], r(0, 1), r(1, 1), 1);
    assert_eq!(j, r(3, 1));
    assert_eq!(lasso_value(&instances::two_node(r(3, 1)), &[0, 0], &s.plans, r(0, 1)), Some(j));
}

#[test]
fn finer_waits_never_hurt() {
    // halving the wait unit with the same longest wait only adds strategies
    for (g, p0) in [(instances::weighted_path3::<Rational>(), vec![0]), (instances::triangle(), vec![0, 0])] {
        let coarse = optimum(&g, &p0, r(2, 1), r(1, 1), 2).0;
        let fine = optimum(&g, &p0, r(2, 1), r(1, 2), 4).0;
        assert!(fine <= coarse);
    }
}

#[test]
fn late_evaluation_start_does_not_change_the_optimum() {
    // beyond diameter + J*/w_min every node has been covered
    let g = instances::triangle::<Rational>();
    let j = optimum(&g, &[0], r(4, 1), r(1, 1), 1).0;
    assert_eq!(optimum(&g, &[0], r(9, 1), r(1, 1), 1).0, j);
    let g = instances::weighted_path3::<Rational>();
    let j = optimum(&g, &[1], r(8, 1), r(1, 1), 1).0;
    assert_eq!(optimum(&g, &[1], r(13, 1), r(1, 1), 1).0, j);
}

#[test]
fn discretization_examples() {
    let g = instances::two_node::<Rational>(r(2, 1));
    let cfg = MdpConfig::new(Some(r(0, 1)), r(1, 1), 2).unwrap();
    let rep = verify_discretization(&g, &cfg, &[0], &r(1, 4), &SearchBounds::default()).unwrap();
    assert_eq!((rep.j_delta, rep.j_ref, rep.slack), (r(4, 1), r(4, 1), r(2, 1)));
    assert!(rep.holds);
    let g = instances::weighted_path3::<Rational>();
    let cfg = MdpConfig::new(Some(r(2, 1)), r(1, 1), 1).unwrap();
    let rep = verify_discretization(&g, &cfg, &[1], &r(1, 4), &SearchBounds::default()).unwrap();
    assert!(rep.holds && rep.slack > r(0, 1));
    assert!(verify_discretization(&g, &cfg, &[1], &r(1, 3), &SearchBounds::default()).is_err());
}

#[test]
fn example_strategies_as_periodic_loops() {
    let s2 = instances::sigma2::<Rational>();
    let log = run_plan(&s2.graph, s2.initial.clone(), &s2.plans, &r(20, 1)).unwrap();
    let closed = close_and_loop(&s2.graph, &log, &r(5, 1), &r(8, 1)).unwrap();
    assert_eq!(closed.theta, r(0, 1));
    assert_eq!(evaluate_periodic(&s2.graph, &closed.strategy, &r(5, 1)).unwrap(), Extended::Finite(r(3, 2)));
    let s1 = instances::sigma1::<Rational>();
    let strategy = PeriodicStrategy {
        initial: s1.initial,
        plans: s1.plans.iter().map(|p| if p.cycle.is_empty() { RobotPlan { prefix: vec![], cycle: vec![Segment::Wait(r(3, 1))] } } else { p.clone() }).collect(),
        t_star: r(0, 1),
        period: r(3, 1),
        joint_prefix: vec![],
        joint_cycle: vec![],
    };
    assert_eq!(evaluate_periodic(&s1.graph, &strategy, &r(0, 1)).unwrap(), Extended::Finite(r(3, 2)));
    let g = MonitorGraph::<Rational>::from_indexed(vec![r(1, 1)], vec![]).unwrap();
    assert_eq!(optimum(&g, &[0], r(0, 1), r(1, 1), 1).0, r(0, 1));
}
