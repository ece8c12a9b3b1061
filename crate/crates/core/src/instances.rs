//! Built-in instances and seeded random graph generators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{MonitorGraph, NodeId};
use crate::scalar::Scalar;
use crate::world::{RobotPlan, RobotPose, Segment, WorldState};

fn int<S: Scalar>(x: i64) -> S {
    S::from_fraction(x, 1)
}

/// Triangle `1,2,3` with unit edges plus node `4` hanging off node `1` by an
/// edge of length 5; all weights 1.
pub fn long_edge<S: Scalar>() -> MonitorGraph<S> {
    MonitorGraph::from_indexed(
        vec![int(1); 4],
        vec![(0, 1, int(1)), (1, 2, int(1)), (2, 0, int(1)), (0, 3, int(5))],
    )
    .expect("valid instance")
}

/// Two unit-weight nodes joined by an edge of length `a`.
pub fn two_node<S: Scalar>(a: S) -> MonitorGraph<S> {
    MonitorGraph::from_indexed(vec![int(1); 2], vec![(0, 1, a)]).expect("valid instance")
}

/// Unit triangle with unit weights.
pub fn triangle<S: Scalar>() -> MonitorGraph<S> {
    MonitorGraph::from_indexed(vec![int(1); 3], vec![(0, 1, int(1)), (1, 2, int(1)), (2, 0, int(1))])
        .expect("valid instance")
}

/// Path `1 - 2 - 3` with a heavy middle node and unequal legs.
pub fn weighted_path3<S: Scalar>() -> MonitorGraph<S> {
    MonitorGraph::from_indexed(vec![int(1), int(3), int(1)], vec![(0, 1, int(1)), (1, 2, int(2))])
        .expect("valid instance")
}

/// Random geometric graph on `n` points of a 10 x 10 square. Points closer
/// than 4.5 are joined; a minimum spanning tree over all pairs keeps the
/// graph connected. Lengths are Euclidean distances rounded up to 0.1,
/// weights are drawn from {1, 2, 3}.
pub fn random_geometric<S: Scalar>(n: usize, seed: u64) -> MonitorGraph<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0))).collect();
    let weights = (0..n).map(|_| int(rng.gen_range(1..=3))).collect();
    let tenths = |i: usize, j: usize| {
        let d = ((pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2)).sqrt();
        ((d * 10.0).ceil() as i64).max(1)
    };
    let mut chosen = vec![vec![false; n]; n];
    // Prim's tree
    let mut in_tree = vec![false; n];
    in_tree[0] = true;
    for _ in 1..n {
        let mut best: Option<(i64, usize, usize)> = None;
        for i in (0..n).filter(|&i| in_tree[i]) {
            for j in (0..n).filter(|&j| !in_tree[j]) {
                let d = tenths(i, j);
                if best.map_or(true, |(bd, _, _)| d < bd) {
                    best = Some((d, i, j));
                }
            }
        }
        let (_, i, j) = best.expect("some node outside the tree");
        in_tree[j] = true;
        chosen[i][j] = true;
        chosen[j][i] = true;
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if chosen[i][j] || tenths(i, j) <= 45 {
                edges.push((i, j, S::from_fraction(tenths(i, j), 10)));
            }
        }
    }
    MonitorGraph::from_indexed(weights, edges).expect("connected by construction")
}

/// Random connected graph: a random spanning tree plus each remaining pair
/// with probability 0.3; integer lengths in `1..=max_len`, weights in {1,2,3}.
pub fn random_connected<S: Scalar>(n: usize, seed: u64, max_len: i64) -> MonitorGraph<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(17));
    let weights = (0..n).map(|_| int(rng.gen_range(1..=3))).collect();
    let mut edges: Vec<(NodeId, NodeId, S)> = Vec::new();
    let mut linked = vec![vec![false; n]; n];
    for j in 1..n {
        let i = rng.gen_range(0..j);
        linked[i][j] = true;
        edges.push((i, j, int(rng.gen_range(1..=max_len))));
    }
    for i in 0..n {
        for j in i + 1..n {
            if !linked[i][j] && rng.gen_bool(0.3) {
                edges.push((i, j, int(rng.gen_range(1..=max_len))));
            }
        }
    }
    MonitorGraph::from_indexed(weights, edges).expect("connected by construction")
}

/// A graph with an initial configuration and one timed plan per robot.
#[derive(Clone, Debug)]
pub struct PlannedInstance<S> {
    pub graph: MonitorGraph<S>,
    pub initial: WorldState<S>,
    pub plans: Vec<RobotPlan<S>>,
}

fn planned<S: Scalar>(poses: Vec<RobotPose<S>>, plans: Vec<RobotPlan<S>>) -> PlannedInstance<S> {
    let graph = long_edge();
    let latencies = vec![S::zero(); graph.node_count()];
    let initial = WorldState::custom(&graph, poses, latencies, S::zero()).expect("valid poses");
    PlannedInstance { graph, initial, plans }
}

fn tour<S>(nodes: &[NodeId]) -> Vec<Segment<S>> {
    nodes.iter().map(|&x| Segment::Traverse(x)).collect()
}

/// Long-edge graph, three robots: two circle the triangle in opposite
/// directions half an edge apart, the third parks on node 4.
pub fn sigma1<S: Scalar>() -> PlannedInstance<S> {
    let half = S::from_fraction(1, 2);
    planned(
        vec![RobotPose::at(0), RobotPose { from: 2, to: 1, remaining: half }, RobotPose::at(3)],
        vec![RobotPlan::cyclic(tour(&[2, 1, 0])), RobotPlan::cyclic(tour(&[0, 2, 1])), RobotPlan { prefix: Vec::new(), cycle: Vec::new() }],
    )
}

/// Long-edge graph, all robots start on node 1: one goes to node 4 and
/// stays, two circle the triangle 3/2 apart.
pub fn sigma2<S: Scalar>() -> PlannedInstance<S> {
    planned(
        vec![RobotPose::at(0); 3],
        vec![
            RobotPlan { prefix: tour(&[3]), cycle: vec![Segment::Wait(S::from_fraction(1, 2))] },
            RobotPlan::cyclic(tour(&[2, 1, 0])),
            RobotPlan { prefix: vec![Segment::Wait(S::from_fraction(3, 2))], cycle: tour(&[2, 1, 0]) },
        ],
    )
}

/// Long-edge graph, all robots start on node 1: one parks on node 4, one
/// shuttles between nodes 2 and 3, one never leaves node 1.
pub fn sigma3<S: Scalar>() -> PlannedInstance<S> {
    planned(
        vec![RobotPose::at(0); 3],
        vec![
            RobotPlan { prefix: tour(&[3]), cycle: Vec::new() },
            RobotPlan { prefix: tour(&[2]), cycle: tour(&[1, 2]) },
            RobotPlan { prefix: Vec::new(), cycle: Vec::new() },
        ],
    )
}
