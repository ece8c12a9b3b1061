#![allow(dead_code)]

use patrolbench::instances;
use patrolbench::mdp::MdpConfig;
use patrolbench::{ExactGraph, ExactMdpConfig, Rational};
use proptest::prelude::*;

pub fn r(n: i64, d: i64) -> Rational {
    Rational::new(n, d)
}

/// Random small instance with its MDP configuration.
#[derive(Clone, Debug)]
pub struct Case {
    pub g: ExactGraph,
    pub cfg: ExactMdpConfig,
    pub p0: Vec<usize>,
    pub seed: u64,
}

pub fn make_case(n: usize, graph_seed: u64, robots: usize, t_halves: Option<i64>, half_delta: bool, kappa: u32, seed: u64) -> Case {
    let g = instances::random_connected::<Rational>(n, graph_seed, 3);
    let delta = if half_delta { r(1, 2) } else { r(1, 1) };
    let cfg = MdpConfig::new(t_halves.map(|h| r(h, 2)), delta, kappa).unwrap();
    let p0 = (0..robots).map(|i| ((seed >> (8 * i)) as usize) % n).collect();
    Case { g, cfg, p0, seed }
}

/// Graphs with 2..=6 nodes, 1..=3 robots, optional T in {0, 1/2, .., 6}.
pub fn cases() -> impl Strategy<Value = Case> {
    (2usize..=6, any::<u64>(), 1usize..=3, proptest::option::of(0i64..=12), any::<bool>(), 1u32..=3, any::<u64>())
        .prop_map(|(n, gs, k, t, h, kappa, seed)| make_case(n, gs, k, t, h, kappa, seed))
}
