//! Event-driven kernel for multi-robot persistent monitoring on weighted graphs.
//!
//! Robots move at unit speed along the edges of a weighted graph; every node
//! accumulates latency (time since its last visit) and the quality of a
//! strategy is the tail supremum of the worst weighted latency. The crate
//! provides:
//!
//! * [`graph`]: graphs, the shortest-path metric, diameter, TSP tours and
//!   Laplacian positional encodings;
//! * [`world`]: an exact event-driven simulator and event logs;
//! * [`mdp`]: the event-driven MDP with tracker, rewards and estimators;
//! * [`policy`]: heuristic policies behind one decision interface;
//! * [`learn`]: advantage estimation, return normalization, demonstration
//!   datasets and tabular SMDP Q-learning;
//! * [`oracle`]: exhaustive search for optimal periodic strategies on tiny
//!   instances, periodic closure and exact periodic evaluation;
//! * [`metrics`]: idleness metrics computed exactly from event logs.
//!
//! Everything is generic over a [`Scalar`]; the aliases below fix the two
//! instantiations used in practice.

pub mod error;
pub mod graph;
pub mod instances;
pub mod learn;
pub mod mdp;
pub mod metrics;
pub mod oracle;
pub mod policy;
pub mod scalar;
pub mod world;

pub use error::{Error, Result};
pub use scalar::{ExactScalar, Scalar};

/// Exact rational time/length type used by the simulator and the oracle.
pub type Rational = num_rational::Ratio<i64>;

pub type ExactGraph = graph::MonitorGraph<Rational>;
pub type ExactState = world::WorldState<Rational>;
pub type ExactLog = world::EventLog<Rational>;
pub type ExactEventState = mdp::EventState<Rational>;
pub type ExactMdpConfig = mdp::MdpConfig<Rational>;
pub type ExactStrategy = oracle::PeriodicStrategy<Rational>;

pub type FloatGraph = graph::MonitorGraph<f64>;
pub type FloatLog = world::EventLog<f64>;
pub type FloatEventState = mdp::EventState<f64>;

