mod common;

use common::{cases, r};
use patrolbench::metrics::*;
use patrolbench::policy::{run_policy, RandomPolicy};
use patrolbench::{ExactLog, Rational};
use num_traits::Signed;
use proptest::prelude::*;

fn log_of(c: &common::Case) -> ExactLog {
    run_policy(&c.g, &c.cfg, &c.p0, &mut RandomPolicy::new(), &r(15, 1), c.seed).unwrap().log
}

/// Latencies are linear between events, so the midpoint rule is exact.
fn midpoint_integral(log: &ExactLog) -> Rational {
    let ts = log.event_times();
    let n = Rational::from_integer(log.weights.len() as i64);
    ts.windows(2)
        .map(|w| {
            let mid = (w[0] + w[1]) / r(2, 1);
            let mean: Rational = log.weights.iter().zip(log.latencies_at(&mid).unwrap()).map(|(a, b)| a * b).sum::<Rational>() / n;
            mean * (w[1] - w[0])
        })
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metric_orderings(c in cases(), a in 0i64..=30, b in 0i64..=30) {
        let log = log_of(&c);
        let (t1, t2) = (r(a.min(b), 2), r(a.max(b), 2));
        prop_assert!(wi(&log, &t1).unwrap() <= wi(&log, &t2).unwrap());
        prop_assert!(tail_wi(&log, &t2, &r(15, 1)).unwrap() <= tail_wi(&log, &t1, &r(15, 1)).unwrap());
        prop_assert!(igi(&log, &t1).unwrap() <= iwi(&log, &t1).unwrap());
        prop_assert!(agi(&log, &r(15, 1)).unwrap() <= wi(&log, &r(15, 1)).unwrap());
        prop_assert!(iwi(&log, &t2).unwrap() <= wi(&log, &t2).unwrap());
    }

    #[test]
    fn integral_matches_midpoint_rule(c in cases()) {
        let log = log_of(&c);
        prop_assert_eq!(igi_integral(&log, &r(15, 1)).unwrap(), midpoint_integral(&log));
    }

    #[test]
    fn report_round_trips_through_csv(c in cases()) {
        let log = log_of(&c);
        let rep = report(&log, &r(5, 1)).unwrap();
        let rows = parse_csv::<Rational>(&rep.to_csv(DEFAULT_DIGITS)).unwrap();
        prop_assert_eq!(rows.len(), log.records.len() + 1);
        for ((t, g, w), ((t2, g2), (_, w2))) in rows.iter().zip(rep.igi_series.iter().zip(&rep.iwi_series)) {
            // twelve significant digits
            let close = |x: &Rational, y: &Rational| (x - y).abs() <= r(1, 1_000_000_000) * (r(1, 1) + y.abs());
            prop_assert!(close(t, t2) && close(g, g2) && close(w, w2));
        }
        let summary = rep.summary(DEFAULT_DIGITS);
        let back: MetricsSummary = serde_json::from_str(&serde_json::to_string(&summary).unwrap()).unwrap();
        prop_assert_eq!(back, summary);
    }
}
