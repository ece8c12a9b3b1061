//! Idleness metrics computed exactly from event logs.
//!
//! * IGI: mean weighted latency over the nodes at one instant;
//! * AGI: time average of IGI over the log window;
//! * IWI: worst weighted latency at one instant;
//! * WI: supremum of IWI over the window, and its tail variant from `T`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::world::EventLog;

/// Default number of significant digits in emitted decimals.
pub const DEFAULT_DIGITS: usize = 12;

fn mean_weighted<S: Scalar>(weights: &[S], latencies: &[S]) -> S {
    let total = weights.iter().zip(latencies).fold(S::zero(), |acc, (w, l)| acc + w.clone() * l.clone());
    total / S::from_count(weights.len())
}

fn worst<S: Scalar>(weights: &[S], latencies: &[S]) -> S {
    weights.iter().zip(latencies).fold(S::zero(), |m, (w, l)| crate::scalar::smax(m, w.clone() * l.clone()))
}

/// `(1/|V|) Σ w(v) L_v(t)`.
pub fn igi<S: Scalar>(log: &EventLog<S>, t: &S) -> Result<S> {
    Ok(mean_weighted(&log.weights, &log.latencies_at(t)?))
}

/// `M(t)`.
pub fn iwi<S: Scalar>(log: &EventLog<S>, t: &S) -> Result<S> {
    log.worst_weighted_latency(t)
}

/// Worst weighted latency over the whole window up to `h`.
pub fn wi<S: Scalar>(log: &EventLog<S>, h: &S) -> Result<S> {
    log.tail_sup(log.start_time(), h)
}

/// Worst weighted latency over `[t, h]`.
pub fn tail_wi<S: Scalar>(log: &EventLog<S>, t: &S, h: &S) -> Result<S> {
    log.tail_sup(t, h)
}

/// Exact integral of IGI over `[start, h]`; latencies are piecewise linear
/// so each inter-event piece integrates by the trapezoid rule.
pub fn igi_integral<S: Scalar>(log: &EventLog<S>, h: &S) -> Result<S> {
    if *h < *log.start_time() || *h > *log.horizon() {
        return Err(Error::Range(format!("horizon {h} outside logged window")));
    }
    let two = S::one() + S::one();
    let mut total = S::zero();
    for rec in &log.records {
        if rec.t >= *h {
            break;
        }
        let len = crate::scalar::smin(rec.dt.clone(), h.clone() - rec.t.clone());
        for ((w, l), &occ) in log.weights.iter().zip(&rec.latencies).zip(&rec.occupied) {
            if !occ {
                total = total + w.clone() * (l.clone() * len.clone() + len.clone() * len.clone() / two.clone());
            }
        }
    }
    Ok(total / S::from_count(log.weights.len()))
}

/// Time-averaged IGI over `[start, h]`; equals IGI at the start for an
/// empty window.
pub fn agi<S: Scalar>(log: &EventLog<S>, h: &S) -> Result<S> {
    let span = h.clone() - log.start_time().clone();
    if span.is_zero() {
        return igi(log, h);
    }
    Ok(igi_integral(log, h)? / span)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport<S> {
    pub horizon: S,
    pub t_start: S,
    /// `(t, IGI(t))` at every event time including the horizon.
    pub igi_series: Vec<(S, S)>,
    pub iwi_series: Vec<(S, S)>,
    pub agi: S,
    pub wi: S,
    pub tail_wi: S,
}

/// Assembles the report over the full log with tail start `t_start`.
pub fn report<S: Scalar>(log: &EventLog<S>, t_start: &S) -> Result<MetricsReport<S>> {
    let h = log.horizon().clone();
    let mut igi_series = Vec::with_capacity(log.records.len() + 1);
    let mut iwi_series = Vec::with_capacity(log.records.len() + 1);
    let points = log
        .records
        .iter()
        .map(|r| (&r.t, &r.latencies))
        .chain(std::iter::once((&log.final_state.clock, &log.final_state.latencies)));
    for (t, lat) in points {
        igi_series.push((t.clone(), mean_weighted(&log.weights, lat)));
        iwi_series.push((t.clone(), worst(&log.weights, lat)));
    }
    Ok(MetricsReport {
        agi: agi(log, &h)?,
        wi: wi(log, &h)?,
        tail_wi: tail_wi(log, t_start, &h)?,
        horizon: h,
        t_start: t_start.clone(),
        igi_series,
        iwi_series,
    })
}

/// Summary record with decimal strings.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSummary {
    pub agi: String,
    pub wi: String,
    pub tail_wi: String,
    #[serde(rename = "T")]
    pub t: String,
    #[serde(rename = "H")]
    pub h: String,
}

impl<S: Scalar> MetricsReport<S> {
    pub fn summary(&self, digits: usize) -> MetricsSummary {
        MetricsSummary {
            agi: self.agi.to_decimal(digits),
            wi: self.wi.to_decimal(digits),
            tail_wi: self.tail_wi.to_decimal(digits),
            t: self.t_start.to_decimal(digits),
            h: self.horizon.to_decimal(digits),
        }
    }

    /// CSV with header `t,igi,iwi`, one row per event.
    pub fn to_csv(&self, digits: usize) -> String {
        let mut out = String::from("t,igi,iwi\n");
        for ((t, g), (_, w)) in self.igi_series.iter().zip(&self.iwi_series) {
            out.push_str(&format!("{},{},{}\n", t.to_decimal(digits), g.to_decimal(digits), w.to_decimal(digits)));
        }
        out
    }
}

/// Parses the CSV emitted by [`MetricsReport::to_csv`] back into rows.
pub fn parse_csv<S: Scalar>(text: &str) -> Result<Vec<(S, S, S)>> {
    let mut lines = text.lines();
    if lines.next() != Some("t,igi,iwi") {
        return Err(Error::Parse("missing `t,igi,iwi` header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let cols: Vec<&str> = l.split(',').collect();
            let num = |s: &str| S::parse_literal(s).ok_or_else(|| Error::Parse(format!("bad number `{s}`")));
            match cols.as_slice() {
                [t, g, w] => Ok((num(t)?, num(g)?, num(w)?)),
                _ => Err(Error::Parse(format!("expected 3 columns in `{l}`"))),
            }
        })
        .collect()
}
