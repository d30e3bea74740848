//! Detectors over finished traces: round-trip timing statistics and binary
//! delay-sequence correlation.
//!
//! The timing rules ride on a geometric fact: with both parties processing
//! instantly, the interval between a party's two exchange events is twice
//! the one-way latency, and Bob's mean event time is twice Alice's. A relay
//! sitting on the path shrinks the intervals (if close) or stretches the
//! total (if distant), and skews the mean ratio either way.
//!
//! The delay detector assigns one ±1 symbol per round: the delaying party
//! stalls its scheduled emission by delta ticks on +1 and not at all on −1.
//! The counterparty re-estimates the symbols from its observed intervals
//! and correlates against the agreed sequence; a relay that answers from
//! its own clock destroys the correlation.
//!
//! All detector functions are pure; ratio comparisons echo their thresholds
//! in the verdict for auditability.

use crate::netsim::Trace;
use crate::types::{EventKind, NodeId, Tick};
use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize, Serializer};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

pub const RULE_INTERVAL_SHRINK: &str = "interval-shrink";
pub const RULE_MEAN_RATIO: &str = "mean-ratio-deviation";
pub const RULE_TOTAL_TIME: &str = "total-time-doubling";
pub const RULE_CORRELATION: &str = "correlation-failure";

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("insufficient-data: {0}")]
    InsufficientData(String),
    #[error("invalid-parameter: {0}")]
    InvalidParameter(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

/// Detection thresholds. Defaults separate the reference scenarios with
/// wide margins; every one is scenario-configurable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// Flag when an interval falls below shrink × baseline interval.
    pub shrink: f64,
    /// Flag when |mean_B/mean_A − 2| exceeds this.
    pub ratio: f64,
    /// Flag when completion exceeds double × baseline total.
    pub double: f64,
    /// Flag when normalized delay correlation falls below this.
    pub correlation: f64,
}

impl Default for Thresholds {
    fn default() -> Thresholds {
        Thresholds { shrink: 0.75, ratio: 0.5, double: 1.5, correlation: 0.8 }
    }
}

// -------------------------------------------------------------------------
// Timing statistics

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingStats {
    pub party: NodeId,
    /// The party's two exchange ticks, normalized to the session origin.
    pub exchange_ticks: Vec<Tick>,
    /// T: difference of the two exchange ticks.
    pub interval: Tick,
    pub mean: f64,
}

/// Extracts a party's two exchange events for one session and normalizes
/// them to the session's earliest trace event. The initiator's pair is
/// (pass-1 send, pass-2 receive); the responder's is (pass-1 receive,
/// pass-3 receive).
pub fn exchange_times(trace: &Trace, party: NodeId, session_id: u64) -> Result<TimingStats, DetectError> {
    let events: Vec<_> = trace.events.iter().filter(|e| e.session_id == session_id).collect();
    let origin = events
        .iter()
        .map(|e| e.tick)
        .min()
        .ok_or_else(|| DetectError::InsufficientData(format!("no events for session {session_id}")))?;
    let pick = |kind: EventKind, pass: u8| {
        events
            .iter()
            .find(|e| e.node == party && e.kind == kind && e.pass_index == Some(pass))
            .map(|e| e.tick)
    };
    let pair = match party {
        NodeId::Alice => (pick(EventKind::Send, 1), pick(EventKind::Recv, 2)),
        _ => (pick(EventKind::Recv, 1), pick(EventKind::Recv, 3)),
    };
    let (t1, t2) = match pair {
        (Some(a), Some(b)) => (a - origin, b - origin),
        _ => {
            return Err(DetectError::InsufficientData(format!(
                "{party} logged fewer than 2 exchange events in session {session_id}"
            )))
        }
    };
    Ok(TimingStats {
        party,
        interval: t2 - t1,
        mean: (t1 + t2) as f64 / 2.0,
        exchange_ticks: vec![t1, t2],
    })
}

// -------------------------------------------------------------------------
// Verdicts

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuleOutcome {
    pub flag: bool,
    pub evidence: f64,
}

// Infinite evidence (degenerate mean ratio) serializes as the string "inf";
// JSON has no literal for it.
impl Serialize for RuleOutcome {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("RuleOutcome", 2)?;
        st.serialize_field("flag", &self.flag)?;
        if self.evidence.is_finite() {
            st.serialize_field("evidence", &self.evidence)?;
        } else {
            st.serialize_field("evidence", "inf")?;
        }
        st.end()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub rules: BTreeMap<String, RuleOutcome>,
    /// OR of the rule flags.
    pub overall: bool,
    /// The threshold each rule was judged against.
    pub thresholds: BTreeMap<String, f64>,
}

impl Verdict {
    fn new(rules: BTreeMap<String, RuleOutcome>, thresholds: BTreeMap<String, f64>) -> Verdict {
        let overall = rules.values().any(|r| r.flag);
        Verdict { rules, overall, thresholds }
    }

    pub fn rule(&self, name: &str) -> Option<&RuleOutcome> {
        self.rules.get(name)
    }
}

/// Applies the three timing rules. Baselines come from the topology (or a
/// calibration run): baseline_t is the honest exchange interval, baseline
/// total the honest completion tick.
pub fn timing_verdict(
    stats_a: &TimingStats,
    stats_b: &TimingStats,
    baseline_t: Tick,
    baseline_total: Tick,
    thresholds: &Thresholds,
) -> Result<Verdict, DetectError> {
    if baseline_t == 0 || baseline_total == 0 {
        return Err(DetectError::InvalidParameter("baselines must be positive".into()));
    }
    let mut rules = BTreeMap::new();
    let mut echoed = BTreeMap::new();

    let min_interval = stats_a.interval.min(stats_b.interval) as f64;
    rules.insert(
        RULE_INTERVAL_SHRINK.to_string(),
        RuleOutcome {
            flag: min_interval < thresholds.shrink * baseline_t as f64,
            evidence: min_interval,
        },
    );
    echoed.insert(RULE_INTERVAL_SHRINK.to_string(), thresholds.shrink);

    let (flag, ratio) = if stats_a.mean == 0.0 {
        (true, f64::INFINITY)
    } else {
        let r = stats_b.mean / stats_a.mean;
        ((r - 2.0).abs() > thresholds.ratio, r)
    };
    rules.insert(RULE_MEAN_RATIO.to_string(), RuleOutcome { flag, evidence: ratio });
    echoed.insert(RULE_MEAN_RATIO.to_string(), thresholds.ratio);

    // The responder's second exchange tick is the protocol completion.
    let completion = *stats_b.exchange_ticks.last().expect("stats carry two ticks") as f64;
    rules.insert(
        RULE_TOTAL_TIME.to_string(),
        RuleOutcome {
            flag: completion > thresholds.double * baseline_total as f64,
            evidence: completion,
        },
    );
    echoed.insert(RULE_TOTAL_TIME.to_string(), thresholds.double);

    Ok(Verdict::new(rules, echoed))
}

// -------------------------------------------------------------------------
// Delay sequences

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SequenceKind {
    MSequence,
    Walsh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceParams {
    MSequence { k: u32, taps: u16, seed: u64 },
    Walsh { row: u32, n: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DelaySequence {
    pub kind: SequenceKind,
    /// ±1 symbols.
    pub values: Vec<i32>,
    pub params: SequenceParams,
}

/// Built-in primitive feedback polynomials (full mask, constant term set):
/// the only taps [`gen_mseq`] accepts.
pub fn default_taps(k: u32) -> Option<u16> {
    match k {
        3 => Some(0x0B),  // x^3 + x + 1
        4 => Some(0x13),  // x^4 + x + 1
        5 => Some(0x25),  // x^5 + x^2 + 1
        6 => Some(0x43),  // x^6 + x + 1
        7 => Some(0x83),  // x^7 + x + 1
        8 => Some(0x171), // x^8 + x^6 + x^5 + x^4 + 1
        _ => None,
    }
}

/// Maximal-length LFSR sequence of length 2^k − 1. Fibonacci form: output
/// is the state's low bit, feedback is the parity of the tapped bits,
/// shifted in at the top. Bits map 0 → +1, 1 → −1.
pub fn gen_mseq(k: u32, taps: u16, seed: u64) -> Result<DelaySequence, DetectError> {
    let expected = default_taps(k)
        .ok_or_else(|| DetectError::Unsupported(format!("no built-in taps for degree {k}")))?;
    if taps != expected {
        return Err(DetectError::Unsupported(format!(
            "taps {taps:#x} are not the built-in polynomial for degree {k}"
        )));
    }
    let mut state = seed & ((1u64 << k) - 1);
    if state == 0 {
        return Err(DetectError::InvalidParameter("LFSR seed must be nonzero in its low k bits".into()));
    }
    // Recurrence s[n+k] = Σ s[n+j] over the polynomial's low-order
    // coefficients, so its characteristic polynomial is the table entry.
    let fb_mask = (taps as u64) & ((1u64 << k) - 1);
    let n = (1usize << k) - 1;
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        let out = state & 1;
        values.push(if out == 0 { 1 } else { -1 });
        let fb = (state & fb_mask).count_ones() as u64 & 1;
        state = (state >> 1) | (fb << (k - 1));
    }
    Ok(DelaySequence {
        kind: SequenceKind::MSequence,
        values,
        params: SequenceParams::MSequence { k, taps, seed },
    })
}

/// Row of the order-n Hadamard matrix (Sylvester construction):
/// values[j] = +1 iff popcount(row & j) is even.
pub fn gen_walsh(row: u32, n: u32) -> Result<DelaySequence, DetectError> {
    if n == 0 || !n.is_power_of_two() {
        return Err(DetectError::InvalidParameter(format!("order {n} is not a power of two")));
    }
    if row >= n {
        return Err(DetectError::InvalidParameter(format!("row {row} out of range for order {n}")));
    }
    let values = (0..n)
        .map(|j| if (row & j).count_ones().is_multiple_of(2) { 1 } else { -1 })
        .collect();
    Ok(DelaySequence { kind: SequenceKind::Walsh, values, params: SequenceParams::Walsh { row, n } })
}

/// Cyclic correlation Σᵢ x[i]·y[(i+lag) mod n].
pub fn correlate(x: &[i32], y: &[i32], lag: usize) -> Result<i64, DetectError> {
    if x.is_empty() || x.len() != y.len() {
        return Err(DetectError::InvalidParameter(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if lag >= x.len() {
        return Err(DetectError::InvalidParameter(format!("lag {lag} out of range")));
    }
    let n = x.len();
    Ok((0..n).map(|i| x[i] as i64 * y[(i + lag) % n] as i64).sum())
}

/// Re-estimates the delaying party's symbols from the counterparty's
/// observed intervals, one session per sequence position, and correlates
/// the estimate against the agreed sequence at lag 0. `baseline_interval`
/// is the honest exchange interval (twice the direct one-way latency).
pub fn delay_verdict(
    trace: &Trace,
    party: NodeId,
    expected: &DelaySequence,
    delta: Tick,
    threshold: f64,
    baseline_interval: Tick,
) -> Result<Verdict, DetectError> {
    let observer = match party {
        NodeId::Alice => NodeId::Bob,
        NodeId::Bob => NodeId::Alice,
        NodeId::Eve => {
            return Err(DetectError::InvalidParameter("the delaying party must be honest".into()))
        }
    };
    if delta == 0 {
        return Err(DetectError::InvalidParameter("delta must be positive".into()));
    }
    let n = expected.values.len();
    let started: BTreeSet<u64> = trace
        .events
        .iter()
        .filter(|e| e.kind == EventKind::Send && e.pass_index == Some(1))
        .map(|e| e.session_id)
        .collect();
    if started.len() != n {
        return Err(DetectError::InvalidParameter(format!(
            "round count {} does not match the sequence length {n}",
            started.len()
        )));
    }
    let mut estimate = Vec::with_capacity(n);
    for session in 0..n as u64 {
        let stats = exchange_times(trace, observer, session)?;
        let residual = stats.interval as i64 - baseline_interval as i64;
        // Decision boundary at delta/2, kept in integers.
        estimate.push(if 2 * residual >= delta as i64 { 1 } else { -1 });
    }
    let corr = correlate(&estimate, &expected.values, 0)?;
    let normalized = corr as f64 / n as f64;
    let mut rules = BTreeMap::new();
    rules.insert(
        RULE_CORRELATION.to_string(),
        RuleOutcome { flag: normalized < threshold, evidence: normalized },
    );
    let mut echoed = BTreeMap::new();
    echoed.insert(RULE_CORRELATION.to_string(), threshold);
    Ok(Verdict::new(rules, echoed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::TraceEvent;

    fn ev(tick: Tick, node: NodeId, kind: EventKind, session_id: u64, pass: Option<u8>) -> TraceEvent {
        TraceEvent { tick, node, kind, session_id, pass_index: pass, seq: 0 }
    }

    fn trace(events: Vec<TraceEvent>) -> Trace {
        Trace { seed: 0, config_digest: String::new(), events }
    }

    /// One three-pass session at the given round offsets.
    fn session_events(base: Tick, sid: u64, a: (Tick, Tick), b: (Tick, Tick)) -> Vec<TraceEvent> {
        vec![
            ev(base + a.0, NodeId::Alice, EventKind::Send, sid, Some(1)),
            ev(base + b.0, NodeId::Bob, EventKind::Recv, sid, Some(1)),
            ev(base + b.0, NodeId::Bob, EventKind::Send, sid, Some(2)),
            ev(base + a.1, NodeId::Alice, EventKind::Recv, sid, Some(2)),
            ev(base + a.1, NodeId::Alice, EventKind::Send, sid, Some(3)),
            ev(base + b.1, NodeId::Bob, EventKind::Recv, sid, Some(3)),
        ]
    }

    #[test]
    fn exchange_times_normal_case() {
        let t = trace(session_events(0, 0, (0, 4), (2, 6)));
        let a = exchange_times(&t, NodeId::Alice, 0).unwrap();
        let b = exchange_times(&t, NodeId::Bob, 0).unwrap();
        assert_eq!(a.exchange_ticks, vec![0, 4]);
        assert_eq!(b.exchange_ticks, vec![2, 6]);
        assert_eq!((a.interval, b.interval), (4, 4));
        assert_eq!((a.mean, b.mean), (2.0, 4.0));
    }

    #[test]
    fn exchange_times_midway_mim_case() {
        let t = trace(session_events(0, 0, (0, 2), (4, 6)));
        let a = exchange_times(&t, NodeId::Alice, 0).unwrap();
        let b = exchange_times(&t, NodeId::Bob, 0).unwrap();
        assert_eq!((a.interval, b.interval), (2, 2));
        assert_eq!((a.mean, b.mean), (1.0, 5.0));
    }

    #[test]
    fn exchange_times_normalizes_to_session_origin() {
        let t = trace(session_events(80, 3, (0, 4), (2, 6)));
        let a = exchange_times(&t, NodeId::Alice, 3).unwrap();
        assert_eq!(a.exchange_ticks, vec![0, 4]);
        assert_eq!(a.mean, 2.0);
    }

    #[test]
    fn exchange_times_needs_two_events() {
        let t = trace(vec![ev(0, NodeId::Alice, EventKind::Send, 0, Some(1))]);
        assert!(matches!(
            exchange_times(&t, NodeId::Alice, 0),
            Err(DetectError::InsufficientData(_))
        ));
        assert!(matches!(
            exchange_times(&t, NodeId::Bob, 1),
            Err(DetectError::InsufficientData(_))
        ));
    }

    fn stats_for(t: &Trace) -> (TimingStats, TimingStats) {
        (
            exchange_times(t, NodeId::Alice, 0).unwrap(),
            exchange_times(t, NodeId::Bob, 0).unwrap(),
        )
    }

    #[test]
    fn timing_verdict_clears_the_normal_case() {
        let t = trace(session_events(0, 0, (0, 4), (2, 6)));
        let (a, b) = stats_for(&t);
        let v = timing_verdict(&a, &b, 4, 6, &Thresholds::default()).unwrap();
        assert!(!v.overall);
        assert_eq!(v.rule(RULE_MEAN_RATIO).unwrap().evidence, 2.0);
    }

    #[test]
    fn timing_verdict_flags_the_midway_mim() {
        let t = trace(session_events(0, 0, (0, 2), (4, 6)));
        let (a, b) = stats_for(&t);
        let v = timing_verdict(&a, &b, 4, 6, &Thresholds::default()).unwrap();
        assert!(v.overall);
        assert!(v.rule(RULE_INTERVAL_SHRINK).unwrap().flag);
        assert!(v.rule(RULE_MEAN_RATIO).unwrap().flag);
        assert_eq!(v.rule(RULE_MEAN_RATIO).unwrap().evidence, 5.0);
        assert!(!v.rule(RULE_TOTAL_TIME).unwrap().flag);
    }

    #[test]
    fn timing_verdict_flags_the_distant_relay_by_total_time() {
        let t = trace(session_events(0, 0, (0, 4), (8, 12)));
        let (a, b) = stats_for(&t);
        let v = timing_verdict(&a, &b, 4, 6, &Thresholds::default()).unwrap();
        assert!(v.overall);
        assert!(!v.rule(RULE_INTERVAL_SHRINK).unwrap().flag);
        assert!(v.rule(RULE_MEAN_RATIO).unwrap().flag);
        assert_eq!(v.rule(RULE_MEAN_RATIO).unwrap().evidence, 5.0);
        assert!(v.rule(RULE_TOTAL_TIME).unwrap().flag);
        assert_eq!(v.rule(RULE_TOTAL_TIME).unwrap().evidence, 12.0);
    }

    #[test]
    fn timing_verdict_treats_zero_mean_as_maximal_deviation() {
        let a = TimingStats { party: NodeId::Alice, exchange_ticks: vec![0, 0], interval: 0, mean: 0.0 };
        let b = TimingStats { party: NodeId::Bob, exchange_ticks: vec![2, 6], interval: 4, mean: 4.0 };
        let v = timing_verdict(&a, &b, 4, 6, &Thresholds::default()).unwrap();
        let rule = v.rule(RULE_MEAN_RATIO).unwrap();
        assert!(rule.flag);
        assert!(rule.evidence.is_infinite());
        let json = serde_json::to_string(&v).unwrap();
        assert!(json.contains("\"evidence\":\"inf\""));
    }

    #[test]
    fn timing_verdict_rejects_zero_baselines() {
        let t = trace(session_events(0, 0, (0, 4), (2, 6)));
        let (a, b) = stats_for(&t);
        assert!(timing_verdict(&a, &b, 0, 6, &Thresholds::default()).is_err());
    }

    #[test]
    fn desk_lfsr_produces_the_reference_bits() {
        // k=3, taps x^3+x+1, seed 001: s[n+3] = s[n+1] ⊕ s[n] from
        // s = 1,0,0 gives the output bits 1,0,0,1,0,1,1.
        let s = gen_mseq(3, 0x0B, 1).unwrap();
        assert_eq!(s.values, vec![-1, 1, 1, -1, 1, -1, -1]);
    }

    #[test]
    fn msequences_have_two_valued_autocorrelation() {
        for k in 3..=8u32 {
            let taps = default_taps(k).unwrap();
            let s = gen_mseq(k, taps, 1).unwrap();
            let n = (1usize << k) - 1;
            assert_eq!(s.values.len(), n);
            assert_eq!(correlate(&s.values, &s.values, 0).unwrap(), n as i64);
            for lag in 1..n {
                assert_eq!(
                    correlate(&s.values, &s.values, lag).unwrap(),
                    -1,
                    "k={k} lag={lag}"
                );
            }
        }
    }

    #[test]
    fn mseq_rejects_bad_parameters() {
        assert!(matches!(gen_mseq(3, 0x0B, 0), Err(DetectError::InvalidParameter(_))));
        assert!(matches!(gen_mseq(3, 0x0B, 8), Err(DetectError::InvalidParameter(_)))); // 0b1000 & 0b111 = 0
        assert!(matches!(gen_mseq(3, 0x0C, 1), Err(DetectError::Unsupported(_))));
        assert!(matches!(gen_mseq(9, 0x0B, 1), Err(DetectError::Unsupported(_))));
    }

    #[test]
    fn walsh_rows_are_orthogonal() {
        let r0 = gen_walsh(0, 4).unwrap();
        assert_eq!(r0.values, vec![1, 1, 1, 1]);
        let r1 = gen_walsh(1, 4).unwrap();
        let r2 = gen_walsh(2, 4).unwrap();
        assert_eq!(correlate(&r1.values, &r2.values, 0).unwrap(), 0);
        for a in 0..8u32 {
            for b in 0..8u32 {
                let x = gen_walsh(a, 8).unwrap();
                let y = gen_walsh(b, 8).unwrap();
                let dot = correlate(&x.values, &y.values, 0).unwrap();
                assert_eq!(dot, if a == b { 8 } else { 0 }, "rows {a},{b}");
            }
        }
    }

    #[test]
    fn walsh_rejects_bad_parameters() {
        assert!(gen_walsh(0, 3).is_err());
        assert!(gen_walsh(4, 4).is_err());
    }

    #[test]
    fn correlate_is_shift_invariant_and_checked() {
        let x = vec![1, -1, 1, 1, -1];
        let y = vec![-1, -1, 1, -1, 1];
        let rot = |v: &[i32]| -> Vec<i32> {
            let mut r = v.to_vec();
            r.rotate_left(1);
            r
        };
        for lag in 0..x.len() {
            assert_eq!(
                correlate(&x, &y, lag).unwrap(),
                correlate(&rot(&x), &rot(&y), lag).unwrap()
            );
        }
        assert!(correlate(&x, &y[..4], 0).is_err());
        assert!(correlate(&x, &y, 5).is_err());
        assert!(correlate(&[], &[], 0).is_err());
    }

    /// n rounds at the given spacing; Bob stalls his pass-2 reply by d_i.
    fn delayed_trace(delays: &[Tick], spacing: Tick) -> Trace {
        let mut events = Vec::new();
        for (i, d) in delays.iter().enumerate() {
            events.extend(session_events(i as Tick * spacing, i as u64, (0, 4 + d), (2, 6 + d)));
        }
        trace(events)
    }

    #[test]
    fn delay_verdict_passes_the_honest_schedule() {
        let s = gen_mseq(3, 0x0B, 1).unwrap();
        let delta = 2;
        let delays: Vec<Tick> = s.values.iter().map(|v| if *v > 0 { delta } else { 0 }).collect();
        let t = delayed_trace(&delays, 40);
        let v = delay_verdict(&t, NodeId::Bob, &s, delta, 0.8, 4).unwrap();
        let rule = v.rule(RULE_CORRELATION).unwrap();
        assert!(!rule.flag);
        assert_eq!(rule.evidence, 1.0);
    }

    #[test]
    fn delay_verdict_flags_a_flat_relay() {
        // A relay answering from its own clock: Alice's intervals never move.
        let s = gen_mseq(3, 0x0B, 1).unwrap();
        let t = delayed_trace(&[0; 7], 40);
        let v = delay_verdict(&t, NodeId::Bob, &s, 2, 0.8, 4).unwrap();
        let rule = v.rule(RULE_CORRELATION).unwrap();
        assert!(rule.flag);
        // All symbols estimate −1; an m-sequence sums to −1, so the
        // normalized correlation collapses to 1/n.
        assert!((rule.evidence - 1.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn delay_verdict_checks_the_round_count() {
        let s = gen_mseq(3, 0x0B, 1).unwrap();
        let t = delayed_trace(&[0; 6], 40);
        assert!(matches!(
            delay_verdict(&t, NodeId::Bob, &s, 2, 0.8, 4),
            Err(DetectError::InvalidParameter(_))
        ));
    }

    #[test]
    fn verdict_json_shape_is_stable() {
        let t = trace(session_events(0, 0, (0, 4), (2, 6)));
        let (a, b) = stats_for(&t);
        let v = timing_verdict(&a, &b, 4, 6, &Thresholds::default()).unwrap();
        let json = serde_json::to_string(&v).unwrap();
        assert!(json.starts_with("{\"rules\":{\"interval-shrink\":{\"flag\":false,\"evidence\":4.0}"));
        assert!(json.contains("\"overall\":false"));
        assert!(json.contains("\"thresholds\":{"));
    }
}
