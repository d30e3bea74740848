//! Batch runner: many seeded simulations of one scenario, detector
//! application, and aggregate statistics.
//!
//! Run i uses seed base+i, so a batch is as reproducible as a single run.
//! Detectors are applied post hoc to each finished trace: the timing rules
//! to round 0 of plain exchanges, the correlation rule whenever a delay
//! schedule is configured.

use crate::adversary::Strategy;
use crate::detect::{self, DetectError, Verdict};
use crate::netsim::{self, NetsimError, SimResult};
use crate::protocol::Variant;
use crate::scenario::Scenario;
use crate::types::NodeId;
use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Sim(#[from] NetsimError),
    #[error("detector failure: {0}")]
    Detect(#[from] DetectError),
}

#[derive(Debug, Clone, Serialize)]
pub struct RuleStat {
    pub flagged: u64,
    pub evaluated: u64,
    pub rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub run: u64,
    pub seed: u64,
    /// Every configured round completed.
    pub completed: bool,
    pub completed_rounds: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abort_reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recovered_equals_sent: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub digest_match: Option<bool>,
    pub eve_recovered: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub piggy_authenticated: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<Verdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delay: Option<Verdict>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub scenario_digest: String,
    pub base_seed: u64,
    pub runs: u64,
    /// Runs in which every round completed. A run either completes or
    /// records at least one abort, so completions + aborts == runs.
    pub completions: u64,
    pub aborts: u64,
    pub aborts_by_reason: BTreeMap<String, u64>,
    /// Per detection rule, over the runs where it was evaluated.
    pub detection: BTreeMap<String, RuleStat>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recovered_equals_sent_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub digest_mismatch_rate: Option<f64>,
    pub eve_recovery_rate: f64,
    /// FakeGift only: runs whose responder accepted the substituted gift.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fake_delivery_rate: Option<f64>,
    pub per_run: Vec<RunRecord>,
}

pub fn run_batch(
    sc: &Scenario,
    runs: u64,
    seed_override: Option<u64>,
) -> Result<(RunSummary, Vec<SimResult>), HarnessError> {
    if runs == 0 {
        return Err(NetsimError::Config("runs: must be at least 1".into()).into());
    }
    let base_seed = seed_override.unwrap_or(sc.seed);
    let direct = sc.topology.latency(NodeId::Alice, NodeId::Bob)?;
    let baseline_t = 2 * direct;
    let baseline_total = 3 * direct;
    let delay_seq = match &sc.delays {
        Some(_) => Some(sc.delay_sequence().map_err(NetsimError::Config)?),
        None => None,
    };
    let gift = sc.adversary.as_ref().filter(|a| a.strategy == Strategy::FakeGift).and_then(|a| a.fake_gift.clone());

    let mut results = Vec::with_capacity(runs as usize);
    let mut per_run = Vec::with_capacity(runs as usize);
    let mut completions = 0u64;
    let mut aborts = 0u64;
    let mut aborts_by_reason: BTreeMap<String, u64> = BTreeMap::new();
    let mut detection: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    let mut equals_seen = 0u64;
    let mut equals_true = 0u64;
    let mut digest_seen = 0u64;
    let mut digest_false = 0u64;
    let mut eve_runs = 0u64;
    let mut fake_seen = 0u64;
    let mut fake_delivered = 0u64;

    for i in 0..runs {
        let seed = base_seed.wrapping_add(i);
        let res = netsim::run(sc, seed)?;

        let completed_rounds = res.rounds.iter().filter(|r| r.completed).count() as u64;
        let completed = completed_rounds == sc.rounds;
        let abort_reason = res
            .rounds
            .iter()
            .find_map(|r| r.abort.as_ref())
            .map(|(_, reason)| reason.to_string());
        for r in &res.rounds {
            if let Some((_, reason)) = &r.abort {
                *aborts_by_reason.entry(reason.to_string()).or_default() += 1;
            }
        }
        if completed {
            completions += 1;
        }
        if abort_reason.is_some() {
            aborts += 1;
        }

        let done: Vec<_> = res.rounds.iter().filter(|r| r.completed).collect();
        let recovered_equals_sent = if done.is_empty() {
            None
        } else {
            Some(done.iter().all(|r| r.bob_recovered == r.alice_sent))
        };
        let digest_match = {
            let checked: Vec<bool> = done.iter().filter_map(|r| r.digest_match).collect();
            if checked.is_empty() { None } else { Some(checked.iter().all(|m| *m)) }
        };
        let eve_recovered = res.rounds.iter().any(|r| r.eve_recovered.is_some());
        let piggy_authenticated = {
            let flags: Vec<bool> = res.rounds.iter().filter_map(|r| r.piggy_authenticated).collect();
            if flags.is_empty() { None } else { Some(flags.iter().all(|a| *a)) }
        };

        if let Some(eq) = recovered_equals_sent {
            equals_seen += 1;
            if eq {
                equals_true += 1;
            }
        }
        if let Some(m) = digest_match {
            digest_seen += 1;
            if !m {
                digest_false += 1;
            }
        }
        if eve_recovered {
            eve_runs += 1;
        }
        if let Some(g) = &gift {
            if !done.is_empty() {
                fake_seen += 1;
                if done.iter().all(|r| r.bob_recovered.as_deref() == Some(g.as_slice())) {
                    fake_delivered += 1;
                }
            }
        }

        let timing = if completed && sc.delays.is_none() && sc.variant != Variant::PiggyBank {
            let a = detect::exchange_times(&res.trace, NodeId::Alice, 0)?;
            let b = detect::exchange_times(&res.trace, NodeId::Bob, 0)?;
            Some(detect::timing_verdict(&a, &b, baseline_t, baseline_total, &sc.thresholds)?)
        } else {
            None
        };
        let delay = match (&delay_seq, completed) {
            (Some(seq), true) => {
                let cfg = sc.delays.as_ref().expect("sequence implies config");
                Some(detect::delay_verdict(
                    &res.trace,
                    cfg.party,
                    seq,
                    cfg.delta,
                    sc.thresholds.correlation,
                    baseline_t,
                )?)
            }
            _ => None,
        };
        for verdict in [timing.as_ref(), delay.as_ref()].into_iter().flatten() {
            for (name, outcome) in &verdict.rules {
                let entry = detection.entry(name.clone()).or_default();
                entry.1 += 1;
                if outcome.flag {
                    entry.0 += 1;
                }
            }
        }

        per_run.push(RunRecord {
            run: i,
            seed,
            completed,
            completed_rounds,
            abort_reason,
            recovered_equals_sent,
            digest_match,
            eve_recovered,
            piggy_authenticated,
            timing,
            delay,
        });
        results.push(res);
    }

    let rate = |num: u64, den: u64| num as f64 / den as f64;
    let summary = RunSummary {
        scenario_digest: sc.config_digest(),
        base_seed,
        runs,
        completions,
        aborts,
        aborts_by_reason,
        detection: detection
            .into_iter()
            .map(|(name, (flagged, evaluated))| {
                (name, RuleStat { flagged, evaluated, rate: rate(flagged, evaluated) })
            })
            .collect(),
        recovered_equals_sent_rate: (equals_seen > 0).then(|| rate(equals_true, equals_seen)),
        digest_mismatch_rate: (digest_seen > 0).then(|| rate(digest_false, digest_seen)),
        eve_recovery_rate: rate(eve_runs, runs),
        fake_delivery_rate: (gift.is_some() && fake_seen > 0).then(|| rate(fake_delivered, fake_seen)),
        per_run,
    };
    Ok((summary, results))
}

/// All runs' traces, concatenated; each begins with its own header line.
pub fn emit_traces(results: &[SimResult]) -> String {
    results.iter().map(|r| r.trace.to_jsonl()).collect()
}

pub fn emit_summary(summary: &RunSummary) -> String {
    let mut s = serde_json::to_string_pretty(summary).expect("summary serializes");
    s.push('\n');
    s
}

/// The shipped scenario files, embedded so the binary is self-contained.
pub fn reference_scenarios() -> Vec<(&'static str, &'static str)> {
    vec![
        ("normal_dl", include_str!("../scenarios/normal_dl.json")),
        ("mim_midway", include_str!("../scenarios/mim_midway.json")),
        ("mim_distant", include_str!("../scenarios/mim_distant.json")),
        ("ddt_honest", include_str!("../scenarios/ddt_honest.json")),
        ("ddt_mim", include_str!("../scenarios/ddt_mim.json")),
        ("implicit_chain", include_str!("../scenarios/implicit_chain.json")),
        ("piggy_bank", include_str!("../scenarios/piggy_bank.json")),
        ("delay_honest", include_str!("../scenarios/delay_honest.json")),
        ("delay_mim", include_str!("../scenarios/delay_mim.json")),
    ]
}
