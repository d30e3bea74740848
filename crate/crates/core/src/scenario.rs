//! Scenario configuration: the JSON schema, its validation rules, and the
//! canonical serialization that run digests are computed over.
//!
//! Everything a run depends on lives in the scenario; `(scenario, seed)`
//! fully determines a simulation. Validation happens once, up front, with
//! dotted-path error messages; the simulator may then assume a coherent
//! configuration.

use crate::adversary::Strategy;
use crate::crypto;
use crate::detect::{self, DelaySequence, Thresholds};
use crate::netsim::{NetsimError, Topology};
use crate::protocol::Variant;
use crate::types::{NodeId, Tick};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// 2^61 − 1, a Mersenne prime; products of residues fit u128.
pub const DEFAULT_PRIME: u64 = 2_305_843_009_213_693_951;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config error: {0}")]
    Parse(String),
    #[error("config error: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Backend {
    #[serde(rename = "xor-pad")]
    XorPad,
    #[serde(rename = "exp-mod-p")]
    ExpModP,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::XorPad => "xor-pad",
            Backend::ExpModP => "exp-mod-p",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CryptoConfig {
    pub backend: Backend,
    /// Modulus for exp-mod-p; ignored by xor-pad.
    pub p: u64,
    /// Keystream bytes for xor-pad; ignored by exp-mod-p.
    pub key_len: usize,
    pub secret_len: usize,
}

impl Default for CryptoConfig {
    fn default() -> CryptoConfig {
        CryptoConfig { backend: Backend::XorPad, p: DEFAULT_PRIME, key_len: 1024, secret_len: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdversaryConfig {
    pub strategy: Strategy,
    pub fake_gift: Option<Vec<u8>>,
    /// Ticks Eve spends on each intercepted envelope before re-emitting.
    pub processing_delay: Tick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DelayKind {
    MSequence,
    Walsh,
}

/// Flat parameter block: which of k/lfsr_seed/row/n apply depends on `kind`
/// and is enforced by validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DelayConfig {
    pub party: NodeId,
    pub kind: DelayKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lfsr_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub row: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<u32>,
    pub delta: Tick,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub variant: Variant,
    pub seed: u64,
    pub rounds: u64,
    pub topology: Topology,
    pub crypto: CryptoConfig,
    pub adversary: Option<AdversaryConfig>,
    pub delays: Option<DelayConfig>,
    pub thresholds: Thresholds,
    pub sign_pass3: bool,
    /// Per-round deadline; also the spacing between round starts.
    pub timeout_ticks: Tick,
}

// -------------------------------------------------------------------------
// Raw (wire) schema

fn default_rounds() -> u64 {
    1
}
fn default_true() -> bool {
    true
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    variant: Variant,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_rounds")]
    rounds: u64,
    topology: RawTopology,
    #[serde(default)]
    crypto: RawCrypto,
    #[serde(default)]
    adversary: Option<RawAdversary>,
    #[serde(default)]
    delays: Option<RawDelays>,
    #[serde(default)]
    thresholds: Thresholds,
    #[serde(default = "default_true")]
    sign_pass3: bool,
    #[serde(default)]
    timeout_ticks: Option<Tick>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTopology {
    nodes: Vec<NodeId>,
    latency: Vec<RawLink>,
    #[serde(default)]
    eve_cut: Vec<(NodeId, NodeId)>,
}

// Signed so that a negative latency gets a domain message instead of a
// serde integer-range complaint.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLink {
    a: NodeId,
    b: NodeId,
    ticks: i64,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawCrypto {
    backend: Option<Backend>,
    p: Option<u64>,
    key_len: Option<usize>,
    secret_len: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAdversary {
    strategy: Strategy,
    /// Hex-encoded bytes.
    #[serde(default)]
    fake_gift: Option<String>,
    #[serde(default)]
    processing_delay: Tick,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDelays {
    party: NodeId,
    kind: DelayKind,
    #[serde(default)]
    k: Option<u32>,
    #[serde(default)]
    lfsr_seed: Option<u64>,
    #[serde(default)]
    row: Option<u32>,
    #[serde(default)]
    n: Option<u32>,
    delta: Tick,
}

fn netsim_msg(e: NetsimError) -> ConfigError {
    match e {
        NetsimError::Config(m) | NetsimError::Internal(m) => ConfigError::Invalid(m),
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario, ConfigError> {
        let raw: RawScenario =
            serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let sc = Scenario::resolve(raw)?;
        sc.validate()?;
        Ok(sc)
    }

    fn resolve(raw: RawScenario) -> Result<Scenario, ConfigError> {
        let mut links = Vec::new();
        for l in &raw.topology.latency {
            if l.ticks <= 0 {
                return Err(ConfigError::Invalid(format!(
                    "topology.latency: latency on {}-{} must be positive",
                    l.a, l.b
                )));
            }
            links.push((l.a, l.b, l.ticks as Tick));
        }
        let topology =
            Topology::new(&raw.topology.nodes, &links, &raw.topology.eve_cut).map_err(netsim_msg)?;
        let direct = topology.latency(NodeId::Alice, NodeId::Bob).map_err(|_| {
            ConfigError::Invalid("topology.latency: a direct alice-bob link is required".into())
        })?;
        let adversary = match raw.adversary {
            Some(a) => {
                let fake_gift = match a.fake_gift {
                    Some(h) => Some(hex::decode(&h).map_err(|e| {
                        ConfigError::Invalid(format!("adversary.fake_gift: invalid hex: {e}"))
                    })?),
                    None => None,
                };
                Some(AdversaryConfig {
                    strategy: a.strategy,
                    fake_gift,
                    processing_delay: a.processing_delay,
                })
            }
            None => None,
        };
        Ok(Scenario {
            variant: raw.variant,
            seed: raw.seed,
            rounds: raw.rounds,
            topology,
            crypto: CryptoConfig {
                backend: raw.crypto.backend.unwrap_or(Backend::XorPad),
                p: raw.crypto.p.unwrap_or(DEFAULT_PRIME),
                key_len: raw.crypto.key_len.unwrap_or(1024),
                secret_len: raw.crypto.secret_len.unwrap_or(16),
            },
            adversary,
            delays: raw.delays.map(|d| DelayConfig {
                party: d.party,
                kind: d.kind,
                k: d.k,
                lfsr_seed: d.lfsr_seed,
                row: d.row,
                n: d.n,
                delta: d.delta,
            }),
            thresholds: raw.thresholds,
            sign_pass3: raw.sign_pass3,
            // Generous default: ten honest exchange intervals.
            timeout_ticks: raw.timeout_ticks.unwrap_or(10 * 2 * direct),
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: String| Err(ConfigError::Invalid(m));
        if self.rounds == 0 {
            return fail("rounds: must be at least 1".into());
        }
        self.topology.latency(NodeId::Alice, NodeId::Bob).map_err(|_| {
            ConfigError::Invalid("topology.latency: a direct alice-bob link is required".into())
        })?;
        if self.timeout_ticks == 0 {
            return fail("timeout_ticks: must be positive".into());
        }
        let th = &self.thresholds;
        for (name, v) in [
            ("shrink", th.shrink),
            ("ratio", th.ratio),
            ("double", th.double),
            ("correlation", th.correlation),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return fail(format!("thresholds.{name}: must be positive and finite"));
            }
        }

        if self.crypto.secret_len < crypto::MIN_SHARED_SECRET_LEN {
            return fail(format!(
                "crypto.secret_len: must be at least {}",
                crypto::MIN_SHARED_SECRET_LEN
            ));
        }
        match self.crypto.backend {
            Backend::XorPad => {
                // The pad must cover the largest payload it will meet: the
                // bare secret, or the packed deposit contents.
                let need = self.effective_secret_len().max(self.crypto.secret_len + 40);
                if self.crypto.key_len < need {
                    return fail(format!(
                        "crypto.key_len: must be at least {need} for the configured payloads"
                    ));
                }
            }
            Backend::ExpModP => {
                crypto::keygen_exp(self.crypto.p, 0)
                    .map_err(|e| ConfigError::Invalid(format!("crypto.p: {e}")))?;
            }
        }

        if let Some(adv) = &self.adversary {
            if !self.topology.nodes.contains(&NodeId::Eve) {
                return fail("adversary: topology lacks an eve node".into());
            }
            if self.topology.eve_cut.is_empty() {
                return fail("topology.eve_cut: an adversary needs at least one cut link".into());
            }
            for &(a, b) in &self.topology.eve_cut {
                for end in [a, b] {
                    if self.topology.latency(end, NodeId::Eve).is_err() {
                        return fail(format!(
                            "topology.latency: cut link {a}-{b} needs an {end}-eve link"
                        ));
                    }
                }
            }
            match adv.strategy {
                Strategy::FakeGift => match &adv.fake_gift {
                    None => {
                        return fail("adversary.fake_gift: FakeGift requires a gift payload".into())
                    }
                    Some(g)
                        if self.crypto.backend == Backend::XorPad
                            && g.len() > self.crypto.key_len =>
                    {
                        return fail("adversary.fake_gift: longer than the xor keystream".into())
                    }
                    Some(_) => {}
                },
                _ if adv.fake_gift.is_some() => {
                    return fail("adversary.fake_gift: only meaningful for FakeGift".into());
                }
                _ => {}
            }
            if self.variant == Variant::PiggyBank && adv.strategy != Strategy::PassiveForward {
                return fail("adversary.strategy: PiggyBank supports PassiveForward only".into());
            }
        } else if !self.topology.eve_cut.is_empty() {
            return fail("topology.eve_cut: cut links require an adversary".into());
        }

        if let Some(d) = &self.delays {
            if self.variant == Variant::PiggyBank {
                return fail("delays: not supported for PiggyBank".into());
            }
            if d.party == NodeId::Eve {
                return fail("delays.party: must be alice or bob".into());
            }
            if d.delta == 0 {
                return fail("delays.delta: must be at least 1".into());
            }
            let seq = self.delay_sequence().map_err(ConfigError::Invalid)?;
            if self.rounds != seq.values.len() as u64 {
                return fail(format!(
                    "rounds: must equal the delay sequence length ({})",
                    seq.values.len()
                ));
            }
        }
        Ok(())
    }

    /// The agreed ±1 schedule, with the kind-specific parameters checked.
    pub fn delay_sequence(&self) -> Result<DelaySequence, String> {
        let d = self.delays.as_ref().ok_or_else(|| "delays: none configured".to_string())?;
        match d.kind {
            DelayKind::MSequence => {
                if d.row.is_some() || d.n.is_some() {
                    return Err("delays.row: not used for m-sequence".into());
                }
                let k = d.k.ok_or_else(|| "delays.k: required for m-sequence".to_string())?;
                if !(3..=8).contains(&k) {
                    return Err(format!("delays.k: degree {k} outside the supported 3..=8"));
                }
                let taps = detect::default_taps(k).expect("degree range checked");
                let seed =
                    d.lfsr_seed.ok_or_else(|| "delays.lfsr_seed: required for m-sequence".to_string())?;
                detect::gen_mseq(k, taps, seed).map_err(|e| format!("delays: {e}"))
            }
            DelayKind::Walsh => {
                if d.k.is_some() || d.lfsr_seed.is_some() {
                    return Err("delays.k: not used for walsh".into());
                }
                let row = d.row.ok_or_else(|| "delays.row: required for walsh".to_string())?;
                let n = d.n.ok_or_else(|| "delays.n: required for walsh".to_string())?;
                detect::gen_walsh(row, n).map_err(|e| format!("delays: {e}"))
            }
        }
    }

    pub fn delay_symbols(&self) -> Result<Vec<i32>, String> {
        self.delay_sequence().map(|s| s.values)
    }

    /// Variants that run over a pre-shared authority secret R.
    pub fn needs_r(&self) -> bool {
        matches!(self.variant, Variant::Ddt | Variant::Implicit)
    }

    /// Chained rounds carry R-sized payloads; everything else carries
    /// secrets of the configured length.
    pub fn effective_secret_len(&self) -> usize {
        if self.variant == Variant::Implicit {
            32
        } else {
            self.crypto.secret_len
        }
    }

    pub fn round_spacing(&self) -> Tick {
        self.timeout_ticks
    }

    /// Deterministic compact JSON: resolved defaults, sorted topology.
    /// Parsing it back yields an identical scenario.
    pub fn canonical_json(&self) -> String {
        #[derive(Serialize)]
        struct Link {
            a: NodeId,
            b: NodeId,
            ticks: Tick,
        }
        #[derive(Serialize)]
        struct Topo {
            nodes: Vec<NodeId>,
            latency: Vec<Link>,
            eve_cut: Vec<(NodeId, NodeId)>,
        }
        #[derive(Serialize)]
        struct Adv {
            strategy: Strategy,
            #[serde(skip_serializing_if = "Option::is_none")]
            fake_gift: Option<String>,
            processing_delay: Tick,
        }
        #[derive(Serialize)]
        struct Canon<'x> {
            variant: Variant,
            seed: u64,
            rounds: u64,
            topology: Topo,
            crypto: &'x CryptoConfig,
            #[serde(skip_serializing_if = "Option::is_none")]
            adversary: Option<Adv>,
            #[serde(skip_serializing_if = "Option::is_none")]
            delays: Option<&'x DelayConfig>,
            thresholds: &'x Thresholds,
            sign_pass3: bool,
            timeout_ticks: Tick,
        }
        let canon = Canon {
            variant: self.variant,
            seed: self.seed,
            rounds: self.rounds,
            topology: Topo {
                nodes: self.topology.nodes.iter().copied().collect(),
                latency: self
                    .topology
                    .latency
                    .iter()
                    .map(|(&(a, b), &ticks)| Link { a, b, ticks })
                    .collect(),
                eve_cut: self.topology.eve_cut.iter().copied().collect(),
            },
            crypto: &self.crypto,
            adversary: self.adversary.as_ref().map(|a| Adv {
                strategy: a.strategy,
                fake_gift: a.fake_gift.as_ref().map(hex::encode),
                processing_delay: a.processing_delay,
            }),
            delays: self.delays.as_ref(),
            thresholds: &self.thresholds,
            sign_pass3: self.sign_pass3,
            timeout_ticks: self.timeout_ticks,
        };
        serde_json::to_string(&canon).expect("scenario serialization is infallible")
    }

    pub fn config_digest(&self) -> String {
        crypto::digest(self.canonical_json().as_bytes()).to_hex()
    }
}

#[cfg(test)]
pub mod test_support {
    use super::*;

    fn checked(sc: Scenario) -> Scenario {
        sc.validate().expect("reference scenario must validate");
        sc
    }

    /// Honest two-party baseline: xor-pad, one-way latency 2, one round.
    pub fn dl_scenario() -> Scenario {
        let topology = Topology::new(
            &[NodeId::Alice, NodeId::Bob],
            &[(NodeId::Alice, NodeId::Bob, 2)],
            &[],
        )
        .unwrap();
        checked(Scenario {
            variant: Variant::Dl,
            seed: 0,
            rounds: 1,
            topology,
            crypto: CryptoConfig::default(),
            adversary: None,
            delays: None,
            thresholds: Thresholds::default(),
            sign_pass3: true,
            timeout_ticks: 40,
        })
    }

    /// Eve owns the alice-bob wire, sitting `lat_ae`/`lat_eb` away.
    pub fn mim_scenario(strategy: Strategy, lat_ae: Tick, lat_eb: Tick) -> Scenario {
        let topology = Topology::new(
            &[NodeId::Alice, NodeId::Bob, NodeId::Eve],
            &[
                (NodeId::Alice, NodeId::Bob, 2),
                (NodeId::Alice, NodeId::Eve, lat_ae),
                (NodeId::Eve, NodeId::Bob, lat_eb),
            ],
            &[(NodeId::Alice, NodeId::Bob)],
        )
        .unwrap();
        let fake_gift =
            if strategy == Strategy::FakeGift { Some(b"fake gift".to_vec()) } else { None };
        checked(Scenario {
            variant: Variant::Dl,
            seed: 0,
            rounds: 1,
            topology,
            crypto: CryptoConfig::default(),
            adversary: Some(AdversaryConfig { strategy, fake_gift, processing_delay: 0 }),
            delays: None,
            thresholds: Thresholds::default(),
            sign_pass3: true,
            timeout_ticks: 40,
        })
    }

    /// Signed variant; `strategy` puts a midway Eve (1/1) on the wire.
    pub fn ddt_scenario(strategy: Option<Strategy>) -> Scenario {
        let mut sc = match strategy {
            Some(s) => mim_scenario(s, 1, 1),
            None => dl_scenario(),
        };
        sc.variant = Variant::Ddt;
        checked(sc)
    }

    pub fn implicit_scenario(rounds: u64) -> Scenario {
        let mut sc = dl_scenario();
        sc.variant = Variant::Implicit;
        sc.rounds = rounds;
        checked(sc)
    }

    pub fn piggy_scenario() -> Scenario {
        let mut sc = dl_scenario();
        sc.variant = Variant::PiggyBank;
        checked(sc)
    }

    /// Seven rounds, Bob stalling pass 2 on the k=3 m-sequence, delta 2.
    pub fn delay_scenario(mim: bool) -> Scenario {
        let mut sc = if mim { mim_scenario(Strategy::DelayedRelay, 1, 1) } else { dl_scenario() };
        sc.rounds = 7;
        sc.delays = Some(DelayConfig {
            party: NodeId::Bob,
            kind: DelayKind::MSequence,
            k: Some(3),
            lfsr_seed: Some(1),
            row: None,
            n: None,
            delta: 2,
        });
        checked(sc)
    }
}
