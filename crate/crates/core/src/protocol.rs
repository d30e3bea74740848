//! Three-pass lock exchange, the signed variant, implicit chaining, and the
//! piggy-bank deposit flow.
//!
//! Pass shape (initiator Alice, responder Bob), all payloads wire-encoded by
//! the active backend's codec:
//!
//! ```text
//! pass 1  A -> B   A(S)            initiator locks the secret
//! pass 2  B -> A   B(A(S))         responder adds his lock
//! pass 3  A -> B   B(S)            initiator removes her lock
//! open    B        S               responder removes his lock
//! ```
//!
//! The signed variant attaches sign(R, payload) to every pass, where R is the
//! handshake secret; a receiver verifies before touching the payload and
//! aborts the session on mismatch. Phase transitions are monotone
//! (idle -> awaiting_pass2 -> awaiting_pass3 -> done, or -> aborted), so a
//! replayed or out-of-order pass is rejected by the phase guard even when its
//! signature verifies.

use crate::crypto::{self, CryptoError, Digest, LockHalf, LockKey, SharedSecret};
use crate::types::{EventKind, NodeId, Tick};
use rand_core::RngCore;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "DL")]
    Dl,
    #[serde(rename = "DDT")]
    Ddt,
    Implicit,
    PiggyBank,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::Dl => "DL",
            Variant::Ddt => "DDT",
            Variant::Implicit => "Implicit",
            Variant::PiggyBank => "PiggyBank",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Initiator,
    Responder,
}

/// Session phases, ordered. A session only moves forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    AwaitingPass2,
    AwaitingPass3,
    Done,
    Aborted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AbortReason {
    SignatureMismatch,
    DecodeFailure,
    Timeout,
}

impl fmt::Display for AbortReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AbortReason::SignatureMismatch => "signature-mismatch",
            AbortReason::DecodeFailure => "decode-failure",
            AbortReason::Timeout => "timeout",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("protocol-order violation: {0}")]
    OrderViolation(String),
    #[error("signature-mismatch")]
    SignatureMismatch,
    #[error("decode failure: {0}")]
    Decode(CryptoError),
    #[error("invalid state: {0}")]
    InvalidState(String),
}

mod hex_bytes {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(&s).map_err(de::Error::custom)
    }
}

/// One wire message. Serialized field order is part of the trace format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub session_id: u64,
    pub variant: Variant,
    pub pass_index: u8,
    #[serde(with = "hex_bytes")]
    pub payload: Vec<u8>,
    pub signature: Option<Digest>,
    pub sender: NodeId,
    pub receiver: NodeId,
    pub sent_tick: Tick,
    pub received_tick: Option<Tick>,
}

impl Envelope {
    /// Shape-checked constructor: pass index in 1..=3, and a signature is
    /// present exactly on signed-variant envelopes (pass 3 may omit it when
    /// the session was configured with sign_pass3 off).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        session_id: u64,
        variant: Variant,
        pass_index: u8,
        payload: Vec<u8>,
        signature: Option<Digest>,
        sender: NodeId,
        receiver: NodeId,
        sent_tick: Tick,
    ) -> Result<Envelope, ProtocolError> {
        if !(1..=3).contains(&pass_index) {
            return Err(ProtocolError::InvalidState(format!(
                "pass index must lie in 1..=3, got {pass_index}"
            )));
        }
        match (variant, &signature) {
            (Variant::Ddt, None) if pass_index != 3 => {
                return Err(ProtocolError::InvalidState(
                    "signed-variant envelope missing its signature".into(),
                ))
            }
            (Variant::Ddt, _) => {}
            (_, Some(_)) => {
                return Err(ProtocolError::InvalidState(
                    "signature on an unsigned-variant envelope".into(),
                ))
            }
            _ => {}
        }
        Ok(Envelope {
            session_id,
            variant,
            pass_index,
            payload,
            signature,
            sender,
            receiver,
            sent_tick,
            received_tick: None,
        })
    }

    /// Adversary-built envelope: no shape checks. Honest code never calls this.
    #[allow(clippy::too_many_arguments)]
    pub fn unchecked(
        session_id: u64,
        variant: Variant,
        pass_index: u8,
        payload: Vec<u8>,
        signature: Option<Digest>,
        sender: NodeId,
        receiver: NodeId,
        sent_tick: Tick,
    ) -> Envelope {
        Envelope {
            session_id,
            variant,
            pass_index,
            payload,
            signature,
            sender,
            receiver,
            sent_tick,
            received_tick: None,
        }
    }
}

/// One party's view of one session.
#[derive(Debug, Clone)]
pub struct SessionState {
    pub session_id: u64,
    pub role: Role,
    pub variant: Variant,
    pub own_node: NodeId,
    pub peer: NodeId,
    pub own_key: LockKey,
    pub shared_r: Option<SharedSecret>,
    pub sign_pass3: bool,
    pub phase: Phase,
    pub abort_reason: Option<AbortReason>,
    /// Exchange events in order; exactly two for a completed session.
    pub timing_log: Vec<(EventKind, Tick)>,
    /// Initiator: the secret it sent. Responder: none.
    pub secret: Option<Vec<u8>>,
    /// Responder: the secret it opened. Initiator: none.
    pub recovered: Option<Vec<u8>>,
}

impl SessionState {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        session_id: u64,
        role: Role,
        variant: Variant,
        own_node: NodeId,
        peer: NodeId,
        own_key: LockKey,
        shared_r: Option<SharedSecret>,
        sign_pass3: bool,
    ) -> Result<SessionState, ProtocolError> {
        if matches!(variant, Variant::Ddt | Variant::Implicit) && shared_r.is_none() {
            return Err(ProtocolError::InvalidState(format!(
                "variant {variant} requires the handshake secret R"
            )));
        }
        Ok(SessionState {
            session_id,
            role,
            variant,
            own_node,
            peer,
            own_key,
            shared_r,
            sign_pass3,
            phase: Phase::Idle,
            abort_reason: None,
            timing_log: Vec::new(),
            secret: None,
            recovered: None,
        })
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self.phase, Phase::Done | Phase::Aborted)
    }

    fn abort(&mut self, reason: AbortReason) {
        self.phase = Phase::Aborted;
        self.abort_reason = Some(reason);
    }

    /// Marks a stuck session aborted. Returns false if already terminal.
    pub fn abort_timeout(&mut self) -> bool {
        if self.is_terminal() {
            return false;
        }
        self.abort(AbortReason::Timeout);
        true
    }

    fn guard(
        &self,
        role: Role,
        phase: Phase,
        env: Option<(&Envelope, u8)>,
    ) -> Result<(), ProtocolError> {
        if self.role != role {
            return Err(ProtocolError::OrderViolation(format!(
                "operation requires the {role:?} role"
            )));
        }
        if self.phase != phase {
            return Err(ProtocolError::OrderViolation(format!(
                "operation requires phase {phase:?}, session is in {:?}",
                self.phase
            )));
        }
        if let Some((env, want_pass)) = env {
            if env.pass_index != want_pass {
                return Err(ProtocolError::OrderViolation(format!(
                    "expected a pass-{want_pass} envelope, got pass {}",
                    env.pass_index
                )));
            }
            if env.variant != self.variant {
                return Err(ProtocolError::InvalidState(format!(
                    "envelope variant {} does not match session variant {}",
                    env.variant, self.variant
                )));
            }
            if env.session_id != self.session_id {
                return Err(ProtocolError::InvalidState(format!(
                    "envelope session {} does not match session {}",
                    env.session_id, self.session_id
                )));
            }
        }
        Ok(())
    }

    fn decode_abort(&mut self, err: CryptoError) -> ProtocolError {
        self.abort(AbortReason::DecodeFailure);
        ProtocolError::Decode(err)
    }

    fn r(&self) -> Result<&SharedSecret, ProtocolError> {
        self.shared_r
            .as_ref()
            .ok_or_else(|| ProtocolError::InvalidState("session holds no shared R".into()))
    }

    // ---------------------------------------------------------------------
    // Unsigned three-pass flow (plain and implicit-chained payloads)

    /// Initiator locks S and emits pass 1. Records t_A(1).
    pub fn dl_pass1(&mut self, s: &[u8], tick: Tick) -> Result<Envelope, ProtocolError> {
        if self.variant == Variant::Ddt {
            return Err(ProtocolError::InvalidState(
                "signed sessions use ddt_pass1".into(),
            ));
        }
        self.guard(Role::Initiator, Phase::Idle, None)?;
        let payload = self.own_key.lock_payload(s).map_err(|e| self.decode_abort(e))?;
        self.secret = Some(s.to_vec());
        self.timing_log.push((EventKind::Send, tick));
        self.phase = Phase::AwaitingPass2;
        Envelope::new(
            self.session_id,
            self.variant,
            1,
            payload,
            None,
            self.own_node,
            self.peer,
            tick,
        )
    }

    /// Responder adds his lock over pass 1 and emits pass 2. Records t_B(1).
    pub fn dl_pass2(&mut self, env: &Envelope, tick: Tick) -> Result<Envelope, ProtocolError> {
        if self.variant == Variant::Ddt {
            return Err(ProtocolError::InvalidState(
                "signed sessions use ddt_pass2".into(),
            ));
        }
        self.guard(Role::Responder, Phase::Idle, Some((env, 1)))?;
        self.timing_log.push((EventKind::Recv, tick));
        let payload = self.own_key.add_lock(&env.payload).map_err(|e| self.decode_abort(e))?;
        self.phase = Phase::AwaitingPass3;
        Envelope::new(
            self.session_id,
            self.variant,
            2,
            payload,
            None,
            self.own_node,
            self.peer,
            tick,
        )
    }

    /// Initiator removes her lock from pass 2 and emits pass 3. Records
    /// t_A(2), the initiator's second and final exchange event.
    pub fn dl_pass3(&mut self, env: &Envelope, tick: Tick) -> Result<Envelope, ProtocolError> {
        if self.variant == Variant::Ddt {
            return Err(ProtocolError::InvalidState(
                "signed sessions use ddt_pass3".into(),
            ));
        }
        self.guard(Role::Initiator, Phase::AwaitingPass2, Some((env, 2)))?;
        self.timing_log.push((EventKind::Recv, tick));
        let payload = self.own_key.remove_lock(&env.payload).map_err(|e| self.decode_abort(e))?;
        self.phase = Phase::Done;
        Envelope::new(
            self.session_id,
            self.variant,
            3,
            payload,
            None,
            self.own_node,
            self.peer,
            tick,
        )
    }

    /// Responder removes his lock and recovers S. Records t_B(2).
    pub fn dl_open(&mut self, env: &Envelope, tick: Tick) -> Result<Vec<u8>, ProtocolError> {
        if self.variant == Variant::Ddt {
            return Err(ProtocolError::InvalidState("signed sessions use ddt_open".into()));
        }
        self.guard(Role::Responder, Phase::AwaitingPass3, Some((env, 3)))?;
        self.timing_log.push((EventKind::Recv, tick));
        let s = self.own_key.open_payload(&env.payload).map_err(|e| self.decode_abort(e))?;
        self.recovered = Some(s.clone());
        self.phase = Phase::Done;
        Ok(s)
    }

    // ---------------------------------------------------------------------
    // Signed three-pass flow

    /// Initiator locks S and signs the locked payload with R.
    pub fn ddt_pass1(&mut self, s: &[u8], tick: Tick) -> Result<Envelope, ProtocolError> {
        if self.variant != Variant::Ddt {
            return Err(ProtocolError::InvalidState(
                "unsigned sessions use dl_pass1".into(),
            ));
        }
        self.guard(Role::Initiator, Phase::Idle, None)?;
        let payload = self.own_key.lock_payload(s).map_err(|e| self.decode_abort(e))?;
        let sig = crypto::sign(self.r()?, &payload);
        self.secret = Some(s.to_vec());
        self.timing_log.push((EventKind::Send, tick));
        self.phase = Phase::AwaitingPass2;
        Envelope::new(
            self.session_id,
            self.variant,
            1,
            payload,
            Some(sig),
            self.own_node,
            self.peer,
            tick,
        )
    }

    /// Responder verifies the pass-1 signature before locking. On mismatch
    /// the session aborts and no payload is emitted.
    pub fn ddt_pass2(&mut self, env: &Envelope, tick: Tick) -> Result<Envelope, ProtocolError> {
        self.guard(Role::Responder, Phase::Idle, Some((env, 1)))?;
        self.timing_log.push((EventKind::Recv, tick));
        if !self.signature_ok(env)? {
            self.abort(AbortReason::SignatureMismatch);
            return Err(ProtocolError::SignatureMismatch);
        }
        let payload = self.own_key.add_lock(&env.payload).map_err(|e| self.decode_abort(e))?;
        let sig = crypto::sign(self.r()?, &payload);
        self.phase = Phase::AwaitingPass3;
        Envelope::new(
            self.session_id,
            self.variant,
            2,
            payload,
            Some(sig),
            self.own_node,
            self.peer,
            tick,
        )
    }

    /// Initiator verifies the pass-2 signature, removes her lock, and signs
    /// pass 3 (unless the session was configured not to).
    pub fn ddt_pass3(&mut self, env: &Envelope, tick: Tick) -> Result<Envelope, ProtocolError> {
        self.guard(Role::Initiator, Phase::AwaitingPass2, Some((env, 2)))?;
        self.timing_log.push((EventKind::Recv, tick));
        if !self.signature_ok(env)? {
            self.abort(AbortReason::SignatureMismatch);
            return Err(ProtocolError::SignatureMismatch);
        }
        let payload = self.own_key.remove_lock(&env.payload).map_err(|e| self.decode_abort(e))?;
        let sig = if self.sign_pass3 { Some(crypto::sign(self.r()?, &payload)) } else { None };
        self.phase = Phase::Done;
        Envelope::new(
            self.session_id,
            self.variant,
            3,
            payload,
            sig,
            self.own_node,
            self.peer,
            tick,
        )
    }

    /// Responder verifies pass 3 (when configured), then opens.
    pub fn ddt_open(&mut self, env: &Envelope, tick: Tick) -> Result<Vec<u8>, ProtocolError> {
        self.guard(Role::Responder, Phase::AwaitingPass3, Some((env, 3)))?;
        self.timing_log.push((EventKind::Recv, tick));
        if self.sign_pass3 && !self.signature_ok(env)? {
            self.abort(AbortReason::SignatureMismatch);
            return Err(ProtocolError::SignatureMismatch);
        }
        let s = self.own_key.open_payload(&env.payload).map_err(|e| self.decode_abort(e))?;
        self.recovered = Some(s.clone());
        self.phase = Phase::Done;
        Ok(s)
    }

    /// A missing signature on a signed pass counts as a mismatch.
    fn signature_ok(&self, env: &Envelope) -> Result<bool, ProtocolError> {
        let r = self.r()?;
        Ok(match &env.signature {
            Some(sig) => crypto::verify(r, &env.payload, sig),
            None => false,
        })
    }
}

// -------------------------------------------------------------------------
// Implicit chaining: exchange i carries S_i + S_{i-1} bytewise mod 256
// (S_0 = R). The "+" here is modular addition, unlike the signature "+"
// which is concatenation.

/// Bytewise (s + prev) mod 256, zero-padding the shorter operand.
pub fn chain_encode(s: &[u8], prev: &[u8]) -> Vec<u8> {
    let n = s.len().max(prev.len());
    (0..n)
        .map(|i| {
            let a = s.get(i).copied().unwrap_or(0);
            let b = prev.get(i).copied().unwrap_or(0);
            a.wrapping_add(b)
        })
        .collect()
}

/// Inverse of [`chain_encode`]: bytewise (p - prev) mod 256.
pub fn chain_decode(p: &[u8], prev: &[u8]) -> Vec<u8> {
    let n = p.len().max(prev.len());
    (0..n)
        .map(|i| {
            let a = p.get(i).copied().unwrap_or(0);
            let b = prev.get(i).copied().unwrap_or(0);
            a.wrapping_sub(b)
        })
        .collect()
}

/// True when the received payload hashes to the digest the sender published.
pub fn compare_digests(sent: &Digest, received_payload: &[u8]) -> bool {
    crypto::digest(received_payload) == *sent
}

/// Authority handshake: both honest parties receive the same R derived from
/// the authority's seed. Eve is excluded structurally; her state has no R
/// field and this value is never routed through her.
pub fn handshake(authority_seed: u64) -> SharedSecret {
    SharedSecret::from_seed(authority_seed)
}

// -------------------------------------------------------------------------
// Piggy-bank deposit flow. The responder issues an empty locked box (only
// the lock half travels); the depositor seals the secret together with a
// fresh letter key, and separately sends the letter: an encrypted manifest
// plus a signature made with the depositor's long-term identity secret.

#[derive(Debug, Clone)]
pub struct PiggyBox {
    pub box_lock: LockHalf,
    pub sealed_contents: Option<Vec<u8>>,
    pub letter_ciphertext: Option<Vec<u8>>,
    pub letter_signature: Option<Digest>,
}

#[derive(Debug, Clone)]
pub struct PbOpened {
    pub secret: Vec<u8>,
    pub manifest: Vec<u8>,
    pub authenticated: bool,
}

/// Issues an empty box carrying the lock half of `box_key`. The unlock half
/// never leaves the issuer.
pub fn pb_issue_box(box_key: &LockKey) -> PiggyBox {
    PiggyBox {
        box_lock: box_key.lock_half(),
        sealed_contents: None,
        letter_ciphertext: None,
        letter_signature: None,
    }
}

/// Seals `secret` plus a fresh letter key into the box and prepares the
/// letter: letter = lock(k, manifest) with sign(identity, manifest).
pub fn pb_deposit(
    pb: &PiggyBox,
    secret: &[u8],
    manifest: &[u8],
    identity: &SharedSecret,
    rng: &mut impl RngCore,
) -> Result<PiggyBox, ProtocolError> {
    if pb.sealed_contents.is_some() {
        return Err(ProtocolError::InvalidState("box already holds a deposit".into()));
    }
    let mut letter_key = vec![0u8; manifest.len()];
    rng.fill_bytes(&mut letter_key);
    let letter_ciphertext: Vec<u8> =
        manifest.iter().zip(&letter_key).map(|(a, b)| a ^ b).collect();
    let mut contents = Vec::with_capacity(8 + secret.len() + letter_key.len());
    contents.extend_from_slice(&(secret.len() as u32).to_be_bytes());
    contents.extend_from_slice(secret);
    contents.extend_from_slice(&(letter_key.len() as u32).to_be_bytes());
    contents.extend_from_slice(&letter_key);
    let sealed = pb.box_lock.lock_payload(&contents).map_err(ProtocolError::Decode)?;
    Ok(PiggyBox {
        box_lock: pb.box_lock.clone(),
        sealed_contents: Some(sealed),
        letter_ciphertext: Some(letter_ciphertext),
        letter_signature: Some(crypto::sign(identity, manifest)),
    })
}

/// Opens a returned box with the full key and authenticates the deposit
/// against the claimed depositor's identity secret.
pub fn pb_open(
    pb: &PiggyBox,
    box_key: &LockKey,
    depositor_identity: &SharedSecret,
) -> Result<PbOpened, ProtocolError> {
    let sealed = pb
        .sealed_contents
        .as_ref()
        .ok_or_else(|| ProtocolError::InvalidState("box is empty".into()))?;
    let letter_ct = pb
        .letter_ciphertext
        .as_ref()
        .ok_or_else(|| ProtocolError::InvalidState("letter has not arrived".into()))?;
    let letter_sig = pb
        .letter_signature
        .as_ref()
        .ok_or_else(|| ProtocolError::InvalidState("letter carries no signature".into()))?;
    let contents = box_key.open_payload(sealed).map_err(ProtocolError::Decode)?;
    let (secret, letter_key) = split_contents(&contents)?;
    if letter_key.len() != letter_ct.len() {
        // A substituted deposit cannot decrypt the genuine letter.
        return Ok(PbOpened { secret, manifest: Vec::new(), authenticated: false });
    }
    let manifest: Vec<u8> = letter_ct.iter().zip(&letter_key).map(|(a, b)| a ^ b).collect();
    let authenticated = crypto::verify(depositor_identity, &manifest, letter_sig);
    Ok(PbOpened { secret, manifest, authenticated })
}

fn split_contents(contents: &[u8]) -> Result<(Vec<u8>, Vec<u8>), ProtocolError> {
    let err = || ProtocolError::Decode(CryptoError::DecodeFailure("malformed box contents".into()));
    if contents.len() < 4 {
        return Err(err());
    }
    let slen = u32::from_be_bytes(contents[..4].try_into().unwrap()) as usize;
    if contents.len() < 4 + slen + 4 {
        return Err(err());
    }
    let secret = contents[4..4 + slen].to_vec();
    let klen = u32::from_be_bytes(contents[4 + slen..8 + slen].try_into().unwrap()) as usize;
    if contents.len() != 8 + slen + klen {
        return Err(err());
    }
    let key = contents[8 + slen..].to_vec();
    Ok((secret, key))
}
