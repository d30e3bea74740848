//! Eve: pluggable interception strategies over the links she controls.
//!
//! Under full interposition Eve runs two half-sessions per intercepted
//! session: toward Alice she plays the responder with her own lock E, and
//! toward Bob she plays the initiator. The moment she opens Alice's box is
//! the moment she launches the Bob-side session; with Eve midway at unit
//! latency that puts Bob's two exchange events at ticks 4 and 6.
//!
//! Eve never holds the honest parties' handshake secret R: nothing in this
//! module accepts one, so the exclusion is structural, not a runtime check.

use crate::crypto::{self, Digest, LockKey, SharedSecret};
use crate::protocol::{Envelope, ProtocolError, Role, SessionState, Variant};
use crate::types::{NodeId, Tick};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    /// Control baseline: forward every envelope byte-identical.
    PassiveForward,
    /// Steal S, deliver the fake gift F to Bob.
    FakeGift,
    /// Deliver the true S, one full step behind; copies any intercepted
    /// signature verbatim. Content checks pass, timing does not.
    DelayedRelay,
    /// Attach previously recorded signatures to later passes.
    Replay,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::PassiveForward => "PassiveForward",
            Strategy::FakeGift => "FakeGift",
            Strategy::DelayedRelay => "DelayedRelay",
            Strategy::Replay => "Replay",
        }
    }
}

#[derive(Debug, Error)]
pub enum AdversaryError {
    #[error("not-interceptable: {0}")]
    NotInterceptable(String),
    #[error("no-material: nothing recorded carries a signature")]
    NoMaterial,
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// An envelope Eve wants delivered: `send_tick` is when she puts it on the
/// wire; the simulator adds the eve-to-destination latency.
#[derive(Debug, Clone)]
pub struct EveEmission {
    pub envelope: Envelope,
    pub dest: NodeId,
    pub send_tick: Tick,
}

#[derive(Debug, Clone)]
pub struct EveState {
    pub strategy: Strategy,
    pub own_key: LockKey,
    /// Eve's private stand-in for R; forged signatures use it and therefore
    /// never verify against the honest parties' R.
    pub pseudo_r: SharedSecret,
    pub fake_gift: Option<Vec<u8>>,
    pub processing_delay: Tick,
    /// Eve as responder toward Alice, one half-session per session id.
    pub sessions_with_alice: BTreeMap<u64, SessionState>,
    /// Eve as initiator toward Bob.
    pub sessions_with_bob: BTreeMap<u64, SessionState>,
    /// Secrets opened out of Alice's boxes, by session id.
    pub recovered: BTreeMap<u64, Vec<u8>>,
    pub recorded_envelopes: Vec<Envelope>,
}

impl EveState {
    pub fn new(
        strategy: Strategy,
        own_key: LockKey,
        pseudo_r: SharedSecret,
        fake_gift: Option<Vec<u8>>,
        processing_delay: Tick,
    ) -> Result<EveState, AdversaryError> {
        if strategy == Strategy::FakeGift && fake_gift.is_none() {
            return Err(AdversaryError::NotInterceptable(
                "FakeGift requires a fake gift payload".into(),
            ));
        }
        Ok(EveState {
            strategy,
            own_key,
            pseudo_r,
            fake_gift,
            processing_delay,
            sessions_with_alice: BTreeMap::new(),
            sessions_with_bob: BTreeMap::new(),
            recovered: BTreeMap::new(),
            recorded_envelopes: Vec::new(),
        })
    }

    pub fn recovered_for(&self, session_id: u64) -> Option<&Vec<u8>> {
        self.recovered.get(&session_id)
    }

    /// Processes one intercepted envelope. Returns the envelopes Eve emits
    /// in response (possibly none: opening a box under a signed run that
    /// already aborted emits nothing).
    pub fn eve_step(
        &mut self,
        intercepted: &Envelope,
        tick: Tick,
    ) -> Result<Vec<EveEmission>, AdversaryError> {
        if intercepted.sender == NodeId::Eve
            || intercepted.receiver == NodeId::Eve
            || intercepted.sender == intercepted.receiver
        {
            return Err(AdversaryError::NotInterceptable(format!(
                "envelope {} -> {} does not cross the cut",
                intercepted.sender, intercepted.receiver
            )));
        }
        self.recorded_envelopes.push(intercepted.clone());
        if self.strategy == Strategy::PassiveForward {
            let mut fwd = intercepted.clone();
            fwd.received_tick = None;
            return Ok(vec![EveEmission {
                envelope: fwd,
                dest: intercepted.receiver,
                send_tick: tick + self.processing_delay,
            }]);
        }
        self.interpose(intercepted, tick)
    }

    /// Full interposition: drive the two half-sessions with Eve's own lock.
    fn interpose(
        &mut self,
        intercepted: &Envelope,
        tick: Tick,
    ) -> Result<Vec<EveEmission>, AdversaryError> {
        let sid = intercepted.session_id;
        let run_variant = intercepted.variant;
        // Eve's half-sessions run the unsigned state machine; signatures are
        // her own business, attached per strategy below.
        let mut norm = intercepted.clone();
        norm.variant = Variant::Dl;
        norm.signature = None;
        let send_tick = tick + self.processing_delay;

        match (intercepted.sender, intercepted.pass_index) {
            (NodeId::Alice, 1) => {
                let sess = self.sessions_with_alice.entry(sid).or_insert(
                    SessionState::new(
                        sid,
                        Role::Responder,
                        Variant::Dl,
                        NodeId::Bob, // claimed identity
                        NodeId::Alice,
                        self.own_key.clone(),
                        None,
                        true,
                    )?,
                );
                let out = sess.dl_pass2(&norm, tick)?;
                let sig = self.signature_for(run_variant, intercepted, &out.payload)?;
                Ok(vec![EveEmission {
                    envelope: Envelope::unchecked(
                        sid,
                        run_variant,
                        2,
                        out.payload,
                        sig,
                        NodeId::Bob,
                        NodeId::Alice,
                        send_tick,
                    ),
                    dest: NodeId::Alice,
                    send_tick,
                }])
            }
            (NodeId::Alice, 3) => {
                let sess = self.sessions_with_alice.get_mut(&sid).ok_or_else(|| {
                    AdversaryError::NotInterceptable(format!(
                        "pass 3 for session {sid} but no Alice-side half-session"
                    ))
                })?;
                let s = sess.dl_open(&norm, tick)?;
                self.recovered.insert(sid, s.clone());
                // Box opened: launch the Bob-side session now.
                let content = match self.strategy {
                    Strategy::FakeGift => self
                        .fake_gift
                        .clone()
                        .expect("FakeGift construction requires a fake gift"),
                    _ => s,
                };
                let bob_sess = self.sessions_with_bob.entry(sid).or_insert(
                    SessionState::new(
                        sid,
                        Role::Initiator,
                        Variant::Dl,
                        NodeId::Alice, // claimed identity
                        NodeId::Bob,
                        self.own_key.clone(),
                        None,
                        true,
                    )?,
                );
                let out = bob_sess.dl_pass1(&content, send_tick)?;
                let sig = self.signature_for(run_variant, intercepted, &out.payload)?;
                Ok(vec![EveEmission {
                    envelope: Envelope::unchecked(
                        sid,
                        run_variant,
                        1,
                        out.payload,
                        sig,
                        NodeId::Alice,
                        NodeId::Bob,
                        send_tick,
                    ),
                    dest: NodeId::Bob,
                    send_tick,
                }])
            }
            (NodeId::Bob, 2) => {
                let sess = self.sessions_with_bob.get_mut(&sid).ok_or_else(|| {
                    AdversaryError::NotInterceptable(format!(
                        "pass 2 for session {sid} but no Bob-side half-session"
                    ))
                })?;
                let out = sess.dl_pass3(&norm, tick)?;
                let sig = self.signature_for(run_variant, intercepted, &out.payload)?;
                Ok(vec![EveEmission {
                    envelope: Envelope::unchecked(
                        sid,
                        run_variant,
                        3,
                        out.payload,
                        sig,
                        NodeId::Alice,
                        NodeId::Bob,
                        send_tick,
                    ),
                    dest: NodeId::Bob,
                    send_tick,
                }])
            }
            (sender, pass) => Err(AdversaryError::NotInterceptable(format!(
                "no interposition path for pass {pass} from {sender}"
            ))),
        }
    }

    /// What Eve writes into the signature field of an outgoing envelope.
    fn signature_for(
        &self,
        run_variant: Variant,
        intercepted: &Envelope,
        out_payload: &[u8],
    ) -> Result<Option<Digest>, AdversaryError> {
        if run_variant != Variant::Ddt {
            return Ok(None);
        }
        Ok(Some(match self.strategy {
            // Forge with the pseudo-R; receivers holding the real R reject it.
            Strategy::FakeGift => crypto::sign(&self.pseudo_r, out_payload),
            // Copy the intercepted signature verbatim.
            Strategy::DelayedRelay => intercepted
                .signature
                .ok_or(AdversaryError::NoMaterial)?,
            Strategy::Replay => self.replay_signature(intercepted.pass_index + 1)?,
            Strategy::PassiveForward => unreachable!("passive path returns earlier"),
        }))
    }

    /// Most recently recorded signature, for attachment to `target_pass`.
    /// The material is whatever the channel yielded; it is never fresh.
    pub fn replay_signature(&self, target_pass: u8) -> Result<Digest, AdversaryError> {
        if !(1..=3).contains(&target_pass) {
            return Err(AdversaryError::NotInterceptable(format!(
                "target pass must lie in 1..=3, got {target_pass}"
            )));
        }
        self.recorded_envelopes
            .iter()
            .rev()
            .find_map(|e| e.signature)
            .ok_or(AdversaryError::NoMaterial)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{digest, keygen_exp, keygen_xor, SharedSecret};
    use crate::protocol::{compare_digests, AbortReason, Phase};

    fn honest_pair(variant: Variant, r: Option<SharedSecret>) -> (SessionState, SessionState) {
        let a = SessionState::new(
            0,
            Role::Initiator,
            variant,
            NodeId::Alice,
            NodeId::Bob,
            keygen_exp(23, 1).unwrap(),
            r.clone(),
            true,
        )
        .unwrap();
        let b = SessionState::new(
            0,
            Role::Responder,
            variant,
            NodeId::Bob,
            NodeId::Alice,
            keygen_exp(23, 2).unwrap(),
            r,
            true,
        )
        .unwrap();
        (a, b)
    }

    fn eve(strategy: Strategy, fake_gift: Option<Vec<u8>>) -> EveState {
        EveState::new(
            strategy,
            keygen_exp(23, 3).unwrap(),
            SharedSecret::from_seed(999),
            fake_gift,
            0,
        )
        .unwrap()
    }

    /// Drives a full DL session through Eve at unit latencies, returning
    /// (alice, bob, eve). Ticks follow the midway layout: Eve receives at
    /// odd ticks, honest parties at even ticks.
    fn run_dl_through_eve(strategy: Strategy, secret: &[u8]) -> (SessionState, SessionState, EveState) {
        let (mut alice, mut bob) = honest_pair(Variant::Dl, None);
        let mut eve = eve(strategy, Some(b"fake!".to_vec()));
        let p1 = alice.dl_pass1(secret, 0).unwrap();
        let em1 = eve.eve_step(&p1, 1).unwrap();
        assert_eq!(em1.len(), 1);
        assert_eq!(em1[0].dest, NodeId::Alice);
        let p3 = alice.dl_pass3(&em1[0].envelope, 2).unwrap();
        let em2 = eve.eve_step(&p3, 3).unwrap();
        assert_eq!(em2.len(), 1);
        assert_eq!(em2[0].dest, NodeId::Bob);
        let p2b = bob.dl_pass2(&em2[0].envelope, 4).unwrap();
        let em3 = eve.eve_step(&p2b, 5).unwrap();
        assert_eq!(em3.len(), 1);
        bob.dl_open(&em3[0].envelope, 6).unwrap();
        (alice, bob, eve)
    }

    #[test]
    fn passive_forward_is_byte_identical() {
        let (mut alice, _) = honest_pair(Variant::Dl, None);
        let mut e = eve(Strategy::PassiveForward, None);
        let p1 = alice.dl_pass1(b"gift", 0).unwrap();
        let out = e.eve_step(&p1, 1).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].envelope.payload, p1.payload);
        assert_eq!(out[0].envelope.sender, NodeId::Alice);
        assert_eq!(out[0].dest, NodeId::Bob);
        assert_eq!(out[0].send_tick, 1);
    }

    #[test]
    fn passive_forward_ddt_run_completes() {
        let r = SharedSecret::from_seed(4);
        let (mut alice, mut bob) = honest_pair(Variant::Ddt, Some(r));
        let mut e = eve(Strategy::PassiveForward, None);
        let p1 = alice.ddt_pass1(b"gift contents", 0).unwrap();
        let f1 = &e.eve_step(&p1, 1).unwrap()[0];
        let p2 = bob.ddt_pass2(&f1.envelope, 2).unwrap();
        let f2 = &e.eve_step(&p2, 3).unwrap()[0];
        let p3 = alice.ddt_pass3(&f2.envelope, 4).unwrap();
        let f3 = &e.eve_step(&p3, 5).unwrap()[0];
        assert_eq!(bob.ddt_open(&f3.envelope, 6).unwrap(), b"gift contents".to_vec());
    }

    #[test]
    fn fake_gift_steals_s_and_bob_gets_f() {
        let (alice, bob, eve) = run_dl_through_eve(Strategy::FakeGift, b"true gift");
        assert_eq!(eve.recovered_for(0).unwrap(), &b"true gift".to_vec());
        assert_eq!(bob.recovered.as_ref().unwrap(), &b"fake!".to_vec());
        assert_eq!(alice.phase, Phase::Done);
        // Content check catches the substitution.
        let sent = digest(alice.secret.as_ref().unwrap());
        assert!(!compare_digests(&sent, bob.recovered.as_ref().unwrap()));
    }

    #[test]
    fn delayed_relay_delivers_the_true_s() {
        let (alice, bob, eve) = run_dl_through_eve(Strategy::DelayedRelay, b"true gift");
        assert_eq!(eve.recovered_for(0).unwrap(), &b"true gift".to_vec());
        assert_eq!(bob.recovered.as_ref().unwrap(), &b"true gift".to_vec());
        // Content is genuine, so the digest comparison is blind to the relay.
        let sent = digest(alice.secret.as_ref().unwrap());
        assert!(compare_digests(&sent, bob.recovered.as_ref().unwrap()));
    }

    #[test]
    fn interposition_emission_ticks_match_the_midway_layout() {
        // Eve at unit latency, zero processing: she emits at 1, 3, 5, so the
        // honest parties record 2 and (4, 6).
        let (alice, bob, _) = run_dl_through_eve(Strategy::DelayedRelay, b"true gift");
        assert_eq!(alice.timing_log.iter().map(|&(_, t)| t).collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(bob.timing_log.iter().map(|&(_, t)| t).collect::<Vec<_>>(), vec![4, 6]);
    }

    #[test]
    fn processing_delay_shifts_emissions() {
        let (mut alice, _) = honest_pair(Variant::Dl, None);
        let mut e = EveState::new(
            Strategy::DelayedRelay,
            keygen_exp(23, 3).unwrap(),
            SharedSecret::from_seed(999),
            None,
            5,
        )
        .unwrap();
        let p1 = alice.dl_pass1(b"gift", 0).unwrap();
        assert_eq!(e.eve_step(&p1, 1).unwrap()[0].send_tick, 6);
    }

    #[test]
    fn ddt_fake_gift_aborts_alice_before_any_bob_side_launch() {
        let r = SharedSecret::from_seed(4);
        let (mut alice, _bob) = honest_pair(Variant::Ddt, Some(r));
        let mut e = eve(Strategy::FakeGift, Some(b"fake!".to_vec()));
        let p1 = alice.ddt_pass1(b"gift contents", 0).unwrap();
        let em = e.eve_step(&p1, 1).unwrap();
        assert!(matches!(
            alice.ddt_pass3(&em[0].envelope, 2),
            Err(ProtocolError::SignatureMismatch)
        ));
        assert_eq!(alice.abort_reason, Some(AbortReason::SignatureMismatch));
        assert!(e.recovered.is_empty());
        assert!(e.sessions_with_bob.is_empty());
    }

    #[test]
    fn ddt_delayed_relay_copies_the_intercepted_signature_verbatim() {
        let r = SharedSecret::from_seed(4);
        let (mut alice, _bob) = honest_pair(Variant::Ddt, Some(r));
        let mut e = eve(Strategy::DelayedRelay, None);
        let p1 = alice.ddt_pass1(b"gift contents", 0).unwrap();
        let em = e.eve_step(&p1, 1).unwrap();
        assert_eq!(em[0].envelope.signature, p1.signature);
        // The copied digest covers the wrong payload, so Alice rejects it.
        assert!(matches!(
            alice.ddt_pass3(&em[0].envelope, 2),
            Err(ProtocolError::SignatureMismatch)
        ));
    }

    #[test]
    fn ddt_replay_attaches_recorded_pass1_signature_and_is_rejected() {
        let r = SharedSecret::from_seed(4);
        let (mut alice, _bob) = honest_pair(Variant::Ddt, Some(r));
        let mut e = eve(Strategy::Replay, None);
        let p1 = alice.ddt_pass1(b"gift contents", 0).unwrap();
        let em = e.eve_step(&p1, 1).unwrap();
        assert_eq!(em[0].envelope.signature, p1.signature);
        assert_eq!(e.replay_signature(2).unwrap(), p1.signature.unwrap());
        assert!(matches!(
            alice.ddt_pass3(&em[0].envelope, 2),
            Err(ProtocolError::SignatureMismatch)
        ));
    }

    #[test]
    fn replay_with_nothing_recorded_is_no_material() {
        let e = eve(Strategy::Replay, None);
        assert!(matches!(e.replay_signature(2), Err(AdversaryError::NoMaterial)));
    }

    #[test]
    fn eve_addressed_envelopes_are_not_interceptable() {
        let mut e = eve(Strategy::PassiveForward, None);
        let env = Envelope::unchecked(0, Variant::Dl, 1, vec![], None, NodeId::Eve, NodeId::Bob, 0);
        assert!(matches!(e.eve_step(&env, 1), Err(AdversaryError::NotInterceptable(_))));
    }

    #[test]
    fn fake_gift_requires_the_gift() {
        assert!(EveState::new(
            Strategy::FakeGift,
            keygen_xor(1, 16),
            SharedSecret::from_seed(1),
            None,
            0,
        )
        .is_err());
    }

    #[test]
    fn xor_backend_interposition_also_round_trips() {
        let (mut alice, mut bob) = {
            let a = SessionState::new(
                0,
                Role::Initiator,
                Variant::Dl,
                NodeId::Alice,
                NodeId::Bob,
                keygen_xor(1, 64),
                None,
                true,
            )
            .unwrap();
            let b = SessionState::new(
                0,
                Role::Responder,
                Variant::Dl,
                NodeId::Bob,
                NodeId::Alice,
                keygen_xor(2, 64),
                None,
                true,
            )
            .unwrap();
            (a, b)
        };
        let mut e = EveState::new(
            Strategy::DelayedRelay,
            keygen_xor(3, 64),
            SharedSecret::from_seed(9),
            None,
            0,
        )
        .unwrap();
        let p1 = alice.dl_pass1(b"gift", 0).unwrap();
        let em1 = e.eve_step(&p1, 1).unwrap();
        let p3 = alice.dl_pass3(&em1[0].envelope, 2).unwrap();
        let em2 = e.eve_step(&p3, 3).unwrap();
        let p2b = bob.dl_pass2(&em2[0].envelope, 4).unwrap();
        let em3 = e.eve_step(&p2b, 5).unwrap();
        assert_eq!(bob.dl_open(&em3[0].envelope, 6).unwrap(), b"gift".to_vec());
    }
}
