//! Simulation laboratory for commuting-lock key exchange.
//!
//! The lab models the three-pass "double lock" exchange (Alice locks, Bob
//! adds his lock, Alice removes hers, Bob opens), the signed variant that
//! binds each pass to a pre-shared secret, and a man-in-the-middle node that
//! substitutes locks. Everything runs on an integer-tick discrete-event
//! network so traces are byte-identical for identical (scenario, seed).
//!
//! Module map:
//! - [`crypto`]: commuting lock backends (keystream xor, fixed-prime
//!   exponentiation), digests, pass signatures.
//! - [`protocol`]: envelopes, session state machines, piggy-bank deposit flow,
//!   implicit chaining.
//! - [`adversary`]: Eve's interception strategies.
//! - [`netsim`]: topology, event queue, trace recorder, the simulation driver.
//! - [`detect`]: timing forensics and delay-sequence correlation.
//! - [`scenario`]: scenario schema, parsing, validation.
//! - [`harness`]: batch runner, summaries, file emission.

pub mod adversary;
pub mod crypto;
pub mod detect;
pub mod harness;
pub mod netsim;
pub mod protocol;
pub mod scenario;
pub mod types;
