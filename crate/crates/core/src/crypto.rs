//! Commuting lock primitives, digests, and pass signatures.
//!
//! Two lock backends, both commutative so locks can be removed in any order:
//!
//! - `xor-pad`: payload XOR a seeded keystream. Lock and unlock are the same
//!   operation. Pedagogical only: two observed ciphertexts leak the pads.
//! - `exp-mod-p`: exponentiation modulo a fixed odd prime shared by all
//!   parties. Lock raises to `e`, unlock to `d`, with e*d = 1 (mod p-1).
//!   Exponentiation maps commute because exponents multiply mod p-1.
//!
//! Arbitrary-length payloads go through the block codec at the bottom of this
//! file: sub-`p` chunks, one residue per chunk. The raw `lock`/`unlock`
//! operations work on a single residue (or a whole xor buffer) and are the
//! ground truth the codec composes.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use std::fmt;
use thiserror::Error;

pub const DIGEST_LEN: usize = 32;
pub const MIN_SHARED_SECRET_LEN: usize = 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid payload: {0}")]
    InvalidPayload(String),
    #[error("decode failure: {0}")]
    DecodeFailure(String),
}

/// SHA-256 output. Serializes as a lowercase hex string.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        let raw = hex::decode(s)
            .map_err(|e| CryptoError::InvalidParameter(format!("digest hex: {e}")))?;
        let arr: [u8; DIGEST_LEN] = raw
            .try_into()
            .map_err(|_| CryptoError::InvalidParameter("digest must be 32 bytes".into()))?;
        Ok(Digest(arr))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).map_err(de::Error::custom)
    }
}

/// Pre-shared secret (the handshake's R, or a party's long-term identity
/// secret). At least 16 bytes.
#[derive(Clone, PartialEq, Eq)]
pub struct SharedSecret(Vec<u8>);

impl SharedSecret {
    pub fn new(bytes: Vec<u8>) -> Result<Self, CryptoError> {
        if bytes.len() < MIN_SHARED_SECRET_LEN {
            return Err(CryptoError::InvalidParameter(format!(
                "shared secret must be at least {MIN_SHARED_SECRET_LEN} bytes, got {}",
                bytes.len()
            )));
        }
        Ok(SharedSecret(bytes))
    }

    /// Deterministic 32-byte secret from a seed.
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut buf = vec![0u8; 32];
        rng.fill_bytes(&mut buf);
        SharedSecret(buf)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for SharedSecret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Secrets stay out of debug output; length is enough for diagnostics.
        write!(f, "SharedSecret({} bytes)", self.0.len())
    }
}

/// A full commuting lock: can add and remove its lock.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LockKey {
    XorPad { keystream: Vec<u8> },
    ExpModP { p: u64, e: u64, d: u64 },
}

/// The lock-only half of a key. For xor-pad the halves coincide (the pad
/// unlocks what it locked); for exp-mod-p the half omits `d` and cannot
/// remove locks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LockHalf {
    XorPad { keystream: Vec<u8> },
    ExpModP { p: u64, e: u64 },
}

// -------------------------------------------------------------------------
// u64 modular arithmetic. Intermediates widen to u128 so any p < 2^64 works.

fn mod_mul(a: u64, b: u64, p: u64) -> u64 {
    ((a as u128 * b as u128) % p as u128) as u64
}

fn mod_pow(mut base: u64, mut exp: u64, p: u64) -> u64 {
    let mut acc = 1u64 % p;
    base %= p;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mod_mul(acc, base, p);
        }
        base = mod_mul(base, base, p);
        exp >>= 1;
    }
    acc
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Inverse of `a` mod `m` by the extended Euclidean algorithm.
fn mod_inverse(a: u64, m: u64) -> Option<u64> {
    let (mut old_r, mut r) = (a as i128, m as i128);
    let (mut old_s, mut s) = (1i128, 0i128);
    while r != 0 {
        let q = old_r / r;
        (old_r, r) = (r, old_r - q * r);
        (old_s, s) = (s, old_s - q * s);
    }
    if old_r != 1 {
        return None;
    }
    let m = m as i128;
    Some(((old_s % m + m) % m) as u64)
}

/// Deterministic Miller-Rabin, valid for every u64 with this witness set.
fn is_prime_u64(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    for small in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        if n == small {
            return true;
        }
        if n.is_multiple_of(small) {
            return false;
        }
    }
    let mut d = n - 1;
    let mut s = 0u32;
    while d & 1 == 0 {
        d >>= 1;
        s += 1;
    }
    'witness: for a in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        let mut x = mod_pow(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mod_mul(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

fn validate_prime(p: u64) -> Result<(), CryptoError> {
    if p < 5 || !is_prime_u64(p) {
        return Err(CryptoError::InvalidParameter(format!(
            "modulus must be an odd prime >= 5, got {p}"
        )));
    }
    Ok(())
}

// -------------------------------------------------------------------------
// Key generation

/// Deterministic xor-pad key: `len` keystream bytes from the seed.
pub fn keygen_xor(seed: u64, len: usize) -> LockKey {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keystream = vec![0u8; len];
    rng.fill_bytes(&mut keystream);
    LockKey::XorPad { keystream }
}

/// Deterministic exp-mod-p key. `e` is drawn from the seeded generator as
/// `2 + (next_u64 mod (p-3))` and redrawn until gcd(e, p-1) = 1; `d` is the
/// inverse of `e` mod p-1.
pub fn keygen_exp(p: u64, seed: u64) -> Result<LockKey, CryptoError> {
    validate_prime(p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let e = 2 + rng.next_u64() % (p - 3);
        if gcd(e, p - 1) == 1 {
            return LockKey::exp_from_exponent(p, e);
        }
    }
}

impl LockKey {
    /// exp-mod-p key with a chosen exponent; `d` is computed.
    pub fn exp_from_exponent(p: u64, e: u64) -> Result<LockKey, CryptoError> {
        validate_prime(p)?;
        if e < 2 || e > p - 2 {
            return Err(CryptoError::InvalidParameter(format!(
                "exponent must lie in [2, p-2], got {e}"
            )));
        }
        let d = mod_inverse(e, p - 1).ok_or_else(|| {
            CryptoError::InvalidParameter(format!("exponent {e} is not coprime to p-1"))
        })?;
        Ok(LockKey::ExpModP { p, e, d })
    }

    pub fn lock_half(&self) -> LockHalf {
        match self {
            LockKey::XorPad { keystream } => LockHalf::XorPad { keystream: keystream.clone() },
            LockKey::ExpModP { p, e, .. } => LockHalf::ExpModP { p: *p, e: *e },
        }
    }
}

// -------------------------------------------------------------------------
// Raw lock operations (single residue for exp, whole buffer for xor)

fn xor_apply(keystream: &[u8], data: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if data.len() > keystream.len() {
        return Err(CryptoError::InvalidPayload(format!(
            "payload of {} bytes exceeds keystream of {} bytes",
            data.len(),
            keystream.len()
        )));
    }
    Ok(data.iter().zip(keystream).map(|(a, b)| a ^ b).collect())
}

fn residue_from_bytes(p: u64, bytes: &[u8]) -> Result<u64, CryptoError> {
    let significant = bytes.iter().skip_while(|&&b| b == 0).count();
    if significant > 8 {
        return Err(CryptoError::InvalidPayload(
            "integer payload wider than 64 bits".into(),
        ));
    }
    let mut v: u64 = 0;
    for &b in bytes {
        v = (v << 8) | b as u64;
    }
    if v == 0 || v >= p {
        return Err(CryptoError::InvalidPayload(format!(
            "integer payload must lie in [1, p), got {v} with p = {p}"
        )));
    }
    Ok(v)
}

/// Minimal big-endian encoding: no leading zero byte, at least one byte.
fn residue_to_bytes(v: u64) -> Vec<u8> {
    let n = v.to_be_bytes();
    let start = n.iter().position(|&b| b != 0).unwrap_or(7);
    n[start..].to_vec()
}

/// Adds a lock. xor-pad: XOR with the keystream prefix. exp-mod-p: the
/// payload is one integer in [1, p), raised to `e`.
pub fn lock(key: &LockKey, m: &[u8]) -> Result<Vec<u8>, CryptoError> {
    match key {
        LockKey::XorPad { keystream } => xor_apply(keystream, m),
        LockKey::ExpModP { p, e, .. } => {
            let v = residue_from_bytes(*p, m)?;
            Ok(residue_to_bytes(mod_pow(v, *e, *p)))
        }
    }
}

/// Removes a lock. xor-pad is its own inverse; exp-mod-p raises to `d`.
pub fn unlock(key: &LockKey, c: &[u8]) -> Result<Vec<u8>, CryptoError> {
    match key {
        LockKey::XorPad { keystream } => xor_apply(keystream, c),
        LockKey::ExpModP { p, d, .. } => {
            let v = residue_from_bytes(*p, c)?;
            Ok(residue_to_bytes(mod_pow(v, *d, *p)))
        }
    }
}

// -------------------------------------------------------------------------
// Digest and pass signatures

/// SHA-256 of `data`.
pub fn digest(data: &[u8]) -> Digest {
    let mut h = Sha256::new();
    h.update(data);
    Digest(h.finalize().into())
}

/// Pass signature: SHA-256 over R followed by the payload. The "+" of the
/// scheme is concatenation.
pub fn sign(r: &SharedSecret, payload: &[u8]) -> Digest {
    let mut h = Sha256::new();
    h.update(r.as_bytes());
    h.update(payload);
    Digest(h.finalize().into())
}

/// Recomputes the signature and compares in constant time.
pub fn verify(r: &SharedSecret, payload: &[u8], signature: &Digest) -> bool {
    let expected = sign(r, payload);
    let mut diff = 0u8;
    for (a, b) in expected.0.iter().zip(signature.0.iter()) {
        diff |= a ^ b;
    }
    diff == 0
}

/// Independent 64-bit sub-seed for a named domain: the first 8 bytes
/// (little-endian) of SHA-256(seed_le || domain). Components seeded through
/// different domains are reproducible in isolation.
pub fn subseed(seed: u64, domain: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(domain.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest holds 8 bytes"))
}

// -------------------------------------------------------------------------
// Block codec: arbitrary-length payloads through the modular cipher.
//
// Wire layout (exp-mod-p backend):
//   [u32 BE: plaintext byte count N]
//   ceil(8N / chunk_bits) blocks, each: [u8: L in 1..=8][L bytes: minimal BE residue]
//
// chunk_bits = bitlen(p) - 1, so every chunk value v satisfies v + 1 < p.
// The +1 offset keeps residues nonzero; trailing pad bits in the final chunk
// must decode to zero. For xor-pad the codec is the identity and the wire is
// the XORed plaintext.

fn chunk_bits(p: u64) -> u32 {
    // bitlen(p) - 1: every chunk_bits-bit value plus one stays below p.
    63 - p.leading_zeros()
}

fn chunk_count(n_bytes: usize, bits: u32) -> usize {
    let total = n_bytes * 8;
    total.div_ceil(bits as usize)
}

fn plaintext_to_residues(p: u64, pt: &[u8]) -> Vec<u64> {
    let bits = chunk_bits(p) as usize;
    let total = pt.len() * 8;
    let mut out = Vec::with_capacity(chunk_count(pt.len(), bits as u32));
    let mut pos = 0usize;
    while pos < total {
        let mut v: u64 = 0;
        for i in 0..bits {
            let bit = if pos + i < total {
                let idx = pos + i;
                (pt[idx / 8] >> (7 - idx % 8)) & 1
            } else {
                0
            };
            v = (v << 1) | bit as u64;
        }
        out.push(v + 1);
        pos += bits;
    }
    out
}

fn residues_to_plaintext(p: u64, n_bytes: usize, residues: &[u64]) -> Result<Vec<u8>, CryptoError> {
    let bits = chunk_bits(p) as usize;
    if residues.len() != chunk_count(n_bytes, bits as u32) {
        return Err(CryptoError::DecodeFailure(format!(
            "expected {} blocks for {} bytes, got {}",
            chunk_count(n_bytes, bits as u32),
            n_bytes,
            residues.len()
        )));
    }
    let total = n_bytes * 8;
    let mut out = vec![0u8; n_bytes];
    for (i, &m) in residues.iter().enumerate() {
        if m == 0 {
            return Err(CryptoError::DecodeFailure("malformed block: zero residue".into()));
        }
        let v = m - 1;
        if bits < 64 && v >= 1u64 << bits {
            return Err(CryptoError::DecodeFailure(format!(
                "malformed block: value {v} does not fit {bits} chunk bits"
            )));
        }
        for j in 0..bits {
            let bit = ((v >> (bits - 1 - j)) & 1) as u8;
            let pos = i * bits + j;
            if pos < total {
                out[pos / 8] |= bit << (7 - pos % 8);
            } else if bit != 0 {
                return Err(CryptoError::DecodeFailure(
                    "malformed block: nonzero padding bits".into(),
                ));
            }
        }
    }
    Ok(out)
}

fn serialize_blocks(n_bytes: usize, residues: &[u64]) -> Vec<u8> {
    let mut wire = Vec::with_capacity(4 + residues.len() * 2);
    wire.extend_from_slice(&(n_bytes as u32).to_be_bytes());
    for &r in residues {
        let enc = residue_to_bytes(r);
        wire.push(enc.len() as u8);
        wire.extend_from_slice(&enc);
    }
    wire
}

fn parse_blocks(p: u64, wire: &[u8]) -> Result<(usize, Vec<u64>), CryptoError> {
    if wire.len() < 4 {
        return Err(CryptoError::DecodeFailure("wire shorter than length header".into()));
    }
    let n_bytes = u32::from_be_bytes(wire[..4].try_into().unwrap()) as usize;
    let mut residues = Vec::new();
    let mut pos = 4usize;
    while pos < wire.len() {
        let l = wire[pos] as usize;
        pos += 1;
        if l == 0 || l > 8 {
            return Err(CryptoError::DecodeFailure(format!("block length byte {l} out of range")));
        }
        if pos + l > wire.len() {
            return Err(CryptoError::DecodeFailure("truncated block".into()));
        }
        if l > 1 && wire[pos] == 0 {
            return Err(CryptoError::DecodeFailure("non-minimal residue encoding".into()));
        }
        let mut v: u64 = 0;
        for &b in &wire[pos..pos + l] {
            v = (v << 8) | b as u64;
        }
        if v == 0 || v >= p {
            return Err(CryptoError::DecodeFailure(format!("exp residue {v} >= p or zero")));
        }
        residues.push(v);
        pos += l;
    }
    if residues.len() != chunk_count(n_bytes, chunk_bits(p)) {
        return Err(CryptoError::DecodeFailure(format!(
            "block count {} inconsistent with declared length {n_bytes}",
            residues.len()
        )));
    }
    Ok((n_bytes, residues))
}

fn map_residues(
    p: u64,
    exp: u64,
    wire: &[u8],
) -> Result<Vec<u8>, CryptoError> {
    let (n_bytes, residues) = parse_blocks(p, wire)?;
    let mapped: Vec<u64> = residues.iter().map(|&r| mod_pow(r, exp, p)).collect();
    Ok(serialize_blocks(n_bytes, &mapped))
}

impl LockHalf {
    /// First lock over a fresh plaintext: encodes, then locks every block.
    pub fn lock_payload(&self, plaintext: &[u8]) -> Result<Vec<u8>, CryptoError> {
        match self {
            LockHalf::XorPad { keystream } => xor_apply(keystream, plaintext),
            LockHalf::ExpModP { p, e } => {
                if plaintext.len() > u32::MAX as usize {
                    return Err(CryptoError::InvalidPayload("payload too long".into()));
                }
                let residues = plaintext_to_residues(*p, plaintext);
                let locked: Vec<u64> = residues.iter().map(|&m| mod_pow(m, *e, *p)).collect();
                Ok(serialize_blocks(plaintext.len(), &locked))
            }
        }
    }

    /// Adds this lock on top of an already-locked wire payload.
    pub fn add_lock(&self, wire: &[u8]) -> Result<Vec<u8>, CryptoError> {
        match self {
            LockHalf::XorPad { keystream } => xor_apply(keystream, wire),
            LockHalf::ExpModP { p, e } => map_residues(*p, *e, wire),
        }
    }
}

impl LockKey {
    pub fn lock_payload(&self, plaintext: &[u8]) -> Result<Vec<u8>, CryptoError> {
        self.lock_half().lock_payload(plaintext)
    }

    pub fn add_lock(&self, wire: &[u8]) -> Result<Vec<u8>, CryptoError> {
        self.lock_half().add_lock(wire)
    }

    /// Removes this key's lock, leaving any other locks (and the block
    /// structure) in place.
    pub fn remove_lock(&self, wire: &[u8]) -> Result<Vec<u8>, CryptoError> {
        match self {
            LockKey::XorPad { keystream } => xor_apply(keystream, wire),
            LockKey::ExpModP { p, d, .. } => map_residues(*p, *d, wire),
        }
    }

    /// Removes the final lock and decodes back to plaintext.
    pub fn open_payload(&self, wire: &[u8]) -> Result<Vec<u8>, CryptoError> {
        match self {
            LockKey::XorPad { keystream } => xor_apply(keystream, wire),
            LockKey::ExpModP { p, d, .. } => {
                let (n_bytes, residues) = parse_blocks(*p, wire)?;
                let opened: Vec<u64> = residues.iter().map(|&c| mod_pow(c, *d, *p)).collect();
                residues_to_plaintext(*p, n_bytes, &opened)
            }
        }
    }
}

// LockHalf wire form, used when a box's lock half travels inside a payload:
// [0x00][keystream] for xor-pad, [0x01][8B BE p][8B BE e] for exp-mod-p.
impl LockHalf {
    pub fn to_wire(&self) -> Vec<u8> {
        match self {
            LockHalf::XorPad { keystream } => {
                let mut out = vec![0x00];
                out.extend_from_slice(keystream);
                out
            }
            LockHalf::ExpModP { p, e } => {
                let mut out = vec![0x01];
                out.extend_from_slice(&p.to_be_bytes());
                out.extend_from_slice(&e.to_be_bytes());
                out
            }
        }
    }

    pub fn from_wire(wire: &[u8]) -> Result<Self, CryptoError> {
        match wire.first() {
            Some(0x00) => Ok(LockHalf::XorPad { keystream: wire[1..].to_vec() }),
            Some(0x01) => {
                if wire.len() != 17 {
                    return Err(CryptoError::DecodeFailure("exp lock half must be 17 bytes".into()));
                }
                let p = u64::from_be_bytes(wire[1..9].try_into().unwrap());
                let e = u64::from_be_bytes(wire[9..17].try_into().unwrap());
                validate_prime(p).map_err(|_| {
                    CryptoError::DecodeFailure(format!("lock half carries non-prime modulus {p}"))
                })?;
                Ok(LockHalf::ExpModP { p, e })
            }
            _ => Err(CryptoError::DecodeFailure("unknown lock half tag".into())),
        }
    }
}
