//! Node keys, identities, and the canonical byte layout used for hashing and signing.
//!
//! Layout rules shared by every encoder in this crate:
//! * fields appear in declaration order;
//! * integers are 8-byte big-endian;
//! * coordinates are signed 8-byte big-endian millimeters, rounded half away from zero;
//! * variable-length fields carry a 4-byte big-endian length prefix (byte count for
//!   byte strings, element count for lists);
//! * fixed-size digests are written raw.

use std::fmt;

use ed25519_dalek::{Signature, Signer as _, SigningKey, Verifier as _, VerifyingKey};
use rand::Rng;
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::geo::Position;

pub const DIGEST_LEN: usize = 32;

/// Largest encodable coordinate magnitude in millimeters.
pub const MAX_COORD_MM: f64 = 9.2e15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncodeError {
    #[error("coordinate {0} m is outside the fixed-point range")]
    CoordinateOutOfRange(f64),
    #[error("field is too long to encode ({0} bytes)")]
    FieldTooLong(usize),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("unexpected end of input at offset {0}")]
    Truncated(usize),
    #[error("{0} trailing bytes after record")]
    Trailing(usize),
    #[error("non-canonical encoding: {0}")]
    NonCanonical(&'static str),
}

/// SHA-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; DIGEST_LEN]);

    pub fn of(bytes: &[u8]) -> Digest {
        Digest(Sha256::digest(bytes).into())
    }

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn leading_zero_bits(&self) -> u32 {
        let mut bits = 0;
        for byte in self.0 {
            if byte == 0 {
                bits += 8;
            } else {
                bits += byte.leading_zeros();
                break;
            }
        }
        bits
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

/// A node identity: the digest of its public key.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub Digest);

impl NodeId {
    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        self.0.as_bytes()
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NodeId({})", &self.0.to_hex()[..12])
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.to_hex()[..12])
    }
}

pub fn derive_identity(public_key: &[u8]) -> NodeId {
    NodeId(Digest::of(public_key))
}

/// Anything that can produce signatures over canonical bytes.
pub trait Signer {
    fn public_key(&self) -> &[u8];
    fn sign(&self, message: &[u8]) -> Vec<u8>;

    fn node_id(&self) -> NodeId {
        derive_identity(self.public_key())
    }
}

/// Verifies signatures for some scheme; malformed inputs verify as `false`.
pub trait Verifier {
    fn verify(&self, message: &[u8], signature: &[u8], public_key: &[u8]) -> bool;
}

/// Ed25519 key pair. The secret half never leaves this type.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
    public: [u8; 32],
}

impl KeyPair {
    pub fn generate<R: Rng + ?Sized>(rng: &mut R) -> KeyPair {
        let mut seed = [0u8; 32];
        rng.fill(&mut seed);
        KeyPair::from_seed(seed)
    }

    pub fn from_seed(seed: [u8; 32]) -> KeyPair {
        let signing = SigningKey::from_bytes(&seed);
        let public = signing.verifying_key().to_bytes();
        KeyPair { signing, public }
    }

    pub fn public_key_bytes(&self) -> [u8; 32] {
        self.public
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair").field("node_id", &self.node_id()).finish_non_exhaustive()
    }
}

impl Signer for KeyPair {
    fn public_key(&self) -> &[u8] {
        &self.public
    }

    fn sign(&self, message: &[u8]) -> Vec<u8> {
        self.signing.sign(message).to_bytes().to_vec()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Ed25519Verifier;

impl Verifier for Ed25519Verifier {
    fn verify(&self, message: &[u8], signature: &[u8], public_key: &[u8]) -> bool {
        let Ok(pk) = <[u8; 32]>::try_from(public_key) else {
            return false;
        };
        let Ok(vk) = VerifyingKey::from_bytes(&pk) else {
            return false;
        };
        let Ok(sig) = Signature::from_slice(signature) else {
            return false;
        };
        vk.verify(message, &sig).is_ok()
    }
}

pub fn generate_keypair<R: Rng + ?Sized>(rng: &mut R) -> KeyPair {
    KeyPair::generate(rng)
}

pub fn sign(message: &[u8], key: &KeyPair) -> Vec<u8> {
    key.sign(message)
}

pub fn verify(message: &[u8], signature: &[u8], public_key: &[u8]) -> bool {
    Ed25519Verifier.verify(message, signature, public_key)
}

/// Meters to fixed-point millimeters, rounding half away from zero.
pub fn meters_to_mm(meters: f64) -> Result<i64, EncodeError> {
    let mm = (meters * 1000.0).round();
    if !mm.is_finite() || mm.abs() > MAX_COORD_MM {
        return Err(EncodeError::CoordinateOutOfRange(meters));
    }
    Ok(mm as i64)
}

pub fn mm_to_meters(mm: i64) -> f64 {
    mm as f64 / 1000.0
}

/// Append-only writer for the canonical layout.
#[derive(Debug, Default, Clone)]
pub struct CanonicalWriter {
    buf: Vec<u8>,
}

impl CanonicalWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn i64(&mut self, v: i64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn digest(&mut self, d: &Digest) -> &mut Self {
        self.buf.extend_from_slice(d.as_bytes());
        self
    }

    pub fn len_prefix(&mut self, len: usize) -> Result<&mut Self, EncodeError> {
        let len32 = u32::try_from(len).map_err(|_| EncodeError::FieldTooLong(len))?;
        self.buf.extend_from_slice(&len32.to_be_bytes());
        Ok(self)
    }

    pub fn bytes(&mut self, b: &[u8]) -> Result<&mut Self, EncodeError> {
        self.len_prefix(b.len())?;
        self.buf.extend_from_slice(b);
        Ok(self)
    }

    pub fn position(&mut self, p: &Position) -> Result<&mut Self, EncodeError> {
        let x = meters_to_mm(p.x)?;
        let y = meters_to_mm(p.y)?;
        Ok(self.i64(x).i64(y))
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// Cursor over canonical bytes.
#[derive(Debug, Clone)]
pub struct CanonicalReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> CanonicalReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        CanonicalReader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let end = self.pos.checked_add(n).ok_or(DecodeError::Truncated(self.pos))?;
        if end > self.buf.len() {
            return Err(DecodeError::Truncated(self.pos));
        }
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn i64(&mut self) -> Result<i64, DecodeError> {
        Ok(i64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn len_prefix(&mut self) -> Result<usize, DecodeError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    pub fn digest(&mut self) -> Result<Digest, DecodeError> {
        Ok(Digest(self.take(DIGEST_LEN)?.try_into().expect("32 bytes")))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], DecodeError> {
        let len = self.len_prefix()?;
        self.take(len)
    }

    pub fn position(&mut self) -> Result<Position, DecodeError> {
        let x = self.i64()?;
        let y = self.i64()?;
        if (x as f64).abs() > MAX_COORD_MM || (y as f64).abs() > MAX_COORD_MM {
            return Err(DecodeError::NonCanonical("coordinate out of range"));
        }
        Ok(Position::new(mm_to_meters(x), mm_to_meters(y)))
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn finish(self) -> Result<(), DecodeError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(DecodeError::Trailing(n)),
        }
    }
}
