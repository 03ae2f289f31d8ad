//! The localization ledger: signed position claims packed into hash-linked,
//! proof-of-work blocks, plus the rules a miner applies before accepting one.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::geo::{euclidean_distance, Position};
use crate::identity::{
    derive_identity, meters_to_mm, mm_to_meters, verify, CanonicalReader, CanonicalWriter, DecodeError, Digest,
    EncodeError, NodeId, Signer, DIGEST_LEN,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainError {
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("block {index} rejected: {reason:?}")]
    Rejected { index: u64, reason: Verdict },
    #[error("nonce space exhausted at difficulty {0}")]
    NonceExhausted(u32),
}

/// A node's signed statement of where it is and who it can hear.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationClaim {
    pub node_id: NodeId,
    pub public_key: Vec<u8>,
    pub position: Position,
    /// Sorted ascending, duplicate-free, never contains `node_id`.
    pub neighbor_ids: Vec<NodeId>,
    pub signature: Vec<u8>,
}

impl LocationClaim {
    /// Builds and signs a claim. The position is snapped to the millimeter
    /// grid of the canonical encoding, so the claim equals its decoded form.
    pub fn new_signed<S, I>(signer: &S, position: Position, neighbors: I) -> Result<Self, EncodeError>
    where
        S: Signer + ?Sized,
        I: IntoIterator<Item = NodeId>,
    {
        let node_id = signer.node_id();
        let mut neighbor_ids: Vec<NodeId> = neighbors.into_iter().filter(|n| *n != node_id).collect();
        neighbor_ids.sort_unstable();
        neighbor_ids.dedup();
        let position = Position::new(mm_to_meters(meters_to_mm(position.x)?), mm_to_meters(meters_to_mm(position.y)?));
        let mut claim = LocationClaim {
            node_id,
            public_key: signer.public_key().to_vec(),
            position,
            neighbor_ids,
            signature: Vec::new(),
        };
        claim.signature = signer.sign(&claim.signing_bytes()?);
        Ok(claim)
    }

    fn write_unsigned(&self, w: &mut CanonicalWriter) -> Result<(), EncodeError> {
        w.digest(&self.node_id.0);
        w.bytes(&self.public_key)?;
        w.position(&self.position)?;
        w.len_prefix(self.neighbor_ids.len())?;
        for id in &self.neighbor_ids {
            w.digest(&id.0);
        }
        Ok(())
    }

    /// The bytes covered by the claim signature.
    pub fn signing_bytes(&self) -> Result<Vec<u8>, EncodeError> {
        let mut w = CanonicalWriter::new();
        self.write_unsigned(&mut w)?;
        Ok(w.finish())
    }

    fn write(&self, w: &mut CanonicalWriter) -> Result<(), EncodeError> {
        self.write_unsigned(w)?;
        w.bytes(&self.signature)?;
        Ok(())
    }

    pub fn canonical_bytes(&self) -> Result<Vec<u8>, EncodeError> {
        let mut w = CanonicalWriter::new();
        self.write(&mut w)?;
        Ok(w.finish())
    }

    fn read(r: &mut CanonicalReader<'_>) -> Result<Self, DecodeError> {
        let node_id = NodeId(r.digest()?);
        let public_key = r.bytes()?.to_vec();
        let position = r.position()?;
        let count = r.len_prefix()?;
        if count.saturating_mul(DIGEST_LEN) > r.remaining() {
            return Err(DecodeError::Truncated(0));
        }
        let mut neighbor_ids = Vec::with_capacity(count);
        for _ in 0..count {
            let id = NodeId(r.digest()?);
            if neighbor_ids.last().is_some_and(|prev| *prev >= id) {
                return Err(DecodeError::NonCanonical("neighbor ids not strictly ascending"));
            }
            if id == node_id {
                return Err(DecodeError::NonCanonical("claim lists itself as neighbor"));
            }
            neighbor_ids.push(id);
        }
        let signature = r.bytes()?.to_vec();
        Ok(LocationClaim { node_id, public_key, position, neighbor_ids, signature })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = CanonicalReader::new(bytes);
        let claim = Self::read(&mut r)?;
        r.finish()?;
        Ok(claim)
    }

    pub fn signature_valid(&self) -> bool {
        match self.signing_bytes() {
            Ok(msg) => verify(&msg, &self.signature, &self.public_key),
            Err(_) => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub index: u64,
    pub prev_hash: Digest,
    pub nonce: u64,
    pub claim: LocationClaim,
    pub hash: Digest,
}

const NONCE_OFFSET: usize = 8 + DIGEST_LEN;

fn header_bytes(index: u64, prev_hash: &Digest, nonce: u64, claim: &LocationClaim) -> Result<Vec<u8>, EncodeError> {
    let mut w = CanonicalWriter::new();
    w.u64(index).digest(prev_hash).u64(nonce);
    claim.write(&mut w)?;
    Ok(w.finish())
}

impl Block {
    /// Bytes hashed for proof of work: index, prev_hash, nonce, claim.
    pub fn header_bytes(&self) -> Result<Vec<u8>, EncodeError> {
        header_bytes(self.index, &self.prev_hash, self.nonce, &self.claim)
    }

    pub fn compute_hash(&self) -> Result<Digest, EncodeError> {
        Ok(Digest::of(&self.header_bytes()?))
    }

    /// Full canonical encoding: header fields followed by the stored hash.
    pub fn to_bytes(&self) -> Result<Vec<u8>, EncodeError> {
        let mut bytes = self.header_bytes()?;
        bytes.extend_from_slice(self.hash.as_bytes());
        Ok(bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = CanonicalReader::new(bytes);
        let index = r.u64()?;
        let prev_hash = r.digest()?;
        let nonce = r.u64()?;
        let claim = LocationClaim::read(&mut r)?;
        let hash = r.digest()?;
        r.finish()?;
        Ok(Block { index, prev_hash, nonce, claim, hash })
    }
}

/// Searches nonces upward from 0 until the block hash carries at least
/// `difficulty` leading zero bits.
pub fn mine_block(claim: LocationClaim, prev: Option<&Block>, difficulty: u32) -> Result<Block, ChainError> {
    let (index, prev_hash) = match prev {
        Some(b) => (b.index + 1, b.hash),
        None => (0, Digest::ZERO),
    };
    let mut buf = header_bytes(index, &prev_hash, 0, &claim)?;
    let mut nonce: u64 = 0;
    loop {
        buf[NONCE_OFFSET..NONCE_OFFSET + 8].copy_from_slice(&nonce.to_be_bytes());
        let hash = Digest::of(&buf);
        if hash.leading_zero_bits() >= difficulty {
            return Ok(Block { index, prev_hash, nonce, claim, hash });
        }
        nonce = nonce.checked_add(1).ok_or(ChainError::NonceExhausted(difficulty))?;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Ok,
    BadSignature,
    IdentityMismatch,
    VicinityViolation,
    NoVerifiableNeighbor,
    BadNonce,
    BadLink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerificationOutcome {
    pub accepted: bool,
    pub reason: Verdict,
}

impl From<Verdict> for VerificationOutcome {
    fn from(reason: Verdict) -> Self {
        VerificationOutcome { accepted: reason == Verdict::Ok, reason }
    }
}

impl VerificationOutcome {
    pub const OK: VerificationOutcome = VerificationOutcome { accepted: true, reason: Verdict::Ok };
}

/// Parameters of the vicinity rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyPolicy {
    pub range_r: f64,
    /// Multiplier on `range_r`; `f64::INFINITY` disables the vicinity rule.
    pub slack: f64,
    /// Also require every verifiable neighbor to list the claimant in its own claim.
    pub require_reciprocal: bool,
}

impl VerifyPolicy {
    pub fn new(range_r: f64, slack: f64) -> Self {
        VerifyPolicy { range_r, slack, require_reciprocal: false }
    }

    pub fn bound(&self) -> f64 {
        self.slack * self.range_r
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ledger {
    blocks: Vec<Block>,
    genesis_len: usize,
    latest: BTreeMap<NodeId, usize>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Number of leading blocks written during initialization.
    pub fn genesis_len(&self) -> usize {
        self.genesis_len
    }

    pub fn tip(&self) -> Option<&Block> {
        self.blocks.last()
    }

    pub fn lookup_position(&self, id: &NodeId) -> Option<Position> {
        self.latest_claim(id).map(|c| c.position)
    }

    pub fn latest_claim(&self, id: &NodeId) -> Option<&LocationClaim> {
        self.latest.get(id).map(|&i| &self.blocks[i].claim)
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.latest.contains_key(id)
    }

    pub fn localized_count(&self) -> usize {
        self.latest.len()
    }

    /// Latest accepted position per node.
    pub fn position_index(&self) -> BTreeMap<NodeId, Position> {
        self.latest.iter().map(|(id, &i)| (*id, self.blocks[i].claim.position)).collect()
    }

    /// Linkage and proof-of-work checks against the current tip.
    pub fn check_structure(&self, block: &Block, difficulty: u32) -> Verdict {
        let expected_prev = self.tip().map_or(Digest::ZERO, |b| b.hash);
        if block.index != self.blocks.len() as u64 || block.prev_hash != expected_prev {
            return Verdict::BadLink;
        }
        match block.compute_hash() {
            Ok(h) if h == block.hash && h.leading_zero_bits() >= difficulty => Verdict::Ok,
            _ => Verdict::BadNonce,
        }
    }

    /// Appends a block that links to the tip and carries valid proof of work.
    /// Claim verification is the caller's decision.
    pub fn append(&mut self, block: Block, difficulty: u32) -> Result<(), ChainError> {
        match self.check_structure(&block, difficulty) {
            Verdict::Ok => {
                self.push(block);
                Ok(())
            }
            reason => Err(ChainError::Rejected { index: block.index, reason }),
        }
    }

    fn push(&mut self, block: Block) {
        self.latest.insert(block.claim.node_id, self.blocks.len());
        self.blocks.push(block);
    }

    fn append_genesis(&mut self, block: Block) -> Result<(), ChainError> {
        debug_assert_eq!(self.genesis_len, self.blocks.len());
        self.append(block, 0)?;
        self.genesis_len += 1;
        Ok(())
    }

    /// Rebuilds a ledger from a block list, re-running every check in order.
    ///
    /// With `policy = None` only linkage, hashes and proof of work are checked
    /// (the insecure ledger); otherwise every claim is re-verified against the
    /// ledger state at its insertion point.
    pub fn replay(
        blocks: impl IntoIterator<Item = Block>,
        genesis_len: usize,
        difficulty: u32,
        policy: Option<&VerifyPolicy>,
    ) -> Result<Ledger, ChainError> {
        let mut ledger = Ledger::new();
        for block in blocks {
            let is_genesis = ledger.len() < genesis_len;
            let outcome = if is_genesis {
                let structural = ledger.check_structure(&block, 0);
                match (structural, policy) {
                    (Verdict::Ok, Some(p)) => check_claim(&block.claim, &ledger, p, true),
                    (v, _) => v,
                }
            } else {
                match policy {
                    Some(p) => validate_block(&block, &ledger, difficulty, p).reason,
                    None => ledger.check_structure(&block, difficulty),
                }
            };
            if outcome != Verdict::Ok {
                return Err(ChainError::Rejected { index: block.index, reason: outcome });
            }
            if is_genesis {
                ledger.genesis_len += 1;
            }
            ledger.push(block);
        }
        if ledger.genesis_len != genesis_len {
            return Err(ChainError::Decode(DecodeError::NonCanonical("chain shorter than its genesis")));
        }
        Ok(ledger)
    }

    /// Flat-file form: 8-byte genesis length, then each block's canonical
    /// encoding behind a 4-byte big-endian length.
    pub fn export(&self) -> Result<Vec<u8>, ChainError> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.genesis_len as u64).to_be_bytes());
        for block in &self.blocks {
            let bytes = block.to_bytes()?;
            let len = u32::try_from(bytes.len()).map_err(|_| EncodeError::FieldTooLong(bytes.len()))?;
            out.extend_from_slice(&len.to_be_bytes());
            out.extend_from_slice(&bytes);
        }
        Ok(out)
    }

    /// Splits an exported chain into its genesis length and raw block records.
    pub fn split_export(bytes: &[u8]) -> Result<(usize, Vec<&[u8]>), DecodeError> {
        let mut r = CanonicalReader::new(bytes);
        let genesis_len =
            usize::try_from(r.u64()?).map_err(|_| DecodeError::NonCanonical("genesis length overflow"))?;
        let mut records = Vec::new();
        while r.remaining() > 0 {
            records.push(r.bytes()?);
        }
        Ok((genesis_len, records))
    }

    pub fn import(bytes: &[u8], difficulty: u32, policy: Option<&VerifyPolicy>) -> Result<Ledger, ChainError> {
        let (genesis_len, records) = Self::split_export(bytes)?;
        let blocks = records.into_iter().map(Block::from_bytes).collect::<Result<Vec<_>, _>>()?;
        Self::replay(blocks, genesis_len, difficulty, policy)
    }
}

fn check_claim(claim: &LocationClaim, ledger: &Ledger, policy: &VerifyPolicy, allow_isolated: bool) -> Verdict {
    if !claim.signature_valid() {
        return Verdict::BadSignature;
    }
    if derive_identity(&claim.public_key) != claim.node_id {
        return Verdict::IdentityMismatch;
    }
    if policy.slack == f64::INFINITY {
        return Verdict::Ok;
    }
    let bound = policy.bound();
    let mut verifiable = 0usize;
    for id in &claim.neighbor_ids {
        let Some(neighbor) = ledger.latest_claim(id) else { continue };
        verifiable += 1;
        // NaN-safe: a non-finite distance fails the bound.
        if !(euclidean_distance(claim.position, neighbor.position) <= bound) {
            return Verdict::VicinityViolation;
        }
        if policy.require_reciprocal && neighbor.neighbor_ids.binary_search(&claim.node_id).is_err() {
            return Verdict::VicinityViolation;
        }
    }
    if verifiable == 0 && !allow_isolated && ledger.localized_count() > 0 {
        return Verdict::NoVerifiableNeighbor;
    }
    Verdict::Ok
}

/// Signature, identity binding, and the vicinity rule for a claim against the ledger.
pub fn verify_position_claim(claim: &LocationClaim, ledger: &Ledger, policy: &VerifyPolicy) -> VerificationOutcome {
    check_claim(claim, ledger, policy, false).into()
}

/// Linkage, then hash and proof of work, then the claim itself.
pub fn validate_block(block: &Block, ledger: &Ledger, difficulty: u32, policy: &VerifyPolicy) -> VerificationOutcome {
    match ledger.check_structure(block, difficulty) {
        Verdict::Ok => verify_position_claim(&block.claim, ledger, policy),
        v => v.into(),
    }
}

pub fn append_block(ledger: &mut Ledger, block: Block, difficulty: u32) -> Result<(), ChainError> {
    ledger.append(block, difficulty)
}

pub fn lookup_position(ledger: &Ledger, id: &NodeId) -> Option<Position> {
    ledger.lookup_position(id)
}

/// Net corroboration of each claim by the other claims in `claims`: listed
/// neighbors whose claimed position lies within the vicinity bound count +1,
/// those beyond it count -1. Neighbors absent from `claims` do not count.
pub fn corroboration_scores(claims: &[LocationClaim], policy: &VerifyPolicy) -> Vec<i64> {
    let by_id: BTreeMap<NodeId, &LocationClaim> = claims.iter().map(|c| (c.node_id, c)).collect();
    let bound = policy.bound();
    claims
        .iter()
        .map(|c| {
            c.neighbor_ids
                .iter()
                .filter_map(|id| by_id.get(id))
                .map(|n| if euclidean_distance(c.position, n.position) <= bound { 1 } else { -1 })
                .sum()
        })
        .collect()
}

/// Seeds the ledger with anchor claims.
///
/// Without a policy every anchor is admitted in ascending node-id order.
/// With one, claims are taken in descending corroboration score (ties by
/// ascending node id) and each is checked against the anchors accepted
/// before it; a claim none of whose listed neighbors is yet on the ledger is
/// accepted. Genesis blocks carry no proof of work.
pub fn build_genesis(
    mut anchor_claims: Vec<LocationClaim>,
    policy: Option<&VerifyPolicy>,
) -> Result<Ledger, ChainError> {
    anchor_claims.sort_by_key(|c| c.node_id);
    if let Some(p) = policy {
        let scores = corroboration_scores(&anchor_claims, p);
        let mut ranked: Vec<(i64, LocationClaim)> = scores.into_iter().zip(anchor_claims).collect();
        // Stable sort keeps id order among equal scores.
        ranked.sort_by_key(|r| std::cmp::Reverse(r.0));
        anchor_claims = ranked.into_iter().map(|(_, c)| c).collect();
    }
    let mut ledger = Ledger::new();
    for claim in anchor_claims {
        if let Some(p) = policy {
            if check_claim(&claim, &ledger, p, true) != Verdict::Ok {
                continue;
            }
        }
        let block = mine_block(claim, ledger.tip(), 0)?;
        ledger.append_genesis(block)?;
    }
    Ok(ledger)
}
