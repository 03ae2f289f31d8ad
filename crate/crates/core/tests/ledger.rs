use blockloc_core::chain::{mine_block, Block, Ledger, LocationClaim, VerifyPolicy};
use blockloc_core::geo::Position;
use blockloc_core::identity::{derive_identity, KeyPair, NodeId, Signer};
use blockloc_core::netsim::{run_simulation, Mode, SimConfig};
use ed25519_dalek::{Signer as _, SigningKey};
use proptest::prelude::*;
use sha2::{Digest as _, Sha256};

fn id_of(seed: u8) -> NodeId {
    KeyPair::from_seed([seed; 32]).node_id()
}

#[test]
fn claim_encoding_golden() {
    let seed = [9u8; 32];
    let key = KeyPair::from_seed(seed);
    let (n1, n2) = (id_of(1), id_of(2));
    let claim = LocationClaim::new_signed(&key, Position::new(1.5, -2.25), [n2, n1, n2]).unwrap();

    let sk = SigningKey::from_bytes(&seed);
    let pk = sk.verifying_key().to_bytes();
    let mut unsigned = Vec::new();
    unsigned.extend_from_slice(&Sha256::digest(pk));
    unsigned.extend_from_slice(&32u32.to_be_bytes());
    unsigned.extend_from_slice(&pk);
    unsigned.extend_from_slice(&1500i64.to_be_bytes());
    unsigned.extend_from_slice(&(-2250i64).to_be_bytes());
    unsigned.extend_from_slice(&2u32.to_be_bytes());
    let (lo, hi) = if n1 < n2 { (n1, n2) } else { (n2, n1) };
    unsigned.extend_from_slice(lo.as_bytes());
    unsigned.extend_from_slice(hi.as_bytes());
    let sig = sk.sign(&unsigned).to_bytes();

    assert_eq!(claim.signing_bytes().unwrap(), unsigned);
    let mut full = unsigned.clone();
    full.extend_from_slice(&64u32.to_be_bytes());
    full.extend_from_slice(&sig);
    assert_eq!(claim.canonical_bytes().unwrap(), full);
    assert_eq!(claim.node_id, derive_identity(&pk));
    assert_eq!(LocationClaim::from_bytes(&full).unwrap(), claim);
}

#[test]
fn block_hash_matches_independent_digest() {
    let key = KeyPair::from_seed([3; 32]);
    let claim = LocationClaim::new_signed(&key, Position::new(10.0, 20.0), []).unwrap();
    let first = mine_block(claim.clone(), None, 6).unwrap();
    let second = mine_block(claim, Some(&first), 6).unwrap();
    for b in [&first, &second] {
        let mut h = Sha256::new();
        h.update(b.index.to_be_bytes());
        h.update(b.prev_hash.as_bytes());
        h.update(b.nonce.to_be_bytes());
        h.update(b.claim.canonical_bytes().unwrap());
        assert_eq!(h.finalize().as_slice(), b.hash.as_bytes());
        assert!(b.hash.leading_zero_bits() >= 6);
    }
    assert_eq!(second.prev_hash, first.hash);
    // Nonces are searched upward from zero, so no smaller nonce satisfies the target.
    for nonce in 0..second.nonce {
        let b = Block { nonce, ..second.clone() };
        assert!(b.compute_hash().unwrap().leading_zero_bits() < 6);
    }
}

#[test]
fn export_layout() {
    let key = KeyPair::from_seed([4; 32]);
    let claim = LocationClaim::new_signed(&key, Position::new(0.0, 0.0), []).unwrap();
    let mut ledger = Ledger::new();
    let block = mine_block(claim, None, 0).unwrap();
    ledger.append(block.clone(), 0).unwrap();
    let bytes = ledger.export().unwrap();
    let record = block.to_bytes().unwrap();
    assert_eq!(&bytes[..8], &0u64.to_be_bytes());
    assert_eq!(&bytes[8..12], &(record.len() as u32).to_be_bytes());
    assert_eq!(&bytes[12..], &record[..]);
    assert_eq!(Ledger::import(&bytes, 0, None).unwrap(), ledger);
}

fn secure_config(seed: u64, malicious_rate: f64) -> SimConfig {
    SimConfig { seed, malicious_rate, difficulty: 4, mode: Mode::Secure, ..SimConfig::default() }
}

#[test]
fn secure_ledgers_replay_under_the_vicinity_rule() {
    for seed in 0..6 {
        let cfg = secure_config(seed, 0.3);
        let out = run_simulation(&cfg).unwrap();
        let replayed =
            Ledger::replay(out.ledger.blocks().to_vec(), out.ledger.genesis_len(), cfg.difficulty, Some(&cfg.policy()))
                .unwrap();
        assert_eq!(replayed.position_index(), out.ledger.position_index());
        let imported = Ledger::import(&out.ledger.export().unwrap(), cfg.difficulty, Some(&cfg.policy())).unwrap();
        assert_eq!(imported, out.ledger);
    }
}

#[test]
fn non_genesis_blocks_meet_difficulty() {
    let cfg = SimConfig { difficulty: 10, ..secure_config(2, 0.2) };
    let out = run_simulation(&cfg).unwrap();
    assert!(out.ledger.len() > out.ledger.genesis_len());
    for b in &out.ledger.blocks()[out.ledger.genesis_len()..] {
        assert!(b.hash.leading_zero_bits() >= 10);
    }
}

#[test]
fn insecure_ledger_fails_secure_replay_when_forgeries_land() {
    let cfg = SimConfig { mode: Mode::Insecure, ..secure_config(1, 0.5) };
    let out = run_simulation(&cfg).unwrap();
    let blocks = out.ledger.blocks().to_vec();
    let g = out.ledger.genesis_len();
    assert!(Ledger::replay(blocks.clone(), g, cfg.difficulty, None).is_ok());
    assert!(Ledger::replay(blocks, g, cfg.difficulty, Some(&cfg.policy())).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn chain_round_trips_and_detects_tampering(
        seeds in proptest::collection::vec(any::<[u8; 32]>(), 1..6),
        coords in proptest::collection::vec((-500.0f64..500.0, -500.0f64..500.0), 6),
        victim in any::<prop::sample::Index>(),
        byte in any::<prop::sample::Index>(),
        mask in 1u8..=255,
    ) {
        let policy = VerifyPolicy::new(30.0, f64::INFINITY);
        let mut ledger = Ledger::new();
        for (s, (x, y)) in seeds.iter().zip(&coords) {
            let claim = LocationClaim::new_signed(&KeyPair::from_seed(*s), Position::new(*x, *y), []).unwrap();
            let block = mine_block(claim, ledger.tip(), 2).unwrap();
            ledger.append(block, 2).unwrap();
        }
        let exported = ledger.export().unwrap();
        prop_assert_eq!(&Ledger::import(&exported, 2, Some(&policy)).unwrap(), &ledger);

        let i = victim.index(ledger.len());
        let mut bytes = ledger.blocks()[i].to_bytes().unwrap();
        let pos = byte.index(bytes.len());
        bytes[pos] ^= mask;
        let prefix = Ledger::replay(ledger.blocks()[..i].to_vec(), 0, 2, Some(&policy)).unwrap();
        let rejected = match Block::from_bytes(&bytes) {
            Err(_) => true,
            Ok(b) => !blockloc_core::chain::validate_block(&b, &prefix, 2, &policy).accepted,
        };
        prop_assert!(rejected);
    }
}
