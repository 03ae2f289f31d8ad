//! Deployment, radio adjacency, and the round-based localization protocol.
//!
//! A run seeds the ledger with anchor claims, then repeats rounds in which
//! every unlocalized unknown node runs an expanding-ring discovery against
//! the ledger as it stood at the start of the round, trilaterates, and
//! submits a claim. In secure mode a claim must pass the vicinity rule
//! before it is mined; in insecure mode every claim is mined and appended.

use std::collections::{BTreeMap, HashMap, VecDeque};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{assign_behaviors, rate_count, AttackError, AttackSpec, Behavior};
use crate::chain::{build_genesis, mine_block, verify_position_claim, ChainError, Ledger, LocationClaim, VerifyPolicy};
use crate::geo::{
    dvhop_avg_hop_distance, dvhop_distance, euclidean_distance, measure_distance_rssi, trilaterate, DistanceEstimate,
    GeoError, PathLossParams, Position,
};
use crate::identity::{meters_to_mm, mm_to_meters, CanonicalWriter, Digest, KeyPair, NodeId, Signer};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("n_nodes must be at least 4 (got {0})")]
    TooFewNodes(usize),
    #[error("{field} must lie in [0, 1] (got {value})")]
    RateOutOfRange { field: &'static str, value: f64 },
    #[error("{field} must be positive and finite (got {value})")]
    NonPositive { field: &'static str, value: f64 },
    #[error("slack must be >= 1 (got {0})")]
    Slack(f64),
    #[error("difficulty {0} exceeds 256 bits")]
    Difficulty(u32),
    #[error("{0} must be at least 1")]
    ZeroBound(&'static str),
    #[error(transparent)]
    PathLoss(#[from] GeoError),
    #[error(transparent)]
    Attack(#[from] AttackError),
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Chain(#[from] ChainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Insecure,
    Secure,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Insecure => "insecure",
            Mode::Secure => "secure",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "secure" => Ok(Mode::Secure),
            "insecure" => Ok(Mode::Insecure),
            other => Err(format!("unknown mode `{other}` (expected secure or insecure)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Anchor,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeRole {
    pub role: Role,
    pub behavior: Behavior,
}

impl NodeRole {
    pub fn is_anchor(&self) -> bool {
        self.role == Role::Anchor
    }

    pub fn is_malicious(&self) -> bool {
        self.behavior == Behavior::Malicious
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_nodes: usize,
    /// Deployment area (width, height) in meters.
    pub area: (f64, f64),
    pub range_r: f64,
    pub anchor_rate: f64,
    pub malicious_rate: f64,
    pub error_factor: f64,
    pub pathloss: PathLossParams,
    pub difficulty: u32,
    pub slack: f64,
    pub require_reciprocal: bool,
    pub max_hopcount: u32,
    pub max_rounds: u32,
    pub seed: u64,
    pub mode: Mode,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_nodes: 100,
            area: (100.0, 100.0),
            range_r: 30.0,
            anchor_rate: 0.2,
            malicious_rate: 0.0,
            error_factor: AttackSpec::DEFAULT_ERROR_FACTOR,
            pathloss: PathLossParams::default(),
            difficulty: 12,
            slack: 1.0,
            require_reciprocal: false,
            max_hopcount: 5,
            max_rounds: 10,
            seed: 0,
            mode: Mode::Secure,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_nodes < 4 {
            return Err(ConfigError::TooFewNodes(self.n_nodes));
        }
        for (field, value) in [("anchor_rate", self.anchor_rate), ("malicious_rate", self.malicious_rate)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(ConfigError::RateOutOfRange { field, value });
            }
        }
        for (field, value) in [("area width", self.area.0), ("area height", self.area.1), ("range_r", self.range_r)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ConfigError::NonPositive { field, value });
            }
        }
        if !(self.slack >= 1.0) {
            return Err(ConfigError::Slack(self.slack));
        }
        if self.difficulty > 256 {
            return Err(ConfigError::Difficulty(self.difficulty));
        }
        if self.max_hopcount == 0 {
            return Err(ConfigError::ZeroBound("max_hopcount"));
        }
        if self.max_rounds == 0 {
            return Err(ConfigError::ZeroBound("max_rounds"));
        }
        self.pathloss.validate()?;
        AttackSpec::position_forge(self.error_factor)?;
        Ok(())
    }

    pub fn policy(&self) -> VerifyPolicy {
        VerifyPolicy { range_r: self.range_r, slack: self.slack, require_reciprocal: self.require_reciprocal }
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub id: NodeId,
    pub position: Position,
    pub role: NodeRole,
    pub key: KeyPair,
}

/// Deployed nodes and their unit-disk radio graph.
#[derive(Debug, Clone)]
pub struct Topology {
    nodes: Vec<Node>,
    range_r: f64,
    area: (f64, f64),
    adjacency: Vec<Vec<usize>>,
    by_id: HashMap<NodeId, usize>,
}

impl Topology {
    pub fn new(nodes: Vec<Node>, range_r: f64, area: (f64, f64)) -> Topology {
        let n = nodes.len();
        let mut adjacency = vec![Vec::new(); n];
        for i in 0..n {
            for j in (i + 1)..n {
                if euclidean_distance(nodes[i].position, nodes[j].position) <= range_r {
                    adjacency[i].push(j);
                    adjacency[j].push(i);
                }
            }
        }
        let by_id = nodes.iter().enumerate().map(|(i, node)| (node.id, i)).collect();
        Topology { nodes, range_r, area, adjacency, by_id }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, idx: usize) -> &Node {
        &self.nodes[idx]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn range_r(&self) -> f64 {
        self.range_r
    }

    pub fn area(&self) -> (f64, f64) {
        self.area
    }

    pub fn neighbors(&self, idx: usize) -> &[usize] {
        &self.adjacency[idx]
    }

    pub fn are_adjacent(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].contains(&b)
    }

    pub fn index_of(&self, id: &NodeId) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    /// Node indices sorted by ascending `NodeId`.
    pub fn id_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.nodes.len()).collect();
        order.sort_by_key(|&i| self.nodes[i].id);
        order
    }

    pub fn neighbor_ids(&self, idx: usize) -> impl Iterator<Item = NodeId> + '_ {
        self.adjacency[idx].iter().map(|&j| self.nodes[j].id)
    }
}

fn quantize_mm(v: f64) -> f64 {
    mm_to_meters(meters_to_mm(v).expect("deployment coordinates are small"))
}

/// Uniform random deployment. Positions sit on the millimeter grid used by
/// the ledger encoding so true and claimed anchor positions coincide exactly.
pub fn deploy<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> Result<Topology, ConfigError> {
    config.validate()?;
    let n = config.n_nodes;
    let (w, h) = config.area;
    let positions: Vec<Position> = (0..n)
        .map(|_| {
            let x = quantize_mm(rng.random_range(0.0..=w)).min(w);
            let y = quantize_mm(rng.random_range(0.0..=h)).min(h);
            Position::new(x, y)
        })
        .collect();
    let mut is_anchor = vec![false; n];
    for i in index::sample(rng, n, rate_count(n, config.anchor_rate)) {
        is_anchor[i] = true;
    }
    let behaviors = assign_behaviors(n, config.malicious_rate, rng)?;
    let nodes = positions
        .into_iter()
        .zip(is_anchor)
        .zip(behaviors)
        .map(|((position, anchor), behavior)| {
            let key = KeyPair::generate(rng);
            Node {
                id: key.node_id(),
                position,
                role: NodeRole { role: if anchor { Role::Anchor } else { Role::Unknown }, behavior },
                key,
            }
        })
        .collect();
    Ok(Topology::new(nodes, config.range_r, config.area))
}

/// Breadth-first hop distances from `source`; `None` marks unreachable nodes.
pub fn hop_counts(topology: &Topology, source: usize) -> Vec<Option<u32>> {
    let mut hops = vec![None; topology.len()];
    hops[source] = Some(0);
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        let next = hops[u].expect("queued nodes are reached") + 1;
        for &v in topology.neighbors(u) {
            if hops[v].is_none() {
                hops[v] = Some(next);
                queue.push_back(v);
            }
        }
    }
    hops
}

/// Immutable per-run ranging state: all-pairs hop counts, the DV-Hop hop
/// size, and the seed from which each directed pair's RSSI shadowing is drawn.
#[derive(Debug, Clone)]
pub struct RangingContext {
    hops: Vec<Vec<Option<u32>>>,
    avg_hop: Option<f64>,
    pathloss: PathLossParams,
    noise_seed: u64,
    max_hopcount: u32,
}

impl RangingContext {
    pub fn new(topology: &Topology, pathloss: PathLossParams, noise_seed: u64, max_hopcount: u32) -> Self {
        let hops = (0..topology.len()).map(|i| hop_counts(topology, i)).collect();
        RangingContext { hops, avg_hop: None, pathloss, noise_seed, max_hopcount }
    }

    /// Computes the DV-Hop hop size from the anchors currently on the ledger.
    pub fn with_anchor_hop_size(mut self, topology: &Topology, ledger: &Ledger) -> Self {
        let mut anchors: Vec<(usize, Position)> = ledger
            .blocks()
            .iter()
            .take(ledger.genesis_len())
            .filter_map(|b| Some((topology.index_of(&b.claim.node_id)?, b.claim.position)))
            .collect();
        // Node-id order, so the sum does not depend on genesis admission order.
        anchors.sort_by_key(|a| topology.node(a.0).id);
        let positions: Vec<Position> = anchors.iter().map(|a| a.1).collect();
        self.avg_hop = dvhop_avg_hop_distance(&positions, |i, j| self.hops[anchors[i].0][anchors[j].0]).ok();
        self
    }

    pub fn avg_hop(&self) -> Option<f64> {
        self.avg_hop
    }

    pub fn hops(&self, from: usize, to: usize) -> Option<u32> {
        self.hops[from][to]
    }

    /// RSSI range measured by `from` towards `to`. The shadowing draw is a
    /// function of the pair alone, so repeated queries agree.
    pub fn rssi_range(&self, topology: &Topology, from: usize, to: usize) -> Result<DistanceEstimate, GeoError> {
        let true_d = euclidean_distance(topology.node(from).position, topology.node(to).position);
        let mut w = CanonicalWriter::new();
        w.u64(self.noise_seed).u64(from as u64).u64(to as u64);
        let digest = Digest::of(&w.finish());
        let seed = u64::from_be_bytes(digest.0[..8].try_into().expect("8 bytes"));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Co-located nodes still produce a (tiny) positive range.
        measure_distance_rssi(true_d.max(1e-3), &self.pathloss, &mut rng)
    }
}

/// Localized nodes within `hopcount` hops of `node`, each with a range
/// estimate: RSSI for direct neighbors, DV-Hop beyond. Sorted by hop count,
/// then id. Multi-hop responders are skipped when no hop size is known.
pub fn discover_references(
    node: usize,
    hopcount: u32,
    topology: &Topology,
    ledger: &Ledger,
    ctx: &RangingContext,
) -> Vec<(NodeId, DistanceEstimate)> {
    let mut refs: Vec<(u32, NodeId, DistanceEstimate)> = Vec::new();
    for (j, other) in topology.nodes().iter().enumerate() {
        if j == node || !ledger.contains(&other.id) {
            continue;
        }
        let Some(h) = ctx.hops(node, j).filter(|h| (1..=hopcount).contains(h)) else {
            continue;
        };
        let estimate = if h == 1 {
            ctx.rssi_range(topology, node, j).ok()
        } else {
            ctx.avg_hop().and_then(|avg| dvhop_distance(avg, h).ok())
        };
        if let Some(e) = estimate {
            refs.push((h, other.id, e));
        }
    }
    refs.sort_by_key(|a| (a.0, a.1));
    refs.into_iter().map(|(_, id, e)| (id, e)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalizeFailure {
    /// Fewer than three usable references within `max_hopcount` hops.
    NotEnoughReferences,
}

/// Expanding-ring localization: hop counts 1, 2, ... until at least three
/// usable references answer, then trilateration over all of them. A
/// degenerate reference set widens the ring instead of failing outright.
pub fn localize_node(
    node: usize,
    topology: &Topology,
    ledger: &Ledger,
    ctx: &RangingContext,
) -> Result<Position, LocalizeFailure> {
    for hopcount in 1..=ctx.max_hopcount {
        let refs = discover_references(node, hopcount, topology, ledger, ctx);
        if refs.len() < 3 {
            continue;
        }
        let pairs: Vec<(Position, f64)> =
            refs.iter().filter_map(|(id, e)| Some((ledger.lookup_position(id)?, e.meters))).collect();
        match trilaterate(&pairs) {
            Ok(p) => return Ok(p),
            Err(_) => continue,
        }
    }
    Err(LocalizeFailure::NotEnoughReferences)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    /// Localization error of every honest unknown node that obtained an estimate.
    pub per_node_error: BTreeMap<NodeId, f64>,
    /// Mean of `per_node_error`; NaN when no honest unknown node localized.
    pub mean_error: f64,
    pub localized_count: usize,
    pub unlocalized_count: usize,
    pub rejected_claims: usize,
    pub rounds_used: u32,
}

impl RunResult {
    /// Stable byte form for exact comparisons (floats by bit pattern).
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut w = CanonicalWriter::new();
        w.u64(self.per_node_error.len() as u64);
        for (id, err) in &self.per_node_error {
            w.digest(&id.0).u64(err.to_bits());
        }
        w.u64(self.mean_error.to_bits())
            .u64(self.localized_count as u64)
            .u64(self.unlocalized_count as u64)
            .u64(self.rejected_claims as u64)
            .u64(u64::from(self.rounds_used));
        w.finish()
    }
}

/// Everything a run produced, for inspection beyond the summary.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub result: RunResult,
    pub topology: Topology,
    pub ledger: Ledger,
    /// Latest estimate per honest unknown node (by topology index).
    pub estimates: BTreeMap<usize, Position>,
    /// Ledger size at the end of each round, after genesis.
    pub ledger_len_per_round: Vec<usize>,
}

pub fn run_localization(config: &SimConfig) -> Result<RunResult, SimError> {
    Ok(run_simulation(config)?.result)
}

pub fn run_simulation(config: &SimConfig) -> Result<RunOutcome, SimError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let topology = deploy(config, &mut rng)?;
    let noise_seed: u64 = rng.random();
    run_on_topology(config, topology, noise_seed)
}

/// Runs the protocol on a given deployment. `config` supplies everything but
/// the node layout (its `n_nodes`, rates and `seed` are not consulted).
pub fn run_on_topology(config: &SimConfig, topology: Topology, noise_seed: u64) -> Result<RunOutcome, SimError> {
    let attack = AttackSpec::position_forge(config.error_factor).map_err(ConfigError::from)?;
    let policy = config.policy();
    let secure = config.mode == Mode::Secure;
    let order = topology.id_order();

    let claimed = |idx: usize| {
        let node = topology.node(idx);
        if node.role.is_malicious() {
            attack.forged_position(node.position)
        } else {
            node.position
        }
    };

    let mut anchor_claims = Vec::new();
    for &i in order.iter().filter(|&&i| topology.node(i).role.is_anchor()) {
        let node = topology.node(i);
        anchor_claims.push(
            LocationClaim::new_signed(&node.key, claimed(i), topology.neighbor_ids(i)).map_err(ChainError::from)?,
        );
    }
    let n_anchor_claims = anchor_claims.len();
    let mut ledger = build_genesis(anchor_claims, secure.then_some(&policy))?;
    let mut rejected_claims = n_anchor_claims - ledger.len();

    let ctx = RangingContext::new(&topology, config.pathloss, noise_seed, config.max_hopcount)
        .with_anchor_hop_size(&topology, &ledger);

    let mut estimates = BTreeMap::new();
    let mut ledger_len_per_round = Vec::new();
    let mut rounds_used = 0;
    for round in 1..=config.max_rounds {
        rounds_used = round;
        let snapshot = ledger.clone();
        let fixes: Vec<(usize, Position)> = order
            .iter()
            .copied()
            .filter(|&i| !topology.node(i).role.is_anchor() && !snapshot.contains(&topology.node(i).id))
            .filter_map(|i| localize_node(i, &topology, &snapshot, &ctx).ok().map(|p| (i, p)))
            .collect();

        let before = ledger.len();
        for (i, estimate) in fixes {
            let node = topology.node(i);
            let position = if node.role.is_malicious() {
                claimed(i)
            } else {
                estimates.insert(i, estimate);
                estimate
            };
            let claim =
                LocationClaim::new_signed(&node.key, position, topology.neighbor_ids(i)).map_err(ChainError::from)?;
            if secure && !verify_position_claim(&claim, &ledger, &policy).accepted {
                rejected_claims += 1;
                continue;
            }
            let block = mine_block(claim, ledger.tip(), config.difficulty)?;
            ledger.append(block, config.difficulty)?;
        }
        ledger_len_per_round.push(ledger.len());
        if ledger.len() == before {
            break;
        }
    }

    let honest_unknown = topology.nodes().iter().filter(|n| !n.role.is_anchor() && !n.role.is_malicious()).count();
    let per_node_error: BTreeMap<NodeId, f64> = estimates
        .iter()
        .map(|(&i, est)| {
            let node = topology.node(i);
            (node.id, euclidean_distance(*est, node.position))
        })
        .collect();
    let localized_count = per_node_error.len();
    let mean_error =
        if localized_count == 0 { f64::NAN } else { per_node_error.values().sum::<f64>() / localized_count as f64 };
    let result = RunResult {
        per_node_error,
        mean_error,
        localized_count,
        unlocalized_count: honest_unknown - localized_count,
        rejected_claims,
        rounds_used,
    };
    Ok(RunOutcome { result, topology, ledger, estimates, ledger_len_per_round })
}
