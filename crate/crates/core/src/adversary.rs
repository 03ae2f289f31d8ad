//! Position-forging adversaries and their placement in a deployment.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::Position;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttackError {
    #[error("error factor must be positive, finite and different from 1 (got {0})")]
    InvalidFactor(f64),
    #[error("rate must lie in [0, 1] (got {0})")]
    InvalidRate(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Behavior {
    Honest,
    Malicious,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttackKind {
    PositionForge,
}

/// How a malicious node lies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackSpec {
    kind: AttackKind,
    error_factor: f64,
}

impl AttackSpec {
    pub const DEFAULT_ERROR_FACTOR: f64 = 1.5;

    pub fn position_forge(error_factor: f64) -> Result<Self, AttackError> {
        if !(error_factor > 0.0 && error_factor.is_finite()) || error_factor == 1.0 {
            return Err(AttackError::InvalidFactor(error_factor));
        }
        Ok(AttackSpec { kind: AttackKind::PositionForge, error_factor })
    }

    pub fn kind(&self) -> AttackKind {
        self.kind
    }

    pub fn error_factor(&self) -> f64 {
        self.error_factor
    }

    /// The position a malicious node reports instead of `true_pos`.
    pub fn forged_position(&self, true_pos: Position) -> Position {
        match self.kind {
            AttackKind::PositionForge => falsify_position(true_pos, self.error_factor),
        }
    }
}

impl Default for AttackSpec {
    fn default() -> Self {
        AttackSpec { kind: AttackKind::PositionForge, error_factor: Self::DEFAULT_ERROR_FACTOR }
    }
}

/// Scales both coordinates by `factor`.
pub fn falsify_position(true_pos: Position, factor: f64) -> Position {
    Position::new(factor * true_pos.x, factor * true_pos.y)
}

/// `ceil(rate * n)`, tolerant of the representation error in `rate`
/// (0.7 * 100 must give 70, not 71).
pub fn rate_count(n: usize, rate: f64) -> usize {
    let raw = rate * n as f64;
    let nearest = raw.round();
    let count = if (raw - nearest).abs() < 1e-9 { nearest } else { raw.ceil() };
    (count as usize).min(n)
}

/// Marks exactly `ceil(rate * n)` nodes malicious, chosen uniformly without replacement.
pub fn assign_behaviors<R: Rng + ?Sized>(
    n_nodes: usize,
    malicious_rate: f64,
    rng: &mut R,
) -> Result<Vec<Behavior>, AttackError> {
    if !(0.0..=1.0).contains(&malicious_rate) {
        return Err(AttackError::InvalidRate(malicious_rate));
    }
    let mut out = vec![Behavior::Honest; n_nodes];
    for i in index::sample(rng, n_nodes, rate_count(n_nodes, malicious_rate)) {
        out[i] = Behavior::Malicious;
    }
    Ok(out)
}
