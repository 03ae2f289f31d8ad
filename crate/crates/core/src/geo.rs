//! Planar geometry and radio-ranging math.
//!
//! Covers the log-distance path-loss model used to turn received signal
//! strength into a range, the DV-Hop hop-size estimate for nodes that are
//! not in direct radio contact, and a least-squares trilateration solver.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("distance must be strictly positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("invalid path-loss parameters: {0}")]
    InvalidPathLoss(&'static str),
    #[error("no mutually reachable anchor pair")]
    NoReachableAnchorPair,
    #[error("average hop distance must be positive and finite, got {0}")]
    InvalidHopDistance(f64),
    #[error("hop count must be at least 1")]
    ZeroHops,
    #[error("trilateration needs at least 3 references, got {0}")]
    TooFewReferences(usize),
    #[error("reference geometry is singular (collinear references)")]
    SingularGeometry,
}

/// A point in the deployment plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const ORIGIN: Position = Position { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance_to(&self, other: &Position) -> f64 {
        euclidean_distance(*self, *other)
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

pub fn euclidean_distance(a: Position, b: Position) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Log-distance path-loss model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathLossParams {
    /// Transmit power, dBm.
    pub p_tr: f64,
    /// Loss at the reference distance, dB.
    pub p_loss_d0: f64,
    /// Path-loss exponent.
    pub tau: f64,
    /// Reference distance, meters.
    pub d0: f64,
    /// Shadowing standard deviation, dB.
    pub sigma: f64,
}

impl Default for PathLossParams {
    fn default() -> Self {
        PathLossParams { p_tr: 0.0, p_loss_d0: 40.0, tau: 3.0, d0: 1.0, sigma: 2.0 }
    }
}

impl PathLossParams {
    pub fn validate(&self) -> Result<(), GeoError> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(GeoError::InvalidPathLoss("tau must be > 0"));
        }
        if !(self.d0 > 0.0 && self.d0.is_finite()) {
            return Err(GeoError::InvalidPathLoss("d0 must be > 0"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(GeoError::InvalidPathLoss("sigma must be >= 0"));
        }
        if !self.p_tr.is_finite() || !self.p_loss_d0.is_finite() {
            return Err(GeoError::InvalidPathLoss("powers must be finite"));
        }
        Ok(())
    }

    /// Received power at the reference distance with no shadowing.
    pub fn reference_rss(&self) -> f64 {
        self.p_tr - self.p_loss_d0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RangeMethod {
    Rssi,
    DvHop,
}

/// A range estimate to some reference node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceEstimate {
    pub meters: f64,
    pub method: RangeMethod,
    pub hops: u32,
}

/// Received signal strength (dBm) at distance `d` with additive shadowing `noise` (dB).
pub fn rss_at_distance(d: f64, params: &PathLossParams, noise: f64) -> Result<f64, GeoError> {
    if !(d > 0.0) {
        return Err(GeoError::NonPositiveDistance(d));
    }
    Ok(params.reference_rss() - 10.0 * params.tau * (d / params.d0).log10() + noise)
}

/// Inverts the noise-free path-loss model. Every finite RSS maps to a positive distance.
pub fn distance_from_rss(rss: f64, params: &PathLossParams) -> f64 {
    params.d0 * 10f64.powf((params.reference_rss() - rss) / (10.0 * params.tau))
}

/// Simulates one RSSI ranging measurement: shadowed RSS drawn at the true
/// distance, then inverted through the noise-free model.
pub fn measure_distance_rssi<R: Rng + ?Sized>(
    true_d: f64,
    params: &PathLossParams,
    rng: &mut R,
) -> Result<DistanceEstimate, GeoError> {
    let noise = if params.sigma > 0.0 {
        Normal::new(0.0, params.sigma).map_err(|_| GeoError::InvalidPathLoss("sigma must be >= 0"))?.sample(rng)
    } else {
        0.0
    };
    let rss = rss_at_distance(true_d, params, noise)?;
    Ok(DistanceEstimate { meters: distance_from_rss(rss, params), method: RangeMethod::Rssi, hops: 1 })
}

/// Average distance covered by one hop, from anchor pairs with known hop counts.
///
/// `hops(i, j)` returns the hop count between anchors `i` and `j`, or `None`
/// when they cannot reach each other. Only pairs `i < j` are queried.
pub fn dvhop_avg_hop_distance<F>(anchors: &[Position], hops: F) -> Result<f64, GeoError>
where
    F: Fn(usize, usize) -> Option<u32>,
{
    let mut dist_sum = 0.0;
    let mut hop_sum: u64 = 0;
    for i in 0..anchors.len() {
        for j in (i + 1)..anchors.len() {
            if let Some(h) = hops(i, j).filter(|&h| h > 0) {
                dist_sum += euclidean_distance(anchors[i], anchors[j]);
                hop_sum += u64::from(h);
            }
        }
    }
    if hop_sum == 0 {
        return Err(GeoError::NoReachableAnchorPair);
    }
    Ok(dist_sum / hop_sum as f64)
}

pub fn dvhop_distance(avg_hop: f64, hops: u32) -> Result<DistanceEstimate, GeoError> {
    if !(avg_hop > 0.0 && avg_hop.is_finite()) {
        return Err(GeoError::InvalidHopDistance(avg_hop));
    }
    if hops < 1 {
        return Err(GeoError::ZeroHops);
    }
    Ok(DistanceEstimate { meters: avg_hop * f64::from(hops), method: RangeMethod::DvHop, hops })
}

const SINGULAR_REL_TOL: f64 = 1e-9;
const REFINE_MAX_ITERS: usize = 50;
const REFINE_STEP_TOL: f64 = 1e-10;

/// Least-squares position fix from `(reference position, range)` pairs.
///
/// The circle equations are linearized against the reference with the
/// smallest range and the resulting overdetermined system is solved through
/// its normal equations. That closed-form fix seeds a Gauss-Newton pass on
/// the range residuals `|p - a_i| - d_i`; the refinement leaves an exact fix
/// untouched and moves a noisy one to the range-space least-squares optimum.
pub fn trilaterate(references: &[(Position, f64)]) -> Result<Position, GeoError> {
    let linear = trilaterate_linear(references)?;
    Ok(refine_range_residuals(references, linear))
}

/// The closed-form linearized solution without refinement.
pub fn trilaterate_linear(references: &[(Position, f64)]) -> Result<Position, GeoError> {
    if references.len() < 3 {
        return Err(GeoError::TooFewReferences(references.len()));
    }
    let pivot_idx =
        references.iter().enumerate().min_by(|(_, a), (_, b)| a.1.total_cmp(&b.1)).map(|(i, _)| i).expect("non-empty");
    let (pivot, d_pivot) = references[pivot_idx];

    // Work in coordinates centered on the pivot: circle i becomes
    // 2 u·x_i = |x_i|^2 + d_p^2 - d_i^2.
    let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, (pos, d)) in references.iter().enumerate() {
        if i == pivot_idx {
            continue;
        }
        let rx = 2.0 * (pos.x - pivot.x);
        let ry = 2.0 * (pos.y - pivot.y);
        let rhs = (pos.x - pivot.x).powi(2) + (pos.y - pivot.y).powi(2) + d_pivot * d_pivot - d * d;
        a11 += rx * rx;
        a12 += rx * ry;
        a22 += ry * ry;
        b1 += rx * rhs;
        b2 += ry * rhs;
    }

    let det = a11 * a22 - a12 * a12;
    let row_norms = a11.hypot(a12) * a12.hypot(a22);
    if !(row_norms > 0.0) || det.abs() < SINGULAR_REL_TOL * row_norms {
        return Err(GeoError::SingularGeometry);
    }
    let ux = (a22 * b1 - a12 * b2) / det;
    let uy = (a11 * b2 - a12 * b1) / det;
    Ok(Position::new(pivot.x + ux, pivot.y + uy))
}

fn refine_range_residuals(references: &[(Position, f64)], start: Position) -> Position {
    let cost = |p: Position| -> f64 { references.iter().map(|(a, d)| (euclidean_distance(p, *a) - d).powi(2)).sum() };
    let mut p = start;
    let mut current = cost(p);
    for _ in 0..REFINE_MAX_ITERS {
        let (mut j11, mut j12, mut j22, mut g1, mut g2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (a, d) in references {
            let r = euclidean_distance(p, *a);
            if r < 1e-12 {
                continue;
            }
            let (jx, jy) = ((p.x - a.x) / r, (p.y - a.y) / r);
            let res = r - d;
            j11 += jx * jx;
            j12 += jx * jy;
            j22 += jy * jy;
            g1 += jx * res;
            g2 += jy * res;
        }
        let det = j11 * j22 - j12 * j12;
        if det.abs() < 1e-12 {
            break;
        }
        let dx = -(j22 * g1 - j12 * g2) / det;
        let dy = -(j11 * g2 - j12 * g1) / det;

        // Step halving keeps the iteration monotone in the cost.
        let mut scale = 1.0;
        let mut accepted = None;
        while scale > 1e-6 {
            let cand = Position::new(p.x + scale * dx, p.y + scale * dy);
            let c = cost(cand);
            if c <= current {
                accepted = Some((cand, c));
                break;
            }
            scale *= 0.5;
        }
        let Some((cand, c)) = accepted else { break };
        let step = scale * dx.hypot(dy);
        p = cand;
        current = c;
        if step < REFINE_STEP_TOL {
            break;
        }
    }
    p
}
