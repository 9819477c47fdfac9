//! Latent traversals between two endpoints.
//!
//! Four schemes: straight-line interpolation, two-sided extrapolation,
//! the cosine-offset circular scheme that overwrites the first two
//! components with semicircle coordinates, and great-circle slerp.
//! The extrapolation and circular schemes follow the original Torch
//! listings step for step, including their quirks (the first
//! extrapolated point is `b` itself; the circular scheme's blend
//! coefficient leaves the segment).

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{LatentSpace, LatentVector};

/// Default number of points, matching the original experiments.
pub const DEFAULT_STEPS: usize = 16;

/// Below this great-circle angle slerp degenerates to lerp.
pub const SLERP_MIN_ANGLE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraversalKind {
    Linear,
    ExtrapolateTwoSided,
    CircularPaper,
    Slerp,
}

impl TraversalKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TraversalKind::Linear => "linear",
            TraversalKind::ExtrapolateTwoSided => "extrapolate_two_sided",
            TraversalKind::CircularPaper => "circular_paper",
            TraversalKind::Slerp => "slerp",
        }
    }
}

impl fmt::Display for TraversalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TraversalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" | "lerp" | "interpolate" => Ok(TraversalKind::Linear),
            "extrapolate_two_sided" | "extrapolate" => Ok(TraversalKind::ExtrapolateTwoSided),
            "circular_paper" | "circular" | "circle" => Ok(TraversalKind::CircularPaper),
            "slerp" => Ok(TraversalKind::Slerp),
            other => Err(Error::invalid(format!("unknown traversal kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraversalSequence {
    pub kind: TraversalKind,
    pub endpoints: (LatentVector, LatentVector),
    pub points: Vec<LatentVector>,
}

impl TraversalSequence {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Dispatch on `kind`. `radius` only affects [`TraversalKind::CircularPaper`].
pub fn traverse(
    kind: TraversalKind,
    a: &LatentVector,
    b: &LatentVector,
    n: usize,
    radius: f64,
) -> Result<TraversalSequence> {
    match kind {
        TraversalKind::Linear => lerp(a, b, n),
        TraversalKind::ExtrapolateTwoSided => extrapolate_two_sided(a, b, n),
        TraversalKind::CircularPaper => circular_paper_with_radius(a, b, n, radius),
        TraversalKind::Slerp => slerp(a, b, n),
    }
}

fn check_pair(a: &LatentVector, b: &LatentVector, n: usize) -> Result<LatentSpace> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!(
            "endpoint dims differ ({} vs {})",
            a.dim(),
            b.dim()
        )));
    }
    if a.space() != b.space() {
        return Err(Error::invalid(format!(
            "endpoint spaces differ ({} vs {})",
            a.space(),
            b.space()
        )));
    }
    if n < 2 {
        return Err(Error::invalid(format!("traversal needs n >= 2 (got {n})")));
    }
    Ok(a.space())
}

/// `base + t·(toward − base)` componentwise, i.e. `base·(1 − t) + toward·t`.
/// On a degenerate segment every point is `base` bitwise.
fn along(base: &LatentVector, toward: &LatentVector, t: f64) -> Vec<f64> {
    base.values()
        .iter()
        .zip(toward.values())
        .map(|(x, y)| x + t * (y - x))
        .collect()
}

/// `a·ca + b·cb` componentwise.
fn blend(a: &LatentVector, ca: f64, b: &LatentVector, cb: f64) -> Vec<f64> {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| x * ca + y * cb)
        .collect()
}

fn sequence(
    kind: TraversalKind,
    a: &LatentVector,
    b: &LatentVector,
    points: Vec<Vec<f64>>,
    space: LatentSpace,
) -> Result<TraversalSequence> {
    let points = points
        .into_iter()
        .map(|v| LatentVector::from_parts(v, space))
        .collect::<Result<Vec<_>>>()?;
    Ok(TraversalSequence {
        kind,
        endpoints: (a.clone(), b.clone()),
        points,
    })
}

/// Evenly spaced points on the segment from `a` to `b`, endpoints included.
pub fn lerp(a: &LatentVector, b: &LatentVector, n: usize) -> Result<TraversalSequence> {
    let space = check_pair(a, b, n)?;
    let last = (n - 1) as f64;
    let mut pts: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let t = i as f64 / last;
            along(a, b, t)
        })
        .collect();
    // endpoints are copied verbatim so signed zeros survive
    pts[0] = a.values().to_vec();
    pts[n - 1] = b.values().to_vec();
    sequence(TraversalKind::Linear, a, b, pts, space)
}

/// Two-sided extrapolation. The first half of the schedule walks from `b`
/// away from `a`; the second half starts past `a` and keeps going.
///
/// `n` must be even so both halves have the same length.
pub fn extrapolate_two_sided(
    a: &LatentVector,
    b: &LatentVector,
    n: usize,
) -> Result<TraversalSequence> {
    let space = check_pair(a, b, n)?;
    if n % 2 == 1 {
        return Err(Error::invalid(format!(
            "two-sided extrapolation needs an even n (got {n})"
        )));
    }
    let pts = extrapolation_coefficients(n)
        .into_iter()
        .map(|el| along(b, a, el))
        .collect();
    sequence(TraversalKind::ExtrapolateTwoSided, a, b, pts, space)
}

/// Coefficient on `a` for each extrapolated point (`b` gets `1 - el`).
pub fn extrapolation_coefficients(n: usize) -> Vec<f64> {
    let last = (n - 1) as f64;
    (0..n)
        .map(|i| {
            let line = i as f64 / last;
            if i < n / 2 {
                -line
            } else {
                1.0 + line
            }
        })
        .collect()
}

/// Circular scheme with unit radius.
pub fn circular_paper(a: &LatentVector, b: &LatentVector, n: usize) -> Result<TraversalSequence> {
    circular_paper_with_radius(a, b, n, 1.0)
}

/// Circular scheme: angle θ sweeps [0, π] over `n` points. For each θ,
/// `x = mid[0] + r·cos θ`, `y = mid[1] + r·sin θ`, the point is
/// `a·(1 − x) + b·x` with components 0 and 1 then replaced by `x` and `y`.
/// `mid` is the endpoint midpoint. Unit radius reproduces the original
/// experiments exactly.
pub fn circular_paper_with_radius(
    a: &LatentVector,
    b: &LatentVector,
    n: usize,
    radius: f64,
) -> Result<TraversalSequence> {
    let space = check_pair(a, b, n)?;
    if a.dim() < 2 {
        return Err(Error::invalid(
            "circular traversal writes components 0 and 1; dim must be >= 2",
        ));
    }
    if !radius.is_finite() || radius <= 0.0 {
        return Err(Error::invalid(format!(
            "radius must be positive (got {radius})"
        )));
    }
    let rx = (a.values()[0] + b.values()[0]) / 2.0;
    let ry = (a.values()[1] + b.values()[1]) / 2.0;
    let last = (n - 1) as f64;
    let pts = (0..n)
        .map(|i| {
            let theta = PI * (i as f64 / last);
            let x = rx + radius * theta.cos();
            let y = ry + radius * theta.sin();
            let mut p = along(a, b, x);
            p[0] = x;
            p[1] = y;
            p
        })
        .collect();
    sequence(TraversalKind::CircularPaper, a, b, pts, space)
}

/// Spherical linear interpolation along the great circle through `a` and `b`.
pub fn slerp(a: &LatentVector, b: &LatentVector, n: usize) -> Result<TraversalSequence> {
    let space = check_pair(a, b, n)?;
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("slerp endpoints must have nonzero norm"));
    }
    // 2·atan2(|â − b̂|, |â + b̂|) stays accurate near 0 and π, unlike acos
    let (mut diff, mut sum) = (0.0, 0.0);
    for (x, y) in a.values().iter().zip(b.values()) {
        let (u, v) = (x / na, y / nb);
        diff += (u - v) * (u - v);
        sum += (u + v) * (u + v);
    }
    let omega = 2.0 * diff.sqrt().atan2(sum.sqrt());
    if PI - omega < SLERP_MIN_ANGLE {
        return Err(Error::DegenerateGeometry(format!(
            "slerp endpoints are antiparallel (angle {omega})"
        )));
    }
    if omega < SLERP_MIN_ANGLE {
        let mut seq = lerp(a, b, n)?;
        seq.kind = TraversalKind::Slerp;
        return Ok(seq);
    }
    let sin_omega = omega.sin();
    let last = (n - 1) as f64;
    let mut pts: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let t = i as f64 / last;
            let ca = ((1.0 - t) * omega).sin() / sin_omega;
            let cb = (t * omega).sin() / sin_omega;
            blend(a, ca, b, cb)
        })
        .collect();
    pts[0] = a.values().to_vec();
    pts[n - 1] = b.values().to_vec();
    sequence(TraversalKind::Slerp, a, b, pts, space)
}
