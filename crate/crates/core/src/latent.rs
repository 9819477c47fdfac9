//! Latent vectors, seeded sampling, and the line-oriented text encoding.
//!
//! A record looks like `3 uniform_cube 0.25 -1 0.5`: the dimension, the
//! sampling space, then the components. Components use Rust's shortest
//! round-trip float formatting, so parsing a record back is bitwise exact.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distribution a latent vector was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LatentSpace {
    /// Independent uniform components on [-1, 1] (DCGAN convention).
    #[default]
    UniformCube,
    /// Independent standard-normal components (progressive-GAN convention).
    UnitGaussian,
}

impl LatentSpace {
    pub fn as_str(self) -> &'static str {
        match self {
            LatentSpace::UniformCube => "uniform_cube",
            LatentSpace::UnitGaussian => "unit_gaussian",
        }
    }
}

impl fmt::Display for LatentSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LatentSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform_cube" => Ok(LatentSpace::UniformCube),
            "unit_gaussian" => Ok(LatentSpace::UnitGaussian),
            other => Err(Error::invalid(format!("unknown latent space `{other}`"))),
        }
    }
}

/// A point in generator input space.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVector {
    values: Vec<f64>,
    space: LatentSpace,
}

impl LatentVector {
    pub fn new(values: Vec<f64>, space: LatentSpace) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("latent vector must have dim >= 1"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "latent component {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Self { values, space })
    }

    /// Constructor for values produced by internal arithmetic on finite inputs.
    pub(crate) fn from_parts(values: Vec<f64>, space: LatentSpace) -> Result<Self> {
        Self::new(values, space).map_err(|e| match e {
            Error::InvalidArgument(m) => Error::Numeric {
                layer: None,
                message: m,
            },
            other => other,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn space(&self) -> LatentSpace {
        self.space
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Serialize as a single text record (no trailing newline).
    pub fn to_line(&self) -> String {
        let mut out = format!("{} {}", self.dim(), self.space);
        for v in &self.values {
            out.push(' ');
            out.push_str(&v.to_string());
        }
        out
    }

    pub fn from_line(line: &str) -> Result<Self> {
        let mut fields = line.split_whitespace();
        let dim: usize = fields
            .next()
            .ok_or_else(|| Error::Format("empty latent record".into()))?
            .parse()
            .map_err(|e| Error::Format(format!("bad latent dim: {e}")))?;
        let space: LatentSpace = fields
            .next()
            .ok_or_else(|| Error::Format("latent record missing space".into()))?
            .parse()
            .map_err(|e: Error| Error::Format(e.to_string()))?;
        let values = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| Error::Format(format!("bad latent component `{f}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if values.len() != dim {
            return Err(Error::Format(format!(
                "latent record declares dim {dim} but has {} components",
                values.len()
            )));
        }
        Self::new(values, space).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Parse every non-blank line of `text` as a latent record.
pub fn parse_latents(text: &str) -> Result<Vec<LatentVector>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(LatentVector::from_line)
        .collect()
}

/// One record per line, newline terminated.
pub fn format_latents(latents: &[LatentVector]) -> String {
    let mut out = String::new();
    for z in latents {
        out.push_str(&z.to_line());
        out.push('\n');
    }
    out
}

/// Draw `count` latent vectors of dimension `dim`, deterministically from `seed`.
pub fn sample_latents(
    space: LatentSpace,
    dim: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<LatentVector>> {
    if dim < 1 || count < 1 {
        return Err(Error::invalid(format!(
            "sample_latents needs dim >= 1 and count >= 1 (got dim={dim}, count={count})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = (0..count)
        .map(|_| {
            let values: Vec<f64> = match space {
                LatentSpace::UniformCube => {
                    (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect()
                }
                LatentSpace::UnitGaussian => (0..dim).map(|_| rng.sample(StandardNormal)).collect(),
            };
            LatentVector { values, space }
        })
        .collect();
    Ok(out)
}
