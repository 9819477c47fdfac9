//! Anchor sets and signed latent arithmetic (`A − B + C` over set means).

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{LatentSpace, LatentVector};

/// Named, attribute-tagged group of exemplar latents.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    name: String,
    tags: BTreeSet<String>,
    members: Vec<LatentVector>,
}

impl AnchorSet {
    /// Tags are trimmed and lowercased; empty tags are dropped.
    pub fn new<I, S>(name: impl Into<String>, tags: I, members: Vec<LatentVector>) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(Error::invalid("anchor set name must be nonempty"));
        }
        if name.chars().any(char::is_whitespace) || name.starts_with(['+', '-']) {
            return Err(Error::invalid(format!(
                "anchor set name `{name}` may not contain whitespace or start with a sign"
            )));
        }
        let first = members
            .first()
            .ok_or_else(|| Error::invalid(format!("anchor set `{name}` has no members")))?;
        let (dim, space) = (first.dim(), first.space());
        if let Some(bad) = members
            .iter()
            .position(|m| m.dim() != dim || m.space() != space)
        {
            return Err(Error::invalid(format!(
                "anchor set `{name}` member {bad} does not match dim {dim} / space {space}"
            )));
        }
        let tags = tags
            .into_iter()
            .map(|t| t.as_ref().trim().to_lowercase())
            .filter(|t| !t.is_empty())
            .collect();
        Ok(Self {
            name,
            tags,
            members,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tags(&self) -> &BTreeSet<String> {
        &self.tags
    }

    pub fn members(&self) -> &[LatentVector] {
        &self.members
    }

    pub fn dim(&self) -> usize {
        self.members[0].dim()
    }

    pub fn space(&self) -> LatentSpace {
        self.members[0].space()
    }

    pub fn has_all_tags<S: AsRef<str>>(&self, wanted: &[S]) -> bool {
        wanted
            .iter()
            .all(|t| self.tags.contains(&t.as_ref().trim().to_lowercase()))
    }
}

/// Componentwise mean: members are summed in order, then divided by the count.
pub fn average_anchors(set: &AnchorSet) -> LatentVector {
    mean_of(set.members()).expect("AnchorSet is never empty")
}

pub(crate) fn mean_of(members: &[LatentVector]) -> Result<LatentVector> {
    let first = members
        .first()
        .ok_or_else(|| Error::invalid("cannot average an empty set"))?;
    let mut acc = first.values().to_vec();
    for m in &members[1..] {
        if m.dim() != acc.len() {
            return Err(Error::invalid("cannot average vectors of different dims"));
        }
        for (a, x) in acc.iter_mut().zip(m.values()) {
            *a += x;
        }
    }
    let k = members.len() as f64;
    if members.len() > 1 {
        for a in &mut acc {
            *a /= k;
        }
    }
    LatentVector::from_parts(acc, first.space())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

impl Sign {
    pub fn factor(self) -> i64 {
        match self {
            Sign::Plus => 1,
            Sign::Minus => -1,
        }
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sign::Plus => "+",
            Sign::Minus => "-",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArithmeticExpression {
    pub terms: Vec<(Sign, AnchorSet)>,
}

impl ArithmeticExpression {
    pub fn new(terms: Vec<(Sign, AnchorSet)>) -> Result<Self> {
        let first = terms
            .first()
            .ok_or_else(|| Error::invalid("arithmetic expression needs at least one term"))?;
        let dim = first.1.dim();
        if let Some((_, bad)) = terms.iter().find(|(_, s)| s.dim() != dim) {
            return Err(Error::invalid(format!(
                "anchor set `{}` has dim {} but expression dim is {dim}",
                bad.name(),
                bad.dim()
            )));
        }
        Ok(Self { terms })
    }
}

/// `Σ sign · mean(set)`, tagged with the first term's space.
///
/// Terms whose means are bitwise identical are merged before summing, so
/// `+A − B + B` returns `mean(A)` exactly instead of up to rounding.
pub fn evaluate_arithmetic(expr: &ArithmeticExpression) -> Result<LatentVector> {
    let first = expr
        .terms
        .first()
        .ok_or_else(|| Error::invalid("arithmetic expression needs at least one term"))?;
    let dim = first.1.dim();
    let space = first.1.space();

    let mut merged: Vec<(i64, LatentVector)> = Vec::new();
    for (sign, set) in &expr.terms {
        if set.dim() != dim {
            return Err(Error::invalid(format!(
                "anchor set `{}` has dim {} but expression dim is {dim}",
                set.name(),
                set.dim()
            )));
        }
        let mean = average_anchors(set);
        match merged.iter_mut().find(|(_, m)| bitwise_eq(m, &mean)) {
            Some((coef, _)) => *coef += sign.factor(),
            None => merged.push((sign.factor(), mean)),
        }
    }

    let mut acc: Option<Vec<f64>> = None;
    for (coef, mean) in merged.iter().filter(|(c, _)| *c != 0) {
        let c = *coef as f64;
        match acc.as_mut() {
            None => acc = Some(mean.values().iter().map(|x| scale(*x, c)).collect()),
            Some(acc) => {
                for (a, x) in acc.iter_mut().zip(mean.values()) {
                    *a += scale(*x, c);
                }
            }
        }
    }
    LatentVector::from_parts(acc.unwrap_or_else(|| vec![0.0; dim]), space)
}

fn scale(x: f64, c: f64) -> f64 {
    if c == 1.0 {
        x
    } else if c == -1.0 {
        -x
    } else {
        x * c
    }
}

fn bitwise_eq(a: &LatentVector, b: &LatentVector) -> bool {
    a.dim() == b.dim()
        && a.values()
            .iter()
            .zip(b.values())
            .all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Parse `+smiling_woman -neutral_woman +neutral_man`. The first term's
/// leading `+` is optional; later terms must carry a sign.
pub fn parse_expression(src: &str) -> Result<Vec<(Sign, String)>> {
    let mut out = Vec::new();
    for (i, tok) in src.split_whitespace().enumerate() {
        let (sign, name) = if let Some(rest) = tok.strip_prefix('+') {
            (Sign::Plus, rest)
        } else if let Some(rest) = tok.strip_prefix('-') {
            (Sign::Minus, rest)
        } else if i == 0 {
            (Sign::Plus, tok)
        } else {
            return Err(Error::invalid(format!(
                "term `{tok}` needs a leading + or -"
            )));
        };
        if name.is_empty() {
            return Err(Error::invalid(format!("term {} has no anchor name", i + 1)));
        }
        out.push((sign, name.to_string()));
    }
    if out.is_empty() {
        return Err(Error::invalid("empty arithmetic expression"));
    }
    Ok(out)
}

pub fn format_expression(terms: &[(Sign, String)]) -> String {
    terms
        .iter()
        .map(|(s, n)| format!("{s}{n}"))
        .collect::<Vec<_>>()
        .join(" ")
}
