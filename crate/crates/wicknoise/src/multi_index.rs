//! Finitely supported multi-indices and their combinatorial weights.
//!
//! A multi-index `α = (α_1, α_2, …)` is a sequence of nonnegative
//! integers with finitely many nonzero entries. Positions are 1-based
//! to match the weight convention `(2N)^{kα} = Π_j (2j)^{k·α_j}`.
//! Multi-indices label the Hermite chaos basis `H_α` and carry the
//! factorials `α! = Π_j α_j!` appearing in norms and pairings.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{Error, Result};

/// Sparse multi-index: sorted `(position, value)` pairs with
/// `position ≥ 1` and `value ≥ 1`. The zero multi-index has no entries.
///
/// The representation is canonical (no zero values, no trailing
/// anything), so equality and hashing are structural.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct MultiIndex {
    entries: Vec<(u32, u32)>,
}

impl MultiIndex {
    /// The zero multi-index (labels the constant basis element `H_0 = 1`).
    pub fn zero() -> Self {
        MultiIndex::default()
    }

    /// The unit multi-index with a single 1 at `position` (1-based),
    /// labelling the first-order Gaussian basis element for mode `position`.
    pub fn unit(position: u32) -> Self {
        assert!(position >= 1, "multi-index positions are 1-based");
        MultiIndex {
            entries: vec![(position, 1)],
        }
    }

    /// Build from a dense slice `[α_1, α_2, …]`; trailing and interior
    /// zeros are dropped from the stored representation.
    pub fn from_dense(values: &[u32]) -> Self {
        let entries = values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0)
            .map(|(j, &v)| (j as u32 + 1, v))
            .collect();
        MultiIndex { entries }
    }

    /// Build from `(position, value)` pairs in any order.
    ///
    /// Fails if a position is zero, repeated, or a value is zero.
    pub fn from_pairs(pairs: &[(u32, u32)]) -> Result<Self> {
        let mut entries: Vec<(u32, u32)> = pairs.to_vec();
        entries.sort_unstable();
        for window in entries.windows(2) {
            if window[0].0 == window[1].0 {
                return Err(Error::Parameter(format!(
                    "repeated multi-index position {}",
                    window[0].0
                )));
            }
        }
        if entries.iter().any(|&(p, v)| p == 0 || v == 0) {
            return Err(Error::Parameter(
                "multi-index entries need position ≥ 1 and value ≥ 1".into(),
            ));
        }
        Ok(MultiIndex { entries })
    }

    /// Sparse `(position, value)` view, sorted by position.
    pub fn entries(&self) -> &[(u32, u32)] {
        &self.entries
    }

    /// Dense `[α_1, …, α_L]` view up to the last nonzero position.
    pub fn dense(&self) -> Vec<u32> {
        let mut out = vec![0; self.max_position() as usize];
        for &(p, v) in &self.entries {
            out[p as usize - 1] = v;
        }
        out
    }

    /// Value at 1-based `position` (zero when absent).
    pub fn get(&self, position: u32) -> u32 {
        self.entries
            .binary_search_by_key(&position, |&(p, _)| p)
            .map(|i| self.entries[i].1)
            .unwrap_or(0)
    }

    /// Order `|α| = Σ_j α_j`.
    pub fn order(&self) -> u32 {
        self.entries.iter().map(|&(_, v)| v).sum()
    }

    /// Length of the index: the last position with a nonzero entry
    /// (zero for the zero index).
    pub fn max_position(&self) -> u32 {
        self.entries.last().map(|&(p, _)| p).unwrap_or(0)
    }

    /// True for the zero multi-index.
    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    /// For a first-order index `ε^(k)` returns `k`.
    pub fn as_unit(&self) -> Option<u32> {
        match self.entries.as_slice() {
            [(p, 1)] => Some(*p),
            _ => None,
        }
    }

    /// Exact factorial `α! = Π_j α_j!` in 128-bit arithmetic.
    ///
    /// Errors instead of wrapping when the product exceeds `u128`
    /// (first reachable around a single entry of 35).
    pub fn factorial(&self) -> Result<u128> {
        let mut acc: u128 = 1;
        for &(_, v) in &self.entries {
            for f in 2..=v as u128 {
                acc = acc.checked_mul(f).ok_or_else(|| {
                    Error::Overflow(format!("factorial of multi-index {self} exceeds u128"))
                })?;
            }
        }
        Ok(acc)
    }

    /// `α!` as a float, via the exact integer value when representable
    /// and log-space otherwise.
    pub fn factorial_f64(&self) -> f64 {
        match self.factorial() {
            Ok(v) => v as f64,
            Err(_) => self.log_factorial().exp(),
        }
    }

    /// `ln(α!)`.
    pub fn log_factorial(&self) -> f64 {
        self.entries
            .iter()
            .map(|&(_, v)| statrs::function::gamma::ln_gamma(v as f64 + 1.0))
            .sum()
    }

    /// Weight `(2N)^{kα} = Π_j (2j)^{k·α_j}` for real exponent `k`.
    ///
    /// Computed in log space so large orders and exponents degrade to
    /// `+∞`/`0` gracefully instead of overflowing mid-product.
    pub fn weight(&self, k: f64) -> f64 {
        self.log_weight(k).exp()
    }

    /// `ln` of [`MultiIndex::weight`].
    pub fn log_weight(&self, k: f64) -> f64 {
        k * self
            .entries
            .iter()
            .map(|&(p, v)| v as f64 * (2.0 * p as f64).ln())
            .sum::<f64>()
    }

    /// Componentwise sum `α + β` (the index of `H_α ◊ H_β`).
    pub fn add(&self, other: &MultiIndex) -> MultiIndex {
        let mut entries = Vec::with_capacity(self.entries.len() + other.entries.len());
        let (mut i, mut j) = (0, 0);
        while i < self.entries.len() || j < other.entries.len() {
            let a = self.entries.get(i).copied();
            let b = other.entries.get(j).copied();
            match (a, b) {
                (Some((pa, va)), Some((pb, vb))) => match pa.cmp(&pb) {
                    Ordering::Less => {
                        entries.push((pa, va));
                        i += 1;
                    }
                    Ordering::Greater => {
                        entries.push((pb, vb));
                        j += 1;
                    }
                    Ordering::Equal => {
                        entries.push((pa, va + vb));
                        i += 1;
                        j += 1;
                    }
                },
                (Some(e), None) => {
                    entries.push(e);
                    i += 1;
                }
                (None, Some(e)) => {
                    entries.push(e);
                    j += 1;
                }
                (None, None) => unreachable!(),
            }
        }
        MultiIndex { entries }
    }
}

/// Canonical basis order: by `|α|` first, then position-by-position
/// with the larger leading entry first, so that for instance the
/// order-2 block over two modes reads `(2), (1,1), (0,2)`.
impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        self.order().cmp(&other.order()).then_with(|| {
            let (mut i, mut j) = (0, 0);
            loop {
                let a = self.entries.get(i).copied();
                let b = other.entries.get(j).copied();
                match (a, b) {
                    (None, None) => return Ordering::Equal,
                    // Remaining entries on one side only: the other side
                    // is zero there, and a larger value sorts earlier.
                    (Some(_), None) => return Ordering::Less,
                    (None, Some(_)) => return Ordering::Greater,
                    (Some((pa, va)), Some((pb, vb))) => match pa.cmp(&pb) {
                        Ordering::Less => return Ordering::Less,
                        Ordering::Greater => return Ordering::Greater,
                        Ordering::Equal => {
                            if va != vb {
                                return vb.cmp(&va);
                            }
                            i += 1;
                            j += 1;
                        }
                    },
                }
            }
        })
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Text form: dense comma-separated entries, e.g. `1,0,3`; the zero
/// index prints as `0`.
impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let dense = self.dense();
        let parts: Vec<String> = dense.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}

impl FromStr for MultiIndex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let values: Vec<u32> = s
            .split(',')
            .map(|part| {
                part.trim()
                    .parse::<u32>()
                    .map_err(|_| Error::Parameter(format!("bad multi-index component {part:?}")))
            })
            .collect::<Result<_>>()?;
        Ok(MultiIndex::from_dense(&values))
    }
}

impl Serialize for MultiIndex {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for MultiIndex {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(D::Error::custom)
    }
}

/// Number of multi-indices with `|α| ≤ max_order` and length
/// `≤ max_length`, i.e. `C(max_order + max_length, max_length)`.
pub fn enumeration_count(max_order: u32, max_length: u32) -> Result<u128> {
    let mut acc: u128 = 1;
    let n = max_order as u128 + max_length as u128;
    for i in 1..=max_length.min(max_order) as u128 {
        acc = acc
            .checked_mul(n + 1 - i)
            .ok_or_else(|| Error::Overflow("enumeration count exceeds u128".into()))?
            / i;
    }
    Ok(acc)
}

/// All multi-indices with `|α| ≤ max_order` and length `≤ max_length`,
/// in the canonical [`Ord`] order.
///
/// Errors when the count would exceed `cap` (combinatorial-explosion
/// guard; the count is computed in closed form before any allocation).
pub fn enumerate(max_order: u32, max_length: u32, cap: usize) -> Result<Vec<MultiIndex>> {
    if max_length == 0 {
        return Err(Error::Parameter("max_length must be ≥ 1".into()));
    }
    let count = enumeration_count(max_order, max_length)?;
    if count > cap as u128 {
        return Err(Error::CapExceeded(format!(
            "enumeration of {count} multi-indices exceeds cap {cap}"
        )));
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut dense = vec![0u32; max_length as usize];
    fill(&mut out, &mut dense, 0, max_order);
    out.sort_unstable();
    Ok(out)
}

fn fill(out: &mut Vec<MultiIndex>, dense: &mut Vec<u32>, position: usize, budget: u32) {
    if position == dense.len() {
        out.push(MultiIndex::from_dense(dense));
        return;
    }
    for v in 0..=budget {
        dense[position] = v;
        fill(out, dense, position + 1, budget - v);
    }
    dense[position] = 0;
}
