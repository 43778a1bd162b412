//! Sparse chaos-expansion vectors and the Wick algebra.
//!
//! A random variable is represented as `F = Σ_α f_α H_α` with finitely
//! many nonzero coefficients, where `H_α(z) = Π_j h_{α_j}(z_j)` is the
//! Hermite basis over independent standard Gaussian coordinates. The
//! module provides:
//!
//! * the weighted norm `‖F‖_k = (Σ (α!)² f_α² (2N)^{kα})^{1/2}` and the
//!   dual norm `‖G‖'_k = (Σ g_α² (2N)^{−kα})^{1/2}` (the asymmetric
//!   factorial convention is deliberate and load-bearing);
//! * the pairing `⟨G, F⟩ = Σ_α α! f_α g_α` with
//!   `|⟨G, F⟩| ≤ ‖G‖'_k · ‖F‖_k`;
//! * the Wick product `H_α ◊ H_β = H_{α+β}` extended bilinearly, the
//!   Wick exponential `exp^◊(F) = Σ F^{◊n}/n!`, and the continuity
//!   constant `A(c)` of Våge's inequality
//!   `‖h ◊ u‖'_k ≤ A(k−l) ‖h‖'_l ‖u‖'_k`;
//! * pointwise evaluation of a realization given explicit Gaussian
//!   coordinates.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::hermite::hermite_poly;
use crate::multi_index::MultiIndex;
use crate::quadrature::zeta;
use crate::{Error, Result};

/// Order/length box within which a chaos vector is exact.
///
/// A vector obtained by truncating an infinite expansion carries the
/// box inside which its coefficients agree with the full object.
/// Products propagate the box conservatively instead of clipping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Truncation {
    pub max_order: u32,
    pub max_length: u32,
}

impl Truncation {
    pub fn new(max_order: u32, max_length: u32) -> Self {
        Truncation {
            max_order,
            max_length,
        }
    }

    /// Envelope of two boxes (used by addition).
    fn union(self, other: Self) -> Self {
        Truncation {
            max_order: self.max_order.max(other.max_order),
            max_length: self.max_length.max(other.max_length),
        }
    }

    /// Componentwise sum (used by the Wick product; never clips).
    fn sum(self, other: Self) -> Self {
        Truncation {
            max_order: self.max_order.saturating_add(other.max_order),
            max_length: self.max_length.saturating_add(other.max_length),
        }
    }

    fn contains(&self, alpha: &MultiIndex) -> bool {
        alpha.order() <= self.max_order && alpha.max_position() <= self.max_length
    }
}

/// Guard against runaway Wick products: a single product may not
/// perform more than this many coefficient multiplications.
pub const WICK_WORK_CAP: u64 = 200_000_000;

/// Sparse chaos vector: canonicalized coefficient list plus the
/// truncation box within which it is exact.
///
/// Terms are kept sorted in the canonical multi-index order with no
/// zero coefficients, so equality, serialization and iteration are
/// deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct ChaosVector {
    terms: Vec<(MultiIndex, f64)>,
    truncation: Truncation,
}

impl ChaosVector {
    /// The zero vector.
    pub fn zero() -> Self {
        ChaosVector {
            terms: Vec::new(),
            truncation: Truncation::new(0, 0),
        }
    }

    /// The deterministic constant `c·H_0`.
    pub fn constant(c: f64) -> Self {
        let terms = if c == 0.0 {
            Vec::new()
        } else {
            vec![(MultiIndex::zero(), c)]
        };
        ChaosVector {
            terms,
            truncation: Truncation::new(0, 0),
        }
    }

    /// Zero-mean Gaussian vector `Σ_k coeffs[k−1]·H_{ε^(k)}` over modes
    /// `1..=coeffs.len()`.
    pub fn first_order(coeffs: &[f64]) -> Self {
        let terms = coeffs
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0.0)
            .map(|(i, &c)| (MultiIndex::unit(i as u32 + 1), c))
            .collect();
        ChaosVector {
            terms,
            truncation: Truncation::new(1, coeffs.len() as u32),
        }
    }

    /// Build from arbitrary `(α, coefficient)` pairs; repeated indices
    /// accumulate, zeros are dropped, and every index must fit in the
    /// stated truncation box.
    pub fn from_terms(pairs: Vec<(MultiIndex, f64)>, truncation: Truncation) -> Result<Self> {
        let mut map: HashMap<MultiIndex, f64> = HashMap::with_capacity(pairs.len());
        for (alpha, c) in pairs {
            if !truncation.contains(&alpha) {
                return Err(Error::Parameter(format!(
                    "index {alpha} outside truncation box ({}, {})",
                    truncation.max_order, truncation.max_length
                )));
            }
            *map.entry(alpha).or_insert(0.0) += c;
        }
        Ok(Self::collect_map(map, truncation))
    }

    /// Internal constructor from terms already in canonical order
    /// (deduplicated, zero-free, sorted).
    pub(crate) fn from_sorted_terms(terms: Vec<(MultiIndex, f64)>, truncation: Truncation) -> Self {
        debug_assert!(terms.windows(2).all(|w| w[0].0 < w[1].0));
        debug_assert!(terms.iter().all(|(a, c)| *c != 0.0 && truncation.contains(a)));
        ChaosVector { terms, truncation }
    }

    fn collect_map(map: HashMap<MultiIndex, f64>, truncation: Truncation) -> Self {
        let mut terms: Vec<(MultiIndex, f64)> =
            map.into_iter().filter(|&(_, c)| c != 0.0).collect();
        terms.sort_unstable_by(|a, b| a.0.cmp(&b.0));
        ChaosVector { terms, truncation }
    }

    /// Coefficient list in canonical order.
    pub fn terms(&self) -> &[(MultiIndex, f64)] {
        &self.terms
    }

    /// Exactness box of this vector.
    pub fn truncation(&self) -> Truncation {
        self.truncation
    }

    /// Coefficient of `H_α` (zero when absent).
    pub fn coeff(&self, alpha: &MultiIndex) -> f64 {
        self.terms
            .binary_search_by(|(a, _)| a.cmp(alpha))
            .map(|i| self.terms[i].1)
            .unwrap_or(0.0)
    }

    /// Expectation `E[F]`: the coefficient of `H_0`.
    pub fn mean(&self) -> f64 {
        self.coeff(&MultiIndex::zero())
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// Largest order among stored indices.
    pub fn order(&self) -> u32 {
        self.terms.iter().map(|(a, _)| a.order()).max().unwrap_or(0)
    }

    /// `self + other` (truncation boxes take their envelope).
    pub fn add(&self, other: &ChaosVector) -> ChaosVector {
        self.add_scaled(other, 1.0)
    }

    /// `self − other`.
    pub fn sub(&self, other: &ChaosVector) -> ChaosVector {
        self.add_scaled(other, -1.0)
    }

    /// `self + factor·other` by a sorted merge.
    pub fn add_scaled(&self, other: &ChaosVector, factor: f64) -> ChaosVector {
        let mut terms = Vec::with_capacity(self.terms.len() + other.terms.len());
        let (mut i, mut j) = (0, 0);
        while i < self.terms.len() || j < other.terms.len() {
            let take_left = match (self.terms.get(i), other.terms.get(j)) {
                (Some((a, _)), Some((b, _))) => match a.cmp(b) {
                    std::cmp::Ordering::Less => true,
                    std::cmp::Ordering::Greater => false,
                    std::cmp::Ordering::Equal => {
                        let c = self.terms[i].1 + factor * other.terms[j].1;
                        if c != 0.0 {
                            terms.push((self.terms[i].0.clone(), c));
                        }
                        i += 1;
                        j += 1;
                        continue;
                    }
                },
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (None, None) => break,
            };
            if take_left {
                terms.push(self.terms[i].clone());
                i += 1;
            } else {
                let c = factor * other.terms[j].1;
                if c != 0.0 {
                    terms.push((other.terms[j].0.clone(), c));
                }
                j += 1;
            }
        }
        ChaosVector {
            terms,
            truncation: self.truncation.union(other.truncation),
        }
    }

    /// `factor·self`.
    pub fn scale(&self, factor: f64) -> ChaosVector {
        if factor == 0.0 {
            return ChaosVector {
                terms: Vec::new(),
                truncation: self.truncation,
            };
        }
        ChaosVector {
            terms: self
                .terms
                .iter()
                .map(|(a, c)| (a.clone(), c * factor))
                .collect(),
            truncation: self.truncation,
        }
    }

    /// Linear combination `Σ_i factors[i]·vectors[i]` accumulated in one
    /// pass (cheaper than folding pairwise sums).
    pub fn linear_combination(items: &[(f64, &ChaosVector)]) -> ChaosVector {
        let mut map: HashMap<MultiIndex, f64> = HashMap::new();
        let mut truncation = Truncation::new(0, 0);
        for (factor, v) in items {
            truncation = truncation.union(v.truncation);
            for (a, c) in &v.terms {
                *map.entry(a.clone()).or_insert(0.0) += factor * c;
            }
        }
        Self::collect_map(map, truncation)
    }

    /// Weighted norm `‖F‖_k = (Σ (α!)² f_α² (2N)^{kα})^{1/2}`.
    ///
    /// Accumulated in shifted log space when any term leaves the
    /// comfortable `f64` range, so large `k` cannot overflow silently.
    pub fn norm(&self, k: u32) -> f64 {
        self.weighted_l2(|alpha| 2.0 * alpha.log_factorial() + alpha.log_weight(k as f64))
    }

    /// Natural norm `‖F‖_W = (Σ f_α² α!)^{1/2}` (the `L²` norm of the
    /// realization).
    pub fn natural_norm(&self) -> f64 {
        self.weighted_l2(|alpha| alpha.log_factorial())
    }

    /// Dual norm `‖G‖'_k = (Σ g_α² (2N)^{−kα})^{1/2}`; nonincreasing in
    /// `k`, with no factorial by convention.
    pub fn dual_norm(&self, k: u32) -> f64 {
        self.weighted_l2(|alpha| alpha.log_weight(-(k as f64)))
    }

    fn weighted_l2<W: Fn(&MultiIndex) -> f64>(&self, log_weight: W) -> f64 {
        // log of each squared term: 2 ln|f_α| + log-weight(α).
        let mut plain = 0.0;
        let mut in_range = true;
        let mut max_log = f64::NEG_INFINITY;
        let mut logs = Vec::new();
        for (alpha, c) in &self.terms {
            let lw = log_weight(alpha);
            let l = 2.0 * c.abs().ln() + lw;
            max_log = max_log.max(l);
            logs.push(l);
            if l.abs() > 600.0 {
                in_range = false;
            }
            plain += c * c * lw.exp();
        }
        if self.terms.is_empty() {
            return 0.0;
        }
        if in_range {
            plain.sqrt()
        } else {
            let sum: f64 = logs.iter().map(|l| (l - max_log).exp()).sum();
            (0.5 * max_log).exp() * sum.sqrt()
        }
    }

    /// Duality pairing `⟨self, F⟩ = Σ_α α! f_α g_α`.
    pub fn pairing(&self, other: &ChaosVector) -> f64 {
        let (mut i, mut j) = (0, 0);
        let mut acc = 0.0;
        while i < self.terms.len() && j < other.terms.len() {
            match self.terms[i].0.cmp(&other.terms[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.terms[i].0.factorial_f64() * self.terms[i].1 * other.terms[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    /// Wick product `(F ◊ G)_γ = Σ_{α+β=γ} f_α g_β`.
    ///
    /// Exact sparse convolution; the result's truncation box is the
    /// componentwise sum of the inputs' boxes (nothing is dropped).
    /// Errors when the product would exceed [`WICK_WORK_CAP`]
    /// coefficient multiplications.
    pub fn wick(&self, other: &ChaosVector) -> Result<ChaosVector> {
        let work = self.terms.len() as u64 * other.terms.len() as u64;
        if work > WICK_WORK_CAP {
            return Err(Error::CapExceeded(format!(
                "wick product of {} × {} terms exceeds the work cap",
                self.terms.len(),
                other.terms.len()
            )));
        }
        let mut map: HashMap<MultiIndex, f64> = HashMap::with_capacity(work as usize);
        for (a, fa) in &self.terms {
            for (b, gb) in &other.terms {
                let gamma = a.add(b);
                *map.entry(gamma).or_insert(0.0) += fa * gb;
            }
        }
        Ok(Self::collect_map(map, self.truncation.sum(other.truncation)))
    }

    /// Wick power `F^{◊n}` by repeated products.
    pub fn wick_power(&self, n: u32) -> Result<ChaosVector> {
        let mut acc = ChaosVector::constant(1.0);
        for _ in 0..n {
            acc = acc.wick(self)?;
        }
        Ok(acc)
    }

    /// Truncated Wick exponential
    /// `exp^◊(F) = e^{f_0} Σ_{n=0}^{terms} (F − f_0)^{◊n} / n!`.
    ///
    /// The deterministic part is factored out as an honest scalar
    /// `e^{f_0}`, so the series applies to the zero-mean part only.
    pub fn wick_exp(&self, terms: u32) -> Result<ChaosVector> {
        let f0 = self.mean();
        let centered = self.add_scaled(&ChaosVector::constant(f0), -1.0);
        let mut acc = ChaosVector::constant(1.0);
        let mut power = ChaosVector::constant(1.0);
        let mut inv_factorial = 1.0;
        for n in 1..=terms {
            power = power.wick(&centered)?;
            inv_factorial /= n as f64;
            acc = acc.add_scaled(&power, inv_factorial);
        }
        Ok(acc.scale(f0.exp()))
    }

    /// Evaluate the realization at explicit Gaussian coordinates:
    /// `Σ_α f_α Π_j h_{α_j}(z_j)`.
    ///
    /// `z` must cover every mode in the support.
    pub fn eval_realization(&self, z: &[f64]) -> Result<f64> {
        let needed = self
            .terms
            .iter()
            .map(|(a, _)| a.max_position())
            .max()
            .unwrap_or(0);
        if (z.len() as u32) < needed {
            return Err(Error::Dimension(format!(
                "realization needs {needed} coordinates, got {}",
                z.len()
            )));
        }
        let mut acc = 0.0;
        for (alpha, c) in &self.terms {
            let mut prod = *c;
            for &(p, v) in alpha.entries() {
                prod *= hermite_poly(v, z[p as usize - 1]);
            }
            acc += prod;
        }
        Ok(acc)
    }
}

/// Continuity constant `A(c)` of the Wick-product bound
/// `‖h ◊ u‖'_k ≤ A(k−l)·‖h‖'_l·‖u‖'_k` for gap `c = k − l ≥ 2`.
///
/// `A(c)² = Σ_α (2N)^{−cα} = Π_{j≥1} (1 − (2j)^{−c})^{−1}`, evaluated
/// through `ln A² = Σ_{n≥1} 2^{−cn} ζ(cn) / n`, whose tail is bounded
/// by a geometric series; the truncation is chosen so the absolute
/// error stays below 1e-10 (far below, in practice).
pub fn wick_bound_constant(gap: u32) -> Result<f64> {
    if gap < 2 {
        return Err(Error::Divergence(format!(
            "the index sum defining A({gap}) diverges; the bound needs a gap ≥ 2"
        )));
    }
    let c = gap as f64;
    let mut log_a2 = 0.0;
    for n in 1..200u32 {
        let s = c * n as f64;
        let term = (-s * std::f64::consts::LN_2).exp() * zeta(s) / n as f64;
        log_a2 += term;
        if term < 1e-19 {
            break;
        }
    }
    Ok((0.5 * log_a2).exp())
}

/// Serialization shape: indices as text plus coefficients, in the
/// canonical order, so serialized artifacts diff cleanly.
#[derive(Serialize, Deserialize)]
struct ChaosVectorRepr {
    max_order: u32,
    max_length: u32,
    terms: Vec<TermRepr>,
}

#[derive(Serialize, Deserialize)]
struct TermRepr {
    alpha: MultiIndex,
    coeff: f64,
}

impl Serialize for ChaosVector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ChaosVectorRepr {
            max_order: self.truncation.max_order,
            max_length: self.truncation.max_length,
            terms: self
                .terms
                .iter()
                .map(|(a, c)| TermRepr {
                    alpha: a.clone(),
                    coeff: *c,
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ChaosVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = ChaosVectorRepr::deserialize(d)?;
        ChaosVector::from_terms(
            repr.terms.into_iter().map(|t| (t.alpha, t.coeff)).collect(),
            Truncation::new(repr.max_order, repr.max_length),
        )
        .map_err(serde::de::Error::custom)
    }
}
