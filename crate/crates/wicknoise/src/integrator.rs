//! Wick-Itô integration of chaos-valued integrands against the noise:
//! left-endpoint Riemann sums in exact chaos arithmetic, a fine
//! adaptive reference, and convergence measurement in dual norms.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::chaos::{ChaosVector, Truncation};
use crate::error::{Error, Result};
use crate::process::ProcessModel;

/// Default coefficientwise tolerance of [`reference_integral`].
pub const REFERENCE_TOL: f64 = 1e-10;

/// Number of sample points of the boundedness check that
/// [`convergence_study`] runs on the integrand before trusting its
/// declared dual index.
pub const BOUND_SAMPLES: usize = 64;

/// Mode count up to which the Riemann sum accumulates first-order
/// integrand steps into a dense K×K table instead of sparse products.
const DENSE_MODE_CAP: u32 = 1024;

/// Evaluation budget of the adaptive reference quadrature.
const REFERENCE_EVAL_CAP: u64 = 1_000_000;

/// Panels the reference quadrature starts from before adapting, so a
/// high noise mode cannot alias through the first three-point rule.
const REFERENCE_INITIAL_PANELS: usize = 16;

/// Errors at or below this level are treated as converged when
/// fitting a rate: they sit at the reference quadrature's own noise
/// floor and carry no information about the Riemann sum.
pub const SLOPE_FLOOR: f64 = 10.0 * REFERENCE_TOL;

/// Chaos-valued integrand `t ↦ Y(t)` together with the dual-norm
/// index in which it is declared bounded on the integration interval.
///
/// The declaration is a promise, not a proof; [`convergence_study`]
/// spot-checks it by sampling `‖Y(t)‖'` at the declared index.
#[derive(Clone)]
pub struct IntegrandFn {
    eval: Arc<dyn Fn(f64) -> Result<ChaosVector> + Send + Sync>,
    dual_index: u32,
}

impl IntegrandFn {
    pub fn new<F>(dual_index: u32, eval: F) -> Self
    where
        F: Fn(f64) -> Result<ChaosVector> + Send + Sync + 'static,
    {
        IntegrandFn {
            eval: Arc::new(eval),
            dual_index,
        }
    }

    /// The deterministic integrand `Y ≡ c`.
    pub fn constant(c: f64) -> Self {
        IntegrandFn::new(0, move |_| Ok(ChaosVector::constant(c)))
    }

    /// A fixed chaos vector, independent of time.  The vector may
    /// depend on the future of the noise (say `X(b)`); nothing in the
    /// integral requires adaptedness.
    pub fn frozen(value: ChaosVector, dual_index: u32) -> Self {
        IntegrandFn::new(dual_index, move |_| Ok(value.clone()))
    }

    /// The process itself as integrand, `Y(t) = X(t)`.
    pub fn process(model: &ProcessModel) -> Self {
        let m = model.clone();
        IntegrandFn::new(m.dual_exponent(), move |t| m.x_chaos(t))
    }

    pub fn eval(&self, t: f64) -> Result<ChaosVector> {
        (self.eval)(t)
    }

    /// Dual-norm index in which the integrand claims uniform bounds.
    pub fn dual_index(&self) -> u32 {
        self.dual_index
    }

    /// Sampled sup of `‖Y(t)‖'` at the declared index over `[a, b]`,
    /// evaluated on `samples + 1` evenly spaced points.  A non-finite
    /// norm anywhere is a domain error: the declared index does not
    /// hold and no dual-norm error statement downstream would either.
    pub fn bounded_on(&self, a: f64, b: f64, samples: usize) -> Result<f64> {
        if !(a <= b) || !a.is_finite() || !b.is_finite() {
            return Err(Error::Parameter(format!(
                "boundedness check needs finite a ≤ b, got [{a}, {b}]"
            )));
        }
        let n = samples.max(1);
        let mut sup = 0.0f64;
        for i in 0..=n {
            let t = if i == n {
                b
            } else {
                a + (b - a) * i as f64 / n as f64
            };
            let norm = self.eval(t)?.dual_norm(self.dual_index);
            if !norm.is_finite() {
                return Err(Error::Domain(format!(
                    "integrand dual norm at index {} is not finite near t = {t}",
                    self.dual_index
                )));
            }
            sup = sup.max(norm);
        }
        Ok(sup)
    }
}

impl fmt::Debug for IntegrandFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IntegrandFn")
            .field("dual_index", &self.dual_index)
            .finish_non_exhaustive()
    }
}

/// Evenly spaced breakpoints `a = t_0 < … < t_n = b` with exact
/// endpoints.
pub fn uniform_partition(a: f64, b: f64, n: usize) -> Vec<f64> {
    let mut nodes = Vec::with_capacity(n + 1);
    for i in 0..n {
        nodes.push(a + (b - a) * i as f64 / n as f64);
    }
    nodes.push(b);
    nodes
}

fn check_partition(a: f64, b: f64, partition: &[f64]) -> Result<()> {
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(Error::Parameter(format!(
            "integration needs finite a < b, got [{a}, {b}]"
        )));
    }
    if partition.is_empty() {
        return Err(Error::Parameter("empty partition".into()));
    }
    if partition.len() < 2 {
        return Err(Error::Parameter(
            "a partition needs at least two breakpoints".into(),
        ));
    }
    if partition.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Parameter(
            "partition breakpoints must be strictly increasing".into(),
        ));
    }
    let scale = 1.0 + a.abs().max(b.abs());
    let first = partition[0];
    let last = partition[partition.len() - 1];
    if (first - a).abs() > 1e-12 * scale || (last - b).abs() > 1e-12 * scale {
        return Err(Error::Parameter(format!(
            "partition [{first}, {last}] does not cover [{a}, {b}]"
        )));
    }
    Ok(())
}

/// Left-endpoint Wick-Riemann sum
/// `Σ_j Y(t_j) ◊ (X(t_{j+1}) − X(t_j))` over the given breakpoints.
///
/// First-order integrand values (the common case: constants, the
/// process itself, affine combinations of either) accumulate into a
/// dense mode table, so the cost stays linear in the partition size
/// times `K²` instead of paying a sparse product per step; steps of
/// higher order fall back to the general Wick product.
pub fn riemann_sum(
    y: &IntegrandFn,
    model: &ProcessModel,
    a: f64,
    b: f64,
    partition: &[f64],
) -> Result<ChaosVector> {
    check_partition(a, b, partition)?;
    let kmodes = model.modes() as usize;
    let dense_ok = model.modes() <= DENSE_MODE_CAP;

    let mut coeffs = Vec::with_capacity(partition.len());
    for &t in partition {
        coeffs.push(model.x_coeffs(t)?);
    }

    let mut lin = vec![0.0f64; kmodes];
    let mut quad: Option<Vec<f64>> = None;
    let mut extra = ChaosVector::zero();
    let mut trunc = Truncation::new(0, 0);

    for j in 0..partition.len() - 1 {
        let yj = y.eval(partition[j])?;
        if yj.is_zero() {
            continue;
        }
        let step_trunc = {
            let t = yj.truncation();
            Truncation::new(
                t.max_order.saturating_add(1),
                t.max_length.saturating_add(model.modes()),
            )
        };
        trunc = Truncation::new(
            trunc.max_order.max(step_trunc.max_order),
            trunc.max_length.max(step_trunc.max_length),
        );
        let dc: Vec<f64> = (0..kmodes)
            .map(|l| coeffs[j + 1][l] - coeffs[j][l])
            .collect();
        if dense_ok && yj.order() <= 1 {
            for (alpha, c) in yj.terms() {
                if alpha.is_zero() {
                    for l in 0..kmodes {
                        lin[l] += c * dc[l];
                    }
                } else {
                    let k = alpha
                        .as_unit()
                        .expect("order-one index is a unit")
                        as usize
                        - 1;
                    let m = quad.get_or_insert_with(|| vec![0.0; kmodes * kmodes]);
                    for l in 0..kmodes {
                        let (row, col) = if k <= l { (k, l) } else { (l, k) };
                        m[row * kmodes + col] += c * dc[l];
                    }
                }
            }
        } else {
            let dx = ChaosVector::first_order(&dc);
            extra = extra.add(&yj.wick(&dx)?);
        }
    }

    let mut terms = Vec::new();
    for (l, &c) in lin.iter().enumerate() {
        if c != 0.0 {
            terms.push((crate::multi_index::MultiIndex::unit(l as u32 + 1), c));
        }
    }
    if let Some(m) = &quad {
        for k in 0..kmodes {
            for l in k..kmodes {
                let c = m[k * kmodes + l];
                if c != 0.0 {
                    let alpha = crate::multi_index::MultiIndex::unit(k as u32 + 1)
                        .add(&crate::multi_index::MultiIndex::unit(l as u32 + 1));
                    terms.push((alpha, c));
                }
            }
        }
    }
    terms.sort_unstable_by(|x, y| x.0.cmp(&y.0));
    let dense = ChaosVector::from_sorted_terms(terms, trunc);
    Ok(dense.add(&extra))
}

/// High-accuracy reference `∫_a^b Y(t) ◊ W(t) dt` by adaptive Simpson
/// quadrature with coefficientwise error control at `tol`, applied to
/// the chaos vector `wick(Y(t), W(t))` as a whole.
///
/// Exhausting the refinement budget without meeting the tolerance is
/// an accuracy error.
pub fn reference_integral(
    y: &IntegrandFn,
    model: &ProcessModel,
    a: f64,
    b: f64,
    tol: f64,
) -> Result<ChaosVector> {
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(Error::Parameter(format!(
            "integration needs finite a < b, got [{a}, {b}]"
        )));
    }
    if !(tol > 0.0) || !tol.is_finite() {
        return Err(Error::Parameter(format!(
            "reference quadrature needs a positive tolerance, got {tol}"
        )));
    }
    let g = |t: f64| -> Result<ChaosVector> { y.eval(t)?.wick(&model.w_chaos(t)?) };
    let mut budget = REFERENCE_EVAL_CAP;
    let mut eval = |t: f64| -> Result<ChaosVector> {
        if budget == 0 {
            return Err(Error::Accuracy(format!(
                "reference quadrature exhausted its evaluation budget before \
                 reaching coefficientwise tolerance {tol} on [{a}, {b}]"
            )));
        }
        budget -= 1;
        g(t)
    };
    let mut acc = ChaosVector::zero();
    let panel_tol = tol / REFERENCE_INITIAL_PANELS as f64;
    let mut left_node = a;
    let mut f_left = eval(a)?;
    for i in 1..=REFERENCE_INITIAL_PANELS {
        let right_node = if i == REFERENCE_INITIAL_PANELS {
            b
        } else {
            a + (b - a) * i as f64 / REFERENCE_INITIAL_PANELS as f64
        };
        let m = 0.5 * (left_node + right_node);
        let fm = eval(m)?;
        let f_right = eval(right_node)?;
        let whole = simpson_panel(&f_left, &fm, &f_right, right_node - left_node);
        acc = acc.add(&adaptive_panel(
            &mut eval, left_node, right_node, &f_left, &fm, &f_right, &whole, panel_tol, 40,
        )?);
        left_node = right_node;
        f_left = f_right;
    }
    Ok(acc)
}

fn simpson_panel(fa: &ChaosVector, fm: &ChaosVector, fb: &ChaosVector, h: f64) -> ChaosVector {
    ChaosVector::linear_combination(&[(h / 6.0, fa), (4.0 * h / 6.0, fm), (h / 6.0, fb)])
}

fn max_abs_coeff(v: &ChaosVector) -> f64 {
    v.terms().iter().fold(0.0f64, |acc, (_, c)| acc.max(c.abs()))
}

#[allow(clippy::too_many_arguments)]
fn adaptive_panel<F>(
    eval: &mut F,
    a: f64,
    b: f64,
    fa: &ChaosVector,
    fm: &ChaosVector,
    fb: &ChaosVector,
    whole: &ChaosVector,
    tol: f64,
    depth: u32,
) -> Result<ChaosVector>
where
    F: FnMut(f64) -> Result<ChaosVector>,
{
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = eval(lm)?;
    let frm = eval(rm)?;
    let left = simpson_panel(fa, &flm, fm, m - a);
    let right = simpson_panel(fm, &frm, fb, b - m);
    let refined = left.add(&right);
    let delta = refined.sub(whole);
    if max_abs_coeff(&delta) <= 15.0 * tol {
        return Ok(refined.add_scaled(&delta, 1.0 / 15.0));
    }
    if depth == 0 {
        return Err(Error::Accuracy(format!(
            "reference quadrature stalled near [{a}, {b}] without reaching \
             its coefficientwise tolerance"
        )));
    }
    let half_tol = 0.5 * tol;
    let l = adaptive_panel(eval, a, m, fa, &flm, fm, &left, half_tol, depth - 1)?;
    let r = adaptive_panel(eval, m, b, fm, &frm, fb, &right, half_tol, depth - 1)?;
    Ok(l.add(&r))
}

/// Discretization errors of [`riemann_sum`] against
/// [`reference_integral`] across a family of uniform partitions,
/// measured in the dual norm of index `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    /// Partition sizes, strictly increasing.
    pub partitions: Vec<usize>,
    /// `‖ S_n − reference ‖'_p`, one entry per partition size.
    pub errors: Vec<f64>,
    /// Dual-norm index the errors were measured in.
    pub dual_index: u32,
    /// Least-squares slope of `log error` against `log n`, excluding
    /// the two coarsest partitions; absent when too few partitions
    /// remain above [`SLOPE_FLOOR`].
    pub slope: Option<f64>,
}

impl ConvergenceReport {
    /// Two-column CSV `n,error`, one row per partition.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "n,error")?;
        for (n, e) in self.partitions.iter().zip(&self.errors) {
            writeln!(out, "{n},{e}")?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn fitted_slope(partitions: &[usize], errors: &[f64]) -> Option<f64> {
    let skip = if partitions.len() >= 4 { 2 } else { 0 };
    let pts: Vec<(f64, f64)> = partitions
        .iter()
        .zip(errors)
        .skip(skip)
        .filter(|&(_, &e)| e > SLOPE_FLOOR)
        .map(|(&n, &e)| ((n as f64).ln(), e.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let det = m * sxx - sx * sx;
    if det.abs() < 1e-300 {
        return None;
    }
    Some((m * sxy - sx * sy) / det)
}

/// Runs [`riemann_sum`] over uniform partitions of the listed sizes,
/// compares against [`reference_integral`] at the default tolerance,
/// and fits the convergence rate.
///
/// The dual index must leave a Wick-product gap above the noise: `p`
/// at least the model's dual exponent plus one.  The integrand's
/// declared boundedness is spot-checked on [`BOUND_SAMPLES`] points
/// before any sums are taken.
pub fn convergence_study(
    y: &IntegrandFn,
    model: &ProcessModel,
    a: f64,
    b: f64,
    n_list: &[usize],
    p: u32,
) -> Result<ConvergenceReport> {
    let min_p = model.dual_exponent() + 1;
    if p < min_p {
        return Err(Error::Parameter(format!(
            "convergence study needs a dual index of at least {min_p} for \
             this model, got {p}"
        )));
    }
    if n_list.is_empty() {
        return Err(Error::Parameter("empty partition-size list".into()));
    }
    if n_list.windows(2).any(|w| w[0] >= w[1]) || n_list[0] == 0 {
        return Err(Error::Parameter(
            "partition sizes must be positive and strictly increasing".into(),
        ));
    }
    y.bounded_on(a, b, BOUND_SAMPLES)?;
    let reference = reference_integral(y, model, a, b, REFERENCE_TOL)?;
    let mut errors = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let nodes = uniform_partition(a, b, n);
        let sum = riemann_sum(y, model, a, b, &nodes)?;
        errors.push(sum.sub(&reference).dual_norm(p));
    }
    let slope = fitted_slope(n_list, &errors);
    Ok(ConvergenceReport {
        partitions: n_list.to_vec(),
        errors,
        dual_index: p,
        slope,
    })
}
