//! Hermite polynomials and orthonormal Hermite functions.
//!
//! Two families appear in the chaos machinery:
//!
//! * probabilists' Hermite polynomials `h_n` with `h_0 = 1`,
//!   `h_1(x) = x`, `h_{n+1}(x) = x·h_n(x) − n·h_{n−1}(x)`, used inside
//!   the basis elements `H_α(z) = Π_j h_{α_j}(z_j)`;
//! * Hermite functions `h̃_k`, `k ≥ 1`, an orthonormal basis of the
//!   square-integrable functions on the line, used as the deterministic
//!   modes that the spectral operator colors.
//!
//! The Hermite functions are evaluated by the normalized three-term
//! recurrence, never through factorial quotients, so they stay accurate
//! into the hundreds of modes.

/// Probabilists' Hermite polynomial `h_n(x)` by forward recurrence.
///
/// Exact recurrence arithmetic in `f64`; for very large `n·x²` the
/// value itself overflows to `±∞`, which the caller ranges exclude.
pub fn hermite_poly(n: u32, x: f64) -> f64 {
    match n {
        0 => 1.0,
        1 => x,
        _ => {
            let mut prev = 1.0;
            let mut cur = x;
            for m in 1..n as u64 {
                let next = x * cur - m as f64 * prev;
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}

/// Orthonormal Hermite function `h̃_k(x)`, `k ≥ 1`.
///
/// `h̃_1(x) = π^{−1/4} e^{−x²/2}`, and the family satisfies
/// `∫ h̃_j h̃_k dx = δ_{jk}`. Internally this is the weight-`e^{−x²/2}`
/// (physicists') Hermite function of degree `k − 1` via the stable
/// normalized recurrence
/// `ψ_{n+1}(x) = x·√(2/(n+1))·ψ_n(x) − √(n/(n+1))·ψ_{n−1}(x)`.
pub fn hermite_fn(k: u32, x: f64) -> f64 {
    assert!(k >= 1, "Hermite functions are indexed from 1");
    let psi0 = std::f64::consts::PI.powf(-0.25) * (-0.5 * x * x).exp();
    if k == 1 {
        return psi0;
    }
    let mut prev = psi0;
    let mut cur = x * std::f64::consts::SQRT_2 * psi0;
    for n in 1..(k - 1) as u64 {
        let np1 = (n + 1) as f64;
        let next = x * (2.0 / np1).sqrt() * cur - (n as f64 / np1).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Evaluate `h̃_k` for all `k = 1..=k_max` at once (single recurrence
/// sweep, used when building coefficient tables over many modes).
pub fn hermite_fn_all(k_max: u32, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(k_max as usize);
    if k_max == 0 {
        return out;
    }
    let psi0 = std::f64::consts::PI.powf(-0.25) * (-0.5 * x * x).exp();
    out.push(psi0);
    if k_max == 1 {
        return out;
    }
    out.push(x * std::f64::consts::SQRT_2 * psi0);
    for n in 1..(k_max - 1) as u64 {
        let np1 = (n + 1) as f64;
        let next =
            x * (2.0 / np1).sqrt() * out[n as usize] - (n as f64 / np1).sqrt() * out[n as usize - 1];
        out.push(next);
    }
    out
}
