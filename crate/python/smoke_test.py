#!/usr/bin/env python3
"""Smoke test for the wicknoise_py extension module.

Builds the cdylib with cargo, loads it under its import name, and
exercises the core surface: Wick algebra and weighted norms, the
spectral presets, process simulation, Wick-Ito integration, and the
three Ito-verifier regimes.

Run from anywhere:  python3 python/smoke_test.py
"""

import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]

CHECKS = []


def check(condition, label):
    CHECKS.append((label, bool(condition)))
    status = "ok" if condition else "FAIL"
    print(f"  [{status}] {label}")


def build_and_load():
    subprocess.run(
        ["cargo", "build", "-p", "wicknoise-py"],
        cwd=ROOT,
        check=True,
    )
    built = ROOT / "target" / "debug" / "libwicknoise_py.so"
    if not built.exists():
        sys.exit(f"missing build artifact {built}")
    staging = Path(tempfile.mkdtemp(prefix="wicknoise-py-"))
    shutil.copy2(built, staging / "wicknoise_py.so")
    sys.path.insert(0, str(staging))
    import wicknoise_py

    return wicknoise_py


def main():
    wn = build_and_load()
    print(f"loaded wicknoise_py {wn.version()}")

    # Wick algebra on explicit vectors.
    x = wn.ChaosVector.first_order([1.0])
    sq = x.wick(x)
    check(sq.terms() == [("2", 1.0)], "H1 * H1 = H2 under the Wick product")
    check(
        abs(wn.ChaosVector.constant(2.0).wick(wn.ChaosVector.constant(3.0)).mean() - 6.0)
        < 1e-15,
        "constants multiply through the Wick product",
    )
    cube = x.wick_power(3)
    check(cube.terms() == [("3", 1.0)], "Wick cube lands on the third chaos level")
    check(
        abs(wn.wick_bound_constant(2) - math.sqrt(math.pi / 2.0)) < 1e-9,
        "continuity constant at gap 2 equals sqrt(pi/2)",
    )

    round_trip = wn.ChaosVector.from_json(sq.to_json())
    check(round_trip.terms() == sq.terms(), "chaos vector JSON round trip")

    alpha = wn.MultiIndex([1, 0, 3])
    check(str(alpha) == "1,0,3" and alpha.order() == 4, "multi-index text and order")
    basis = wn.enumerate_indices(2, 2, 1000)
    check(len(basis) == 6, "enumeration count at order 2, length 2")
    e = wn.basis_vector(basis[1])
    check(e.dual_norm(0) == 1.0, "basis vectors are unit in the flat dual norm")

    # Spectral presets and the variance function.
    white = wn.SpectralDensity.preset("white")
    check(abs(white.variance(1.0) - 1.0) < 1e-8, "white variance r(1) = 1")
    check(not white.is_rough(), "white preset is not rough")
    check(wn.SpectralDensity.preset("fbm:H=0.3").is_rough(), "fbm H=0.3 is rough")
    v = wn.fbm_variance_constant(0.7)
    fbm = wn.SpectralDensity.preset("fbm:H=0.7")
    check(abs(fbm.variance(1.0) - v) < 1e-6, "fbm variance constant matches r(1)")
    check(
        abs(fbm.variance_derivative(1.0) - 1.4 * v) < 1e-6,
        "fbm variance derivative r'(1) = 2H * V_H",
    )

    # Process model: truncation, covariance, simulation.
    model = wn.ProcessModel(white, 32, -0.25, 1.25)
    check(model.modes() == 32 and model.dual_exponent() == 3, "model shape")
    check(0.9 < model.variance(1.0) < 1.0, "truncated variance approaches 1")
    check(
        abs(model.covariance(1.0, 0.5) - 1.0) < 1e-6,
        "doubled white covariance at (1, 0.5)",
    )
    check(
        abs(model.covariance_series_limit(1.0, 0.5) - 0.5) < 0.05,
        "chaos series recovers min(t, s)",
    )
    paths = model.sample_paths([0.0, 0.5, 1.0], 3, 42)
    again = model.sample_paths([0.0, 0.5, 1.0], 3, 42)
    check(paths == again, "sampling is deterministic in the seed")
    check(
        len(paths) == 3 and all(p[0] == 0.0 for p in paths),
        "three paths, all starting at zero",
    )
    check(model.derivative_check(1.0, 1e-3) < 1e-2, "noise is the derivative in norm")

    # Wick-Ito integration.
    integral = wn.integrate_process(model, 0.0, 1.0, n=256)
    reference = wn.reference_integral_process(model, 0.0, 1.0)
    err = integral.sub(reference).dual_norm(4)
    check(0.0 < err < 1e-2, "Riemann sum sits near the reference integral")
    study = wn.convergence_report(model, 0.0, 1.0, [8, 16, 32, 64, 128], 4)
    check(study["slope"] < -0.8, "refinement slope is first order")

    # Ito verifier, all three regimes.
    exact = wn.ito_polynomial(model, 2, 0.0, 1.0, 512)
    check(exact["regime"] == "exact" and exact["residual"] < 1e-6, "exact regime closes")
    check(abs(exact["mean_shift"] - 1.0) < 1e-6, "quadratic mean shift equals r(1)")

    small = wn.ProcessModel(white, 6, -0.25, 1.25)
    osc = wn.ito_exponential(small, 1.0, 0.0, 1.0, 256, wick_order=10, tol=1e-4)
    check(osc["regime"] == "wick-exp" and osc["residual"] < 1e-4, "oscillatory regime closes")

    mc = wn.ito_pathwise(small, "cos", 0.0, 0.5, 64, 500, 7)
    stats = mc["monte_carlo"]
    check(
        mc["regime"] == "monte-carlo" and stats["n_paths"] == 500,
        "pathwise regime reports its sampling",
    )
    check(
        abs(stats["mean_residual"]) < 5.0 * stats["std_error"],
        "pathwise residual is statistically zero",
    )

    try:
        wn.SpectralDensity.preset("bogus")
        check(False, "unknown preset raises ValueError")
    except ValueError:
        check(True, "unknown preset raises ValueError")

    failed = [label for label, ok in CHECKS if not ok]
    print()
    if failed:
        print(f"SMOKE FAILED: {len(failed)} of {len(CHECKS)} checks")
        sys.exit(1)
    print(f"SMOKE OK: all {len(CHECKS)} checks passed")


if __name__ == "__main__":
    main()
