#!/usr/bin/env python3
"""Smoke test for the randpoincare_py extension module.

Builds the module with cargo if needed, loads it straight from the cargo
target directory, and exercises the main types end to end on toy chains and
a small reference-model kernel.
"""

import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load_module():
    lib = None
    for profile in ("release", "debug"):
        cand = ROOT / "target" / profile / "librandpoincare_py.so"
        if cand.exists():
            lib = cand
            break
    if lib is None:
        print("building randpoincare-py (cargo build --release -p randpoincare-py) ...")
        subprocess.run(
            ["cargo", "build", "--release", "-p", "randpoincare-py"],
            cwd=ROOT,
            check=True,
        )
        lib = ROOT / "target" / "release" / "librandpoincare_py.so"
    tmp = Path(tempfile.mkdtemp(prefix="randpoincare_py_"))
    shutil.copy(lib, tmp / "randpoincare_py.so")
    sys.path.insert(0, str(tmp))
    import randpoincare_py

    return randpoincare_py


def approx(a, b, tol=1e-9):
    assert abs(a - b) <= tol, f"{a} vs {b} (tol {tol})"


def main():
    rp = load_module()

    # toy chain: spectral decomposition and committor identities
    k3 = rp.Kernel.from_matrix([[0.8, 0.1, 0.1], [0.1, 0.8, 0.1], [0.1, 0.1, 0.8]])
    eigs = k3.eigenvalues(3)
    approx(eigs[0][0], 1.0, 1e-10)
    approx(eigs[1][0], 0.7, 1e-10)
    h = k3.committor([0], [2])
    approx(h[1], 0.5, 1e-12)

    # killed pair: QSD, geometric mean exit time, Doob transform
    killed = k3.kill([0, 1])
    lam0, qsd, phi0, residual = killed.qsd(1e-13)
    approx(lam0, 0.9, 1e-11)
    approx(qsd[0], 0.5, 1e-10)
    assert residual < 1e-10
    bar = killed.doob_transform(1e-13)
    approx(bar.matrix()[0][0], 8.0 / 9.0, 1e-10)
    approx(sum(bar.row_sums()) / 2.0, 1.0, 1e-10)

    # trace through the resolvent
    tr = k3.trace([0, 1])
    approx(tr.matrix()[0][0], 0.85, 1e-12)
    lap = k3.laplace_kernel([0, 1], 0.0)
    approx(lap.matrix()[0][1], tr.matrix()[0][1], 1e-12)

    # hierarchy order and exponent fit helpers
    order, theta = rp.hierarchy_order(
        [[math.inf, 3.0, 5.0], [1.0, math.inf, 4.0], [2.0, 6.0, math.inf]]
    )
    assert order == [0, 2, 1], order
    approx(theta, 1.0, 1e-12)
    fit_h, _icpt, r2 = rp.estimate_exponent(
        [(s, math.exp(-0.04 / (s * s))) for s in (0.1, 0.12, 0.15)]
    )
    approx(fit_h, 0.04, 1e-10)
    approx(r2, 1.0, 1e-10)

    # a small reference-model run: orbits, kernel, spectrum, structure
    model = rp.ReferenceModel(omega=2.0 * math.pi, sigma=0.12, theta_noise=0.1, dt=1e-3, seed=7)
    r_star, period, stable, _mults = model.find_orbit(1.1)
    approx(r_star, 1.0, 1e-7)
    approx(period, 1.0, 1e-5)
    assert stable
    hmat = model.analytic_h()
    approx(hmat[0][1], 0.0395833333, 1e-8)
    approx(hmat[1][0], 0.0971833333, 1e-8)

    kernel = model.build_kernel(cells=40, samples_per_cell=150)
    assert kernel.n == 40
    assert all(abs(s - 1.0) < 1e-12 for s in kernel.row_sums())
    lam = kernel.eigenvalues(3)
    assert lam[0][0] > 0.999 and lam[1][0] > 0.5, lam
    balls, centers, theta = model.detect_structure(kernel, 0.2)
    assert len(balls) == 2 and len(balls[0]) > 0
    # metastable order puts the deep orbit (r = 2.2) first
    approx(centers[0][0], 2.2, 1e-9)
    approx(theta, 0.0971833333 - 0.0395833333, 1e-8)

    chain = model.sample_chain(1.0, 50)
    assert len(chain) == 50
    assert all(0.5 <= r <= 3.0 for r in chain)

    print("randpoincare_py smoke test: all checks passed")


if __name__ == "__main__":
    main()
