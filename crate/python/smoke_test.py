#!/usr/bin/env python3
"""Smoke test for the homctl_py extension module.

Builds nothing itself: it locates the cdylib produced by
`cargo build -p homctl-py` (release preferred, debug fallback), stages it
under the importable name, and exercises every exported surface with
hand-checkable values.

Run from anywhere inside the repository:

    cargo build -p homctl-py --release
    python3 python/smoke_test.py
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def load_module():
    candidates = [
        REPO / "target" / "release" / "libhomctl_py.so",
        REPO / "target" / "debug" / "libhomctl_py.so",
    ]
    built = next((p for p in candidates if p.exists()), None)
    if built is None:
        sys.exit(
            "homctl_py is not built; run `cargo build -p homctl-py --release` first"
        )
    stage = Path(tempfile.mkdtemp(prefix="homctl-py-"))
    shutil.copy2(built, stage / "homctl_py.so")
    sys.path.insert(0, str(stage))
    import homctl_py

    print(f"loaded {built.relative_to(REPO)}")
    return homctl_py


CHECKS = []


def check(name):
    def register(fn):
        CHECKS.append((name, fn))
        return fn

    return register


def close(a, b, tol=1e-12):
    return abs(a - b) <= tol


@check("list_plants names the three bundled models")
def _(m):
    names = [name for name, _ in m.list_plants()]
    assert names == ["scalar_cubic", "mimo_toy", "induction_motor"], names


@check("pseudoinverse inverts the nonzero block only")
def _(m):
    p = m.pseudoinverse([[2.0, 0.0], [0.0, 0.0]])
    assert close(p[0][0], 0.5) and p[0][1] == p[1][0] == p[1][1] == 0.0, p


@check("pseudoinverse matches numpy on a rank-deficient matrix")
def _(m):
    import numpy as np

    rng = np.random.default_rng(7)
    a = (rng.standard_normal((5, 2)) @ rng.standard_normal((2, 4))).tolist()
    ours = np.array(m.pseudoinverse(a))
    theirs = np.linalg.pinv(np.array(a))
    assert np.max(np.abs(ours - theirs)) < 1e-10


@check("numerical_rank applies the relative cutoff")
def _(m):
    assert m.numerical_rank([[1.0, 0.0], [0.0, 1e-12]]) == 1
    assert m.numerical_rank([[1.0, 0.0], [0.0, 1e-12]], rank_tol=1e-13) == 2


@check("oriented tangent spans the kernel with positive orientation")
def _(m):
    tau = m.oriented_nullspace_tangent([[1.0, 0.0]])
    assert close(tau[0], 0.0) and close(tau[1], 1.0), tau
    # Rank-deficient input is a ValueError, not a crash.
    try:
        m.oriented_nullspace_tangent([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0]])
    except ValueError:
        pass
    else:
        raise AssertionError("rank-deficient matrix accepted")


@check("augmented_tangent combines kernel and particular parts")
def _(m):
    tau, tau_bar, combined = m.augmented_tangent([[1.0, 0.0]], [1.0], alpha=2.0)
    assert close(tau[1], 1.0) and close(tau_bar[0], 1.0), (tau, tau_bar)
    assert close(combined[0], 1.0) and close(combined[1], 2.0), combined


@check("lie_derivative reproduces the scalar cubic by hand")
def _(m):
    # Plant: x' = u, y = x^3 - x + 1.  L_g h = 3 x^2 - 1; drift is zero.
    x = [0.7]
    lg = m.lie_derivative("scalar_cubic", x, output=0, order=1, input=0)
    assert close(lg, 3 * 0.7**2 - 1), lg
    lf = m.lie_derivative("scalar_cubic", x, output=0, order=1)
    assert close(lf, 0.0), lf
    assert close(
        m.lie_derivative("scalar_cubic", x, output=0, order=0), 0.7**3 - 0.7 + 1
    )
    try:
        m.lie_derivative("no_such_plant", x, output=0, order=1)
    except ValueError as e:
        assert "bundled" in str(e)
    else:
        raise AssertionError("unknown plant accepted")


@check("decoupling_matrix folds at x = 1/sqrt(3)")
def _(m):
    a, b = m.decoupling_matrix("scalar_cubic", [1.0])
    assert close(a[0][0], 2.0) and close(b[0], 0.0), (a, b)
    a, _ = m.decoupling_matrix("scalar_cubic", [1 / math.sqrt(3)])
    assert abs(a[0][0]) < 1e-12, a


@check("derive_motor_params matches the nameplate arithmetic")
def _(m):
    d = m.derive_motor_params()
    assert close(d["tau_r"], 0.195 / 0.873, 1e-15), d
    l1 = 0.195 - 0.175**2 / 0.195
    assert close(d["l1"], l1, 1e-15)
    assert close(d["mu"], 2**2 * 0.175 / (0.013 * 0.195), 1e-9)
    boosted = m.derive_motor_params({"rr": 2 * 0.873})
    assert close(boosted["tau_r"], d["tau_r"] / 2, 1e-15)
    try:
        m.derive_motor_params({"rr": -1.0})
    except ValueError:
        pass
    else:
        raise AssertionError("negative resistance accepted")


@check("PiRegulator integrates and clamps")
def _(m):
    pi = m.PiRegulator(2.0, 1.0)
    out = pi.update(1.0, 0.1)
    assert close(out, 2.0 + 0.1) and close(pi.integral, 0.1), (out, pi.integral)
    pi.reset()
    assert pi.integral == 0.0
    clamped = m.PiRegulator(100.0, 0.0, limit=5.0)
    assert close(clamped.update(1.0, 0.1), 5.0)


@check("simulate runs the scalar scenario and converges")
def _(m):
    text = (REPO / "scenarios" / "scalar_cubic.scenario").read_text()
    result = m.simulate(text)
    assert result["plant"] == "scalar_cubic"
    cols = result["columns"]
    expected = {"t", "x1", "y1", "u1", "lambda", "lambda_dot", "H1", "mode", "sat"}
    assert set(cols) == expected, sorted(cols)
    assert len(cols["t"]) == 8001
    assert abs(cols["y1"][-1]) < 1e-2
    assert close(cols["lambda"][-1], 1.0, 1e-6)
    assert set(cols["mode"]) <= {"F", "C"}
    assert set(cols["sat"]) <= {0, 1}


@check("simulate_file agrees with simulate on the same scenario")
def _(m):
    path = REPO / "scenarios" / "mimo_toy.scenario"
    a = m.simulate_file(str(path))
    b = m.simulate(path.read_text())
    assert a["columns"]["y1"] == b["columns"]["y1"]
    assert a["columns"]["y2"][-1] == b["columns"]["y2"][-1]


@check("scenario errors surface as Python exceptions")
def _(m):
    try:
        m.simulate("[scenario]\nplant = scalar_cubic\n\n[sim]\ndt = -1\n")
    except ValueError as e:
        assert "dt" in str(e), e
    else:
        raise AssertionError("invalid dt accepted")
    try:
        m.simulate_file("/no/such/file.scenario")
    except OSError:
        pass
    else:
        raise AssertionError("missing file accepted")


@check("canonical_scenario is idempotent")
def _(m):
    text = (REPO / "scenarios" / "motor.scenario").read_text()
    once = m.canonical_scenario(text)
    assert m.canonical_scenario(once) == once


def main():
    module = load_module()
    failures = 0
    for name, fn in CHECKS:
        try:
            fn(module)
            print(f"  ok: {name}")
        except Exception as e:  # noqa: BLE001 — report and keep going
            failures += 1
            print(f"FAIL: {name}: {e!r}")
    total = len(CHECKS)
    print(f"{total - failures}/{total} smoke checks passed")
    sys.exit(1 if failures else 0)


if __name__ == "__main__":
    main()
