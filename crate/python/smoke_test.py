"""Smoke test for the Python bindings.

Build and install the extension first:
    cd crates/python && maturin build --release -o dist && pip install dist/pacest-*.whl
"""
import math
import random

import pacest

GAUSS = {"kind": "parametric-gaussian", "mean": [0.0, 0.0], "covariance": [[2.0, 0.5], [0.5, 1.0]], "rows": 8}


def mean_rows(rows, seed):
    n = len(rows)
    return [sum(r[0] for r in rows) / n, sum(r[1] for r in rows) / n]


def noisy_first(rows, seed):
    rng = random.Random(seed)
    return [rows[0][0] * 0.2 + rng.uniform(-0.5, 0.5)]


def uniform_rows(seed):
    rng = random.Random(seed)
    return [[rng.uniform(-1, 1)] for _ in range(4)]


def main():
    b = pacest.pac_bound(0.99, 1.0)
    assert abs(b["posterior_success_upper"] - 0.36) <= 0.005, b
    iid = pacest.iid_individual_bound(10, 0.01, 1.0)
    assert len(iid["per_j"]) == 10

    builtin = {"kind": "builtin-mean", "output_dim": 2, "output_radius": 4.0}
    callable_mech = pacest.Mechanism(mean_rows, output_dim=2, output_radius=4.0)
    a = pacest.analyze_deterministic(builtin, GAUSS, seed=7, m=2000, v=1.0, beta=0.1, workers=4)
    p = pacest.analyze_deterministic(callable_mech, GAUSS, seed=7, m=2000, v=1.0, beta=0.1, workers=4)
    for x, y in zip(a["certificate"]["diagnostics"]["eigenvalues"], p["certificate"]["diagnostics"]["eigenvalues"]):
        assert math.isclose(x, y, rel_tol=1e-9), (x, y)
    assert a["certificate"]["v_claimed"] == 1.1

    rand_mech = pacest.Mechanism(noisy_first, output_dim=1, output_radius=1.0, randomized=True, seed_space_size=64)
    r = pacest.analyze_randomized(rand_mech, uniform_rows, seed=3, m=500, tau=4, v=1.0, c=0.1, workers=2)
    assert r["noise"]["variance"] == (r["psi_bar"] + 0.1) / 2.0

    ident = {"kind": "builtin-identity", "output_dim": 1, "output_radius": 1.0}
    v = pacest.verify(ident, [[[0.0]], [[1.0]]], seed=1, m=50, tau1=1, tau2=2, c=0.5, beta=0.05, n_mc=200)
    assert v["psi_bar"] > 0.0

    wc = pacest.worst_case_noise(1.0, 4, 1.0, n=100, delta2=0.02)
    assert wc["scale_lower"] == 2.0
    assert math.isclose(pacest.noise_gap([4.0, 1.0, 1.0, 0.25], 100, 1.0), 10.125)

    too_big = pacest.Mechanism(lambda rows, seed: [5.0], output_dim=1, output_radius=1.0)
    try:
        pacest.analyze_deterministic(too_big, GAUSS, seed=1, m=10, v=1.0, beta=0.1, c=0.1)
    except pacest.PacestError as e:
        code, message, trial = e.args
        assert code == "RADIUS" and trial == 0, e.args
    else:
        raise AssertionError("radius violation not raised")

    print("python smoke test: ok")


if __name__ == "__main__":
    main()
