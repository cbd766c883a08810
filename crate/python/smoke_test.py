"""Smoke test for the mfou Python extension.

Build and install first, e.g.

    pip install maturin
    maturin build --release -m crates/python/Cargo.toml
    pip install target/wheels/mfou-*.whl
"""

import math

import mfou


def close(a, b, tol):
    return abs(a - b) <= tol * max(1.0, abs(b))


def main():
    assert mfou.asymptotic_fisher(1.0) == 1.5
    assert mfou.asymptotic_fisher(2.0) == 0.5
    assert close(mfou.lambda_h(0.5), 1.0, 1e-12)
    assert close(mfou.theoretical_variance(0.3, 1.0, 1.0, "constant"), 2.0 / 3.0, 1e-12)

    try:
        mfou.Kernel(0.5, 1.0, 10)
    except ValueError as e:
        assert "H must differ from 1/2" in str(e)
    else:
        raise AssertionError("H = 1/2 accepted")

    k = mfou.Kernel(0.7, 10.0, 200)
    assert len(k.t) == 201 and k.m[0] == 0.0
    assert all(b > a for a, b in zip(k.m, k.m[1:]))
    assert all(close(p * mp, 1.0, 1e-8) for p, mp in zip(k.psi, k.m_prime))
    assert max(abs(r) for r in k.plug_back_residual(200)) < 1e-2

    u, v = k.optimal_input()
    assert len(u) == len(v) == 201

    path = k.simulate(1.0, seed=7)
    assert set(path) == {"t", "xi", "X", "Z", "Q", "M"}
    again = k.simulate(1.0, seed=7)
    assert path["X"] == again["X"]
    theta_hat = k.estimate(path["X"])
    assert math.isfinite(theta_hat)

    f = k.fisher(1.0)
    assert f["asymptotic"] == 1.5 and f["I1"] > 0 and f["I2"] > 0
    assert close(k.log_laplace(0.0, 1.0), 0.0, 1e-12)
    assert k.log_laplace(1.0, 1.0) < 0.0

    s = mfou.run_study(0.3, 1.0, 10.0, 200, 100, 42)
    assert s["n_effective"] + s["n_degenerate"] == 100
    assert len(s["replications"]) == 100
    assert s["config"]["seed"] == 42
    assert s == mfou.run_study(0.3, 1.0, 10.0, 200, 100, 42)

    print(f"mfou {mfou.__version__}: smoke test passed "
          f"(variance {s['variance']:.3f}, target {s['target_variance']:.3f})")


if __name__ == "__main__":
    main()
