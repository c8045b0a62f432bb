"""Smoke test for the ddeldp_py extension module."""

import json
import math

import ddeldp_py as d


def main():
    m = d.DelayMeasure.scalar(1.0, [(0.0, -1.0), (-1.0, 1.0)])
    rep = m.verify_instability()
    assert rep["verified"], rep
    sd = m.spectral_data()
    assert abs(sd["c"] - 0.5) < 1e-6, sd["c"]
    print("spectral gap", rep["spectral_gap"])

    noise = d.NoiseModel.two_state(2.0, 1.0)
    assert noise.hamiltonian(0.0) == 0.0
    model = d.RateModel(noise)
    assert math.isinf(model.lagrangian(0.0, 1.5))
    qp = model.quasipotential(1.0, 0.0, 0.6)
    print("quasipotential", qp["value"])
    assert abs(qp["value"] - 0.2) < 2e-3

    n = 101
    times = [i / (n - 1) for i in range(n)]
    a = model.action(times, [0.6 * t for t in times])
    assert abs(a - 0.2) < 1e-6, a

    ex = d.linear_exit(m, 2.0, 1.0, 3.0, 0.0, 0.2, dt=0.001)
    assert ex["feasible"] and ex["value"] > 0.0
    print("linear exit", ex["value"], ex["rho"])

    try:
        d.DelayMeasure.scalar(-1.0, [])
    except d.DdeldpError as e:
        print("rejected:", e)
    else:
        raise AssertionError("expected DdeldpError")
    print(json.dumps({"ok": True}))


if __name__ == "__main__":
    main()
