"""Smoke test for the Python bindings.

Build and install first:

    pip install ./crates/py --no-build-isolation
    python python/smoke_test.py
"""

import math

import nvdecouple_py as nv


def main():
    times = [1.0 + 0.5 * k for k in range(20)]
    t, p0, sem = nv.simulate_xy8("nanodiamond", 2, 8.5, times, n_trajectories=100, seed=7)
    assert len(t) == len(p0) == len(sem) == len(times)
    assert all(0.0 <= p <= 1.0 for p in p0)
    assert p0[0] > p0[-1], "XY8 curve should decay"

    again = nv.simulate_xy8("nanodiamond", 2, 8.5, times, n_trajectories=100, seed=7)
    assert again == (t, p0, sem), "same seed must reproduce the curve"

    _, c0, _ = nv.simulate_ccdd("nanodiamond", 8.06, 0.1, [0.1, 0.2, 0.3], n_trajectories=50)
    assert len(c0) == 3

    xs = [0.4 * k for k in range(40)]
    ys = [0.5 * (1.0 + math.exp(-((x / 3.0) ** 1.5))) for x in xs]
    params = nv.fit("stretched_population", xs, ys, sigma=[0.01] * len(xs))
    value, _ = params["T"]
    assert abs(value - 3.0) < 1e-6, params

    freqs = [0.5 * k for k in range(1, 81)]
    w = nv.crossover_mhz(15.22, 31.22, 8.5, freqs)
    assert w is not None and abs(w - 8.5) < 0.1, w

    try:
        nv.fit("nope", xs, ys)
    except ValueError:
        pass
    else:
        raise AssertionError("unknown model must raise")

    print("smoke test passed")


if __name__ == "__main__":
    main()
