"""Compare the compiled and numpy kernel backends on typical GP workloads.

Run with ``python3 benchmarks/bench_kernels.py``. Both implementations are
imported directly, so the ``GEOBO_PURE_PYTHON`` switch does not matter here.
"""

import argparse
import timeit

import numpy as np

from geobo._core import _kernels_py

try:
    from geobo._core import _kernels as _compiled
except ImportError:
    _compiled = None


def _points(n, p, rng):
    X = rng.standard_normal((n, p))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def _time(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", default="50,100,200,1000")
    ap.add_argument("--dim", type=int, default=11)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    backends = {"numpy": _kernels_py}
    if _compiled is not None:
        backends["cython"] = _compiled
    print(f"{'kernel':<14}{'n':>6}" + "".join(f"{b + ' ms':>12}" for b in backends) + f"{'speedup':>10}")
    for n in (int(s) for s in args.sizes.split(",")):
        A = _points(n, args.dim, rng)
        B = _points(100, args.dim, rng)
        K, D2 = _kernels_py.sphere_se(A, A, 1.0, 2.0)
        cases = {
            "sphere_se": lambda m: m.sphere_se(A, B, 1.0, 2.0),
            "euclid_se": lambda m: m.euclid_se(A, B, 1.0, 2.0),
            "sphere_dk_dc": lambda m: m.sphere_dk_dc(K, D2, 2.0),
        }
        for name, call in cases.items():
            ref = call(_kernels_py)
            ms = {}
            for b, mod in backends.items():
                out = call(mod)
                for r, o in zip(ref if isinstance(ref, tuple) else (ref,), out if isinstance(out, tuple) else (out,)):
                    np.testing.assert_allclose(o, r, rtol=1e-12, atol=1e-13)
                ms[b] = 1e3 * _time(lambda: call(mod), args.repeat)
            speed = ms["numpy"] / ms["cython"] if "cython" in ms else float("nan")
            print(f"{name:<14}{n:>6}" + "".join(f"{ms[b]:>12.3f}" for b in backends) + f"{speed:>10.2f}")


if __name__ == "__main__":
    main()
