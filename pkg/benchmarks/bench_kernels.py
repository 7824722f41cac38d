"""Time the compiled kernel core against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each case is run on both backends; the table reports the best wall time and
the speedup of the compiled core. Results are checked to agree first.
"""

import argparse
import timeit

import numpy as np

from dnl import _backend


def cases(rng):
    n = 8
    T = rng.normal(size=(3, n, n)) * 0.3
    Z = rng.normal(size=(256, n))
    W = rng.normal(size=(256, n, n))
    c = rng.normal(size=(256, n))
    w = np.full(256, 1 / 256)
    small = rng.normal(size=(20000, 3, 3))
    # the forward pass and the solver call the kernels once per layer with tiny operands
    t3 = rng.normal(size=(3, 3, 3)) * 0.3
    z1 = rng.normal(size=(1, 3))
    X16, W16, c16 = rng.normal(size=(16, 3)), rng.normal(size=(16, 3, 3)), rng.normal(size=(16, 3))
    w16 = np.full(16, 1 / 16)
    for kind, name in ((0, "kronecker"), (2, "gaussian")):
        yield f"transform_rows {name} 1x3", lambda m, k=kind: m.transform_rows(k, *t3, z1)
        yield f"history_sum {name} 16x3", lambda m, k=kind: m.history_sum(k, *t3, X16, W16, c16, w16)
    for kind, name in ((0, "kronecker"), (1, "scaled-dot"), (2, "gaussian")):
        yield f"transform_rows {name} 256x{n}", lambda m, k=kind: m.transform_rows(k, *T, Z)
        yield f"history_sum {name} 256x{n}", lambda m, k=kind: m.history_sum(k, *T, Z, W, c, w)
    yield "spectral_norms 20000 x 3x3", lambda m: m.spectral_norms(small, 1e-12, 10000)[0]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    names = _backend.available()
    if "compiled" not in names:
        print("compiled core not built; only the fallback is available")
    mods = {name: _backend.load(name) for name in names}
    rng = np.random.default_rng(0)
    print(f"{'case':36s}" + "".join(f"{n:>14s}" for n in names) + ("   speedup" if len(names) > 1 else ""))
    for label, fn in cases(rng):
        outs = [fn(m) for m in mods.values()]
        for o in outs[1:]:
            np.testing.assert_allclose(o, outs[0], rtol=1e-10, atol=1e-12)
        times = []
        for m in mods.values():
            number = 200 if "x3" in label and "3x3" not in label else 3
            times.append(min(timeit.repeat(lambda: fn(m), number=number, repeat=args.repeat)) / number)
        row = f"{label:36s}" + "".join(f"{t * 1e3:12.3f}ms" for t in times)
        if len(times) > 1:
            row += f"   {times[1] / times[0]:7.1f}x"
        print(row)


if __name__ == "__main__":
    main()
