"""Compare the compiled assembly kernels against the numpy fallback.

Builds a pipe-section block, runs each kernel several times per backend,
and checks that the outputs agree to near machine precision. Run with

    python benchmarks/kernel_bench.py [--n-r 24] [--repeat 5]
"""
import argparse
import time

import numpy as np

from pipeweld.fem import _kernels_cy, kernels_py
from pipeweld.fem import core
from pipeweld.materials import get_material
from pipeweld.mesh import PipeSectionSpec, generate_pipe_section


def _setup(n_r):
    mesh = generate_pipe_section(PipeSectionSpec(
        n_r=n_r, n_groove=8, h_fine=0.5, h_coarse=3.0))
    mesh.active[:] = True
    block = core.build_blocks(mesh)[0]
    rng = np.random.default_rng(7)
    nel, nn = block.conn.shape
    nqp = block.N.shape[0]
    mat = get_material("X80_base")
    E = mat.mech.E_at(20.0)
    # positional tuples: the two backends share order, not keyword names
    mech_args = (
        block.grads, block.detJw, block.N,
        rng.normal(scale=1e-3, size=(nel, 2 * nn)),
        rng.normal(scale=1e-5, size=(nel, nqp, 4)),
        np.zeros((nel, nqp, 4)),
        np.abs(rng.normal(scale=1e-3, size=(nel, nqp))),
        np.abs(rng.normal(scale=0.05, size=(nel, nn))),
        np.full((nel, nqp), E),
        np.full((nel, nqp), mat.mech.sigma_y_at(20.0)),
        np.full(nel, mat.mech.nu),
        np.full(nel, mat.mech.n_hard),
        np.full(nel, 0.1),
        1e-7,
        np.ones(nel, dtype=bool),
    )
    phase_args = (block.grads, block.detJw, block.N,
                  np.abs(rng.normal(scale=0.5, size=(nel, nqp))),
                  np.full((nel, nqp), 60.0),
                  np.full(nel, 0.17), np.ones(nel, dtype=bool))
    trans_args = (block.grads, block.detJw, block.N,
                  np.abs(rng.normal(scale=0.3, size=(nel, nn))),
                  np.full((nel, nqp), 4.5e-4),
                  rng.normal(scale=1e-3, size=(nel, nqp, 2)),
                  10.0, np.ones(nel, dtype=bool))
    return nel, mech_args, phase_args, trans_args


def _time(fn, args, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def _compare(name, a, b, rtol=1e-10):
    if a is None and b is None:
        return
    a = np.asarray(a)
    b = np.asarray(b)
    err = np.max(np.abs(a - b))
    # absolute floor scales with the array magnitude: near-zero entries
    # differ by cancellation noise, not by algorithm
    atol = 1e-12 * max(1.0, float(np.max(np.abs(b))))
    ok = np.allclose(a, b, rtol=rtol, atol=atol)
    status = "ok" if ok else "MISMATCH"
    print(f"    {name:10s} max|diff| = {err:.3e}  {status}")
    if not ok:
        raise SystemExit(f"backend mismatch in {name}")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n-r", type=int, default=24)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    nel, mech_kw, phase_kw, trans_kw = _setup(args.n_r)
    print(f"block: {nel} elements, repeat={args.repeat} (best-of)")

    labels = ("Ke", "fint", "eps_p", "acc", "eps_e", "sig",
              "psi_plus", "psi_p", "wp_inc", "sig_h")
    for title, call_args, names in (
            ("mech_batch", mech_kw, labels),
            ("phase_batch", phase_kw, ("Ke", "Fe")),
            ("transport_batch", trans_kw, ("Ke", "Fe"))):
        t_cy, out_cy = _time(getattr(_kernels_cy, title), call_args, args.repeat)
        t_py, out_py = _time(getattr(kernels_py, title), call_args, args.repeat)
        print(f"{title}: compiled {t_cy * 1e3:8.2f} ms   "
              f"numpy {t_py * 1e3:8.2f} ms   speedup {t_py / t_cy:5.2f}x")
        for name, a, b in zip(names, out_cy, out_py):
            _compare(name, a, b)


if __name__ == "__main__":
    main()
