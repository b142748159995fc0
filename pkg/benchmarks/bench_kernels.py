"""Time the numba kernels against their numpy twins, then a full MPC session under each backend.

    python benchmarks/bench_kernels.py [--repeats 5] [--skip-session]

Kernel timings call both implementations in one process (numba compile time is
excluded by a warm-up call). The session timing runs ``trustlds simulate`` in a
subprocess with and without ``TRUSTLDS_DISABLE_NUMBA=1``, so it includes import
and, on a cold cache, compilation.
"""
import argparse
import os
import subprocess
import sys
import tempfile
import time
import timeit
from pathlib import Path

import numpy as np

from trustlds import kernels
from trustlds.dynamics import default_model
from trustlds.estimation.kalman import _drive
from trustlds.policy import CEState, KnownContext, MPCConfig, pack_objective
from trustlds.domain import CollectionComplexity, TrackingComplexity, TrustEvent


def objective_case(model, n_candidates=256):
    packed = pack_objective(CEState(6.0, 7.0), KnownContext(CollectionComplexity.HIGH, TrackingComplexity.NORMAL),
                            MPCConfig(), model)
    Q = np.random.default_rng(0).uniform(size=(n_candidates, 5))
    args = (Q, packed.t0, packed.g0, packed.eps0, packed.beta1, packed.beta2, packed.trust_ab,
            packed.eng_abc, packed.act, packed.env, packed.mode, packed.track_sd, packed.literal)
    return kernels.ce_objective_nb, kernels.ce_objective_np, args


def kalman_case(model, n=600):
    rng = np.random.default_rng(1)
    tp = model.trust
    events = [TrustEvent(int(e)) for e in rng.integers(1, 8, size=n)]
    y = rng.normal(7.0, 1.0, size=n)
    mask = np.ones(n, dtype=np.bool_)
    args = (tp.a, _drive(tp, events), tp.c, tp.q_process, tp.r_measure, 7.0, 1.0, y, mask)
    return kernels.kalman_filter_nb, kernels.kalman_filter_np, args


def smoother_case(model, n=600):
    _, _, kargs = kalman_case(model, n)
    m_pred, p_pred, m_filt, p_filt, _ = kernels.kalman_filter_np(*kargs)
    args = (model.trust.a, 7.0, 1.0, m_pred, p_pred, m_filt, p_filt)
    return kernels.rts_smoother_nb, kernels.rts_smoother_np, args


def pf_case(model, n=10_000):
    rng = np.random.default_rng(2)
    parts = np.column_stack((rng.normal(7, 1, n), rng.normal(7, 1, n)))
    logw = np.full(n, -np.log(n))
    row = model.action.high
    args = (parts, logw, 1, np.array([row.a_t, row.a_g, row.bias]), model.trust.b[3], model.engagement.b[5],
            model.trust.a, model.engagement.a, rng.normal(0, 0.4, n), rng.normal(0, 1.2, n),
            80.0, model.engagement.c, model.engagement.r_measure, 7.2, model.trust.c, model.trust.r_measure)
    return kernels.pf_update_nb, kernels.pf_update_np, args


def resample_case(model, n=10_000):
    w = np.random.default_rng(3).random(n)
    return kernels.systematic_resample_nb, kernels.systematic_resample_np, (w / w.sum(), 0.37)


def best_of(fn, args, repeats):
    fn(*args)  # warm-up (compiles the numba variant)
    number = 1
    while timeit.timeit(lambda: fn(*args), number=number) < 0.05:
        number *= 2
    return min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeats)) / number


def session_seconds(disable_numba, workdir):
    env = dict(os.environ)
    env.pop("TRUSTLDS_DISABLE_NUMBA", None)
    if disable_numba:
        env["TRUSTLDS_DISABLE_NUMBA"] = "1"
    out = Path(workdir) / ("np.csv" if disable_numba else "nb.csv")
    cmd = [sys.executable, "-m", "trustlds.cli", "simulate", "--seed", "1", "--policy", "mpc", "--output", str(out)]
    start = time.perf_counter()
    subprocess.run(cmd, env=env, check=True, capture_output=True)
    return time.perf_counter() - start, out.read_bytes()


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--skip-session", action="store_true")
    args = ap.parse_args()
    model = default_model()
    cases = {
        "ce_objective (256 x N=5)": objective_case(model),
        "kalman filter (600 steps)": kalman_case(model),
        "rts smoother (600 steps)": smoother_case(model),
        "pf update (N=1e4)": pf_case(model),
        "systematic resample (N=1e4)": resample_case(model),
    }
    print(f"{'kernel':<30}{'numba':>12}{'numpy':>12}{'speedup':>10}")
    for name, (nb, np_fn, fargs) in cases.items():
        t_nb, t_np = best_of(nb, fargs, args.repeats), best_of(np_fn, fargs, args.repeats)
        print(f"{name:<30}{t_nb * 1e6:>10.1f}us{t_np * 1e6:>10.1f}us{t_np / t_nb:>9.1f}x")
    if args.skip_session:
        return
    with tempfile.TemporaryDirectory() as tmp:
        t_nb, out_nb = session_seconds(False, tmp)
        t_np, out_np = session_seconds(True, tmp)
    print(f"\n30-trial MPC session: numba {t_nb:.2f} s, numpy {t_np:.2f} s "
          f"(outputs {'identical' if out_nb == out_np else 'differ in the last bits'})")


if __name__ == "__main__":
    main()
