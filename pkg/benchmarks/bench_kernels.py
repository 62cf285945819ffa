"""Compare the compiled and numpy E-step kernels.

Usage::

    python3 benchmarks/bench_kernels.py [--sequences 500] [--repeat 3]

Prints the E-step time of both backends on one synthetic dataset, then the
forward/backward time against sequence length m with the fitted log-log slope
(close to 1 for the linear-in-m recursion).
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from stagetime import _backend
from stagetime.em import e_step
from stagetime.generator import sample_dataset, sample_model
from stagetime.inference import LogParams, pack, time_log_weights
from stagetime.model import ActionVocab, EventSequence, StageRange


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def available_backends():
    names = ["python"]
    try:
        _backend.get("cython")
        names.insert(0, "cython")
    except ImportError:
        print("compiled extension not built; run `python3 setup.py build_ext --inplace`")
    return names


def bench_estep(n_seq, repeat, backends):
    rng = np.random.default_rng(0)
    vocab = ActionVocab.from_labels([f"a{i}" for i in range(10)])
    params = sample_model(vocab, StageRange(3, 4), 2, "weibull", rng=rng)
    data, _, _ = sample_dataset(params, n_seq, rng)
    packed = pack(params, data)
    n_events = int(sum(len(s) for s in data))
    print(f"E-step, {n_seq} sequences, {n_events} events, k=2, r=4, |A|=11")
    results = {}
    for name in backends:
        results[name] = best_of(lambda: e_step(params, data, packed=packed, backend=name), repeat)
        print(f"  {name:>7}: {results[name] * 1e3:9.2f} ms")
    if len(results) == 2:
        print(f"  speed-up: {results['python'] / results['cython']:.1f}x")


def bench_length(repeat, backends, lengths=(100, 200, 400, 800, 1600)):
    rng = np.random.default_rng(1)
    vocab = ActionVocab.from_labels([f"a{i}" for i in range(10)])
    params = sample_model(vocab, StageRange(1, 4), 3, "exponential", rng=rng)
    lp = LogParams(params)
    print("forward/backward time against m (k=3, r=4)")
    for name in backends:
        kern = _backend.get(name)
        secs = []
        for m in lengths:
            actions = np.append(rng.integers(0, vocab.end_id, m - 1), vocab.end_id)
            times = np.append(0.0, rng.exponential(1.0, m - 1))
            seq = EventSequence(actions, times)
            logw = time_log_weights(params, seq.actions, seq.times)
            def run():
                kern.forward_backward(lp.lpiA, lp.lA, lp.lSstay, lp.lSadv, logw, seq.actions, 1, 4)
            secs.append(best_of(run, repeat))
        slope = np.polyfit(np.log(lengths), np.log(secs), 1)[0]
        cells = "  ".join(f"m={m}: {s * 1e3:.2f}ms" for m, s in zip(lengths, secs))
        print(f"  {name:>7}: {cells}  slope={slope:.2f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sequences", type=int, default=500)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    backends = available_backends()
    bench_estep(args.sequences, args.repeat, backends)
    bench_length(args.repeat, backends)


if __name__ == "__main__":
    main()
