"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--repeat 5]

Each kernel runs once per backend to warm up (numba compiles on first call),
then the best of ``--repeat`` runs is reported. Results are also checked for
agreement so a speed-up never hides a divergence.
"""

import argparse
import timeit

import numpy as np

from zonerec import _accel, kernels, svm, synth


def cases(rng):
    T, S = 120, 40
    logb = rng.normal(-5, 2, (T, S))
    lself = np.log(rng.uniform(0.3, 0.9, S))
    lnext = np.log1p(-np.exp(lself))
    a = synth.Alphabet()
    lex = synth.make_lexicon(a, 5, seed=0)
    mask = synth.render_word(a, lex.entries[0], np.random.default_rng(0)).mask
    X = rng.normal(size=(150, 4))
    y = np.where(X[:, 0] * X[:, 1] > 0, 1.0, -1.0)
    K = svm.rbf_kernel(X, X, 0.5)
    s1 = rng.integers(0, 20, 60).astype(np.int64)
    s2 = rng.integers(0, 20, 60).astype(np.int64)
    return {
        "chain_forward": (lambda: kernels.chain_forward(logb, lself, lnext), None),
        "chain_viterbi": (lambda: kernels.chain_viterbi(logb, lself, lnext)[0], None),
        "thin": (lambda: kernels.thin(mask), lambda r: r.tobytes()),
        "levenshtein": (lambda: kernels.levenshtein_codes(s1, s2), int),
        "smo_solve": (lambda: kernels.smo_solve(K, y, 1.0)[0], lambda r: np.round(r, 6).tobytes()),
    }


def run(fn, use_numba, repeat):
    _accel.USE_NUMBA = use_numba
    out = fn()  # warm-up and result
    best = min(timeit.repeat(fn, number=1, repeat=repeat))
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    saved = _accel.USE_NUMBA
    print(f"{'kernel':<15}{'numpy ms':>11}{'numba ms':>11}{'speed-up':>10}  agree")
    try:
        for name, (fn, key) in cases(np.random.default_rng(0)).items():
            t_np, r_np = run(fn, False, args.repeat)
            t_nb, r_nb = run(fn, True, args.repeat)
            agree = bool(np.allclose(r_np, r_nb, rtol=0, atol=1e-9)) if key is None else key(r_np) == key(r_nb)
            print(f"{name:<15}{1e3 * t_np:>11.2f}{1e3 * t_nb:>11.2f}{t_np / t_nb:>9.1f}x  {agree}")
    finally:
        _accel.USE_NUMBA = saved


if __name__ == "__main__":
    main()
