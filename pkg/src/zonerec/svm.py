"""RBF support vector machines for zone modifiers.

Binary machines are trained by SMO (:func:`kernels.smo_solve`), calibrated
with Platt's sigmoid and combined one-vs-one by normalised voting.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import features, kernels

GLYPH_SIZE = 150
SMO_TOL = 1e-3
SMO_MAX_ITER = 100_000
C_GRID = tuple(4.0 ** k for k in range(-1, 6))  # 2^-2 .. 2^10
GAMMA_GRID = tuple(4.0 ** k for k in range(-5, 2))  # 2^-10 .. 2^2


def rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    d = (A ** 2).sum(1)[:, None] + (B ** 2).sum(1)[None, :] - 2 * A @ B.T
    return np.exp(-gamma * np.maximum(d, 0.0))


@dataclass
class BinarySvm:
    support: np.ndarray  # (n_sv, dim)
    coef: np.ndarray  # alpha_i * y_i
    b: float
    gamma: float
    C: float = 1.0
    iterations: int = 0

    @property
    def dim(self) -> int:
        return int(self.support.shape[1])


def _rho(alpha: np.ndarray, G: np.ndarray, y: np.ndarray, C: float) -> float:
    """Offset from the gradient, averaged over free vectors (libsvm rule)."""
    yG = y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        return float(yG[free].mean())
    at_up = alpha >= C
    at_lo = alpha <= 0
    ub_mask = (at_up & (y < 0)) | (at_lo & (y > 0))
    lb_mask = (at_up & (y > 0)) | (at_lo & (y < 0))
    ub = yG[ub_mask].min() if ub_mask.any() else np.inf
    lb = yG[lb_mask].max() if lb_mask.any() else -np.inf
    if not np.isfinite(ub):
        return float(lb)
    if not np.isfinite(lb):
        return float(ub)
    return float((ub + lb) / 2)


def smo_train(X, y, C: float, gamma: float, tol: float = SMO_TOL, max_iter: int = SMO_MAX_ITER,
              K: np.ndarray | None = None) -> BinarySvm:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if set(np.unique(y)) - {-1.0, 1.0}:
        raise ValueError("labels must be -1 or +1")
    if np.unique(y).size < 2:
        raise ValueError("both classes are needed to train a binary SVM")
    if C <= 0 or gamma <= 0:
        raise ValueError("C and gamma must be positive")
    if K is None:
        K = rbf_kernel(X, X, gamma)
    alpha, G, it = kernels.smo_solve(K, y, C, tol, max_iter)
    rho = _rho(alpha, G, y, C)
    sv = alpha > 0
    return BinarySvm(X[sv].copy(), (alpha * y)[sv], -rho, float(gamma), float(C), it)


def decision(m: BinarySvm, x) -> float | np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    X = np.atleast_2d(x)
    if X.shape[1] != m.dim:
        raise ValueError(f"input dim {X.shape[1]} does not match machine dim {m.dim}")
    f = rbf_kernel(X, m.support, m.gamma) @ m.coef + m.b
    return float(f[0]) if x.ndim == 1 else f


# ----------------------------------------------------------------------------
# Platt scaling
# ----------------------------------------------------------------------------


def _platt_nll(A: float, B: float, f: np.ndarray, t: np.ndarray) -> float:
    z = A * f + B
    # -[t log p + (1-t) log(1-p)] with p = 1/(1+exp(z)), written stably
    return float(np.sum(np.logaddexp(0, z) - (1 - t) * z))


def platt_targets(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y)
    n_pos = int((y > 0).sum())
    n_neg = y.size - n_pos
    return np.where(y > 0, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))


def platt_fit(f, y, max_iter: int = 100, eps: float = 1e-10) -> tuple[float, float]:
    """Fit ``p(y=+1|f) = 1 / (1 + exp(A f + B))`` by Newton's method.

    Uses Platt's smoothed targets, a small ridge on the Hessian and
    backtracking line search.
    """
    f = np.asarray(f, dtype=np.float64)
    y = np.asarray(y)
    n_pos = int((y > 0).sum())
    if n_pos == 0 or n_pos == y.size:
        raise ValueError("Platt scaling needs both labels")
    t = platt_targets(y)
    A, B = 0.0, math.log((y.size - n_pos + 1.0) / (n_pos + 1.0))
    nll = _platt_nll(A, B, f, t)
    for _ in range(max_iter):
        z = A * f + B
        p = 1.0 / (1.0 + np.exp(-np.abs(z)))  # sigmoid(|z|)
        p = np.where(z >= 0, 1 - p, p)  # 1 / (1 + exp(z))
        q = 1 - p
        d1 = t - p
        d2 = p * q
        gA, gB = float(f @ d1), float(d1.sum())
        if abs(gA) < 1e-5 and abs(gB) < 1e-5:
            break
        h11, h22, h21 = float(f @ (f * d2)) + 1e-12, float(d2.sum()) + 1e-12, float(f @ d2)
        det = h11 * h22 - h21 * h21
        dA = -(h22 * gA - h21 * gB) / det
        dB = -(-h21 * gA + h11 * gB) / det
        gd = gA * dA + gB * dB
        step = 1.0
        while step >= eps:
            nA, nB = A + step * dA, B + step * dB
            new = _platt_nll(nA, nB, f, t)
            if new < nll + 1e-4 * step * gd:
                A, B, nll = nA, nB, new
                break
            step /= 2
        else:
            break
    return float(A), float(B)


def platt_prob(A: float, B: float, f) -> np.ndarray | float:
    z = A * np.asarray(f, dtype=np.float64) + B
    out = np.where(z >= 0, np.exp(-z) / (1 + np.exp(-z)), 1 / (1 + np.exp(np.minimum(z, 0))))
    return float(out) if out.ndim == 0 else out


def _cv_decisions(X, y, C, gamma, folds: int, K: np.ndarray) -> np.ndarray:
    """Out-of-fold decision values; folds stripe over the sample order."""
    n = len(y)
    f = np.empty(n)
    idx = np.arange(n)
    for k in range(folds):
        test = idx % folds == k
        tr = ~test
        if np.unique(y[tr]).size < 2:
            return None
        m = smo_train(X[tr], y[tr], C, gamma, K=K[np.ix_(tr, tr)])
        f[test] = decision(m, X[test])
    return f


# ----------------------------------------------------------------------------
# multi-class model
# ----------------------------------------------------------------------------


def glyph_features(img: np.ndarray) -> np.ndarray:
    """Resize a glyph crop to 150x150 and take its 168-value PHOG."""
    a = np.asarray(img)
    if a.dtype == bool:
        a = a.astype(np.float64)
    else:
        a = a.astype(np.float64)
        if a.max() > 1:
            a = 1.0 - a / 255.0  # gray: ink is dark
    if a.size == 0:
        raise ValueError("empty glyph")
    im = Image.fromarray(a.astype(np.float32), mode="F").resize((GLYPH_SIZE, GLYPH_SIZE), Image.Resampling.BILINEAR)
    return features.phog(np.asarray(im, dtype=np.float64))


@dataclass
class SvmModel:
    labels: list[str]
    machines: dict[tuple[int, int], BinarySvm]
    platt: dict[tuple[int, int], tuple[float, float]]
    C: float
    gamma: float
    meta: dict = field(default_factory=dict)

    def pair_probs(self, x: np.ndarray) -> dict[tuple[int, int], float]:
        """``P(class i | i or j)`` for each machine ``(i, j)``, ``i < j``."""
        return {p: platt_prob(*self.platt[p], decision(m, x)) for p, m in self.machines.items()}

    def proba_vector(self, x: np.ndarray) -> dict[str, float]:
        k = len(self.labels)
        if k == 1:
            return {self.labels[0]: 1.0}
        score = np.zeros(k)
        for (i, j), r in self.pair_probs(np.asarray(x, dtype=np.float64)).items():
            score[i] += r
            score[j] += 1.0 - r
        score /= k * (k - 1) / 2
        return {lab: float(s) for lab, s in zip(self.labels, score)}

    def predict_vector(self, x) -> str:
        post = self.proba_vector(x)
        return sorted(post.items(), key=lambda kv: (-kv[1], kv[0]))[0][0]

    def predict_proba(self, img: np.ndarray) -> dict[str, float]:
        return self.proba_vector(glyph_features(img))

    def predict(self, img: np.ndarray) -> str:
        return self.predict_vector(glyph_features(img))

    def __call__(self, img):
        return self.predict_proba(img)


def train_svm(X, labels, C: float, gamma: float, platt_folds: int = 3) -> SvmModel:
    """One-vs-one RBF machines over feature vectors ``X``.

    Platt parameters are fitted on out-of-fold decision values when every
    pair has at least ``platt_folds`` examples per class, else on training
    decision values.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    labels = [str(l) for l in labels]
    if len(labels) != X.shape[0]:
        raise ValueError("one label per row of X is required")
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise ValueError("at least two classes are needed")
    lab = np.array([classes.index(l) for l in labels])
    K_all = rbf_kernel(X, X, gamma)
    machines, platt = {}, {}
    for i, j in itertools.combinations(range(len(classes)), 2):
        sel = np.flatnonzero((lab == i) | (lab == j))
        y = np.where(lab[sel] == i, 1.0, -1.0)
        K = K_all[np.ix_(sel, sel)]
        m = smo_train(X[sel], y, C, gamma, K=K)
        f = None
        if platt_folds > 1 and min((y > 0).sum(), (y < 0).sum()) >= platt_folds:
            f = _cv_decisions(X[sel], y, C, gamma, platt_folds, K)
        if f is None:
            f = decision(m, X[sel])
        machines[(i, j)] = m
        platt[(i, j)] = platt_fit(f, y)
    return SvmModel(classes, machines, platt, float(C), float(gamma), {"platt_folds": platt_folds})


def accuracy(model: SvmModel, X, labels) -> float:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if len(labels) == 0:
        return 0.0
    hits = sum(model.predict_vector(x) == str(l) for x, l in zip(X, labels))
    return hits / len(labels)


def grid_search(train: tuple, val: tuple, C_grid=C_GRID, gamma_grid=GAMMA_GRID,
                fine: bool = True) -> tuple[float, float]:
    """Coarse grid then a x{0.5, 1, 2} refinement around the best cell.

    ``train`` and ``val`` are ``(X, labels)`` pairs.  The best validation
    accuracy wins; ties go to the smaller C, then the smaller gamma.
    """
    Cs, gs = sorted(set(map(float, C_grid))), sorted(set(map(float, gamma_grid)))
    if not Cs or not gs:
        raise ValueError("empty parameter grid")
    Xtr, ytr = train
    Xva, yva = val
    if len(yva) == 0:
        raise ValueError("empty validation split")
    cache: dict[tuple[float, float], float] = {}

    def score(C, g):
        if (C, g) not in cache:
            cache[(C, g)] = accuracy(train_svm(Xtr, ytr, C, g, platt_folds=0), Xva, yva)
        return cache[(C, g)]

    def best_of(cells):
        return min(cells, key=lambda cg: (-score(*cg), cg[0], cg[1]))

    C0, g0 = best_of([(C, g) for C in Cs for g in gs])
    if not fine:
        return C0, g0
    return best_of([(C0 * a, g0 * b) for a in (0.5, 1.0, 2.0) for b in (0.5, 1.0, 2.0)])


# ----------------------------------------------------------------------------
# model file, same layout as the HMM container
# ----------------------------------------------------------------------------

SVM_MAGIC = "ZSVM"
SVM_VERSION = 1


def save_svm(path, m: SvmModel) -> None:
    pairs = sorted(m.machines)
    header = {
        "labels": m.labels, "C": m.C, "gamma": m.gamma, "meta": m.meta,
        "pairs": [[i, j, int(m.machines[(i, j)].support.shape[0]), m.machines[(i, j)].iterations] for i, j in pairs],
        "dim": m.machines[pairs[0]].dim if pairs else 0,
    }
    parts = []
    for p in pairs:
        bm = m.machines[p]
        parts += [bm.support.ravel(), bm.coef, np.array([bm.b, bm.gamma, bm.C, *m.platt[p]])]
    block = np.concatenate(parts).astype("<f8").tobytes() if parts else b""
    text = f"{SVM_MAGIC} {SVM_VERSION}\n" + json.dumps(header, sort_keys=True) + "\n"
    Path(path).write_bytes(text.encode("utf-8") + block)


def load_svm(path) -> SvmModel:
    data = Path(path).read_bytes()
    try:
        nl1 = data.index(b"\n")
        nl2 = data.index(b"\n", nl1 + 1)
        magic, ver = data[:nl1].decode().split()
        header = json.loads(data[nl1 + 1:nl2].decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as e:
        raise ValueError(f"not a model file: {path}") from e
    if magic != SVM_MAGIC or int(ver) != SVM_VERSION:
        raise ValueError(f"unsupported model file {magic} {ver}")
    vals = np.frombuffer(data[nl2 + 1:], dtype="<f8")
    D = header["dim"]
    pos = 0
    machines, platt = {}, {}
    for i, j, n_sv, it in header["pairs"]:
        need = n_sv * D + n_sv + 5
        if pos + need > vals.size:
            raise ValueError("model file truncated")
        sv = vals[pos:pos + n_sv * D].reshape(n_sv, D).copy()
        pos += n_sv * D
        coef = vals[pos:pos + n_sv].copy()
        pos += n_sv
        b, g, C, A, B = vals[pos:pos + 5]
        pos += 5
        machines[(i, j)] = BinarySvm(sv, coef, float(b), float(g), float(C), int(it))
        platt[(i, j)] = (float(A), float(B))
    if pos != vals.size:
        raise ValueError("trailing data in model file")
    return SvmModel(header["labels"], machines, platt, header["C"], header["gamma"], header["meta"])
