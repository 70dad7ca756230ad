"""Continuous-density left-to-right HMMs with diagonal Gaussian mixtures.

One model per middle-zone symbol; words are chains of symbol models.  All
arithmetic is in the log domain with :data:`kernels.NEG` standing in for
minus infinity.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .kernels import NEG

LOG2PI = math.log(2 * math.pi)


def _log(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return np.where(p > 0, np.log(np.where(p > 0, p, 1.0)), NEG)


@dataclass
class GmmState:
    weights: np.ndarray  # (M,)
    means: np.ndarray  # (M, D)
    variances: np.ndarray  # (M, D)

    @property
    def n_mix(self) -> int:
        return int(self.weights.shape[0])

    @property
    def dim(self) -> int:
        return int(self.means.shape[1])

    def copy(self) -> "GmmState":
        return GmmState(self.weights.copy(), self.means.copy(), self.variances.copy())


def gmm_component_logpdf(state: GmmState, X: np.ndarray) -> np.ndarray:
    """``log c_k + log N(x_t; mu_k, diag var_k)`` for every frame and component."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != state.dim:
        raise ValueError(f"frame dim {X.shape[1]} does not match state dim {state.dim}")
    iv = 1.0 / state.variances
    const = -0.5 * (state.dim * LOG2PI + np.log(state.variances).sum(1) + (state.means ** 2 * iv).sum(1))
    quad = -0.5 * (X ** 2) @ iv.T + X @ (state.means * iv).T
    return quad + const + _log(state.weights)


def _lse_rows(a: np.ndarray) -> np.ndarray:
    m = a.max(axis=1)
    out = m + np.log(np.exp(a - m[:, None]).sum(axis=1))
    return np.maximum(out, NEG)


def gmm_logpdf(state: GmmState, x: np.ndarray) -> float | np.ndarray:
    """Log density of the mixture; a single vector gives a float."""
    x = np.asarray(x, dtype=np.float64)
    out = _lse_rows(gmm_component_logpdf(state, x))
    return float(out[0]) if x.ndim == 1 else out


@dataclass
class CharacterHmm:
    label: str
    states: list[GmmState]
    a_self: np.ndarray  # (N,) stay probability
    a_next: np.ndarray  # (N,) advance probability; for the last state this is the exit
    a_skip: np.ndarray | None = None  # (N,) optional skip over one state

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def trans(self) -> np.ndarray:
        """Full ``(N+2)^2`` matrix with non-emitting entry (0) and exit (N+1)."""
        N = self.n_states
        A = np.zeros((N + 2, N + 2))
        A[0, 1] = 1.0
        for i in range(N):
            A[i + 1, i + 1] = self.a_self[i]
            A[i + 1, i + 2] = self.a_next[i]
            if self.a_skip is not None and i + 3 <= N + 1:
                A[i + 1, i + 3] = self.a_skip[i]
        return A

    def copy(self) -> "CharacterHmm":
        return CharacterHmm(self.label, [s.copy() for s in self.states], self.a_self.copy(),
                            self.a_next.copy(), None if self.a_skip is None else self.a_skip.copy())


@dataclass
class ModelSet:
    models: dict[str, CharacterHmm]
    kind: str
    dim: int
    meta: dict = field(default_factory=dict)

    def labels(self) -> list[str]:
        return sorted(self.models)

    def check_symbols(self, words) -> None:
        missing = sorted({c for w in words for c in w} - set(self.models))
        if missing:
            raise ValueError(f"no model for symbols {''.join(missing)!r}")

    def min_frames(self, word: str) -> int:
        return sum(self.models[c].n_states for c in word)


# ----------------------------------------------------------------------------
# emission cache and chains
# ----------------------------------------------------------------------------


class EmissionTable:
    """Per-frame log densities of every state of every model.

    All components are stacked into one matrix so a whole sequence is scored
    with two matrix products.
    """

    def __init__(self, ms: ModelSet):
        self.index: dict[tuple[str, int], int] = {}
        self.comp_slices: list[tuple[int, int]] = []
        means, iv, const = [], [], []
        k = 0
        for lab in ms.labels():
            for j, st in enumerate(ms.models[lab].states):
                self.index[(lab, j)] = len(self.comp_slices)
                self.comp_slices.append((k, k + st.n_mix))
                k += st.n_mix
                v = 1.0 / st.variances
                means.append(st.means * v)
                iv.append(v)
                const.append(-0.5 * (st.dim * LOG2PI + np.log(st.variances).sum(1) + (st.means ** 2 * v).sum(1))
                             + _log(st.weights))
        self.mu_iv = np.vstack(means).T
        self.iv = np.vstack(iv).T
        self.const = np.concatenate(const)
        self.n_states = len(self.comp_slices)
        # component -> state map for the reduction
        self.owner = np.concatenate([np.full(b - a, i) for i, (a, b) in enumerate(self.comp_slices)])
        self.starts = np.array([a for a, _ in self.comp_slices])

    def components(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return -0.5 * (X ** 2) @ self.iv + X @ self.mu_iv + self.const

    def states(self, comp: np.ndarray) -> np.ndarray:
        """Reduce component log densities to state log densities (log-sum-exp)."""
        m = np.maximum.reduceat(comp, self.starts, axis=1)
        e = np.exp(comp - m[:, self.owner])
        out = m + np.log(np.add.reduceat(e, self.starts, axis=1))
        return np.maximum(out, NEG)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return self.states(self.components(X))


@dataclass
class Chain:
    word: str
    state_ids: np.ndarray  # column in the emission table for each chain state
    char_of: np.ndarray  # chain state -> character position
    lself: np.ndarray
    lnext: np.ndarray
    lskip: np.ndarray | None


def build_chain(ms: ModelSet, table: EmissionTable, word: str) -> Chain:
    ids, owner, ls, ln, lk = [], [], [], [], []
    skip = any(ms.models[c].a_skip is not None for c in word)
    for p, c in enumerate(word):
        m = ms.models[c]
        for j in range(m.n_states):
            ids.append(table.index[(c, j)])
            owner.append(p)
        ls.append(_log(m.a_self))
        ln.append(_log(m.a_next))
        if skip:
            sk = np.zeros(m.n_states) if m.a_skip is None else m.a_skip.copy()
            sk[-1] = 0.0  # no skip across a character boundary
            lk.append(_log(sk))
    return Chain(word, np.array(ids), np.array(owner), np.concatenate(ls), np.concatenate(ln),
                 np.concatenate(lk) if skip else None)


def chain_loglik(chain: Chain, logb_states: np.ndarray) -> float:
    """Forward log-likelihood given a (T, n_table_states) emission matrix."""
    logb = logb_states[:, chain.state_ids]
    if logb.shape[0] < len(chain.state_ids):
        return NEG
    alpha = kernels.chain_forward(logb, chain.lself, chain.lnext, chain.lskip)
    return float(max(alpha[-1, -1] + chain.lnext[-1], NEG))


def sequence_loglik(ms: ModelSet, word: str, frames: np.ndarray, table: EmissionTable | None = None) -> float:
    """``log P(O | word)`` summed over all state paths; ``NEG`` if too short."""
    ms.check_symbols([word])
    table = table or EmissionTable(ms)
    return chain_loglik(build_chain(ms, table, word), table(frames))


def viterbi(ms: ModelSet, word: str, frames: np.ndarray, table: EmissionTable | None = None):
    """Best path log score and the chain state index per frame."""
    table = table or EmissionTable(ms)
    ch = build_chain(ms, table, word)
    logb = table(frames)[:, ch.state_ids]
    if logb.shape[0] < len(ch.state_ids):
        return NEG, None
    score, path = kernels.chain_viterbi(logb, ch.lself, ch.lnext, ch.lskip)
    return max(score, NEG), path


# ----------------------------------------------------------------------------
# training
# ----------------------------------------------------------------------------


@dataclass
class TrainConfig:
    states: int = 8
    mixtures: int = 32
    iterations: int = 4
    min_occurrences: int = 3
    var_floor: float = 1e-2
    split_eps: float = 0.2
    tol: float = 1e-4  # per-frame log-likelihood improvement that ends a stage early
    skip: bool = False

    def validate(self) -> None:
        if self.states < 1 or self.mixtures < 1 or self.iterations < 1:
            raise ValueError("states, mixtures and iterations must be >= 1")


@dataclass
class TrainLog:
    history: list[tuple[int, int, float]] = field(default_factory=list)  # (mixtures, iteration, total log-lik)
    skipped: int = 0


def _flat_start(labels, dim, mean, var, cfg: TrainConfig) -> dict[str, CharacterHmm]:
    out = {}
    for lab in labels:
        states = [GmmState(np.ones(1), mean[None, :].copy(), var[None, :].copy()) for _ in range(cfg.states)]
        a_self = np.full(cfg.states, 0.5)
        a_next = np.full(cfg.states, 0.5)
        a_skip = None
        if cfg.skip:
            a_self, a_next, a_skip = np.full(cfg.states, 0.4), np.full(cfg.states, 0.4), np.full(cfg.states, 0.2)
            a_skip[-1] = 0.0
            a_next[-1] = 0.6
        out[lab] = CharacterHmm(lab, states, a_self, a_next, a_skip)
    return out


def split_mixtures(st: GmmState, target: int, eps: float = 0.2) -> GmmState:
    """Grow to ``target`` components by splitting the heaviest one repeatedly.

    A split replaces a component by two copies with half the weight and means
    moved by ``+-eps`` standard deviations.
    """
    w, mu, var = list(st.weights), list(st.means), list(st.variances)
    while len(w) < target:
        k = int(np.argmax(w))
        sd = np.sqrt(var[k])
        w[k] /= 2
        w.append(w[k])
        mu.append(mu[k] + eps * sd)
        mu[k] = mu[k] - eps * sd
        var.append(var[k].copy())
    return GmmState(np.array(w), np.array(mu), np.array(var))


def _stage_targets(target: int) -> list[int]:
    out, m = [], 1
    while m < target:
        out.append(m)
        m *= 2
    out.append(target)
    return out


class _Accum:
    def __init__(self, table: EmissionTable, dim: int, n_trans_states: int):
        K = len(table.owner)
        self.occ = np.zeros(K)
        self.sx = np.zeros((dim, K))
        self.sxx = np.zeros((dim, K))
        self.t_self = np.zeros(n_trans_states)
        self.t_next = np.zeros(n_trans_states)
        self.t_skip = np.zeros(n_trans_states)


def _e_step(ms: ModelSet, table: EmissionTable, data, acc: _Accum, trans_index) -> tuple[float, int, int]:
    total, used, skipped = 0.0, 0, 0
    for X, word in data:
        X = np.asarray(X, dtype=np.float64)
        ch = build_chain(ms, table, word)
        S, T = len(ch.state_ids), X.shape[0]
        if T < S:
            skipped += 1
            continue
        comp = table.components(X)
        st = table.states(comp)
        logb = st[:, ch.state_ids]
        alpha = kernels.chain_forward(logb, ch.lself, ch.lnext, ch.lskip)
        beta = kernels.chain_backward(logb, ch.lself, ch.lnext, ch.lskip)
        ll = alpha[-1, -1] + ch.lnext[-1]
        if ll <= NEG / 2:
            skipped += 1
            continue
        total += ll
        used += T
        gamma = np.exp(alpha + beta - ll)  # (T, S)
        # component posteriors: gamma_s * c_k N_k / b_s, gathered per table state
        occ_state = np.zeros((T, table.n_states))
        np.add.at(occ_state.T, ch.state_ids, gamma.T)
        post = np.exp(comp - st[:, table.owner]) * occ_state[:, table.owner]
        acc.occ += post.sum(0)
        acc.sx += X.T @ post
        acc.sxx += (X ** 2).T @ post
        # transitions
        tidx = trans_index[ch.state_ids]
        if T > 1:
            nb = logb[1:] + beta[1:]
            xs = np.exp(alpha[:-1] + ch.lself + nb - ll)
            np.add.at(acc.t_self, tidx, xs.sum(0))
            xn = np.zeros(S)
            if S > 1:
                xn[:-1] = np.exp(alpha[:-1, :-1] + ch.lnext[:-1] + nb[:, 1:] - ll).sum(0)
            if ch.lskip is not None and S > 2:
                xk = np.exp(alpha[:-1, :-2] + ch.lskip[:-2] + nb[:, 2:] - ll).sum(0)
                np.add.at(acc.t_skip, tidx[:-2], xk)
            np.add.at(acc.t_next, tidx, xn)
        acc.t_next[tidx[-1]] += math.exp(alpha[-1, -1] + ch.lnext[-1] - ll)
    return total, used, skipped


def _m_step(ms: ModelSet, table: EmissionTable, acc: _Accum, floor: np.ndarray, trans_index_of) -> None:
    for (lab, j), s in table.index.items():
        st = ms.models[lab].states[j]
        a, b = table.comp_slices[s]
        occ = acc.occ[a:b]
        tot = occ.sum()
        if tot <= 0:
            continue
        st.weights = occ / tot
        live = occ > 0
        mu = acc.sx[:, a:b].T[live] / occ[live, None]
        var = acc.sxx[:, a:b].T[live] / occ[live, None] - mu ** 2
        st.means[live] = mu
        st.variances[live] = np.maximum(var, floor)
    for lab, m in ms.models.items():
        for j in range(m.n_states):
            t = trans_index_of[(lab, j)]
            s_, n_, k_ = acc.t_self[t], acc.t_next[t], acc.t_skip[t]
            tot = s_ + n_ + k_
            if tot <= 0:
                continue
            m.a_self[j], m.a_next[j] = s_ / tot, n_ / tot
            if m.a_skip is not None:
                m.a_skip[j] = k_ / tot


def train_embedded(corpus, config: TrainConfig | None = None, kind: str = "phog",
                   log: TrainLog | None = None) -> ModelSet:
    """Embedded Baum-Welch training from a flat start.

    ``corpus`` is a sequence of ``(frames, middle transcription)`` pairs.
    Training runs one stage per mixture count (1, 2, 4, ... up to the
    target), each for ``config.iterations`` re-estimation passes or until the
    per-frame log-likelihood gain drops below ``config.tol``.
    """
    cfg = config or TrainConfig()
    cfg.validate()
    log = log if log is not None else TrainLog()
    data = [(np.asarray(X, dtype=np.float64), w) for X, w in corpus]
    if not data:
        raise ValueError("empty training corpus")
    counts: dict[str, int] = {}
    for _, w in data:
        for c in w:
            counts[c] = counts.get(c, 0) + 1
    rare = sorted(c for c, n in counts.items() if n < cfg.min_occurrences)
    if rare:
        raise ValueError(f"symbols below {cfg.min_occurrences} occurrences: {''.join(rare)!r}")
    allx = np.vstack([X for X, _ in data])
    dim = allx.shape[1]
    mean = allx.mean(0)
    gvar = allx.var(0)
    floor = np.maximum(cfg.var_floor * gvar, 1e-10)
    var0 = np.maximum(gvar, floor)
    labels = sorted(counts)
    ms = ModelSet(_flat_start(labels, dim, mean, var0, cfg), kind, dim,
                  {"states": cfg.states, "mixtures": cfg.mixtures, "iterations": cfg.iterations,
                   "var_floor": cfg.var_floor, "split_eps": cfg.split_eps, "skip": cfg.skip,
                   "feature_norm": "l1"})
    trans_index_of = {}
    for lab in labels:
        for j in range(cfg.states):
            trans_index_of[(lab, j)] = len(trans_index_of)
    for stage, m_target in enumerate(_stage_targets(cfg.mixtures)):
        if stage:
            for lab in labels:
                ms.models[lab].states = [split_mixtures(s, m_target, cfg.split_eps) for s in ms.models[lab].states]
        prev = None
        for it in range(cfg.iterations):
            table = EmissionTable(ms)
            tix = np.zeros(table.n_states, dtype=np.int64)
            for key, s in table.index.items():
                tix[s] = trans_index_of[key]
            acc = _Accum(table, dim, len(trans_index_of))
            total, frames, skipped = _e_step(ms, table, data, acc, tix)
            log.history.append((m_target, it, total))
            log.skipped = skipped
            if frames == 0:
                raise ValueError("no training sequence is long enough for its transcription")
            _m_step(ms, table, acc, floor, trans_index_of)
            per_frame = total / frames
            if prev is not None and per_frame - prev < cfg.tol:
                break
            prev = per_frame
    # likelihood of the final parameters
    table = EmissionTable(ms)
    tix = np.zeros(table.n_states, dtype=np.int64)
    for key, s in table.index.items():
        tix[s] = trans_index_of[key]
    total, _, _ = _e_step(ms, table, data, _Accum(table, dim, len(trans_index_of)), tix)
    log.history.append((cfg.mixtures, -1, total))
    ms.meta["final_loglik"] = total
    return ms


# ----------------------------------------------------------------------------
# decoding
# ----------------------------------------------------------------------------


@dataclass
class Alignment:
    spans: list[tuple[int, int]]  # half-open frame ranges, one per symbol

    @property
    def cuts(self) -> list[int]:
        return [e for _, e in self.spans[:-1]]


class Decoder:
    """Per-word Viterbi over a fixed lexicon with a shared emission cache."""

    def __init__(self, ms: ModelSet, words):
        words = list(dict.fromkeys(words))
        if not words:
            raise ValueError("empty lexicon")
        ms.check_symbols(words)
        self.ms = ms
        self.table = EmissionTable(ms)
        self.words = words
        self.chains = [build_chain(ms, self.table, w) for w in words]

    def scores(self, frames: np.ndarray) -> np.ndarray:
        logb = self.table(frames)
        T = logb.shape[0]
        out = np.full(len(self.words), NEG)
        for i, ch in enumerate(self.chains):
            if T < len(ch.state_ids):
                continue
            s, _ = kernels.chain_viterbi(logb[:, ch.state_ids], ch.lself, ch.lnext, ch.lskip)
            out[i] = max(s, NEG)
        return out

    def nbest(self, frames: np.ndarray, n: int = 5) -> list[tuple[str, float]]:
        if n < 1:
            raise ValueError("n must be >= 1")
        sc = self.scores(frames)
        order = sorted(range(len(self.words)), key=lambda i: (-sc[i], self.words[i]))
        return [(self.words[i], float(sc[i])) for i in order[:n]]


def decode_lexicon(frames, ms: ModelSet, lexicon) -> tuple[str, float]:
    return Decoder(ms, lexicon).nbest(frames, 1)[0]


def nbest(frames, ms: ModelSet, lexicon, n: int = 5) -> list[tuple[str, float]]:
    return Decoder(ms, lexicon).nbest(frames, n)


def forced_align(frames, transcription: str, ms: ModelSet, table: EmissionTable | None = None) -> Alignment:
    """Symbol boundaries from the best path through the fixed transcription."""
    if not transcription:
        raise ValueError("empty transcription")
    ms.check_symbols([transcription])
    table = table or EmissionTable(ms)
    ch = build_chain(ms, table, transcription)
    T = np.asarray(frames).shape[0]
    if T < len(ch.state_ids):
        raise ValueError(f"{T} frames cannot cover {len(ch.state_ids)} states")
    score, path = kernels.chain_viterbi(table(frames)[:, ch.state_ids], ch.lself, ch.lnext, ch.lskip)
    if score <= NEG / 2:
        raise ValueError("no feasible alignment")
    owner = ch.char_of[path]
    spans, start = [], 0
    for p in range(len(transcription)):
        end = int(np.searchsorted(owner, p, side="right"))
        spans.append((start, end))
        start = end
    return Alignment(spans)


def rescore_log_posterior(word_score: float, prior: float | None = None) -> float:
    """``log p(X|W) + log p(W)``; the word-independent ``log p(X)`` is dropped."""
    if prior is None:
        return float(word_score)
    if prior <= 0:
        return NEG
    return float(word_score) + math.log(prior)


# ----------------------------------------------------------------------------
# model file: "ZHMM 1" line, one JSON header line, float64 little-endian block
# ----------------------------------------------------------------------------

HMM_MAGIC = "ZHMM"
HMM_VERSION = 1


def save_models(path, ms: ModelSet) -> None:
    labels = ms.labels()
    header = {
        "kind": ms.kind, "dim": ms.dim, "meta": ms.meta, "labels": labels,
        "states": [ms.models[l].n_states for l in labels],
        "mixtures": [[s.n_mix for s in ms.models[l].states] for l in labels],
        "skip": [ms.models[l].a_skip is not None for l in labels],
    }
    parts = []
    for l in labels:
        m = ms.models[l]
        parts += [m.a_self, m.a_next]
        if m.a_skip is not None:
            parts.append(m.a_skip)
        for s in m.states:
            parts += [s.weights, s.means.ravel(), s.variances.ravel()]
    block = np.concatenate(parts).astype("<f8").tobytes()
    text = f"{HMM_MAGIC} {HMM_VERSION}\n" + json.dumps(header, sort_keys=True) + "\n"
    Path(path).write_bytes(text.encode("utf-8") + block)


def load_models(path) -> ModelSet:
    data = Path(path).read_bytes()
    try:
        nl1 = data.index(b"\n")
        nl2 = data.index(b"\n", nl1 + 1)
        magic, ver = data[:nl1].decode().split()
        header = json.loads(data[nl1 + 1:nl2].decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as e:
        raise ValueError(f"not a model file: {path}") from e
    if magic != HMM_MAGIC or int(ver) != HMM_VERSION:
        raise ValueError(f"unsupported model file {magic} {ver}")
    vals = np.frombuffer(data[nl2 + 1:], dtype="<f8")
    D = header["dim"]
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > vals.size:
            raise ValueError("model file truncated")
        out = vals[pos:pos + n].copy()
        pos += n
        return out

    models = {}
    for l, N, mixes, sk in zip(header["labels"], header["states"], header["mixtures"], header["skip"]):
        a_self, a_next = take(N), take(N)
        a_skip = take(N) if sk else None
        states = []
        for M in mixes:
            states.append(GmmState(take(M), take(M * D).reshape(M, D), take(M * D).reshape(M, D)))
        models[l] = CharacterHmm(l, states, a_self, a_next, a_skip)
    if pos != vals.size:
        raise ValueError("trailing data in model file")
    return ModelSet(models, header["kind"], D, header["meta"])
