"""Exact and upper-bound BER of OOK links with symbol-by-symbol detection.

Fading is averaged with Gauss-Hermite quadrature in the log-amplitude domain
(a tensor-product rule for several links), ISI by enumerating the preceding
bit patterns.  The Fenton-Wilkinson path replaces the weighted sum of
log-normal branch gains by one log-normal, reducing the MIMO average to a
single one-dimensional rule.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

from .fading import FadingSpec, fw_equivalent
from .link import GammaSet, MimoScenario, gaussian_q

L_CAP = 14
TENSOR_DIM_CAP = 4
DEFAULT_PER_DIM_ORDER = 20
_FALLBACK_NODE_BUDGET = 200_000
_CHUNK_ELEMENTS = 4_000_000


class BerError(ValueError):
    """Raised when a BER evaluation is outside the engine's limits."""


@dataclass(frozen=True)
class GhqRule:
    order: int
    nodes: np.ndarray
    weights: np.ndarray


@dataclass
class BerResult:
    ber: float
    method: str
    diagnostics: dict = field(default_factory=dict)


@lru_cache(maxsize=64)
def _ghq(order: int):
    n = order
    x = np.empty(n)
    w = np.empty(n)
    pim4 = math.pi**-0.25
    z = 0.0
    for i in range((n + 1) // 2):
        # asymptotic starting points for the largest roots, then extrapolation
        if i == 0:
            z = math.sqrt(2 * n + 1) - 1.85575 * (2 * n + 1) ** (-1 / 6)
        elif i == 1:
            z -= 1.14 * n**0.426 / z
        elif i == 2:
            z = 1.86 * z - 0.86 * x[0]
        elif i == 3:
            z = 1.91 * z - 0.91 * x[1]
        else:
            z = 2.0 * z - x[i - 2]
        for _ in range(100):
            # orthonormal Hermite recurrence: no overflow for large orders
            p1, p2 = pim4, 0.0
            for j in range(1, n + 1):
                p3, p2 = p2, p1
                p1 = z * math.sqrt(2.0 / j) * p2 - math.sqrt((j - 1) / j) * p3
            pp = math.sqrt(2.0 * n) * p2
            z_old = z
            z = z_old - p1 / pp
            if abs(z - z_old) <= 1e-15 * max(1.0, abs(z)):
                break
        else:
            raise BerError(f"Hermite root {i} of order {n} did not converge")
        x[i], x[n - 1 - i] = z, -z
        w[i] = w[n - 1 - i] = 2.0 / (pp * pp)
    if n % 2:
        x[n // 2] = 0.0
    return x[::-1].copy(), w[::-1].copy()


def ghq_rule(order: int) -> GhqRule:
    """Gauss-Hermite nodes (roots of H_order) and weights for weight exp(-x^2)."""
    if not 1 <= order <= 128:
        raise BerError("quadrature order must lie in [1, 128]")
    x, w = _ghq(order)
    x.setflags(write=False)
    w.setflags(write=False)
    return GhqRule(order, x, w)


def _csum(values) -> float:
    # exactly rounded, hence independent of summation order
    return math.fsum(np.asarray(values, dtype=float).ravel().tolist())


def _avg_q(C: float, mu: float, sigma2: float, rule: GhqRule) -> float:
    if sigma2 == 0:
        return gaussian_q(C * math.exp(2 * mu))
    gains = np.exp(2 * rule.nodes * math.sqrt(2 * sigma2) + 2 * mu)
    return _csum(rule.weights * gaussian_q(C * gains)) / math.sqrt(math.pi)


def avg_q_over_lognormal(C: float, spec, rule: GhqRule) -> float:
    """Average of ``Q(C * h)`` over a log-normal ``h = exp(2X)``.

    ``spec`` is anything exposing log-amplitude ``mu`` and ``sigma2``
    (``FadingSpec`` or ``LognormalEquivalent``).
    """
    if not C > 0:
        raise ValueError("C must be positive")
    return _avg_q(C, spec.mu, spec.sigma2, rule)


@lru_cache(maxsize=32)
def _sequences(L: int) -> np.ndarray:
    """All 2^L previous-bit patterns, column k-1 holding bit b_{-k}."""
    if L == 0:
        return np.zeros((1, 0))
    return np.array(list(itertools.product((0.0, 1.0), repeat=L)))


def _check_memory(L: int, L_cap: int):
    if L > L_cap:
        raise BerError(
            f"channel memory {L} exceeds cap {L_cap}; use the upper bound or the MC oracle"
        )


def ber_siso_exact(
    g: GammaSet, spec: FadingSpec, sigma_Tb: float, rule: GhqRule, L_cap: int = L_CAP
) -> BerResult:
    L = g.memory
    _check_memory(L, L_cap)
    seqs = _sequences(L)
    half = g.gamma_s / 2
    terms = []
    for isi in seqs @ g.gamma_isi:
        p0 = _avg_q((half - isi) / sigma_Tb, spec.mu, spec.sigma2, rule)
        p1 = _avg_q((half + isi) / sigma_Tb, spec.mu, spec.sigma2, rule)
        terms.append(0.5 * p0 + 0.5 * p1)
    ber = _csum(terms) / len(terms)
    return BerResult(ber, "exact", {"sequences": len(terms), "order": [rule.order]})


def ber_siso_upper(g: GammaSet, spec: FadingSpec, sigma_Tb: float, rule: GhqRule) -> BerResult:
    half = g.gamma_s / 2
    p0 = _avg_q((half - g.total_isi) / sigma_Tb, spec.mu, spec.sigma2, rule)
    p1 = _avg_q(half / sigma_Tb, spec.mu, spec.sigma2, rule)
    return BerResult(0.5 * p0 + 0.5 * p1, "upper_bound", {"sequences": 2, "order": [rule.order]})


def _link_arrays(scn: MimoScenario):
    links = scn.links
    L_max = scn.max_memory
    gs = np.array([g.gamma_s for g, _ in links])
    isi = np.zeros((len(links), L_max))
    for n, (g, _) in enumerate(links):
        isi[n, : g.memory] = g.gamma_isi
    mus = np.array([f.mu for _, f in links])
    s2 = np.array([f.sigma2 for _, f in links])
    return gs, isi, mus, s2, L_max


def _branch_weights(gs, isi, seq, b0):
    """Weights G of each link's fading gain in the decision statistic."""
    sign = 1.0 if b0 else -1.0
    return gs + sign * 2.0 * (isi @ seq)


class _TensorRule:
    """Product Gauss-Hermite rule over the links that actually fade."""

    def __init__(self, mus, s2, order):
        self.random = np.flatnonzero(s2 > 0)
        self.fixed = np.flatnonzero(s2 == 0)
        self.order = order
        d = self.random.size
        if d == 0:
            self.gains = np.ones((1, 0))
            self.weights = np.ones(1)
            return
        x, w = _ghq(order)
        g1 = np.exp(2 * np.outer(np.sqrt(2 * s2[self.random]), x) + 2 * mus[self.random, None])
        grids = np.meshgrid(*[np.arange(order)] * d, indexing="ij")
        idx = np.stack([gr.ravel() for gr in grids], axis=1)
        self.gains = np.stack([g1[k, idx[:, k]] for k in range(d)], axis=1)
        self.weights = np.prod(w[idx], axis=1) / math.pi ** (d / 2)

    def average_q(self, G: np.ndarray, scale: float) -> np.ndarray:
        """Average of Q(scale * sum(G h)) for each row of G (shape S x links)."""
        G = np.atleast_2d(G)
        fixed = G[:, self.fixed].sum(axis=1) if self.fixed.size else np.zeros(G.shape[0])
        nodes = self.weights.size
        out = np.empty(G.shape[0])
        step = max(1, _CHUNK_ELEMENTS // nodes)
        for lo in range(0, G.shape[0], step):
            block = G[lo : lo + step]
            stat = self.gains @ block[:, self.random].T + fixed[lo : lo + step]
            vals = self.weights[:, None] * gaussian_q(scale * stat)
            for c in range(vals.shape[1]):
                out[lo + c] = _csum(vals[:, c])
        return out


def _tensor_probs(scn: MimoScenario, pairs, order: int):
    gs, isi, mus, s2, _ = _link_arrays(scn)
    rule = _TensorRule(mus, s2, order)
    G = np.array([_branch_weights(gs, isi, seq, b0) for seq, b0 in pairs])
    scale = 1.0 / (2.0 * math.sqrt(scn.N) * scn.noise_std)
    return rule.average_q(G, scale), rule


def _tensor_order(scn: MimoScenario, rule: GhqRule, per_dim_order):
    d = scn.M * scn.N
    if d > TENSOR_DIM_CAP:
        raise BerError(
            f"tensor quadrature limited to M*N <= {TENSOR_DIM_CAP}; use ber_mimo_fw"
        )
    if per_dim_order is None:
        per_dim_order = rule.order if d == 1 else DEFAULT_PER_DIM_ORDER
    return per_dim_order


def ber_mimo_exact(
    scn: MimoScenario, rule: GhqRule, per_dim_order: int | None = None, L_cap: int = L_CAP
) -> BerResult:
    """Average over every preceding-bit pattern; one pattern drives all links."""
    order = _tensor_order(scn, rule, per_dim_order)
    L_max = scn.max_memory
    _check_memory(L_max, L_cap)
    seqs = _sequences(L_max)
    pairs = [(seq, b0) for seq in seqs for b0 in (0, 1)]
    probs, trule = _tensor_probs(scn, pairs, order)
    ber = _csum(0.5 * probs) / seqs.shape[0]
    return BerResult(
        ber,
        "exact",
        {"sequences": seqs.shape[0], "order": [order] * trule.random.size, "fading_average": "ghq"},
    )


def ber_mimo_upper(scn: MimoScenario, rule: GhqRule, per_dim_order: int | None = None) -> BerResult:
    """Worst-case neighbours: all ones around a zero, all zeros around a one."""
    order = _tensor_order(scn, rule, per_dim_order)
    L_max = scn.max_memory
    pairs = [(np.ones(L_max), 0), (np.zeros(L_max), 1)]
    probs, trule = _tensor_probs(scn, pairs, order)
    return BerResult(
        _csum(0.5 * probs),
        "upper_bound",
        {"sequences": 2, "order": [order] * trule.random.size, "fading_average": "ghq"},
    )


def _fw_probs(scn: MimoScenario, pairs, rule: GhqRule, per_dim_order):
    gs, isi, mus, s2, _ = _link_arrays(scn)
    specs = [f for _, f in scn.links]
    scale = 1.0 / (2.0 * math.sqrt(scn.N) * scn.noise_std)
    probs = []
    fallback = []
    for seq, b0 in pairs:
        G = _branch_weights(gs, isi, seq, b0)
        if np.all(G > 0):
            eq = fw_equivalent(G, specs)
            probs.append(_avg_q(scale, eq.mu, eq.sigma2, rule))
        else:
            probs.append(None)
            fallback.append((len(probs) - 1, G))
    if fallback:
        d = int(np.count_nonzero(s2 > 0))
        order = per_dim_order or DEFAULT_PER_DIM_ORDER
        if d > TENSOR_DIM_CAP:
            order = max(2, int(_FALLBACK_NODE_BUDGET ** (1.0 / d)))
        trule = _TensorRule(mus, s2, order)
        vals = trule.average_q(np.array([G for _, G in fallback]), scale)
        for (pos, _), v in zip(fallback, vals):
            probs[pos] = float(v)
    return np.array(probs), len(fallback)


def ber_mimo_fw(
    scn: MimoScenario, rule: GhqRule, per_dim_order: int | None = None, L_cap: int = L_CAP
) -> BerResult:
    """Exact-sequence BER with each branch sum replaced by its FW log-normal.

    Patterns whose weights are not all positive (severe ISI under ``b0 = 0``)
    fall back to tensor quadrature for that term.
    """
    if not scn.links:
        raise BerError("empty scenario")
    L_max = scn.max_memory
    _check_memory(L_max, L_cap)
    seqs = _sequences(L_max)
    pairs = [(seq, b0) for seq in seqs for b0 in (0, 1)]
    probs, n_fallback = _fw_probs(scn, pairs, rule, per_dim_order)
    ber = _csum(0.5 * probs) / seqs.shape[0]
    return BerResult(
        ber, "fw_approx", {"sequences": seqs.shape[0], "order": [rule.order], "fallback_terms": n_fallback}
    )


def ber_mimo_fw_upper(scn: MimoScenario, rule: GhqRule, per_dim_order: int | None = None) -> BerResult:
    L_max = scn.max_memory
    pairs = [(np.ones(L_max), 0), (np.zeros(L_max), 1)]
    probs, n_fallback = _fw_probs(scn, pairs, rule, per_dim_order)
    return BerResult(
        _csum(0.5 * probs), "fw_approx", {"sequences": 2, "order": [rule.order], "fallback_terms": n_fallback, "bound": True}
    )


def power_for_ber(evaluate, target: float, lo_db: float, hi_db: float, xtol: float = 1e-4) -> float:
    """Power (dB relative to the scenario's reference) where ``evaluate`` hits ``target``.

    ``evaluate(factor)`` returns the BER at linear power factor ``factor`` and
    must be nonincreasing in it.
    """

    def f(db):
        b = evaluate(10 ** (db / 10))
        return math.log10(max(b, 1e-300)) - math.log10(target)

    f_lo, f_hi = f(lo_db), f(hi_db)
    if f_lo < 0 or f_hi > 0:
        raise BerError(f"target BER {target} not bracketed in [{lo_db}, {hi_db}] dB")
    return brentq(f, lo_db, hi_db, xtol=xtol)
