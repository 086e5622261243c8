"""Independent checks for the analytical engine.

* a bit-level Monte Carlo simulation of the EGC receiver,
* the Gaussian-approximation photon-counting BER,
* Monte Carlo samples of weighted log-normal sums,
* brute-force grid integration of the MIMO fading average.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import integrate, stats

from .fading import sample_fading
from .link import MimoScenario, gaussian_q

BLOCK_BITS = 1 << 16


@dataclass(frozen=True)
class McRunReport:
    bits_simulated: int
    errors_observed: int
    ber_estimate: float
    binomial_std_error: float
    seed: int

    @classmethod
    def from_counts(cls, bits: int, errors: int, seed: int) -> "McRunReport":
        p = errors / bits
        return cls(bits, errors, p, math.sqrt(p * (1 - p) / bits), seed)

    def append_csv(self, path) -> None:
        """Append this run as one row of a results log (header written once)."""
        path = Path(path)
        new = not path.exists() or path.stat().st_size == 0
        with path.open("a", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(asdict(self)))
            if new:
                writer.writeheader()
            writer.writerow(asdict(self))


def gaussian_counting_ber(m1: float, m0: float, sigma2_m: float) -> float:
    """OOK error probability with Gaussian photon counts of variance ``m + sigma2_m``."""
    if not m1 > m0:
        raise ValueError("mean count for a one must exceed that for a zero")
    if m0 < 0 or sigma2_m < 0:
        raise ValueError("counts and variance must be non-negative")
    return gaussian_q((m1 - m0) / (math.sqrt(m1 + sigma2_m) + math.sqrt(m0 + sigma2_m)))


def _block_stream(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, block, 0x5EED])))


def _simulate_block(scn: MimoScenario, n: int, rng: np.random.Generator) -> int:
    links = scn.links
    L = scn.max_memory
    gs = np.array([g.gamma_s for g, _ in links])
    isi = np.zeros((len(links), L))
    for k, (g, _) in enumerate(links):
        isi[k, : g.memory] = g.gamma_isi
    # one fading draw per decision window, shared by the current and previous bits
    h = np.stack([np.broadcast_to(sample_fading(f, rng, n), (n,)) for _, f in links], axis=1)
    b0 = rng.integers(0, 2, n)
    prev = rng.integers(0, 2, (n, L)).astype(float)
    noise = rng.standard_normal(n) * (math.sqrt(scn.N) * scn.noise_std)
    signal = h @ gs
    r = b0 * signal + np.einsum("nl,nl->n", h, prev @ isi.T) + noise
    decided = (r > signal / 2).astype(int)
    return int(np.count_nonzero(decided != b0))


def simulate_link_ber(
    scn: MimoScenario, n_bits: int, rng_seed: int = 0, min_errors: int | None = None
) -> McRunReport:
    """Bit-level simulation of the CSI-threshold EGC receiver.

    Bits are processed in fixed blocks with their own random streams; with
    ``min_errors`` set, the run stops at the first block boundary once that
    many errors have been seen.
    """
    if n_bits < 10_000:
        raise ValueError("n_bits must be >= 1e4")
    bits = errors = 0
    block = 0
    while bits < n_bits:
        n = min(BLOCK_BITS, n_bits - bits)
        errors += _simulate_block(scn, n, _block_stream(rng_seed, block))
        bits += n
        block += 1
        if min_errors is not None and errors >= min_errors:
            break
    return McRunReport.from_counts(bits, errors, rng_seed)


def lognormal_sum_cdf_mc(weights, specs, n_samples: int, rng_seed: int = 0) -> np.ndarray:
    """Sorted i.i.d. samples of ``sum(G_ij * h_ij)`` for an empirical CDF."""
    if n_samples < 100_000:
        raise ValueError("n_samples must be >= 1e5")
    G = np.asarray(weights, dtype=float)
    specs = list(specs)
    rng = np.random.default_rng(np.random.SeedSequence([rng_seed, len(specs)]))
    total = np.zeros(n_samples)
    for g, sp in zip(G, specs):
        total += g * sample_fading(sp, rng, n_samples)
    total.sort()
    return total


def ks_distance(samples: np.ndarray, cdf) -> float:
    return float(stats.kstest(samples, cdf).statistic)


_GRID_POINTS = {1: 4001, 2: 801, 3: 201, 4: 61}


def integrate_mimo_ber(
    scn: MimoScenario, upper: bool = True, points: int | None = None, span: float = 10.0
) -> float:
    """MIMO BER with the fading average done by composite Simpson on a grid.

    Each fading link contributes one standard-normal axis truncated at
    ``+-span``; adaptive ``quad`` is used for a single fading link.
    """
    links = scn.links
    L = scn.max_memory
    gs = np.array([g.gamma_s for g, _ in links])
    isi = np.zeros((len(links), L))
    for k, (g, _) in enumerate(links):
        isi[k, : g.memory] = g.gamma_isi
    if upper:
        pairs = [(np.ones(L), 0), (np.zeros(L), 1)]
        seq_count = 1
    else:
        seqs = [np.array(s, dtype=float) for s in itertools.product((0, 1), repeat=L)]
        pairs = [(s, b) for s in seqs for b in (0, 1)]
        seq_count = len(seqs)
    scale = 1.0 / (2.0 * math.sqrt(scn.N) * scn.noise_std)
    rand = [k for k, (_, f) in enumerate(links) if f.sigma2 > 0]
    fixed = [k for k, (_, f) in enumerate(links) if f.sigma2 == 0]
    d = len(rand)

    def gain(k, z):
        f = links[k][1]
        return np.exp(2 * (f.mu + math.sqrt(f.sigma2) * z))

    total = 0.0
    for seq, b0 in pairs:
        G = gs + (1.0 if b0 else -1.0) * 2.0 * (isi @ seq)
        g_fixed = float(G[fixed].sum()) if fixed else 0.0
        if d == 0:
            total += 0.5 * gaussian_q(scale * g_fixed)
            continue
        if d == 1:
            k = rand[0]
            val, _ = integrate.quad(
                lambda z: gaussian_q(scale * (G[k] * gain(k, z) + g_fixed)) * stats.norm.pdf(z),
                -span,
                span,
                epsabs=0.0,
                epsrel=1e-12,
                limit=400,
            )
            total += 0.5 * val
            continue
        n = points or _GRID_POINTS.get(d, 41)
        z = np.linspace(-span, span, n)
        pdf = stats.norm.pdf(z)
        mesh = np.meshgrid(*[z] * d, indexing="ij", sparse=True)
        stat = g_fixed + sum(G[k] * gain(k, mesh[a]) for a, k in enumerate(rand))
        vals = gaussian_q(scale * stat)
        for a in range(d):
            shape = [1] * d
            shape[a] = n
            vals = vals * pdf.reshape(shape)
        for _ in range(d):
            vals = integrate.simpson(vals, x=z, axis=0)
        total += 0.5 * float(vals)
    return total / seq_count
