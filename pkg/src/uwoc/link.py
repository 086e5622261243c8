"""Signal/ISI current coefficients and the receiver noise budget."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import erfc

from .constants import BOLTZMANN, ELECTRON_CHARGE, PLANCK, SPEED_OF_LIGHT
from .fading import FadingSpec
from .water_channel import ImpulseResponse


def gaussian_q(x):
    """Gaussian tail probability ``Q(x) = P(Normal(0,1) > x)``."""
    out = 0.5 * erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))
    return float(out) if np.ndim(out) == 0 else out


def photon_energy(wavelength: float) -> float:
    return PLANCK * SPEED_OF_LIGHT / wavelength


def responsivity(eta: float, wavelength: float) -> float:
    """Photodetector responsivity in A/W."""
    if not 0 < eta <= 1:
        raise ValueError("quantum efficiency must lie in (0, 1]")
    if wavelength <= 0:
        raise ValueError("wavelength must be positive")
    return eta * ELECTRON_CHARGE / photon_energy(wavelength)


def charge_to_counts(charge):
    """Integrated charge (A*s) to photoelectron counts; the one place units convert."""
    return np.asarray(charge) / ELECTRON_CHARGE


def mean_counts(power: float, duration: float, eta: float, wavelength: float) -> float:
    """Mean photoelectron count for optical ``power`` held for ``duration``."""
    return float(charge_to_counts(responsivity(eta, wavelength) * power * duration))


@dataclass(frozen=True)
class TransmitPulse:
    """Rectangular OOK pulse; ``power`` is the total over all ``transmitters``."""

    power: float
    bit_duration: float
    transmitters: int = 1

    def __post_init__(self):
        if self.power <= 0 or self.bit_duration <= 0:
            raise ValueError("pulse power and bit duration must be positive")
        if self.transmitters < 1:
            raise ValueError("transmitters must be >= 1")

    @property
    def per_transmitter_power(self) -> float:
        return self.power / self.transmitters

    @property
    def energy(self) -> float:
        return self.per_transmitter_power * self.bit_duration


@dataclass
class GammaSet:
    """Signal coefficient and ISI coefficients ``gamma_isi[k-1]`` for bit ``-k`` (A*s)."""

    gamma_s: float
    gamma_isi: np.ndarray = field(default_factory=lambda: np.zeros(0))
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.gamma_isi = np.asarray(self.gamma_isi, dtype=float).ravel()
        if self.gamma_s < 0 or np.any(self.gamma_isi < 0):
            raise ValueError("gamma coefficients must be non-negative")

    @property
    def memory(self) -> int:
        return int(self.gamma_isi.size)

    @property
    def total_isi(self) -> float:
        return math.fsum(self.gamma_isi)

    def scaled(self, factor: float) -> "GammaSet":
        return GammaSet(self.gamma_s * factor, self.gamma_isi * factor, dict(self.diagnostics))

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write(f"gamma_s\n{self.gamma_s!r}\nk,gamma_k\n")
        for k, g in enumerate(self.gamma_isi, start=1):
            buf.write(f"{-k},{float(g)!r}\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "GammaSet":
        text = Path(source).read_text() if "\n" not in str(source) else source
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0] != "gamma_s":
            raise ValueError("GammaSet CSV must start with 'gamma_s'")
        gamma_s = float(lines[1])
        rows = [ln for ln in lines[2:] if ln.replace(" ", "") != "k,gamma_k"]
        pairs = sorted(((int(k), float(g)) for k, g in (r.split(",") for r in rows)), reverse=True)
        isi = np.zeros(len(pairs))
        for k, g in pairs:
            isi[-k - 1] = g
        return cls(gamma_s, isi)


def _window_overlap(starts: np.ndarray, width: float, lo: float, hi: float) -> np.ndarray:
    return np.clip(np.minimum(starts + width, hi) - np.maximum(starts, lo), 0.0, None)


def compute_gammas(
    h0: ImpulseResponse,
    pulse: TransmitPulse,
    R: float,
    memory_threshold: float = 1e-3,
) -> GammaSet:
    """Integrate the received waveform over the current and following bit windows.

    Each impulse-response bin is treated as an impulse at its start time
    (measured from the line-of-sight delay, to which the receiver is
    synchronised), so convolving with the rectangular pulse gives a shifted
    rectangle whose overlap with each window is exact.
    """
    T_b = pulse.bit_duration
    amp = R * pulse.per_transmitter_power  # A per unit received fraction
    starts = np.arange(h0.bins.size) * h0.bin_width
    if h0.no_signal:
        return GammaSet(0.0, np.zeros(0), {"no_signal": True})
    n_windows = int(math.ceil((starts[-1] + T_b) / T_b)) + 1
    windows = np.array(
        [
            math.fsum(h0.bins * _window_overlap(starts, T_b, k * T_b, (k + 1) * T_b))
            for k in range(n_windows)
        ]
    ) * amp
    gamma_s = float(windows[0])
    tail = windows[1:]
    above = np.flatnonzero(tail > memory_threshold * gamma_s)
    L = int(above[-1]) + 1 if above.size else 0
    diag = {"truncated_isi": math.fsum(tail[L:]), "memory_threshold": memory_threshold}
    return GammaSet(gamma_s, tail[:L].copy(), diag)


@dataclass(frozen=True)
class NoiseBudget:
    """Receiver noise parameters (SI units)."""

    quantum_efficiency: float = 0.8
    wavelength: float = 532e-9
    electronic_bandwidth: float = 10e9
    optical_filter_bandwidth: float = 10e-9
    equivalent_temperature: float = 290.0
    load_resistance: float = 100.0
    dark_current: float = 1.226e-9
    background_power: float = 6.34e-11

    def __post_init__(self):
        if not 0 < self.quantum_efficiency <= 1:
            raise ValueError("quantum_efficiency must lie in (0, 1]")
        for name in ("wavelength", "electronic_bandwidth", "optical_filter_bandwidth", "load_resistance"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        # noise sources may be switched off individually
        for name in ("equivalent_temperature", "dark_current", "background_power"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def responsivity(self) -> float:
        return responsivity(self.quantum_efficiency, self.wavelength)


@dataclass(frozen=True)
class NoiseResult:
    sigma2: float  # integrated noise variance, (A*s)^2
    components: dict
    rhs_power: float  # right-hand side of the shot-noise negligibility test, W
    shot_noise_negligible: bool | None

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    @property
    def sigma2_counts(self) -> float:
        return self.sigma2 / ELECTRON_CHARGE**2

    def component_counts(self, name: str) -> float:
        return self.components[name] / ELECTRON_CHARGE**2


def noise_variance(
    noise: NoiseBudget,
    T_b: float,
    signal_power_hint: float | None = None,
    margin: float = 10.0,
) -> NoiseResult:
    """Variance of the receiver output integrated over one bit.

    White current noise of two-sided density ``S`` integrated over ``T_b``
    has variance ``S * T_b``: ``2kT/R_L`` for thermal noise and ``q*I`` for
    the dark-current and background shot noise.  The verdict compares the
    signal power hint against the equivalent noise power, requiring it to be
    at least ``margin`` times smaller.
    """
    q = ELECTRON_CHARGE
    R = noise.responsivity
    hf = photon_energy(noise.wavelength)
    eta = noise.quantum_efficiency
    comps = {
        "thermal": 2 * BOLTZMANN * noise.equivalent_temperature * T_b / noise.load_resistance,
        "dark": q * noise.dark_current * T_b,
        "background": q * R * noise.background_power * T_b,
    }
    rhs = (
        noise.background_power
        + noise.dark_current * hf / (eta * q)
        + 2 * BOLTZMANN * noise.equivalent_temperature * hf / (eta * q * q * noise.load_resistance)
    )
    verdict = None if signal_power_hint is None else bool(signal_power_hint * margin <= rhs)
    return NoiseResult(math.fsum(comps.values()), comps, rhs, verdict)


@dataclass
class MimoScenario:
    """M x N link matrix; power and aperture splitting already folded into the gammas.

    ``sigma_Tb`` overrides the per-receiver noise derived from ``noise``.
    """

    M: int
    N: int
    gammas: list
    fading: list
    noise: NoiseBudget | None = None
    bit_rate: float = 1e9
    sigma_Tb: float | None = None

    def __post_init__(self):
        if self.M < 1 or self.N < 1:
            raise ValueError("M and N must be >= 1")
        for name in ("gammas", "fading"):
            mat = getattr(self, name)
            if len(mat) != self.M or any(len(row) != self.N for row in mat):
                raise ValueError(f"{name} must be an M x N matrix")
        if self.noise is None and self.sigma_Tb is None:
            raise ValueError("either a noise budget or sigma_Tb is required")

    @property
    def noise_std(self) -> float:
        """Per-receiver integrated noise standard deviation (A*s)."""
        if self.sigma_Tb is not None:
            return self.sigma_Tb
        return noise_variance(self.noise, 1.0 / self.bit_rate).sigma

    @property
    def links(self):
        """Flattened (GammaSet, FadingSpec) pairs in row-major order."""
        return [(self.gammas[i][j], self.fading[i][j]) for i in range(self.M) for j in range(self.N)]

    @property
    def max_memory(self) -> int:
        return max(g.memory for g, _ in self.links)

    def scaled(self, factor: float) -> "MimoScenario":
        """Same links with every transmit power multiplied by ``factor``."""
        return replace(self, gammas=[[g.scaled(factor) for g in row] for row in self.gammas])

    def with_fading(self, spec: FadingSpec) -> "MimoScenario":
        return replace(self, fading=[[spec] * self.N for _ in range(self.M)])


def split_power(total_power: float, M: int) -> list[float]:
    return [total_power / M] * M


def split_aperture_diameter(total_diameter: float, N: int) -> float:
    """Per-receiver diameter so that N equal discs have the total area."""
    return total_diameter / math.sqrt(N)


def build_scenario(
    responses,
    pulse: TransmitPulse,
    noise: NoiseBudget,
    fading: FadingSpec,
    memory_threshold: float = 1e-3,
) -> MimoScenario:
    """Scenario from an ``[i][j]`` matrix of impulse responses."""
    M, N = len(responses), len(responses[0])
    if pulse.transmitters != M:
        pulse = replace(pulse, transmitters=M)
    R = noise.responsivity
    gammas = [[compute_gammas(h, pulse, R, memory_threshold) for h in row] for row in responses]
    return MimoScenario(
        M=M,
        N=N,
        gammas=gammas,
        fading=[[fading] * N for _ in range(M)],
        noise=noise,
        bit_rate=1.0 / pulse.bit_duration,
    )
