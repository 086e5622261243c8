"""Monte Carlo photon transport for the turbulence-free channel response.

Photons are launched inside the source divergence cone, travel exponentially
distributed free paths at the extinction rate ``c``, lose ``b/c`` of their
weight at every interaction and scatter according to a Henyey-Greenstein
phase function.  A photon is scored when its path segment crosses a receiver
aperture disc with an incidence angle inside the field of view.  Every photon
is terminated the first time it crosses the receiver plane, detected or not.

Work is cut into fixed-size chunks, each driven by its own counter-based
random stream keyed on ``(seed, chunk_index)``; chunk histograms are summed in
chunk order, so the result does not depend on the number of workers.
"""
from __future__ import annotations

import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .constants import SPEED_OF_LIGHT

CHUNK_SIZE = 1 << 17
ROULETTE_SURVIVAL = 0.1
DEFAULT_G = 0.924
_UNIT_TOL = 1e-9


class GeometryError(ValueError):
    """Raised for an invalid transmitter/receiver description."""


@dataclass(frozen=True)
class WaterProperties:
    """Inherent optical properties of a homogeneous water body (1/m)."""

    a: float
    b: float
    c: float
    g: float = DEFAULT_G

    def __post_init__(self):
        if self.a < 0 or self.b < 0:
            raise ValueError("absorption and scattering coefficients must be >= 0")
        if not math.isclose(self.c, self.a + self.b, rel_tol=1e-12, abs_tol=0.0):
            raise ValueError(
                f"extinction c={self.c} must equal a+b={self.a + self.b}"
            )
        if not -1.0 < self.g < 1.0:
            raise ValueError("asymmetry g must lie in (-1, 1)")
        if self.c <= 0:
            raise ValueError("extinction coefficient must be positive")

    @property
    def albedo(self) -> float:
        return self.b / self.c

    @classmethod
    def coastal(cls, g: float = DEFAULT_G) -> "WaterProperties":
        return cls(a=0.179, b=0.219, c=0.398, g=g)


def _as_vec(v) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.shape != (3,):
        raise GeometryError(f"expected a 3-vector, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class LinkGeometry:
    """One transmitter and one receiver aperture.

    ``rx_normal`` is the direction the aperture faces, i.e. it points back
    toward the incoming light.
    """

    tx_position: tuple
    tx_direction: tuple
    beam_divergence: float
    rx_position: tuple
    rx_normal: tuple
    rx_aperture_diameter: float
    rx_half_fov: float
    refractive_index: float = 1.331

    def __post_init__(self):
        for name in ("tx_position", "tx_direction", "rx_position", "rx_normal"):
            object.__setattr__(self, name, tuple(_as_vec(getattr(self, name))))
        for name in ("tx_direction", "rx_normal"):
            norm = float(np.linalg.norm(getattr(self, name)))
            if abs(norm - 1.0) > _UNIT_TOL:
                raise GeometryError(f"{name} must be a unit vector (norm={norm})")
        if self.rx_aperture_diameter <= 0:
            raise GeometryError("rx_aperture_diameter must be positive")
        if not 0 < self.rx_half_fov <= math.pi / 2:
            raise GeometryError("rx_half_fov must lie in (0, pi/2]")
        if not 0 <= self.beam_divergence < math.pi:
            raise GeometryError("beam_divergence must lie in [0, pi)")
        if self.refractive_index <= 0:
            raise GeometryError("refractive_index must be positive")

    @property
    def distance(self) -> float:
        """Shortest distance from the source to any point of the aperture."""
        v = np.subtract(self.tx_position, self.rx_position)
        nrm = np.asarray(self.rx_normal)
        h = float(v @ nrm)
        rho = float(np.linalg.norm(v - h * nrm))
        excess = max(rho - self.rx_aperture_diameter / 2, 0.0)
        return math.hypot(h, excess)

    @property
    def los_delay(self) -> float:
        return self.distance * self.refractive_index / SPEED_OF_LIGHT

    @classmethod
    def on_axis(
        cls,
        distance: float,
        aperture_diameter: float = 0.2,
        half_fov: float = math.radians(40.0),
        beam_divergence: float = math.radians(0.02),
        refractive_index: float = 1.331,
    ) -> "LinkGeometry":
        return cls(
            tx_position=(0.0, 0.0, 0.0),
            tx_direction=(0.0, 0.0, 1.0),
            beam_divergence=beam_divergence,
            rx_position=(0.0, 0.0, distance),
            rx_normal=(0.0, 0.0, -1.0),
            rx_aperture_diameter=aperture_diameter,
            rx_half_fov=half_fov,
            refractive_index=refractive_index,
        )


@dataclass
class ImpulseResponse:
    """Binned received energy fraction; bin ``i`` starts at ``t_start + i*bin_width``."""

    bin_width: float
    bins: np.ndarray
    t_start: float
    photon_count: int = 0
    std_error: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.bins = np.atleast_1d(np.asarray(self.bins, dtype=float))
        if self.bin_width <= 0:
            raise ValueError("bin_width must be positive")
        if np.any(self.bins < 0):
            raise ValueError("impulse response bins must be non-negative")
        if self.bins.size == 0:
            self.bins = np.zeros(1)
        if self.no_signal:
            self.diagnostics.setdefault("no_signal", True)

    @property
    def received_fraction(self) -> float:
        return math.fsum(self.bins)

    @property
    def no_signal(self) -> bool:
        return not np.any(self.bins > 0)

    @property
    def times(self) -> np.ndarray:
        return self.t_start + self.bin_width * np.arange(self.bins.size)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write("t_start,bin_width\n")
        buf.write(f"{self.t_start!r},{self.bin_width!r}\n")
        buf.write("bin_index,fraction\n")
        for idx in np.flatnonzero(self.bins):
            buf.write(f"{idx},{float(self.bins[idx])!r}\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "ImpulseResponse":
        """Parse the CSV form.  ``source`` is a path or the CSV text itself."""
        if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
            text = Path(source).read_text()
        else:
            text = source
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        if len(lines) < 2 or lines[0].replace(" ", "") != "t_start,bin_width":
            raise ValueError("impulse response CSV must start with 't_start,bin_width'")
        t_start, bin_width = (float(x) for x in lines[1].split(","))
        rows = lines[2:]
        if rows and rows[0].replace(" ", "") == "bin_index,fraction":
            rows = rows[1:]
        entries = []
        for n, row in enumerate(rows, start=3):
            try:
                idx, frac = row.split(",")
                entries.append((int(idx), float(frac)))
            except ValueError as exc:
                raise ValueError(f"line {n}: bad row {row!r}") from exc
        size = max((i for i, _ in entries), default=0) + 1
        bins = np.zeros(size)
        for idx, frac in entries:
            bins[idx] = frac
        return cls(bin_width=bin_width, bins=bins, t_start=t_start)


def sample_scattering_angle(g, u):
    """Henyey-Greenstein polar angle from a uniform variate ``u`` in [0, 1).

    ``u = 0`` maps to forward scattering for every ``g``; ``g = 0`` reduces to
    the isotropic ``acos(1 - 2u)``.
    """
    u = np.asarray(u, dtype=float)
    if g == 0.0:
        mu = 1.0 - 2.0 * u
    else:
        frac = (1.0 - g * g) / (1.0 + g - 2.0 * g * u)
        mu = (1.0 + g * g - frac * frac) / (2.0 * g)
    theta = np.arccos(np.clip(mu, -1.0, 1.0))
    return float(theta) if theta.ndim == 0 else theta


def _orthonormal_frame(d: np.ndarray):
    helper = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(d, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(d, e1)
    return e1, e2


def _scatter(dirs: np.ndarray, cos_t: np.ndarray, phi: np.ndarray) -> np.ndarray:
    ux, uy, uz = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    sin_t = np.sqrt(np.maximum(1.0 - cos_t * cos_t, 0.0))
    cos_p, sin_p = np.cos(phi), np.sin(phi)
    out = np.empty_like(dirs)
    polar = np.abs(uz) > 1.0 - 1e-12
    reg = ~polar
    if np.any(reg):
        t = np.sqrt(1.0 - uz[reg] ** 2)
        st, ct, sp, cp = sin_t[reg], cos_t[reg], sin_p[reg], cos_p[reg]
        x, y, z = ux[reg], uy[reg], uz[reg]
        out[reg, 0] = st * (x * z * cp - y * sp) / t + x * ct
        out[reg, 1] = st * (y * z * cp + x * sp) / t + y * ct
        out[reg, 2] = -st * cp * t + z * ct
    if np.any(polar):
        sgn = np.sign(uz[polar])
        out[polar, 0] = sin_t[polar] * cos_p[polar]
        out[polar, 1] = sin_t[polar] * sin_p[polar]
        out[polar, 2] = sgn * cos_t[polar]
    out /= np.linalg.norm(out, axis=1, keepdims=True)
    return out


def _check_shared_source(geoms):
    first = geoms[0]
    plane_p = np.asarray(first.rx_position)
    plane_n = np.asarray(first.rx_normal)
    for gm in geoms[1:]:
        if (
            gm.tx_position != first.tx_position
            or gm.tx_direction != first.tx_direction
            or gm.beam_divergence != first.beam_divergence
            or gm.refractive_index != first.refractive_index
        ):
            raise GeometryError("all receivers must share one transmitter")
        if not np.allclose(gm.rx_normal, first.rx_normal, atol=_UNIT_TOL):
            raise GeometryError("receivers must be coplanar with a common normal")
        if abs(float((np.asarray(gm.rx_position) - plane_p) @ plane_n)) > 1e-9:
            raise GeometryError("receivers must lie in one plane")


def _trace_chunk(water, geoms, n, weight_threshold, rng):
    """Trace ``n`` photons; return per-receiver (path_length, weight) arrays."""
    src = geoms[0]
    d0 = np.asarray(src.tx_direction)
    e1, e2 = _orthonormal_frame(d0)
    plane_p = np.asarray(src.rx_position)
    plane_n = np.asarray(src.rx_normal)
    centers = [np.asarray(g.rx_position) for g in geoms]
    radii2 = [(g.rx_aperture_diameter / 2) ** 2 for g in geoms]
    cos_fov = [math.cos(g.rx_half_fov) for g in geoms]

    half = src.beam_divergence / 2
    cos_t = 1.0 - rng.random(n) * (1.0 - math.cos(half))
    sin_t = np.sqrt(np.maximum(1.0 - cos_t**2, 0.0))
    phi = 2 * math.pi * rng.random(n)
    dirs = (
        cos_t[:, None] * d0
        + (sin_t * np.cos(phi))[:, None] * e1
        + (sin_t * np.sin(phi))[:, None] * e2
    )
    pos = np.broadcast_to(np.asarray(src.tx_position), (n, 3)).copy()
    path = np.zeros(n)
    weight = np.ones(n)

    hits_t = [[] for _ in geoms]
    hits_w = [[] for _ in geoms]
    albedo = water.albedo
    g = water.g
    while pos.shape[0]:
        m = pos.shape[0]
        step = -np.log1p(-rng.random(m)) / water.c
        height = (pos - plane_p) @ plane_n
        approach = -(dirs @ plane_n)
        with np.errstate(divide="ignore", invalid="ignore"):
            to_plane = np.where(approach > 0, height / approach, np.inf)
        crossing = step >= to_plane
        if np.any(crossing):
            idx = np.flatnonzero(crossing)
            hit = pos[idx] + to_plane[idx, None] * dirs[idx]
            arrive = path[idx] + to_plane[idx]
            inc = approach[idx]
            for j, (ctr, r2, cf) in enumerate(zip(centers, radii2, cos_fov)):
                ok = (np.sum((hit - ctr) ** 2, axis=1) <= r2) & (inc >= cf)
                if np.any(ok):
                    hits_t[j].append(arrive[ok])
                    hits_w[j].append(weight[idx[ok]])
        moving = ~crossing
        pos = pos[moving] + step[moving, None] * dirs[moving]
        path = path[moving] + step[moving]
        weight = weight[moving] * albedo
        dirs = dirs[moving]
        low = weight < weight_threshold
        if np.any(low):
            survive = rng.random(int(low.sum())) < ROULETTE_SURVIVAL
            w_low = np.where(survive, weight[low] / ROULETTE_SURVIVAL, 0.0)
            weight[low] = w_low
        alive = weight > 0
        pos, path, weight, dirs = pos[alive], path[alive], weight[alive], dirs[alive]
        k = pos.shape[0]
        if k:
            mu = np.cos(sample_scattering_angle(g, rng.random(k)))
            dirs = _scatter(dirs, mu, 2 * math.pi * rng.random(k))
    return [
        (np.concatenate(t) if t else np.empty(0), np.concatenate(w) if w else np.empty(0))
        for t, w in zip(hits_t, hits_w)
    ]


def chunk_stream(seed: int, chunk_index: int) -> np.random.Generator:
    """Counter-based random stream for one photon chunk."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, chunk_index])))


def trace_photons_multi(
    water: WaterProperties,
    geoms,
    photon_count: int,
    weight_threshold: float = 1e-6,
    rng_seed: int = 0,
    bin_width: float | None = None,
    bit_rate: float = 1e9,
    workers: int = 1,
) -> list[ImpulseResponse]:
    """Trace one transmitter into several coplanar receivers at once."""
    geoms = list(geoms)
    if not geoms:
        raise GeometryError("at least one receiver is required")
    if photon_count < 1:
        raise ValueError("photon_count must be >= 1")
    if not 0 < weight_threshold < 1:
        raise ValueError("weight_threshold must lie in (0, 1)")
    _check_shared_source(geoms)
    if bin_width is None:
        bin_width = 1.0 / bit_rate / 16
    speed = SPEED_OF_LIGHT / geoms[0].refractive_index
    t_starts = [gm.los_delay for gm in geoms]

    sizes = [CHUNK_SIZE] * (photon_count // CHUNK_SIZE)
    if photon_count % CHUNK_SIZE:
        sizes.append(photon_count % CHUNK_SIZE)

    def run(ci):
        parts = _trace_chunk(water, geoms, sizes[ci], weight_threshold, chunk_stream(rng_seed, ci))
        out = []
        for (length, w), t0 in zip(parts, t_starts):
            idx = np.floor((length / speed - t0) / bin_width).astype(np.int64)
            out.append((np.maximum(idx, 0), w))
        return out

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, range(len(sizes))))
    else:
        results = [run(ci) for ci in range(len(sizes))]

    responses = []
    for j, t0 in enumerate(t_starts):
        size = max((int(r[j][0].max()) + 1 for r in results if r[j][0].size), default=1)
        bins = np.zeros(size)
        sum_w = sum_w2 = 0.0
        for r in results:
            idx, w = r[j]
            if idx.size:
                bins += np.bincount(idx, weights=w, minlength=size)
                sum_w += math.fsum(w)
                sum_w2 += math.fsum(w * w)
        mean = sum_w / photon_count
        var = max(sum_w2 / photon_count - mean * mean, 0.0)
        responses.append(
            ImpulseResponse(
                bin_width=bin_width,
                bins=bins / photon_count,
                t_start=t0,
                photon_count=photon_count,
                std_error=math.sqrt(var / photon_count),
            )
        )
    return responses


def trace_photons(
    water: WaterProperties,
    geom: LinkGeometry,
    photon_count: int,
    weight_threshold: float = 1e-6,
    rng_seed: int = 0,
    bin_width: float | None = None,
    bit_rate: float = 1e9,
    workers: int = 1,
) -> ImpulseResponse:
    """Monte Carlo impulse response of a single transmitter/receiver pair."""
    return trace_photons_multi(
        water, [geom], photon_count, weight_threshold, rng_seed, bin_width, bit_rate, workers
    )[0]


def array_geometries(
    M: int,
    N: int,
    distance: float,
    total_aperture_diameter: float = 0.2,
    half_fov: float = math.radians(40.0),
    beam_divergence: float = math.radians(0.02),
    refractive_index: float = 1.331,
    tx_ring_radius: float = 0.05,
    rx_gap: float = 0.05,
) -> list[list[LinkGeometry]]:
    """Geometry matrix ``[i][j]`` for an M x N array facing each other.

    Receivers sit on a ring (aperture area split evenly, so each diameter is
    ``D/sqrt(N)``); transmitter ``i`` aims at receiver ``i mod N``.  With
    ``M == N`` each transmitter sits opposite its receiver.
    """
    if M < 1 or N < 1:
        raise ValueError("M and N must be >= 1")
    d_rx = total_aperture_diameter / math.sqrt(N)

    def ring(count, radius):
        if count == 1:
            return [np.zeros(2)]
        return [
            radius * np.array([math.cos(2 * math.pi * k / count), math.sin(2 * math.pi * k / count)])
            for k in range(count)
        ]

    rx_radius = 0.0 if N == 1 else (d_rx + rx_gap) / (2 * math.sin(math.pi / N))
    rx_xy = ring(N, rx_radius)
    tx_xy = rx_xy if M == N else ring(M, tx_ring_radius)
    out = []
    for i in range(M):
        tx = np.array([tx_xy[i][0], tx_xy[i][1], 0.0])
        target = np.array([rx_xy[i % N][0], rx_xy[i % N][1], distance])
        aim = (target - tx) / np.linalg.norm(target - tx)
        row = []
        for j in range(N):
            row.append(
                LinkGeometry(
                    tx_position=tuple(tx),
                    tx_direction=tuple(aim),
                    beam_divergence=beam_divergence,
                    rx_position=(rx_xy[j][0], rx_xy[j][1], distance),
                    rx_normal=(0.0, 0.0, -1.0),
                    rx_aperture_diameter=d_rx,
                    rx_half_fov=half_fov,
                    refractive_index=refractive_index,
                )
            )
        out.append(row)
    return out
