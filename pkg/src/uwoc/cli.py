"""Command-line front end: channel simulation, config validation, BER sweeps.

    uwoc validate --config cfg.json
    uwoc simulate-channel --config cfg.json --out channels/
    uwoc sweep --config cfg.json --out results/ [--threads 4] [--cache DIR]

The cache directory defaults to ``$UWOC_CACHE_DIR`` or ``<out>/.cache``.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .ber import (
    BerError,
    ber_mimo_exact,
    ber_mimo_fw,
    ber_mimo_upper,
    ghq_rule,
)
from .fading import FadingSpec
from .link import NoiseBudget, TransmitPulse, build_scenario, noise_variance
from .oracle import simulate_link_ber
from .water_channel import (
    ImpulseResponse,
    WaterProperties,
    array_geometries,
    trace_photons_multi,
)

log = logging.getLogger("uwoc")

CACHE_ENV = "UWOC_CACHE_DIR"
METHODS = ("exact", "upper", "fw", "mc")
REQUIRED_BLOCKS = {
    "water": ("a", "b", "c"),
    "geometry": ("range_m",),
    "noise": (
        "quantum_efficiency",
        "wavelength_m",
        "electronic_bandwidth_hz",
        "optical_filter_bandwidth_m",
        "equivalent_temperature_k",
        "load_resistance_ohm",
        "dark_current_a",
        "background_power_w",
    ),
}
GEOMETRY_DEFAULTS = {
    "rx_aperture_diameter_m": 0.2,
    "rx_half_fov_deg": 40.0,
    "beam_divergence_deg": 0.02,
    "refractive_index": 1.331,
    "tx_ring_radius_m": 0.05,
    "rx_gap_m": 0.05,
}


class ConfigError(ValueError):
    """Configuration problems, one message per offending field."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


def default_config_path() -> Path:
    return Path(str(resources.files("uwoc") / "data" / "defaults.json"))


@dataclass
class SweepConfig:
    water: WaterProperties
    geometry: dict
    noise: NoiseBudget
    configurations: list
    sigma_X: list
    bit_rate: float
    power_dBm: list
    methods: list
    photon_count: int
    seed: int
    output: str
    weight_threshold: float = 1e-6
    memory_threshold: float = 1e-3
    bins_per_bit: int = 16
    quadrature_order: int = 30
    per_dim_order: int = 20
    mc_bits: int = 1_000_000
    channel_dir: str | None = None
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def bit_duration(self) -> float:
        return 1.0 / self.bit_rate

    def config_hash(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def geometries(self, M: int, N: int):
        g = self.geometry
        return array_geometries(
            M,
            N,
            g["range_m"],
            total_aperture_diameter=g["rx_aperture_diameter_m"],
            half_fov=math.radians(g["rx_half_fov_deg"]),
            beam_divergence=math.radians(g["beam_divergence_deg"]),
            refractive_index=g["refractive_index"],
            tx_ring_radius=g["tx_ring_radius_m"],
            rx_gap=g["rx_gap_m"],
        )


def _line_of(text: str, block: str | None, key: str) -> int | None:
    """Best-effort line number of ``"key"`` (inside ``"block"`` if given)."""
    lines = text.splitlines()
    start = 0
    if block:
        for n, ln in enumerate(lines):
            if f'"{block}"' in ln:
                start = n
                break
    for n in range(start, len(lines)):
        if f'"{key}"' in lines[n]:
            return n + 1
    return None


def _where(text, block, key) -> str:
    line = _line_of(text, block, key) if text else None
    path = f"{block}.{key}" if block else key
    return f"line {line}: {path}" if line else path


def parse_config(data: dict, text: str = "") -> SweepConfig:
    """Build a SweepConfig, collecting every problem before raising."""
    problems = []
    if not isinstance(data, dict):
        raise ConfigError(["top level must be a JSON object"])
    for block, fields_ in REQUIRED_BLOCKS.items():
        if block not in data:
            problems.append(f"missing block '{block}' (required fields: {', '.join(fields_)})")
            continue
        missing = [f for f in fields_ if f not in data[block]]
        if missing:
            problems.append(f"{_where(text, None, block)}: missing fields {', '.join(missing)}")
    if problems:
        raise ConfigError(problems)

    water = None
    w = data["water"]
    try:
        water = WaterProperties(a=float(w["a"]), b=float(w["b"]), c=float(w["c"]), g=float(w.get("g", 0.924)))
    except (TypeError, ValueError) as exc:
        field_ = "c" if "extinction" in str(exc) else ("g" if "asymmetry" in str(exc) else "a")
        problems.append(f"{_where(text, 'water', field_)}: {exc}")

    geometry = dict(GEOMETRY_DEFAULTS)
    geometry.update(data["geometry"])
    for key in ("range_m", "rx_aperture_diameter_m", "refractive_index"):
        if not float(geometry[key]) > 0:
            problems.append(f"{_where(text, 'geometry', key)}: must be positive")
    if not 0 < float(geometry["rx_half_fov_deg"]) <= 90:
        problems.append(f"{_where(text, 'geometry', 'rx_half_fov_deg')}: must lie in (0, 90]")

    n = data["noise"]
    noise = None
    try:
        noise = NoiseBudget(
            quantum_efficiency=float(n["quantum_efficiency"]),
            wavelength=float(n["wavelength_m"]),
            electronic_bandwidth=float(n["electronic_bandwidth_hz"]),
            optical_filter_bandwidth=float(n["optical_filter_bandwidth_m"]),
            equivalent_temperature=float(n["equivalent_temperature_k"]),
            load_resistance=float(n["load_resistance_ohm"]),
            dark_current=float(n["dark_current_a"]),
            background_power=float(n["background_power_w"]),
        )
    except (TypeError, ValueError) as exc:
        problems.append(f"{_where(text, None, 'noise')}: {exc}")

    configs = data.get("configurations", [[1, 1]])
    try:
        configs = [(int(m), int(nn)) for m, nn in configs]
    except (TypeError, ValueError):
        problems.append(f"{_where(text, None, 'configurations')}: expected a list of [M, N] pairs")
        configs = []
    if not configs or any(m < 1 or nn < 1 for m, nn in configs):
        problems.append(f"{_where(text, None, 'configurations')}: every (M, N) must be >= (1, 1)")

    sigmas = [float(s) for s in data.get("sigma_X", [0.4])]
    if not sigmas or any(s < 0 for s in sigmas):
        problems.append(f"{_where(text, None, 'sigma_X')}: need at least one non-negative value")

    sweep = data.get("power_dBm", {})
    powers = []
    try:
        start, stop, step = float(sweep["start"]), float(sweep["stop"]), float(sweep["step"])
        if step > 0 and stop >= start:
            powers = [round(start + k * step, 10) for k in range(int(math.floor((stop - start) / step + 1e-9)) + 1)]
    except (KeyError, TypeError, ValueError):
        pass
    if not powers:
        problems.append(f"{_where(text, None, 'power_dBm')}: power sweep is empty (need start <= stop, step > 0)")

    methods = list(data.get("methods", ["exact", "upper"]))
    bad = [m for m in methods if m not in METHODS]
    if not methods or bad:
        problems.append(f"{_where(text, None, 'methods')}: choose a nonempty subset of {', '.join(METHODS)}")

    bit_rate = float(data.get("bit_rate", 1e9))
    if not bit_rate > 0:
        problems.append(f"{_where(text, None, 'bit_rate')}: must be positive")
    photon_count = int(data.get("photon_count", 1_000_000))
    channel_dir = data.get("channel_dir")
    if photon_count < 1 and not channel_dir:
        problems.append(f"{_where(text, None, 'photon_count')}: must be >= 1 without channel_dir")
    wth = float(data.get("weight_threshold", 1e-6))
    if not 0 < wth < 1:
        problems.append(f"{_where(text, None, 'weight_threshold')}: must lie in (0, 1)")
    if problems:
        raise ConfigError(problems)

    raw = json.loads(json.dumps(data))
    raw["geometry"] = geometry
    return SweepConfig(
        water=water,
        geometry={k: float(v) for k, v in geometry.items()},
        noise=noise,
        configurations=configs,
        sigma_X=sigmas,
        bit_rate=bit_rate,
        power_dBm=powers,
        methods=methods,
        photon_count=photon_count,
        seed=int(data.get("seed", 1)),
        output=str(data.get("output", "results")),
        weight_threshold=wth,
        memory_threshold=float(data.get("memory_threshold", 1e-3)),
        bins_per_bit=int(data.get("bins_per_bit", 16)),
        quadrature_order=int(data.get("quadrature_order", 30)),
        per_dim_order=int(data.get("per_dim_order", 20)),
        mc_bits=int(data.get("mc_bits", 1_000_000)),
        channel_dir=channel_dir,
        raw=raw,
    )


def load_config(path) -> SweepConfig:
    path = Path(path)
    text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"line {exc.lineno} column {exc.colno}: {exc.msg}"]) from exc
    cfg = parse_config(data, text)
    if cfg.channel_dir and not Path(cfg.channel_dir).is_absolute():
        cfg.channel_dir = str((path.parent / cfg.channel_dir).resolve())
    return cfg


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def channel_filename(M: int, N: int, i: int, j: int) -> str:
    return f"h0_{M}x{N}_tx{i}_rx{j}.csv"


def _row_seed(seed: int, M: int, N: int, i: int) -> int:
    return int(np.random.SeedSequence([seed, M, N, i]).generate_state(1)[0])


def _row_key(cfg: SweepConfig, geoms, seed: int) -> str:
    payload = {
        "water": asdict(cfg.water),
        "geoms": [asdict(g) for g in geoms],
        "photon_count": cfg.photon_count,
        "seed": seed,
        "weight_threshold": cfg.weight_threshold,
        "bin_width": cfg.bit_duration / cfg.bins_per_bit,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:32]


def channel_matrix(cfg: SweepConfig, M: int, N: int, cache_dir: Path | None, workers: int = 1):
    """Impulse responses ``[i][j]``, loaded from ``channel_dir``, cache, or simulated."""
    if cfg.channel_dir:
        base = Path(cfg.channel_dir)
        return [
            [ImpulseResponse.from_csv(base / channel_filename(M, N, i, j)) for j in range(N)]
            for i in range(M)
        ]
    rows = []
    for i, geoms in enumerate(cfg.geometries(M, N)):
        seed = _row_seed(cfg.seed, M, N, i)
        key = _row_key(cfg, geoms, seed)
        paths = [cache_dir / f"{key}_rx{j}.csv" for j in range(N)] if cache_dir else []
        if paths and all(p.exists() for p in paths):
            rows.append([ImpulseResponse.from_csv(p) for p in paths])
            continue
        log.info("tracing %d photons for %dx%d transmitter %d", cfg.photon_count, M, N, i)
        row = trace_photons_multi(
            cfg.water,
            geoms,
            cfg.photon_count,
            cfg.weight_threshold,
            seed,
            bin_width=cfg.bit_duration / cfg.bins_per_bit,
            workers=workers,
        )
        for p, h in zip(paths, row):
            _atomic_write(p, h.to_csv())
        rows.append(row)
    return rows


def _cache_dir(arg: str | None, out: Path) -> Path:
    if arg:
        return Path(arg)
    if os.environ.get(CACHE_ENV):
        return Path(os.environ[CACHE_ENV])
    return out / ".cache"


def _evaluate(method, scn, cfg: SweepConfig, rule, seed: int):
    if method == "exact":
        return ber_mimo_exact(scn, rule, cfg.per_dim_order)
    if method == "upper":
        return ber_mimo_upper(scn, rule, cfg.per_dim_order)
    if method == "fw":
        return ber_mimo_fw(scn, rule, cfg.per_dim_order)
    rep = simulate_link_ber(scn, cfg.mc_bits, seed)
    return rep


def _point(method, scn, cfg, rule, seed):
    try:
        res = _evaluate(method, scn, cfg, rule, seed)
    except (BerError, ValueError, FloatingPointError) as exc:
        return {"ber": "", "diag_sequences": "", "diag_order": "", "diag_status": f"error: {exc}"}
    if hasattr(res, "ber_estimate"):
        return {
            "ber": repr(res.ber_estimate),
            "diag_sequences": res.bits_simulated,
            "diag_order": "",
            "diag_status": "ok" if res.errors_observed else "no errors observed",
        }
    d = res.diagnostics
    return {
        "ber": repr(res.ber),
        "diag_sequences": d.get("sequences", ""),
        "diag_order": "x".join(str(o) for o in d.get("order", [])),
        "diag_status": "ok",
    }


def result_filename(M: int, N: int, sigma: float) -> str:
    return f"ber_{M}x{N}_sigma{sigma:g}.csv"


def run_sweep(cfg: SweepConfig, out: Path | None = None, cache: str | None = None, threads: int = 1) -> int:
    out = Path(out or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    cache_dir = _cache_dir(cache, out)
    rule = ghq_rule(cfg.quadrature_order)
    outputs = []
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for M, N in cfg.configurations:
            responses = channel_matrix(cfg, M, N, cache_dir, workers=threads)
            pulse = TransmitPulse(1.0, cfg.bit_duration, transmitters=M)
            for sigma in cfg.sigma_X:
                base = build_scenario(
                    responses, pulse, cfg.noise, FadingSpec.from_sigma(sigma), cfg.memory_threshold
                )
                jobs = []
                for k, dbm in enumerate(cfg.power_dBm):
                    scn = base.scaled(10 ** ((dbm - 30) / 10))
                    for method in cfg.methods:
                        jobs.append((dbm, method, scn, cfg.seed + k))
                run = lambda job: _point(job[1], job[2], cfg, rule, job[3])  # noqa: E731
                results = list(pool.map(run, jobs)) if pool else [run(j) for j in jobs]
                buf = io.StringIO()
                writer = csv.DictWriter(
                    buf,
                    fieldnames=["power_dBm", "method", "ber", "diag_sequences", "diag_order", "diag_status"],
                    lineterminator="\n",
                )
                writer.writeheader()
                for (dbm, method, _, _), row in zip(jobs, results):
                    writer.writerow({"power_dBm": repr(dbm), "method": method, **row})
                name = result_filename(M, N, sigma)
                _atomic_write(out / name, buf.getvalue())
                outputs.append(name)
    finally:
        if pool:
            pool.shutdown()
    manifest = {
        "toolkit_version": __version__,
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "photon_count": cfg.photon_count,
        "outputs": outputs,
    }
    _atomic_write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return 0


def simulate_channels(cfg: SweepConfig, out: Path, cache: str | None = None, threads: int = 1) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    cache_dir = _cache_dir(cache, out)
    written = []
    for M, N in cfg.configurations:
        for i, row in enumerate(channel_matrix(cfg, M, N, cache_dir, workers=threads)):
            for j, h in enumerate(row):
                p = out / channel_filename(M, N, i, j)
                _atomic_write(p, h.to_csv())
                written.append(p)
    return written


def validate_report(cfg: SweepConfig, cache: str | None = None) -> str:
    """Derived quantities for a valid config, without simulating anything."""
    T_b = cfg.bit_duration
    nr = noise_variance(cfg.noise, T_b)
    lines = [
        "config OK",
        f"responsivity R = {cfg.noise.responsivity:.6g} A/W",
        f"sigma2_Tb = {nr.sigma2:.6g} C^2 ({nr.sigma2_counts:.6g} counts^2)",
        f"thermal count variance = {nr.component_counts('thermal'):.6g}",
        f"shot-noise negligibility bound = {nr.rhs_power:.6g} W",
        f"config hash = {cfg.config_hash()}",
    ]
    cache_dir = Path(cache) if cache else (Path(os.environ[CACHE_ENV]) if os.environ.get(CACHE_ENV) else None)
    R = cfg.noise.responsivity
    from .link import compute_gammas

    for M, N in cfg.configurations:
        pulse = TransmitPulse(1.0, T_b, transmitters=M)
        try:
            if cfg.channel_dir:
                resp = channel_matrix(cfg, M, N, None)
            elif cache_dir is not None:
                resp = []
                for i, geoms in enumerate(cfg.geometries(M, N)):
                    key = _row_key(cfg, geoms, _row_seed(cfg.seed, M, N, i))
                    resp.append([ImpulseResponse.from_csv(cache_dir / f"{key}_rx{j}.csv") for j in range(N)])
            else:
                raise FileNotFoundError
        except (FileNotFoundError, OSError):
            lines.append(f"{M}x{N}: channel memory L unknown (no cached response)")
            continue
        Ls = [[compute_gammas(h, pulse, R, cfg.memory_threshold).memory for h in row] for row in resp]
        lines.append(f"{M}x{N}: channel memory L per link = {Ls}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uwoc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in ("simulate-channel", "validate", "sweep"):
        p = sub.add_parser(verb)
        p.add_argument("--config", default=None, help="JSON config (default: bundled coastal defaults)")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--cache", default=None, help=f"cache directory (env {CACHE_ENV})")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    path = Path(args.config) if args.config else default_config_path()
    try:
        if not path.exists():
            raise ConfigError([f"config file not found: {path}"])
        cfg = load_config(path)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"{path}: {problem}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.raw["seed"] = args.seed
    if args.verb == "validate":
        print(validate_report(cfg, args.cache))
        return 0
    out = Path(args.out or cfg.output)
    if args.verb == "simulate-channel":
        for p in simulate_channels(cfg, out, args.cache, args.threads):
            print(p)
        return 0
    return run_sweep(cfg, out, args.cache, args.threads)


if __name__ == "__main__":
    sys.exit(main())
