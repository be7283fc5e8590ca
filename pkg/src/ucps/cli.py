"""Command-line batch driver.

Every subcommand writes a CSV whose ``#`` header lines hold the package
version, the subcommand and the fully resolved configuration. Cells (seeds,
angles, sizes) may run concurrently; rows are always emitted in cell order.
The exit status is 0 only if every cell succeeded.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import __version__
from .models import MODELS, SZ, build_model, model_hamiltonian, rotate_basis, rotate_operator
from .observables import (
    correlation_length,
    energy_density,
    entanglement_entropy,
    order_parameter,
    rate_function,
)
from .oracles import (
    QuenchOracle,
    critical_times,
    heisenberg_ground_energy,
    ising_ground_energy,
    xy_ground_energy,
)
from .scaling import fit_report
from .state import UcpsState, environments, random_state, schmidt_coefficients
from .tdvp import RkfOptions, Schedule, evolve, ground_state, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

ENGINES = ("ucps", "umps")
CLUSTER_TOL = 1e-8


class ConfigError(ValueError):
    """Invalid run configuration."""


@dataclass(frozen=True)
class QuenchConfig:
    h0: float
    h1: float
    t_max: float
    rkf_tol: float = 1e-8
    output_dt: float = 0.01


@dataclass(frozen=True)
class RunConfig:
    """Resolved run configuration; see ``--help`` for the meaning of each key."""

    model: str = "ising"
    J: float = 1.0
    h: float = 1.0
    gamma: float = 0.0
    theta: float = 0.0
    engine: str = "ucps"
    n: int = 2
    D: int = 8
    seeds: tuple[int, ...] = (0,)
    dt: float = 0.05
    tol: float = 1e-8
    max_steps: int = 5000
    cluster_tol: float = CLUSTER_TOL
    quench: QuenchConfig | None = None
    output_path: str | None = None

    def __post_init__(self) -> None:
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}")
        if self.engine not in ENGINES:
            raise ConfigError(f"engine must be one of {ENGINES}")
        numbers = [self.J, self.h, self.gamma, self.theta, self.dt, self.tol, self.cluster_tol]
        if self.quench is not None:
            q = self.quench
            numbers += [q.h0, q.h1, q.t_max, q.rkf_tol, q.output_dt]
            if q.t_max <= 0 or q.output_dt <= 0 or q.rkf_tol <= 0:
                raise ConfigError("quench t_max, output_dt and rkf_tol must be positive")
        if not all(math.isfinite(x) for x in numbers):
            raise ConfigError("numeric fields must be finite")
        if self.n < 1 or self.D < 1:
            raise ConfigError("n and D must be at least 1")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.dt <= 0 or self.tol <= 0 or self.max_steps < 0 or self.cluster_tol <= 0:
            raise ConfigError("dt, tol and cluster_tol must be positive, max_steps nonnegative")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


_CONFIG_KEYS = {f.name for f in fields(RunConfig)}


def config_from_mapping(raw: dict) -> RunConfig:
    """Build a config from a flat mapping (``params`` and ``quench`` may be nested)."""
    raw = dict(raw)
    params = raw.pop("params", {}) or {}
    for key, value in params.items():
        if key not in ("J", "h", "gamma"):
            raise ConfigError(f"unknown parameter {key!r}")
        raw.setdefault(key, value)
    unknown = set(raw) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if raw.get("quench") is not None:
        try:
            raw["quench"] = QuenchConfig(**raw["quench"])
        except TypeError as exc:
            raise ConfigError(f"bad quench block: {exc}") from exc
    if "seeds" in raw:
        raw["seeds"] = tuple(int(s) for s in raw["seeds"])
    for key in ("n", "D", "max_steps"):
        if key in raw:
            raw[key] = int(raw[key])
    for key in ("J", "h", "gamma", "theta", "dt", "tol", "cluster_tol"):
        if key in raw:
            raw[key] = float(raw[key])
    return RunConfig(**raw)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return config_from_mapping(raw)


# ---------------------------------------------------------------- helpers


def parse_list(text: str, kind: Callable = float) -> list:
    """Comma-separated values; ``a:b:k`` expands to ``k`` evenly spaced floats."""
    out: list = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if ":" in part:
                a, b, k = part.split(":")
                out.extend(kind(x) for x in np.linspace(float(a), float(b), int(k)))
            else:
                out.append(kind(part))
        except ValueError:
            raise ConfigError(f"bad list entry {part!r}; expected a value or start:stop:count") from None
    return out


def cluster_energies(energies: Iterable[float], tol: float = CLUSTER_TOL) -> list[tuple[float, int]]:
    """Group sorted finite energies whose consecutive gaps are below ``tol``.

    Returns ``(mean energy, population)`` per cluster, lowest first.
    """
    values = sorted(e for e in energies if math.isfinite(e))
    clusters: list[list[float]] = []
    for e in values:
        if clusters and e - clusters[-1][-1] <= tol:
            clusters[-1].append(e)
        else:
            clusters.append([e])
    return [(float(np.mean(c)), len(c)) for c in clusters]


def branch_index(energy: float, clusters: Sequence[tuple[float, int]], tol: float) -> int:
    for k, (e, _) in enumerate(clusters):
        if abs(energy - e) <= tol:
            return k
    return -1


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return "" if x is None else str(x)


@dataclass
class Table:
    """A CSV body with ``#`` comment lines before and after it."""

    columns: list[str]
    rows: list[list] = field(default_factory=list)
    header: list[str] = field(default_factory=list)
    footer: list[str] = field(default_factory=list)

    def render(self) -> str:
        buf = io.StringIO()
        for line in self.header:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([fmt(x) for x in row])
        for line in self.footer:
            buf.write(f"# {line}\n")
        return buf.getvalue()


def run_cells(fn: Callable, cells: Sequence, threads: int) -> list:
    """``fn`` over ``cells``; results come back in cell order."""
    if threads <= 1 or len(cells) <= 1:
        return [fn(c) for c in cells]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, cells))


# ---------------------------------------------------------------- ground-state cells


@dataclass
class CellResult:
    seed: int
    converged: bool
    energy: float
    entropy: float
    corr_length: float
    order_param: float
    wall_time_s: float
    steps: int
    error: str = ""
    state: object = None


def _ucps_cell(cfg: RunConfig, seed: int) -> CellResult:
    H = model_hamiltonian(cfg.model, cfg.n, J=cfg.J, h=cfg.h, gamma=cfg.gamma, theta=cfg.theta)
    res = ground_state(random_state(cfg.n, seed=seed), H, Schedule(dt=cfg.dt, tol=cfg.tol, max_steps=cfg.max_steps))
    env = environments(res.state)
    return CellResult(
        seed=seed,
        converged=res.converged,
        energy=energy_density(res.state, env, H),
        entropy=entanglement_entropy(schmidt_coefficients(res.state, env)),
        corr_length=correlation_length(env, cfg.n, "ucps"),
        order_param=order_parameter(res.state, env, rotate_operator(SZ, cfg.theta)),
        wall_time_s=0.0,
        steps=res.steps,
        state=res.state,
    )


def _umps_cell(cfg: RunConfig, seed: int) -> CellResult:
    from .umps import random_umps, two_site_matrix, umps_environments, umps_ground_state, umps_observables, umps_one_site

    terms = rotate_basis(build_model(cfg.model, J=cfg.J, h=cfg.h, gamma=cfg.gamma), cfg.theta)
    hb = two_site_matrix(terms)
    res = umps_ground_state(random_umps(2, cfg.D, seed=seed), hb, dt=cfg.dt, tol=cfg.tol, max_steps=cfg.max_steps)
    env = umps_environments(res.state)
    obs = umps_observables(res.state, hb, env)
    return CellResult(
        seed=seed,
        converged=res.converged,
        energy=obs["energy"],
        entropy=obs["entropy"],
        corr_length=obs["corr_length"],
        order_param=float(umps_one_site(res.state, env, rotate_operator(SZ, cfg.theta)).real),
        wall_time_s=0.0,
        steps=res.steps,
        state=res.state,
    )


def ground_state_cell(cfg: RunConfig, seed: int) -> CellResult:
    """One seed; failures are recorded in the result instead of raised."""
    start = time.perf_counter()
    try:
        out = _ucps_cell(cfg, seed) if cfg.engine == "ucps" else _umps_cell(cfg, seed)
    except (ArithmeticError, RuntimeError, ValueError) as exc:
        log.warning("seed %d failed: %s", seed, exc)
        nan = float("nan")
        out = CellResult(seed, False, nan, nan, nan, nan, 0.0, 0, error=f"{type(exc).__name__}: {exc}")
    out.wall_time_s = time.perf_counter() - start
    return out


def _header(command: str, cfg: RunConfig, extra: dict | None = None) -> list[str]:
    lines = [f"ucps {__version__} {command}", f"config: {cfg.to_json()}"]
    if extra:
        lines.append(f"options: {json.dumps(extra, sort_keys=True)}")
    return lines


def cmd_groundstate(cfg: RunConfig, threads: int = 1, timing: bool = True) -> tuple[Table, bool]:
    results = run_cells(lambda s: ground_state_cell(cfg, s), list(cfg.seeds), threads)
    columns = ["seed", "converged", "energy", "entropy", "corr_length", "order_param", "wall_time_s", "steps", "error"]
    table = Table(columns, header=_header("groundstate", cfg))
    for r in results:
        table.rows.append([r.seed, r.converged, r.energy, r.entropy, r.corr_length, r.order_param,
                           r.wall_time_s if timing else None, r.steps, r.error])
    clusters = cluster_energies([r.energy for r in results if r.converged], cfg.cluster_tol)
    table.footer.append(f"clusters (tol {cfg.cluster_tol:g}): {len(clusters)}")
    for e, count in clusters:
        table.footer.append(f"cluster energy={e!r} population={count}")
    return table, all(r.converged for r in results)


def cmd_angle_scan(cfg: RunConfig, thetas: Sequence[float], threads: int = 1) -> tuple[Table, bool]:
    if len(thetas) < 1:
        raise ConfigError("at least one angle is required")
    cells = [(float(t), s) for t in thetas for s in cfg.seeds]
    results = run_cells(lambda c: ground_state_cell(replace(cfg, theta=c[0]), c[1]), cells, threads)
    table = Table(["theta", "seed", "converged", "energy", "branch", "error"], header=_header("angle-scan", cfg, {"thetas": list(thetas)}))
    ok = True
    for theta in dict.fromkeys(float(t) for t in thetas):
        group = [r for (t, _), r in zip(cells, results) if t == theta]
        clusters = cluster_energies([r.energy for r in group if r.converged], cfg.cluster_tol)
        for r in group:
            b = branch_index(r.energy, clusters, cfg.cluster_tol) if r.converged else -1
            table.rows.append([theta, r.seed, r.converged, r.energy, b, r.error])
            ok &= r.converged
        summary = " ".join(f"{e!r}({c})" for e, c in clusters)
        table.footer.append(f"theta={theta!r} branches={len(clusters)} minima: {summary}")
    return table, ok


# ---------------------------------------------------------------- quench


def cmd_quench(
    cfg: RunConfig,
    initial: UcpsState | None = None,
    save_initial: str | Path | None = None,
) -> tuple[Table, bool]:
    """Real-time evolution from the ground state at ``h0`` under the field ``h1``."""
    if cfg.quench is None:
        raise ConfigError("quench block missing from config")
    if cfg.engine != "ucps":
        raise ConfigError("quench is implemented for the ucps engine only")
    q = cfg.quench
    H0 = model_hamiltonian(cfg.model, cfg.n, J=cfg.J, h=q.h0, gamma=cfg.gamma, theta=cfg.theta)
    H1 = model_hamiltonian(cfg.model, cfg.n, J=cfg.J, h=q.h1, gamma=cfg.gamma, theta=cfg.theta)
    header = _header("quench", cfg)
    if initial is None:
        gs = ground_state(random_state(cfg.n, seed=cfg.seeds[0]), H0, Schedule(dt=cfg.dt, tol=cfg.tol, max_steps=cfg.max_steps))
        if not gs.converged:
            log.warning("pre-quench ground state not converged (gradient %.3g)", gs.gradient_norm)
        initial, gs_ok = gs.state, gs.converged
        header.append(f"initial: ground state seed={cfg.seeds[0]} converged={str(gs.converged).lower()} gradient={gs.gradient_norm!r}")
    else:
        gs_ok = True
        header.append("initial: loaded from checkpoint")
    if save_initial is not None:
        save_checkpoint(save_initial, initial, step=0, h=q.h0)
    psi0 = initial
    zop = rotate_operator(SZ, cfg.theta)

    def observe(s: UcpsState) -> dict[str, float]:
        env = environments(s)
        rate = rate_function(psi0, s)
        return {
            "energy": energy_density(s, env, H1),
            "entropy": entanglement_entropy(schmidt_coefficients(s, env)),
            "rate_function": rate.value,
            "rate_saturated": float(rate.saturated),
            "order_param": order_parameter(s, env, zop),
        }

    cache: dict[int, dict[str, float]] = {}

    def observer(name: str) -> Callable[[UcpsState], float]:
        def fn(s: UcpsState) -> float:
            if id(s) not in cache:
                cache.clear()
                cache[id(s)] = observe(s)
            return cache[id(s)][name]
        return fn

    names = ["energy", "entropy", "rate_function", "rate_saturated", "order_param"]
    ev = evolve(psi0, H1, q.t_max, RkfOptions(rtol=q.rkf_tol), {k: observer(k) for k in names}, output_dt=q.output_dt)
    table = Table(["t", "energy", "entropy", "rate_function", "order_param", "rate_saturated"], header=header)
    for i, t in enumerate(ev.times):
        o = {k: ev.observables[k][i] for k in names}
        table.rows.append([t, o["energy"], o["entropy"], o["rate_function"], o["order_param"], bool(o["rate_saturated"])])
    table.footer.append(f"completed={str(ev.completed).lower()} accepted_steps={ev.accepted_steps} rejected_steps={ev.rejected_steps}")
    if ev.message:
        table.footer.append(f"aborted: {ev.message}")
    return table, ev.completed and gs_ok


# ---------------------------------------------------------------- scaling


def cmd_scaling(cfg: RunConfig, sizes: Sequence[int], threads: int = 1) -> tuple[Table, bool]:
    """Ground states over overlaps ``n`` (ucps) or bond dimensions ``D`` (umps), then the fits.

    Each size keeps its lowest-energy converged seed.
    """
    if len(sizes) < 3:
        raise ConfigError("scaling needs at least three sizes")
    key = "n" if cfg.engine == "ucps" else "D"
    cells = [(int(size), s) for size in sizes for s in cfg.seeds]
    results = run_cells(lambda c: ground_state_cell(replace(cfg, **{key: c[0]}), c[1]), cells, threads)
    table = Table(["n_or_D", "energy", "entropy", "corr_length", "converged", "seed"], header=_header("scaling", cfg, {"sizes": list(sizes)}))
    kept = []
    ok = True
    for size in dict.fromkeys(int(x) for x in sizes):
        group = [r for (z, _), r in zip(cells, results) if z == size]
        good = [r for r in group if r.converged]
        ok &= len(good) == len(group)
        best = min(good, key=lambda r: r.energy) if good else min(group, key=lambda r: (not math.isfinite(r.energy), r.energy))
        table.rows.append([size, best.energy, best.entropy, best.corr_length, best.converged, best.seed])
        if best.converged and best.corr_length > 0:
            kept.append((size, best.entropy, best.corr_length))
    if len(kept) >= 3:
        sz, S, mu = (np.array(v, dtype=float) for v in zip(*kept))
        report = fit_report(sz, S, mu)
        for name in sorted(report):
            table.footer.append(f"{name}={report[name]!r}")
    else:
        table.footer.append(f"fit skipped: only {len(kept)} usable sizes")
        ok = False
    return table, ok


# ---------------------------------------------------------------- oracle tables


def cmd_oracle(kind: str, args: argparse.Namespace) -> Table:
    if kind == "ising":
        hs = parse_list(args.h)
        return Table(["h", "energy"], [[h, ising_ground_energy(h)] for h in hs], [f"ucps {__version__} oracle ising"])
    if kind == "xy":
        hs, gs = parse_list(args.h), parse_list(args.gamma)
        rows = [[h, g, xy_ground_energy(h, g)] for h in hs for g in gs]
        return Table(["h", "gamma", "energy"], rows, [f"ucps {__version__} oracle xy"])
    if kind == "heisenberg":
        return Table(["energy"], [[heisenberg_ground_energy()]], [f"ucps {__version__} oracle heisenberg"])
    if kind == "quench":
        orc = QuenchOracle(args.h0, args.h1)
        times = np.arange(int(round(args.t_max / args.dt)) + 1) * args.dt
        table = Table(["t", "rate_function"], [[float(t), orc.rate(float(t))] for t in times],
                      [f"ucps {__version__} oracle quench h0={args.h0!r} h1={args.h1!r}"])
        crit = critical_times(args.h0, args.h1, count=5)
        table.footer.append("critical_times: " + " ".join(repr(float(t)) for t in crit))
        return table
    raise ConfigError(f"unknown oracle {kind!r}")


# ---------------------------------------------------------------- entry point


CONFIG_HELP = """\
config keys (JSON object, all optional):
  model        ising | xy | heisenberg                       [ising]
  J, h, gamma  couplings, also accepted inside "params"       [1, 1, 0]
  theta        basis rotation angle about y, radians          [0]
  engine       ucps | umps                                    [ucps]
  n            uCPS overlap (D = 2^n)                         [2]
  D            uMPS bond dimension                            [8]
  seeds        list of integer seeds                          [[0]]
  dt, tol      imaginary-time step and gradient tolerance     [0.05, 1e-8]
  max_steps    imaginary-time step limit                      [5000]
  cluster_tol  energy tolerance for branch clustering         [1e-8]
  quench       {"h0", "h1", "t_max", "rkf_tol"=1e-8, "output_dt"=0.01}
  output_path  CSV destination when --out is not given        [stdout]
"""


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ucps", description="uCPS / uMPS spin-chain experiments.", epilog=CONFIG_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"ucps {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help="output CSV path (default: config output_path or stdout)")
        p.add_argument("--seeds", help="seeds overriding the config, e.g. 0,1,2")
        p.add_argument("--threads", type=int, default=1, help="concurrent cells [1]")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (JSON value), repeatable")

    p = sub.add_parser("groundstate", help="ground state per seed plus branch clusters")
    common(p)
    p.add_argument("--no-timing", action="store_true", help="leave wall_time_s empty for byte-reproducible output")
    p = sub.add_parser("angle-scan", help="ground-state energies over basis angles")
    common(p)
    p.add_argument("--thetas", required=True, help="angles in radians: list or start:stop:count")
    p = sub.add_parser("quench", help="real-time quench and Loschmidt rate")
    common(p)
    p.add_argument("--initial", help="checkpoint holding the pre-quench state")
    p.add_argument("--save-initial", help="write the pre-quench state to this checkpoint")
    p = sub.add_parser("scaling", help="observables over overlaps or bond dimensions, with fits")
    common(p)
    p.add_argument("--sizes", required=True, help="n values (ucps) or D values (umps)")
    p = sub.add_parser("oracle", help="exact reference tables")
    p.add_argument("kind", choices=["ising", "xy", "heisenberg", "quench"])
    p.add_argument("--out")
    p.add_argument("--h", default="0,0.5,1", help="fields for ising/xy [0,0.5,1]")
    p.add_argument("--gamma", default="1", help="anisotropies for xy [1]")
    p.add_argument("--h0", type=float, default=1.5)
    p.add_argument("--h1", type=float, default=0.1)
    p.add_argument("--t-max", type=float, default=3.0)
    p.add_argument("--dt", type=float, default=0.01)
    return parser


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config)
    if args.set:
        raw = json.loads(cfg.to_json())
        for item in args.set:
            key, _, value = item.partition("=")
            try:
                raw[key] = json.loads(value)
            except json.JSONDecodeError:
                raw[key] = value
        cfg = config_from_mapping(raw)
    if args.seeds:
        cfg = replace(cfg, seeds=tuple(parse_list(args.seeds, int)))
    return cfg


def _write(text: str, path: str | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "oracle":
            _write(cmd_oracle(args.kind, args).render(), args.out)
            return 0
        cfg = _resolve_config(args)
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        if args.command == "groundstate":
            table, ok = cmd_groundstate(cfg, args.threads, timing=not args.no_timing)
        elif args.command == "angle-scan":
            table, ok = cmd_angle_scan(cfg, parse_list(args.thetas), args.threads)
        elif args.command == "quench":
            initial = load_checkpoint(args.initial)[0] if args.initial else None
            table, ok = cmd_quench(cfg, initial, args.save_initial)
        else:
            table, ok = cmd_scaling(cfg, parse_list(args.sizes, int), args.threads)
    except (ConfigError, OSError) as exc:
        print(f"ucps: error: {exc}", file=sys.stderr)
        return 2
    _write(table.render(), args.out or cfg.output_path)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
