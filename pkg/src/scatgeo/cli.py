"""Command-line experiments: ``scatgeo <command> --config cfg.json --out dir``.

Each command validates its config before computing anything, writes one
report to the output directory and returns 0, 2 (bad input) or 3 (numerical
failure).  Reports carry the SHA-256 of the canonical config and the
constants used; nothing time-dependent is written, so reruns are
byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
from pathlib import Path
from typing import Annotated, Any, Callable, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import diagnostics as dg
from . import eikonal as ek
from .errors import NumericError, ParameterError
from .geometry import MassSpec
from .grid import (
    ModelSpec,
    PairPotential,
    energy,
    gaussian_state,
    position_moments,
    propagate,
)
from .lattice import ClusterDecomposition, enumerate_decompositions
from .partition import select_constants, verify_partition, verify_regions

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3

Positive = Annotated[float, Field(gt=0, allow_inf_nan=False)]
Finite = Annotated[float, Field(allow_inf_nan=False)]


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# shared blocks ------------------------------------------------------------------

class PairBlock(Strict):
    i: int = Field(ge=1)
    j: int = Field(ge=1)
    kind: Literal["long_range_power", "poschl_teller", "zero"]
    c: Finite = 0.0
    epsilon: float = Field(0.5, gt=0, lt=1)


class GridBlock(Strict):
    L: Positive
    M: int = Field(ge=16)


class ModelBlock(Strict):
    masses: list[Positive] = Field(min_length=2, max_length=3)
    nu: Literal[1] = 1
    hbar: Positive = 1.0
    pairs: list[PairBlock] = []
    grid: GridBlock
    pair_points: Optional[int] = Field(None, ge=16)

    def build(self) -> ModelSpec:
        pairs = tuple(PairPotential(p.i, p.j, p.kind, p.c, p.epsilon) for p in self.pairs)
        return ModelSpec(
            MassSpec(tuple(self.masses), self.hbar), pairs, self.grid.L, self.grid.M,
            self.nu, self.pair_points,
        )


def _decomposition(blocks, n: int) -> ClusterDecomposition:
    if blocks is None:
        return ClusterDecomposition.singletons(n)
    return ClusterDecomposition(blocks, n)


class PacketBlock(Strict):
    """Product Gaussian in the Jacobi frame of ``frame`` (singletons if omitted)."""

    centre: list[Finite]
    width: list[Positive]
    momentum: Optional[list[Finite]] = None
    frame: Optional[list[list[int]]] = None

    def build(self, model: ModelSpec):
        dim = model.n - 1
        for name in ("centre", "width", "momentum"):
            v = getattr(self, name)
            if v is not None and len(v) != dim:
                raise ParameterError(f"state.{name} needs {dim} entries, got {len(v)}")
        h = model.hamiltonian(_decomposition(self.frame, model.n))
        return gaussian_state(model.grid(), h.frame, self.centre, self.width, self.momentum), h


class Base(Strict):
    kind: Optional[str] = None
    seed: int = 0


# per-command configs ----------------------------------------------------------

class PartitionConfig(Base):
    n: int = Field(ge=2, le=8)
    samples: int = Field(10_000, ge=1)
    nu: int = Field(1, ge=1)
    masses: Optional[list[Positive]] = None
    locality_probes: int = Field(1000, ge=1)
    support_threshold: Positive = 1e-12

    @model_validator(mode="after")
    def _masses_match(self):
        if self.masses is not None and len(self.masses) != self.n:
            raise ValueError(f"masses needs {self.n} entries")
        return self


class RegionCheckConfig(Base):
    n: int = Field(ge=2, le=8)
    samples: int = Field(10_000, ge=1)
    nu: int = Field(1, ge=1)
    masses: Optional[list[Positive]] = None
    gamma1: Optional[float] = Field(None, gt=1)
    gamma2: Optional[float] = Field(None, gt=1)

    @model_validator(mode="after")
    def _masses_match(self):
        if self.masses is not None and len(self.masses) != self.n:
            raise ValueError(f"masses needs {self.n} entries")
        return self


class SimulateConfig(Base):
    model: ModelBlock
    state: PacketBlock
    dt: Positive
    steps: int = Field(ge=1)
    record_every: int = Field(1, ge=1)


class ChannelStateBlock(Strict):
    kind: Literal["channel", "gaussian"]
    b: Optional[list[list[int]]] = None
    level: int = Field(0, ge=0)
    centre: list[Finite]
    width: list[Positive]
    momentum: Optional[list[Finite]] = None
    frame: Optional[list[list[int]]] = None

    @model_validator(mode="after")
    def _channel_needs_b(self):
        if self.kind == "channel" and self.b is None:
            raise ValueError("a channel state needs the decomposition b")
        return self


class WindowBlock(Strict):
    lo: Finite
    hi: Finite
    width: Positive
    bound_count: int = Field(4, ge=0)


class RegionBlock(Strict):
    sigma: Positive
    delta: Optional[Positive] = None
    R: Optional[Positive] = None
    r: float = Field(1.0, ge=0, le=1)
    width: Optional[Positive] = None
    sharp: bool = False


class ChannelsConfig(Base):
    model: ModelBlock
    state: ChannelStateBlock
    window: Optional[WindowBlock] = None
    regions: RegionBlock
    schedule: list[Positive] = Field(min_length=1)
    dt: Positive


class PotentialBlock(Strict):
    c: Finite
    epsilon: float = Field(gt=0, lt=1)


class EikonalConfig(Base):
    potential: PotentialBlock
    theta: float = Field(0.5, gt=0, lt=1)
    d: Positive = 0.5
    R0: Optional[float] = Field(None, gt=1)
    depth: int = Field(2, ge=1)
    nu: int = Field(1, ge=1)
    z_range: Optional[tuple[Positive, Positive]] = None
    samples_per_shell: int = Field(200, ge=1)
    xi_max: Positive = 2.0
    quantities: list[Literal["correction", "gradient", "residual"]] = Field(
        ["correction", "gradient", "residual"], min_length=1
    )


class PhaseBlock(Strict):
    theta: float = Field(0.5, gt=0, lt=1)
    d: Positive = 0.5
    R0: Optional[float] = Field(None, gt=1)
    depth: int = Field(2, ge=1)


class ProbeConfig(Base):
    model: ModelBlock
    state: PacketBlock
    phase: Optional[PhaseBlock] = PhaseBlock()
    schedule: list[Positive] = Field(min_length=2)
    dt: Positive
    sigma: Positive = 0.5
    compare_unmodified: bool = False
    edge_tol: Positive = 1e-8


# report writing ---------------------------------------------------------------

def _plain(value: Any) -> Any:
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    return value


def canonical_json(data: Any) -> str:
    return json.dumps(_plain(data), sort_keys=True, separators=(",", ":"))


def config_hash(cfg: BaseModel) -> str:
    return hashlib.sha256(canonical_json(cfg.model_dump(mode="json")).encode()).hexdigest()


class Report:
    def __init__(self, command: str, cfg: BaseModel, constants: dict, result: dict, table: list[list]):
        self.command = command
        self.cfg = cfg
        self.constants = constants
        self.result = result
        self.table = table

    def json(self) -> str:
        doc = {
            "command": self.command,
            "config_sha256": config_hash(self.cfg),
            "config": self.cfg.model_dump(mode="json"),
            "constants": self.constants,
            "result": self.result,
        }
        return json.dumps(_plain(doc), sort_keys=True, indent=2) + "\n"

    def csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# command: {self.command}\n")
        buf.write(f"# config_sha256: {config_hash(self.cfg)}\n")
        buf.write(f"# constants: {canonical_json(self.constants)}\n")
        w = csv.writer(buf, lineterminator="\n")
        for row in self.table:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
        return buf.getvalue()


# commands -----------------------------------------------------------------------

def run_partition(cfg: PartitionConfig) -> Report:
    constants = select_constants(cfg.n)
    rep = verify_partition(
        constants, cfg.n, cfg.samples, cfg.seed, cfg.nu, cfg.masses,
        cfg.locality_probes, cfg.support_threshold,
    )
    result = rep.to_dict()
    table = [["index", "decomposition", "J_sum_deviation", "J_b"]] + [list(w) for w in rep.worst]
    return Report("partition-verify", cfg, constants.to_dict(), result, table)


def run_region_check(cfg: RegionCheckConfig) -> Report:
    constants = select_constants(cfg.n)
    rep = verify_regions(constants, cfg.n, cfg.samples, cfg.seed, cfg.nu, cfg.masses, cfg.gamma1, cfg.gamma2)
    table = [["property", "violations"]] + [[k, v] for k, v in sorted(rep.violations.items())]
    consts = dict(constants.to_dict(), gamma1=rep.gamma1, gamma2=rep.gamma2)
    return Report("lemma31", cfg, consts, rep.to_dict(), table)


def run_simulate(cfg: SimulateConfig) -> Report:
    model = cfg.model.build()
    psi, h = cfg.state.build(model)
    dim = psi.grid.dim
    axes = [""] if dim == 1 else [f"_{k + 1}" for k in range(dim)]
    header = ["t", "norm_sq", "energy"] + [f"mean{a}" for a in axes] + [f"variance{a}" for a in axes]
    rows = []

    def record(state):
        mean, cov = position_moments(state)
        rows.append([state.time, state.norm_sq(), energy(state, h), *mean.tolist(), *np.diag(cov).tolist()])

    record(psi)
    done = 0
    while done < cfg.steps:
        n = min(cfg.record_every, cfg.steps - done)
        psi = propagate(psi, h, cfg.dt, n)
        done += n
        record(psi)
    result = {"columns": header, "rows": rows, "frame": h.frame.to_dict()}
    consts = {"spacing": psi.grid.spacing, "frame_weights": list(h.frame.weights)}
    return Report("simulate", cfg, consts, result, [header] + rows)


def run_channels(cfg: ChannelsConfig) -> Report:
    model = cfg.model.build()
    st = cfg.state
    if st.kind == "channel":
        b = ClusterDecomposition(st.b, model.n)
        if len(st.centre) != 1 or len(st.width) != 1 or (st.momentum and len(st.momentum) != 1):
            raise ParameterError("a channel state takes one centre, width and momentum")
        psi = dg.channel_state(model, b, st.centre[0], st.width[0], (st.momentum or [0.0])[0], st.level)
    else:
        psi, _ = PacketBlock(centre=st.centre, width=st.width, momentum=st.momentum, frame=st.frame).build(model)
    h = model.hamiltonian(psi.frame.decomposition)
    info: dict = {}
    if cfg.window is not None:
        w = cfg.window
        win = dg.EnergyWindow(w.lo, w.hi, w.width)
        psi, info = dg.prepare_state(psi, model, win, h=h, count=w.bound_count)
    rg = cfg.regions
    params = {
        b: dg.RegionParams(b, rg.r, rg.sigma, rg.delta, rg.R, rg.width, rg.sharp)
        for b in enumerate_decompositions(model.n)
        if b.size >= 2
    }
    reports = dg.channel_series(psi, h, params, cfg.schedule, cfg.dt)
    table = [["t", "decomposition", "occupation", "deficit", "outside", "overlap"]]
    for rep in reports:
        for row in list(csv.reader(io.StringIO(rep.to_csv())))[1:]:
            table.append([rep.time, row[1], rep.occupation[row[1]], rep.deficit[row[1]], rep.outside, rep.overlap])
    result = {"preparation": info, "reports": [r.to_dict() for r in reports]}
    consts = {"regions": {p.b.to_json(): _region_dict(p) for p in params.values()}}
    return Report("channels", cfg, consts, result, table)


def _region_dict(p: dg.RegionParams) -> dict:
    return {"r": p.r, "sigma": p.sigma, "delta": p.delta, "R": p.R, "width": p.width, "sharp": p.sharp}


def run_eikonal(cfg: EikonalConfig) -> Report:
    pot = ek.LongRangePotential(cfg.potential.c, cfg.potential.epsilon)
    pf = ek.build_phase(pot, cfg.theta, cfg.d, cfg.R0, cfg.depth, cfg.nu)
    table = [["quantity", "shell_centre", "sup", "fitted_slope"]]
    result = {}
    for q in cfg.quantities:
        rep = ek.shell_sup(pf, q, cfg.z_range, cfg.samples_per_shell, cfg.seed, cfg.xi_max)
        result[q] = rep.to_dict()
        table += [[q, c, s, rep.slope] for c, s in zip(rep.centres, rep.sup)]
    return Report("eikonal", cfg, pf.to_dict(), result, table)


def run_probe(cfg: ProbeConfig) -> Report:
    model = cfg.model.build()
    if model.n != 2:
        raise ParameterError("the probe runs on two-particle models")
    psi, h_full = cfg.state.build(model)
    h_free = h_full.restricted("internal", ClusterDecomposition.singletons(2))
    pf = None
    if cfg.phase is not None:
        lr = [p for p in model.pairs if p.kind == "long_range_power"]
        pot = ek.LongRangePotential(lr[0].strength, lr[0].epsilon) if lr else ek.LongRangePotential(0.0, 0.5)
        ph = cfg.phase
        pf = ek.build_phase(pot, ph.theta, ph.d, ph.R0, ph.depth)
    rep = ek.wave_operator_probe(
        psi, h_full, h_free, pf, cfg.schedule, cfg.dt, cfg.sigma, cfg.compare_unmodified, cfg.edge_tol
    )
    header = ["T", "increment", "ratio", "unmodified_increment"]
    table = [header]
    for k, T in enumerate(rep.schedule[1:]):
        ratio = rep.ratios[k - 1] if k >= 1 else ""
        base = rep.unmodified_increments[k] if rep.unmodified_increments else ""
        table.append([T, rep.increments[k], ratio, base])
    return Report("probe", cfg, rep.params, rep.to_dict(), table)


COMMANDS: dict[str, tuple[type[Base], Callable, set[str]]] = {
    "partition-verify": (PartitionConfig, run_partition, {"partition-verify"}),
    "lemma31": (RegionCheckConfig, run_region_check, {"lemma31", "lemma31-sample"}),
    "simulate": (SimulateConfig, run_simulate, {"simulate"}),
    "channels": (ChannelsConfig, run_channels, {"channels"}),
    "eikonal": (EikonalConfig, run_eikonal, {"eikonal", "eikonal-residual"}),
    "probe": (ProbeConfig, run_probe, {"probe", "wave-probe"}),
}


# entry point --------------------------------------------------------------------

def _fail(code: int, kind: str, message: str, details=None) -> int:
    err = {"error": kind, "message": message}
    if details is not None:
        err["details"] = details
    sys.stderr.write(json.dumps(_plain(err), sort_keys=True) + "\n")
    return code


def load_config(command: str, path: Path, seed: int | None) -> Base:
    schema, _, kinds = COMMANDS[command]
    raw = json.loads(path.read_text())
    if not isinstance(raw, dict):
        raise ParameterError("config must be a JSON object")
    if seed is not None:
        raw["seed"] = seed
    cfg = schema.model_validate(raw)
    if cfg.kind is not None and cfg.kind not in kinds:
        raise ParameterError(f"config kind {cfg.kind!r} does not match command {command!r}")
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scatgeo", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, type=Path)
    parser.add_argument("--out", required=True, type=Path)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--format", choices=("json", "csv"), default="json")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        cfg = load_config(args.command, args.config, args.seed)
    except ValidationError as exc:
        details = [{"loc": list(e["loc"]), "msg": e["msg"]} for e in exc.errors()]
        return _fail(EXIT_INPUT, "schema", "config failed validation", details)
    except json.JSONDecodeError as exc:
        return _fail(EXIT_INPUT, "json", str(exc))
    except OSError as exc:
        return _fail(EXIT_INPUT, "file", str(exc))
    except ParameterError as exc:
        return _fail(EXIT_INPUT, "parameter", str(exc))
    try:
        report = COMMANDS[args.command][1](cfg)
    except NumericError as exc:
        return _fail(EXIT_NUMERIC, "numeric", str(exc))
    except (ParameterError, ValueError) as exc:
        return _fail(EXIT_INPUT, "parameter", str(exc))
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        target = args.out / f"{args.command}.{args.format}"
        target.write_text(report.json() if args.format == "json" else report.csv())
    except OSError as exc:
        return _fail(EXIT_INPUT, "file", str(exc))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
