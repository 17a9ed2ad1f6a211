"""Experiment configuration: INI-style files, canonical form, hashing.

A config has sections [lattice], [weights], [measure], [walk] and [analysis].
Parsing produces a typed bundle; the canonical serializer emits a normalized
text whose SHA-256 is the config hash, and round-trips byte-identically:
two configs get the same hash exactly when every semantic field agrees.

    [lattice]
    preset = gamma2              # or: file = path/to/lattice.txt
    # punctured_square_torus accepts l1 = ..., l2 = ...
    center = 0.0 1.0             # Dirichlet center for file lattices
    word_bound = 12

    [weights]
    A = 1
    B = 0

    [measure]
    type = atoms                 # or: parametric
    atom.1 = A 0.5               # word then probability
    atom.2 = B 0.5
    tau_min = 0.5                # parametric only
    tau_max = 1.5

    [walk]
    mode = walk                  # or: geodesic
    steps = 10000                # geodesic: number of dt-increments
    trajectories = 100
    seed = 1
    checkpoints = linear:1000    # or geometric:100:1.25
    start = haar                 # or: special  (the upward tangent at i)
    dt = 0.25
    return_radius = 2.0          # presence switches return tracking on
    return_grid = 10000 100000

    [analysis]
    reports = drift cauchy
"""

from __future__ import annotations

import configparser
import hashlib
import io
import math
from dataclasses import dataclass, field

from . import hyp2
from . import fuchsian
from . import cover as cover_mod
from . import walk as walk_mod


class ConfigError(ValueError):
    def __init__(self, message: str, section: str = "", key: str = ""):
        where = f" [{section}] {key}".rstrip()
        super().__init__(f"config error{where}: {message}")
        self.section = section
        self.key = key


_SECTIONS = ("lattice", "weights", "measure", "walk", "analysis")


@dataclass(frozen=True)
class ExperimentConfig:
    """Typed, validated experiment description (canonical field order)."""

    preset: str = ""
    lattice_file: str = ""
    l1: float | None = None
    l2: float | None = None
    center: tuple[float, float] = (0.0, 1.0)
    word_bound: int = 12
    weights: tuple[tuple[str, tuple[int, ...]], ...] = ()
    measure_type: str = "atoms"
    atoms: tuple[tuple[str, float], ...] = ()  # (word text, probability)
    tau_min: float = 0.5
    tau_max: float = 1.5
    mode: str = "walk"
    steps: int = 1000
    trajectories: int = 1
    seed: int = 0
    checkpoints: str = "linear:1000"
    start: str = "haar"
    dt: float = 0.25
    return_radius: float | None = None
    return_grid: tuple[int, ...] = ()
    reports: tuple[str, ...] = ()


def parse_config_text(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(
        delimiters=("=",),
        comment_prefixes=("#",),
        inline_comment_prefixes=("#",),
        interpolation=None,
    )
    cp.optionxform = str  # generator labels are case-sensitive
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    for sec in cp.sections():
        if sec not in _SECTIONS:
            raise ConfigError(f"unknown section [{sec}]", sec)

    def get(sec: str, key: str, default=None):
        if cp.has_option(sec, key):
            return cp.get(sec, key).strip()
        return default

    lat = "lattice"
    preset = get(lat, "preset", "") or ""
    lattice_file = get(lat, "file", "") or ""
    if bool(preset) == bool(lattice_file):
        raise ConfigError("give exactly one of 'preset' or 'file'", lat)
    l1 = get(lat, "l1")
    l2 = get(lat, "l2")
    center_raw = get(lat, "center", "0.0 1.0")
    try:
        cx, cy = (float(v) for v in center_raw.split())
    except ValueError:
        raise ConfigError("center needs two floats", lat, "center") from None
    word_bound = int(get(lat, "word_bound", "12"))

    weights: list[tuple[str, tuple[int, ...]]] = []
    if cp.has_section("weights"):
        for key, val in cp.items("weights"):
            try:
                weights.append((key, tuple(int(v) for v in val.split())))
            except ValueError:
                raise ConfigError("weights must be integers", "weights", key) from None
    weights.sort()

    mtype = get("measure", "type", "atoms")
    if mtype not in ("atoms", "parametric"):
        raise ConfigError(f"unknown measure type {mtype!r}", "measure", "type")
    atoms: list[tuple[str, float]] = []
    if cp.has_section("measure"):
        for key, val in cp.items("measure"):
            if key.startswith("atom."):
                parts = val.rsplit(None, 1)
                if len(parts) != 2:
                    raise ConfigError(
                        "atom needs 'word probability'", "measure", key
                    )
                try:
                    atoms.append((parts[0].strip(), float(parts[1])))
                except ValueError:
                    raise ConfigError("bad probability", "measure", key) from None
    tau_min = float(get("measure", "tau_min", "0.5"))
    tau_max = float(get("measure", "tau_max", "1.5"))

    wk = "walk"
    mode = get(wk, "mode", "walk")
    if mode not in ("walk", "geodesic"):
        raise ConfigError(f"unknown mode {mode!r}", wk, "mode")
    if mode == "walk" and mtype == "atoms" and not atoms:
        raise ConfigError("atoms measure needs atom.N entries", "measure")
    steps = int(get(wk, "steps", "1000"))
    trajectories = int(get(wk, "trajectories", "1"))
    seed = int(get(wk, "seed", "0"))
    checkpoints = get(wk, "checkpoints", "linear:1000")
    _parse_checkpoints(checkpoints)  # validate early
    start = get(wk, "start", "haar")
    if start not in ("haar", "special"):
        raise ConfigError(f"unknown start mode {start!r}", wk, "start")
    dt = float(get(wk, "dt", "0.25"))
    rr = get(wk, "return_radius")
    return_radius = float(rr) if rr is not None else None
    rg = get(wk, "return_grid", "")
    return_grid = tuple(int(v) for v in rg.split()) if rg else ()

    reports = tuple((get("analysis", "reports", "") or "").split())

    return ExperimentConfig(
        preset=preset,
        lattice_file=lattice_file,
        l1=float(l1) if l1 is not None else None,
        l2=float(l2) if l2 is not None else None,
        center=(cx, cy),
        word_bound=word_bound,
        weights=tuple(weights),
        measure_type=mtype,
        atoms=tuple(atoms),
        tau_min=tau_min,
        tau_max=tau_max,
        mode=mode,
        steps=steps,
        trajectories=trajectories,
        seed=seed,
        checkpoints=checkpoints,
        start=start,
        dt=dt,
        return_radius=return_radius,
        return_grid=return_grid,
        reports=reports,
    )


def _parse_checkpoints(text: str) -> walk_mod.CheckpointPlan:
    parts = text.split(":")
    if parts[0] == "linear" and len(parts) == 2:
        return walk_mod.CheckpointPlan(kind="linear", stride=int(parts[1]))
    if parts[0] == "geometric" and len(parts) == 3:
        return walk_mod.CheckpointPlan(
            kind="geometric", n0=int(parts[1]), ratio=float(parts[2])
        )
    raise ConfigError(
        f"checkpoints must be linear:STRIDE or geometric:N0:RATIO, got {text!r}",
        "walk",
        "checkpoints",
    )


def canonical_text(cfg: ExperimentConfig) -> str:
    """Normalized rendering: fixed section and key order, repr'd numbers.
    Hash two configs equal iff this text is byte-identical."""
    out = io.StringIO()
    out.write("[lattice]\n")
    if cfg.preset:
        out.write(f"preset = {cfg.preset}\n")
        if cfg.l1 is not None:
            out.write(f"l1 = {cfg.l1!r}\n")
        if cfg.l2 is not None:
            out.write(f"l2 = {cfg.l2!r}\n")
    else:
        out.write(f"file = {cfg.lattice_file}\n")
        out.write(f"center = {cfg.center[0]!r} {cfg.center[1]!r}\n")
        out.write(f"word_bound = {cfg.word_bound}\n")
    out.write("[weights]\n")
    for lab, vec in cfg.weights:
        out.write(f"{lab} = " + " ".join(str(v) for v in vec) + "\n")
    out.write("[measure]\n")
    out.write(f"type = {cfg.measure_type}\n")
    if cfg.measure_type == "atoms":
        for i, (word, p) in enumerate(cfg.atoms, 1):
            out.write(f"atom.{i} = {word} {p!r}\n")
    else:
        out.write(f"tau_min = {cfg.tau_min!r}\n")
        out.write(f"tau_max = {cfg.tau_max!r}\n")
    out.write("[walk]\n")
    out.write(f"mode = {cfg.mode}\n")
    out.write(f"steps = {cfg.steps}\n")
    out.write(f"trajectories = {cfg.trajectories}\n")
    out.write(f"seed = {cfg.seed}\n")
    out.write(f"checkpoints = {cfg.checkpoints}\n")
    out.write(f"start = {cfg.start}\n")
    if cfg.mode == "geodesic":
        out.write(f"dt = {cfg.dt!r}\n")
    if cfg.return_radius is not None:
        out.write(f"return_radius = {cfg.return_radius!r}\n")
        if cfg.return_grid:
            out.write("return_grid = " + " ".join(map(str, cfg.return_grid)) + "\n")
    out.write("[analysis]\n")
    if cfg.reports:
        out.write("reports = " + " ".join(cfg.reports) + "\n")
    return out.getvalue()


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(canonical_text(cfg).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# bundle assembly

@dataclass(frozen=True)
class Bundle:
    """Everything an experiment needs, built once from a config."""

    config: ExperimentConfig
    pres: fuchsian.LatticePresentation
    polygon: fuchsian.FundamentalPolygon
    cusps: tuple[fuchsian.CuspData, ...]
    spec: cover_mod.CoverSpec
    system: cover_mod.CoverSystem
    measure: walk_mod.MeasureSpec | None


def load_lattice(
    cfg: ExperimentConfig,
) -> tuple[
    fuchsian.LatticePresentation,
    fuchsian.FundamentalPolygon,
    tuple[fuchsian.CuspData, ...],
    dict[str, tuple[int, ...]] | None,
]:
    if cfg.preset:
        pres, polygon, cusps = fuchsian.builtin_lattice(
            cfg.preset, l1=cfg.l1, l2=cfg.l2
        )
        return pres, polygon, cusps, None
    with open(cfg.lattice_file, "r", encoding="utf-8") as fh:
        pres, file_weights = fuchsian.parse_lattice_text(fh.read())
    pres.validate()
    polygon = fuchsian.dirichlet_domain(
        pres, hyp2.PointH(*cfg.center), cfg.word_bound
    )
    cusps = fuchsian.derive_cusps(polygon, pres)
    return pres, polygon, cusps, file_weights


def build_bundle(cfg: ExperimentConfig) -> Bundle:
    pres, polygon, cusps, file_weights = load_lattice(cfg)
    weights = dict(cfg.weights) if cfg.weights else (file_weights or {})
    if not weights:
        raise ConfigError("no weights given (config [weights] or lattice file)")
    spec = cover_mod.validate_cover(pres, cusps, weights)
    system = cover_mod.cover_system(pres, polygon, cusps, spec)
    measure = build_measure(cfg, pres)
    return Bundle(
        config=cfg,
        pres=pres,
        polygon=polygon,
        cusps=cusps,
        spec=spec,
        system=system,
        measure=measure,
    )


def build_measure(
    cfg: ExperimentConfig, pres: fuchsian.LatticePresentation
) -> walk_mod.MeasureSpec | None:
    if cfg.mode == "geodesic":
        return None
    if cfg.measure_type == "parametric":
        return walk_mod.parametric_measure(cfg.tau_min, cfg.tau_max)
    gens = pres.gen_map()
    atoms = []
    labels = []
    for word_text, p in cfg.atoms:
        word = fuchsian.parse_word(word_text)
        try:
            atoms.append((fuchsian.evaluate_word(gens, word), p))
        except KeyError as exc:
            raise ConfigError(f"unknown generator {exc} in atom word") from None
        labels.append(word_text)
    try:
        return walk_mod.measure_from_atoms(atoms, labels=labels)
    except ValueError as exc:
        raise ConfigError(str(exc), "measure") from None


def walk_config(cfg: ExperimentConfig) -> walk_mod.WalkConfig:
    plan = _parse_checkpoints(cfg.checkpoints)
    if cfg.start == "special":
        start = walk_mod.StartSpec(mode="fixed", tangent=hyp2.BASE_TANGENT)
    else:
        start = walk_mod.StartSpec(mode="haar")
    returns = None
    if cfg.return_radius is not None:
        returns = walk_mod.ReturnSpec(
            radius=cfg.return_radius, grid=tuple(cfg.return_grid)
        )
    return walk_mod.WalkConfig(
        steps=cfg.steps,
        trajectories=cfg.trajectories,
        master_seed=cfg.seed,
        checkpoints=plan,
        start=start,
        dt=cfg.dt,
        returns=returns,
    )
