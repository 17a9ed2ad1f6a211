"""Random walk and geodesic flow trajectory engine.

A trajectory multiplies a reduced tangent by random increments, reduces it
back into the fundamental polygon after each step, and charges the deck
moves to an exact integer sheet index.  The per-step loop is written with
plain floats and tuples on purpose: it runs tens of millions of times in
the acceptance experiments.

Randomness is counter-based and splittable: trajectory k of a run seeded
with s draws from Philox keyed by SeedSequence([s, k]), so runs are
bit-reproducible under any scheduling of trajectories.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import hyp2
from . import fuchsian
from . import cover as cover_mod
from .hyp2 import GroupElement, UnitTangent
from .cover import CoverPoint, CoverSystem, IntVec

_RNG_BLOCK = 4096


class ZariskiCheckError(RuntimeError):
    """The step measure failed the Zariski-density certificate."""


# ---------------------------------------------------------------------------
# step measures

@dataclass(frozen=True)
class MeasureSpec:
    """Either finitely many atoms or the rotation-translation-rotation family
    with uniform angles and uniform translation length in [tau_min, tau_max].
    Compact support holds by construction."""

    kind: str  # "atoms" | "parametric"
    atoms: tuple[tuple[GroupElement, float], ...] = ()
    atom_labels: tuple[str, ...] = ()
    tau_min: float = 0.0
    tau_max: float = 0.0


def measure_from_atoms(
    atoms: list[tuple[GroupElement, float]], labels: list[str] | None = None
) -> MeasureSpec:
    if not atoms:
        raise ValueError("need at least one atom")
    total = sum(p for _, p in atoms)
    if any(p < 0 for _, p in atoms) or abs(total - 1.0) > 1e-12:
        raise ValueError(f"atom probabilities must be >= 0 and sum to 1, got {total}")
    return MeasureSpec(
        kind="atoms",
        atoms=tuple(atoms),
        atom_labels=tuple(labels) if labels else tuple(f"atom{i}" for i in range(len(atoms))),
    )


def parametric_measure(tau_min: float, tau_max: float) -> MeasureSpec:
    if not (0.0 < tau_min <= tau_max):
        raise ValueError("need 0 < tau_min <= tau_max")
    return MeasureSpec(kind="parametric", tau_min=tau_min, tau_max=tau_max)


def two_atom_measure(pres: fuchsian.LatticePresentation) -> MeasureSpec:
    """Equal weight on the two generators (the distinguished preset measure)."""
    (l1, g1), (l2, g2) = pres.generators
    return measure_from_atoms([(g1, 0.5), (g2, 0.5)], labels=[l1, l2])


@dataclass(frozen=True)
class ZariskiResult:
    passed: bool
    reason: str = ""


def zariski_density_check(
    m: MeasureSpec, word_length: int = 6, n_parametric_atoms: int = 6
) -> ZariskiResult:
    """Heuristic density certificate for the generated sub-semigroup.

    Looks for two hyperbolic elements among semigroup words with no shared
    boundary fixed point (all four separated on the boundary circle).  That
    rules out the solvable obstructions (common axis or common fixed point);
    it is a certificate, not a proof.
    """
    if m.kind == "atoms":
        gens = [g for g, p in m.atoms if p > 0]
    else:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(20240601)))
        gens = []
        for _ in range(n_parametric_atoms):
            th1, th2 = rng.random() * 2 * math.pi, rng.random() * 2 * math.pi
            tau = m.tau_min + rng.random() * (m.tau_max - m.tau_min)
            gens.append(
                hyp2.compose_all(
                    hyp2.rotation(th1), hyp2.translation(tau), hyp2.rotation(th2)
                )
            )
    if not gens:
        return ZariskiResult(False, "empty support")

    words = list(gens)
    frontier = list(gens)
    for _ in range(word_length - 1):
        nxt = []
        for w in frontier:
            for g in gens:
                nxt.append(hyp2.compose(w, g))
        words.extend(nxt)
        frontier = nxt
        if len(words) > 4000:
            break

    hyps = []
    for w in words:
        if hyp2.classify(w).kind == "hyperbolic":
            fps = hyp2.fixed_points_on_boundary(w)
            if len(fps) == 2:
                hyps.append(fps)
        if len(hyps) > 400:
            break
    if not hyps:
        return ZariskiResult(False, "no hyperbolic element in bounded words")

    def chart(u: float) -> complex:
        if math.isinf(u):
            return complex(1.0, 0.0)
        w = complex(u, -1.0) / complex(u, 1.0)
        return w / abs(w)

    for i in range(len(hyps)):
        for j in range(i + 1, len(hyps)):
            pts = [chart(u) for u in hyps[i] + hyps[j]]
            ok = all(
                abs(pts[a] - pts[b]) > 1e-6
                for a in range(4)
                for b in range(a + 1, 4)
            )
            if ok:
                return ZariskiResult(True)
    return ZariskiResult(
        False, "all bounded-length hyperbolic elements share fixed points"
    )


# ---------------------------------------------------------------------------
# run configuration

@dataclass(frozen=True)
class CheckpointPlan:
    """linear: every `stride` steps; geometric: n0, n0*ratio, ... (rounded).
    The final step is always a checkpoint."""

    kind: str = "linear"  # "linear" | "geometric"
    stride: int = 1000
    n0: int = 100
    ratio: float = 1.5

    def steps(self, n: int) -> list[int]:
        if n <= 0:
            return []
        out: list[int] = []
        if self.kind == "linear":
            out = list(range(self.stride, n + 1, self.stride))
        elif self.kind == "geometric":
            x = float(self.n0)
            while x <= n + 0.5:
                k = int(round(x))
                if not out or k > out[-1]:
                    out.append(k)
                x *= self.ratio
        else:
            raise ValueError(f"unknown checkpoint kind {self.kind!r}")
        if not out or out[-1] != n:
            out.append(n)
        return out


@dataclass(frozen=True)
class ReturnSpec:
    """Return/excursion tracking.  A 'return' is a step at which the sheet
    index is back to zero and the base point is within `radius` of the start,
    after the index has left zero at least once since the previous return."""

    radius: float = 2.0
    grid: tuple[int, ...] = ()


@dataclass(frozen=True)
class StartSpec:
    mode: str = "haar"  # "haar" | "fixed"
    tangent: UnitTangent | None = None


@dataclass(frozen=True)
class WalkConfig:
    steps: int
    trajectories: int
    master_seed: int = 0
    checkpoints: CheckpointPlan = field(default_factory=CheckpointPlan)
    start: StartSpec = field(default_factory=StartSpec)
    dt: float = 0.25
    returns: ReturnSpec | None = None
    count_atoms: bool = False


@dataclass(frozen=True, slots=True)
class CheckpointRecord:
    traj: int
    n: float  # step count (walk) or flow time (geodesic)
    index: IntVec
    drift: tuple[float, ...]
    cusp_height: float
    cartan_t: float


@dataclass(frozen=True)
class ReturnStats:
    first_return: int | None
    n_returns: int
    returned_by: tuple[tuple[int, bool], ...]       # (grid n, any return <= n)
    window_returns: tuple[tuple[int, int], ...]     # (grid n, returns in (prev, n])
    max_excursion_by: tuple[tuple[int, float], ...]  # (grid n, max sup-norm <= n)


@dataclass(frozen=True)
class TrajectorySummary:
    traj: int
    steps: int
    final_index: IntVec
    terminal_drift: tuple[float, ...]
    cartan_t: float
    start_rep: tuple[float, float, float, float]
    returns: ReturnStats | None = None
    atom_counts: tuple[int, ...] = ()


@dataclass(frozen=True)
class TrajectoryResult:
    records: tuple[CheckpointRecord, ...]
    summary: TrajectorySummary


def trajectory_rng(master_seed: int, traj: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence([master_seed, traj]))
    )


# ---------------------------------------------------------------------------
# the engine

def simulate_trajectory(
    system: CoverSystem,
    measure: MeasureSpec | None,
    cfg: WalkConfig,
    traj: int,
    geodesic: bool = False,
    step_trace: list | None = None,
    trace_height: float = 0.0,
) -> TrajectoryResult:
    """Run one trajectory; deterministic given (system, measure, cfg, traj).

    With ``geodesic`` the increment is the fixed flow step a_{dt} and record
    abscissae/normalizations use flow time instead of step count.  An optional
    ``step_trace`` collects (t, cusp_id, height, index) per step for the
    excursion analyses (small runs only).
    """
    rng = trajectory_rng(cfg.master_seed, traj)
    n = cfg.steps

    if cfg.start.mode == "haar":
        x0 = fuchsian.haar_sample(
            system.polygon, system.cusps, system.pres, rng, _parts(system)
        )
    else:
        x0 = cfg.start.tangent if cfg.start.tangent is not None else hyp2.BASE_TANGENT
    p0 = system.start_point(x0)
    a, b, c, d = p0.rep.rep.as_tuple()
    start_rep = (a, b, c, d)
    sx, sy = _base_xy(a, b, c, d)
    dim = system.d
    idx = list(p0.index)

    planes = system.planes
    mats = system.pair_mats
    phis = system.pair_phis
    eps = fuchsian.EPS_GEOM
    max_iter = fuchsian.MAX_REDUCE_ITER

    atoms = measure is not None and measure.kind == "atoms"
    if geodesic:
        step_mat = hyp2.translation(cfg.dt).as_tuple()
    elif atoms:
        mats_atoms = [g.as_tuple() for g, _ in measure.atoms]
        cum = []
        acc = 0.0
        for _, p in measure.atoms:
            acc += p
            cum.append(acc)
        n_atoms = len(mats_atoms)
        counts = [0] * n_atoms
    # parametric handled inline

    checkpoints = cfg.checkpoints.steps(n)
    cp_pos = 0
    records: list[CheckpointRecord] = []

    ret = cfg.returns
    track_returns = ret is not None
    if track_returns:
        cosh_r = math.cosh(ret.radius)
        grid = sorted(ret.grid) if ret.grid else [n]
        if grid[-1] != n:
            grid.append(n)
        left_zero = False
        first_return: int | None = None
        n_returns = 0
        window_counts = [0] * len(grid)
        max_exc = 0
        max_exc_by = [0] * len(grid)
        returned_by = [False] * len(grid)
        gpos = 0
        zero = tuple([0] * dim)

    # running product for the Cartan displacement (walk runs only)
    ta, tb, tc, td = 1.0, 0.0, 0.0, 1.0
    tlog = 0.0

    # Finite-orbit pinning.  On a finite orbit the reduced representative
    # revisits the same handful of states, but conjugation by hyperbolic
    # increments amplifies floating error exponentially, so without help the
    # trajectory would drift off the orbit within ~100 steps.  Snapping the
    # representative to the stored state whenever it returns within rounding
    # distance resets that error to zero every visit.  Generic trajectories
    # see > 64 distinct states almost immediately and the cache switches off.
    orbit_cache: dict | None = {}
    a0, b0, c0, d0 = hyp2.canonical_entries(a, b, c, d)
    orbit_cache[
        (round(a0 * 1e6), round(b0 * 1e6), round(c0 * 1e6), round(d0 * 1e6))
    ] = (a, b, c, d)

    uni = rng.random(_RNG_BLOCK)
    upos = 0

    for k in range(1, n + 1):
        # -- draw the increment
        if geodesic:
            ga, gb, gc, gd = step_mat
        else:
            if upos >= _RNG_BLOCK:
                uni = rng.random(_RNG_BLOCK)
                upos = 0
            if atoms:
                u = uni[upos]
                upos += 1
                ai = 0
                while cum[ai] < u:
                    ai += 1
                ga, gb, gc, gd = mats_atoms[ai]
                if cfg.count_atoms:
                    counts[ai] += 1
            else:
                if upos + 3 > _RNG_BLOCK:
                    uni = rng.random(_RNG_BLOCK)
                    upos = 0
                th1 = uni[upos] * 6.283185307179586
                tau = measure.tau_min + uni[upos + 1] * (measure.tau_max - measure.tau_min)
                th2 = uni[upos + 2] * 6.283185307179586
                upos += 3
                c1, s1 = math.cos(0.5 * th1), math.sin(0.5 * th1)
                c2, s2 = math.cos(0.5 * th2), math.sin(0.5 * th2)
                e = math.exp(0.5 * tau)
                ei = 1.0 / e
                ga = c1 * e * c2 - s1 * ei * s2
                gb = -c1 * e * s2 - s1 * ei * c2
                gc = s1 * e * c2 + c1 * ei * s2
                gd = -s1 * e * s2 + c1 * ei * c2

        # -- position update: multiply and reduce
        a, b, c, d = (
            a * ga + b * gc,
            a * gb + b * gd,
            c * ga + d * gc,
            c * gb + d * gd,
        )
        it = 0
        while True:
            den = c * c + d * d
            px = (a * c + b * d) / den
            py = 1.0 / den
            pr2 = px * px + py * py
            hit = -1
            i = 0
            for (al, be, de) in planes:
                if al * pr2 + be * px + de > eps:
                    hit = i
                    break
                i += 1
            if hit < 0:
                break
            if it & 63 == 63:
                # deep cusp winding: unwind whole strip widths in one stroke
                unw = system.fast_unwind(a, b, c, d)
                if unw is not None:
                    a, b, c, d, kw_, ph = unw
                    for j in range(dim):
                        idx[j] += kw_ * ph[j]
                    it += 1
                    continue
            pa, pb, pc, pd = mats[hit]
            a, b, c, d = (
                pa * a + pb * c,
                pa * b + pb * d,
                pc * a + pd * c,
                pc * b + pd * d,
            )
            det = a * d - b * c
            if abs(det - 1.0) > 1e-12:
                s = 1.0 / math.sqrt(det)
                a, b, c, d = a * s, b * s, c * s, d * s
            ph = phis[hit]
            for j in range(dim):
                idx[j] -= ph[j]
            it += 1
            if it > max_iter:
                raise fuchsian.NonTerminationError(
                    f"trajectory {traj} step {k}: reduction did not terminate"
                )

        if orbit_cache is not None:
            a0, b0, c0, d0 = hyp2.canonical_entries(a, b, c, d)
            key = (
                round(a0 * 1e6),
                round(b0 * 1e6),
                round(c0 * 1e6),
                round(d0 * 1e6),
            )
            got = orbit_cache.get(key)
            if got is not None:
                a, b, c, d = got
            elif len(orbit_cache) >= 64:
                orbit_cache = None
            else:
                orbit_cache[key] = (a, b, c, d)

        # -- running Cartan product (walk mode only)
        if not geodesic:
            ta, tb, tc, td = (
                ta * ga + tb * gc,
                ta * gb + tb * gd,
                tc * ga + td * gc,
                tc * gb + td * gd,
            )
            if k & 63 == 0:
                mm = max(abs(ta), abs(tb), abs(tc), abs(td))
                if mm > 1.0:
                    ta, tb, tc, td = ta / mm, tb / mm, tc / mm, td / mm
                    tlog += math.log(mm)

        # -- per-step instrumentation
        if step_trace is not None:
            hgt = system.cusp_height_xy(px, py)
            cid = system.which_cusp_xy(px, py, trace_height) if hgt > trace_height else -1
            tt = k * cfg.dt if geodesic else k
            step_trace.append((tt, cid, hgt, tuple(idx)))

        if track_returns:
            # the start tile is: sheet index zero AND base within the radius
            # of the start; a return is re-entering it after having left
            exc = 0
            for j in range(dim):
                v = idx[j]
                if v < 0:
                    v = -v
                if v > exc:
                    exc = v
            if exc > max_exc:
                max_exc = exc
            if exc > 0:
                left_zero = True
            else:
                dx = px - sx
                dy = py - sy
                inside = 1.0 + (dx * dx + dy * dy) / (2.0 * py * sy) <= cosh_r
                if left_zero and inside:
                    n_returns += 1
                    left_zero = False
                    if first_return is None:
                        first_return = k
                    gi = gpos
                    while gi < len(grid) and grid[gi] < k:
                        gi += 1
                    if gi < len(grid):
                        window_counts[gi] += 1
                        for g2 in range(gi, len(grid)):
                            returned_by[g2] = True
                elif not left_zero and not inside:
                    left_zero = True
            while gpos < len(grid) and grid[gpos] <= k:
                max_exc_by[gpos] = max_exc
                gpos += 1

        # -- checkpoint
        if cp_pos < len(checkpoints) and k == checkpoints[cp_pos]:
            cp_pos += 1
            tt = k * cfg.dt if geodesic else k
            drift = tuple(v / tt for v in idx)
            hgt = system.cusp_height_xy(px, py)
            if geodesic:
                cart = k * cfg.dt
            else:
                s1, _ = hyp2.singular_values(ta, tb, tc, td)
                cart = 2.0 * (math.log(s1) + tlog) if s1 > 0 else 0.0
                if cart < 0.0:
                    cart = 0.0
            records.append(
                CheckpointRecord(
                    traj=traj,
                    n=tt,
                    index=tuple(idx),
                    drift=drift,
                    cusp_height=hgt,
                    cartan_t=cart,
                )
            )

    if track_returns:
        for gi in range(gpos, len(grid)):
            max_exc_by[gi] = max_exc
        rstats = ReturnStats(
            first_return=first_return,
            n_returns=n_returns,
            returned_by=tuple(zip(grid, returned_by)),
            window_returns=tuple(zip(grid, window_counts)),
            max_excursion_by=tuple((g, float(v)) for g, v in zip(grid, max_exc_by)),
        )
    else:
        rstats = None

    tt = n * cfg.dt if geodesic else max(n, 1)
    if n == 0:
        records = [
            CheckpointRecord(
                traj=traj,
                n=0.0 if geodesic else 0,
                index=tuple(idx),
                drift=tuple(0.0 for _ in idx),
                cusp_height=system.cusp_height_xy(sx, sy),
                cartan_t=0.0,
            )
        ]
    summary = TrajectorySummary(
        traj=traj,
        steps=n,
        final_index=tuple(idx),
        terminal_drift=tuple(v / tt for v in idx),
        cartan_t=records[-1].cartan_t if records else 0.0,
        start_rep=start_rep,
        returns=rstats,
        atom_counts=tuple(counts) if (atoms and cfg.count_atoms and not geodesic) else (),
    )
    return TrajectoryResult(records=tuple(records), summary=summary)


def _base_xy(a: float, b: float, c: float, d: float) -> tuple[float, float]:
    den = c * c + d * d
    return (a * c + b * d) / den, 1.0 / den


_PARTS_CACHE: dict[int, tuple] = {}


def _parts(system: CoverSystem):
    parts = _PARTS_CACHE.get(id(system))
    if parts is None:
        parts = fuchsian.cusp_neighborhoods(system.polygon, system.cusps, 0.0)
        _PARTS_CACHE[id(system)] = parts
    return parts


# ---------------------------------------------------------------------------
# multi-trajectory runners

@dataclass(frozen=True)
class RunPlan:
    """Everything a worker process needs to simulate a block of trajectories."""

    pres: fuchsian.LatticePresentation
    polygon: fuchsian.FundamentalPolygon
    cusps: tuple[fuchsian.CuspData, ...]
    spec: cover_mod.CoverSpec
    measure: MeasureSpec | None
    cfg: WalkConfig
    geodesic: bool = False


def _run_block(plan: RunPlan, trajs: list[int]) -> list[TrajectoryResult]:
    system = CoverSystem(plan.pres, plan.polygon, plan.cusps, plan.spec)
    return [
        simulate_trajectory(system, plan.measure, plan.cfg, t, geodesic=plan.geodesic)
        for t in trajs
    ]


def worker_count() -> int:
    raw = os.environ.get("COVWALK_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def run_trajectories(
    system: CoverSystem,
    measure: MeasureSpec | None,
    cfg: WalkConfig,
    geodesic: bool = False,
    workers: int | None = None,
) -> list[TrajectoryResult]:
    """All trajectories of a run, in trajectory order.  With workers > 1 the
    trajectories are distributed over processes; per-trajectory seeding makes
    the merged output identical to the sequential run."""
    if workers is None:
        workers = worker_count()
    ids = list(range(cfg.trajectories))
    if workers <= 1 or len(ids) <= 1:
        return [
            simulate_trajectory(system, measure, cfg, t, geodesic=geodesic)
            for t in ids
        ]
    plan = RunPlan(
        pres=system.pres,
        polygon=system.polygon,
        cusps=system.cusps,
        spec=system.spec,
        measure=measure,
        cfg=cfg,
        geodesic=geodesic,
    )
    blocks = [ids[i::workers] for i in range(workers)]
    out: dict[int, TrajectoryResult] = {}
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for results in pool.map(_run_block, [plan] * len(blocks), blocks):
            for r in results:
                out[r.summary.traj] = r
    return [out[t] for t in ids]


def run_walk(
    system: CoverSystem,
    measure: MeasureSpec,
    cfg: WalkConfig,
    workers: int | None = None,
):
    """Stream of checkpoint records over all trajectories of a walk run."""
    for res in run_trajectories(system, measure, cfg, geodesic=False, workers=workers):
        yield from res.records


def run_geodesic(
    system: CoverSystem,
    cfg: WalkConfig,
    workers: int | None = None,
):
    """Stream of checkpoint records for geodesic-flow runs (haar starts).

    cfg.steps counts flow increments of length cfg.dt; record abscissae are
    flow times and drifts are index/time."""
    if cfg.dt > 0.5:
        raise ValueError("flow step dt must be <= 0.5 to keep reduction local")
    for res in run_trajectories(system, None, cfg, geodesic=True, workers=workers):
        yield from res.records


# ---------------------------------------------------------------------------
# Lyapunov exponent

@dataclass(frozen=True)
class LyapunovEstimate:
    value: float
    se: float
    steps: int
    trajectories: int


def lyapunov_estimate(
    measure: MeasureSpec,
    steps: int,
    trajectories: int,
    master_seed: int = 0,
    override_zariski: bool = False,
) -> LyapunovEstimate:
    """Mean of t_n / n over independent random matrix products, where t_n is
    twice the log of the top singular value; the standard error is across
    trajectories.  Vectorized over trajectories."""
    if not override_zariski:
        z = zariski_density_check(measure)
        if not z.passed:
            raise ZariskiCheckError(z.reason)
    rng = np.random.Generator(
        np.random.Philox(np.random.SeedSequence([master_seed, 0x17A9]))
    )
    K = trajectories
    P = np.tile(np.eye(2), (K, 1, 1))
    logs = np.zeros(K)
    if measure.kind == "atoms":
        mats = np.array([[[g.a, g.b], [g.c, g.d]] for g, _ in measure.atoms])
        probs = np.array([p for _, p in measure.atoms])
    for k in range(steps):
        if measure.kind == "atoms":
            choice = rng.choice(len(probs), size=K, p=probs)
            G = mats[choice]
        else:
            th1 = rng.random(K) * (2 * np.pi)
            th2 = rng.random(K) * (2 * np.pi)
            tau = measure.tau_min + rng.random(K) * (measure.tau_max - measure.tau_min)
            c1, s1 = np.cos(th1 / 2), np.sin(th1 / 2)
            c2, s2 = np.cos(th2 / 2), np.sin(th2 / 2)
            e = np.exp(tau / 2)
            ei = 1.0 / e
            G = np.empty((K, 2, 2))
            G[:, 0, 0] = c1 * e * c2 - s1 * ei * s2
            G[:, 0, 1] = -c1 * e * s2 - s1 * ei * c2
            G[:, 1, 0] = s1 * e * c2 + c1 * ei * s2
            G[:, 1, 1] = -s1 * e * s2 + c1 * ei * c2
        P = P @ G
        if (k + 1) % 32 == 0:
            mm = np.abs(P).max(axis=(1, 2))
            P /= mm[:, None, None]
            logs += np.log(mm)
    ee = 0.5 * (P[:, 0, 0] + P[:, 1, 1])
    ff = 0.5 * (P[:, 0, 0] - P[:, 1, 1])
    gg = 0.5 * (P[:, 0, 1] + P[:, 1, 0])
    hh = 0.5 * (P[:, 1, 0] - P[:, 0, 1])
    smax = np.hypot(ee, hh) + np.hypot(ff, gg)
    t_n = 2.0 * (np.log(smax) + logs)
    lam = t_n / steps
    value = float(lam.mean())
    se = float(lam.std(ddof=1) / math.sqrt(K)) if K > 1 else 0.0
    if value <= 0:
        raise ZariskiCheckError(
            f"estimated top Lyapunov exponent {value} is not positive"
        )
    return LyapunovEstimate(value=value, se=se, steps=steps, trajectories=K)
