"""Crack evolution by per-interval maximization over balanced candidates.

Time is cut into windows ``T_0 < ... < T_k`` with gaps below ``eta / mu``.
On each window a finite grid of (kink angle, speed, profile shape) candidates
is simulated; those satisfying the energy balance on the dyadic subwindows
are kept and the one with the largest ``int s dt`` is chosen.  The chosen
terminal state seeds the next window.
"""

from __future__ import annotations

import logging
import math
import os
import pickle
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .domain import DomainSpec
from .energy import EnergyLedger, LedgerRecord, ledger_record, term_table
from .geometry import (CrackPath, LengthProfile, extend_path, sliding_motion, turn_path,
                       validate_path, validate_profile)
from .material import MaterialModel
from .mesh import MeshInversionError, build_cracked_mesh, grow_mesh, transfer_state
from .solver import (HistoryData, LoadSet, SolverError, SolverState, Trajectory, initial_state,
                     start_window, step_grid, step_visco)

log = logging.getLogger(__name__)

SHAPES = ("linear", "smoothstep")
DEFAULT_ANGLES = (-15.0, -10.0, -5.0, 0.0, 5.0, 10.0, 15.0)
THREADS_ENV = "VISCOFRAC_THREADS"


@dataclass(frozen=True)
class EvolutionConfig:
    """Window grid, candidate grid and numerical parameters of an evolution."""

    times: tuple[float, ...]
    eta: float
    mu: float
    M: float
    angles: tuple[float, ...] = DEFAULT_ANGLES     # degrees, relative to the tip tangent
    speeds: tuple[float, ...] | None = None        # default 0, mu/4, mu/2, 3mu/4, mu
    shapes: tuple[str, ...] = SHAPES
    tol_bal: float = 0.02
    depth: int = 2
    dt: float = 0.05
    h: float = 0.125
    crack_h: float | None = None                   # default h/4
    rho: float | None = None                       # default 3 h/4
    epsilon: float = 0.3

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "angles", tuple(float(a) for a in self.angles))
        object.__setattr__(self, "shapes", tuple(self.shapes))
        if self.speeds is None:
            object.__setattr__(self, "speeds", tuple(self.mu * q for q in (0, 0.25, 0.5, 0.75, 1)))
        else:
            object.__setattr__(self, "speeds", tuple(float(v) for v in self.speeds))
        if len(times) < 2:
            raise ValueError("need at least two window times")
        gaps = np.diff(times)
        if np.any(gaps <= 0):
            raise ValueError("window times must be strictly increasing")
        if not (self.eta > 0 and self.mu > 0 and self.M > 0):
            raise ValueError("eta, mu and M must be positive")
        if np.max(gaps) >= self.eta / self.mu:
            raise ValueError(f"window length {np.max(gaps):.6g} must be below eta/mu = "
                             f"{self.eta / self.mu:.6g}")
        bad = [v for v in self.speeds if not 0 <= v <= self.mu * (1 + 1e-12)]
        if bad:
            raise ValueError(f"candidate speeds {bad} outside [0, mu]")
        unknown = [s for s in self.shapes if s not in SHAPES]
        if unknown:
            raise ValueError(f"unknown profile shapes {unknown}; choose from {SHAPES}")
        if self.depth < 0 or not self.tol_bal > 0 or not self.dt > 0 or not self.h > 0:
            raise ValueError("depth >= 0 and positive tol_bal, dt and h are required")

    @property
    def crack_spacing(self) -> float:
        return 0.25 * self.h if self.crack_h is None else self.crack_h

    @property
    def motion_radius(self) -> float:
        return 0.75 * self.h if self.rho is None else self.rho

    @property
    def intervals(self) -> list[tuple[float, float]]:
        return list(zip(self.times[:-1], self.times[1:]))


@dataclass(frozen=True, eq=False)
class Problem:
    """Everything an evolution needs besides its own state."""

    domain: DomainSpec
    initial_path: CrackPath
    material: MaterialModel
    loads: LoadSet
    history: HistoryData | None
    config: EvolutionConfig


@dataclass(frozen=True, eq=False)
class Candidate:
    index: int
    angle: float        # degrees
    speed: float
    shape: str          # constant | linear | smoothstep
    path: CrackPath
    profile: LengthProfile

    @property
    def is_constant(self) -> bool:
        return self.shape == "constant"

    @property
    def s_start(self) -> float:
        return float(self.profile(self.profile.T0))

    @property
    def s_end(self) -> float:
        return float(self.profile(self.profile.T1))


@dataclass(eq=False)
class CandidateResult:
    candidate: Candidate
    balanced: bool
    residual: float                 # signed residual over the whole window
    worst_relative: float           # max |residual| / normalization over dyadic subwindows
    score: float                    # trapezoid integral of s over the step grid
    records: list[LedgerRecord] = field(default_factory=list)
    trajectory: Trajectory | None = None
    error: str | None = None

    @property
    def s_end(self) -> float:
        return self.candidate.s_end

    @property
    def key(self) -> tuple[float, float, float]:
        return (self.score, self.s_end, -abs(self.candidate.angle))


@dataclass(eq=False)
class Rejected:
    angle: float
    speed: float
    shape: str
    reason: str


@dataclass(eq=False)
class IntervalRecord:
    index: int
    T0: float
    T1: float
    chosen: CandidateResult
    results: list[CandidateResult]
    rejected: list[Rejected]
    fallback: bool = False


@dataclass(eq=False)
class Evolution:
    config: EvolutionConfig
    initial_path: CrackPath
    path: CrackPath
    profile: LengthProfile | None
    state: SolverState
    intervals: list[IntervalRecord] = field(default_factory=list)
    trajectories: list[Trajectory] = field(default_factory=list)
    ledger: EnergyLedger = field(default_factory=EnergyLedger)
    error: str | None = None

    @property
    def complete(self) -> bool:
        return self.error is None and len(self.intervals) == len(self.config.intervals)

    @property
    def domain(self) -> DomainSpec:
        return self.state.mesh.domain

    def s(self, t):
        return self.profile(t)

    def state_at(self, t: float) -> SolverState:
        """Stored state at a window boundary or step time."""
        for traj in self.trajectories:
            times = traj.times
            if times[0] - 1e-12 <= t <= times[-1] + 1e-12:
                return traj[traj.index_of(t)]
        raise ValueError(f"no stored state at t = {t}")

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            pickle.dump(self, fh, protocol=pickle.HIGHEST_PROTOCOL)

    @staticmethod
    def load(path) -> "Evolution":
        with open(path, "rb") as fh:
            return pickle.load(fh)


# ---------------------------------------------------------------------------
# Candidates


def aligned_end(path: CrackPath, s: float) -> float:
    """Smallest path grid arc ``>= s``."""
    k = math.ceil((s - path.a0) / path.ds - 1e-9)
    return path.a0 + k * path.ds


def constant_candidate(path: CrackPath, s_now: float, T0: float, T1: float,
                       config: EvolutionConfig) -> Candidate:
    prof = LengthProfile.constant(s_now, T0, T1, config.mu, config.M)
    return Candidate(0, 0.0, 0.0, "constant", path, prof)


def growth_profile(shape: str, s_now: float, speed: float, T0: float, T1: float,
                   config: EvolutionConfig) -> LengthProfile:
    """Linear growth at ``speed`` or a smoothstep of increment ``speed (T1 - T0) / 2``.

    The smoothstep increment keeps its peak speed ``1.875 * increment / T`` below ``speed``.
    """
    if shape == "linear":
        return LengthProfile.linear(s_now, speed, T0, T1, config.mu, config.M)
    if shape == "smoothstep":
        return LengthProfile.ramp(s_now, 0.5 * speed * (T1 - T0), T0, T1, config.mu, config.M)
    raise ValueError(f"unknown profile shape {shape!r}")


def check_candidate_geometry(path: CrackPath, domain: DomainSpec,
                             initial: CrackPath | None) -> str | None:
    """Reason for rejecting a candidate path, or ``None`` if it and its extension pass."""
    rep = validate_path(path, domain, initial=initial)
    if not rep.passed:
        return f"path: {rep.summary()}"
    try:
        ext = extend_path(path, domain)
    except ValueError as exc:
        return f"extension: {exc}"
    rep = validate_path(ext, domain, initial=initial)
    if not rep.passed:
        return f"extension: {rep.summary()}"
    return None


def enumerate_candidates(path: CrackPath, s_now: float, T0: float, T1: float,
                         config: EvolutionConfig, domain: DomainSpec,
                         initial: CrackPath | None = None,
                         rejected: list[Rejected] | None = None) -> list[Candidate]:
    """Constant candidate followed by every admissible angle x speed x shape combination."""
    out = [constant_candidate(path, s_now, T0, T1, config)]
    rho = config.motion_radius
    for angle in config.angles:
        for speed in config.speeds:
            if speed == 0:
                continue  # every zero-speed combination is the constant candidate
            for shape in config.shapes:
                prof = growth_profile(shape, s_now, speed, T0, T1, config)
                reason = None
                prep = validate_profile(prof)
                if not prep.passed:
                    reason = f"profile: {prep.summary()}"
                else:
                    s_end = float(prof(T1))
                    try:
                        cand_path = turn_path(path, s_now, math.radians(angle),
                                              aligned_end(path, s_end), rho)
                        reason = check_candidate_geometry(cand_path, domain, initial)
                    except (ValueError, RuntimeError) as exc:
                        reason = f"construction: {exc}"
                if reason is None:
                    out.append(Candidate(len(out), angle, speed, shape, cand_path, prof))
                elif rejected is not None:
                    rejected.append(Rejected(angle, speed, shape, reason))
    return out


# ---------------------------------------------------------------------------
# Balance test


def dyadic_windows(T0: float, T1: float, depth: int) -> list[tuple[float, float]]:
    out = []
    for level in range(depth + 1):
        n = 2 ** level
        edges = T0 + (T1 - T0) * np.arange(n + 1) / n
        out.extend(zip(edges[:-1], edges[1:]))
    return out


def step_anchors(arcs: np.ndarray, s_vals: np.ndarray) -> np.ndarray:
    """Crack node anchoring each step: the one nearest the step's mid length."""
    mid = 0.5 * (s_vals[1:] + s_vals[:-1])
    return np.abs(arcs[None, :] - mid[:, None]).argmin(axis=1)


def _anchor_windows(times: np.ndarray, anchors: np.ndarray) -> dict[int, tuple[float, float]]:
    """Time span over which each crack node serves as motion anchor.

    ``anchors[n]`` serves the step from ``times[n]`` to ``times[n + 1]``.
    """
    spans: dict[int, tuple[float, float]] = {}
    for n, k in enumerate(anchors):
        k = int(k)
        start = spans[k][0] if k in spans else float(times[n])
        spans[k] = (start, float(times[n + 1]))
    return spans


def simulate_candidate(candidate: Candidate, state: SolverState, problem: Problem,
                       T0: float, T1: float) -> Trajectory:
    """Trajectory of the memory problem on the candidate's moving mesh over ``[T0, T1]``."""
    cfg = problem.config
    times = step_grid(T0, T1, cfg.dt, multiple=2 ** cfg.depth)
    step = float((times[-1] - times[0]) / (len(times) - 1))
    loads, material, history = problem.loads, problem.material, problem.history
    s0 = candidate.s_start

    mesh = state.mesh
    reuse = (candidate.is_constant and mesh.path is not None and mesh.tip_arc is not None
             and abs(mesh.tip_arc - s0) <= 1e-12 and abs(mesh.nodes[mesh.tip_node]
                                                         - candidate.path.point(s0)).max() < 1e-9)
    if candidate.is_constant:
        if not reuse:
            new = build_cracked_mesh(problem.domain, candidate.path, s0, cfg.h,
                                     crack_h=cfg.crack_spacing)
            state = transfer_state(mesh, new, state)
        st = start_window(replace(state, t=float(times[0]), a=None))
        traj = Trajectory([])
        for n in range(len(times)):
            if n > 0:
                st = step_visco(st, step, loads, material, history)
                st.t = float(times[n])
            traj.states.append(st)
        return traj

    s1 = candidate.s_end
    ref = build_cracked_mesh(problem.domain, candidate.path, s0, cfg.h, s_max=s1,
                             crack_h=cfg.crack_spacing)
    ext = extend_path(candidate.path, problem.domain)
    s_vals = candidate.profile(times)
    arcs = ref.crack_arcs
    anchors = step_anchors(arcs, s_vals)
    spans = _anchor_windows(times, anchors)
    motions = {k: sliding_motion(ext, candidate.profile, float(arcs[k]), a, b,
                                 cfg.motion_radius, cfg.epsilon, problem.domain)
               for k, (a, b) in spans.items()}

    k_cur = int(anchors[0])
    mesh_cur = grow_mesh(ref, motions[k_cur], float(times[0]))
    st = transfer_state(state.mesh, mesh_cur, state)
    st = start_window(replace(st, t=float(times[0]), a=None))
    traj = Trajectory([st])
    for n in range(1, len(times)):
        k = int(anchors[n - 1])
        if k != k_cur:
            moved = grow_mesh(ref, motions[k], float(times[n - 1]))
            st = replace(transfer_state(mesh_cur, moved, st), a=None)
            traj.states[-1] = st
            mesh_cur, k_cur = moved, k
        nxt = grow_mesh(ref, motions[k], float(times[n]))
        st = step_visco(st, step, loads, material, history, mesh=nxt)
        st.t = float(times[n])
        traj.states.append(st)
        mesh_cur = nxt
    return traj


def is_balanced(candidate: Candidate, state: SolverState, problem: Problem,
                T0: float, T1: float, keep_trajectory: bool = False) -> CandidateResult:
    """Simulate a candidate and test the balance on the dyadic subwindows of ``[T0, T1]``."""
    cfg = problem.config
    try:
        traj = simulate_candidate(candidate, state, problem, T0, T1)
    except (SolverError, MeshInversionError, ValueError, RuntimeError) as exc:
        log.info("candidate %d (angle %g, speed %g, %s) infeasible: %s", candidate.index,
                 candidate.angle, candidate.speed, candidate.shape, exc)
        return CandidateResult(candidate, False, math.nan, math.inf, -math.inf, error=str(exc))
    times = traj.times
    s_vals = candidate.profile(times)
    score = float(np.trapezoid(s_vals, times))
    records = [ledger_record(traj, candidate.profile, a, b, problem.loads, problem.material,
                             problem.history)
               for a, b in dyadic_windows(float(times[0]), float(times[-1]), cfg.depth)]
    worst = max(r.relative for r in records)
    balanced = bool(worst <= cfg.tol_bal)
    return CandidateResult(candidate, balanced, records[0].residual, worst, score, records,
                           traj if keep_trajectory else None)


# ---------------------------------------------------------------------------
# Selection


def select_best(results: list[CandidateResult]) -> CandidateResult | None:
    """Balanced result with the largest ``(score, s_end, -|angle|)``; list order breaks ties."""
    best = None
    for res in results:
        if not res.balanced:
            continue
        if best is None or res.key > best.key:
            best = res
    return best


def _thread_count() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def evaluate_candidates(candidates: list[Candidate], state: SolverState, problem: Problem,
                        T0: float, T1: float) -> list[CandidateResult]:
    threads = _thread_count()
    if threads == 1:
        return [is_balanced(c, state, problem, T0, T1) for c in candidates]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda c: is_balanced(c, state, problem, T0, T1), candidates))


def maximize_interval(state: SolverState, path: CrackPath, index: int, problem: Problem,
                      candidates: list[Candidate] | None = None) -> IntervalRecord:
    """Evaluate the candidates of window ``index`` and pick the maximizer of ``int s dt``."""
    cfg = problem.config
    T0, T1 = cfg.intervals[index]
    rejected: list[Rejected] = []
    s_now = float(state.mesh.tip_arc) if candidates is None else candidates[0].s_start
    if candidates is None:
        candidates = enumerate_candidates(path, s_now, T0, T1, cfg, problem.domain,
                                          problem.initial_path, rejected)
    results = evaluate_candidates(candidates, state, problem, T0, T1)
    best = select_best(results)
    fallback = best is None
    if fallback:
        log.warning("no candidate balanced on window %d; keeping the crack fixed", index)
        best = next(r for r in results if r.candidate.is_constant)
    # rerun the winner keeping its trajectory (simulations are deterministic)
    chosen = is_balanced(best.candidate, state, problem, T0, T1, keep_trajectory=True)
    if chosen.trajectory is None:
        raise SolverError(f"chosen candidate failed on window {index}: {chosen.error}")
    return IntervalRecord(index, T0, T1, chosen, results, rejected, fallback)


# ---------------------------------------------------------------------------
# Evolution


def initial_evolution(problem: Problem) -> Evolution:
    cfg = problem.config
    path = problem.initial_path
    mesh = build_cracked_mesh(problem.domain, path, path.b, cfg.h, crack_h=cfg.crack_spacing)
    state = initial_state(mesh, problem.loads, cfg.times[0])
    return Evolution(cfg, path, path, None, state)


def advance(evolution: Evolution, problem: Problem) -> IntervalRecord:
    """Run the next window and append it to the evolution."""
    i = len(evolution.intervals)
    rec = maximize_interval(evolution.state, evolution.path, i, problem)
    chosen = rec.chosen
    evolution.intervals.append(rec)
    evolution.trajectories.append(chosen.trajectory)
    prof = chosen.candidate.profile
    evolution.profile = prof if evolution.profile is None else evolution.profile.then(prof)
    evolution.path = chosen.candidate.path
    evolution.state = chosen.trajectory.final
    whole = replace(chosen.records[0], interval=i)
    evolution.ledger.add(whole)
    return rec


def continue_evolution(evolution: Evolution, problem: Problem, stop_after: int | None = None,
                       checkpoint=None) -> Evolution:
    """Run windows until ``stop_after`` windows are done (all by default).

    A failing window leaves the evolution partial with ``error`` set.
    """
    n = len(problem.config.intervals) if stop_after is None else stop_after
    while len(evolution.intervals) < n and evolution.error is None:
        try:
            advance(evolution, problem)
        except (SolverError, MeshInversionError, ValueError, RuntimeError) as exc:
            evolution.error = f"window {len(evolution.intervals)}: {exc}"
            log.error("evolution stopped: %s", evolution.error)
        if checkpoint is not None:
            evolution.save(checkpoint)
    return evolution


def run_evolution(scenario, stop_after: int | None = None, checkpoint=None) -> Evolution:
    """Full evolution of a :class:`Problem` (or an object with a ``problem()`` method)."""
    problem = scenario if isinstance(scenario, Problem) else scenario.problem()
    return continue_evolution(initial_evolution(problem), problem, stop_after, checkpoint)


# ---------------------------------------------------------------------------
# Maximality check


@dataclass(frozen=True, eq=False)
class Alternative:
    """Competing evolution ``(path, profile)`` compared on ``[tau0, tau1]``."""

    path: CrackPath
    profile: LengthProfile
    tau0: float
    tau1: float

    @classmethod
    def branch(cls, evolution: Evolution, tau0: float, path: CrackPath, tail: LengthProfile,
               tau1: float | None = None) -> "Alternative":
        """Evolution up to ``tau0`` followed by ``tail``."""
        start = evolution.profile.T0
        prof = tail if tau0 <= start + 1e-12 else evolution.profile.restrict(start, tau0).then(tail)
        return cls(path, prof, tau0, tail.T1 if tau1 is None else tau1)


@dataclass
class MaximalityVerdict:
    m1: bool
    m2: bool
    m3: bool

    @property
    def maximal(self) -> bool:
        return not (self.m1 and self.m2 and self.m3)


def _sample_times(a: float, b: float, breaks, n: int = 64) -> np.ndarray:
    pts = [np.linspace(a, b, n + 1)]
    pts.append(np.array([t for t in breaks if a <= t <= b]))
    return np.unique(np.concatenate(pts))


def maximality_conditions(evolution: Evolution, alternative: Alternative, eta: float,
                          tol: float = 1e-12) -> MaximalityVerdict:
    s, alt = evolution.profile, alternative.profile
    tau0, tau1 = alternative.tau0, alternative.tau1
    # singular sets are compared on interior junctions: the alternative may
    # end before the evolution does, and its end point is not a junction
    inner_s = s.sing()[1:-1]
    inner_alt = alt.sing()[1:-1]
    m1 = all(any(abs(t - u) <= 1e-9 for u in inner_s) for t in inner_alt)

    start = max(s.T0, alt.T0)
    before = _sample_times(start, tau0, list(s.breaks) + list(alt.breaks))
    m2 = bool(np.all(np.abs(alt(before) - s(before)) <= tol))
    if m2:
        arcs = np.linspace(evolution.initial_path.a0, float(s(tau0)), 257)
        m2 = bool(np.max(np.abs(alternative.path.point(arcs) - evolution.path.point(arcs))) <= 1e-8)

    after = np.linspace(tau0, tau1, 201)[1:]
    m3 = bool(np.all(alt(after) > s(after)) and alt(tau1) > s(tau1) + eta)
    return MaximalityVerdict(m1, m2, m3)


def check_eta_maximality(evolution: Evolution, alternative: Alternative, eta: float,
                         problem: Problem | None = None) -> bool:
    """``False`` iff the alternative witnesses a violation of eta-maximality.

    The alternative must be admissible: its profile and path validate and,
    when ``problem`` is given, it balances on ``[tau0, tau1]`` starting from
    the evolution's state at ``tau0``.  Inadmissible alternatives raise
    ``ValueError``.
    """
    if evolution.profile is None:
        raise ValueError("evolution has no completed window")
    if not eta > 0:
        raise ValueError("eta must be positive")
    tau0, tau1 = alternative.tau0, alternative.tau1
    s, alt = evolution.profile, alternative.profile
    if not tau0 < tau1:
        raise ValueError("need tau0 < tau1")
    if not (s.T0 - 1e-12 <= tau0 and tau1 <= s.T1 + 1e-12):
        raise ValueError(f"[tau0, tau1] = [{tau0}, {tau1}] outside the evolution's time span")
    if not (alt.T0 <= tau0 + 1e-12 and tau1 <= alt.T1 + 1e-12):
        raise ValueError("alternative profile does not cover [tau0, tau1]")
    prep = validate_profile(alt)
    if not prep.passed:
        raise ValueError(f"alternative profile is not admissible: {prep.summary()}")
    if float(alt(tau1)) > alternative.path.b + 1e-12:
        raise ValueError("alternative profile runs past the end of its path")
    grep = validate_path(alternative.path, evolution.domain, initial=evolution.initial_path)
    if not grep.passed:
        raise ValueError(f"alternative path is not admissible: {grep.summary()}")
    if problem is not None:
        state = evolution.state_at(tau0)
        tail = alt.restrict(tau0, tau1)
        shape = tail.pieces[0].kind if len(tail.pieces) == 1 else "piecewise"
        cand = Candidate(0, 0.0, float(tail.derivative(tau0, 1)),
                         "constant" if shape == "constant" else shape, alternative.path, tail)
        res = is_balanced(cand, state, problem, tau0, tau1)
        if not res.balanced:
            raise ValueError(f"alternative is not balanced (worst relative residual "
                             f"{res.worst_relative:.4g}): {res.error or ''}".rstrip(": "))
    return maximality_conditions(evolution, alternative, eta).maximal


def audit_alternatives(evolution: Evolution) -> list[Alternative]:
    """Every balanced audited candidate as a branch of the evolution at its window start."""
    out = []
    for rec in evolution.intervals:
        for res in rec.results:
            if res.balanced:
                c = res.candidate
                out.append(Alternative.branch(evolution, rec.T0, c.path, c.profile, rec.T1))
    return out
