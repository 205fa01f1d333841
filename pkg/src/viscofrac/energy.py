"""Energy, viscous dissipation, external work and the balance residual.

All time integrals use the trapezoid rule on the trajectory's step grid, so
residuals over adjacent intervals add up exactly (up to rounding).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, fields

import numpy as np

from .geometry import LengthProfile
from .material import MaterialModel, apply_tensor
from .solver import (HistoryData, LoadSet, SolverState, Trajectory, dirichlet_lift,
                     effective_stress, operators)

TOUGHNESS = 1.0


def kinetic_elastic(state: SolverState, material: MaterialModel) -> float:
    """``1/2 |v|^2 + 1/2 (C Eu, Eu)`` with the consistent mass matrix."""
    ops = operators(state.mesh, material)
    return 0.5 * float(state.v @ (ops.M @ state.v)) + 0.5 * float(state.u @ (ops.K_C @ state.u))


@dataclass
class StepTerms:
    """Integrands and boundary values of the energy terms at one time level."""

    t: float
    energy: float
    visc: float          # (V Eu, Eu)
    mem: float           # (z, Eu)
    work_rate: float     # integrand of the work
    work_point: float    # (v, u_D') + (F, Eu - Eu_D)


def step_terms(state: SolverState, loads: LoadSet, material: MaterialModel,
               history: HistoryData | None = None) -> StepTerms:
    mesh = state.mesh
    ops = operators(mesh, material)
    asm = mesh.assembly
    t = state.t
    u, v = state.u, state.v
    Eu = asm.strain(u)
    uD = dirichlet_lift(mesh, loads, t, 0)
    uD1 = dirichlet_lift(mesh, loads, t, 1)
    uD2 = dirichlet_lift(mesh, loads, t, 2)
    f = loads.f(t, mesh.nodes).reshape(-1)
    F = effective_stress(state, mesh, loads, history, ops.V_el, t)
    Fdot = effective_stress(state, mesh, loads, history, ops.V_el, t, rate=True)
    EuD = asm.strain(uD)
    EuD1 = asm.strain(uD1)
    Mv = ops.M @ v

    energy = 0.5 * float(v @ Mv) + 0.5 * float(u @ (ops.K_C @ u))
    visc = float(u @ (ops.K_V @ u))
    mem = asm.pair(state.z, Eu)
    work_rate = (float((v - uD1) @ (ops.M @ f))
                 + float(uD1 @ (ops.K_A @ u))
                 - asm.pair(state.z, EuD1)
                 - asm.pair(Fdot, Eu - EuD)
                 - float(Mv @ uD2))
    work_point = float(Mv @ uD1) + asm.pair(F, Eu - EuD)
    return StepTerms(t, energy, visc, mem, work_rate, work_point)


class TermTable:
    """Per-step terms with cumulative trapezoid integrals for O(1) interval queries."""

    def __init__(self, terms: list[StepTerms]):
        self.t = np.array([x.t for x in terms])
        self.energy = np.array([x.energy for x in terms])
        self.visc = np.array([x.visc for x in terms])
        self.mem = np.array([x.mem for x in terms])
        self.work_rate = np.array([x.work_rate for x in terms])
        self.work_point = np.array([x.work_point for x in terms])
        dt = np.diff(self.t)

        def cum(y):
            return np.concatenate([[0.0], np.cumsum(0.5 * dt * (y[1:] + y[:-1]))])

        self.int_visc = cum(self.visc)
        self.int_mem = cum(self.mem)
        self.int_work = cum(self.work_rate)

    def index(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.t - t)))
        if abs(self.t[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not on the trajectory step grid")
        return i

    def dissipation(self, i: int, j: int) -> float:
        return (0.5 * (self.visc[j] - self.visc[i]) - (self.mem[j] - self.mem[i])
                + (self.int_visc[j] - self.int_visc[i]) - (self.int_mem[j] - self.int_mem[i]))

    def work(self, i: int, j: int) -> float:
        return (self.int_work[j] - self.int_work[i]) + (self.work_point[j] - self.work_point[i])


def term_table(trajectory: Trajectory, loads: LoadSet, material: MaterialModel,
               history: HistoryData | None = None) -> TermTable:
    key = ("terms", id(loads), id(material), id(history), len(trajectory.states))
    cache = getattr(trajectory, "_term_cache", None)
    if cache is None:
        cache = {}
        trajectory._term_cache = cache
    if key not in cache:
        cache[key] = TermTable([step_terms(s, loads, material, history) for s in trajectory.states])
    return cache[key]


def _zero_loads() -> LoadSet:
    return LoadSet()


def viscous_dissipation(trajectory: Trajectory, t1: float, t2: float, material: MaterialModel,
                        loads: LoadSet | None = None, history: HistoryData | None = None) -> float:
    if t2 < t1:
        raise ValueError("need t1 <= t2")
    tab = term_table(trajectory, loads or _zero_loads(), material, history)
    return float(tab.dissipation(tab.index(t1), tab.index(t2)))


def external_work(trajectory: Trajectory, t1: float, t2: float, loads: LoadSet,
                  material: MaterialModel, history: HistoryData | None = None) -> float:
    if t2 < t1:
        raise ValueError("need t1 <= t2")
    tab = term_table(trajectory, loads, material, history)
    return float(tab.work(tab.index(t1), tab.index(t2)))


def crack_increment(profile: LengthProfile | None, t1: float, t2: float) -> float:
    if profile is None:
        return 0.0
    return TOUGHNESS * (float(profile(t2)) - float(profile(t1)))


def balance_residual(trajectory: Trajectory, profile: LengthProfile | None, t1: float, t2: float,
                     loads: LoadSet, material: MaterialModel,
                     history: HistoryData | None = None) -> tuple[float, float]:
    """Signed residual ``dE + D + ds - W`` and normalization ``max(|E1|, |E2|, |W|, 1)``."""
    rec = ledger_record(trajectory, profile, t1, t2, loads, material, history)
    return rec.residual, rec.normalization


@dataclass
class LedgerRecord:
    t1: float
    t2: float
    dE: float
    D: float
    ds: float
    W: float
    residual: float
    normalization: float
    interval: int = 0

    @property
    def relative(self) -> float:
        return abs(self.residual) / self.normalization


def ledger_record(trajectory: Trajectory, profile: LengthProfile | None, t1: float, t2: float,
                  loads: LoadSet, material: MaterialModel, history: HistoryData | None = None,
                  interval: int = 0) -> LedgerRecord:
    if t2 < t1:
        raise ValueError("need t1 <= t2")
    tab = term_table(trajectory, loads, material, history)
    i, j = tab.index(t1), tab.index(t2)
    E1, E2 = float(tab.energy[i]), float(tab.energy[j])
    D = float(tab.dissipation(i, j))
    W = float(tab.work(i, j))
    ds = crack_increment(profile, float(tab.t[i]), float(tab.t[j]))
    res = (E2 - E1) + D + ds - W
    norm = max(abs(E1), abs(E2), abs(W), 1.0)
    return LedgerRecord(float(tab.t[i]), float(tab.t[j]), E2 - E1, D, ds, W, res, norm, interval)


LEDGER_COLUMNS = ("interval", "t1", "t2", "dE", "D", "ds", "W", "residual", "normalization")


@dataclass
class EnergyLedger:
    records: list[LedgerRecord] = field(default_factory=list)

    def add(self, rec: LedgerRecord):
        self.records.append(rec)

    def extend(self, other: "EnergyLedger"):
        self.records.extend(other.records)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LEDGER_COLUMNS)
            for r in self.records:
                w.writerow([r.interval] + [repr(float(getattr(r, c))) for c in LEDGER_COLUMNS[1:]])

    @classmethod
    def read_csv(cls, path) -> "EnergyLedger":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        names = {f.name for f in fields(LedgerRecord)}
        recs = []
        for row in rows:
            kw = {k: (int(v) if k == "interval" else float(v)) for k, v in row.items() if k in names}
            recs.append(LedgerRecord(**kw))
        return cls(recs)
