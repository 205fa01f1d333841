"""Scenario files: INI sections describing one simulation.

Lengths and times are dimensionless; the memory kernel ``e^{tau - t}``
fixes the relaxation time to one, so every input is relative to it.

Sections::

    [domain]     vertices = x y; x y; ...     labels = D N ...  (edge i -> i+1)
    [crack]      mouth, direction, a0, r, L, ds (optional)
    [material]   kind = isotropic, elastic = lambda mu, viscous = lambda mu
    [material_region:NAME]  box = x0 y0 x1 y1, elastic = ..., viscous = ...
    [loads]      body_force, stress, dirichlet, initial_displacement,
                 initial_velocity; each "family p1 p2 ..."
    [history]    family = zero|constant|exponential, strain = e11 e22 e12, alpha
    [evolution]  times (or T and intervals), eta, mu, M, angles (degrees),
                 speeds, shapes, tol_bal, depth
    [solver]     h, dt, crack_h, rho, epsilon
    [output]     snapshot_stride (0 disables VTK snapshots)
"""

from __future__ import annotations

import configparser
import hashlib
import math
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .domain import DomainSpec
from .driver import EvolutionConfig, Problem
from .geometry import CrackPath, ValidationReport, validate_path
from .material import MaterialModel, Region, TensorField, isotropic_tensor, make_isotropic
from .solver import HistoryData, LoadSet


class ScenarioError(ValueError):
    """Scenario file that cannot be parsed or fails validation."""


class SpeedGateError(ScenarioError):
    """Maximal crack speed not below ``sqrt(lambda) / 2``."""


# closed-form load families: name -> number of parameters
VECTOR_FAMILIES = {"zero": 0, "constant": 2, "harmonic": 3}
STRESS_FAMILIES = {"zero": 0, "constant": 3, "harmonic": 4}
DIRICHLET_FAMILIES = {"zero": 0, "affine": 6, "harmonic": 3}
DISPLACEMENT_FAMILIES = {"zero": 0, "affine": 6}
VELOCITY_FAMILIES = {"zero": 0, "constant": 2, "opening": 3, "mode": 2}

Family = tuple[str, tuple[float, ...]]


@dataclass(frozen=True)
class LoadSpec:
    """Closed-form load descriptors.

    * body force: ``constant fx fy``; ``harmonic fx fy omega`` for ``f sin(omega t)``
    * stress: ``constant s11 s22 s12``; ``harmonic s11 s22 s12 omega``
    * dirichlet: ``affine a11 a12 a21 a22 c1 c2`` (time-independent ``A x + c``);
      ``harmonic ux uy omega`` for ``u sin(omega t)``
    * initial displacement: ``affine`` as above
    * initial velocity: ``constant vx vy``; ``opening amplitude width y_center``
      for ``(0, amplitude tanh((y - y_center) / width))``; ``mode ax ay`` for
      ``a sin(pi x) sin(pi y)``
    """

    body_force: Family = ("zero", ())
    stress: Family = ("zero", ())
    dirichlet: Family = ("zero", ())
    initial_displacement: Family = ("zero", ())
    initial_velocity: Family = ("zero", ())

    def build(self) -> LoadSet:
        kw = {}
        kw.update(_body_force(*self.body_force))
        kw.update(_stress(*self.stress))
        kw.update(_dirichlet(*self.dirichlet))
        name, p = self.initial_displacement
        if name == "affine":
            kw["initial_displacement"] = lambda x: _affine(p, x)
        kw.update(_velocity(*self.initial_velocity))
        return LoadSet(**kw)


def _tiled(vec):
    return lambda x: np.tile(vec, (len(x), 1))


def _body_force(name, p) -> dict:
    if name == "constant":
        return {"body_force": lambda t, x: np.tile(p, (len(x), 1))}
    if name == "harmonic":
        f, w = np.array(p[:2]), p[2]
        return {"body_force": lambda t, x: np.tile(f * math.sin(w * t), (len(x), 1))}
    return {}


def _stress(name, p) -> dict:
    if name == "zero":
        return {}
    S = np.array([[p[0], p[2]], [p[2], p[1]]])
    if name == "constant":
        return {"stress": lambda t, x: np.broadcast_to(S, (len(x), 2, 2)).copy(),
                "stress_rate": lambda t, x: np.zeros((len(x), 2, 2))}
    w = p[3]
    return {"stress": lambda t, x: np.broadcast_to(S * math.sin(w * t), (len(x), 2, 2)).copy(),
            "stress_rate": lambda t, x: np.broadcast_to(S * w * math.cos(w * t), (len(x), 2, 2)).copy()}


def _dirichlet(name, p) -> dict:
    def zero(t, x):
        return np.zeros((len(x), 2))

    if name == "affine":
        return {"dirichlet": lambda t, x: _affine(p, x), "dirichlet_rate": zero,
                "dirichlet_accel": zero}
    if name == "harmonic":
        u, w = np.array(p[:2]), p[2]
        return {"dirichlet": lambda t, x: np.tile(u * math.sin(w * t), (len(x), 1)),
                "dirichlet_rate": lambda t, x: np.tile(u * w * math.cos(w * t), (len(x), 1)),
                "dirichlet_accel": lambda t, x: np.tile(-u * w * w * math.sin(w * t), (len(x), 1))}
    return {}


def _velocity(name, p) -> dict:
    if name == "constant":
        return {"initial_velocity": _tiled(np.array(p))}
    if name == "opening":
        amp, width, yc = p
        return {"initial_velocity": lambda x: np.column_stack(
            [np.zeros(len(x)), amp * np.tanh((x[:, 1] - yc) / width)])}
    if name == "mode":
        a = np.array(p)
        return {"initial_velocity": lambda x: np.outer(np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1]), a)}
    return {}


def _affine(p, x):
    A = np.array([[p[0], p[1]], [p[2], p[3]]])
    return x @ A.T + np.array(p[4:6])


@dataclass(frozen=True)
class RegionSpec:
    name: str
    box: tuple[float, float, float, float]
    elastic: tuple[float, float]
    viscous: tuple[float, float]


@dataclass(frozen=True)
class Scenario:
    vertices: tuple[tuple[float, float], ...]
    labels: tuple[str, ...]
    mouth: tuple[float, float]
    direction: tuple[float, float]
    a0: float
    r: float
    L: float
    ds: float
    elastic: tuple[float, float]
    viscous: tuple[float, float]
    regions: tuple[RegionSpec, ...]
    loads: LoadSpec
    history: HistoryData
    config: EvolutionConfig
    snapshot_stride: int = 0
    reports: dict = field(default_factory=dict, compare=False, repr=False)

    def domain(self) -> DomainSpec:
        return DomainSpec(self.vertices, self.labels)

    def initial_path(self) -> CrackPath:
        return CrackPath.straight(self.mouth, self.direction, self.a0, 0.0, self.r, self.L, self.ds)

    def material(self) -> MaterialModel:
        C = make_isotropic(*self.elastic, kind="elastic")
        V = make_isotropic(*self.viscous, kind="viscous")
        lam = min(C.window[0], V.window[0])
        Lam = max(C.window[1], V.window[1])
        if not self.regions:
            return MaterialModel(C, V, lam, Lam)
        c_regions, v_regions = [], []
        for reg in self.regions:
            rc = make_isotropic(*reg.elastic, kind="elastic")
            rv = make_isotropic(*reg.viscous, kind="viscous")
            lam = min(lam, rc.window[0], rv.window[0])
            Lam = max(Lam, rc.window[1], rv.window[1])
            c_regions.append(Region(reg.name, reg.box, isotropic_tensor(*reg.elastic)))
            v_regions.append(Region(reg.name, reg.box, isotropic_tensor(*reg.viscous)))
        C = TensorField(C.base, tuple(c_regions), "elastic")
        V = TensorField(V.base, tuple(v_regions), "viscous")
        return MaterialModel(C, V, lam, Lam)

    def history_data(self) -> HistoryData | None:
        return None if self.history.family == "zero" else self.history

    def problem(self) -> Problem:
        return Problem(self.domain(), self.initial_path(), self.material(), self.loads.build(),
                       self.history_data(), self.config)

    def digest(self) -> str:
        return hashlib.sha256(dump_scenario(self).encode()).hexdigest()


# ---------------------------------------------------------------------------
# Parsing


def _line_of(text: str, section: str, key: str | None) -> int | None:
    current = None
    for i, line in enumerate(text.splitlines(), start=1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return i
            continue
        if current == section and key is not None and re.match(rf"\s*{re.escape(key)}\s*[=:]", line, re.I):
            return i
    return None


class _Reader:
    def __init__(self, parser: configparser.ConfigParser, text: str, source: str):
        self.parser = parser
        self.text = text
        self.source = source

    def fail(self, section: str, key: str | None, msg: str) -> ScenarioError:
        line = _line_of(self.text, section, key)
        where = f"{self.source}:{line}" if line else self.source
        what = f"[{section}] {key}" if key else f"[{section}]"
        return ScenarioError(f"{where}: {what}: {msg}")

    def has(self, section: str, key: str) -> bool:
        return self.parser.has_option(section, key)

    def raw(self, section: str, key: str, default=None) -> str:
        if not self.parser.has_section(section):
            if default is not None:
                return default
            raise self.fail(section, None, "missing section")
        if not self.parser.has_option(section, key):
            if default is not None:
                return default
            raise self.fail(section, key, "missing value")
        return self.parser.get(section, key).strip()

    def floats(self, section, key, n=None, default=None) -> tuple[float, ...]:
        text = self.raw(section, key, default)
        try:
            vals = tuple(float(x) for x in text.replace(",", " ").split())
        except ValueError:
            raise self.fail(section, key, f"expected numbers, got {text!r}") from None
        if n is not None and len(vals) != n:
            raise self.fail(section, key, f"expected {n} numbers, got {len(vals)}")
        if not all(math.isfinite(v) for v in vals):
            raise self.fail(section, key, "values must be finite")
        return vals

    def number(self, section, key, default=None) -> float:
        return self.floats(section, key, 1, None if default is None else repr(default))[0]

    def family(self, section, key, table) -> Family:
        text = self.raw(section, key, "zero")
        parts = text.split()
        name = parts[0].lower()
        if name not in table:
            raise self.fail(section, key, f"unsupported family {name!r}; choose from {sorted(table)}")
        try:
            params = tuple(float(x) for x in parts[1:])
        except ValueError:
            raise self.fail(section, key, f"bad parameters in {text!r}") from None
        if len(params) != table[name]:
            raise self.fail(section, key, f"family {name!r} takes {table[name]} parameters, "
                                          f"got {len(params)}")
        return name, params


def parse_scenario(text: str, source: str = "<scenario>") -> Scenario:
    """Scenario from INI text, with defaults resolved but without validation."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ScenarioError(f"{source}: {exc}") from None
    rd = _Reader(parser, text, source)

    # domain
    vtext = rd.raw("domain", "vertices")
    try:
        vertices = tuple(tuple(float(c) for c in chunk.split()) for chunk in vtext.split(";")
                         if chunk.strip())
    except ValueError:
        raise rd.fail("domain", "vertices", "expected 'x y; x y; ...'") from None
    if any(len(v) != 2 for v in vertices):
        raise rd.fail("domain", "vertices", "every vertex needs two coordinates")
    labels = tuple(rd.raw("domain", "labels").upper().split())

    # crack
    mouth = rd.floats("crack", "mouth", 2)
    direction = rd.floats("crack", "direction", 2)
    a0 = rd.number("crack", "a0")
    r = rd.number("crack", "r")
    L = rd.number("crack", "L")
    if not a0 < 0:
        raise rd.fail("crack", "a0", "must be negative")
    if not (r > 0 and L > 0):
        raise rd.fail("crack", "r" if r <= 0 else "L", "must be positive")
    if rd.has("crack", "ds"):
        ds = rd.number("crack", "ds")
        if not ds > 0 or abs(round(-a0 / ds) * ds + a0) > 1e-9 * ds:
            raise rd.fail("crack", "ds", "must be positive and divide |a0|")
    else:
        n = math.ceil(-a0 / (r / 32.0) - 1e-9)
        ds = -a0 / n

    # material
    kind = rd.raw("material", "kind", "isotropic").lower()
    if kind != "isotropic":
        raise rd.fail("material", "kind", f"unsupported material kind {kind!r}")
    elastic = rd.floats("material", "elastic", 2)
    viscous = rd.floats("material", "viscous", 2)
    regions = []
    for sec in parser.sections():
        if sec.startswith("material_region:"):
            name = sec.split(":", 1)[1].strip()
            regions.append(RegionSpec(name, rd.floats(sec, "box", 4), rd.floats(sec, "elastic", 2),
                                      rd.floats(sec, "viscous", 2)))

    # loads
    loads = LoadSpec(
        rd.family("loads", "body_force", VECTOR_FAMILIES),
        rd.family("loads", "stress", STRESS_FAMILIES),
        rd.family("loads", "dirichlet", DIRICHLET_FAMILIES),
        rd.family("loads", "initial_displacement", DISPLACEMENT_FAMILIES),
        rd.family("loads", "initial_velocity", VELOCITY_FAMILIES),
    ) if parser.has_section("loads") else LoadSpec()

    # history
    family = rd.raw("history", "family", "zero").lower()
    strain = rd.floats("history", "strain", 3, "0 0 0")
    alpha = rd.number("history", "alpha", 0.0)
    try:
        history = HistoryData(family, ((strain[0], strain[2]), (strain[2], strain[1])), alpha)
    except ValueError as exc:
        raise rd.fail("history", "family", str(exc)) from None

    # evolution and solver
    sec = "evolution"
    if rd.has(sec, "times"):
        times = rd.floats(sec, "times")
    else:
        T = rd.number(sec, "T")
        n = int(rd.number(sec, "intervals"))
        if n < 1:
            raise rd.fail(sec, "intervals", "must be at least 1")
        times = tuple(T * i / n for i in range(n + 1))
    mu = rd.number(sec, "mu")
    kw = dict(times=times, eta=rd.number(sec, "eta"), mu=mu, M=rd.number(sec, "M"))
    if rd.has(sec, "angles"):
        kw["angles"] = rd.floats(sec, "angles")
    if rd.has(sec, "speeds"):
        kw["speeds"] = rd.floats(sec, "speeds")
    if rd.has(sec, "shapes"):
        kw["shapes"] = tuple(rd.raw(sec, "shapes").lower().split())
    kw["tol_bal"] = rd.number(sec, "tol_bal", 0.02)
    kw["depth"] = int(rd.number(sec, "depth", 2))
    kw["h"] = rd.number("solver", "h", 0.125)
    kw["dt"] = rd.number("solver", "dt", 0.05)
    kw["epsilon"] = rd.number("solver", "epsilon", 0.3)
    if rd.has("solver", "crack_h"):
        kw["crack_h"] = rd.number("solver", "crack_h")
    if rd.has("solver", "rho"):
        kw["rho"] = rd.number("solver", "rho")
    try:
        config = EvolutionConfig(**kw)
    except ValueError as exc:
        raise rd.fail(sec, None, str(exc)) from None
    config = replace(config, crack_h=config.crack_spacing, rho=config.motion_radius)

    stride = int(rd.number("output", "snapshot_stride", 0)) if parser.has_section("output") else 0
    if stride < 0:
        raise rd.fail("output", "snapshot_stride", "must be nonnegative")

    return Scenario(vertices, labels, mouth, direction, a0, r, L, ds, elastic, viscous,
                    tuple(regions), loads, history, config, stride)


def check_speed_gate(mu: float, lam: float) -> None:
    """Reject crack speeds that are not subsonic: ``mu < sqrt(lambda) / 2``."""
    limit = 0.5 * math.sqrt(lam)
    if not mu < limit:
        raise SpeedGateError(
            f"speed gate violated: mu = {mu:.6g} must be below sqrt(lambda)/2 = {limit:.6g} "
            f"(lambda = {lam:.6g}, the lower ellipticity bound of the material)")


def validate_scenario(scenario: Scenario) -> dict:
    """Run every validator; raise :class:`ScenarioError` on the first failure."""
    reports: dict = {}
    try:
        domain = scenario.domain()
    except ValueError as exc:
        raise ScenarioError(f"[domain]: {exc}") from None
    try:
        material = scenario.material()
    except ValueError as exc:
        raise ScenarioError(f"[material]: {exc}") from None
    mat_reports = material.validate()
    reports["material"] = mat_reports
    bad = [k for k, rep in mat_reports.items() if not rep.passed]
    if bad:
        raise ScenarioError(f"[material]: tensors {bad} violate the ellipticity window "
                            f"({material.lam:.6g}, {material.Lam:.6g})")
    check_speed_gate(scenario.config.mu, material.lam)
    try:
        path = scenario.initial_path()
    except ValueError as exc:
        raise ScenarioError(f"[crack]: {exc}") from None
    rep: ValidationReport = validate_path(path, domain)
    reports["initial_path"] = rep
    if not rep.passed:
        raise ScenarioError(f"[crack]: initial crack is not admissible: {rep.summary()}")
    return reports


def load_scenario(path) -> Scenario:
    """Parse and validate a scenario file; validator reports end up in ``.reports``."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from None
    scenario = parse_scenario(text, str(p))
    try:
        scenario.reports.update(validate_scenario(scenario))
    except ScenarioError as exc:
        raise type(exc)(f"{p}: {exc}") from None
    return scenario


# ---------------------------------------------------------------------------
# Serialization


def _num(x: float) -> str:
    return repr(float(x))


def _nums(xs) -> str:
    return " ".join(_num(x) for x in xs)


def _fam(f: Family) -> str:
    name, params = f
    return " ".join([name] + [_num(p) for p in params])


def dump_scenario(scenario: Scenario) -> str:
    """Canonical INI text with every default spelled out."""
    c = scenario.config
    h = scenario.history
    lines = [
        "[domain]",
        "vertices = " + "; ".join(_nums(v) for v in scenario.vertices),
        "labels = " + " ".join(scenario.labels),
        "",
        "[crack]",
        f"mouth = {_nums(scenario.mouth)}",
        f"direction = {_nums(scenario.direction)}",
        f"a0 = {_num(scenario.a0)}",
        f"r = {_num(scenario.r)}",
        f"L = {_num(scenario.L)}",
        f"ds = {_num(scenario.ds)}",
        "",
        "[material]",
        "kind = isotropic",
        f"elastic = {_nums(scenario.elastic)}",
        f"viscous = {_nums(scenario.viscous)}",
        "",
    ]
    for reg in scenario.regions:
        lines += [f"[material_region:{reg.name}]", f"box = {_nums(reg.box)}",
                  f"elastic = {_nums(reg.elastic)}", f"viscous = {_nums(reg.viscous)}", ""]
    ld = scenario.loads
    lines += [
        "[loads]",
        f"body_force = {_fam(ld.body_force)}",
        f"stress = {_fam(ld.stress)}",
        f"dirichlet = {_fam(ld.dirichlet)}",
        f"initial_displacement = {_fam(ld.initial_displacement)}",
        f"initial_velocity = {_fam(ld.initial_velocity)}",
        "",
        "[history]",
        f"family = {h.family}",
        f"strain = {_nums((h.strain[0][0], h.strain[1][1], h.strain[0][1]))}",
        f"alpha = {_num(h.alpha)}",
        "",
        "[evolution]",
        f"times = {_nums(c.times)}",
        f"eta = {_num(c.eta)}",
        f"mu = {_num(c.mu)}",
        f"M = {_num(c.M)}",
        f"angles = {_nums(c.angles)}",
        f"speeds = {_nums(c.speeds)}",
        f"shapes = {' '.join(c.shapes)}",
        f"tol_bal = {_num(c.tol_bal)}",
        f"depth = {c.depth}",
        "",
        "[solver]",
        f"h = {_num(c.h)}",
        f"dt = {_num(c.dt)}",
        f"crack_h = {_num(c.crack_spacing)}",
        f"rho = {_num(c.motion_radius)}",
        f"epsilon = {_num(c.epsilon)}",
        "",
        "[output]",
        f"snapshot_stride = {scenario.snapshot_stride}",
        "",
    ]
    return "\n".join(lines)


def scenario_dict(scenario: Scenario) -> dict:
    """Plain-data view used in run manifests."""
    out = asdict(scenario)
    out.pop("reports", None)
    return out
