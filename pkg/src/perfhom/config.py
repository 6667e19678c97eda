"""Run configuration: a flat ``key=value`` document with dotted section names."""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Optional

from .geometry import DEFAULT_HOLE, CellGeometry, GeometryError
from .harness import DEFAULT_DENSITY, DIAGNOSTICS, SweepPlan
from .materials import COEFF_PRESETS, DENSITY_PRESETS

FORMATS = ("csv", "json", "svg")


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = [problems] if isinstance(problems, str) else list(problems)
        super().__init__("\n".join(self.problems))


@dataclass(frozen=True)
class RunConfig:
    regime: str = "M_pos"
    hole: str = "square"                    # square | polygon | none
    hole_extent: tuple = DEFAULT_HOLE
    m: int = 8
    s: int = 8
    ns: tuple = (2, 4, 8)
    coeff: str = "identity"
    density: str = "auto"                   # auto picks the regime's preset
    count: int = 2
    limit_grid: int = 128
    solve_n: int = 4
    diagnostics: tuple = DIAGNOSTICS
    zero_avg_amplitude: str = "derived"
    output_dir: str = "out"
    formats: tuple = FORMATS
    budget: int = 100_000
    seed: int = 0

    @property
    def density_case(self) -> str:
        return DEFAULT_DENSITY[self.regime] if self.density == "auto" else self.density

    def geometry(self, m: Optional[int] = None) -> CellGeometry:
        extent = None if self.hole == "none" else tuple(self.hole_extent)
        return CellGeometry("square" if self.hole == "none" else self.hole, extent, self.m if m is None else m)

    def plan(self) -> SweepPlan:
        g = self.geometry()
        return SweepPlan(regime=self.regime, ns=tuple(self.ns), m=self.m, s=self.s,
                         limit_grid=self.limit_grid, count=self.count, coeff=self.coeff,
                         density=self.density_case, hole_kind=g.hole_kind, hole=g.hole_extent,
                         diagnostics=tuple(self.diagnostics), budget=self.budget,
                         zero_avg_amplitude=self.zero_avg_amplitude)


# key -> (field, kind)
KEYS = {
    "regime": ("regime", "str"),
    "geometry.hole": ("hole", "str"),
    "geometry.hole_extent": ("hole_extent", "floats"),
    "geometry.m": ("m", "int"),
    "geometry.s": ("s", "int"),
    "sweep.n": ("ns", "ints"),
    "sweep.diagnostics": ("diagnostics", "strs"),
    "sweep.zero_avg_amplitude": ("zero_avg_amplitude", "str"),
    "coeff.preset": ("coeff", "str"),
    "density.case": ("density", "str"),
    "solve.count": ("count", "int"),
    "solve.n": ("solve_n", "int"),
    "limit.grid": ("limit_grid", "int"),
    "output.dir": ("output_dir", "str"),
    "output.formats": ("formats", "strs"),
    "budget.dofs": ("budget", "int"),
    "seed": ("seed", "int"),
}


def _convert(kind: str, raw: str):
    if kind == "str":
        return raw
    if kind == "int":
        return int(raw)
    items = [p.strip() for p in raw.split(",") if p.strip()]
    if kind == "ints":
        return tuple(int(p) for p in items)
    if kind == "floats":
        return tuple(float(p) for p in items)
    return tuple(items)


def _render(kind: str, value) -> str:
    if kind in ("str", "int"):
        return str(value)
    if kind == "floats":
        return ",".join(repr(float(v)) for v in value)
    return ",".join(str(v) for v in value)


def problems(cfg: RunConfig) -> list:
    out = []
    if cfg.regime not in DEFAULT_DENSITY:
        out.append(f"regime: unknown regime {cfg.regime!r} (expected one of {sorted(DEFAULT_DENSITY)})")
    if cfg.hole not in ("square", "polygon", "none"):
        out.append(f"geometry.hole: unknown hole {cfg.hole!r}")
    if cfg.hole != "none" and len(cfg.hole_extent) != 4:
        out.append("geometry.hole_extent: needs four numbers x0,x1,y0,y1")
    if cfg.coeff not in COEFF_PRESETS:
        out.append(f"coeff.preset: unknown preset {cfg.coeff!r}")
    if cfg.density != "auto" and cfg.density not in DENSITY_PRESETS:
        out.append(f"density.case: unknown case {cfg.density!r}")
    elif cfg.regime in DEFAULT_DENSITY and cfg.density != "auto" and DEFAULT_DENSITY[cfg.regime] != cfg.density:
        out.append(f"density.case: {cfg.density!r} does not match regime {cfg.regime!r}")
    if cfg.hole in ("square", "polygon", "none") and (cfg.hole == "none" or len(cfg.hole_extent) == 4):
        for key, val in (("geometry.m", cfg.m), ("geometry.s", cfg.s)):
            try:
                cfg.geometry(val).validate(val)
            except GeometryError as exc:
                out.append(f"{key}: {exc}")
    if not cfg.ns:
        out.append("sweep.n: empty list")
    elif any(b <= a for a, b in zip(cfg.ns, cfg.ns[1:])):
        out.append(f"sweep.n: {','.join(map(str, cfg.ns))} must be strictly increasing (ε strictly decreasing)")
    if any(n < 1 for n in cfg.ns):
        out.append("sweep.n: values must be positive")
    bad = set(cfg.diagnostics) - set(DIAGNOSTICS)
    if bad:
        out.append(f"sweep.diagnostics: unknown {sorted(bad)}")
    if cfg.zero_avg_amplitude not in ("derived", "stated"):
        out.append("sweep.zero_avg_amplitude: expected derived or stated")
    if "corrector" in cfg.diagnostics:
        mis = [n for n in cfg.ns if n > 0 and cfg.limit_grid % (n * cfg.s)]
        if mis:
            out.append(f"limit.grid: {cfg.limit_grid} must be a multiple of n*s (fails for n={mis})")
    bad = set(cfg.formats) - set(FORMATS)
    if bad:
        out.append(f"output.formats: unknown {sorted(bad)}")
    for key, val, lo in (("solve.count", cfg.count, 1), ("limit.grid", cfg.limit_grid, 2),
                         ("solve.n", cfg.solve_n, 1), ("budget.dofs", cfg.budget, 1)):
        if val < lo:
            out.append(f"{key}: must be at least {lo}")
    for n in cfg.ns:
        if n > 0 and (n * cfg.s + 1) ** 2 > cfg.budget:
            out.append(f"budget.dofs: n={n} needs {(n * cfg.s + 1) ** 2} vertices, budget is {cfg.budget}")
    return out


def parse_config(text: str, base: Optional[RunConfig] = None) -> RunConfig:
    """Parse and validate; every violation is collected before raising."""
    errs = []
    seen = {}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errs.append(f"line {lineno}: expected key=value, got {line!r}")
            continue
        key, raw = (p.strip() for p in line.split("=", 1))
        if key in seen:
            errs.append(f"line {lineno}: duplicate key {key!r} (first set on line {seen[key]})")
            continue
        seen[key] = lineno
        if key not in KEYS:
            errs.append(f"line {lineno}: unknown key {key!r}")
            continue
        name, kind = KEYS[key]
        try:
            values[name] = _convert(kind, raw)
        except ValueError:
            errs.append(f"line {lineno}: {key}: cannot read {raw!r} as {kind}")
    cfg = replace(base or RunConfig(), **values)
    errs.extend(problems(cfg))
    if errs:
        raise ConfigError(errs)
    return cfg


def print_config(cfg: RunConfig) -> str:
    lines = [f"{key}={_render(kind, getattr(cfg, name))}" for key, (name, kind) in KEYS.items()]
    return "\n".join(lines) + "\n"


def field_names() -> list:
    return [f.name for f in fields(RunConfig)]
