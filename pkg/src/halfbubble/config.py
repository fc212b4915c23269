"""Run configuration shared by all CLI subcommands.

A RunConfig round-trips through JSON bit-exactly: floats are serialized
with their shortest repr and parsed back to the same IEEE value, ladders
are stored as plain lists.  Flags override file values field by field.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from .corrector import GridConfig
from .energy import WEYL_DENOMINATORS
from .errors import DomainError, InputFormatError, ValidationFailure

RII_CONVENTIONS = ("summed", "per_index")

_DEFAULT_EPS_LADDER = tuple(float(e) for e in np.geomspace(1e-4, 1e-1, 7))


@dataclass(frozen=True)
class RunConfig:
    """Everything a batch run needs, in one serializable record.

    h is the grid spacing of the mapped unit square; the solve uses
    round(1/h) cells per direction.  An empty delta_ladder leaves each
    slope experiment on its regime-specific default ladder.
    """
    n: int = 11
    seed: int = 1
    tol_quad: float = 1e-9
    tol_sym: float = 1e-12
    tol_solver: float = 1e-8
    t_max: float = 160.0
    r_max: float = 160.0
    h: float = 1.0 / 192.0
    delta_ladder: tuple = ()
    eps_ladder: tuple = _DEFAULT_EPS_LADDER
    weyl_denominator: str = "96(n-1)^2"
    rii_convention: str = "summed"
    mc_samples: int = 60000
    metric_seed: int = 0
    deg3_scale: float = 5.0
    richardson: bool = True
    phi_bound_coeff: float = 1.0
    curvature_file: str = ""
    out_dir: str = "out"

    def __post_init__(self):
        for name in ("tol_quad", "tol_sym", "tol_solver"):
            if not getattr(self, name) > 0.0:
                raise ValidationFailure(f"{name} must be positive")
        if self.n < 5:
            raise DomainError(f"dimension must be at least 5, got {self.n}")
        if not 0.0 < self.h <= 0.125:
            raise ValidationFailure(f"h must lie in (0, 1/8], got {self.h}")
        if self.t_max <= 8.0 or self.r_max <= 8.0:
            raise ValidationFailure("domain caps must exceed 8")
        if self.mc_samples < 1000:
            raise ValidationFailure("mc_samples below the useful minimum")
        if self.weyl_denominator not in WEYL_DENOMINATORS:
            raise ValidationFailure(
                f"weyl_denominator must be one of {WEYL_DENOMINATORS}")
        if self.rii_convention not in RII_CONVENTIONS:
            raise ValidationFailure(
                f"rii_convention must be one of {RII_CONVENTIONS}")
        if self.deg3_scale < 0.0:
            raise ValidationFailure("deg3_scale must be nonnegative")
        if self.phi_bound_coeff <= 0.0:
            raise ValidationFailure("phi_bound_coeff must be positive")
        object.__setattr__(self, "delta_ladder",
                           _checked_ladder("delta_ladder", self.delta_ladder,
                                           allow_empty=True))
        object.__setattr__(self, "eps_ladder",
                           _checked_ladder("eps_ladder", self.eps_ladder,
                                           allow_empty=False))

    def grid(self) -> GridConfig:
        cells = int(round(1.0 / self.h))
        return GridConfig(n_t=cells, n_r=cells,
                          t_max=self.t_max, r_max=self.r_max)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["delta_ladder"] = list(self.delta_ladder)
        d["eps_ladder"] = list(self.eps_ladder)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise InputFormatError(f"unknown config fields: {unknown}")
        kwargs = dict(d)
        for key in ("delta_ladder", "eps_ladder"):
            if key in kwargs:
                kwargs[key] = tuple(float(x) for x in kwargs[key])
        return cls(**kwargs)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InputFormatError(
                f"config is not valid JSON: line {exc.lineno}, "
                f"column {exc.colno}: {exc.msg}") from exc
        if not isinstance(payload, dict):
            raise InputFormatError("config JSON must be an object")
        return cls.from_dict(payload)


def _checked_ladder(name: str, values, allow_empty: bool) -> tuple:
    ladder = tuple(float(v) for v in values)
    if not ladder:
        if allow_empty:
            return ladder
        raise ValidationFailure(f"{name} must not be empty")
    arr = np.asarray(ladder)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise ValidationFailure(f"{name} entries must lie in (0, 1)")
    if len(ladder) > 1 and not np.all(np.diff(arr) > 0.0):
        raise ValidationFailure(f"{name} must be strictly increasing")
    return ladder
