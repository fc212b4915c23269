"""Curvature data model and boundary-adapted metric expansions.

A CurvaturePoint packages the curvature data of one boundary point in the
adapted frame: the boundary curvature tensor Rbar (indexed so that
Rbar[i,k,j,l] y_k y_l contracts into the (i,j) slot of the metric block),
the symmetric traceless tensor S of the y_n^2 block, and the scalars D2,
Rnnnn, Wbar2, gamma used by the reduced-energy coefficients.

Index conventions: m = n - 1 spatial slots 0..m-1; the distinguished normal
direction appears only through scalars (Rnnnn, D2) and the power of y_n in
each block.  Rbar symmetries: antisymmetric in (i,k) and (j,l), symmetric
under pair swap (i,k) <-> (j,l), first Bianchi identity, and all single
traces vanish.

The inverse-metric expansion around the point is

    ginv(y) = I + B2(y) + B3(y) + B4(y) + O(|y|^5),
    B2 = (1/3) Rbar[i,k,j,l] y_k y_l + S y_n^2,
    B3 = (1/6) R1[i,k,j,l,mu] y_k y_l y_mu + S1[i,j,k] y_n^2 y_k
         + (1/3) S1n y_n^3,
    B4 = (1/15) sum_s (Rbar y^2)[i,s] (Rbar y^2)[j,s] + trace rider
         + generic low-rank quartic + ((1/2) T4
         + (1/3) Sym_ij(Rbar[i,k,s,l] S[s,j])) y_n^2 y_k y_l
         + (1/3) T3 y_n^3 y + (1/12) (T5 + 8 S.S) y_n^4.

The derivative tensors R1, S1, S1n, T4, T3, T5 and the generic quartic are
not determined by the CurvaturePoint; they are generated synthetically from
a seed.  In "gauge" mode their traces are solved so that
det ginv = 1 + O(|y|^5) (normalized volume element); solving those traces
forces trace(T5) = Rnnnn = -2 ||S||^2, the same identity the curvature
validator enforces.  "free" mode skips the trace solving; "zero" mode drops
all randomness and keeps only the trace-mandated parts.
"""

from __future__ import annotations

import itertools
import json
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InputFormatError

__all__ = [
    "check_dim",
    "CurvaturePoint",
    "IdentityCheck",
    "CurvatureReport",
    "validate_curvature",
    "weyl_part",
    "weyl_norm_consistency",
    "rnnnn_total",
    "generate_sample",
    "make_battery",
    "load_curvature_file",
    "save_curvature_file",
    "MetricExpansion",
    "metric_expansion",
    "eval_metric_inverse",
    "metric_det",
    "metric_divergence",
]

_CHUNK = 8192


def check_dim(n: int, allow_low: bool = False) -> int:
    """Gate on the ambient dimension.

    The coefficient chains implemented here require n >= 11.  With
    allow_low=True dimensions down to 7 are admitted (every shipped moment
    still converges there) with a RuntimeWarning.
    """
    n = int(n)
    if n >= 11:
        return n
    if allow_low and n >= 7:
        warnings.warn(
            f"n={n} is below the regime the coefficient chains are derived in; "
            "results are exploratory", RuntimeWarning, stacklevel=2)
        return n
    raise DomainError(f"dimension n={n} not supported (need n >= 11, or n >= 7 with allow_low)")


def _sym2(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + A.T)


def _traceless(A: np.ndarray) -> np.ndarray:
    m = A.shape[0]
    return A - np.trace(A) / m * np.eye(m)


def _as_readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(np.asarray(a, dtype=float))
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CurvaturePoint:
    """Curvature data of one boundary point."""
    label: str
    n: int
    Rbar: np.ndarray
    S: np.ndarray
    D2: float
    Rnnnn: float
    Wbar2: float
    gamma: float

    def __post_init__(self):
        m = self.n - 1
        Rbar = np.asarray(self.Rbar, dtype=float)
        S = np.asarray(self.S, dtype=float)
        if Rbar.shape != (m, m, m, m):
            raise InputFormatError(
                f"point {self.label!r}: Rbar must have shape {(m, m, m, m)}, got {Rbar.shape}")
        if S.shape != (m, m):
            raise InputFormatError(
                f"point {self.label!r}: S must have shape {(m, m)}, got {S.shape}")
        for name in ("D2", "Rnnnn", "Wbar2", "gamma"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise InputFormatError(f"point {self.label!r}: {name} must be finite, got {v}")
            object.__setattr__(self, name, v)
        if not np.all(np.isfinite(Rbar)) or not np.all(np.isfinite(S)):
            raise InputFormatError(f"point {self.label!r}: tensor entries must be finite")
        object.__setattr__(self, "Rbar", _as_readonly(Rbar))
        object.__setattr__(self, "S", _as_readonly(S))

    @property
    def m(self) -> int:
        return self.n - 1

    def s_norm_sq(self) -> float:
        return float(np.sum(self.S * self.S))


@dataclass(frozen=True)
class IdentityCheck:
    name: str
    violation: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.violation <= self.tol


@dataclass(frozen=True)
class CurvatureReport:
    label: str
    checks: tuple

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self):
        return [c for c in self.checks if not c.passed]


def rnnnn_total(point: CurvaturePoint, rii_convention: str = "summed") -> float:
    """Summed normal-curvature scalar under the chosen storage convention.

    "summed": the stored Rnnnn already sums the spatial index.
    "per_index": the stored value is a per-index average; multiply by m.
    """
    if rii_convention == "summed":
        return point.Rnnnn
    if rii_convention == "per_index":
        return point.Rnnnn * point.m
    raise DomainError(f"unknown rii_convention {rii_convention!r}")


def validate_curvature(point: CurvaturePoint, tol: float = 1e-12,
                       rii_convention: str = "summed") -> CurvatureReport:
    """Check every algebraic identity the data must satisfy.

    Violations are measured relative to the Frobenius norm of the tensors
    involved (or to 1 when everything vanishes), so tol is relative.
    """
    R, S = point.Rbar, point.S
    nR = max(float(np.linalg.norm(R.ravel())), 1e-30)
    nS = max(float(np.linalg.norm(S.ravel())), 1e-30)
    checks = []

    def add(name, violation, scale):
        checks.append(IdentityCheck(name, float(violation) / max(scale, 1e-30), tol))

    add("rbar_antisym_ik", np.linalg.norm((R + R.transpose(1, 0, 2, 3)).ravel()), nR)
    add("rbar_antisym_jl", np.linalg.norm((R + R.transpose(0, 1, 3, 2)).ravel()), nR)
    add("rbar_pair_symmetry", np.linalg.norm((R - R.transpose(2, 3, 0, 1)).ravel()), nR)
    # first Bianchi with slots (i,k,j,l) read as Riemann (a,b,c,d)
    bianchi = R + R.transpose(0, 2, 3, 1) + R.transpose(0, 3, 1, 2)
    add("rbar_first_bianchi", np.linalg.norm(bianchi.ravel()), nR)
    add("rbar_ricci_trace", np.linalg.norm(np.einsum("ikil->kl", R).ravel()), nR)
    add("s_symmetric", np.linalg.norm((S - S.T).ravel()), nS)
    add("s_traceless", abs(np.trace(S)), nS)
    s2 = point.s_norm_sq()
    rn = rnnnn_total(point, rii_convention)
    add("rnnnn_identity", abs(rn + 2.0 * s2), max(abs(rn), 2.0 * s2))
    add("wbar2_nonnegative", max(-point.Wbar2, 0.0), max(abs(point.Wbar2), 1.0))
    return CurvatureReport(label=point.label, checks=tuple(checks))


def _kulkarni_nomizu(h: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Product with curvature symmetries in the (i,k,j,l) slot convention."""
    return (np.einsum("ij,kl->ikjl", h, k) + np.einsum("kl,ij->ikjl", h, k)
            - np.einsum("il,kj->ikjl", h, k) - np.einsum("kj,il->ikjl", h, k))


def weyl_part(T: np.ndarray) -> np.ndarray:
    """Trace-free (Weyl) projection of a curvature-symmetric 4-tensor."""
    m = T.shape[0]
    if m < 4:
        raise DomainError(f"Weyl projection needs slot dimension >= 4, got {m}")
    g = np.eye(m)
    ric = np.einsum("ikil->kl", T)
    scal = float(np.trace(ric))
    E = ric - scal / m * g
    return (T - _kulkarni_nomizu(E, g) / (m - 2.0)
            - scal / (2.0 * m * (m - 1.0)) * _kulkarni_nomizu(g, g))


def weyl_norm_consistency(point: CurvaturePoint) -> float:
    """Relative gap between stored Wbar2 and |weyl_part(Rbar)|^2."""
    w = weyl_part(point.Rbar)
    val = float(np.sum(w * w))
    scale = max(abs(point.Wbar2), abs(val), 1e-30)
    return abs(val - point.Wbar2) / scale


def _random_curvature_tensor(m: int, rng: np.random.Generator, norm: float) -> np.ndarray:
    """Random tensor with all curvature symmetries, zero traces, given norm.

    Sums a few Kulkarni-Nomizu products of random symmetric matrices (these
    carry the full symmetry set including Bianchi), then projects off the
    Ricci part and rescales.
    """
    T = np.zeros((m, m, m, m))
    for _ in range(3):
        h = _sym2(rng.standard_normal((m, m)))
        k = _sym2(rng.standard_normal((m, m)))
        T += _kulkarni_nomizu(h, k)
    W = weyl_part(T)
    cur = float(np.linalg.norm(W.ravel()))
    if cur == 0.0:
        raise DomainError("degenerate random draw produced a zero Weyl tensor")
    return W * (norm / cur)


def generate_sample(n: int, seed: int, scale: float = 1.0,
                    gamma: float | None = None, label: str | None = None) -> CurvaturePoint:
    """Random admissible curvature point (passes validate_curvature).

    Both tensor norms are set to scale exactly, so downstream magnitudes are
    predictable: ||S||^2 = scale^2, Rnnnn = -2 scale^2.
    """
    check_dim(n, allow_low=True)
    m = n - 1
    if not scale > 0:
        raise DomainError(f"scale must be positive, got {scale}")
    rng = np.random.default_rng(seed)
    Rbar = _random_curvature_tensor(m, rng, scale)
    S = _traceless(_sym2(rng.standard_normal((m, m))))
    S *= scale / float(np.linalg.norm(S.ravel()))
    s2 = float(np.sum(S * S))
    W = weyl_part(Rbar)
    return CurvaturePoint(
        label=label if label is not None else f"sample-{seed}",
        n=n,
        Rbar=Rbar,
        S=S,
        D2=float(rng.standard_normal()) * scale ** 2,
        Rnnnn=-2.0 * s2,
        Wbar2=float(np.sum(W * W)),
        gamma=float(gamma) if gamma is not None else float(rng.uniform(0.5, 2.0)),
    )


def make_battery(n: int, count: int, seed: int, scale: float = 1.0) -> list[CurvaturePoint]:
    """Deterministic battery of admissible points, labels battery-00.."""
    if count < 1:
        raise DomainError(f"battery needs count >= 1, got {count}")
    root = np.random.SeedSequence(seed)
    out = []
    for i, child in enumerate(root.spawn(count)):
        sub_seed = int(child.generate_state(1)[0])
        out.append(generate_sample(n, sub_seed, scale=scale, label=f"battery-{i:02d}"))
    return out


# ---------------------------------------------------------------------------
# JSON interchange


_POINT_FIELDS = {"label", "Rbar", "S", "D2", "Rnnnn", "Wbar2", "gamma"}


def load_curvature_file(path) -> tuple[int, list[CurvaturePoint]]:
    """Read {"n": ..., "points": [...]}; unknown fields are rejected."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputFormatError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise InputFormatError(f"{path}: top level must be an object")
    extra = set(data) - {"n", "points"}
    if extra:
        raise InputFormatError(f"{path}: unknown top-level fields {sorted(extra)}")
    if "n" not in data or "points" not in data:
        raise InputFormatError(f"{path}: need fields 'n' and 'points'")
    n = data["n"]
    if not isinstance(n, int) or isinstance(n, bool):
        raise InputFormatError(f"{path}: 'n' must be an integer, got {n!r}")
    if not isinstance(data["points"], list):
        raise InputFormatError(f"{path}: 'points' must be a list")
    points = []
    for idx, rec in enumerate(data["points"]):
        if not isinstance(rec, dict):
            raise InputFormatError(f"{path}: points[{idx}] must be an object")
        extra = set(rec) - _POINT_FIELDS
        if extra:
            raise InputFormatError(f"{path}: points[{idx}] has unknown fields {sorted(extra)}")
        missing = _POINT_FIELDS - set(rec)
        if missing:
            raise InputFormatError(f"{path}: points[{idx}] missing fields {sorted(missing)}")
        try:
            points.append(CurvaturePoint(
                label=str(rec["label"]), n=n,
                Rbar=np.asarray(rec["Rbar"], dtype=float),
                S=np.asarray(rec["S"], dtype=float),
                D2=float(rec["D2"]), Rnnnn=float(rec["Rnnnn"]),
                Wbar2=float(rec["Wbar2"]), gamma=float(rec["gamma"])))
        except (TypeError, ValueError) as exc:
            raise InputFormatError(f"{path}: points[{idx}]: {exc}") from exc
    return n, points


def save_curvature_file(path, n: int, points: list[CurvaturePoint]) -> None:
    data = {"n": int(n), "points": [{
        "label": p.label,
        "Rbar": p.Rbar.tolist(),
        "S": p.S.tolist(),
        "D2": p.D2,
        "Rnnnn": p.Rnnnn,
        "Wbar2": p.Wbar2,
        "gamma": p.gamma,
    } for p in points]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=1)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Metric expansion


def _sym4(T: np.ndarray) -> np.ndarray:
    out = np.zeros_like(T)
    for perm in itertools.permutations(range(4)):
        out += T.transpose(perm)
    return out / 24.0


@dataclass(frozen=True)
class MetricExpansion:
    """Evaluatable block expansion of the inverse boundary metric.

    Dense blocks use slot order (i, j, monomial slots...) except R1 which
    keeps the curvature order (i, k, j, l, mu).  The generic quartic spatial
    part is low-rank: a[i,j] (y.Qy)^2 per entry of lowrank.
    """
    point: CurvaturePoint
    mode: str
    R1: np.ndarray          # (m,m,m,m,m) degree-3 spatial
    S1: np.ndarray          # (m,m,m) y_n^2 y_k block
    S1n: np.ndarray         # (m,m)   y_n^3 block
    T4: np.ndarray          # (m,m,m,m) y_n^2 y^2 second-derivative part
    T3: np.ndarray          # (m,m,m) y_n^3 y block
    T5: np.ndarray          # (m,m)   y_n^4 second-derivative part
    Ncorr: np.ndarray       # (m,m,m,m) trace rider on delta_ij, quartic in y
    lowrank: tuple          # tuples (a, Q) adding a[i,j] (y.Qy)^2

    @property
    def m(self) -> int:
        return self.point.m


def _gauge_T4(m: int, X: np.ndarray, D2: float) -> np.ndarray:
    """Impose sym(ij), sym(kl), zero ij-trace per (kl), full contraction D2."""
    X = 0.5 * (X + X.transpose(1, 0, 2, 3))
    X = 0.5 * (X + X.transpose(0, 1, 3, 2))
    tr = np.einsum("iikl->kl", X)
    X = X - np.einsum("ij,kl->ijkl", np.eye(m) / m, tr)
    eye = np.eye(m)
    # E: zero ij-trace per (kl), full contraction (m^2+m)/2 - 1
    E = 0.5 * (np.einsum("ik,jl->ijkl", eye, eye) + np.einsum("il,jk->ijkl", eye, eye)) \
        - np.einsum("ij,kl->ijkl", eye, eye) / m
    cur = float(np.einsum("ijij->", X))
    return X + (D2 - cur) / ((m * m + m) / 2.0 - 1.0) * E


def metric_expansion(point: CurvaturePoint, seed: int = 0, mode: str = "gauge",
                     rii_convention: str = "summed",
                     deg3_scale: float = 1.0) -> MetricExpansion:
    """Build the degree-<=4 inverse-metric expansion at a curvature point.

    deg3_scale multiplies the synthetic degree-3 blocks (third jet of the
    metric, unconstrained by the curvature data).  The default keeps them
    at unit tensor norm; slope experiments raise it so the cubic term is
    visible against the determined quartic content.
    """
    if mode not in ("gauge", "free", "zero"):
        raise DomainError(f"unknown metric expansion mode {mode!r}")
    m = point.m
    R = point.Rbar
    rng = np.random.default_rng(seed)

    if mode == "zero":
        R1 = np.zeros((m, m, m, m, m))
        S1 = np.zeros((m, m, m))
        S1n = np.zeros((m, m))
        T4raw = np.zeros((m, m, m, m))
        T3 = np.zeros((m, m, m))
        T5raw = np.zeros((m, m))
        lowrank = ()
    else:
        R1 = deg3_scale * np.stack(
            [_random_curvature_tensor(m, rng, 1.0) for _ in range(m)], axis=-1)
        S1 = deg3_scale * np.stack(
            [_sym2(rng.standard_normal((m, m))) for _ in range(m)], axis=-1)
        S1n = deg3_scale * _sym2(rng.standard_normal((m, m)))
        T4raw = rng.standard_normal((m, m, m, m))
        T3 = np.stack([_sym2(rng.standard_normal((m, m))) for _ in range(m)], axis=-1)
        T5raw = _sym2(rng.standard_normal((m, m)))
        a1 = _sym2(rng.standard_normal((m, m)))
        Q1 = _sym2(rng.standard_normal((m, m)))
        lowrank = ((a1 / m, Q1 / m),)

    if mode in ("gauge", "zero"):
        S1 = S1 - np.einsum("ij,k->ijk", np.eye(m) / m, np.einsum("iik->k", S1))
        S1n = _traceless(S1n)
        T4 = _gauge_T4(m, T4raw, point.D2)
        T3 = T3 - np.einsum("ij,k->ijk", np.eye(m) / m, np.einsum("iik->k", T3))
        rn = rnnnn_total(point, rii_convention)
        T5 = T5raw + (rn - np.trace(T5raw)) / m * np.eye(m)
        lowrank = tuple((_traceless(a), Q) for a, Q in lowrank)
    else:
        X = 0.5 * (T4raw + T4raw.transpose(1, 0, 2, 3))
        X = 0.5 * (X + X.transpose(0, 1, 3, 2))
        cur = float(np.einsum("ijij->", X))
        T4 = X * (point.D2 / cur if cur != 0 else 1.0)
        T5 = T5raw

    if mode == "free":
        Ncorr = np.zeros((m, m, m, m))
    else:
        # trace rider: tr_ij B4_spatial(y) must match the quartic-spatial
        # part of (1/2) tr(B2(y)^2), i.e. (1/18) tr((Rbar y^2)^2)
        needed = np.einsum("ikjl,jmip->klmp", R, R) / 18.0
        quad_tr = np.einsum("iksl,imsp->klmp", R, R) / 15.0
        low_tr = sum(float(np.trace(a)) * np.einsum("kl,mp->klmp", Q, Q)
                     for a, Q in lowrank) if lowrank else 0.0
        Ncorr = _sym4(needed - quad_tr - low_tr)
    return MetricExpansion(point=point, mode=mode, R1=R1, S1=S1, S1n=S1n,
                           T4=T4, T3=T3, T5=T5, Ncorr=Ncorr, lowrank=lowrank)


def _batch(t, z, m):
    t = np.atleast_1d(np.asarray(t, dtype=float))
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    if single:
        z = z[None, :]
    if z.shape[-1] != m:
        raise DomainError(f"z must have trailing dimension {m}, got {z.shape}")
    if t.shape[0] != z.shape[0]:
        t = np.broadcast_to(t, (z.shape[0],))
    return t, z, single


def _mixed_quartic_block(me: MetricExpansion) -> np.ndarray:
    """Coefficient of y_n^2 y_k y_l: (1/2) T4 + (1/3) Sym_ij(Rbar . S),
    symmetrized over the monomial slots (k,l)."""
    R, S = me.point.Rbar, me.point.S
    rs = np.einsum("iksl,sj->ijkl", R, S)
    rs = 0.5 * (rs + rs.transpose(1, 0, 2, 3))
    K = me.T4 / 2.0 + rs / 3.0
    return 0.5 * (K + K.transpose(0, 1, 3, 2))


def _deg3_spatial(R1: np.ndarray, z: np.ndarray) -> np.ndarray:
    """(1/6) R1[i,k,j,l,mu] z_k z_l z_mu, batched with bounded memory."""
    m = R1.shape[0]
    B = z.shape[0]
    # group ((i,j), k, (l,mu)) for a BLAS-friendly contraction
    R1r = np.ascontiguousarray(R1.transpose(0, 2, 1, 3, 4)).reshape(m * m, m, m * m)
    out = np.empty((B, m, m))
    for s in range(0, B, _CHUNK):
        zz = z[s:s + _CHUNK]
        v2 = (zz[:, :, None] * zz[:, None, :]).reshape(len(zz), m * m)
        T = np.tensordot(v2, R1r, axes=([1], [2]))          # (b, (ij), k)
        out[s:s + _CHUNK] = np.einsum("bqk,bk->bq", T, zz).reshape(len(zz), m, m)
    return out / 6.0


def eval_metric_inverse(me: MetricExpansion, t, z, through_degree: int = 4,
                        check_pd: bool = False) -> np.ndarray:
    """Spatial block of the inverse metric at y = (z, t), shape (..., m, m).

    The normal row/column is exactly (0, ..., 0, 1) in this gauge and is not
    returned.  With check_pd, raises DomainError if any evaluated matrix is
    not positive definite with margin 1e-8.
    """
    m = me.m
    t, z, single = _batch(t, z, m)
    R, S = me.point.Rbar, me.point.S
    B = z.shape[0]
    out = np.broadcast_to(np.eye(m), (B, m, m)).copy()
    t2 = (t * t)[:, None, None]
    if through_degree >= 2:
        P = np.einsum("ikjl,bk->bijl", R, z, optimize=True) if B <= _CHUNK else None
        if P is not None:
            out += np.einsum("bijl,bl->bij", P, z) / 3.0
        else:
            for s in range(0, B, _CHUNK):
                zz = z[s:s + _CHUNK]
                out[s:s + _CHUNK] += np.einsum("ikjl,bk,bl->bij", R, zz, zz,
                                               optimize=True) / 3.0
        out += S[None] * t2
    if through_degree >= 3:
        if me.R1.any():
            out += _deg3_spatial(me.R1, z)
        if me.S1.any():
            out += np.einsum("ijk,bk->bij", me.S1, z) * t2
        if me.S1n.any():
            out += me.S1n[None] * (t ** 3)[:, None, None] / 3.0
    if through_degree >= 4:
        for s in range(0, B, _CHUNK):
            zz = z[s:s + _CHUNK]
            Pq = np.einsum("iksl,bk,bl->bis", R, zz, zz, optimize=True)
            out[s:s + _CHUNK] += np.einsum("bis,bjs->bij", Pq, Pq) / 15.0
            nc = np.einsum("klmp,bk,bl,bm,bp->b", me.Ncorr, zz, zz, zz, zz, optimize=True)
            out[s:s + _CHUNK] += (nc / m)[:, None, None] * np.eye(m)[None]
        for a, Q in me.lowrank:
            q = np.einsum("kl,bk,bl->b", Q, z, z)
            out += a[None] * (q * q)[:, None, None]
        K = _mixed_quartic_block(me)
        out += np.einsum("ijkl,bk,bl->bij", K, z, z, optimize=True) * t2
        if me.T3.any():
            out += np.einsum("ijk,bk->bij", me.T3, z) * (t ** 3)[:, None, None] / 3.0
        out += (me.T5[None] + 8.0 * (S @ S)[None]) * (t ** 4)[:, None, None] / 12.0
    if check_pd:
        mineig = float(np.min(np.linalg.eigvalsh(out)))
        if mineig < 1e-8:
            raise DomainError(
                f"inverse metric not positive definite (min eigenvalue {mineig:.3e})")
    return out[0] if single else out


def metric_det(me: MetricExpansion, t, z, through_degree: int = 4) -> np.ndarray:
    """det of the full inverse metric (the normal block contributes 1)."""
    g = eval_metric_inverse(me, t, z, through_degree=through_degree)
    return np.linalg.det(g)


def metric_divergence(me: MetricExpansion, t, z) -> np.ndarray:
    """sum_i d(ginv[i,j])/d y_i, shape (..., m).

    Drives the first-order term of the Laplace-Beltrami operator.  The
    normal-direction block of ginv is constant in this gauge, so only
    spatial derivatives contribute.
    """
    m = me.m
    t, z, single = _batch(t, z, m)
    R, S = me.point.Rbar, me.point.S
    t2 = (t * t)[:, None]
    t3 = (t ** 3)[:, None]
    # degree 2: both contractions are traces of Rbar (vanish for admissible
    # data; kept numerical so nothing is assumed)
    c_a = np.einsum("iijl->jl", R) / 3.0
    c_b = np.einsum("ikji->jk", R) / 3.0
    out = np.einsum("jl,bl->bj", c_a + c_b, z)
    # degree 3 spatial: derivative hits the three monomial slots of R1
    if me.R1.any():
        d1 = np.einsum("iijlm->jlm", me.R1)
        d2 = np.einsum("ikjim->jkm", me.R1)
        d3 = np.einsum("ikjli->jkl", me.R1)
        out += (np.einsum("jlm,bl,bm->bj", d1, z, z, optimize=True)
                + np.einsum("jkm,bk,bm->bj", d2, z, z, optimize=True)
                + np.einsum("jkl,bk,bl->bj", d3, z, z, optimize=True)) / 6.0
    if me.S1.any():
        out += np.einsum("iji->j", me.S1)[None, :] * t2
    # degree 4 spatial: the four slot-contractions of the (1/15) product;
    # two vanish by antisymmetry / Ricci-flatness but are kept numerical
    c1 = np.einsum("iisl,jmsp->jlmp", R, R)
    c2 = np.einsum("iksi,jmsp->jkmp", R, R)
    c3 = np.einsum("iksl,jisp->jklp", R, R)
    c4 = np.einsum("iksl,jmsi->jklm", R, R)
    quad_div = (c1 + c2 + c3 + c4) / 15.0
    out += np.einsum("jklp,bk,bl,bp->bj", quad_div, z, z, z, optimize=True)
    if me.Ncorr.any():
        out += 4.0 / m * np.einsum("jlmp,bl,bm,bp->bj", me.Ncorr, z, z, z, optimize=True)
    for a, Q in me.lowrank:
        q = np.einsum("kl,bk,bl->b", Q, z, z)
        out += 4.0 * q[:, None] * np.einsum("ij,bi->bj", a, z @ Q)
    K = _mixed_quartic_block(me)
    out += 2.0 * np.einsum("ijil,bl->bj", K, z) * t2
    if me.T3.any():
        out += np.einsum("iji->j", me.T3)[None, :] * t3 / 3.0
    return out[0] if single else out
