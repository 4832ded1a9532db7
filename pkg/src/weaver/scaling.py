"""Test-time scaling curves: coverage and Selection@1 as functions of K.

Two bounded forms are fitted::

    coverage_power:  floor + (ceil - floor) * exp(-zeta * K**-alpha)
    selection_full:  floor + (ceil - floor) * exp(-zeta * K**-alpha)
                         * (1 - (1 - pi_eff) ** (K**gamma))

Fits minimize the mean Huber loss with L-BFGS-B from several seeded starts
for each Huber threshold in ``DELTA_GRID``; the threshold whose best fit has
the lowest MSE is kept.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import betaln

from .errors import FitError

__all__ = [
    "DELTA_GRID",
    "BOUNDS",
    "CurvePoint",
    "ScalingFit",
    "huber",
    "beta_passk_closed_form",
    "predict",
    "fit_coverage_power",
    "fit_selection_curve",
    "holdout_split",
    "prediction_mse",
    "read_curve_csv",
    "write_curve_csv",
]

DELTA_GRID = (0.01, 0.05, 0.1, 0.25, 0.5)
N_STARTS = 8
# box constraints; ceil is parameterized as floor + span * (1 - floor)
BOUNDS = {
    "floor": (0.0, 1.0),
    "span": (0.0, 1.0),
    "zeta": (0.0, 10.0),
    "alpha": (0.0, 3.0),
    "pi_eff": (0.0, 1.0),
    "gamma": (0.0, 2.5),
}
FORMS = ("coverage_power", "selection_full")


@dataclass(frozen=True)
class CurvePoint:
    k: int
    value: float
    stderr: float | None = None

    def __post_init__(self):
        if self.k < 1:
            raise FitError(f"K must be >= 1, got {self.k}")


@dataclass(frozen=True)
class ScalingFit:
    floor: float
    ceil: float
    zeta: float
    alpha: float
    pi_eff: float = 1.0
    gamma: float = 0.0
    delta: float = float("nan")
    r2: float = float("nan")
    mse: float = float("nan")
    form: str = "selection_full"
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        if self.form not in FORMS:
            raise FitError(f"unknown curve form {self.form!r}")
        if self.floor > self.ceil:
            raise FitError("floor must not exceed ceil")

    def to_dict(self) -> dict:
        doc = {
            "form": self.form,
            "floor": self.floor,
            "ceil": self.ceil,
            "zeta": self.zeta,
            "alpha": self.alpha,
            "pi_eff": self.pi_eff if self.form == "selection_full" else None,
            "gamma": self.gamma if self.form == "selection_full" else None,
            "delta": self.delta,
            "r2": None if np.isnan(self.r2) else self.r2,
            "mse": self.mse,
            "flags": list(self.flags),
        }
        return doc


def huber(r, delta: float):
    """Quadratic for ``|r| <= delta``, linear beyond; C1 at the knee."""
    if delta <= 0:
        raise FitError("delta must be positive")
    a = np.abs(r)
    out = np.where(a <= delta, 0.5 * a**2, delta * (a - 0.5 * delta))
    return out if np.ndim(out) else float(out)


def _huber_grad(r, delta):
    return np.clip(r, -delta, delta)


def beta_passk_closed_form(a: float, b: float, k: int) -> float:
    """Expected coverage ``1 - B(a, b + k) / B(a, b)`` for Beta(a, b) difficulty."""
    if a <= 0 or b <= 0:
        raise FitError("Beta shape parameters must be positive")
    ratio = np.exp(betaln(a, b + k) - betaln(a, b))
    return float(np.clip(1.0 - ratio, 0.0, 1.0))


def _components(x: np.ndarray, K: np.ndarray, form: str):
    floor, span, zeta, alpha = x[:4]
    width = span * (1.0 - floor)
    kpow = K ** (-alpha)
    cov = np.exp(-zeta * kpow)
    if form == "selection_full":
        pi_eff, gamma = x[4], x[5]
        kg = K**gamma
        q = 1.0 - pi_eff
        tail = q**kg
        ver = 1.0 - tail
    else:
        kg = q = tail = None
        ver = np.ones_like(K)
    pred = floor + width * cov * ver
    return pred, (floor, span, zeta, alpha, width, kpow, cov, kg, q, tail, ver)


def _model(x: np.ndarray, K: np.ndarray, form: str) -> np.ndarray:
    return _components(x, K, form)[0]


def _jacobian(x: np.ndarray, K: np.ndarray, form: str) -> np.ndarray:
    pred, (floor, span, zeta, alpha, width, kpow, cov, kg, q, tail, ver) = _components(x, K, form)
    lnk = np.log(K)
    cols = [
        1.0 - span * cov * ver,          # d/dfloor
        (1.0 - floor) * cov * ver,       # d/dspan
        -width * kpow * cov * ver,       # d/dzeta
        width * zeta * kpow * lnk * cov * ver,  # d/dalpha
    ]
    if form == "selection_full":
        with np.errstate(divide="ignore", invalid="ignore"):
            d_pi = np.where(kg == 1.0, 1.0, kg * q ** (kg - 1.0))
            d_gamma = np.where(q > 0.0, -tail * np.log(np.where(q > 0, q, 1.0)) * kg * lnk, 0.0)
        cols.append(width * cov * d_pi)
        cols.append(width * cov * d_gamma)
    return np.stack(cols, axis=1)


def _to_params(x: np.ndarray, form: str, **extra) -> ScalingFit:
    floor, span = float(x[0]), float(x[1])
    ceil = floor + span * (1.0 - floor)
    kw = dict(floor=floor, ceil=min(ceil, 1.0), zeta=float(x[2]), alpha=float(x[3]), form=form)
    if form == "selection_full":
        kw.update(pi_eff=float(x[4]), gamma=float(x[5]))
    kw.update(extra)
    return ScalingFit(**kw)


def _to_vector(fit: ScalingFit) -> np.ndarray:
    span = 0.0 if fit.floor >= 1.0 else (fit.ceil - fit.floor) / (1.0 - fit.floor)
    x = [fit.floor, span, fit.zeta, fit.alpha]
    if fit.form == "selection_full":
        x += [fit.pi_eff, fit.gamma]
    return np.array(x, dtype=float)


def predict(fit: ScalingFit, k):
    """Evaluate the fitted curve at ``k`` (scalar or array)."""
    K = np.asarray(k, dtype=float)
    out = _model(_to_vector(fit), np.atleast_1d(K), fit.form)
    return float(out[0]) if K.ndim == 0 else out.reshape(K.shape)


def _series(points) -> tuple[np.ndarray, np.ndarray]:
    pts = list(points)
    K = np.array([p.k if isinstance(p, CurvePoint) else p[0] for p in pts], dtype=float)
    v = np.array([p.value if isinstance(p, CurvePoint) else p[1] for p in pts], dtype=float)
    if np.any(np.diff(K) <= 0):
        raise FitError("K values must be strictly increasing")
    return K, v


def _fit(points, form: str, min_points: int, seed: int, deltas, n_starts: int) -> ScalingFit:
    K, v = _series(points)
    if K.size < min_points:
        raise FitError(f"need at least {min_points} points, got {K.size}")
    names = ["floor", "span", "zeta", "alpha"] + (["pi_eff", "gamma"] if form == "selection_full" else [])
    bounds = [BOUNDS[n] for n in names]
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    rng = np.random.default_rng(seed)
    starts = [lo + rng.random(lo.size) * (hi - lo) for _ in range(n_starts)]
    heuristic = np.array([max(v.min() - 0.05, 0.0), 1.0, 1.0, 0.5, 0.5, 1.0][: lo.size])
    starts.append(np.clip(heuristic, lo, hi))

    best = None
    for delta in deltas:
        def objective(x, delta=delta):
            r = _model(x, K, form) - v
            loss = float(np.mean(huber(r, delta)))
            grad = _jacobian(x, K, form).T @ _huber_grad(r, delta) / K.size
            return loss, grad

        best_delta = None
        for x0 in starts:
            res = minimize(
                objective, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                options={"maxiter": 5000, "ftol": 1e-15, "gtol": 1e-12},
            )
            if not np.all(np.isfinite(res.x)) or not np.isfinite(res.fun):
                continue
            if best_delta is None or res.fun < best_delta[0]:
                best_delta = (res.fun, res.x)
        if best_delta is None:
            continue
        x = best_delta[1]
        mse = float(np.mean((_model(x, K, form) - v) ** 2))
        if best is None or mse < best[0]:
            best = (mse, delta, x)
    if best is None:
        raise FitError("optimizer failed from every start")
    mse, delta, x = best
    ss_tot = float(np.sum((v - v.mean()) ** 2))
    flags = ()
    if ss_tot == 0.0:
        r2 = float("nan")
        flags = ("constant_series",)
    else:
        r2 = 1.0 - mse * K.size / ss_tot
    return _to_params(x, form, delta=delta, r2=r2, mse=mse, flags=flags)


def fit_coverage_power(
    points: Sequence[CurvePoint], seed: int = 0, deltas=DELTA_GRID, n_starts: int = N_STARTS
) -> ScalingFit:
    """Fit the saturating power-law coverage form (floor, ceil, zeta, alpha)."""
    return _fit(points, "coverage_power", 4, seed, deltas, n_starts)


def fit_selection_curve(
    points: Sequence[CurvePoint], seed: int = 0, deltas=DELTA_GRID, n_starts: int = N_STARTS
) -> ScalingFit:
    """Fit the bounded Selection@1 form (coverage term times verification term)."""
    return _fit(points, "selection_full", 6, seed, deltas, n_starts)


def holdout_split(points: Sequence[CurvePoint], fraction: float = 0.9):
    """First ``ceil(fraction * n)`` points (smallest K) for fitting, the rest held out."""
    pts = list(points)
    cut = int(np.ceil(fraction * len(pts) - 1e-9))
    cut = min(max(cut, 1), len(pts) - 1)
    return pts[:cut], pts[cut:]


def prediction_mse(fit: ScalingFit, points: Sequence[CurvePoint]) -> float:
    K, v = _series(points)
    return float(np.mean((predict(fit, K) - v) ** 2))


def read_curve_csv(path: str | Path) -> list[CurvePoint]:
    """Read a ``k,value[,stderr]`` CSV into curve points."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or not {"k", "value"} <= set(reader.fieldnames):
            raise FitError("curve CSV needs 'k' and 'value' columns")
        for row in reader:
            se = row.get("stderr")
            out.append(CurvePoint(int(row["k"]), float(row["value"]),
                                  float(se) if se not in (None, "") else None))
    return out


def write_curve_csv(points: Sequence[CurvePoint], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "value", "stderr"])
        for p in points:
            w.writerow([p.k, repr(float(p.value)), "" if p.stderr is None else repr(p.stderr)])
