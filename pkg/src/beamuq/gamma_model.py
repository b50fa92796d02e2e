"""Univariate Gamma distribution for the homogeneous Young's modulus model.

Shape/scale parameterization: mean = alpha*beta, variance = alpha*beta^2.
The CDF is the regularized lower incomplete gamma function, evaluated by a
power series for small arguments and a continued fraction otherwise; the
quantile is obtained by a bracketed, Newton-accelerated root solve seeded
with the Wilson-Hilferty approximation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_EPS = np.finfo(float).eps
_MAX_ITER = 600


@dataclass(frozen=True)
class GammaParams:
    """Shape (dimensionless) and scale (Pa) of a Gamma distribution."""

    alpha: float
    beta: float
    label: str = ""

    def __post_init__(self):
        if not (self.alpha > 0.0 and math.isfinite(self.alpha)):
            raise ValueError(f"alpha must be positive and finite, got {self.alpha}")
        if not (self.beta > 0.0 and math.isfinite(self.beta)):
            raise ValueError(f"beta must be positive and finite, got {self.beta}")

    def mean(self) -> float:
        return self.alpha * self.beta

    def variance(self) -> float:
        return self.alpha * self.beta ** 2

    def std(self) -> float:
        return math.sqrt(self.variance())


#: Material presets selectable by name in run configs.
MATERIAL_PRESETS = {
    "concrete": GammaParams(alpha=7.1633, beta=4.1880e9, label="concrete"),
    "steel": GammaParams(alpha=934.2, beta=0.214e9, label="steel"),
}


def material_preset(name: str) -> GammaParams:
    try:
        return MATERIAL_PRESETS[name]
    except KeyError:
        raise KeyError(
            f"unknown material preset {name!r}; available: {sorted(MATERIAL_PRESETS)}"
        ) from None


def _check_domain(x, name="x"):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} must be finite")
    if np.any(x < 0.0):
        raise ValueError(f"{name} must be non-negative")
    return x


def _reg_lower_incomplete_series(a: float, x: np.ndarray) -> np.ndarray:
    """P(a, x) by power series, valid for x < a + 1.

    The iteration runs on a shrinking active set: converged entries are
    scattered out so stragglers do not drag full-array work along.
    """
    out = np.zeros_like(x)
    idx = np.nonzero(x > 0.0)[0]
    if idx.size == 0:
        return out
    xs = x[idx]
    ap = np.full(idx.size, a)
    term = np.full(idx.size, 1.0 / a)
    total = term.copy()
    for _ in range(_MAX_ITER):
        ap += 1.0
        term = term * xs / ap
        total += term
        done = term < np.abs(total) * _EPS
        if done.any():
            sel = idx[done]
            out[sel] = total[done] * np.exp(
                -xs[done] + a * np.log(xs[done]) - math.lgamma(a))
            keep = ~done
            if not keep.any():
                return out
            idx, xs, ap = idx[keep], xs[keep], ap[keep]
            term, total = term[keep], total[keep]
    raise RuntimeError("incomplete gamma series did not converge")


def _reg_upper_incomplete_cf(a: float, x: np.ndarray) -> np.ndarray:
    """Q(a, x) by modified Lentz continued fraction, valid for x >= a + 1."""
    tiny = 1e-300
    out = np.empty_like(x)
    idx = np.arange(x.size)
    xs = x
    b = xs + 1.0 - a
    c = np.full_like(xs, 1.0 / tiny)
    d = 1.0 / np.where(np.abs(b) < tiny, tiny, b)
    h = d.copy()
    for i in range(1, _MAX_ITER + 1):
        an = -i * (i - a)
        b = b + 2.0
        d = an * d + b
        np.copyto(d, tiny, where=np.abs(d) < tiny)
        c = b + an / c
        np.copyto(c, tiny, where=np.abs(c) < tiny)
        d = 1.0 / d
        delta = d * c
        h = h * delta
        done = np.abs(delta - 1.0) < _EPS
        if done.any():
            sel = idx[done]
            out[sel] = np.exp(-xs[done] + a * np.log(xs[done]) - math.lgamma(a)) * h[done]
            keep = ~done
            if not keep.any():
                return out
            idx, xs = idx[keep], xs[keep]
            b, c, d, h = b[keep], c[keep], d[keep], h[keep]
    raise RuntimeError("incomplete gamma continued fraction did not converge")


def reg_lower_incomplete(a: float, x) -> np.ndarray | float:
    """Regularized lower incomplete gamma function P(a, x), vectorized in x."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    out = np.empty_like(x)
    small = x < a + 1.0
    if np.any(small):
        out[small] = _reg_lower_incomplete_series(a, x[small])
    if np.any(~small):
        out[~small] = 1.0 - _reg_upper_incomplete_cf(a, x[~small])
    out = np.clip(out, 0.0, 1.0)
    return float(out[0]) if scalar else out


def gamma_pdf(x, p: GammaParams):
    """Density of the Gamma(alpha, beta) distribution at x >= 0 (units 1/Pa)."""
    x = _check_domain(x)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    out = np.zeros_like(x)
    pos = x > 0.0
    xs = x[pos]
    log_pdf = (
        (p.alpha - 1.0) * np.log(xs)
        - xs / p.beta
        - p.alpha * math.log(p.beta)
        - math.lgamma(p.alpha)
    )
    out[pos] = np.exp(log_pdf)
    if p.alpha == 1.0:
        out[~pos] = 1.0 / p.beta
    return float(out[0]) if scalar else out


def gamma_cdf(x, p: GammaParams):
    """Cumulative distribution P(alpha, x / beta); monotone, cdf(0) = 0."""
    x = _check_domain(x)
    return reg_lower_incomplete(p.alpha, x / p.beta)


def _wilson_hilferty_guess(u: np.ndarray, p: GammaParams) -> np.ndarray:
    # Cube of a shifted normal quantile; excellent for alpha of a few and up.
    from .random_field import standard_normal_quantile

    z = standard_normal_quantile(u)
    a = p.alpha
    g = a * (1.0 - 1.0 / (9.0 * a) + z / (3.0 * math.sqrt(a))) ** 3
    return np.maximum(g, 1e-8 * a) * p.beta


def _log_pdf_pos(x: np.ndarray, p: GammaParams) -> np.ndarray:
    return ((p.alpha - 1.0) * np.log(x) - x / p.beta
            - p.alpha * math.log(p.beta) - math.lgamma(p.alpha))


def gamma_inverse_cdf(u, p: GammaParams, rel_tol: float = 1e-11):
    """Quantile function: x with gamma_cdf(x, p) == u, strictly increasing in u.

    Root solve on the regularized incomplete gamma seeded with the Wilson-
    Hilferty approximation: Newton steps safeguarded by a bracket that the
    iteration itself tightens (bisection fallback whenever a step escapes).
    Operates on a shrinking active set, so a handful of CDF evaluations
    serves the whole input array.
    """
    u = np.asarray(u, dtype=float)
    scalar = u.ndim == 0
    u = np.atleast_1d(u).astype(float)
    if not np.all(np.isfinite(u)) or np.any(u <= 0.0) or np.any(u >= 1.0):
        raise ValueError("u must lie strictly inside (0, 1)")

    x = _wilson_hilferty_guess(u, p)
    lo = np.zeros_like(x)
    hi = np.full_like(x, np.inf)
    idx = np.arange(x.size)
    for _ in range(200):
        xa = x[idx]
        err = reg_lower_incomplete(p.alpha, xa / p.beta) - u[idx]
        below = err < 0.0
        lo[idx[below]] = xa[below]
        hi[idx[~below]] = xa[~below]
        dens = np.exp(_log_pdf_pos(xa, p))
        with np.errstate(divide="ignore", invalid="ignore"):
            x_new = xa - err / dens
        # Bisect (or double while unbounded) when Newton leaves the bracket.
        bad = ~np.isfinite(x_new) | (x_new <= lo[idx]) | (x_new >= hi[idx])
        if bad.any():
            mid = np.where(np.isinf(hi[idx]), 2.0 * xa, 0.5 * (lo[idx] + hi[idx]))
            x_new = np.where(bad, mid, x_new)
        exact = err == 0.0
        x_new = np.where(exact, xa, x_new)
        done = (np.abs(x_new - xa) <= rel_tol * x_new) | exact
        x[idx] = x_new
        idx = idx[~done]
        if idx.size == 0:
            break
    else:
        raise RuntimeError("gamma quantile iteration did not converge")
    return float(x[0]) if scalar else x


def sample_homogeneous(p: GammaParams, u) -> float | np.ndarray:
    """Deterministic Gamma draw from a uniform(0,1) variate via the quantile."""
    return gamma_inverse_cdf(u, p)
