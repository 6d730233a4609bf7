"""Certified-watermark conditions and the certified-region geometry.

The generic criterion compares the optimal type-II error of the
Neyman-Pearson test (null: noise shifted by the trigger residuals;
alternative: plain noise) at significance 1 - W against the calibration
threshold. Gaussian and uniform smoothing admit closed forms:

* Gaussian, per-coordinate scale sigma:
  ``beta2* = Phi(Phi^-1(W) - sqrt(sum_k ||r_k||^2) / sigma)``, and the
  single-radius condition ``W > Phi(R / sigma) + threshold``;
* Uniform on [e, h]: with ``b0 = 1 - prod_k (1 - |r_k| / (h - e))_+``,
  ``beta2* = W - b0`` when W >= b0 and 0 otherwise, giving the condition
  ``W > threshold + 1 - prod_k (1 - R / (h - e))_+``.

All certification inequalities are strict. For several representatives the
single-radius Gaussian form (with R the max residual norm) and the joint
beta2* form (root-sum-square residuals) genuinely differ; both are exposed
and reports carry both rather than resolving the discrepancy.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError
from .numerics import std_normal_cdf, std_normal_quantile


def gaussian_condition(W: float, R: float, sigma: float, threshold: float) -> bool:
    """Strict single-radius condition under Gaussian smoothing:
    ``W > Phi(R / sigma) + threshold``."""
    sigma = float(sigma)
    R = float(R)
    if sigma <= 0.0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    if R < 0.0:
        raise DomainError(f"radius must be >= 0, got {R}")
    return float(W) > std_normal_cdf(R / sigma) + float(threshold)


@dataclass(frozen=True)
class CertifiedRadius:
    """Largest certifiable radius; ``radius=None`` when no positive radius
    exists, ``unbounded=True`` when every radius is certifiable."""

    radius: float | None
    unbounded: bool = False

    @property
    def exists(self) -> bool:
        return self.unbounded or self.radius is not None


def gaussian_certified_radius(W: float, sigma: float,
                              threshold: float) -> CertifiedRadius:
    """Invert the Gaussian condition in R.

    With g = W - threshold: no positive radius when g <= 1/2 (the bound
    already starts at 1/2 + threshold at R = 0), R* = sigma * Phi^-1(g)
    when g in (1/2, 1), and unbounded when g >= 1.
    """
    sigma = float(sigma)
    if sigma <= 0.0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    gap = float(W) - float(threshold)
    if gap <= 0.5:
        return CertifiedRadius(None)
    if gap >= 1.0:
        return CertifiedRadius(None, unbounded=True)
    return CertifiedRadius(sigma * std_normal_quantile(gap))


def uniform_condition(W: float, R: float, e: float, h: float, K: int,
                      threshold: float) -> bool:
    """Strict condition under uniform smoothing on [e, h] with K samples:
    ``W > threshold + 1 - (1 - R / (h - e))_+ ^ K``."""
    e, h = float(e), float(h)
    if not e < h:
        raise DomainError(f"uniform bounds require e < h, got ({e}, {h})")
    R = float(R)
    if R < 0.0:
        raise DomainError(f"radius must be >= 0, got {R}")
    K = int(K)
    if K < 1:
        raise DomainError(f"need K >= 1 samples, got {K}")
    factor = max(0.0, 1.0 - R / (h - e))
    return float(W) > float(threshold) + 1.0 - factor ** K


def beta2_star_gaussian(W: float, r_norms, sigma: float) -> float:
    """Optimal type-II error at significance 1 - W for a Gaussian shift.

    Degenerate endpoints are enumerated explicitly: W = 0 gives 0 and
    W = 1 gives 1 (no randomness left in the optimal test).
    """
    sigma = float(sigma)
    if sigma <= 0.0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    r_norms = np.asarray(r_norms, dtype=np.float64).ravel()
    if (r_norms < 0.0).any() or not np.isfinite(r_norms).all():
        raise DomainError("residual norms must be finite and >= 0")
    W = float(W)
    if not 0.0 <= W <= 1.0:
        raise DomainError(f"W must lie in [0, 1], got {W}")
    if W == 0.0:
        return 0.0
    if W == 1.0:
        return 1.0
    shift = math.sqrt(float(np.sum(r_norms ** 2))) / sigma
    return std_normal_cdf(std_normal_quantile(W) - shift)


def beta2_star_uniform(W: float, r_mags, e: float, h: float) -> float:
    """Optimal type-II error under uniform smoothing on [e, h].

    With overlap defect ``b0 = 1 - prod_k (1 - |r_k| / (h - e))_+`` the
    value is W - b0 when W >= b0 (the necessary condition for a nonzero
    test) and 0 otherwise.
    """
    e, h = float(e), float(h)
    if not e < h:
        raise DomainError(f"uniform bounds require e < h, got ({e}, {h})")
    r_mags = np.asarray(r_mags, dtype=np.float64).ravel()
    if not np.isfinite(r_mags).all():
        raise DomainError("residual magnitudes must be finite")
    W = float(W)
    if not 0.0 <= W <= 1.0:
        raise DomainError(f"W must lie in [0, 1], got {W}")
    width = h - e
    overlap = np.maximum(0.0, 1.0 - np.abs(r_mags) / width)
    b0 = 1.0 - float(np.prod(overlap))
    if W < b0:
        return 0.0
    return W - b0


def generic_condition(beta2_star: float, threshold: float) -> bool:
    """Strict generic criterion: the optimal type-II error exceeds the
    calibration threshold."""
    return float(beta2_star) > float(threshold)


def tau_certified(W: float, S: float, threshold: float) -> bool:
    """Strict joint criterion on both statistics: ``min(W, S) > threshold``."""
    return min(float(W), float(S)) > float(threshold)


@dataclass(frozen=True)
class CertifiedRegion:
    """Grid evaluation of the Gaussian condition over an (R, W) rectangle.

    ``certified[i, j]`` flags the point (r_values[i], w_values[j]); ``area``
    is the in-region fraction of the plotted rectangle (the rectangle and
    grid resolution are part of the record, since the normalization is a
    reporting convention).
    """

    sigma: float
    threshold: float
    r_values: np.ndarray
    w_values: np.ndarray
    certified: np.ndarray
    boundary_r: np.ndarray
    boundary_w: np.ndarray
    area: float

    @property
    def r_range(self) -> tuple:
        return float(self.r_values[0]), float(self.r_values[-1])

    @property
    def w_range(self) -> tuple:
        return float(self.w_values[0]), float(self.w_values[-1])

    @property
    def grid_n(self) -> int:
        return int(self.r_values.size)


def certified_region(sigma: float, threshold: float, r_range=(0.0, 1.5),
                     w_range=(0.0, 1.0), grid_n: int = 101) -> CertifiedRegion:
    """Evaluate the Gaussian condition on a grid_n x grid_n rectangle.

    The boundary curve samples ``W = Phi(R / sigma) + threshold`` along the
    R grid.
    """
    sigma = float(sigma)
    if sigma <= 0.0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    grid_n = int(grid_n)
    if grid_n < 2:
        raise DomainError(f"grid_n must be >= 2, got {grid_n}")
    r_lo, r_hi = (float(v) for v in r_range)
    w_lo, w_hi = (float(v) for v in w_range)
    if not (0.0 <= r_lo < r_hi) or not w_lo < w_hi:
        raise DomainError("ranges must be nonempty with r_lo >= 0")
    r_values = np.linspace(r_lo, r_hi, grid_n)
    w_values = np.linspace(w_lo, w_hi, grid_n)
    bound = np.array([std_normal_cdf(r / sigma) for r in r_values]) + float(threshold)
    certified = w_values[None, :] > bound[:, None]
    return CertifiedRegion(
        sigma=sigma,
        threshold=float(threshold),
        r_values=r_values,
        w_values=w_values,
        certified=certified,
        boundary_r=r_values.copy(),
        boundary_w=bound,
        area=float(certified.mean()),
    )


def wca(points, sigma: float, threshold: float) -> float:
    """Watermark certification accuracy: the fraction of (R, W) trial points
    inside the certified region."""
    points = list(points)
    if not points:
        raise DomainError("wca needs at least one (R, W) point")
    hits = sum(1 for r, w in points if gaussian_condition(w, r, sigma, threshold))
    return hits / len(points)


def save_region(region: CertifiedRegion, csv_path, sidecar_path=None) -> None:
    """Write the grid as ``R,W,certified`` CSV plus a JSON sidecar with the
    rectangle, resolution and area."""
    csv_path = Path(csv_path)
    lines = ["R,W,certified"]
    for i, r in enumerate(region.r_values):
        for j, w in enumerate(region.w_values):
            lines.append(f"{float(r)!r},{float(w)!r},{int(region.certified[i, j])}")
    csv_path.write_text("\n".join(lines) + "\n")
    if sidecar_path is None:
        sidecar_path = csv_path.with_suffix(".json")
    meta = {
        "sigma": region.sigma,
        "threshold": region.threshold,
        "r_range": list(region.r_range),
        "w_range": list(region.w_range),
        "grid_n": region.grid_n,
        "area": region.area,
    }
    Path(sidecar_path).write_text(json.dumps(meta, indent=2) + "\n")
