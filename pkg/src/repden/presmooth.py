"""Pilot density estimation for training subpopulations.

A boundary-corrected weighted kernel density estimate produces strictly
positive pilot densities on the grid; the per-sample rule-of-thumb bandwidth
feeds a median rule that fixes one bandwidth for the whole training set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .grid import Domain, GridFn

# Floor applied to pilot densities so the log transform downstream never sees
# an exact zero (kernel sums underflow far from all observations).  Kept near
# the bottom of the double range: a larger floor flattens genuine Gaussian
# log-tails into plateaus and corrupts the leading modes of variation.
DENSITY_FLOOR = 1e-300

_SQRT_2PI = float(np.sqrt(2.0 * np.pi))


class DegenerateSampleError(ValueError):
    """Raised when a sample has zero spread and no bandwidth can be formed."""


@dataclass(frozen=True)
class SubpopSample:
    """Observations of one subpopulation; values are kept sorted."""

    id: str
    obs: np.ndarray

    def __post_init__(self):
        obs = np.sort(np.asarray(self.obs, dtype=float).ravel())
        if obs.size < 1:
            raise ValueError(f"subpopulation {self.id!r} has no observations")
        if not np.all(np.isfinite(obs)):
            raise ValueError(f"subpopulation {self.id!r} has non-finite observations")
        obs.setflags(write=False)
        object.__setattr__(self, "obs", obs)

    @property
    def size(self) -> int:
        return int(self.obs.size)


@dataclass(frozen=True)
class KdeConfig:
    bandwidth: float
    kernel: str = "gaussian"

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        if self.kernel != "gaussian":
            raise ValueError(f"unsupported kernel {self.kernel!r}")


def boundary_weight(t: np.ndarray, h: float, domain: Domain) -> np.ndarray:
    """Reciprocal of the Gaussian kernel mass falling inside the domain.

    Dividing the kernel sum by this mass removes the downward bias of a
    plain KDE near the interval endpoints.  Computed from the normal CDF in
    closed form.
    """
    mass = ndtr((t - domain.lo) / h) - ndtr((t - domain.hi) / h)
    return 1.0 / mass


def weighted_kde(sample: SubpopSample, cfg: KdeConfig, domain: Domain) -> GridFn:
    """Boundary-corrected Gaussian KDE of ``sample`` on the domain grid.

    Returns a strictly positive density normalized to integrate to one
    under the trapezoidal rule.
    """
    if not domain.contains(sample.obs):
        raise ValueError(
            f"subpopulation {sample.id!r} has observations outside "
            f"[{domain.lo}, {domain.hi}]"
        )
    t = domain.grid
    h = cfg.bandwidth
    z = (t[:, None] - sample.obs[None, :]) / h
    ksum = np.exp(-0.5 * z * z).sum(axis=1) / _SQRT_2PI
    raw = ksum * boundary_weight(t, h, domain)
    raw = raw / (domain.trap_weights @ raw)
    vals = np.maximum(raw, DENSITY_FLOOR)
    vals = vals / (domain.trap_weights @ vals)
    return GridFn(domain, vals)


def silverman_bandwidth(sample: SubpopSample) -> float:
    """Rule-of-thumb bandwidth ``0.9 * min(sd, IQR/1.34) * N^(-1/5)``.

    Falls back to the standard deviation when the IQR is zero but the
    sample still has spread; raises :class:`DegenerateSampleError` when all
    values coincide.
    """
    if sample.size < 2:
        raise ValueError("bandwidth selection needs at least two observations")
    sd = float(np.std(sample.obs, ddof=1))
    if sd == 0.0:
        raise DegenerateSampleError(
            f"subpopulation {sample.id!r} has zero spread"
        )
    q1, q3 = np.percentile(sample.obs, [25.0, 75.0])
    iqr = float(q3 - q1)
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    return 0.9 * spread * sample.size ** (-0.2)


def median_bandwidth(samples: list[SubpopSample]) -> float:
    """Median of the per-sample bandwidths; one value for the whole training set."""
    bandwidths = []
    for s in samples:
        try:
            bandwidths.append(silverman_bandwidth(s))
        except ValueError:
            continue
    if not bandwidths:
        raise DegenerateSampleError("no sample yields a valid bandwidth")
    return float(np.median(bandwidths))
