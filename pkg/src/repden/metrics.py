"""Evaluation functionals: KL divergence, leave-one-out cross-entropy, return levels."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .grid import (
    GridFn,
    NORMALIZATION_TOL,
    NotNormalizedError,
    DomainMismatchError,
    integrate,
    quantile_of_density,
)

# Points where the reference density is below this floor contribute zero,
# which realizes the 0 * log 0 = 0 convention on the grid.
KL_SUPPORT_FLOOR = 1e-14


class InfiniteDivergenceError(ValueError):
    """The approximating density vanishes where the reference has mass."""


class LooRefitError(RuntimeError):
    """A leave-one-out refit failed; carries the left-out index."""

    def __init__(self, index: int, message: str):
        super().__init__(f"leave-one-out refit failed at index {index}: {message}")
        self.index = index


@dataclass(frozen=True)
class EvalReport:
    """Per-sample metric values with their mean, median, and sd."""

    per_sample: tuple[tuple[str, float], ...]
    mean: float
    median: float
    sd: float

    @classmethod
    def from_pairs(cls, pairs) -> "EvalReport":
        pairs = tuple((str(i), float(v)) for i, v in pairs)
        values = np.array([v for _, v in pairs])
        sd = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
        return cls(
            per_sample=pairs,
            mean=float(values.mean()),
            median=float(np.median(values)),
            sd=sd,
        )


def _check_density(p: GridFn, name: str) -> None:
    total = integrate(p)
    if abs(total - 1.0) > NORMALIZATION_TOL:
        raise NotNormalizedError(f"{name} integrates to {total}, expected 1")


def kl_div(p: GridFn, q: GridFn) -> float:
    """Information loss ``int p log(p / q)`` on the shared grid.

    ``p`` must be nonnegative and ``q`` strictly positive wherever ``p``
    carries mass; both must be normalized.
    """
    if p.domain != q.domain:
        raise DomainMismatchError("densities live on different domains")
    if np.any(p.values < 0):
        raise ValueError("reference density has negative values")
    _check_density(p, "reference density")
    _check_density(q, "approximating density")
    support = p.values > KL_SUPPORT_FLOOR
    if np.any(q.values[support] <= 0):
        raise InfiniteDivergenceError(
            "approximating density vanishes on the support of the reference"
        )
    integrand = np.zeros_like(p.values)
    ps = p.values[support]
    integrand[support] = ps * np.log(ps / q.values[support])
    return float(p.domain.trap_weights @ integrand)


def mean_kl(truths: list[GridFn], fits: list[GridFn]) -> EvalReport:
    """Per-sample KL divergences from truths to fits, with summary stats."""
    if len(truths) != len(fits):
        raise ValueError(
            f"got {len(truths)} truths but {len(fits)} fits"
        )
    if not truths:
        raise ValueError("need at least one pair")
    return EvalReport.from_pairs(
        (i, kl_div(p, q)) for i, (p, q) in enumerate(zip(truths, fits))
    )


def loo_cross_entropy(fit_fn: Callable[[np.ndarray], GridFn], obs) -> float:
    """Leave-one-out cross-entropy ``-(1/N) sum_j log p_{-j}(X_j)``.

    ``fit_fn`` maps an observation subset to a density; the held-out point is
    evaluated by linear interpolation.  Returns ``inf`` when any refit puts
    zero density on its held-out observation; a failing refit raises
    :class:`LooRefitError` with the index.
    """
    obs = np.asarray(obs, dtype=float).ravel()
    n = obs.size
    if n < 2:
        raise ValueError("leave-one-out needs at least two observations")
    logs = np.empty(n)
    for j in range(n):
        rest = np.delete(obs, j)
        try:
            dens = fit_fn(rest)
        except Exception as exc:
            raise LooRefitError(j, str(exc)) from exc
        pj = float(dens(obs[j]))
        if pj <= 0:
            return math.inf
        logs[j] = math.log(pj)
    return float(-logs.mean())


def return_level(p: GridFn, t_years: float) -> float:
    """The level expected to be exceeded once in ``t_years``: the
    ``1 - 1/t_years`` quantile of ``p``."""
    if not t_years > 1:
        raise ValueError(f"return period must exceed one year, got {t_years}")
    return quantile_of_density(p, 1.0 - 1.0 / t_years)
