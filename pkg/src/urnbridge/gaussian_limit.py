"""The limiting Gaussian pair of the occupancy processes.

The centered, normalized forward/backward distinct-count pair converges to a
two-dimensional Gaussian process whose covariance structure depends only on
the growth exponent ``theta``:

* ``cov_kernel``         -- within one direction, ``(s+t)^th - max(s^th, t^th)``
* ``cross_cov_kernel``   -- across directions, ``((s+t)^th - 1) 1(s+t > 1)``
* ``bridged_*``          -- the same kernels after pinning at t in {0, 1}

This module simulates the pair on a grid (Cholesky with jitter escalation),
forms the bridged and trend-corrected functionals, and tabulates the null
distribution of the quadratic statistic W^2 by Monte Carlo.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from ._rng import derive_rng

if TYPE_CHECKING:  # pragma: no cover
    from .estimation import StepMeasure

__all__ = [
    "KernelGrid",
    "KernelGridError",
    "LimitSample",
    "cov_kernel",
    "cross_cov_kernel",
    "bridged_cov_kernel",
    "bridged_cross_cov_kernel",
    "build_kernel_grid",
    "gp_simulate",
    "make_limit_grid",
    "limit_w2_sample",
    "limit_w2_mean",
    "mc_cdf",
    "mc_p_value",
]

_JITTER_LADDER = (0.0, 1e-15, 1e-14, 1e-13, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8)
_SIM_CHUNK = 4096


class KernelGridError(RuntimeError):
    """Raised when a kernel grid cannot be factorized within the jitter budget."""


def cov_kernel(theta: float, s, t):
    """Same-direction limit covariance ``(s+t)^theta - max(s^theta, t^theta)``."""
    s = np.asarray(s, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    out = (s + t) ** theta - np.maximum(s**theta, t**theta)
    return out if out.ndim else float(out)


def cross_cov_kernel(theta: float, s, t):
    """Cross covariance ``((s+t)^theta - 1)`` on ``s+t > 1``, zero otherwise."""
    s = np.asarray(s, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    out = np.where(s + t > 1.0, (s + t) ** theta - 1.0, 0.0)
    return out if out.ndim else float(out)


def _bridge_correct(kernel, theta, s, t):
    s = np.asarray(s, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    return (
        kernel(theta, s, t)
        - s**theta * kernel(theta, np.ones_like(s), t)
        - t**theta * kernel(theta, s, np.ones_like(t))
        + (s * t) ** theta * kernel(theta, 1.0, 1.0)
    )


def bridged_cov_kernel(theta: float, s, t):
    """Same-direction kernel of the bridge ``Z(t) - t^theta Z(1)``."""
    out = _bridge_correct(cov_kernel, theta, s, t)
    return out if np.ndim(out) else float(out)


def bridged_cross_cov_kernel(theta: float, s, t):
    """Cross kernel of the bridged forward/backward pair."""
    out = _bridge_correct(cross_cov_kernel, theta, s, t)
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class KernelGrid:
    """Joint covariance of the pair on a grid, ready for sampling.

    ``block_cov`` is the 2m x 2m matrix with same-direction blocks on the
    diagonal and cross blocks off it.  ``jitter`` is the multiple of the
    identity that had to be added before a Cholesky factorization succeeded
    (the bridged kernels are exactly singular at t = 1, and the raw pair is
    degenerate there too because both directions share the total count).
    """

    theta: float
    grid: np.ndarray
    block_cov: np.ndarray
    jitter: float
    variant: str
    _chol: np.ndarray = field(repr=False, compare=False, default=None)

    @property
    def size(self) -> int:
        return len(self.grid)


def build_kernel_grid(theta: float, grid, variant: str = "raw") -> KernelGrid:
    """Assemble and factorize the block covariance on a grid in (0, 1].

    ``variant`` selects the raw pair kernels or their bridged versions.
    Fails with :class:`KernelGridError` if jitter above 1e-8 would be needed,
    which would signal a kernel evaluation bug rather than expected
    boundary degeneracy.
    """
    if variant not in ("raw", "bridged"):
        raise ValueError("variant must be 'raw' or 'bridged'")
    grid = np.ascontiguousarray(grid, dtype=np.float64)
    if grid.ndim != 1 or len(grid) == 0:
        raise ValueError("grid must be a non-empty 1-d array")
    if grid[0] <= 0.0 or grid[-1] > 1.0 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing within (0, 1]")
    same_k = cov_kernel if variant == "raw" else bridged_cov_kernel
    cross_k = cross_cov_kernel if variant == "raw" else bridged_cross_cov_kernel
    ss, tt = np.meshgrid(grid, grid, indexing="ij")
    same = same_k(theta, ss, tt)
    cross = cross_k(theta, ss, tt)
    block = np.block([[same, cross], [cross, same]])
    block = 0.5 * (block + block.T)
    eye = np.eye(len(block))
    for jitter in _JITTER_LADDER:
        try:
            chol = np.linalg.cholesky(block + jitter * eye)
        except np.linalg.LinAlgError:
            continue
        return KernelGrid(
            theta=float(theta),
            grid=grid,
            block_cov=block,
            jitter=jitter,
            variant=variant,
            _chol=chol,
        )
    raise KernelGridError(
        f"covariance on {len(grid)} points not factorizable with jitter <= 1e-8"
    )


def gp_simulate(kg: KernelGrid, reps: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``reps`` joint paths of the pair on the grid.

    Returns ``(z, zp)`` arrays of shape ``(reps, m)``.  Deterministic given
    the seed; the draws are consumed in fixed-size chunks so the result does
    not depend on available memory.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    m = kg.size
    z = np.empty((reps, m))
    zp = np.empty((reps, m))
    lower = kg._chol
    done = 0
    for chunk_idx, start in enumerate(range(0, reps, _SIM_CHUNK)):
        size = min(_SIM_CHUNK, reps - start)
        rng = derive_rng(seed, 11, chunk_idx)
        draws = rng.standard_normal((size, 2 * m)) @ lower.T
        z[start : start + size] = draws[:, :m]
        zp[start : start + size] = draws[:, m:]
        done += size
    return z, zp


def make_limit_grid(grid_size: int, measure: "StepMeasure | None" = None) -> np.ndarray:
    """Uniform grid ``k/grid_size`` augmented with 1/2, 1, and measure atoms.

    Zero is always excluded (the limit pair is pinned there).
    """
    if grid_size < 2:
        raise ValueError("grid_size must be >= 2")
    pts = np.arange(1, grid_size + 1, dtype=np.float64) / grid_size
    extras = [np.array([0.5, 1.0])]
    if measure is not None:
        extras.append(np.asarray(measure.locations, dtype=np.float64))
    pts = np.unique(np.concatenate([pts] + extras))
    return pts[pts > 0.0]


@dataclass(frozen=True)
class LimitSample:
    """Sorted Monte Carlo sample of the limiting quadratic statistic."""

    w2_values: np.ndarray
    variant: str
    theta: float
    reps: int
    grid_size: int
    seed: int

    def cdf(self, x: float) -> float:
        return mc_cdf(self, x)

    def p_value(self, w2_obs: float) -> float:
        return mc_p_value(self, w2_obs)

    def save(self, path, extra_header: dict | None = None) -> None:
        """Persist as a text artifact: header lines, then one value per line."""
        path = Path(path)
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            for key, val in (extra_header or {}).items():
                fh.write(f"{key}={val}\n")
            fh.write(f"theta={self.theta!r}\n")
            fh.write(f"variant={self.variant}\n")
            fh.write(f"grid_size={self.grid_size}\n")
            fh.write(f"reps={self.reps}\n")
            fh.write(f"seed={self.seed}\n")
            for v in self.w2_values:
                fh.write(f"{float(v)!r}\n")

    @classmethod
    def load(cls, path) -> "LimitSample":
        path = Path(path)
        header: dict[str, str] = {}
        values = []
        with path.open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if "=" in line and not header.keys() >= {"theta", "variant", "grid_size", "reps", "seed"}:
                    key, _, val = line.partition("=")
                    header[key] = val
                else:
                    values.append(float(line))
        return cls(
            w2_values=np.array(values, dtype=np.float64),
            variant=header["variant"],
            theta=float(header["theta"]),
            reps=int(header["reps"]),
            grid_size=int(header["grid_size"]),
            seed=int(header["seed"]),
        )


def _pl_square_integral(grid: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Integral of the squared piecewise-linear interpolant through
    ``(0, 0), (grid[j], values[:, j])``; exact per segment."""
    widths = np.diff(np.concatenate([[0.0], grid]))
    padded = np.concatenate([np.zeros((len(values), 1)), values], axis=1)
    a = padded[:, :-1]
    b = padded[:, 1:]
    return np.sum(widths * (a * a + a * b + b * b) / 3.0, axis=1)


def limit_w2_sample(
    theta: float,
    variant: str = "known",
    measure: "StepMeasure | None" = None,
    grid_size: int = 256,
    reps: int = 100_000,
    seed: int = 0,
) -> LimitSample:
    """Tabulate the limit law of the quadratic bridge statistic.

    Simulates the raw pair ``(Z, Z')`` on the augmented grid, forms the
    bridges ``Z(t) - t^theta Z(1)``, and for ``variant="estimated"``
    additionally subtracts the exponent-estimation correction
    ``(t^theta log t)/2 * sum_j h_j t_j^(-theta) (Z + Z')(t_j)``, then
    integrates the sum of squares with the exact piecewise-linear rule and
    returns the sorted sample.
    """
    if variant not in ("known", "estimated"):
        raise ValueError("variant must be 'known' or 'estimated'")
    if variant == "estimated" and measure is None:
        raise ValueError("estimated variant requires a measure")
    grid = make_limit_grid(grid_size, measure if variant == "estimated" else None)
    kg = build_kernel_grid(theta, grid, variant="raw")
    tpow = grid**theta
    trend = 0.5 * tpow * np.log(grid)  # vanishes at t=1 and as t -> 0
    if variant == "estimated":
        atom_idx = np.searchsorted(grid, measure.locations)
        atom_coef = measure.jumps * measure.locations ** (-theta)
    values = np.empty(reps)
    for chunk_idx, start in enumerate(range(0, reps, _SIM_CHUNK)):
        size = min(_SIM_CHUNK, reps - start)
        rng = derive_rng(seed, 11, chunk_idx)
        draws = rng.standard_normal((size, 2 * kg.size)) @ kg._chol.T
        z, zp = draws[:, : kg.size], draws[:, kg.size :]
        zb = z - z[:, [-1]] * tpow[None, :]
        zpb = zp - zp[:, [-1]] * tpow[None, :]
        if variant == "estimated":
            xi = (z[:, atom_idx] + zp[:, atom_idx]) @ atom_coef
            zb -= xi[:, None] * trend[None, :]
            zpb -= xi[:, None] * trend[None, :]
        values[start : start + size] = _pl_square_integral(grid, zb) + _pl_square_integral(
            grid, zpb
        )
    values.sort()
    return LimitSample(
        w2_values=values,
        variant=variant,
        theta=float(theta),
        reps=reps,
        grid_size=grid_size,
        seed=seed,
    )


def limit_w2_mean(theta: float) -> float:
    """Expected value of the known-exponent limit statistic, by quadrature."""
    from scipy.integrate import quad

    return quad(lambda t: 2.0 * bridged_cov_kernel(theta, t, t), 0.0, 1.0, limit=200)[0]


def mc_cdf(sample: LimitSample, x: float) -> float:
    """Raw empirical CDF of the tabulated sample at ``x``."""
    vals = sample.w2_values
    return float(np.searchsorted(vals, x, side="right")) / len(vals)


def mc_p_value(sample: LimitSample, w2_obs: float) -> float:
    """Finite-sample-valid Monte Carlo p-value ``(r + 1) / (m + 1)``.

    ``r`` counts tabulated limit values at least as large as the observation.
    """
    vals = sample.w2_values
    r = len(vals) - np.searchsorted(vals, w2_obs, side="left")
    return float(r + 1) / (len(vals) + 1)
