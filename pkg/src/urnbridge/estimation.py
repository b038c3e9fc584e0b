"""Exponent estimation from forward and backward occupancy paths.

The estimator family integrates ``log+ R_[nt]`` against a signed step measure
with zero total mass whose log-moment is normalized to one.  Averaging the
forward- and backward-path versions yields an estimate that is symmetric in
the reading direction of the stream and has Gaussian fluctuations of order
``1/sqrt(E R_n)``; :func:`estimator_asym_variance` evaluates the variance of
the limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gaussian_limit import cov_kernel, cross_cov_kernel
from .urn_model import OccupancyPath

__all__ = [
    "StepMeasure",
    "ThetaEstimate",
    "validate_measure",
    "example1_measure",
    "theta_estimator",
    "theta_example1",
    "estimator_asym_variance",
    "floor_nt",
]

# estimates outside this range are clamped (with a flag) so that downstream
# bridge statistics always receive a usable exponent in (0, 1)
CLAMP_LO = 0.01
CLAMP_HI = 0.99

_MOMENT_TOL = 1e-12


@dataclass(frozen=True)
class StepMeasure:
    """Signed atomic measure on (0, 1] with zero total mass.

    ``jumps[j]`` is the signed mass placed at ``locations[j]``.  Validity
    (enforced by :func:`validate_measure`): locations lie in (0, 1], the
    jumps sum to zero, and ``sum_j jumps[j] * log(locations[j]) == 1`` within
    1e-12 relative.  ``delta`` is the smallest atom location; the measure
    vanishes on [0, delta).
    """

    locations: np.ndarray
    jumps: np.ndarray
    delta: float

    def atoms(self) -> list[tuple[float, float]]:
        return [(float(t), float(h)) for t, h in zip(self.locations, self.jumps)]


@dataclass(frozen=True)
class ThetaEstimate:
    """Exponent estimate with its components and predicted spread.

    ``value`` is the (possibly clamped) average of the ``forward`` and
    ``backward`` path estimates; ``clamped`` records whether the raw average
    fell outside [0.01, 0.99].  ``asym_sd`` is the predicted standard
    deviation ``sqrt(v / R_n)`` where ``v`` is the asymptotic variance at the
    estimated exponent and ``R_n`` stands in for its mean.
    """

    value: float
    forward: float
    backward: float
    n: int
    asym_sd: float
    clamped: bool

    @property
    def raw_value(self) -> float:
        return 0.5 * (self.forward + self.backward)


def validate_measure(atoms, rescale: bool = False) -> StepMeasure:
    """Check the estimator-measure conditions and build a :class:`StepMeasure`.

    Parameters
    ----------
    atoms : iterable of (location, jump)
        Atom locations in (0, 1] with signed jumps.
    rescale : bool, optional
        If true, rescale all jumps by a common factor so the log-moment equals
        one exactly (only possible when it is nonzero); zero total mass is
        preserved by rescaling.
    """
    atoms = list(atoms)
    if not atoms:
        raise ValueError("measure needs at least one atom")
    locs = np.array([t for t, _ in atoms], dtype=np.float64)
    jumps = np.array([h for _, h in atoms], dtype=np.float64)
    if np.any(locs <= 0.0) or np.any(locs > 1.0):
        raise ValueError("atom locations must lie in (0, 1]")
    order = np.argsort(locs)
    locs, jumps = locs[order], jumps[order]
    if len(np.unique(locs)) != len(locs):
        raise ValueError("atom locations must be distinct")
    scale = float(np.sum(np.abs(jumps)))
    if scale == 0.0:
        raise ValueError("measure must not be identically zero")
    moment = float(np.sum(jumps * np.log(locs)))
    if rescale:
        if moment == 0.0:
            raise ValueError("log-moment is zero; cannot rescale to 1")
        jumps = jumps / moment
        moment = float(np.sum(jumps * np.log(locs)))
        scale = float(np.sum(np.abs(jumps)))
    if abs(float(np.sum(jumps))) > _MOMENT_TOL * scale:
        raise ValueError("jumps must sum to zero (measure vanishes at 0 and 1)")
    if abs(moment - 1.0) > _MOMENT_TOL:
        raise ValueError(
            f"log-moment must equal 1 within {_MOMENT_TOL} (got {moment!r}); "
            "pass rescale=True to normalize numerically-built measures"
        )
    return StepMeasure(locations=locs, jumps=jumps, delta=float(locs.min()))


def example1_measure() -> StepMeasure:
    """The canonical two-atom measure: -1/log2 at 1/2 and +1/log2 at 1.

    With this measure the estimator reduces to the closed form
    ``log2(R_n / sqrt(R_[n/2] * R'_[n/2]))`` (see :func:`theta_example1`).
    The CLI accepts it under the alias ``example1``.
    """
    h = 1.0 / math.log(2.0)
    return validate_measure([(0.5, -h), (1.0, h)])


def floor_nt(n: int, t: float) -> int:
    """Index ``[n t]`` with a tiny bump so exact rationals do not round down."""
    return int(math.floor(n * t + 1e-9))


def _path_estimate(path: OccupancyPath, measure: StepMeasure) -> float:
    counts = path.counts
    n = path.n
    total = 0.0
    for t, h in zip(measure.locations.tolist(), measure.jumps.tolist()):
        r = int(counts[floor_nt(n, t)])
        if r > 0:
            total += h * max(math.log(r), 0.0)
    return total


def theta_estimator(fwd: OccupancyPath, bwd: OccupancyPath, measure: StepMeasure) -> ThetaEstimate:
    """Estimate the exponent from a forward/backward occupancy-path pair.

    The forward component is ``sum_j h_j log+ R_[n t_j]``, the backward one
    uses the reversed-stream path, and ``value`` is their average, clamped to
    [0.01, 0.99] with ``clamped`` set when the raw average falls outside.
    """
    if fwd.n != bwd.n:
        raise ValueError("forward and backward paths must share n")
    if fwd.n < 2:
        raise ValueError("need a stream of length >= 2")
    if fwd.total != bwd.total:
        raise ValueError("paths disagree on the total distinct count; "
                         "they must come from the same stream")
    forward = _path_estimate(fwd, measure)
    backward = _path_estimate(bwd, measure)
    raw = 0.5 * (forward + backward)
    clamped = not (CLAMP_LO <= raw <= CLAMP_HI)
    value = min(max(raw, CLAMP_LO), CLAMP_HI)
    rn = max(fwd.total, 1)
    var = estimator_asym_variance(value, measure)
    asym_sd = math.sqrt(max(var, 0.0) / rn)
    return ThetaEstimate(
        value=value,
        forward=forward,
        backward=backward,
        n=fwd.n,
        asym_sd=asym_sd,
        clamped=clamped,
    )


def theta_example1(rn: int, rhalf: int, rphalf: int) -> float:
    """Closed-form estimate ``log2(rn / sqrt(rhalf * rphalf))``.

    ``rn`` is the distinct count of the full stream, ``rhalf`` / ``rphalf``
    the distinct counts of its first and last halves.  Agrees with
    :func:`theta_estimator` under :func:`example1_measure` to 1e-12 (no
    clamping is applied here).
    """
    if min(rn, rhalf, rphalf) < 1:
        raise ValueError("counts must be >= 1")
    return (math.log(rn) - 0.5 * (math.log(rhalf) + math.log(rphalf))) / math.log(2.0)


def estimator_asym_variance(theta: float, measure: StepMeasure) -> float:
    """Variance of the limit of ``sqrt(E R_n) (estimate - theta)``.

    Equals ``(1/2) sum_{j,l} h_j h_l (t_j t_l)^(-theta)
    (K + K')(t_j, t_l)`` over the measure's atoms, where K and K' are the
    limit covariance kernels of the forward/backward pair.
    """
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    t = measure.locations
    h = measure.jumps
    tt_s, tt_t = np.meshgrid(t, t, indexing="ij")
    ksum = cov_kernel(theta, tt_s, tt_t) + cross_cov_kernel(theta, tt_s, tt_t)
    weights = np.outer(h * t ** (-theta), h * t ** (-theta))
    return float(0.5 * np.sum(weights * ksum))
