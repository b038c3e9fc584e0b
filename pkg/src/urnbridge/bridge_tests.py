"""Empirical bridges and the quadratic homogeneity test.

A stream is reduced to its forward/backward distinct-count paths, each path
is centered by the fitted power trend and normalized so that both endpoints
vanish (an *empirical bridge*), and the squared L2 norm of the pair is the
test statistic W^2.  Large values are evidence against the hypothesis that
the whole stream came from one urn scheme with the given (or estimated)
exponent.  The null distribution of W^2 is supplied by a CDF backend: Monte
Carlo tabulation of the limit law, spectral (Smirnov-formula) evaluation, or
spectral-with-fallback.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .estimation import StepMeasure, theta_estimator
from .gaussian_limit import LimitSample, limit_w2_sample
from .spectral_cdf import SpectralDeclined, SpectralModel, nystrom_eigs, spectral_p_value
from .urn_model import OccupancyPath, Stream, backward_counts, forward_counts

__all__ = [
    "BridgePath",
    "TestReport",
    "empirical_bridge",
    "w2_statistic",
    "run_known_theta_test",
    "run_estimated_theta_test",
    "MonteCarloBackend",
    "SpectralBackend",
    "AutoBackend",
]

SMALL_SAMPLE_N = 8


@dataclass(frozen=True)
class BridgePath:
    """Grid values of an empirical bridge at k/n, k = 0..n.

    ``grid_values[k] = (R_k - (k/n)^theta R_n) / sqrt(R_n)``; both endpoints
    are exactly zero.  Between grid points the bridge is the piecewise-linear
    interpolant; the quadratic statistic integrates that interpolant exactly.
    """

    grid_values: np.ndarray
    theta_used: float
    variant: str
    rn: int

    @property
    def n(self) -> int:
        return len(self.grid_values) - 1


@dataclass(frozen=True)
class TestReport:
    """Outcome of one homogeneity test run."""

    w2: float
    variant: str
    theta: float
    theta_source: str
    p_value: float
    cdf_backend: str
    reps: int
    seed: int
    warnings: tuple[str, ...] = field(default_factory=tuple)

    def to_text(self) -> str:
        lines = [
            f"w2={self.w2!r}",
            f"variant={self.variant}",
            f"theta={self.theta!r}",
            f"theta_source={self.theta_source}",
            f"p_value={self.p_value!r}",
            f"cdf_backend={self.cdf_backend}",
            f"reps={self.reps}",
            f"seed={self.seed}",
            f"warnings={';'.join(self.warnings)}",
        ]
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        payload = {
            "w2": self.w2,
            "variant": self.variant,
            "theta": self.theta,
            "theta_source": self.theta_source,
            "p_value": self.p_value,
            "cdf_backend": self.cdf_backend,
            "reps": self.reps,
            "seed": self.seed,
            "warnings": list(self.warnings),
        }
        return json.dumps(payload, sort_keys=True)


def empirical_bridge(path: OccupancyPath, theta: float, rn: int, variant: str = "known") -> BridgePath:
    """Center an occupancy path by its power trend and pin the endpoints.

    ``rn`` must be the path's total distinct count (shared by the forward and
    backward paths of one stream, which is what makes one normalization valid
    for both bridges).
    """
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    if rn < 1:
        raise ValueError("rn must be >= 1")
    if rn != path.total:
        raise ValueError(f"rn={rn} does not match the path total {path.total}")
    n = path.n
    t = np.arange(n + 1, dtype=np.float64) / n
    values = (path.counts - t**theta * rn) / math.sqrt(rn)
    values[0] = 0.0  # exact: R_0 = 0 and 0^theta = 0
    values[-1] = 0.0  # exact: R_n - 1^theta R_n = 0
    return BridgePath(grid_values=values, theta_used=float(theta), variant=variant, rn=int(rn))


def w2_statistic(bz: BridgePath, bzp: BridgePath) -> float:
    """Integral of the squared pair of bridges over [0, 1].

    Uses the closed-form sum
    ``(1/3n) sum_k Z(k/n) (2 Z(k/n) + Z((k+1)/n))`` per bridge, which equals
    the exact integral of the squared piecewise-linear interpolant because
    both bridges vanish at the endpoints.
    """
    if bz.n != bzp.n:
        raise ValueError("bridges must share n")
    if bz.theta_used != bzp.theta_used:
        raise ValueError("bridges must share the exponent")
    n = bz.n
    total = 0.0
    for bridge in (bz, bzp):
        v = bridge.grid_values
        total += float(np.sum(v[1:-1] * (2.0 * v[1:-1] + v[2:]))) / (3.0 * n)
    return total


def _base_warnings(n: int) -> list[str]:
    if n < SMALL_SAMPLE_N:
        return [f"small sample (n={n} < {SMALL_SAMPLE_N}); asymptotic null is unreliable"]
    return []


def run_known_theta_test(stream: Stream, theta: float, cdf) -> TestReport:
    """Homogeneity test with a hypothesized exponent.

    ``cdf`` is a backend handle (:class:`MonteCarloBackend`,
    :class:`SpectralBackend` or :class:`AutoBackend`).
    """
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    fwd = forward_counts(stream)
    bwd = backward_counts(stream)
    rn = fwd.total
    bz = empirical_bridge(fwd, theta, rn, variant="known")
    bzp = empirical_bridge(bwd, theta, rn, variant="known")
    w2 = w2_statistic(bz, bzp)
    warnings = _base_warnings(stream.n)
    p, info = cdf.p_value(w2, theta, "known", None)
    warnings.extend(info.get("warnings", ()))
    return TestReport(
        w2=w2,
        variant="known",
        theta=float(theta),
        theta_source="fixed",
        p_value=p,
        cdf_backend=info["backend"],
        reps=info.get("reps", 0),
        seed=info.get("seed", 0),
        warnings=tuple(warnings),
    )


def run_estimated_theta_test(stream: Stream, measure: StepMeasure, cdf) -> TestReport:
    """Homogeneity test with the exponent estimated from the stream.

    The estimate is plugged into both the bridges and the null distribution
    (the limit law of the estimated-exponent statistic itself depends on the
    unknown exponent, so its tabulation uses the estimate as well).
    """
    fwd = forward_counts(stream)
    bwd = backward_counts(stream)
    rn = fwd.total
    est = theta_estimator(fwd, bwd, measure)
    theta_hat = est.value
    warnings = _base_warnings(stream.n)
    if est.clamped:
        warnings.append(
            f"estimate clamped to {theta_hat!r} (raw {est.raw_value!r})"
        )
    bz = empirical_bridge(fwd, theta_hat, rn, variant="estimated")
    bzp = empirical_bridge(bwd, theta_hat, rn, variant="estimated")
    w2 = w2_statistic(bz, bzp)
    p, info = cdf.p_value(w2, theta_hat, "estimated", measure)
    warnings.extend(info.get("warnings", ()))
    return TestReport(
        w2=w2,
        variant="estimated",
        theta=theta_hat,
        theta_source="estimated",
        p_value=p,
        cdf_backend=info["backend"],
        reps=info.get("reps", 0),
        seed=info.get("seed", 0),
        warnings=tuple(warnings),
    )


def _measure_key(measure: StepMeasure | None):
    if measure is None:
        return None
    return tuple(measure.atoms())


class MonteCarloBackend:
    """Null CDF by Monte Carlo tabulation of the limit law.

    Tabulations are cached per (theta, variant, measure); safe for concurrent
    read-only use once built.
    """

    def __init__(self, grid_size: int = 256, reps: int = 100_000, seed: int = 0):
        self.grid_size = grid_size
        self.reps = reps
        self.seed = seed
        self._samples: dict = {}

    def sample(self, theta: float, variant: str, measure: StepMeasure | None) -> LimitSample:
        key = (round(float(theta), 15), variant, _measure_key(measure))
        got = self._samples.get(key)
        if got is None:
            got = limit_w2_sample(
                theta,
                variant=variant,
                measure=measure,
                grid_size=self.grid_size,
                reps=self.reps,
                seed=self.seed,
            )
            self._samples[key] = got
        return got

    def preload(self, sample: LimitSample, measure: StepMeasure | None = None) -> None:
        """Adopt a previously persisted tabulation."""
        key = (round(float(sample.theta), 15), sample.variant, _measure_key(measure))
        self._samples[key] = sample

    def p_value(self, w2: float, theta: float, variant: str, measure: StepMeasure | None):
        sample = self.sample(theta, variant, measure)
        info = {"backend": "montecarlo", "reps": sample.reps, "seed": sample.seed}
        return sample.p_value(w2), info


class SpectralBackend:
    """Null CDF through operator eigenvalues and the alternating formula.

    Raises :class:`SpectralDeclined` when the formula's validity check fails.
    """

    def __init__(self, m: int = 512, kmax: int = 128):
        self.m = m
        self.kmax = kmax
        self._models: dict = {}

    def model(self, theta: float, variant: str, measure: StepMeasure | None) -> SpectralModel:
        key = (round(float(theta), 15), variant, _measure_key(measure))
        got = self._models.get(key)
        if got is None:
            got = nystrom_eigs(theta, variant=variant, measure=measure, m=self.m, kmax=self.kmax)
            self._models[key] = got
        return got

    def preload(self, model: SpectralModel, measure: StepMeasure | None = None) -> None:
        key = (round(float(model.theta), 15), model.variant, _measure_key(measure))
        self._models[key] = model

    def p_value(self, w2: float, theta: float, variant: str, measure: StepMeasure | None):
        model = self.model(theta, variant, measure)
        info = {"backend": "spectral", "reps": 0, "seed": 0}
        return spectral_p_value(model, w2), info


class AutoBackend:
    """Spectral backend with Monte Carlo fallback on decline."""

    def __init__(self, spectral: SpectralBackend | None = None, montecarlo: MonteCarloBackend | None = None):
        self.spectral = spectral if spectral is not None else SpectralBackend()
        self.montecarlo = montecarlo if montecarlo is not None else MonteCarloBackend()

    def p_value(self, w2: float, theta: float, variant: str, measure: StepMeasure | None):
        try:
            return self.spectral.p_value(w2, theta, variant, measure)
        except SpectralDeclined as exc:
            p, info = self.montecarlo.p_value(w2, theta, variant, measure)
            info = dict(info)
            info.setdefault("warnings", [])
            info["warnings"] = list(info["warnings"]) + [f"spectral backend declined: {exc}"]
            return p, info
