"""Urn probability laws, label streams, and occupancy-count processes.

The sampling model: labels are drawn i.i.d. from a fixed law ``p_1 >= p_2 >=
... > 0`` on ``{1, ..., N}``.  ``forward_counts`` gives the path of the number
of distinct labels among the first ``k`` draws, ``backward_counts`` the same
read from the end of the stream.  Exact finite-sample means (binomial and
Poissonized) and the Poissonized forward/backward covariance are provided as
closed-form oracles against which simulations can be checked.

Zipf-type laws with very large support are represented by a materialized head
plus an analytic power-law tail, so means stay accurate to ~1e-12 even when
the support is far too large to enumerate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import zeta

from ._rng import derive_rng

__all__ = [
    "ProbabilityLaw",
    "Stream",
    "OccupancyPath",
    "zipf_law",
    "law_from_probs",
    "tail_safe_truncation",
    "heavy_urn_count",
    "sample_stream",
    "forward_counts",
    "backward_counts",
    "exact_mean_occupancy",
    "poisson_mean_occupancy",
    "poissonized_occupancy_cov",
    "occupancy_checkpoints",
    "poissonized_checkpoints",
    "read_stream",
    "write_stream",
]

# Largest support that is materialized as an explicit probability vector.
# Beyond this the pure-Zipf tail is handled analytically (Hurwitz zeta).
HEAD_CAP = 4_000_000


@dataclass(frozen=True)
class ProbabilityLaw:
    """Urn probabilities ``p_1 >= p_2 >= ... > 0`` summing to one.

    ``probs`` holds the materialized head (all of the support when
    ``truncation <= HEAD_CAP``).  For pure power laws with larger support,
    ``theta``/``c`` parameterize the analytic tail ``p_i = c i^(-1/theta)``
    for ``i > len(probs)``.

    ``tail_bound`` reports the probability mass of the *untruncated* power law
    that falls beyond ``truncation`` (0.0 for explicitly given laws); it bounds
    the distributional error introduced by cutting the support at ``N``.
    """

    probs: np.ndarray
    truncation: int
    theta: float | None = None
    c: float | None = None
    tail_bound: float = 0.0
    perturbation: float = 0.0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def head_size(self) -> int:
        return len(self.probs)

    @property
    def head_mass(self) -> float:
        """Total mass of the materialized head."""
        return float(self._cumulative()[-1])

    def _cumulative(self) -> np.ndarray:
        cum = self._cache.get("cum")
        if cum is None:
            cum = np.cumsum(self.probs)
            self._cache["cum"] = cum
        return cum

    def tail_prob_sum(self, power: float = 1.0) -> float:
        """Return ``sum_{i > head} p_i^power`` for the analytic tail."""
        if self.head_size >= self.truncation:
            return 0.0
        s = power / self.theta
        z = zeta(s, self.head_size + 1) - zeta(s, self.truncation + 1)
        return float(self.c**power * z)


@dataclass(frozen=True)
class Stream:
    """A recorded sequence of urn labels (1-based integers)."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if labels.ndim != 1 or len(labels) < 1:
            raise ValueError("stream must be a non-empty 1-d label sequence")
        if labels.min() < 1:
            raise ValueError("labels must be positive integers")
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return len(self.labels)

    def reversed(self) -> "Stream":
        return Stream(self.labels[::-1])


@dataclass(frozen=True)
class OccupancyPath:
    """Distinct-count path ``counts[0..n]`` with ``counts[0] = 0``.

    ``direction`` records whether the path reads the stream from the start
    ("forward") or from the end ("backward").
    """

    counts: np.ndarray
    direction: str

    def __post_init__(self):
        if self.direction not in ("forward", "backward"):
            raise ValueError("direction must be 'forward' or 'backward'")
        counts = np.ascontiguousarray(self.counts, dtype=np.int64)
        if counts[0] != 0:
            raise ValueError("occupancy path must start at 0")
        object.__setattr__(self, "counts", counts)

    @property
    def n(self) -> int:
        return len(self.counts) - 1

    @property
    def total(self) -> int:
        """Number of distinct labels in the whole stream."""
        return int(self.counts[-1])

    def validate(self) -> None:
        """Assert the structural path invariants (0/1 increments, R_k <= k)."""
        inc = np.diff(self.counts)
        if not np.all((inc == 0) | (inc == 1)):
            raise AssertionError("occupancy increments must be 0 or 1")
        if self.n >= 1 and self.counts[1] != 1:
            raise AssertionError("first draw always occupies one urn")
        if np.any(self.counts > np.arange(len(self.counts))):
            raise AssertionError("occupancy cannot exceed draw count")


def zipf_law(theta: float, truncation: int, perturbation: float = 0.0) -> ProbabilityLaw:
    """Power-law urn probabilities ``p_i ∝ i^(-1/theta)`` on ``1..truncation``.

    Parameters
    ----------
    theta : float
        Growth exponent of the distinct-count process, in (0, 1).  The raw
        probability exponent is ``1/theta``.
    truncation : int
        Support size N.  May be astronomically large: only ``min(N, HEAD_CAP)``
        probabilities are materialized, the rest is handled analytically.
    perturbation : float, optional
        Optional rough-tail factor ``(1 + perturbation/sqrt(i))`` for
        robustness experiments.  Perturbed laws must fit in HEAD_CAP.
    """
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    if truncation < 1:
        raise ValueError("truncation must be >= 1")
    s = 1.0 / theta
    head = min(int(truncation), HEAD_CAP)
    i = np.arange(1, head + 1, dtype=np.float64)
    weights = i ** (-s)
    if perturbation != 0.0:
        if truncation > HEAD_CAP:
            raise ValueError("perturbed laws must have truncation <= HEAD_CAP")
        weights = weights * (1.0 + perturbation / np.sqrt(i))
        if np.any(weights <= 0) or np.any(np.diff(weights) > 0):
            raise ValueError("perturbation breaks positivity or monotonicity")
        total = float(np.sum(weights))
        c = 1.0 / total
    else:
        # sum over the full (possibly huge) support via Hurwitz zeta
        tail_weight = (zeta(s, head + 1) - zeta(s, truncation + 1)) if truncation > head else 0.0
        total = float(np.sum(weights) + tail_weight)
        c = 1.0 / total
    probs = weights * c
    # untruncated tail mass of the infinite law, as a diagnostic bound
    tail_bound = float((zeta(s, truncation + 1)) / zeta(s, 1))
    return ProbabilityLaw(
        probs=probs,
        truncation=int(truncation),
        theta=float(theta),
        c=c,
        tail_bound=tail_bound,
        perturbation=float(perturbation),
    )


def law_from_probs(probs) -> ProbabilityLaw:
    """Wrap an explicit probability vector (must be non-increasing, sum to 1)."""
    p = np.ascontiguousarray(probs, dtype=np.float64)
    if p.ndim != 1 or len(p) < 1:
        raise ValueError("probs must be a non-empty 1-d vector")
    if np.any(p <= 0):
        raise ValueError("probabilities must be strictly positive")
    if np.any(np.diff(p) > 0):
        raise ValueError("probabilities must be non-increasing")
    if abs(p.sum() - 1.0) > 1e-12:
        raise ValueError(f"probabilities must sum to 1 (got {p.sum()!r})")
    return ProbabilityLaw(probs=p, truncation=len(p))


def tail_safe_truncation(theta: float, n: int, rel_deficit: float = 1e-3) -> int:
    """Support size N making truncation negligible for streams of length n.

    Chooses the smallest N (up to rounding) for which the expected number of
    distinct labels lost to truncation, ``n * sum_{i>N} c i^(-1/theta)``, is at
    most ``rel_deficit`` times the leading-order mean
    ``Gamma(1-theta) (c n)^theta``.
    """
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    s = 1.0 / theta
    c = 1.0 / zeta(s, 1)
    target = rel_deficit * math.gamma(1.0 - theta) * (c * n) ** theta
    # n * c * N^(1-s)/(s-1) <= target  =>  N >= (n c /((s-1) target))^(1/(s-1))
    N = (n * c / ((s - 1.0) * target)) ** (1.0 / (s - 1.0))
    return max(int(N) + 1, 1000)


def heavy_urn_count(law: ProbabilityLaw, x: float) -> int:
    """Number of urns with probability at least ``1/x``.

    Returns ``max{k : p_k >= 1/x}``; returns 0 when even the largest
    probability falls below ``1/x`` (the flagged empty-set condition).
    """
    if x <= 0:
        raise ValueError("x must be positive")
    thresh = 1.0 / x
    p = law.probs
    if p[0] < thresh:
        return 0
    # count within the head: probs are non-increasing
    k = int(np.searchsorted(-p, -thresh, side="right"))
    if k < law.head_size or law.head_size == law.truncation:
        return min(k, law.truncation)
    # whole head qualifies and an analytic tail exists: invert p_k = c k^(-1/theta)
    cand = int(math.floor((law.c * x) ** law.theta))
    cand = min(max(cand, law.head_size), law.truncation)
    while cand < law.truncation and law.c * (cand + 1) ** (-1.0 / law.theta) >= thresh:
        cand += 1
    while cand > law.head_size and law.c * cand ** (-1.0 / law.theta) < thresh:
        cand -= 1
    return cand


def _sample_tail_labels(law: ProbabilityLaw, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF bisection on the analytic tail for uniforms beyond the head."""
    s = 1.0 / law.theta
    z_head = zeta(s, law.head_size + 1)
    z_end = zeta(s, law.truncation + 1)
    head_mass = law.head_mass
    # target: smallest k with head_mass + c*(z_head - zeta(s, k+1)) >= u
    lo = np.full(u.shape, law.head_size + 1, dtype=np.int64)
    hi = np.full(u.shape, law.truncation, dtype=np.int64)
    while np.any(lo < hi):
        mid = (lo + hi) // 2
        cdf = head_mass + law.c * (z_head - zeta(s, mid + 1.0))
        take_left = cdf >= u
        hi = np.where(take_left, mid, hi)
        lo = np.where(take_left, lo, mid + 1)
    return lo


def sample_stream(law: ProbabilityLaw, n: int, seed: int | np.random.Generator) -> Stream:
    """Draw ``n`` i.i.d. labels from ``law``; deterministic given the seed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else derive_rng(seed)
    u = rng.random(n)
    cum = law._cumulative()
    idx = np.searchsorted(cum, u, side="right")
    if law.head_size == law.truncation:
        # fully materialized: u >= cum[-1] only by float rounding of the sum
        labels = np.minimum(idx, law.truncation - 1) + 1
    else:
        labels = idx + 1
        in_tail = idx >= law.head_size
        if np.any(in_tail):
            labels[in_tail] = _sample_tail_labels(law, u[in_tail])
    return Stream(labels)


def forward_counts(stream: Stream) -> OccupancyPath:
    """Distinct-count path over growing prefixes of the stream."""
    labels = stream.labels
    first = np.zeros(len(labels), dtype=np.int64)
    _, first_idx = np.unique(labels, return_index=True)
    first[first_idx] = 1
    counts = np.concatenate([[0], np.cumsum(first)])
    return OccupancyPath(counts=counts, direction="forward")


def backward_counts(stream: Stream) -> OccupancyPath:
    """Distinct-count path over growing suffixes (the stream read in reverse)."""
    path = forward_counts(stream.reversed())
    return OccupancyPath(counts=path.counts, direction="backward")


def exact_mean_occupancy(law: ProbabilityLaw, m: int) -> float:
    """Exact mean number of occupied urns after ``m`` draws.

    Evaluates ``sum_k (1 - (1 - p_k)^m)`` with log1p/expm1 so deep-tail terms
    do not cancel; the analytic power-law tail is summed by a binomial series
    in Hurwitz zeta values.
    """
    if m < 0:
        raise ValueError("m must be >= 0")
    if m == 0:
        return 0.0
    p = law.probs
    head = float(np.sum(-np.expm1(m * np.log1p(-p))))
    if law.head_size >= law.truncation:
        return head
    split = _series_split(law, float(m))
    head += _parametric_range_sum(law, law.head_size + 1, split,
                                  lambda q: -np.expm1(m * np.log1p(-q)))
    if split >= law.truncation:
        return head
    # deep tail: 1-(1-p)^m = sum_j (-1)^(j+1) C(m,j) p^j with m*p <= 1/2, so
    # the series terminates after a handful of terms; log-space avoids overflow
    s = 1.0 / law.theta
    tail = 0.0
    log_coeff = 0.0
    for j in range(1, 80):
        if j > m:
            break
        log_coeff += math.log((m - j + 1) / j)
        zj = zeta(j * s, split + 1) - zeta(j * s, law.truncation + 1)
        if zj <= 0.0:
            break
        term = (-1.0) ** (j + 1) * math.exp(log_coeff + j * math.log(law.c) + math.log(zj))
        tail += term
        if abs(term) <= 1e-15 * (head + abs(tail)):
            break
    return head + tail


def poisson_mean_occupancy(law: ProbabilityLaw, t: float) -> float:
    """Mean occupied urns when the number of draws is Poisson with mean ``t``.

    Returns ``sum_k (1 - exp(-p_k t))``.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    if t == 0:
        return 0.0
    head = float(np.sum(-np.expm1(-law.probs * t)))
    if law.head_size >= law.truncation:
        return head
    split = _series_split(law, t)
    head += _parametric_range_sum(law, law.head_size + 1, split,
                                  lambda q: -np.expm1(-q * t))
    if split >= law.truncation:
        return head
    s = 1.0 / law.theta
    tail = 0.0
    for j in range(1, 80):
        zj = zeta(j * s, split + 1) - zeta(j * s, law.truncation + 1)
        if zj <= 0.0:
            break
        term = (-1.0) ** (j + 1) * math.exp(
            j * math.log(t * law.c) - math.lgamma(j + 1) + math.log(zj)
        )
        tail += term
        if abs(term) <= 1e-15 * (head + abs(tail)):
            break
    return head + tail


def poissonized_occupancy_cov(law: ProbabilityLaw, n: int, t: float, tau: float) -> float:
    """Exact covariance of Poissonized forward/backward occupancy counts.

    For forward count at time ``t*n`` and backward count over the window
    ``((1-tau)*n, n]`` of a unit-rate Poisson stream: zero when the windows
    are disjoint (``t + tau <= 1``), otherwise
    ``poisson_mean_occupancy((t+tau)*n) - poisson_mean_occupancy(n)``.
    """
    if not (0.0 <= t <= 1.0 and 0.0 <= tau <= 1.0):
        raise ValueError("t and tau must lie in [0, 1]")
    if n < 1:
        raise ValueError("n must be >= 1")
    if t + tau <= 1.0:
        return 0.0
    return poisson_mean_occupancy(law, (t + tau) * n) - poisson_mean_occupancy(law, n)


def _series_split(law: ProbabilityLaw, scale: float) -> int:
    """Index beyond which ``scale * p_i <= 1/2`` so tail series converge fast."""
    split = int(math.ceil((2.0 * law.c * scale) ** law.theta))
    return min(max(split, law.head_size), law.truncation)


def _parametric_range_sum(law: ProbabilityLaw, lo: int, hi: int, fn) -> float:
    """Sum ``fn(p_i)`` over the analytic range ``lo..hi`` in bounded chunks."""
    if hi < lo:
        return 0.0
    s = 1.0 / law.theta
    total = 0.0
    chunk = 1_000_000
    for start in range(lo, hi + 1, chunk):
        stop = min(start + chunk - 1, hi)
        i = np.arange(start, stop + 1, dtype=np.float64)
        total += float(np.sum(fn(law.c * i ** (-s))))
    return total


def _distinct_prefix_counts(labels: np.ndarray, ks: np.ndarray) -> np.ndarray:
    """Number of distinct labels in each prefix ``labels[:k]`` for k in ks."""
    _, first_idx = np.unique(labels, return_index=True)
    first_idx.sort()
    return np.searchsorted(first_idx, ks, side="left").astype(np.int64)


def occupancy_checkpoints(
    law: ProbabilityLaw,
    n: int,
    t_grid,
    reps: int,
    seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Simulate ``R_[nt]`` and ``R'_[nt]`` at the grid times, ``reps`` times.

    Returns arrays of shape ``(reps, len(t_grid))`` for the forward and
    backward counts of each replication.  Replication ``r`` uses the derived
    stream ``(seed, 1, r)`` and is reproducible in isolation.
    """
    t_grid = np.asarray(t_grid, dtype=np.float64)
    ks = np.floor(n * t_grid + 1e-9).astype(np.int64)
    fwd = np.empty((reps, len(t_grid)), dtype=np.int64)
    bwd = np.empty((reps, len(t_grid)), dtype=np.int64)
    for r in range(reps):
        stream = sample_stream(law, n, derive_rng(seed, 1, r))
        fwd[r] = _distinct_prefix_counts(stream.labels, ks)
        bwd[r] = _distinct_prefix_counts(stream.labels[::-1], ks)
    return fwd, bwd


def poissonized_checkpoints(
    law: ProbabilityLaw,
    n: int,
    t_grid,
    reps: int,
    seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Simulate Poissonized forward/backward counts at the grid times.

    The total number of balls is Poisson(n) and each ball gets an independent
    uniform arrival time, which realizes the thinning construction exactly:
    the forward count at ``t`` sees balls with arrival time <= t, the backward
    count at ``tau`` sees balls with arrival time > 1 - tau.
    """
    t_grid = np.asarray(t_grid, dtype=np.float64)
    fwd = np.empty((reps, len(t_grid)), dtype=np.int64)
    bwd = np.empty((reps, len(t_grid)), dtype=np.int64)
    for r in range(reps):
        rng = derive_rng(seed, 2, r)
        m = int(rng.poisson(n))
        if m == 0:
            fwd[r] = 0
            bwd[r] = 0
            continue
        stream = sample_stream(law, m, rng)
        u = rng.random(m)
        order = np.argsort(u, kind="stable")
        lab_t = stream.labels[order]
        u_t = u[order]
        # first arrival time of each label
        _, first_idx = np.unique(lab_t, return_index=True)
        fu = np.sort(u_t[first_idx])
        fwd[r] = np.searchsorted(fu, t_grid, side="right")
        # last arrival time of each label
        _, last_idx = np.unique(lab_t[::-1], return_index=True)
        lu = np.sort(u_t[::-1][last_idx])
        bwd[r] = len(lu) - np.searchsorted(lu, 1.0 - t_grid, side="right")
    return fwd, bwd


# ---------------------------------------------------------------------------
# stream files: one UTF-8 token per line, '#' comment lines
# ---------------------------------------------------------------------------

def write_stream(path, stream: Stream, header_lines=()) -> None:
    """Write labels one per line, preceded by '#' comment header lines."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        for label in stream.labels:
            fh.write(f"{label}\n")


def read_stream(path) -> tuple[Stream, dict | None]:
    """Read a token-per-line stream file.

    Tokens that are all positive integers are used directly.  Otherwise every
    token is dictionary-encoded to a dense 1-based id in first-appearance
    order, and the token->id mapping is returned alongside the stream.
    """
    path = Path(path)
    tokens = []
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            tokens.append(line)
    if not tokens:
        raise ValueError(f"no tokens found in {path}")
    try:
        labels = np.array([int(tok) for tok in tokens], dtype=np.int64)
        if labels.min() >= 1:
            return Stream(labels), None
    except ValueError:
        pass
    vocab: dict[str, int] = {}
    labels = np.empty(len(tokens), dtype=np.int64)
    for i, tok in enumerate(tokens):
        if tok not in vocab:
            vocab[tok] = len(vocab) + 1
        labels[i] = vocab[tok]
    return Stream(labels), vocab


def write_vocab(path, vocab: dict[str, int]) -> None:
    """Write the token<->id encoding as tab-separated pairs, id order."""
    path = Path(path)
    pairs = sorted(vocab.items(), key=lambda kv: kv[1])
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for tok, idx in pairs:
            fh.write(f"{tok}\t{idx}\n")
