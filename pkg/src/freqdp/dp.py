"""Laplace mechanism with per-element privacy budgets.

The protected object is an arbitrary real tensor (in this project the
189-channel blockwise-DCT representation of one image). Sensitivity of
each position is the [r_min, r_max] range observed over a calibration
dataset; the element-wise distance between two values is |x1 - x2|
normalized by that range, and the distance between tensors is the max
over positions. Adding independent Laplace noise with scale
(r_max - r_min) / eps_elem per position, where the per-element budgets
sum to eps_total, gives eps_total-DP under that metric.

All functions here operate on plain ndarrays so the same machinery
serves both real frequency tensors and synthetic benchmark data.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


class CalibrationError(Exception):
    """Empty stream or inconsistent shapes during calibration."""


@dataclass(frozen=True)
class SensitivityMap:
    """Element-wise value bounds observed over a calibration dataset."""

    r_min: np.ndarray
    r_max: np.ndarray
    image_count: int = 0
    dataset_id: str = ""

    def __post_init__(self):
        if self.r_min.shape != self.r_max.shape:
            raise ValueError("r_min / r_max shape mismatch")
        if np.any(self.r_max < self.r_min):
            raise ValueError("r_max < r_min somewhere")

    @property
    def shape(self):
        return self.r_min.shape

    @property
    def sensitivity(self) -> np.ndarray:
        """Per-position range width, MAX - MIN."""
        return self.r_max - self.r_min

    @property
    def support(self) -> np.ndarray:
        """Boolean mask of positions with a non-degenerate range."""
        return self.r_max > self.r_min


@dataclass(frozen=True)
class BudgetAllocation:
    """Total budget split over positions by a softmax of learnable theta.

    Positions outside `support` (constant during calibration) are
    excluded from the softmax; their share is implicitly redistributed
    and they receive no noise.
    """

    theta: np.ndarray
    epsilon_total: float
    support: np.ndarray | None = None

    def __post_init__(self):
        if self.epsilon_total <= 0:
            raise ValueError("epsilon_total must be positive")
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("theta contains non-finite values")
        if self.support is not None and self.support.shape != self.theta.shape:
            raise ValueError("support mask shape mismatch")

    @property
    def budgets(self) -> np.ndarray:
        """Per-element budgets; zero off-support, summing to epsilon_total."""
        p = softmax_over_support(self.theta, self.support)
        return self.epsilon_total * p


def softmax_over_support(theta: np.ndarray, support: np.ndarray | None) -> np.ndarray:
    """Numerically stable softmax over the masked positions of theta."""
    t = np.asarray(theta, dtype=np.float64)
    if support is None:
        support = np.ones(t.shape, dtype=bool)
    if not np.any(support):
        raise ValueError("softmax support is empty")
    out = np.zeros(t.shape, dtype=np.float64)
    vals = t[support]
    e = np.exp(vals - vals.max())
    out[support] = e / e.sum()
    return out


def allocate_budgets(
    theta: np.ndarray,
    epsilon_total: float,
    support: np.ndarray | None = None,
) -> BudgetAllocation:
    """Build a BudgetAllocation after validating theta."""
    return BudgetAllocation(
        theta=np.asarray(theta), epsilon_total=float(epsilon_total), support=support
    )


def noise_scales(s: SensitivityMap, b: BudgetAllocation) -> np.ndarray:
    """Laplace scales (r_max - r_min) / eps_elem, zero off-support."""
    if b.theta.shape != s.shape:
        raise ValueError("budget / sensitivity shape mismatch")
    eps = b.budgets
    scales = np.zeros(s.shape, dtype=np.float64)
    sup = s.support if b.support is None else (s.support & b.support)
    scales[sup] = s.sensitivity[sup] / eps[sup]
    return scales


def calibrate_sensitivity(tensors, dataset_id: str = "") -> SensitivityMap:
    """Running element-wise min/max over a stream of ndarrays."""
    r_min = r_max = None
    count = 0
    for t in tensors:
        a = np.asarray(t, dtype=np.float64)
        if r_min is None:
            r_min = a.copy()
            r_max = a.copy()
        else:
            if a.shape != r_min.shape:
                raise CalibrationError(
                    f"shape {a.shape} != {r_min.shape} mid-stream"
                )
            np.minimum(r_min, a, out=r_min)
            np.maximum(r_max, a, out=r_max)
        count += 1
    if r_min is None:
        raise CalibrationError("empty calibration stream")
    return SensitivityMap(r_min, r_max, image_count=count, dataset_id=dataset_id)


def merge_sensitivity(a: SensitivityMap, b: SensitivityMap) -> SensitivityMap:
    """Associative merge of per-partition calibrations."""
    if a.shape != b.shape:
        raise CalibrationError("cannot merge maps of different shapes")
    return SensitivityMap(
        np.minimum(a.r_min, b.r_min),
        np.maximum(a.r_max, b.r_max),
        image_count=a.image_count + b.image_count,
        dataset_id=a.dataset_id or b.dataset_id,
    )


def element_distance(x1: float, x2: float, r_min: float, r_max: float) -> float:
    """|x1 - x2| / (r_max - r_min); inputs outside the range are clamped."""
    if r_max <= r_min:
        raise ValueError("zero or negative range")
    x1 = min(max(x1, r_min), r_max)
    x2 = min(max(x2, r_min), r_max)
    return abs(x1 - x2) / (r_max - r_min)


def tensor_distance(t1: np.ndarray, t2: np.ndarray, s: SensitivityMap) -> float:
    """Max over positions of the normalized element-wise distance.

    Zero-range positions contribute nothing (both values clamp to the
    same point).
    """
    a = np.asarray(t1, dtype=np.float64)
    b = np.asarray(t2, dtype=np.float64)
    if a.shape != s.shape or b.shape != s.shape:
        raise ValueError("tensor / sensitivity shape mismatch")
    sup = s.support
    if not np.any(sup):
        return 0.0
    a = np.clip(a[sup], s.r_min[sup], s.r_max[sup])
    b = np.clip(b[sup], s.r_min[sup], s.r_max[sup])
    return float(np.max(np.abs(a - b) / s.sensitivity[sup]))


def laplace_sample(scale, rng: np.random.Generator):
    """Inverse-CDF Laplace draw(s): u ~ U(-0.5, 0.5), -s*sign(u)*ln(1-2|u|).

    `scale` may be a scalar or an array; zero scales give exactly 0.
    """
    scale = np.asarray(scale, dtype=np.float64)
    u = rng.random(scale.shape) - 0.5
    noise = -scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))
    return noise if noise.shape else float(noise)


@dataclass
class PerturbStats:
    """Counts of out-of-calibration values clamped before noise."""

    clamped: int = 0


def clamp_to_range(t: np.ndarray, s: SensitivityMap, stats: PerturbStats | None = None):
    """Clamp a tensor into the calibrated ranges, counting the clamps."""
    a = np.asarray(t, dtype=np.float64)
    clamped = np.clip(a, s.r_min, s.r_max)
    n = int(np.count_nonzero(clamped != a))
    if n:
        if stats is not None:
            stats.clamped += n
        log.warning("clamped %d out-of-calibration values before perturbation", n)
    return clamped


def perturb(
    t: np.ndarray,
    s: SensitivityMap,
    b: BudgetAllocation,
    rng: np.random.Generator,
    stats: PerturbStats | None = None,
) -> np.ndarray:
    """Add independent Laplace noise per position; no output clipping."""
    a = clamp_to_range(t, s, stats)
    scales = noise_scales(s, b)
    return a + laplace_sample(scales, rng)


def derive_rng(master_seed: int, index: int) -> np.random.Generator:
    """Per-item generator derived from (master seed, item index).

    Items drawn this way are independent of processing order.
    """
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(index)]))


@dataclass
class DpBoundReport:
    """Outcome of the empirical DP-bound check."""

    draws: int
    violations: int
    max_log_ratio: float
    bound: float
    distance: float
    epsilon_total: float


def verify_dp_bound(
    t1: np.ndarray,
    t2: np.ndarray,
    s: SensitivityMap,
    b: BudgetAllocation,
    draws: int,
    rng: np.random.Generator,
    slack: float = 1e-9,
) -> DpBoundReport:
    """Empirically check the privacy inequality of the mechanism.

    For outputs E sampled from the mechanism applied to t1, the exact
    log-density ratio sum(|E - t2| - |E - t1|) / scale must not exceed
    epsilon_total * distance(t1, t2). Runs in 64-bit.
    """
    a1 = clamp_to_range(t1, s)
    a2 = clamp_to_range(t2, s)
    scales = noise_scales(s, b)
    sup = scales > 0
    d = tensor_distance(a1, a2, s)
    bound = b.epsilon_total * d
    max_ratio = -np.inf
    violations = 0
    for _ in range(draws):
        e = a1 + laplace_sample(scales, rng)
        ratio = float(
            np.sum((np.abs(e[sup] - a2[sup]) - np.abs(e[sup] - a1[sup])) / scales[sup])
        )
        if ratio > max_ratio:
            max_ratio = ratio
        if ratio > bound + slack:
            violations += 1
    if draws == 0:
        max_ratio = 0.0
    return DpBoundReport(
        draws=draws,
        violations=violations,
        max_log_ratio=max_ratio,
        bound=bound,
        distance=d,
        epsilon_total=b.epsilon_total,
    )
