"""Distributional treatment effects: counterfactual bootstrap, quantiles, MMD.

The bootstrap targets the pooled post-period counterfactual density: each
draw resamples one post-period value from every untreated unit, then keeps
the value of a unit selected with the fitted weights. All randomness flows
through an explicit 64-bit seed; there is no global RNG state. Parallel
replications must derive distinct child seeds (see ``synthctl.seeding``).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import BadProbError, DimensionMismatchError, EmptyPostError
from .panel import PanelData
from .solver import WeightVector

__all__ = [
    "BootstrapSample",
    "MmdReport",
    "bootstrap_counterfactual",
    "quantiles",
    "mmd_squared",
    "mmd_test",
    "save_draws",
]

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class BootstrapSample:
    draws: np.ndarray
    l: int
    seed: int
    weights_used: WeightVector

    def __post_init__(self):
        d = np.asarray(self.draws, dtype=float)
        d.setflags(write=False)
        object.__setattr__(self, "draws", d)


@dataclass(frozen=True)
class MmdReport:
    mmd2: float
    p_value: float
    bandwidth: float
    permutations: int

    def to_json_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "mmd2": self.mmd2,
            "p_value": self.p_value,
            "bandwidth": self.bandwidth,
            "permutations": self.permutations,
        }


def bootstrap_counterfactual(
    panel: PanelData, weights: WeightVector, l: int, seed: int
) -> BootstrapSample:
    """Resample L counterfactual outcome draws from the post-period panel.

    For each draw: (i) one post-period outcome is resampled uniformly from
    every untreated unit's post series; (ii) one unit is selected with the
    fitted weight probabilities and its resampled value is kept. When the
    weights carry an intercept (demeaned fit), the intercept is added to
    every draw so the sample targets the shifted counterfactual density; the
    raw-mixture bootstrap corresponds to intercept-free weights.
    """
    if l <= 1:
        raise DimensionMismatchError(f"need l > 1 draws, got {l}")
    t1 = panel.n_post
    if t1 == 0:
        raise EmptyPostError("panel has no post-intervention periods")
    post = panel.untreated_outcomes[:, panel.t0 :]  # (J, T1)
    j = post.shape[0]
    w = weights.weights
    if w.shape[0] != j:
        raise DimensionMismatchError(
            f"{w.shape[0]} weights for {j} untreated units"
        )
    rng = np.random.default_rng(seed)
    # step (i): per-unit uniform resample for every draw
    per_unit = rng.integers(0, t1, size=(l, j))
    # step (ii): unit selection with the weight probabilities
    cum = np.cumsum(w)
    cum[-1] = 1.0
    units = np.searchsorted(cum, rng.random(l), side="right")
    units = np.minimum(units, j - 1)
    draws = post[units, per_unit[np.arange(l), units]]
    if weights.intercept is not None:
        draws = draws + weights.intercept
    return BootstrapSample(draws=draws, l=l, seed=seed, weights_used=weights)


def quantiles(sample: BootstrapSample, probs) -> list[float]:
    """Empirical quantiles with linear interpolation between order statistics."""
    probs = list(probs)
    if not probs:
        raise BadProbError("probs must be non-empty")
    for p in probs:
        if not (0.0 < p < 1.0):
            raise BadProbError(f"quantile probability {p} outside (0, 1)")
    if any(b < a for a, b in zip(probs, probs[1:])):
        raise BadProbError("probs must be sorted ascending")
    return [float(q) for q in np.quantile(sample.draws, probs)]


def save_draws(sample: BootstrapSample, target) -> None:
    """Write the bootstrap draws as a one-column CSV."""
    if isinstance(target, (str, bytes)) or hasattr(target, "__fspath__"):
        with open(target, "w", encoding="utf-8", newline="") as fh:
            save_draws(sample, fh)
        return
    writer = csv.writer(target)
    writer.writerow(["draw"])
    for value in sample.draws:
        writer.writerow([repr(float(value))])


def _median_bandwidth(pooled: np.ndarray) -> float:
    diffs = np.abs(pooled[:, None] - pooled[None, :])
    iu = np.triu_indices(pooled.shape[0], k=1)
    med = float(np.median(diffs[iu]))
    return med if med > 0 else 1.0


def _mmd2_terms(kernel: np.ndarray, mask: np.ndarray, n_a: int, n_b: int) -> float:
    """Unbiased squared MMD from a pooled kernel matrix and a sample-A mask."""
    z = mask.astype(float)
    zb = 1.0 - z
    kz = kernel @ z
    kzb = kernel.sum(axis=1) - kz
    quad_a = float(z @ kz) - n_a  # remove the unit diagonal
    quad_b = float(zb @ kzb) - n_b
    cross = float(z @ kzb)
    return (
        quad_a / (n_a * (n_a - 1))
        + quad_b / (n_b * (n_b - 1))
        - 2.0 * cross / (n_a * n_b)
    )


def mmd_squared(a, b, bandwidth: float | None = None) -> float:
    """Unbiased squared-MMD estimate with a Gaussian kernel (no test).

    The bandwidth defaults to the median pairwise distance of the pooled
    sample.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    n_a, n_b = a.shape[0], b.shape[0]
    if n_a < 2 or n_b < 2:
        raise DimensionMismatchError("both samples need at least 2 observations")
    pooled = np.concatenate([a, b])
    h = _median_bandwidth(pooled) if bandwidth is None else float(bandwidth)
    sq = (pooled[:, None] - pooled[None, :]) ** 2
    kernel = np.exp(-sq / (2.0 * h * h))
    mask = np.zeros(pooled.shape[0], dtype=bool)
    mask[:n_a] = True
    return _mmd2_terms(kernel, mask, n_a, n_b)


def mmd_test(a, b, permutations: int = 500, seed: int = 0) -> MmdReport:
    """Gaussian-kernel two-sample homogeneity test with a permutation p-value.

    Uses the unbiased squared-MMD estimate and the median-heuristic bandwidth
    on the pooled sample (permutation-invariant, so exchangeability under the
    null is preserved). The p-value is (1 + #{permuted >= observed}) divided
    by (permutations + 1), hence always at least 1/(permutations + 1).
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    n_a, n_b = a.shape[0], b.shape[0]
    if n_a < 2 or n_b < 2:
        raise DimensionMismatchError("both samples need at least 2 observations")
    if permutations < 1:
        raise DimensionMismatchError("need at least one permutation")
    pooled = np.concatenate([a, b])
    n = n_a + n_b
    h = _median_bandwidth(pooled)
    sq = (pooled[:, None] - pooled[None, :]) ** 2
    kernel = np.exp(-sq / (2.0 * h * h))

    base_mask = np.zeros(n, dtype=bool)
    base_mask[:n_a] = True
    observed = _mmd2_terms(kernel, base_mask, n_a, n_b)

    rng = np.random.default_rng(seed)
    # all permutation masks at once: one matmul instead of a Python loop
    masks = np.zeros((n, permutations))
    for col in range(permutations):
        masks[rng.permutation(n)[:n_a], col] = 1.0
    kz = kernel @ masks
    row_sums = kernel.sum(axis=1)
    quad_a = np.einsum("ij,ij->j", masks, kz) - n_a
    zb = 1.0 - masks
    kzb = row_sums[:, None] - kz
    quad_b = np.einsum("ij,ij->j", zb, kzb) - n_b
    cross = np.einsum("ij,ij->j", masks, kzb)
    stats = (
        quad_a / (n_a * (n_a - 1))
        + quad_b / (n_b * (n_b - 1))
        - 2.0 * cross / (n_a * n_b)
    )
    exceed = int(np.count_nonzero(stats >= observed))
    p = (1 + exceed) / (permutations + 1)
    return MmdReport(
        mmd2=observed, p_value=p, bandwidth=h, permutations=permutations
    )
