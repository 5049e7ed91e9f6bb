"""Simulation DGPs and replication runners for estimator benchmarking.

The core generator draws each untreated unit's outcome from a per-period
normal whose mean and variance follow random walks (the variance increment is
floored so spread never shrinks), covariates from time-invariant normals, and
the treated unit from the weight-mixture of the untreated densities, with a
constant effect added after the intervention. Replication studies sweep the
number of untreated units and the number of moment orders, record per-fit
error metrics, and aggregate medians and quartiles. Every replication derives
its own RNG stream from (base seed, cell index, replication index), so
results do not depend on worker scheduling.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .dte import bootstrap_counterfactual, mmd_squared
from .errors import BadConfigError, SynthctlError
from .estimators import (
    BiasLimitInput,
    Method,
    fit_dmscm,
    fit_method,
    ls_bias_limit,
)
from .moments import MomentConfig
from .panel import PanelData
from .seeding import derive_seed
from .solver import ls_unconstrained

__all__ = [
    "MixtureDgpConfig",
    "DgpTruth",
    "gen_mixture_dgp",
    "sample_true_post_mixture",
    "StudySpec",
    "ReplicationRecord",
    "CellAggregate",
    "ReplicationResult",
    "run_replication_study",
    "Theorem1Spec",
    "theorem1_experiment",
    "figure2_spec",
    "appendix_d_spec",
]

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class MixtureDgpConfig:
    """Mixture-panel generator settings.

    Outcome means and variances random-walk over time with increment variance
    ``drift_var`` (an increment standard deviation instead when
    ``drift_is_sd`` is set). The variance walk is kept positive by
    ``var_floor``: in ``"level"`` mode the variance itself is floored, so it
    can shrink but never drops below the floor; in ``"increment"`` mode every
    increment below the floor is replaced by it, so variance never decreases.
    ``stationary=True`` freezes all parameters at their initial draws, which
    is the regime the consistency and conformal-validity theory assumes.
    """

    j: int = 10
    t0: int = 30
    t1: int = 100
    k: int = 5
    tau: float = 20.0
    var_init_range: tuple[float, float] = (1.0, 20.0)
    drift_var: float = 10.0
    drift_is_sd: bool = False
    var_floor: float = 0.1
    var_floor_mode: str = "level"  # "level" | "increment"
    stationary: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.j < 1:
            raise BadConfigError("need at least one untreated unit")
        if self.t0 < 2 or self.t1 < 1:
            raise BadConfigError("need t0 >= 2 and t1 >= 1")
        if self.var_init_range[0] <= 0:
            raise BadConfigError("initial variances must be positive")
        if self.k < 0:
            raise BadConfigError("covariate dimension must be >= 0")
        if self.var_floor_mode not in ("level", "increment"):
            raise BadConfigError("var_floor_mode must be 'level' or 'increment'")
        if self.var_floor <= 0:
            raise BadConfigError("var_floor must be positive")


@dataclass(frozen=True)
class DgpTruth:
    """Ground truth behind a generated panel: weights, effect, parameter paths."""

    w_star: np.ndarray  # (J,)
    tau: float
    means: np.ndarray  # (J, T, K+1); coordinate 0 is the outcome
    variances: np.ndarray  # (J, T, K+1)


def gen_mixture_dgp(cfg: MixtureDgpConfig) -> tuple[PanelData, DgpTruth]:
    """Generate one mixture panel and its ground truth, deterministically."""
    rng = np.random.default_rng(cfg.seed)
    j, t, k = cfg.j, cfg.t0 + cfg.t1, cfg.k
    coords = k + 1

    w_star = rng.uniform(size=j)
    w_star = w_star / w_star.sum()

    means = np.empty((j, t, coords))
    variances = np.empty((j, t, coords))
    means[:, 0, :] = rng.standard_normal((j, coords))
    variances[:, 0, :] = rng.uniform(*cfg.var_init_range, size=(j, coords))
    # covariate coordinates stay at their initial parameters
    means[:, 1:, :] = means[:, :1, :]
    variances[:, 1:, :] = variances[:, :1, :]
    if not cfg.stationary:
        drift_sd = cfg.drift_var if cfg.drift_is_sd else np.sqrt(cfg.drift_var)
        mean_steps = drift_sd * rng.standard_normal((j, t - 1))
        var_steps = drift_sd * rng.standard_normal((j, t - 1))
        means[:, 1:, 0] = means[:, :1, 0] + np.cumsum(mean_steps, axis=1)
        if cfg.var_floor_mode == "increment":
            var_steps = np.maximum(var_steps, cfg.var_floor)
            variances[:, 1:, 0] = variances[:, :1, 0] + np.cumsum(var_steps, axis=1)
        else:
            v = variances[:, 0, 0].copy()
            for step in range(1, t):
                v = np.maximum(v + var_steps[:, step - 1], cfg.var_floor)
                variances[:, step, 0] = v

    sds = np.sqrt(variances)
    untreated = means + sds * rng.standard_normal((j, t, coords))

    components = rng.choice(j, size=t, p=w_star)
    z = rng.standard_normal((t, coords))
    treated = means[components, np.arange(t), :] + sds[components, np.arange(t), :] * z
    treated[cfg.t0 :, 0] += cfg.tau

    outcomes = np.vstack([treated[None, :, 0], untreated[:, :, 0]])
    covariates = None
    if k > 0:
        covariates = np.concatenate(
            [treated[None, :, 1:], untreated[:, :, 1:]], axis=0
        )
    units = ["treated"] + [f"u{i + 1}" for i in range(j)]
    panel = PanelData(
        units=tuple(units), outcomes=outcomes, t0=cfg.t0, covariates=covariates
    )
    return panel, DgpTruth(
        w_star=w_star, tau=cfg.tau, means=means, variances=variances
    )


def sample_true_post_mixture(
    truth: DgpTruth, t0: int, n: int, seed: int
) -> np.ndarray:
    """Fresh counterfactual outcome draws from the pooled post-period mixture."""
    rng = np.random.default_rng(seed)
    t = truth.means.shape[1]
    periods = rng.integers(t0, t, size=n)
    units = rng.choice(truth.w_star.shape[0], size=n, p=truth.w_star)
    mu = truth.means[units, periods, 0]
    sd = np.sqrt(truth.variances[units, periods, 0])
    return mu + sd * rng.standard_normal(n)


@dataclass(frozen=True)
class StudySpec:
    """A replication study: a (J, G) grid of DGP cells fit by several methods."""

    j_values: tuple[int, ...] = (10,)
    g_values: tuple[int, ...] = (2, 5, 10)
    methods: tuple[Method, ...] = (Method.DMSCM, Method.ABADIE)
    replications: int = 100
    t0: int = 30
    t1: int = 100
    k: int = 5
    tau: float = 20.0
    drift_var: float = 10.0
    var_floor: float = 0.1
    var_floor_mode: str = "level"
    stationary: bool = False
    include_covariates: bool = True
    scaling: str = "max_abs"
    compute_mmd: bool = False
    mmd_draws: int = 500
    base_seed: int = 0
    x_axis: str = "g"  # which grid variable the figure CSV varies

    def __post_init__(self):
        object.__setattr__(
            self, "methods", tuple(Method(m) for m in self.methods)
        )
        if self.replications < 1:
            raise BadConfigError("need at least one replication")
        if self.x_axis not in ("g", "j"):
            raise BadConfigError("x_axis must be 'g' or 'j'")
        if self.k == 0 and self.include_covariates:
            # nothing to include when the DGP generates no covariates
            object.__setattr__(self, "include_covariates", False)

    def dgp_config(self, j: int, seed: int) -> MixtureDgpConfig:
        return MixtureDgpConfig(
            j=j,
            t0=self.t0,
            t1=self.t1,
            k=self.k,
            tau=self.tau,
            drift_var=self.drift_var,
            var_floor=self.var_floor,
            var_floor_mode=self.var_floor_mode,
            stationary=self.stationary,
            seed=seed,
        )


@dataclass(frozen=True)
class ReplicationRecord:
    j: int
    g: int
    method: Method
    replication: int
    seed: int
    att_error: float | None  # mean over post periods of |tau_hat_t - tau|
    mean_att_error: float | None  # |mean post-period tau_hat - tau|
    weight_error: float | None
    mmd_to_truth: float | None
    runtime_s: float | None
    error: str | None = None


@dataclass(frozen=True)
class CellAggregate:
    j: int
    g: int
    method: Method
    n: int
    att_error_median: float
    att_error_q25: float
    att_error_q75: float
    mean_att_error_median: float
    mean_att_error_q25: float
    mean_att_error_q75: float
    weight_error_median: float
    weight_error_q25: float
    weight_error_q75: float
    mmd_median: float | None


@dataclass(frozen=True)
class ReplicationResult:
    spec: StudySpec
    records: tuple[ReplicationRecord, ...]
    aggregates: tuple[CellAggregate, ...]

    def aggregates_json_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "cells": [
                {
                    "j": a.j,
                    "g": a.g,
                    "method": a.method.value,
                    "n": a.n,
                    "att_error": {
                        "median": a.att_error_median,
                        "q25": a.att_error_q25,
                        "q75": a.att_error_q75,
                    },
                    "mean_att_error": {
                        "median": a.mean_att_error_median,
                        "q25": a.mean_att_error_q25,
                        "q75": a.mean_att_error_q75,
                    },
                    "weight_error": {
                        "median": a.weight_error_median,
                        "q25": a.weight_error_q25,
                        "q75": a.weight_error_q75,
                    },
                    "mmd_median": a.mmd_median,
                }
                for a in self.aggregates
            ],
        }

    def save_records_csv(self, target) -> None:
        """Write the raw records; excludes wall-clock runtimes so the file is
        bit-reproducible for a fixed base seed."""
        if isinstance(target, (str, bytes)) or hasattr(target, "__fspath__"):
            with open(target, "w", encoding="utf-8", newline="") as fh:
                self.save_records_csv(fh)
            return
        writer = csv.writer(target)
        writer.writerow(
            [
                "j",
                "g",
                "method",
                "replication",
                "seed",
                "att_error",
                "mean_att_error",
                "weight_error",
                "mmd_to_truth",
                "error",
            ]
        )
        for r in self.records:
            writer.writerow(
                [
                    r.j,
                    r.g,
                    r.method.value,
                    r.replication,
                    r.seed,
                    "" if r.att_error is None else repr(r.att_error),
                    "" if r.mean_att_error is None else repr(r.mean_att_error),
                    "" if r.weight_error is None else repr(r.weight_error),
                    "" if r.mmd_to_truth is None else repr(r.mmd_to_truth),
                    r.error or "",
                ]
            )

    def save_figure_csv(self, target) -> None:
        """Per-figure curve data: x, method, median, q25, q75 of the ATT error."""
        if isinstance(target, (str, bytes)) or hasattr(target, "__fspath__"):
            with open(target, "w", encoding="utf-8", newline="") as fh:
                self.save_figure_csv(fh)
            return
        writer = csv.writer(target)
        writer.writerow(["x", "method", "median", "q25", "q75"])
        for a in self.aggregates:
            x = a.g if self.spec.x_axis == "g" else a.j
            writer.writerow(
                [
                    x,
                    a.method.value,
                    repr(a.mean_att_error_median),
                    repr(a.mean_att_error_q25),
                    repr(a.mean_att_error_q75),
                ]
            )


def _fit_record(
    spec: StudySpec,
    panel: PanelData,
    truth: DgpTruth,
    j: int,
    g: int,
    method: Method,
    replication: int,
    seed: int,
    mmd_index: int,
) -> ReplicationRecord:
    start = time.perf_counter()
    try:
        fit = fit_method(
            panel,
            method,
            MomentConfig(
                g=g, include_covariates=spec.include_covariates, scaling=spec.scaling
            ),
        )
        att_error = float(np.mean(np.abs(fit.att - truth.tau)))
        mean_att_error = float(abs(fit.att.mean() - truth.tau))
        weight_error = float(np.abs(fit.weights.weights - truth.w_star).max())
        mmd_val = None
        if spec.compute_mmd:
            boot = bootstrap_counterfactual(
                panel, fit.weights, spec.mmd_draws, derive_seed(seed, 1, mmd_index)
            )
            fresh = sample_true_post_mixture(
                truth, spec.t0, spec.mmd_draws, derive_seed(seed, 2, mmd_index)
            )
            mmd_val = mmd_squared(boot.draws, fresh)
        return ReplicationRecord(
            j,
            g,
            method,
            replication,
            seed,
            att_error,
            mean_att_error,
            weight_error,
            mmd_val,
            time.perf_counter() - start,
        )
    except SynthctlError as exc:
        return ReplicationRecord(
            j, g, method, replication, seed, None, None, None, None, None, str(exc)
        )


# methods whose fit does not depend on the number of moment orders
_G_INVARIANT = {Method.ABADIE, Method.FP_DEMEANED, Method.OLS}


def _run_replication(
    spec: StudySpec, j_index: int, j: int, replication: int
) -> list[ReplicationRecord]:
    """All fits for one generated panel: every g cell, every method.

    One panel is shared across the g grid and the methods, so comparisons
    between cells are paired (common random numbers).
    """
    seed = derive_seed(spec.base_seed, j_index, replication)
    panel, truth = gen_mixture_dgp(spec.dgp_config(j, seed))
    records: list[ReplicationRecord] = []
    invariant_cache: dict[Method, ReplicationRecord] = {}
    for g_index, g in enumerate(spec.g_values):
        for m_index, method in enumerate(spec.methods):
            if method in _G_INVARIANT and method in invariant_cache:
                cached = invariant_cache[method]
                records.append(replace(cached, g=g))
                continue
            rec = _fit_record(
                spec,
                panel,
                truth,
                j,
                g,
                method,
                replication,
                seed,
                mmd_index=g_index * len(spec.methods) + m_index,
            )
            if method in _G_INVARIANT:
                invariant_cache[method] = rec
            records.append(rec)
    return records


def run_replication_study(spec: StudySpec, threads: int = 1) -> ReplicationResult:
    """Run the full replication grid and aggregate the error records.

    Individual replication failures are recorded, not fatal; the study raises
    only when more than 10% of its records carry an error.
    """
    tasks = [
        (j_index, j, r)
        for j_index, j in enumerate(spec.j_values)
        for r in range(spec.replications)
    ]

    def run(task):
        return _run_replication(spec, *task)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(run, tasks))
    else:
        chunks = [run(t) for t in tasks]
    records = tuple(rec for chunk in chunks for rec in chunk)

    failed = sum(1 for r in records if r.error is not None)
    if records and failed > 0.10 * len(records):
        raise SynthctlError(
            f"{failed} of {len(records)} replication fits failed"
        )

    aggregates = []
    cells = [(j, g) for j in spec.j_values for g in spec.g_values]
    for j, g in cells:
        for method in spec.methods:
            ok = [
                r
                for r in records
                if r.j == j and r.g == g and r.method == method and r.error is None
            ]
            if not ok:
                continue
            att = np.array([r.att_error for r in ok])
            matt = np.array([r.mean_att_error for r in ok])
            west = np.array([r.weight_error for r in ok])
            mmds = [r.mmd_to_truth for r in ok if r.mmd_to_truth is not None]
            aggregates.append(
                CellAggregate(
                    j=j,
                    g=g,
                    method=method,
                    n=len(ok),
                    att_error_median=float(np.median(att)),
                    att_error_q25=float(np.quantile(att, 0.25)),
                    att_error_q75=float(np.quantile(att, 0.75)),
                    mean_att_error_median=float(np.median(matt)),
                    mean_att_error_q25=float(np.quantile(matt, 0.25)),
                    mean_att_error_q75=float(np.quantile(matt, 0.75)),
                    weight_error_median=float(np.median(west)),
                    weight_error_q25=float(np.quantile(west, 0.25)),
                    weight_error_q75=float(np.quantile(west, 0.75)),
                    mmd_median=float(np.median(mmds)) if mmds else None,
                )
            )
    return ReplicationResult(
        spec=spec, records=records, aggregates=tuple(aggregates)
    )


@dataclass(frozen=True)
class Theorem1Spec:
    """Measurement-error experiment contrasting least squares with moment matching.

    Each untreated unit's observed outcome is a noiseless i.i.d. mean draw
    (second moment from ``q_diag``) plus independent measurement noise
    (variance from ``sigma_diag``). The treated outcome reuses one unit's mean
    realization, selected with probability ``w_star``, plus fresh noise of
    that unit's variance: marginally an exact mixture of the untreated
    densities, yet correlated with the regressors exactly as the attenuation
    bias requires. Mean draws are standardized gammas with unit-specific
    shape, so units with identical variances still differ in higher moments
    and stay separable by moment matching.
    """

    w_star: tuple[float, ...] = (0.5, 0.5)
    q_diag: tuple[float, ...] = (1.0, 1.0)
    sigma_diag: tuple[float, ...] = (1.0, 1.0)
    t0_large: int = 100_000
    seed: int = 0
    replications: int = 100
    g: int = 4

    def __post_init__(self):
        if not (
            len(self.w_star) == len(self.q_diag) == len(self.sigma_diag)
        ):
            raise BadConfigError("w_star, q_diag, sigma_diag must share a length")
        if self.t0_large < 2:
            raise BadConfigError("t0_large must be at least 2")


def _theorem1_panel(spec: Theorem1Spec, seed: int) -> PanelData:
    rng = np.random.default_rng(seed)
    j = len(spec.w_star)
    t = spec.t0_large + 1  # one throwaway post period
    w = np.asarray(spec.w_star)
    q = np.asarray(spec.q_diag)
    s = np.asarray(spec.sigma_diag)
    # unit j's mean distribution: a centered gamma with unit-specific shape
    # and alternating skew sign, scaled to variance q_j; distinct shapes keep
    # the mixture components apart
    shapes = np.arange(1.0, j + 1.0)
    signs = np.where(np.arange(j) % 2 == 0, 1.0, -1.0)
    gam = rng.gamma(shape=shapes[:, None], scale=1.0, size=(j, t))
    mu = (
        signs[:, None]
        * (gam - shapes[:, None])
        / np.sqrt(shapes)[:, None]
        * np.sqrt(q)[:, None]
    )
    noise = np.sqrt(s)[:, None] * rng.standard_normal((j, t))
    untreated = mu + noise
    cum = np.cumsum(w / w.sum())
    cum[-1] = 1.0
    comp = np.searchsorted(cum, rng.random(t), side="right")
    comp = np.minimum(comp, j - 1)
    treated = mu[comp, np.arange(t)] + np.sqrt(s[comp]) * rng.standard_normal(t)
    outcomes = np.vstack([treated[None, :], untreated])
    units = ["treated"] + [f"u{i + 1}" for i in range(j)]
    return PanelData(units=tuple(units), outcomes=outcomes, t0=spec.t0_large)


def theorem1_experiment(spec: Theorem1Spec) -> dict:
    """Average the least-squares and moment-matching weights over replications.

    Returns the replication means alongside the analytic least-squares limit,
    so the attenuation bias and its absence under moment matching are directly
    comparable.
    """
    ols_sum = np.zeros(len(spec.w_star))
    gmm_sum = np.zeros(len(spec.w_star))
    cfg = MomentConfig(g=spec.g, scaling="pooled_sd")
    for rep in range(spec.replications):
        panel = _theorem1_panel(spec, derive_seed(spec.seed, rep))
        ols_sum += ls_unconstrained(panel)
        gmm_sum += fit_dmscm(panel, cfg).weights.weights
    limit = ls_bias_limit(
        BiasLimitInput(
            q_star=np.asarray(spec.q_diag),
            sigma=np.asarray(spec.sigma_diag),
            w_star=np.asarray(spec.w_star),
        )
    )
    return {
        "schema_version": SCHEMA_VERSION,
        "ols_mean": (ols_sum / spec.replications).tolist(),
        "gmm_mean": (gmm_sum / spec.replications).tolist(),
        "predicted_limit": limit.tolist(),
        "w_star": list(spec.w_star),
        "replications": spec.replications,
    }


def figure2_spec(replications: int = 100, base_seed: int = 0, **overrides) -> StudySpec:
    """The main simulation grid: J=10, G in {2,5,10}, T0=30, T1=100."""
    spec = StudySpec(
        j_values=(10,),
        g_values=(2, 5, 10),
        methods=(Method.DMSCM, Method.ABADIE),
        replications=replications,
        t0=30,
        t1=100,
        k=5,
        tau=20.0,
        base_seed=base_seed,
        x_axis="g",
    )
    return replace(spec, **overrides) if overrides else spec


def appendix_d_spec(
    replications: int = 100, base_seed: int = 0, **overrides
) -> StudySpec:
    """The varying-J study: error and MMD curves as the donor pool grows."""
    spec = StudySpec(
        j_values=(1, 5, 10, 15, 20, 25, 30, 35, 40, 45, 50),
        g_values=(2, 3, 5, 10),
        methods=(Method.DMSCM, Method.ABADIE),
        replications=replications,
        t0=30,
        t1=1000,
        k=5,
        tau=20.0,
        base_seed=base_seed,
        x_axis="j",
    )
    return replace(spec, **overrides) if overrides else spec
