"""Outcome panel data model, CSV ingestion, validation, and demeaning.

Panels are stored dense: one row per unit, one column per period, with the
treated unit always at row 0. The CSV interface is long format
(``unit,period,outcome[,x1,...,xK]``) with a required header row.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadT0Error,
    MissingCellError,
    PanelInvariantError,
    PanelParseError,
    UnknownTreatedError,
)

__all__ = [
    "PanelData",
    "DemeanedPanel",
    "PanelSchema",
    "load_panel",
    "save_panel",
    "demean",
]


@dataclass(frozen=True)
class PanelSchema:
    """Column-name bindings for the long-format CSV interface.

    ``period_type`` declares how period values sort: as integers or as
    lexicographic strings.
    """

    unit: str = "unit"
    period: str = "period"
    outcome: str = "outcome"
    covariates: tuple[str, ...] = ()
    period_type: str = "int"  # "int" | "str"

    def __post_init__(self):
        if self.period_type not in ("int", "str"):
            raise PanelParseError(
                f"period_type must be 'int' or 'str', got {self.period_type!r}"
            )


@dataclass(frozen=True)
class PanelData:
    """A (J+1) x T outcome panel with the treated unit at row 0.

    Immutable after construction; safe for concurrent reads.
    """

    units: tuple[str, ...]
    outcomes: np.ndarray  # shape (J+1, T)
    t0: int
    period_labels: tuple = ()
    covariates: np.ndarray | None = None  # shape (J+1, T, K)

    def __post_init__(self):
        outcomes = np.asarray(self.outcomes, dtype=float)
        outcomes.setflags(write=False)
        object.__setattr__(self, "outcomes", outcomes)
        object.__setattr__(self, "units", tuple(str(u) for u in self.units))
        if outcomes.ndim != 2:
            raise PanelInvariantError("outcomes must be a 2-D (units x periods) array")
        n_units, n_periods = outcomes.shape
        if len(self.units) != n_units:
            raise PanelInvariantError(
                f"{len(self.units)} unit ids for {n_units} outcome rows"
            )
        if len(set(self.units)) != n_units:
            raise PanelInvariantError("unit identifiers must be unique")
        if n_units < 2:
            raise PanelInvariantError("need at least one untreated unit (J >= 1)")
        if not self.period_labels:
            object.__setattr__(
                self, "period_labels", tuple(range(1, n_periods + 1))
            )
        else:
            object.__setattr__(self, "period_labels", tuple(self.period_labels))
        if len(self.period_labels) != n_periods:
            raise PanelInvariantError(
                f"{len(self.period_labels)} period labels for {n_periods} columns"
            )
        if not np.isfinite(outcomes).all():
            raise PanelInvariantError("outcomes contain missing or non-finite entries")
        if not (2 <= self.t0 < n_periods):
            raise BadT0Error(
                f"t0 must satisfy 2 <= t0 < T, got t0={self.t0} with T={n_periods}"
            )
        if self.covariates is not None:
            cov = np.asarray(self.covariates, dtype=float)
            if cov.ndim == 2:
                # one time-invariant value per unit and covariate, broadcast over periods
                cov = np.repeat(cov[:, None, :], n_periods, axis=1)
            if cov.shape[:2] != (n_units, n_periods):
                raise PanelInvariantError(
                    f"covariates shape {cov.shape} does not match panel "
                    f"({n_units} units x {n_periods} periods)"
                )
            if not np.isfinite(cov).all():
                raise PanelInvariantError("covariates contain non-finite entries")
            cov.setflags(write=False)
            object.__setattr__(self, "covariates", cov)

    @property
    def treated_unit(self) -> str:
        return self.units[0]

    @property
    def n_untreated(self) -> int:
        """J, the number of untreated units."""
        return len(self.units) - 1

    @property
    def n_periods(self) -> int:
        return self.outcomes.shape[1]

    @property
    def n_post(self) -> int:
        """T1, the number of post-intervention periods."""
        return self.n_periods - self.t0

    @property
    def n_covariates(self) -> int:
        return 0 if self.covariates is None else self.covariates.shape[2]

    @property
    def treated_outcomes(self) -> np.ndarray:
        return self.outcomes[0]

    @property
    def untreated_outcomes(self) -> np.ndarray:
        """Outcome rows for untreated units, shape (J, T)."""
        return self.outcomes[1:]

    @property
    def pre_periods(self) -> slice:
        return slice(0, self.t0)

    @property
    def post_periods(self) -> slice:
        return slice(self.t0, self.n_periods)

    def with_treated_outcomes(self, new_row: np.ndarray) -> "PanelData":
        """Return a copy of the panel with the treated outcome series replaced."""
        outcomes = self.outcomes.copy()
        outcomes[0] = np.asarray(new_row, dtype=float)
        return PanelData(
            units=self.units,
            outcomes=outcomes,
            t0=self.t0,
            period_labels=self.period_labels,
            covariates=self.covariates,
        )


@dataclass(frozen=True)
class DemeanedPanel:
    """A panel together with pre-period unit means and demeaned outcomes.

    ``demeaned_outcomes`` covers all T periods; the means are taken over the
    pre-period only.
    """

    base: PanelData
    unit_means: np.ndarray  # shape (J+1,)
    demeaned_outcomes: np.ndarray  # shape (J+1, T)

    def __post_init__(self):
        pre = self.demeaned_outcomes[:, : self.base.t0]
        if np.abs(pre.mean(axis=1)).max() > 1e-10:
            raise PanelInvariantError(
                "demeaned pre-period means are not zero within tolerance"
            )


def demean(panel: PanelData) -> DemeanedPanel:
    """Subtract each unit's pre-period mean from its full outcome series."""
    means = panel.outcomes[:, : panel.t0].mean(axis=1)
    return DemeanedPanel(
        base=panel,
        unit_means=means,
        demeaned_outcomes=panel.outcomes - means[:, None],
    )


def _parse_period(raw, schema: PanelSchema, row: int):
    if raw is None:
        raise PanelParseError("missing period value", row=row)
    if schema.period_type == "int":
        try:
            return int(raw)
        except ValueError:
            raise PanelParseError(f"period {raw!r} is not an integer", row=row)
    return raw


def load_panel(source, schema: PanelSchema, treated: str, t0: int) -> PanelData:
    """Load a long-format CSV into a PanelData.

    ``source`` is a path, a text stream, or a byte stream of UTF-8 CSV with a
    header row. Every (unit, period) pair must appear exactly once; the
    treated unit is moved to row 0 and the remaining units keep sorted order.
    """
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, "r", encoding="utf-8", newline="") as fh:
            return load_panel(fh, schema, treated, t0)
    if isinstance(source, (io.RawIOBase, io.BufferedIOBase)) or (
        hasattr(source, "read") and isinstance(source.read(0), bytes)
    ):
        source = io.TextIOWrapper(source, encoding="utf-8", newline="")

    reader = csv.DictReader(source)
    if reader.fieldnames is None:
        raise PanelParseError("empty CSV: missing header row")
    needed = [schema.unit, schema.period, schema.outcome, *schema.covariates]
    missing = [c for c in needed if c not in reader.fieldnames]
    if missing:
        raise PanelParseError(f"missing columns: {', '.join(missing)}")

    cells: dict[tuple[str, object], float] = {}
    covs: dict[tuple[str, object], tuple[float, ...]] = {}
    for row_no, row in enumerate(reader, start=2):
        unit = row[schema.unit]
        period = _parse_period(row[schema.period], schema, row_no)
        if unit is None or row[schema.outcome] in (None, ""):
            raise PanelParseError("incomplete row", row=row_no)
        try:
            outcome = float(row[schema.outcome])
        except ValueError:
            raise PanelParseError(
                f"outcome {row[schema.outcome]!r} is not a number", row=row_no
            )
        key = (unit, period)
        if key in cells:
            raise PanelParseError(
                f"duplicate (unit, period) pair ({unit!r}, {period!r})", row=row_no
            )
        cells[key] = outcome
        if schema.covariates:
            try:
                covs[key] = tuple(float(row[c]) for c in schema.covariates)
            except (TypeError, ValueError):
                raise PanelParseError("covariate value is not a number", row=row_no)

    if not cells:
        raise PanelParseError("CSV contains no data rows")
    units = sorted({u for u, _ in cells})
    periods = sorted({p for _, p in cells})
    if treated not in units:
        raise UnknownTreatedError(f"treated unit {treated!r} not present in CSV")
    units.remove(treated)
    units.insert(0, treated)

    for u in units:
        for p in periods:
            if (u, p) not in cells:
                raise MissingCellError(f"unit {u!r} has no row for period {p!r}")

    outcomes = np.array([[cells[(u, p)] for p in periods] for u in units])
    covariates = None
    if schema.covariates:
        covariates = np.array(
            [[covs[(u, p)] for p in periods] for u in units]
        )
    return PanelData(
        units=tuple(units),
        outcomes=outcomes,
        t0=t0,
        period_labels=tuple(periods),
        covariates=covariates,
    )


def save_panel(panel: PanelData, target, schema: PanelSchema | None = None) -> None:
    """Write a panel as long-format CSV that round-trips bitwise through load_panel.

    Floats are written with ``repr``, which Python guarantees to parse back to
    the identical double.
    """
    if schema is None:
        schema = PanelSchema(
            covariates=tuple(f"x{k + 1}" for k in range(panel.n_covariates))
        )
    if len(schema.covariates) != panel.n_covariates:
        raise PanelParseError(
            f"schema declares {len(schema.covariates)} covariates, "
            f"panel has {panel.n_covariates}"
        )
    if isinstance(target, (str, bytes)) or hasattr(target, "__fspath__"):
        with open(target, "w", encoding="utf-8", newline="") as fh:
            save_panel(panel, fh, schema)
        return
    writer = csv.writer(target)
    writer.writerow([schema.unit, schema.period, schema.outcome, *schema.covariates])
    for i, unit in enumerate(panel.units):
        for j, period in enumerate(panel.period_labels):
            row = [unit, period, repr(float(panel.outcomes[i, j]))]
            if panel.covariates is not None:
                row.extend(repr(float(v)) for v in panel.covariates[i, j])
            writer.writerow(row)
