"""Panel ingestion and stacked design assembly.

A panel holds ``N + 1`` units (treated unit first) observed over ``T0 + T1``
periods on ``M`` features.  :func:`build_design` stacks the pre-treatment
block into the least-squares problem ``min ||A - B w - C r||^2`` with
feature-major row order: row ``t + l * T0`` is feature ``l`` at pre-period
``t`` (0-based).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .constraints import ConstraintSpec, parse_constraint
from .errors import ConfigError, DataError, SchemaError

__all__ = [
    "PanelDataset",
    "SCDesign",
    "PredictorVector",
    "REGIMES",
    "load_panel",
    "write_panel",
    "build_design",
    "build_predictor",
    "unstack",
    "transform_panel",
    "scaling_diagonal",
]

LOGGER = logging.getLogger(__name__)

REGIMES = ("iid", "weakly_dependent", "cointegration")

DEFAULT_SCHEMA = {"unit": "unit", "period": "period", "feature": "feature", "value": "value"}


@dataclass(frozen=True)
class PanelDataset:
    """Balanced panel; ``values[i, t, l]`` is feature ``l`` of unit ``i`` at period ``t``."""

    unit_ids: tuple
    periods: tuple
    feature_labels: tuple
    values: np.ndarray
    T0: int

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if vals.shape != (len(self.unit_ids), len(self.periods), len(self.feature_labels)):
            raise DataError(f"values shape {vals.shape} does not match labels")
        if len(self.unit_ids) < 2:
            raise DataError("panel needs a treated unit and at least one donor")
        if not 1 <= self.T0 < len(self.periods):
            raise DataError(f"T0={self.T0} leaves no pre- or post-treatment period")
        per = list(self.periods)
        if any(not (a < b) for a, b in zip(per, per[1:])):
            raise DataError("periods must be strictly increasing")

    @property
    def N(self) -> int:
        return len(self.unit_ids) - 1

    @property
    def M(self) -> int:
        return len(self.feature_labels)

    @property
    def T1(self) -> int:
        return len(self.periods) - self.T0

    @property
    def treated(self):
        return self.unit_ids[0]

    def feature_index(self, label) -> int:
        try:
            return self.feature_labels.index(label)
        except ValueError:
            raise ConfigError(f"feature {label!r} not in panel (have {list(self.feature_labels)})") from None

    def period_index(self, period) -> int:
        for i, p in enumerate(self.periods):
            if p == period or str(p) == str(period):
                return i
        raise DataError(f"period {period!r} not in panel")

    @classmethod
    def from_array(cls, values, T0, unit_ids=None, periods=None, feature_labels=None):
        """Wrap a ``(units, periods)`` or ``(units, periods, features)`` array."""
        values = np.asarray(values, dtype=float)
        if values.ndim == 2:
            values = values[:, :, None]
        n_units, n_per, n_feat = values.shape
        unit_ids = tuple(unit_ids) if unit_ids is not None else tuple(range(1, n_units + 1))
        periods = tuple(periods) if periods is not None else tuple(range(1, n_per + 1))
        if feature_labels is None:
            feature_labels = ("y",) if n_feat == 1 else tuple(f"x{l + 1}" for l in range(n_feat))
        return cls(unit_ids, periods, tuple(feature_labels), values, int(T0))


@dataclass(frozen=True)
class SCDesign:
    """Stacked estimation problem.

    ``C`` is block diagonal with ``K[l]`` control columns for equation ``l``.
    ``D`` is stored as its diagonal.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    constraint: ConstraintSpec
    regime: str
    T0: int
    features: tuple
    K: tuple
    donor_ids: tuple = ()
    weights: tuple = ()

    def __post_init__(self):
        for name in ("A", "B", "C", "D"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = self.A.shape[0]
        if self.B.shape[0] != n or self.C.shape[0] != n or n != self.T0 * self.M:
            raise DataError("A, B, C must all have T0*M rows")
        if self.D.shape != (self.d,):
            raise DataError(f"D must have {self.d} diagonal entries")
        if np.any(self.D <= 0):
            raise DataError("D diagonal must be strictly positive")
        if self.regime not in REGIMES:
            raise ConfigError(f"unknown regime {self.regime!r}")

    @property
    def M(self) -> int:
        return len(self.features)

    @property
    def J(self) -> int:
        return self.B.shape[1]

    @property
    def KM(self) -> int:
        return self.C.shape[1]

    @property
    def d(self) -> int:
        return self.J + self.KM

    @property
    def Z(self) -> np.ndarray:
        return np.hstack([self.B, self.C])

    @property
    def equation(self) -> np.ndarray:
        """Equation index of every stacked row."""
        return np.repeat(np.arange(self.M), self.T0)

    def to_dict(self) -> dict:
        return {
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "C": self.C.tolist(),
            "D": np.diag(self.D).tolist(),
            "constraint": self.constraint.to_string(),
            "regime": self.regime,
            "T0": self.T0,
            "features": list(self.features),
            "K": list(self.K),
            "donor_ids": [str(u) for u in self.donor_ids],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SCDesign":
        try:
            D = np.asarray(data["D"], dtype=float)
            C = np.asarray(data["C"], dtype=float)
            A = np.asarray(data["A"], dtype=float)
            return cls(
                A=A,
                B=np.asarray(data["B"], dtype=float),
                C=C.reshape(A.shape[0], -1),
                D=np.diag(D) if D.ndim == 2 else D,
                constraint=parse_constraint(data.get("constraint", "simplex")),
                regime=data.get("regime", "iid"),
                T0=int(data["T0"]),
                features=tuple(data.get("features", ("y",))),
                K=tuple(data.get("K", (C.shape[1],) if C.size else (0,))),
                donor_ids=tuple(data.get("donor_ids", ())),
            )
        except KeyError as exc:
            raise SchemaError(f"design file lacks key {exc}") from None

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "SCDesign":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class PredictorVector:
    x: np.ndarray
    g: np.ndarray
    period: object = None
    y1_observed: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float).ravel())
        object.__setattr__(self, "g", np.asarray(self.g, dtype=float).ravel())

    @property
    def p(self) -> np.ndarray:
        return np.concatenate([self.x, self.g])


# --------------------------------------------------------------------- loading


def _coerce_periods(raw: pd.Series) -> pd.Series:
    num = pd.to_numeric(raw, errors="coerce")
    if num.notna().all():
        if np.all(num == np.round(num)):
            return num.astype(np.int64)
        return num
    return raw.astype(str)


def _parse_values(raw: pd.Series) -> np.ndarray:
    stripped = raw.astype(str).str.strip()
    num = pd.to_numeric(stripped.where(stripped != "", None), errors="coerce")
    bad = num.isna() & raw.notna() & (stripped != "") & (stripped.str.lower() != "nan")
    if bad.any():
        pos = int(np.flatnonzero(bad.to_numpy())[0])
        raise DataError(f"non-numeric value {raw.iloc[pos]!r} at data row {pos + 1} (file line {pos + 2})")
    return num.to_numpy(dtype=float)


def load_panel(csv_path, schema: dict | None = None) -> PanelDataset:
    """Read a panel CSV.

    ``schema`` keys: ``unit``/``period``/``feature``/``value`` column names,
    ``treated_unit`` (required), and either ``T0`` or ``treatment_period``
    (first post-treatment period).  ``wide=True`` reads one column per
    feature instead of ``feature``/``value`` columns.  ``fill="locf"``
    carries the last observation forward inside each unit/feature series.
    """
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    path = Path(csv_path)
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    if "treated_unit" not in schema:
        raise SchemaError("schema must name treated_unit")
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    ucol, pcol = schema["unit"], schema["period"]
    for col in (ucol, pcol):
        if col not in frame.columns:
            raise SchemaError(f"missing column {col!r}")

    if schema.get("wide"):
        feat_cols = [c for c in frame.columns if c not in (ucol, pcol)]
        if not feat_cols:
            raise SchemaError("wide input needs at least one feature column")
        frame = frame.melt(id_vars=[ucol, pcol], value_vars=feat_cols, var_name="__feature", value_name="__value")
        fcol, vcol = "__feature", "__value"
    else:
        fcol, vcol = schema["feature"], schema["value"]
        for col in (fcol, vcol):
            if col not in frame.columns:
                raise SchemaError(f"missing column {col!r}")

    values = _parse_values(frame[vcol])
    periods = _coerce_periods(frame[pcol])
    units = frame[ucol].astype(str)
    feats = frame[fcol].astype(str)

    treated = str(schema["treated_unit"])
    unit_order = list(dict.fromkeys(units))
    if treated not in unit_order:
        raise DataError(f"treated unit {treated!r} not found")
    unit_order.remove(treated)
    unit_ids = [treated] + sorted(unit_order, key=_natural_key)
    period_ids = sorted(set(periods))
    feature_ids = list(schema.get("features") or dict.fromkeys(feats))

    tidy = pd.DataFrame({"u": units, "p": periods, "f": feats, "v": values})
    if tidy.duplicated(["u", "p", "f"]).any():
        row = tidy[tidy.duplicated(["u", "p", "f"])].iloc[0]
        raise DataError(f"duplicate cell unit={row.u} period={row.p} feature={row.f}")
    tidy = tidy[tidy["f"].isin(feature_ids)]
    cube = (
        tidy.set_index(["u", "p", "f"])["v"]
        .reindex(pd.MultiIndex.from_product([unit_ids, period_ids, feature_ids]))
        .to_numpy()
        .reshape(len(unit_ids), len(period_ids), len(feature_ids))
    )

    fill = schema.get("fill", "none")
    if fill == "locf":
        cube = _locf(cube)
    elif fill not in ("none", None):
        raise ConfigError(f"unknown fill policy {fill!r}")
    missing = np.argwhere(np.isnan(cube))
    if missing.size:
        i, t, l = missing[0]
        raise DataError(
            f"missing cell unit={unit_ids[i]} period={period_ids[t]} feature={feature_ids[l]}"
            f" ({len(missing)} missing in total)"
        )

    T0 = _resolve_T0(schema, period_ids)
    return PanelDataset(tuple(unit_ids), tuple(period_ids), tuple(feature_ids), cube, T0)


def _natural_key(s: str):
    try:
        return (0, float(s), s)
    except ValueError:
        return (1, 0.0, s)


def _locf(cube: np.ndarray) -> np.ndarray:
    out = cube.copy()
    for t in range(1, out.shape[1]):
        gap = np.isnan(out[:, t, :])
        out[:, t, :][gap] = out[:, t - 1, :][gap]
    return out


def _resolve_T0(schema: dict, period_ids: list) -> int:
    if schema.get("T0") is not None:
        return int(schema["T0"])
    if schema.get("treatment_period") is not None:
        start = schema["treatment_period"]
        for i, p in enumerate(period_ids):
            if str(p) == str(start) or (not isinstance(p, str) and _as_float(start) is not None and p >= _as_float(start)):
                return i
        raise DataError(f"treatment_period {start!r} is after the last period")
    raise SchemaError("schema must give T0 or treatment_period")


def _as_float(x):
    try:
        return float(x)
    except (TypeError, ValueError):
        return None


def write_panel(panel: PanelDataset, path) -> None:
    """Write ``panel`` in the long ``unit,period,feature,value`` layout."""
    rows = []
    for i, u in enumerate(panel.unit_ids):
        for t, p in enumerate(panel.periods):
            for l, f in enumerate(panel.feature_labels):
                rows.append((u, p, f, repr(float(panel.values[i, t, l]))))
    pd.DataFrame(rows, columns=["unit", "period", "feature", "value"]).to_csv(path, index=False)


def transform_panel(panel: PanelDataset, how: str = "diff") -> PanelDataset:
    """First differences (``diff``) or log first differences (``logdiff``).

    The first period is dropped, so ``T0`` shrinks by one.
    """
    vals = panel.values
    if how == "logdiff":
        if np.any(vals <= 0):
            raise DataError("logdiff needs strictly positive values")
        vals = np.log(vals)
    elif how != "diff":
        raise ConfigError(f"unknown transform {how!r}")
    if panel.T0 < 2:
        raise DataError("differencing needs T0 >= 2")
    return PanelDataset(panel.unit_ids, panel.periods[1:], panel.feature_labels, np.diff(vals, axis=1), panel.T0 - 1)


# ---------------------------------------------------------------------- design


def scaling_diagonal(J: int, KM: int, T0: int, regime: str) -> np.ndarray:
    """Diagonal of ``D``: ``T0`` on weight columns under cointegration, ``sqrt(T0)`` elsewhere."""
    if regime not in REGIMES:
        raise ConfigError(f"unknown regime {regime!r}")
    root = np.sqrt(T0)
    if regime == "cointegration":
        return np.concatenate([np.full(J, float(T0)), np.full(KM, root)])
    return np.full(J + KM, root)


def build_design(
    panel: PanelDataset,
    features: Sequence | None = None,
    intercept: bool | Sequence[bool] = False,
    regime: str = "iid",
    constraint: ConstraintSpec | str = "simplex",
    weights: Sequence[float] | None = None,
    standardize: bool = False,
) -> SCDesign:
    """Assemble ``A``, ``B``, ``C`` and ``D`` from the pre-treatment block.

    ``intercept`` switches a per-equation intercept on (one flag per
    feature, or a single flag for all).  ``weights`` holds one positive
    scalar per equation applied to its squared residuals.
    """
    features = tuple(features) if features else panel.feature_labels
    if not features:
        raise ConfigError("at least one feature is required")
    idx = [panel.feature_index(f) for f in features]
    M, T0 = len(features), panel.T0
    flags = [bool(intercept)] * M if isinstance(intercept, (bool, np.bool_, int)) else [bool(v) for v in intercept]
    if len(flags) != M:
        raise ConfigError(f"intercept flags ({len(flags)}) must match features ({M})")
    if weights is None:
        weights = [1.0] * M
    weights = [float(v) for v in weights]
    if len(weights) != M or any(v <= 0 for v in weights):
        raise ConfigError("equation weights must be positive, one per feature")
    if isinstance(constraint, str):
        constraint = parse_constraint(constraint)

    pre = panel.values[:, :T0, :]
    A_blocks, B_blocks = [], []
    for l in idx:
        a = pre[0, :, l].copy()
        b = pre[1:, :, l].T.copy()
        if standardize:
            sd = np.std(pre[:, :, l], ddof=1)
            if sd > 0:
                a, b = a / sd, b / sd
        A_blocks.append(a)
        B_blocks.append(b)
    K = tuple(int(f) for f in flags)
    C = np.zeros((T0 * M, sum(K)))
    col = 0
    for l, k in enumerate(K):
        if k:
            C[l * T0 : (l + 1) * T0, col] = 1.0
            col += 1
    A = np.concatenate(A_blocks)
    B = np.vstack(B_blocks)
    root_w = np.repeat(np.sqrt(weights), T0)
    A, B, C = A * root_w, B * root_w[:, None], C * root_w[:, None]
    D = scaling_diagonal(B.shape[1], C.shape[1], T0, regime)
    return SCDesign(A, B, C, D, constraint, regime, T0, tuple(features), K, tuple(panel.unit_ids[1:]), tuple(weights))


def unstack(design: SCDesign) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Per-equation ``(A_l, B_l, C_l)`` blocks, ``C_l`` restricted to its own columns."""
    out, col = [], 0
    for l, k in enumerate(design.K):
        rows = slice(l * design.T0, (l + 1) * design.T0)
        out.append((design.A[rows], design.B[rows], design.C[rows, col : col + k]))
        col += k
    return out


def build_predictor(
    panel: PanelDataset,
    design: SCDesign,
    period,
    feature=None,
    x_override=None,
    g_override=None,
    shift: float = 0.0,
) -> PredictorVector:
    """Predictor ``p_T = (x_T', g_T')'`` for post-treatment ``period``.

    ``x_T`` defaults to the donors' values of ``feature`` (first design
    feature) at ``period``; ``g_T`` is one on the intercept of that
    feature's equation and zero on every other control.  ``shift`` moves the
    first donor by ``shift`` pre-period sample standard deviations.
    """
    t = panel.period_index(period)
    if t < panel.T0:
        raise DataError(f"period {period!r} is not after the pre-treatment window")
    feature = design.features[0] if feature is None else feature
    l = panel.feature_index(feature)
    if x_override is not None:
        x = np.asarray(x_override, dtype=float).ravel()
        if x.shape != (design.J,):
            raise DataError(f"x override must have length {design.J}")
    else:
        x = panel.values[1:, t, l].copy()
    if shift:
        x[0] += shift * np.std(panel.values[1, : panel.T0, l], ddof=1)
    if g_override is not None:
        g = np.asarray(g_override, dtype=float).ravel()
        if g.shape != (design.KM,):
            raise DataError(f"g override must have length {design.KM}")
    else:
        g = np.zeros(design.KM)
        col = 0
        for eq, k in enumerate(design.K):
            if k and design.features[eq] == feature:
                g[col] = 1.0
            col += k
    y1 = float(panel.values[0, t, l])
    return PredictorVector(x, g, panel.periods[t], y1)
