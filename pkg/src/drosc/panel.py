"""Panel data for one treated unit and N controls, plus wide-CSV ingestion."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np


class PanelError(ValueError):
    """Malformed panel input."""


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PanelData:
    y_treated: np.ndarray
    x_controls: np.ndarray
    t0: int
    unit_names: tuple[str, ...] = ()
    time_labels: tuple[str, ...] = ()
    treated_name: str = "treated"

    def __post_init__(self):
        y = _frozen(self.y_treated).ravel()
        x = _frozen(self.x_controls)
        if x.ndim == 1:
            x = _frozen(x.reshape(-1, 1))
        T = y.size
        if x.ndim != 2 or x.shape[0] != T:
            raise PanelError(f"x_controls must have {T} rows, got shape {x.shape}")
        if x.shape[1] < 1:
            raise PanelError("need at least one control unit")
        if not (np.isfinite(y).all() and np.isfinite(x).all()):
            raise PanelError("panel contains non-finite values")
        t0 = int(self.t0)
        if not 1 <= t0 <= T - 1:
            raise PanelError(f"t0 out of range: need 1 <= t0 <= {T - 1}, got {t0}")
        names = tuple(self.unit_names) or tuple(f"unit{j + 1}" for j in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise PanelError("unit_names length must equal the number of controls")
        labels = tuple(str(s) for s in self.time_labels) or tuple(str(t + 1) for t in range(T))
        if len(labels) != T:
            raise PanelError("time_labels length must equal T")
        object.__setattr__(self, "y_treated", y)
        object.__setattr__(self, "x_controls", x)
        object.__setattr__(self, "t0", t0)
        object.__setattr__(self, "unit_names", names)
        object.__setattr__(self, "time_labels", labels)

    @property
    def T(self) -> int:
        return self.y_treated.size

    @property
    def N(self) -> int:
        return self.x_controls.shape[1]

    @property
    def t1(self) -> int:
        return self.T - self.t0

    def unit_index(self, name: str) -> int:
        """Index of a control unit by exact or case-insensitive prefix match."""
        if name in self.unit_names:
            return self.unit_names.index(name)
        low = name.lower()
        hits = [j for j, u in enumerate(self.unit_names) if u.lower().startswith(low)]
        if len(hits) != 1:
            raise PanelError(f"unknown control unit: {name}")
        return hits[0]

    def with_values(self, y_treated=None, x_controls=None) -> "PanelData":
        return PanelData(
            self.y_treated if y_treated is None else y_treated,
            self.x_controls if x_controls is None else x_controls,
            self.t0,
            self.unit_names,
            self.time_labels,
            self.treated_name,
        )


@dataclass(frozen=True)
class PanelView:
    y: np.ndarray
    x: np.ndarray

    @property
    def rows(self) -> int:
        return self.y.size


def split(panel: PanelData) -> tuple[PanelView, PanelView]:
    """Pre- and post-treatment views (no copies)."""
    t0 = panel.t0
    return (
        PanelView(panel.y_treated[:t0], panel.x_controls[:t0]),
        PanelView(panel.y_treated[t0:], panel.x_controls[t0:]),
    )


def load_panel(path, t0: int) -> PanelData:
    """Read a wide CSV: time label, treated unit, then one column per control."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"panel file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if len(rows) < 2:
        raise PanelError(f"{path}: need a header and at least one data row")
    header = [h.strip() for h in rows[0]]
    if len(header) < 3:
        raise PanelError(f"{path}: header needs time, treated and at least one control column")
    width = len(header)
    labels, values = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise PanelError(f"{path}: row {lineno} has {len(row)} columns, expected {width}")
        labels.append(row[0].strip())
        parsed = []
        for col, cell in enumerate(row[1:], start=2):
            try:
                v = float(cell)
            except ValueError:
                raise PanelError(f"{path}: non-numeric value {cell!r} at row {lineno}, column {col}") from None
            if not math.isfinite(v):
                raise PanelError(f"{path}: non-finite value at row {lineno}, column {col}")
            parsed.append(v)
        values.append(parsed)
    data = np.array(values)
    return PanelData(
        y_treated=data[:, 0],
        x_controls=data[:, 1:],
        t0=t0,
        unit_names=tuple(header[2:]),
        time_labels=tuple(labels),
        treated_name=header[1],
    )


def save_panel(panel: PanelData, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["time", panel.treated_name, *panel.unit_names])
        for t in range(panel.T):
            w.writerow([panel.time_labels[t], repr(float(panel.y_treated[t])),
                        *(repr(float(v)) for v in panel.x_controls[t])])


def basque_path() -> Path:
    """Location of the bundled Basque per-capita GDP panel (1955-1997, 17 regions)."""
    return Path(str(resources.files("drosc") / "data" / "basque.csv"))


def load_basque(t0: int = 15) -> PanelData:
    path = basque_path()
    if not path.is_file():
        raise FileNotFoundError(
            f"bundled Basque panel missing at {path}; place the wide CSV "
            "(time, Basque Country, 16 control regions) there"
        )
    return load_panel(path, t0)
