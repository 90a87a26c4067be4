"""Time series of observables and their CSV form."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

KINDS = ("variance", "z_single", "loschmidt", "entropy")
BASE_COLUMNS = ("time", "value", "kind", "k", "s", "backend", "layers", "seed")


@dataclass
class ObservableSeries:
    """Values of one observable on a time grid.

    ``meta`` holds per-series fields (``k``, ``s``, ``backend``, ``layers``,
    ``seed``, ...); ``columns`` holds extra per-point arrays such as
    ``alpha`` or ``chi`` that are emitted as additional CSV columns.
    """

    times: np.ndarray
    values: np.ndarray
    kind: str
    meta: dict = field(default_factory=dict)
    columns: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.kind not in KINDS:
            raise ValueError(f"unknown observable kind {self.kind!r}")
        if self.times.shape != self.values.shape:
            raise ValueError("times and values differ in length")

    def rows(self, extra=()):
        """Yield CSV rows; ``extra`` lists additional column names in order."""
        layers = self.columns.get("layers")
        for idx, (t, v) in enumerate(zip(self.times, self.values)):
            row = [
                repr(float(t)),
                repr(float(v)),
                self.kind,
                self.meta.get("k", ""),
                self.meta.get("s", ""),
                self.meta.get("backend", ""),
                layers[idx] if layers is not None else self.meta.get("layers", ""),
                self.meta.get("seed", ""),
            ]
            for name in extra:
                if name in self.columns:
                    val = self.columns[name][idx]
                else:
                    val = self.meta.get(name, "")
                row.append(_fmt(val))
            yield row


def _fmt(val):
    if isinstance(val, (float, np.floating)):
        return repr(float(val))
    if isinstance(val, np.integer):
        return int(val)
    return val


def write_csv(series_list, path_or_buffer, extra=()):
    """Write ``series_list`` with the base columns plus ``extra``."""
    own = isinstance(path_or_buffer, (str, bytes)) or hasattr(path_or_buffer, "__fspath__")
    fh = open(path_or_buffer, "w", newline="") if own else path_or_buffer
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(BASE_COLUMNS) + list(extra))
        for s in series_list:
            w.writerows(s.rows(extra))
    finally:
        if own:
            fh.close()


def to_csv_string(series_list, extra=()):
    buf = io.StringIO()
    write_csv(series_list, buf, extra)
    return buf.getvalue()
