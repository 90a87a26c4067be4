"""Thermalization-time extraction, ensemble bands and size-scaling fits."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from nuflavor.errors import InvalidParameterError, InvalidSeriesError

GAMMA = 0.1
ENTROPY_FRACTION = 0.95
CRITERIA = ("variance_threshold", "z_inversion", "entropy_saturation", "loschmidt_minimum")


@dataclass
class ThermalizationEstimate:
    tau_th: float | None
    criterion: str
    threshold: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def defined(self):
        return self.tau_th is not None


def _unpack(series):
    if hasattr(series, "times"):
        return np.asarray(series.times, float), np.asarray(series.values, float)
    t, v = series
    return np.asarray(t, float), np.asarray(v, float)


def _crossing(t, v, level, downward):
    for i in range(1, v.size):
        a, b = v[i - 1], v[i]
        hit = (a >= level > b) if downward else (a < level <= b)
        if hit:
            return float(t[i - 1] + (a - level) / (a - b) * (t[i] - t[i - 1]))
    return None


def _first_extremum(t, v, want):
    # want: +1 maximum, -1 minimum, 0 either
    d = np.sign(np.diff(v))
    last_sign = 0
    last_idx = 0
    for i, s in enumerate(d):
        if s == 0:
            continue
        if last_sign != 0 and s != last_sign:
            kind = 1 if last_sign > 0 else -1
            if want == 0 or want == kind:
                return float(t[last_idx])
        last_sign = s
        last_idx = i + 1
    return None


def characteristic_time(series, criterion="variance_threshold", gamma=GAMMA):
    """First time the chosen thermalization proxy fires, or ``None`` inside the window.

    ``variance_threshold`` linearly interpolates the first downward crossing
    of ``gamma``; ``entropy_saturation`` the first upward crossing of
    ``0.95 ln 2``. ``z_inversion`` and ``loschmidt_minimum`` take the first
    interior extremum (any kind / minima only) where the discrete slope
    changes sign; across a plateau the earliest plateau point is reported.
    """
    t, v = _unpack(series)
    if t.size < 2:
        raise InvalidSeriesError("need at least two samples")
    if np.any(np.diff(t) <= 0):
        raise InvalidSeriesError("times must be strictly increasing")
    meta = dict(getattr(series, "meta", {}) or {})
    if criterion == "variance_threshold":
        tau = _crossing(t, v, gamma, downward=True)
        return ThermalizationEstimate(tau, criterion, gamma, meta)
    if criterion == "entropy_saturation":
        level = ENTROPY_FRACTION * np.log(2.0)
        return ThermalizationEstimate(_crossing(t, v, level, downward=False), criterion, level, meta)
    if criterion == "z_inversion":
        return ThermalizationEstimate(_first_extremum(t, v, 0), criterion, None, meta)
    if criterion == "loschmidt_minimum":
        return ThermalizationEstimate(_first_extremum(t, v, -1), criterion, None, meta)
    raise InvalidParameterError(f"unknown criterion {criterion!r}; choose from {CRITERIA}")


def ensemble_stats(collection, probes=(10, 25, 75, 90)):
    """Per-time median and percentiles across realizations.

    ``collection`` is a list of series sharing a time grid, or a
    ``(times, values[R, T])`` tuple. Percentiles interpolate linearly
    between order statistics.
    """
    if isinstance(collection, tuple):
        times, vals = collection
        times = np.asarray(times, float)
        vals = np.atleast_2d(np.asarray(vals, float))
    else:
        collection = list(collection)
        if not collection:
            raise InvalidSeriesError("empty collection")
        times = np.asarray(collection[0].times, float)
        for s in collection[1:]:
            if s.times.shape != times.shape or not np.array_equal(s.times, times):
                raise InvalidSeriesError("series do not share a time grid")
        vals = np.array([s.values for s in collection])
    if vals.shape[1] != times.size:
        raise InvalidSeriesError("values do not match the time grid")
    out = {"time": times, "median": np.median(vals, axis=0), "count": vals.shape[0]}
    for p in probes:
        out[f"p{p:g}"] = np.percentile(vals, p, axis=0)
    return out


def stats_to_csv(stats, path, probes=(10, 25, 75, 90)):
    cols = ["time", "median"] + [f"p{p:g}" for p in probes]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for i in range(stats["time"].size):
            fh.write(",".join(repr(float(stats[c][i])) for c in cols) + "\n")


# -- scaling fits ------------------------------------------------------------------------


@dataclass
class ScalingFit:
    """``tau = a f(N) + b`` with ``f`` = sqrt or log; ``rss`` is weighted."""

    model: str
    a: float
    b: float
    rss: float
    weights: np.ndarray
    with_offset: bool = True

    def predict(self, sizes):
        return self.a * _basis(self.model, np.asarray(sizes, float)) + self.b

    def to_dict(self):
        return {"model": self.model, "a": self.a, "b": self.b, "rss": self.rss,
                "with_offset": self.with_offset}


def _basis(model, sizes):
    if model == "sqrt":
        return np.sqrt(sizes)
    if model == "log":
        return np.log(sizes)
    raise InvalidParameterError(f"unknown scaling model {model!r}")


def _wls(model, sizes, taus, weights, with_offset):
    x = _basis(model, sizes)
    design = np.column_stack([x, np.ones_like(x)]) if with_offset else x[:, None]
    sw = np.sqrt(weights)
    coef, *_ = np.linalg.lstsq(design * sw[:, None], taus * sw, rcond=None)
    resid = taus - design @ coef
    a = float(coef[0])
    b = float(coef[1]) if with_offset else 0.0
    return ScalingFit(model, a, b, float(np.sum(weights * resid**2)), weights, with_offset)


def scaling_fit(sizes, taus, spreads=None, close_threshold=1.0):
    """Weighted least squares of ``a sqrt(N) + b`` and ``a ln N + b``.

    Weights are ``1 / spread**2`` (half-widths of the ensemble band) or
    uniform when ``spreads`` is None. ``preferred`` is the model with the
    smaller weighted residual; ``close`` reports whether that preference is
    weaker than ``close_threshold`` in weighted residual (one sigma by default).
    Offset-free ``a``-only fits are returned under ``sqrt0`` and ``log0``.
    """
    sizes = np.asarray(sizes, float)
    taus = np.asarray(taus, float)
    if sizes.size != taus.size:
        raise InvalidParameterError("sizes and taus differ in length")
    if sizes.size < 3:
        raise InvalidParameterError("need at least three system sizes")
    if np.unique(sizes).size < 2:
        raise InvalidParameterError("degenerate design: all sizes equal")
    if spreads is None:
        w = np.ones_like(sizes)
    else:
        sp = np.asarray(spreads, float)
        if np.any(sp <= 0):
            raise InvalidParameterError("spreads must be positive")
        w = 1.0 / sp**2
    out = {
        "sqrt": _wls("sqrt", sizes, taus, w, True),
        "log": _wls("log", sizes, taus, w, True),
        "sqrt0": _wls("sqrt", sizes, taus, w, False),
        "log0": _wls("log", sizes, taus, w, False),
    }
    out["preferred"] = "sqrt" if out["sqrt"].rss <= out["log"].rss else "log"
    out["delta_rss"] = abs(out["sqrt"].rss - out["log"].rss)
    out["close"] = bool(out["delta_rss"] < close_threshold)
    return out


def fit_summary(fits):
    return {
        "sqrt": fits["sqrt"].to_dict(),
        "log": fits["log"].to_dict(),
        "sqrt0": fits["sqrt0"].to_dict(),
        "log0": fits["log0"].to_dict(),
        "preferred": fits["preferred"],
        "delta_rss": fits["delta_rss"],
        "close": fits["close"],
    }
