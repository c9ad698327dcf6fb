"""Stylized-fact estimators and the evaluation report.

Everything here is a pure function of its inputs (plus an explicit seed for
the return fan), so a report regenerated from the same traces is
byte-identical.

Conventions
-----------
* Mid-prices are sampled on a regular grid by carrying the last observed
  value forward; grid points where the book was one-sided are dropped from
  the return series and counted.
* Kurtosis is the plain (biased) fourth standardized moment minus 3.
* DFA uses linear detrending in non-overlapping windows counted from the
  start of the profile.
* The Anis-Lloyd expected rescaled range includes the ``(n - 1/2) / n``
  small-sample factor; the gamma ratio is evaluated directly up to n = 340
  and through ``lgamma`` above.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .feed import NS_PER_SECOND, MsgType, OrderFlowMessage, Side
from .lob import OrderBook, Trade

__all__ = [
    "ReturnSeries",
    "FlowTable",
    "EstimatorError",
    "mid_grid",
    "mid_returns",
    "excess_kurtosis",
    "acf",
    "acf_squared",
    "acf_abs",
    "dfa_alpha",
    "expected_rs",
    "hurst_rs",
    "white_noise_hurst",
    "flow_distributions",
    "market_series",
    "future_return_fan",
    "evaluate",
    "write_report",
]


class EstimatorError(ValueError):
    pass


# ---- message tables ------------------------------------------------------


@dataclass(frozen=True)
class FlowTable:
    """Per-message columns shared by traces and replayed feeds.

    ``mid2`` is the two-sided mid in half-ticks after each message (NaN while
    the book is one-sided); trades carry the index of the message that
    caused them.
    """

    ts_ns: np.ndarray
    msg_type: np.ndarray
    size: np.ndarray
    mid2: np.ndarray
    best_bid: np.ndarray
    best_ask: np.ndarray
    vol_bid: np.ndarray
    vol_ask: np.ndarray
    trade_idx: np.ndarray
    trade_price: np.ndarray
    trade_size: np.ndarray
    source: str = ""

    def __len__(self) -> int:
        return int(self.ts_ns.size)

    @property
    def dt_ns(self) -> np.ndarray:
        if not len(self):
            return np.zeros(0, dtype=np.int64)
        return np.diff(self.ts_ns, prepend=self.ts_ns[0])

    def head(self, n: int) -> "FlowTable":
        """First ``n`` messages (and their trades)."""
        keep = self.trade_idx < n
        return FlowTable(
            self.ts_ns[:n], self.msg_type[:n], self.size[:n], self.mid2[:n], self.best_bid[:n],
            self.best_ask[:n], self.vol_bid[:n], self.vol_ask[:n], self.trade_idx[keep],
            self.trade_price[keep], self.trade_size[keep], self.source,
        )

    @classmethod
    def from_messages(cls, msgs: Iterable[OrderFlowMessage], book: OrderBook | None = None, source: str = "feed") -> "FlowTable":
        """Replay ``msgs`` (onto ``book``, which is mutated) and tabulate."""
        book = OrderBook() if book is None else book
        rows, trades = [], []
        for i, m in enumerate(msgs):
            for e in book.apply(m):
                if isinstance(e, Trade):
                    trades.append((i, e.price, e.size))
            rows.append(_row(m.timestamp_ns, int(m.msg_type), m.size, book.best_bid, book.best_ask,
                             _vol(book, book.best_bid, Side.BID), _vol(book, book.best_ask, Side.ASK)))
        return cls._from_rows(rows, trades, source)

    @classmethod
    def from_trace(cls, records: Sequence[dict], source: str = "generated") -> "FlowTable":
        """Tabulate the accepted records of a simulation trace."""
        rows, trades = [], []
        i = 0
        for r in records:
            if r["outcome"] != "accepted":
                continue
            m = r["msg"]
            bb, ba, vb, va = r["top"]
            rows.append(_row(m["ts"], m["type"], m["size"], bb, ba, vb, va))
            trades.extend((i, p, s) for p, s in r["trades"])
            i += 1
        return cls._from_rows(rows, trades, source)

    @classmethod
    def _from_rows(cls, rows: list, trades: list, source: str) -> "FlowTable":
        n = len(rows)
        ts = np.array([r[0] for r in rows], dtype=np.int64).reshape(n)
        typ = np.array([r[1] for r in rows], dtype=np.int8).reshape(n)
        size = np.array([r[2] for r in rows], dtype=np.int64).reshape(n)
        bb = np.array([np.nan if r[3] is None else r[3] for r in rows], dtype=np.float64).reshape(n)
        ba = np.array([np.nan if r[4] is None else r[4] for r in rows], dtype=np.float64).reshape(n)
        vb = np.array([r[5] for r in rows], dtype=np.int64).reshape(n)
        va = np.array([r[6] for r in rows], dtype=np.int64).reshape(n)
        t = np.array(trades, dtype=np.int64).reshape(-1, 3)
        return cls(ts, typ, size, bb + ba, bb, ba, vb, va, t[:, 0], t[:, 1], t[:, 2], source)


def _vol(book: OrderBook, price: int | None, side: Side) -> int:
    return 0 if price is None else book.depth(price, side)


def _row(ts, typ, size, bb, ba, vb, va) -> tuple:
    return (int(ts), int(typ), 0 if size is None else int(size), bb, ba, int(vb), int(va))


# ---- returns -------------------------------------------------------------


@dataclass(frozen=True)
class ReturnSeries:
    values: np.ndarray
    interval_s: float
    source: str = ""
    excluded: int = 0  # grid points without a two-sided mid
    grid_points: int = 0


def mid_grid(ts_ns: np.ndarray, mid: np.ndarray, step_ns: int, start_ns: int | None = None,
             end_ns: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Sample an event-time series on ``start + k*step`` by last observation.

    The value at a grid instant is the one set by the last event at or
    before it; instants before the first event are NaN.
    """
    ts_ns = np.asarray(ts_ns, dtype=np.int64)
    mid = np.asarray(mid, dtype=np.float64)
    if ts_ns.size == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    start = int(ts_ns[0]) if start_ns is None else int(start_ns)
    end = int(ts_ns[-1]) if end_ns is None else int(end_ns)
    grid = np.arange(start, end + 1, step_ns, dtype=np.int64)
    idx = np.searchsorted(ts_ns, grid, side="right") - 1
    vals = np.where(idx >= 0, mid[np.maximum(idx, 0)], np.nan)
    return grid, vals


def mid_returns(ts_ns, mid, delta_s: float = 1.0, source: str = "") -> ReturnSeries:
    """Log returns ``ln(p[t+delta] / p[t])`` of a mid series on a regular grid."""
    step_ns = int(round(delta_s * NS_PER_SECOND))
    if step_ns <= 0:
        raise EstimatorError("delta must be positive")
    grid, p = mid_grid(ts_ns, mid, step_ns)
    if grid.size < 2:
        raise EstimatorError("fewer than two grid points")
    bad = ~np.isfinite(p) | (p <= 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.log(p[1:] / p[:-1])
    ok = ~(bad[1:] | bad[:-1])
    return ReturnSeries(r[ok], float(delta_s), source, int(bad.sum()), int(grid.size))


def excess_kurtosis(r) -> float:
    x = np.asarray(getattr(r, "values", r), dtype=np.float64)
    if x.size < 4:
        raise EstimatorError("need at least four values")
    d = x - x.mean()
    m2 = float(np.mean(d * d))
    if m2 == 0.0:
        raise EstimatorError("zero variance")
    m4 = float(np.mean(d**4))
    return m4 / (m2 * m2) - 3.0


@dataclass(frozen=True)
class ACF:
    lags: np.ndarray
    values: np.ndarray
    band: float


def acf(x, max_lag: int) -> ACF:
    """Pearson correlation of ``x[t+k]`` with ``x[t]`` for ``k = 0..max_lag``."""
    x = np.asarray(getattr(x, "values", x), dtype=np.float64)
    n = x.size
    if max_lag < 0 or n <= max_lag + 1:
        raise EstimatorError(f"series of {n} values too short for lag {max_lag}")
    if np.all(x == x[0]):
        raise EstimatorError("constant series")
    vals = np.empty(max_lag + 1)
    vals[0] = 1.0
    for k in range(1, max_lag + 1):
        a, b = x[k:], x[:-k]
        da, db = a - a.mean(), b - b.mean()
        den = math.sqrt(float(da @ da) * float(db @ db))
        vals[k] = float(da @ db) / den if den > 0 else 0.0
    return ACF(np.arange(max_lag + 1), vals, 1.96 / math.sqrt(n))


def acf_squared(r, max_lag: int) -> ACF:
    x = np.asarray(getattr(r, "values", r), dtype=np.float64)
    return acf(x * x, max_lag)


def acf_abs(r, max_lag: int) -> ACF:
    x = np.asarray(getattr(r, "values", r), dtype=np.float64)
    return acf(np.abs(x), max_lag)


# ---- long memory ---------------------------------------------------------


def _log_grid(lo: int, hi: int, n: int) -> np.ndarray:
    return np.unique(np.round(np.geomspace(lo, hi, n)).astype(np.int64))


def _fit(logx: np.ndarray, logy: np.ndarray) -> dict:
    res = stats.linregress(logx, logy)
    return {"slope": float(res.slope), "intercept": float(res.intercept), "stderr": float(res.stderr),
            "r2": float(res.rvalue**2), "n_points": int(logx.size)}


def dfa_alpha(x, min_scale: int = 16, max_scale: int | None = None, n_scales: int = 20) -> dict:
    """Detrended fluctuation analysis exponent ``alpha`` and ``gamma = 2 - 2 alpha``."""
    x = np.asarray(getattr(x, "values", x), dtype=np.float64)
    n = x.size
    if n < 2**10:
        raise EstimatorError(f"DFA needs at least {2**10} values, got {n}")
    max_scale = n // 4 if max_scale is None else max_scale
    scales = _log_grid(min_scale, max_scale, max(n_scales, 10))
    if scales.size < 10:
        raise EstimatorError("fewer than ten distinct window sizes")
    y = np.cumsum(x - x.mean())
    F = np.empty(scales.size)
    for j, s in enumerate(scales):
        w = y[: (n // s) * s].reshape(-1, s)
        t = np.arange(s, dtype=np.float64)
        tc = t - t.mean()
        wc = w - w.mean(axis=1, keepdims=True)
        slope = (wc @ tc) / (tc @ tc)
        resid = wc - slope[:, None] * tc
        F[j] = math.sqrt(float(np.mean(resid * resid)))
    fit = _fit(np.log(scales), np.log(F))
    alpha = fit["slope"]
    return {"alpha": alpha, "gamma": 2.0 - 2.0 * alpha, "scales": scales, "fluctuation": F, "fit": fit}


def expected_rs(n: int) -> float:
    """Anis-Lloyd expected R/S of ``n`` i.i.d. normal values (Peters factor included)."""
    if n < 3:
        raise EstimatorError("window must hold at least three values")
    i = np.arange(1, n)
    tail = float(np.sum(np.sqrt((n - i) / i)))
    if n <= 340:
        ratio = math.gamma((n - 1) / 2) / (math.sqrt(math.pi) * math.gamma(n / 2))
    else:
        ratio = math.exp(math.lgamma((n - 1) / 2) - math.lgamma(n / 2)) / math.sqrt(math.pi)
    return (n - 0.5) / n * ratio * tail


def _rs(x: np.ndarray, m: int) -> float:
    w = x[: (x.size // m) * m].reshape(-1, m)
    d = w - w.mean(axis=1, keepdims=True)
    y = np.cumsum(d, axis=1)
    r = y.max(axis=1) - y.min(axis=1)
    s = np.sqrt(np.mean(d * d, axis=1))
    ok = s > 0
    if not ok.any():
        return float("nan")
    return float(np.mean(r[ok] / s[ok]))


def _hurst_fit(x: np.ndarray, sizes: np.ndarray) -> tuple[dict, np.ndarray, np.ndarray]:
    rs = np.array([_rs(x, int(m)) for m in sizes])
    ers = np.array([expected_rs(int(m)) for m in sizes])
    ok = np.isfinite(rs) & (rs > 0)
    if ok.sum() < 3:
        raise EstimatorError("too few usable window sizes")
    return _fit(np.log(sizes[ok]), np.log(rs[ok]) - np.log(ers[ok])), rs, ers


_NULL_CACHE: dict[tuple, np.ndarray] = {}


def white_noise_hurst(n: int, sizes: np.ndarray, replicates: int = 200, seed: int = 0) -> np.ndarray:
    """Corrected-R/S estimates of H on ``replicates`` Gaussian white-noise series of length ``n``."""
    key = (n, tuple(int(m) for m in sizes), replicates, seed)
    if key not in _NULL_CACHE:
        rng = np.random.default_rng([seed, n])
        _NULL_CACHE[key] = np.array(
            [0.5 + _hurst_fit(rng.standard_normal(n), sizes)[0]["slope"] for _ in range(replicates)]
        )
    return _NULL_CACHE[key]


def hurst_rs(x, min_window: int = 16, max_window: int | None = None, n_windows: int = 20,
             replicates: int = 200, seed: int = 0) -> dict:
    """Hurst exponent from Anis-Lloyd corrected rescaled-range analysis.

    ``H = 0.5 + slope`` of ``log(R/S) - log(E[R/S])`` against ``log n``
    over disjoint windows on a log grid of sizes.

    Intervals: ``white_noise_band95`` holds the 2.5/97.5 percentiles of the
    same estimator on simulated white noise of equal length; ``ci95`` is the
    pivot interval built from that null spread around ``H``. The naive
    regression interval (slope standard error with a t quantile) is kept as
    ``ci95_regression``; it is too narrow because the log-log points share
    the same data.
    """
    x = np.asarray(getattr(x, "values", x), dtype=np.float64)
    N = x.size
    if N < 2**9:
        raise EstimatorError(f"R/S needs at least {2**9} values, got {N}")
    max_window = N // 4 if max_window is None else max_window
    sizes = _log_grid(min_window, max_window, n_windows)
    fit, rs, ers = _hurst_fit(x, sizes)
    H = 0.5 + fit["slope"]
    q = float(stats.t.ppf(0.975, fit["n_points"] - 2))
    null = white_noise_hurst(N, sizes, replicates, seed)
    lo, hi = (float(v) for v in np.percentile(null, [2.5, 97.5]))
    return {
        "H": H,
        "ci95": (H - (hi - 0.5), H + (0.5 - lo)),
        "white_noise_band95": (lo, hi),
        "ci95_regression": (H - q * fit["stderr"], H + q * fit["stderr"]),
        "windows": sizes,
        "rs": rs,
        "expected_rs": ers,
        "fit": fit,
    }


# ---- distributions -------------------------------------------------------

TYPE_NAMES = [t.name.lower() for t in MsgType]


def _wilson(k: int, n: int) -> tuple[float, float]:
    if n == 0:
        return (0.0, 0.0)
    z = 1.959963984540054
    p = k / n
    den = 1 + z * z / n
    c = (p + z * z / (2 * n)) / den
    h = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return (0.0 if k == 0 else max(0.0, c - h), 1.0 if k == n else min(1.0, c + h))


def _hist(samples: Mapping[str, np.ndarray], bins: int) -> dict:
    nonempty = [v for v in samples.values() if v.size]
    if not nonempty:
        return {"edges": [], "counts": {k: [] for k in samples}}
    lo = min(float(v.min()) for v in nonempty)
    hi = max(float(v.max()) for v in nonempty)
    if hi == lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    return {"edges": edges.tolist(),
            "counts": {k: np.histogram(v, edges)[0].tolist() for k, v in samples.items()}}


def flow_distributions(flows: Mapping[str, FlowTable], bins: int = 500) -> dict:
    """Type frequencies, per-type inter-arrival and size histograms, round-lot mass.

    Histogram edges are shared by all ``flows`` (union min/max per type).
    Inter-arrival is the gap to the previous message of any type, in seconds.
    """
    out: dict = {"types": TYPE_NAMES, "frequency": {}, "round_lot_mass": {}, "interarrival": {}, "size": {}}
    for name, f in flows.items():
        n = len(f)
        counts = np.bincount(f.msg_type.astype(np.int64), minlength=len(MsgType))
        out["frequency"][name] = {
            "n": n,
            "counts": counts.tolist(),
            "freq": [c / n if n else 0.0 for c in counts.tolist()],
            "ci95": [_wilson(int(c), n) for c in counts],
        }
        out["round_lot_mass"][name] = float(np.mean(f.size % 100 == 0)) if n else 0.0
    for t in MsgType:
        key = t.name.lower()
        out["interarrival"][key] = _hist({k: f.dt_ns[f.msg_type == t] / NS_PER_SECOND for k, f in flows.items()}, bins)
        out["size"][key] = _hist({k: f.size[f.msg_type == t].astype(np.float64) for k, f in flows.items()}, bins)
    return out


def market_series(f: FlowTable, bucket_s: float = 1.0) -> dict:
    """Per-second spread / best-volume means and cumulative traded dollars and shares."""
    n = len(f)
    dollars = np.zeros(n)
    shares = np.zeros(n, dtype=np.int64)
    if f.trade_idx.size:
        np.add.at(dollars, f.trade_idx, f.trade_price * f.trade_size / 100.0)
        np.add.at(shares, f.trade_idx, f.trade_size)
    out = {
        "cum_dollars": np.cumsum(dollars),
        "cum_shares": np.cumsum(shares),
        "mid": f.mid2 / 200.0,
        "seconds": np.zeros(0, dtype=np.int64),
        "spread": np.zeros(0),
        "vol_bid": np.zeros(0),
        "vol_ask": np.zeros(0),
    }
    if not n:
        return out
    step = int(round(bucket_s * NS_PER_SECOND))
    b = (f.ts_ns - f.ts_ns[0]) // step
    two = np.isfinite(f.mid2)
    keys = np.unique(b[two])
    spread = f.best_ask - f.best_bid
    out["seconds"] = keys
    out["spread"] = np.array([spread[two & (b == k)].mean() for k in keys])
    out["vol_bid"] = np.array([f.vol_bid[two & (b == k)].mean() for k in keys])
    out["vol_ask"] = np.array([f.vol_ask[two & (b == k)].mean() for k in keys])
    return out


def _ffill(x: np.ndarray) -> np.ndarray:
    idx = np.where(np.isfinite(x), np.arange(x.size), -1)
    np.maximum.accumulate(idx, out=idx)
    return np.where(idx >= 0, x[np.maximum(idx, 0)], np.nan)


def future_return_fan(mid, horizon: int = 500, n_samples: int = 1000, seed: int = 0) -> dict:
    """Mean and 2.5/97.5 percentile band of ``ln(mid[s-1+t] / mid[s-1])`` for t = 1..horizon.

    Start indices ``s`` are drawn uniformly with ``mid[s-1]`` defined; NaN
    mids are carried forward.
    """
    p = _ffill(np.asarray(mid, dtype=np.float64))
    valid = np.flatnonzero(np.isfinite(p))
    if valid.size == 0:
        raise EstimatorError("no defined mid-price")
    first = int(valid[0]) + 1
    last = p.size - horizon
    if horizon < 1 or last < first:
        raise EstimatorError(f"series of {p.size} messages too short for a {horizon}-message horizon")
    starts = np.random.default_rng(seed).integers(first, last + 1, size=n_samples)
    offs = np.arange(1, horizon + 1)
    curves = np.log(p[starts[:, None] - 1 + offs[None, :]] / p[starts - 1][:, None])
    return {
        "offsets": offs,
        "mean": curves.mean(axis=0),
        "lo": np.percentile(curves, 2.5, axis=0),
        "hi": np.percentile(curves, 97.5, axis=0),
        "starts": starts,
    }


# ---- report --------------------------------------------------------------


def _clean(v):
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


def _try(fn, *a, **kw):
    try:
        return fn(*a, **kw), None
    except EstimatorError as exc:
        return None, str(exc)


def _csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(["" if (isinstance(x, float) and not math.isfinite(x)) else (repr(x) if isinstance(x, float) else x)
                    for x in r])
    return buf.getvalue()


def _tv(a: Sequence[int], b: Sequence[int]) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    if a.sum() == 0 or b.sum() == 0:
        return float("nan")
    return 0.5 * float(np.abs(a / a.sum() - b / b.sum()).sum())


def evaluate(
    flows: Mapping[str, FlowTable],
    *,
    reference: str | None = None,
    delta_s: float = 1.0,
    max_lag: int = 100,
    horizon: int = 500,
    n_samples: int = 1000,
    seed: int = 0,
    bins: int = 500,
    common_length: bool = True,
) -> tuple[dict, dict[str, str]]:
    """Full stylized-facts report for named flows.

    ``reference`` names the empirical flow that the others are compared
    against (divergences are reported for each other flow). With
    ``common_length`` every flow is first cut to the shortest length.
    Returns the JSON-ready report and ``{csv file name: contents}``.
    """
    if not flows:
        raise EstimatorError("nothing to evaluate")
    names = sorted(flows)
    n_common = min(len(flows[k]) for k in names)
    if common_length:
        flows = {k: flows[k].head(n_common) for k in names}
    report: dict = {"config": {"delta_s": delta_s, "max_lag": max_lag, "horizon": horizon, "n_samples": n_samples,
                               "seed": seed, "bins": bins, "common_length": n_common if common_length else None},
                    "sources": {}}
    csvs: dict[str, str] = {}
    acf_rows, dfa_rows, rs_rows, fan_rows, spread_rows, cum_rows = [], [], [], [], [], []
    for k in names:
        f = flows[k]
        src: dict = {"messages": len(f)}
        r, err = _try(mid_returns, f.ts_ns, f.mid2 / 200.0, delta_s, k)
        if r is None:
            src["returns"] = {"error": err}
        else:
            src["returns"] = {"n": int(r.values.size), "grid_points": r.grid_points, "excluded_grid_points": r.excluded}
            kap, err = _try(excess_kurtosis, r)
            src["kurtosis"] = kap if err is None else {"error": err}
            a2, err2 = _try(acf_squared, r, max_lag)
            a1, err1 = _try(acf_abs, r, max_lag)
            src["acf"] = {"error": err2 or err1} if a2 is None or a1 is None else {
                "band": a2.band, "sqr_lag1": float(a2.values[1]) if max_lag else None,
                "abs_lag1": float(a1.values[1]) if max_lag else None}
            if a2 is not None and a1 is not None:
                acf_rows += [(k, int(l), float(s), float(b), a2.band) for l, s, b in zip(a2.lags, a2.values, a1.values)]
            d, err = _try(dfa_alpha, np.abs(r.values))
            if d is None:
                src["dfa"] = {"error": err}
            else:
                src["dfa"] = {"alpha": d["alpha"], "gamma": d["gamma"], "fit": d["fit"]}
                dfa_rows += [(k, int(s), float(v)) for s, v in zip(d["scales"], d["fluctuation"])]
            h, err = _try(hurst_rs, np.abs(r.values))
            if h is None:
                src["hurst"] = {"error": err}
            else:
                src["hurst"] = {"H": h["H"], "ci95": list(h["ci95"]), "white_noise_band95": list(h["white_noise_band95"]),
                                "ci95_regression": list(h["ci95_regression"]), "fit": h["fit"]}
                rs_rows += [(k, int(m), float(a), float(b)) for m, a, b in zip(h["windows"], h["rs"], h["expected_rs"])]
        ms = market_series(f)
        src["traded"] = {"dollars": float(ms["cum_dollars"][-1]) if len(f) else 0.0,
                         "shares": int(ms["cum_shares"][-1]) if len(f) else 0}
        spread_rows += [(k, int(s), float(a), float(b), float(c))
                        for s, a, b, c in zip(ms["seconds"], ms["spread"], ms["vol_bid"], ms["vol_ask"])]
        cum_rows += [(k, i, float(d), int(s), float(m))
                     for i, (d, s, m) in enumerate(zip(ms["cum_dollars"], ms["cum_shares"], ms["mid"]))]
        fan, err = _try(future_return_fan, f.mid2, horizon, n_samples, seed)
        if fan is None:
            src["fan"] = {"error": err}
        else:
            src["fan"] = {"final_mean": float(fan["mean"][-1]), "final_lo": float(fan["lo"][-1]),
                          "final_hi": float(fan["hi"][-1])}
            fan_rows += [(k, int(o), float(m), float(lo), float(hi))
                         for o, m, lo, hi in zip(fan["offsets"], fan["mean"], fan["lo"], fan["hi"])]
        report["sources"][k] = src

    dist = flow_distributions(flows, bins)
    report["frequency"] = dist["frequency"]
    report["round_lot_mass"] = dist["round_lot_mass"]
    group = [k for k in names if k != reference]
    for key, path in (("kurtosis", ()), ("dfa", ("alpha",)), ("hurst", ("H",))):
        vals = []
        for k in group:
            v = report["sources"][k].get(key)
            for p in path:
                v = v.get(p) if isinstance(v, dict) else None
            if isinstance(v, float):
                vals.append(v)
        if vals:
            report.setdefault("across_trials", {})[key] = {
                "n": len(vals), "mean": float(np.mean(vals)), "sd": float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0}
    if reference is not None and reference in flows:
        div = {}
        for k in group:
            ref_c = dist["frequency"][reference]["counts"]
            d = {"type_freq_tv": _tv(dist["frequency"][k]["counts"], ref_c)}
            for t in TYPE_NAMES:
                d[f"size_tv_{t}"] = _tv(dist["size"][t]["counts"].get(k, []), dist["size"][t]["counts"].get(reference, []))
                d[f"interarrival_tv_{t}"] = _tv(dist["interarrival"][t]["counts"].get(k, []),
                                                dist["interarrival"][t]["counts"].get(reference, []))
            div[k] = d
        report["divergence_vs_" + reference] = div

    csvs["type_freq.csv"] = _csv(
        ["source", "type", "count", "freq", "ci_lo", "ci_hi"],
        [(k, TYPE_NAMES[i], c, fr, lo, hi) for k in names for i, (c, fr, (lo, hi)) in
         enumerate(zip(dist["frequency"][k]["counts"], dist["frequency"][k]["freq"], dist["frequency"][k]["ci95"]))])
    for kind in ("size", "interarrival"):
        for t in TYPE_NAMES:
            h = dist[kind][t]
            e = h["edges"]
            csvs[f"{kind}_{t}.csv"] = _csv(
                ["bin_lo", "bin_hi", *names],
                [(float(e[i]), float(e[i + 1]), *(h["counts"][k][i] for k in names)) for i in range(len(e) - 1)])
    csvs["spread_volume.csv"] = _csv(["source", "second", "spread_ticks", "vol_bid_1", "vol_ask_1"], spread_rows)
    csvs["acf.csv"] = _csv(["source", "lag", "acf_sqr", "acf_abs", "band"], acf_rows)
    csvs["dfa.csv"] = _csv(["source", "scale", "fluctuation"], dfa_rows)
    csvs["rs.csv"] = _csv(["source", "window", "rs", "expected_rs"], rs_rows)
    csvs["cumulative.csv"] = _csv(["source", "index", "cum_dollars", "cum_shares", "mid"], cum_rows)
    csvs["return_fan.csv"] = _csv(["source", "offset", "mean", "lo", "hi"], fan_rows)
    return _clean(report), csvs


def write_report(report: dict, csvs: Mapping[str, str], out_dir) -> list[str]:
    """Write ``report.json`` and the CSVs; returns the written file names."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n",
                                     encoding="utf-8")
    for name in sorted(csvs):
        (out / name).write_text(csvs[name], encoding="utf-8")
    return ["report.json", *sorted(csvs)]
