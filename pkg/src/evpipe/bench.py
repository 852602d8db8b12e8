"""Throughput measurements for the compiled and numpy kernel backends."""

from __future__ import annotations

import time

import numpy as np

from evpipe import kernels
from evpipe.encoding import cell_index
from evpipe.model import EventStream, SensorGeometry, ms_to_us


def random_stream(n: int, geometry: SensorGeometry | None = None, rate_hz: float = 2e6, seed: int = 0) -> EventStream:
    """Uniform events at roughly ``rate_hz`` events per second."""
    geometry = geometry or SensorGeometry()
    rng = np.random.default_rng(seed)
    gaps = rng.exponential(1e6 / rate_hz, size=n)
    t = np.floor(np.cumsum(gaps)).astype(np.int64)
    x = rng.integers(0, geometry.width, size=n)
    y = rng.integers(0, geometry.height, size=n)
    p = rng.integers(0, 2, size=n)
    return EventStream(t, x, y, p, geometry)


def fixed_time_throughput(stream: EventStream, window_ms: float = 15.0, backend: str | None = None, repeat: int = 3):
    """Histogram the whole stream in consecutive fixed windows; return best events/second."""
    impl = kernels.backend(backend) if backend else kernels
    geo = stream.geometry
    span = ms_to_us(window_ms)
    edges = np.arange(int(stream.t[0]), int(stream.t[-1]) + span + 1, span)
    bounds = np.searchsorted(stream.t, edges, side="left")
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        total = 0
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            if hi > lo:
                h = impl.histogram2c(stream.x[lo:hi], stream.y[lo:hi], stream.p[lo:hi], geo.height, geo.width)
                total += hi - lo
        best = min(best, time.perf_counter() - start)
    return {"events": int(total), "seconds": best, "events_per_second": total / best if best > 0 else float("inf")}


def _time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def compare_backends(n: int = 1_000_000, repeat: int = 3, seed: int = 0) -> list[dict]:
    stream = random_stream(n, seed=seed)
    geo = stream.geometry
    cells = cell_index(stream.x, stream.y, geo, 4, 4)
    anchor = n // 2
    rows = []
    for name in kernels.available_backends():
        impl = kernels.backend(name)
        ft = fixed_time_throughput(stream, 15.0, name, repeat)
        hist_s = _time(lambda: impl.histogram2c(stream.x, stream.y, stream.p, geo.height, geo.width), repeat)
        # unreachable area threshold forces growth over the whole stream
        adapt_s = _time(lambda: impl.adaptive_search(stream.t, cells, anchor, 100, 15000.0, float(n), 16), repeat)
        grid_s = _time(lambda: impl.grid_threshold_search(cells, 0, n, 16), repeat)
        rows.append(
            {
                "backend": name,
                "fixed_time_events_per_s": ft["events_per_second"],
                "histogram_events_per_s": n / hist_s,
                "adaptive_full_growth_s": adapt_s,
                "grid_threshold_full_scan_s": grid_s,
            }
        )
    return rows


def format_rows(rows) -> str:
    head = f"{'backend':<8} {'fixed-time ev/s':>16} {'histogram ev/s':>16} {'adaptive s':>11} {'grid scan s':>12}"
    lines = [head]
    for r in rows:
        lines.append(
            f"{r['backend']:<8} {r['fixed_time_events_per_s']:>16.3e} {r['histogram_events_per_s']:>16.3e} "
            f"{r['adaptive_full_growth_s']:>11.4f} {r['grid_threshold_full_scan_s']:>12.4f}"
        )
    return "\n".join(lines)
