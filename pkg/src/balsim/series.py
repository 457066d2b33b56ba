"""Step-function time series used for all per-step unit data.

Timestamps are minutes from the scenario epoch. A series holds values on
its own uniform grid and is read as a piecewise-constant function with
edge extension, so lookups before the first or after the last sample
return the boundary value.
"""
from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class TimeSeries:
    start: int
    dt: int
    values: tuple[float, ...]

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("series dt must be positive")
        if not self.values:
            raise ValueError("series must hold at least one value")
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    @classmethod
    def constant(cls, value: float) -> "TimeSeries":
        return cls(start=0, dt=1, values=(float(value),))

    def at(self, t: int) -> float:
        i = (t - self.start) // self.dt
        if i < 0:
            i = 0
        elif i >= len(self.values):
            i = len(self.values) - 1
        return self.values[i]

    def sample(self, times) -> list[float]:
        return [self.at(t) for t in times]

    def breakpoints(self) -> list[int]:
        """Times at which the step function may change value."""
        return [self.start + i * self.dt for i in range(len(self.values))]

    def is_constant(self) -> bool:
        first = self.values[0]
        return all(v == first for v in self.values)

    def with_updates(self, times: list[int], step: int, new_values: list[float]) -> "TimeSeries":
        """Return a copy overridden on [times[0], times[-1]+step) by new_values.

        The result is re-gridded to gcd-compatible resolution so the window
        boundaries fall on sample points; outside the window the original
        profile is preserved.
        """
        if len(times) != len(new_values):
            raise ValueError("times and new_values must have equal length")
        if not times:
            return self
        import math

        res = math.gcd(self.dt, step)
        res = math.gcd(res, abs(times[0] - self.start)) or res
        lo = min(self.start, times[0])
        hi = max(self.start + len(self.values) * self.dt, times[-1] + step)
        grid = list(range(lo, hi, res))
        vals = [self.at(t) for t in grid]
        for t, v in zip(times, new_values):
            for k, g in enumerate(grid):
                if t <= g < t + step:
                    vals[k] = float(v)
        return TimeSeries(start=lo, dt=res, values=tuple(vals))


def as_series(value) -> TimeSeries:
    """Coerce a JSON-ish value (number, dict or TimeSeries) into a TimeSeries."""
    if isinstance(value, TimeSeries):
        return value
    if isinstance(value, (int, float)):
        return TimeSeries.constant(value)
    if isinstance(value, dict):
        return TimeSeries(start=int(value["start"]), dt=int(value["dt"]),
                          values=tuple(float(v) for v in value["values"]))
    raise TypeError(f"cannot interpret {value!r} as a time series")


def series_to_json(s: TimeSeries):
    if s.is_constant():
        return s.values[0]
    return {"start": s.start, "dt": s.dt, "values": list(s.values)}
