"""Uniform grids, complex envelopes and pulse shapes.

Time is measured in nanoseconds and frequencies in GHz.  Every sample of an
envelope stands for the grid cell centred on it, so ``norm2`` and ``energy``
are plain midpoint sums.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "Grid",
    "ComplexEnvelope",
    "PulseShapeSpec",
    "make_pulse",
    "energy",
    "fwhm",
    "bandwidth_estimate",
    "dilate",
    "envelope_to_csv",
    "envelope_from_csv",
    "envelope_to_json",
    "envelope_from_json",
]


@dataclass(frozen=True)
class Grid:
    start: float
    step: float
    n_points: int

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError(f"grid step must be positive, got {self.step}")
        if int(self.n_points) < 2:
            raise ValueError(f"grid needs at least 2 points, got {self.n_points}")
        object.__setattr__(self, "n_points", int(self.n_points))
        object.__setattr__(self, "start", float(self.start))
        object.__setattr__(self, "step", float(self.step))

    @classmethod
    def cells(cls, lo: float, hi: float, n: int) -> "Grid":
        """Grid of ``n`` cell centres tiling ``[lo, hi]`` exactly."""
        step = (hi - lo) / n
        return cls(lo + 0.5 * step, step, n)

    @classmethod
    def unit_space(cls, nz: int) -> "Grid":
        return cls.cells(0.0, 1.0, nz)

    @property
    def coords(self) -> np.ndarray:
        return self.start + self.step * np.arange(self.n_points)

    @property
    def lo(self) -> float:
        """Left edge of the first cell."""
        return self.start - 0.5 * self.step

    @property
    def hi(self) -> float:
        """Right edge of the last cell."""
        return self.start + (self.n_points - 0.5) * self.step

    @property
    def span(self) -> float:
        return self.n_points * self.step

    def matches(self, other: "Grid", rtol: float = 1e-9) -> bool:
        scale = max(abs(self.step), abs(self.start), 1.0)
        return (
            self.n_points == other.n_points
            and abs(self.step - other.step) <= rtol * scale
            and abs(self.start - other.start) <= rtol * scale
        )

    def to_dict(self) -> dict:
        return {"start": self.start, "step": self.step, "n_points": self.n_points}


@dataclass(frozen=True)
class ComplexEnvelope:
    grid: Grid
    samples: np.ndarray = field(repr=False)

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=complex).copy()
        if s.ndim != 1 or s.shape[0] != self.grid.n_points:
            raise ValueError(
                f"envelope has {s.shape} samples for a grid of {self.grid.n_points} points"
            )
        s.flags.writeable = False
        object.__setattr__(self, "samples", s)

    @classmethod
    def zeros(cls, grid: Grid) -> "ComplexEnvelope":
        return cls(grid, np.zeros(grid.n_points, dtype=complex))

    @property
    def coords(self) -> np.ndarray:
        return self.grid.coords

    @property
    def norm2(self) -> float:
        return float(np.sum(np.abs(self.samples) ** 2) * self.grid.step)

    def scaled(self, factor: complex) -> "ComplexEnvelope":
        return ComplexEnvelope(self.grid, factor * self.samples)

    def normalized(self) -> "ComplexEnvelope":
        n2 = self.norm2
        if n2 <= 0:
            raise ValueError("cannot normalize a zero envelope")
        return self.scaled(1.0 / np.sqrt(n2))

    def inner(self, other: "ComplexEnvelope") -> complex:
        """L2 inner product <self, other>, antilinear in ``self``."""
        return complex(np.vdot(self.samples, other.samples) * self.grid.step)

    def shifted(self, delay: float) -> "ComplexEnvelope":
        """Shift later in time by ``delay`` rounded to whole steps, zero-filled."""
        k = int(round(delay / self.grid.step))
        out = np.zeros_like(self.samples)
        n = self.grid.n_points
        if k >= 0:
            out[k:] = self.samples[: n - k] if k < n else []
        else:
            out[: n + k] = self.samples[-k:]
        return ComplexEnvelope(self.grid, out)


@dataclass(frozen=True)
class PulseShapeSpec:
    """Pulse description.

    ``width`` is the full duration for square pulses and the intensity FWHM
    for Gaussian pulses.  ``delay`` is the leading edge of a square pulse and
    the centre of a Gaussian.  ``rise_time=None`` means two grid steps.
    """

    kind: str
    width: float = 10.0
    amplitude: complex = 1.0
    delay: float = 0.0
    rise_time: Optional[float] = None
    samples: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("square", "gaussian", "custom"):
            raise ValueError(f"unknown pulse kind {self.kind!r}")
        if self.kind == "custom":
            if self.samples is None:
                raise ValueError("custom pulse needs samples")
        elif not self.width > 0:
            raise ValueError("pulse width must be positive")
        if self.rise_time is not None and self.rise_time < 0:
            raise ValueError("rise time must be >= 0")


# intensity cutoff used to decide where a Gaussian tail counts as support
GAUSSIAN_SUPPORT_CUTOFF = 1e-4


def _raised_cosine_box(t, start, duration, rise):
    out = ((t >= start) & (t < start + duration)).astype(float)
    if rise <= 0:
        return out
    rise = min(rise, duration / 2)
    up = (t >= start) & (t < start + rise)
    out[up] = 0.5 * (1 - np.cos(np.pi * (t[up] - start) / rise))
    stop = start + duration
    down = (t > stop - rise) & (t < stop)
    out[down] = 0.5 * (1 - np.cos(np.pi * (stop - t[down]) / rise))
    return out


def make_pulse(spec: PulseShapeSpec, grid: Grid) -> ComplexEnvelope:
    """Sample ``spec`` on ``grid``.

    Raises ``ValueError("pulse truncated ...")`` when the pulse support leaves
    the grid extent.
    """
    t = grid.coords
    tol = 1e-9 * max(1.0, grid.step)
    if spec.kind == "custom":
        s = np.asarray(spec.samples, dtype=complex)
        if s.shape != (grid.n_points,):
            raise ValueError("pulse truncated: custom samples do not fit the grid")
        return ComplexEnvelope(grid, spec.amplitude * s)
    if spec.kind == "square":
        lo, hi = spec.delay, spec.delay + spec.width
        if lo < grid.lo - tol or hi > grid.hi + tol:
            raise ValueError(
                f"pulse truncated: support [{lo}, {hi}] exceeds grid [{grid.lo}, {grid.hi}]"
            )
        rise = 2 * grid.step if spec.rise_time is None else spec.rise_time
        shape = _raised_cosine_box(t, lo, spec.width, rise)
    else:
        # |f|^2 = exp(-4 ln2 (t - t0)^2 / fwhm^2)
        half = spec.width * np.sqrt(np.log(1 / GAUSSIAN_SUPPORT_CUTOFF) / (4 * np.log(2)))
        if spec.delay - half < grid.lo - tol or spec.delay + half > grid.hi + tol:
            raise ValueError(
                f"pulse truncated: gaussian centred at {spec.delay} needs +-{half:.3g}"
            )
        shape = np.exp(-2 * np.log(2) * (t - spec.delay) ** 2 / spec.width**2)
    return ComplexEnvelope(grid, spec.amplitude * shape)


def energy(env: ComplexEnvelope) -> float:
    return env.norm2


def _outer_crossings(x, y):
    peak = y.max()
    if not peak > 0:
        raise ValueError("no peak: envelope is identically zero")
    half = 0.5 * peak
    above = np.nonzero(y >= half)[0]
    i, j = above[0], above[-1]
    if i == 0:
        left = x[0]
    else:
        left = x[i - 1] + (half - y[i - 1]) * (x[i] - x[i - 1]) / (y[i] - y[i - 1])
    if j == len(y) - 1:
        right = x[-1]
    else:
        right = x[j] + (y[j] - half) * (x[j + 1] - x[j]) / (y[j] - y[j + 1])
    return left, right


def fwhm(env: ComplexEnvelope) -> float:
    """FWHM of |env|^2 between the outermost half-maximum crossings."""
    left, right = _outer_crossings(env.coords, np.abs(env.samples) ** 2)
    return float(right - left)


def bandwidth_estimate(env: ComplexEnvelope, pad_factor: int = 16) -> float:
    """FWHM of the power spectrum, in inverse time units (GHz for ns grids).

    The envelope is zero padded to ``pad_factor`` times its length so the
    spectral peak is sampled finely enough for interpolation.
    """
    s = np.asarray(env.samples)
    if not np.any(np.abs(s) > 0):
        raise ValueError("no peak: envelope is identically zero")
    n = pad_factor * len(s)
    spec = np.fft.fftshift(np.abs(np.fft.fft(s, n)) ** 2)
    freqs = np.fft.fftshift(np.fft.fftfreq(n, d=env.grid.step))
    left, right = _outer_crossings(freqs, spec)
    return float(right - left)


def dilate(env: ComplexEnvelope, factor: float, grid: Optional[Grid] = None) -> ComplexEnvelope:
    """Stretch ``env`` in time by ``factor`` about the grid origin (``t -> t/factor``).

    The result is resampled by linear interpolation on ``grid`` (the input grid
    with its step scaled by ``factor`` when omitted).
    """
    if grid is None:
        g = env.grid
        grid = Grid(g.start * factor, g.step * factor, g.n_points)
    t = grid.coords / factor
    x = env.coords
    re = np.interp(t, x, env.samples.real, left=0.0, right=0.0)
    im = np.interp(t, x, env.samples.imag, left=0.0, right=0.0)
    return ComplexEnvelope(grid, re + 1j * im)


def envelope_to_csv(env: ComplexEnvelope) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["coordinate", "re", "im"])
    for x, s in zip(env.coords, env.samples):
        w.writerow([repr(float(x)), repr(float(s.real)), repr(float(s.imag))])
    return buf.getvalue()


def envelope_from_csv(text: str) -> ComplexEnvelope:
    """Parse ``envelope_to_csv`` output; lines starting with ``#`` are skipped."""
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    if not rows or [c.strip() for c in rows[0]] != ["coordinate", "re", "im"]:
        raise ValueError("envelope CSV must start with header coordinate,re,im")
    data = np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=float)
    if data.shape[0] < 2:
        raise ValueError("envelope CSV needs at least two rows")
    x = data[:, 0]
    steps = np.diff(x)
    step = float(np.mean(steps))
    if not np.allclose(steps, step, rtol=1e-6, atol=1e-12):
        raise ValueError("envelope CSV coordinates are not uniformly spaced")
    return ComplexEnvelope(Grid(float(x[0]), step, len(x)), data[:, 1] + 1j * data[:, 2])


def envelope_to_json(env: ComplexEnvelope) -> str:
    doc = {
        "grid": env.grid.to_dict(),
        "samples": [[float(s.real), float(s.imag)] for s in env.samples],
    }
    return json.dumps(doc)


def envelope_from_json(text) -> ComplexEnvelope:
    doc = json.loads(text) if isinstance(text, str) else text
    g = doc["grid"]
    s = np.asarray(doc["samples"], dtype=float).reshape(-1, 2)
    return ComplexEnvelope(Grid(g["start"], g["step"], g["n_points"]), s[:, 0] + 1j * s[:, 1])
