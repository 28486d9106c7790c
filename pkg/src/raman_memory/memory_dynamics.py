"""Linear storage and retrieval dynamics of a far-detuned Raman memory.

After adiabatic elimination of the excited state the signal field E(z, t)
and the spin wave S(z, t) obey

    dE/dz = i (d/Delta) E + i (sqrt(d) Omega(t)/Delta) S
    dS/dt = i (|Omega|^2/Delta) S + i (sqrt(d) Omega*(t)/Delta) E

on z in [0, 1] (cell length normalised to one).  The two diagonal terms are
pure phases and are removed exactly by writing

    E = exp(i (d z + h0(t)) / Delta) e,   S = exp(i (d z + h0(t)) / Delta) s,
    h0(t) = int_0^t |Omega|^2,

which leaves de/dz = i g(t) s, ds/dt = i g*(t) e with g = sqrt(d) Omega/Delta.
That reduced system is discretised with a box scheme whose per-cell update
is a Cayley transform, so the discrete map is exactly unitary in the
weighted norms sum|E|^2 dt + sum|S|^2 dz.  Along z, inside one time step,
the update is a first-order linear recurrence with constant coefficients and
is evaluated with ``scipy.signal.lfilter``.

``storage_kernel_matrix`` is the closed-form Green's function of the same
equations and is kept as an independent cross-check of the solver.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter
from scipy.special import j0

from .grid_pulse import ComplexEnvelope, Grid

log = logging.getLogger(__name__)

__all__ = [
    "MemoryParams",
    "StorageResult",
    "RetrievalResult",
    "SolverToleranceError",
    "propagate_storage",
    "propagate_retrieval",
    "storage_kernel_matrix",
    "efficiencies",
    "cumulative_energy",
    "StorageOperator",
    "result_to_json",
    "DEFAULT_KAPPA",
    "intensity_from_power",
    "power_from_intensity",
]

# slack allowed on efficiencies above one from round-off
EPS_NUM = 1e-6
NORM_DEFECT_TOL = 1e-3

# |Omega|^2 per mW of drive power (GHz^2/mW).  Fitted, not derived: the
# optimised write control that stores 84% of the 10-ns reference input at
# d=1100, Delta=3 GHz has peak |Omega|^2 = 4.3452e-3 GHz^2, assigned to 190 mW.
DEFAULT_KAPPA = 4.345187597592641e-3 / 190.0


class SolverToleranceError(RuntimeError):
    pass


@dataclass(frozen=True)
class MemoryParams:
    """Model parameters.

    ``d`` is the optical depth in the dimensionless unit convention of the
    model, ``delta_w``/``delta_r`` the write/read detunings (GHz),
    ``t_write`` the write window (ns), ``nz``/``nt`` the grid sizes.
    ``t_read`` and ``nt_read`` describe the read window and default to the
    write values.
    """

    d: float = 1100.0
    delta_w: float = 3.0
    delta_r: float = 3.0
    t_write: float = 40.0
    nz: int = 200
    nt: int = 400
    t_read: float | None = None
    nt_read: int | None = None
    adiabatic_threshold: float = 0.25

    def __post_init__(self):
        if not self.d > 0:
            raise ValueError("optical depth d must be positive")
        if self.delta_w == 0 or self.delta_r == 0:
            raise ValueError("detunings must be nonzero")
        if not self.t_write > 0:
            raise ValueError("t_write must be positive")
        if self.t_read is not None and not self.t_read > 0:
            raise ValueError("t_read must be positive")
        if int(self.nz) < 16 or int(self.nt) < 16:
            raise ValueError("nz and nt must be >= 16")
        if self.nt_read is not None and int(self.nt_read) < 16:
            raise ValueError("nt_read must be >= 16")
        if not self.adiabatic_threshold > 0:
            raise ValueError("adiabatic_threshold must be positive")

    @property
    def read_window(self) -> float:
        return self.t_write if self.t_read is None else self.t_read

    def time_grid(self) -> Grid:
        return Grid.cells(0.0, self.t_write, int(self.nt))

    def read_grid(self) -> Grid:
        n = self.nt if self.nt_read is None else self.nt_read
        return Grid.cells(0.0, self.read_window, int(n))

    def space_grid(self) -> Grid:
        return Grid.unit_space(int(self.nz))

    def adiabaticity(self, control: ComplexEnvelope, delta: float) -> dict:
        """Dimensionless strain figures; large values mean the model is stretched."""
        stark = float(np.max(np.abs(control.samples) ** 2) * control.grid.span / abs(delta))
        return {"stark": stark, "depth": self.d / abs(delta)}

    def check_adiabatic(self, control: ComplexEnvelope, delta: float) -> bool:
        a = self.adiabaticity(control, delta)
        ok = max(a.values()) <= self.adiabatic_threshold
        if not ok:
            log.debug("adiabaticity strain %s above %s", a, self.adiabatic_threshold)
        return ok

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "delta_w": self.delta_w,
            "delta_r": self.delta_r,
            "t_write": self.t_write,
            "t_read": self.t_read,
            "nz": int(self.nz),
            "nt": int(self.nt),
            "nt_read": None if self.nt_read is None else int(self.nt_read),
            "adiabatic_threshold": self.adiabatic_threshold,
        }


@dataclass(frozen=True)
class StorageResult:
    spin_wave: ComplexEnvelope
    leak: ComplexEnvelope
    eta_w: float
    adiabatic: bool = True


@dataclass(frozen=True)
class RetrievalResult:
    output: ComplexEnvelope
    residual_spin: ComplexEnvelope
    eta_r: float
    adiabatic: bool = True


def cumulative_energy(control: np.ndarray, dt: float) -> np.ndarray:
    """int_0^t |Omega|^2 evaluated at cell centres (piecewise-constant control)."""
    p = np.abs(control) ** 2 * dt
    return np.cumsum(p) - 0.5 * p


def _cell_coefficients(g: np.ndarray, dz: float, dt: float):
    kappa = 0.5 * g * np.sqrt(dz * dt)
    k2 = np.abs(kappa) ** 2
    den = 1.0 + k2
    a = (1.0 - k2) / den
    b = 2j * kappa / den
    c = 2j * np.conj(kappa) / den
    return a, b, c


def _sweep(g, u_in, v0, dz, dt, keep_history=False):
    """Forward sweep of the reduced scaled system.

    ``u_in`` is sqrt(dt) e(0, t_k); ``v0`` is sqrt(dz) s(z_j, 0).  Returns the
    scaled outgoing field at z = 1, the final scaled spin column and
    optionally the spin column before every time step.
    """
    a, b, c = _cell_coefficients(g, dz, dt)
    nt = len(g)
    v = np.array(v0, dtype=complex)
    u_out = np.zeros(nt, dtype=complex)
    hist = np.empty((nt, len(v)), dtype=complex) if keep_history else None
    for k in range(nt):
        if keep_history:
            hist[k] = v
        if b[k] == 0:
            u_out[k] = u_in[k]
            continue
        # y[j] = a u_j + b v_j with u_0 = u_in[k], y[j] = u_{j+1}
        y, _ = lfilter([b[k]], [1.0, -a[k]], v, zi=[a[k] * u_in[k]])
        u = np.empty_like(v)
        u[0] = u_in[k]
        u[1:] = y[:-1]
        u_out[k] = y[-1]
        v = c[k] * u + a[k] * v
    return u_out, v, hist


def _adjoint_sweep(g, w_out, y_final, dz, dt):
    """Apply the inverse (= adjoint) of the unitary sweep.

    Given the scaled outgoing field ``w_out`` and final spin ``y_final``,
    returns the scaled input field and initial spin that produce them.
    """
    a, b, c = _cell_coefficients(g, dz, dt)
    nt = len(g)
    v = np.array(y_final, dtype=complex)
    u_in = np.zeros(nt, dtype=complex)
    for k in range(nt - 1, -1, -1):
        if b[k] == 0:
            u_in[k] = w_out[k]
            continue
        # inverse cell: u_j = a u_{j+1} + conj(c) v'_j, v_j = conj(b) u_{j+1} + a v'_j
        vr = v[::-1]
        y, _ = lfilter([np.conj(c[k])], [1.0, -a[k]], vr, zi=[a[k] * w_out[k]])
        # y[m] is u at index nz-1-m
        u_next = np.empty_like(v)
        u_next[-1] = w_out[k]
        u_next[:-1] = y[::-1][1:]
        u_in[k] = y[-1]
        v = np.conj(b[k]) * u_next + a[k] * v
    return u_in, v


def _check_grids(grid: Grid, *envs: ComplexEnvelope):
    for e in envs:
        if not e.grid.matches(grid):
            raise ValueError(f"envelope grid {e.grid} does not match time grid {grid}")


def _coupling(params_d, delta, control):
    return np.sqrt(params_d) * np.asarray(control.samples) / delta


def _run(d, delta, control, field_in, spin_in, zgrid):
    """Solve with physical (unreduced) inputs; returns physical outputs."""
    tg = control.grid
    dt, dz = tg.step, zgrid.step
    z = zgrid.coords
    h0 = cumulative_energy(control.samples, dt)
    h_end = float(np.sum(np.abs(control.samples) ** 2) * dt)
    g = _coupling(d, delta, control)
    e_in = field_in * np.exp(-1j * h0 / delta)
    s_in = spin_in * np.exp(-1j * d * z / delta)
    u_out, v_fin, _ = _sweep(g, np.sqrt(dt) * e_in, np.sqrt(dz) * s_in, dz, dt)
    e_out = u_out / np.sqrt(dt) * np.exp(1j * (d + h0) / delta)
    s_out = v_fin / np.sqrt(dz) * np.exp(1j * (d * z + h_end) / delta)
    return e_out, s_out


def _norm_defect(n_in, n_out):
    return abs(n_out - n_in) / n_in if n_in > 0 else 0.0


def propagate_storage(
    params: MemoryParams, write: ComplexEnvelope, input: ComplexEnvelope
) -> StorageResult:
    """Store ``input`` with write control ``write``; spin starts empty."""
    tg = write.grid
    _check_grids(tg, input)
    zg = params.space_grid()
    e_out, s_out = _run(
        params.d, params.delta_w, write, np.asarray(input.samples), np.zeros(zg.n_points), zg
    )
    spin = ComplexEnvelope(zg, s_out)
    leak = ComplexEnvelope(tg, e_out)
    n_in = input.norm2
    defect = _norm_defect(n_in, spin.norm2 + leak.norm2)
    if defect > NORM_DEFECT_TOL:
        raise SolverToleranceError(
            f"solver tolerance exceeded: norm defect {defect:.2e}; refine the grid"
        )
    eta = 1.0 - leak.norm2 / n_in if n_in > 0 else 0.0
    return StorageResult(
        spin, leak, float(max(eta, 0.0)), params.check_adiabatic(write, params.delta_w)
    )


def propagate_retrieval(
    params: MemoryParams, read: ComplexEnvelope, spin: ComplexEnvelope
) -> RetrievalResult:
    """Forward retrieval of ``spin`` by the read control; no input field."""
    zg = params.space_grid()
    if not spin.grid.matches(zg):
        raise ValueError(f"spin wave grid {spin.grid} does not match space grid {zg}")
    tg = read.grid
    e_out, s_out = _run(
        params.d, params.delta_r, read, np.zeros(tg.n_points), np.asarray(spin.samples), zg
    )
    out = ComplexEnvelope(tg, e_out)
    res = ComplexEnvelope(zg, s_out)
    n0 = spin.norm2
    defect = _norm_defect(n0, out.norm2 + res.norm2)
    if defect > NORM_DEFECT_TOL:
        raise SolverToleranceError(
            f"solver tolerance exceeded: norm defect {defect:.2e}; refine the grid"
        )
    eta = out.norm2 / n0 if n0 > 0 else 0.0
    return RetrievalResult(out, res, float(eta), params.check_adiabatic(read, params.delta_r))


def storage_kernel_matrix(params: MemoryParams, write: ComplexEnvelope) -> np.ndarray:
    """Closed-form storage map, K[iz, it] = q(z_i, t_i) dt.

    q(z, t) = i sqrt(d)/Delta Omega*(t) exp(i (d z + h(t, tW))/Delta)
              J0(2 sqrt(h(t, tW) d z) / |Delta|),   h(t, tW) = int_t^tW |Omega|^2.
    """
    tg = write.grid
    d, delta = params.d, params.delta_w
    z = params.space_grid().coords
    om = np.asarray(write.samples)
    p = np.abs(om) ** 2 * tg.step
    # tail integral from each cell centre to the end of the window
    h = np.cumsum(p[::-1])[::-1] - 0.5 * p
    zz, hh = np.meshgrid(z, h, indexing="ij")
    q = (
        1j
        * np.sqrt(d)
        / delta
        * np.conj(om)[None, :]
        * np.exp(1j * (d * zz + hh) / delta)
        * j0(2.0 * np.sqrt(hh * d * zz) / abs(delta))
    )
    return q * tg.step


def efficiencies(storage: StorageResult, retrieval: RetrievalResult) -> tuple[float, float, float]:
    eta_w, eta_r = float(storage.eta_w), float(retrieval.eta_r)
    for name, v in (("eta_w", eta_w), ("eta_r", eta_r)):
        if v < 0 or v > 1 + EPS_NUM:
            warnings.warn(f"{name}={v} outside [0, 1]")
    return eta_w, eta_r, eta_w * eta_r


class StorageOperator:
    """Matrix-free storage map input(t) -> S(z, tW) for a fixed control.

    Inner products are the physical L2 ones (weights dt and dz), so
    ``adjoint`` is the Hilbert-space adjoint and ``||apply(x)|| <= ||x||``.
    """

    def __init__(self, params: MemoryParams, write: ComplexEnvelope, delta: float | None = None):
        self.params = params
        self.write = write
        self.delta = params.delta_w if delta is None else delta
        self.tgrid = write.grid
        self.zgrid = params.space_grid()
        tg, zg = self.tgrid, self.zgrid
        self._dt, self._dz = tg.step, zg.step
        self._g = _coupling(params.d, self.delta, write)
        h0 = cumulative_energy(write.samples, tg.step)
        h_end = float(np.sum(np.abs(write.samples) ** 2) * tg.step)
        self._in_phase = np.exp(-1j * h0 / self.delta)
        self._out_phase = np.exp(1j * (params.d * zg.coords + h_end) / self.delta)

    @property
    def shape(self):
        return (self.zgrid.n_points, self.tgrid.n_points)

    def apply(self, x: np.ndarray) -> np.ndarray:
        u = np.sqrt(self._dt) * self._in_phase * np.asarray(x, dtype=complex)
        _, v, _ = _sweep(self._g, u, np.zeros(self.shape[0], complex), self._dz, self._dt)
        return v / np.sqrt(self._dz) * self._out_phase

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        v = np.sqrt(self._dz) * np.conj(self._out_phase) * np.asarray(y, dtype=complex)
        u, _ = _adjoint_sweep(self._g, np.zeros(self.shape[1], complex), v, self._dz, self._dt)
        return u / np.sqrt(self._dt) * np.conj(self._in_phase)

    def dense(self) -> np.ndarray:
        """Dense matrix M with apply(x) == M @ x (columns by unit inputs)."""
        n = self.shape[1]
        return np.column_stack([self.apply(col) for col in np.eye(n)])


def intensity_from_power(power_mw, kappa: float = DEFAULT_KAPPA):
    """Peak |Omega|^2 for a drive of ``power_mw`` milliwatts (Omega^2 = kappa P)."""
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    return kappa * np.asarray(power_mw, dtype=float)


def power_from_intensity(intensity, kappa: float = DEFAULT_KAPPA):
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    return np.asarray(intensity, dtype=float) / kappa


def result_to_json(params: MemoryParams, storage=None, retrieval=None, **extra) -> str:
    doc = {"params": params.to_dict()}
    if storage is not None:
        doc["eta_w"] = storage.eta_w
    if retrieval is not None:
        doc["eta_r"] = retrieval.eta_r
    if storage is not None and retrieval is not None:
        doc["eta_t"] = storage.eta_w * retrieval.eta_r
    doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=True)
