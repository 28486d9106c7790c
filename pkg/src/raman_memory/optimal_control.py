"""Optimal spin-wave modes and write-pulse shaping."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .grid_pulse import ComplexEnvelope, Grid
from .memory_dynamics import (
    MemoryParams,
    StorageOperator,
    _adjoint_sweep,
    _cell_coefficients,
    _sweep,
    cumulative_energy,
    propagate_storage,
)

log = logging.getLogger(__name__)

__all__ = [
    "OptimalModeResult",
    "ControlSolution",
    "optimal_spin_mode",
    "storage_objective_and_gradient",
    "mode_matched_control",
    "shape_write_pulse",
    "delayed_control_experiment",
    "square_control",
    "saturation_energy",
]


@dataclass
class OptimalModeResult:
    spin_mode: ComplexEnvelope
    max_efficiency: float
    iterations_used: int
    converged: bool
    input_mode: ComplexEnvelope | None = None
    history: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)


@dataclass
class ControlSolution:
    write_pulse: ComplexEnvelope
    achieved_eta_w: float
    objective_history: np.ndarray
    energy_budget: float
    converged: bool = True
    iterations: int = 0

    def to_json(self, **extra) -> str:
        g = self.write_pulse.grid
        doc = {
            "grid": g.to_dict(),
            "control": [[float(s.real), float(s.imag)] for s in self.write_pulse.samples],
            "achieved_eta_w": self.achieved_eta_w,
            "objective_history": [float(v) for v in self.objective_history],
            "energy_budget": self.energy_budget,
            "energy": self.write_pulse.norm2,
            "converged": self.converged,
            "iterations": self.iterations,
        }
        doc.update(extra)
        return json.dumps(doc, indent=2, sort_keys=True)


def square_control(grid: Grid, energy: float, lo: float | None = None, hi: float | None = None):
    """Flat control of total energy ``energy`` on [lo, hi] (whole grid by default)."""
    lo = grid.lo if lo is None else lo
    hi = grid.hi if hi is None else hi
    t = grid.coords
    mask = (t >= lo) & (t < hi)
    if not mask.any() or energy <= 0:
        return ComplexEnvelope.zeros(grid)
    amp = np.sqrt(energy / (mask.sum() * grid.step))
    return ComplexEnvelope(grid, amp * mask.astype(complex))


def _wnorm(x, step):
    return np.sqrt(np.sum(np.abs(x) ** 2) * step)


def optimal_spin_mode(
    params: MemoryParams,
    control_energy: float,
    max_iter: int = 200,
    tol: float = 1e-6,
    control: ComplexEnvelope | None = None,
    gap_iters: int = 30,
) -> OptimalModeResult:
    """Dominant singular mode of the storage map by power iteration on K K^dagger.

    The reference control is a flat pulse over the whole write window holding
    ``control_energy`` unless ``control`` is given.  ``max_efficiency`` is the
    squared top singular value; ``spin_mode`` the unit-norm left singular
    vector (a spin wave over z).
    """
    tg, zg = params.time_grid(), params.space_grid()
    if control is None:
        control = square_control(tg, control_energy)
    op = StorageOperator(params, control)
    y = np.ones(zg.n_points, dtype=complex)
    y /= _wnorm(y, zg.step)
    history = []
    eta_prev = -np.inf
    converged = False
    it = 0
    x = np.zeros(tg.n_points, complex)
    for it in range(1, max_iter + 1):
        x = op.adjoint(y)
        # Rayleigh quotient <y, K K^dagger y> for unit y
        eta = float(np.sum(np.abs(x) ** 2) * tg.step)
        history.append(eta)
        if eta <= 0:
            converged = True
            break
        y_new = op.apply(x)
        y = y_new / _wnorm(y_new, zg.step)
        if abs(eta - eta_prev) < tol:
            converged = True
            break
        eta_prev = eta
    x = op.adjoint(y)
    eta = float(np.sum(np.abs(x) ** 2) * tg.step)
    history.append(eta)
    input_mode = None
    if eta > 0:
        input_mode = ComplexEnvelope(tg, x / np.sqrt(eta))
    meta = {"control_energy": float(control.norm2)}
    if eta > 0 and gap_iters > 0:
        meta.update(_second_mode(op, y, zg.step, tg.step, eta, gap_iters, tol))
    return OptimalModeResult(
        ComplexEnvelope(zg, y), min(eta, 1.0 + 1e-12), it, converged, input_mode, history, meta
    )


def _second_mode(op, y1, dz, dt, eta1, iters, tol):
    """Deflated power iteration estimate of the second squared singular value."""
    rng = np.random.default_rng(0)
    y = rng.standard_normal(len(y1)) + 0j
    eta2 = 0.0
    for _ in range(iters):
        y = y - y1 * np.vdot(y1, y) * dz
        n = _wnorm(y, dz)
        if n == 0:
            break
        y = y / n
        x = op.adjoint(y)
        eta2 = float(np.sum(np.abs(x) ** 2) * dt)
        y = op.apply(x)
    return {"second_efficiency": eta2, "degenerate": bool(eta1 - eta2 < tol)}


def storage_objective_and_gradient(
    params: MemoryParams,
    control: np.ndarray,
    input: ComplexEnvelope,
    target: ComplexEnvelope | None = None,
    reg_weight: float = 0.0,
):
    """Storage efficiency (plus optional target overlap) and its exact gradient.

    Returns ``(eta_w, objective, grad)`` where ``grad = dJ/dRe(Omega_k) +
    1j dJ/dIm(Omega_k)`` for the discrete objective
    J = eta_w + reg_weight |<target, S>|^2 / ||input||^2.
    The gradient is obtained by a reverse sweep through the solver.
    """
    tg = input.grid
    zg = params.space_grid()
    dt, dz = tg.step, zg.step
    d, delta = params.d, params.delta_w
    om = np.asarray(control, dtype=complex)
    x = np.asarray(input.samples)
    n_in = input.norm2
    if n_in <= 0:
        raise ValueError("input envelope is zero")
    h0 = cumulative_energy(om, dt)
    u_in = np.sqrt(dt) * x * np.exp(-1j * h0 / delta)
    g = np.sqrt(d) * om / delta
    _, v_fin, hist = _sweep(g, u_in, np.zeros(zg.n_points, complex), dz, dt, keep_history=True)
    eta = float(np.sum(np.abs(v_fin) ** 2) / n_in)
    seed = v_fin.copy()
    obj = eta
    if target is not None and reg_weight:
        tau = np.asarray(target.samples) * np.exp(-1j * d * zg.coords / delta) * np.sqrt(dz)
        ov = np.vdot(tau, v_fin)
        obj += reg_weight * float(abs(ov) ** 2) / n_in
        seed = seed + reg_weight * tau * ov
    mu = seed / n_in

    a, b, c = _cell_coefficients(g, dz, dt)
    c0 = np.sqrt(d) * np.sqrt(dz * dt) / (2 * delta)
    kappa = c0 * om
    k2 = np.abs(kappa) ** 2
    den = 1 + k2
    nt = len(om)
    dk = np.zeros((nt, 2))
    u_bar = np.zeros(nt, complex)
    for k in range(nt - 1, -1, -1):
        v = hist[k]
        if b[k] != 0:
            y, _ = lfilter([b[k]], [1.0, -a[k]], v, zi=[a[k] * u_in[k]])
            u = np.empty_like(v)
            u[0] = u_in[k]
            u[1:] = y[:-1]
        else:
            u = np.full_like(v, u_in[k])
        for col, (kr, ki_unit) in enumerate(((kappa[k].real, 1.0), (kappa[k].imag, 1j))):
            dk2 = 2 * kr
            da = -2 * dk2 / den[k] ** 2
            db = 2j * ki_unit / den[k] - 2j * kappa[k] * dk2 / den[k] ** 2
            dc = 2j * np.conj(ki_unit) / den[k] - 2j * np.conj(kappa[k]) * dk2 / den[k] ** 2
            src = da * u + db * v
            yd = lfilter([1.0], [1.0, -a[k]], src)
            du = np.empty_like(v)
            du[0] = 0.0
            du[1:] = yd[:-1]
            dv = c[k] * du + dc * u + da * v
            dk[k, col] = 2 * np.real(np.vdot(mu, dv))
        # pull the adjoint back through step k
        ub, mu_prev = _adjoint_sweep(
            g[k : k + 1], np.zeros(1, complex), mu, dz, dt
        )
        u_bar[k] = ub[0]
        mu = mu_prev
    grad = c0 * (dk[:, 0] + 1j * dk[:, 1])
    # chain through the Stark phase exp(-i h0/Delta) on the reduced input
    gk = 2 * np.imag(np.conj(u_bar) * u_in) / delta
    tail = np.cumsum(gk[::-1])[::-1]
    dj_dp = tail - 0.5 * gk
    grad = grad + dj_dp * 2 * om * dt
    return eta, obj, grad


def mode_matched_control(
    params: MemoryParams, input: ComplexEnvelope, energy_budget: float, tol: float = 1e-10
) -> ComplexEnvelope:
    """Control that maps ``input`` onto the optimal input mode.

    In the reparametrised time w(t) = (d/Delta^2) int_0^t |Omega|^2 the
    storage map depends only on the total W, so the best input mode rho(w)
    is found once (power iteration with a flat control) and the control is
    chosen so that the input's cumulative energy matches rho's cumulative
    energy: |Omega(t)|^2 = (Delta^2/d) dw/dt.  The control phase cancels the
    input phase and the Stark phase.
    """
    tg = input.grid
    if energy_budget <= 0:
        return ComplexEnvelope.zeros(tg)
    d, delta = params.d, params.delta_w
    res = optimal_spin_mode(params, energy_budget, max_iter=500, tol=tol, gap_iters=0)
    w_total = d * energy_budget / delta**2
    rho2 = np.abs(res.input_mode.samples) ** 2
    # cumulative energy of the mode on its flat-control w grid (cell edges)
    w_edges = np.linspace(0.0, w_total, tg.n_points + 1)
    f_mode = np.concatenate([[0.0], np.cumsum(rho2)])
    f_mode /= f_mode[-1]
    x2 = np.abs(input.samples) ** 2
    f_in = np.concatenate([[0.0], np.cumsum(x2)])
    f_in /= f_in[-1]
    w_at_edges = np.interp(f_in, f_mode, w_edges)
    dw = np.diff(w_at_edges)
    om2 = np.clip(dw, 0, None) * delta**2 / d / tg.step
    om2 *= energy_budget / max(np.sum(om2) * tg.step, 1e-300)
    h0 = cumulative_energy(np.sqrt(om2), tg.step)
    phase = np.angle(input.samples) - h0 / delta
    return ComplexEnvelope(tg, np.sqrt(om2) * np.exp(1j * phase))


def _project(om, budget, dt):
    e = np.sum(np.abs(om) ** 2) * dt
    if e > budget and e > 0:
        om = om * np.sqrt(budget / e)
    return om


def _smooth_penalty(om, dt):
    d2 = om[2:] - 2 * om[1:-1] + om[:-2]
    val = float(np.sum(np.abs(d2) ** 2) / dt**3)
    g = np.zeros_like(om)
    g[2:] += d2
    g[1:-1] += -2 * d2
    g[:-2] += d2
    return val, 2 * g / dt**3


def shape_write_pulse(
    params: MemoryParams,
    input: ComplexEnvelope,
    target_spin: ComplexEnvelope | None = None,
    energy_budget: float = 0.05,
    max_iter: int = 200,
    tol: float = 1e-6,
    reg_weight: float = 0.0,
    smooth_weight: float = 0.0,
    warm_start="mode_matching",
) -> ControlSolution:
    """Maximise storage efficiency of ``input`` over the write control.

    Projected gradient ascent on the complex control samples with the energy
    constraint int |Omega|^2 dt <= energy_budget.  ``warm_start`` is
    ``"mode_matching"`` (see ``mode_matched_control``), ``"square"`` (flat
    control over the input support) or an explicit envelope.  Steps are only
    accepted when the objective increases, so the recorded history is
    nondecreasing.
    """
    tg = input.grid
    if input.norm2 <= 0:
        raise ValueError("input envelope is zero")
    if energy_budget < 0:
        raise ValueError("energy budget must be >= 0")
    if energy_budget == 0:
        zero = ComplexEnvelope.zeros(tg)
        return ControlSolution(zero, 0.0, np.array([0.0]), 0.0, True, 0)
    dt = tg.step

    if isinstance(warm_start, ComplexEnvelope):
        om = np.asarray(warm_start.samples, dtype=complex)
    elif warm_start == "mode_matching":
        om = np.asarray(mode_matched_control(params, input, energy_budget).samples)
    elif warm_start == "square":
        support = tg.coords[np.abs(input.samples) > 0]
        om = np.asarray(
            square_control(tg, energy_budget, support[0] - dt / 2, support[-1] + dt / 2).samples
        )
    else:
        raise ValueError(f"unknown warm start {warm_start!r}")
    om = _project(om.copy(), energy_budget, dt)

    def evaluate(o):
        eta, obj, grad = storage_objective_and_gradient(
            params, o, input, target_spin, reg_weight
        )
        if smooth_weight:
            pen, pg = _smooth_penalty(o, dt)
            obj -= smooth_weight * pen
            grad = grad - smooth_weight * pg
        return eta, obj, grad

    eta, obj, grad = evaluate(om)
    history = [eta]
    scale = np.sqrt(energy_budget / tg.span)
    step = 0.05 * scale / max(np.max(np.abs(grad)) / dt, 1e-300)
    converged = False
    it = 0
    stall = 0
    for it in range(1, max_iter + 1):
        accepted = False
        for _ in range(30):
            trial = _project(om + step * grad / dt, energy_budget, dt)
            eta_t, obj_t, grad_t = evaluate(trial)
            if obj_t > obj:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            converged = True
            break
        gain = obj_t - obj
        om, eta, obj, grad = trial, eta_t, obj_t, grad_t
        history.append(eta)
        step *= 1.5
        if gain < tol:
            stall += 1
            if stall >= 3:
                converged = True
                break
        else:
            stall = 0
    sol = ComplexEnvelope(tg, om)
    if not converged:
        log.info("write-pulse shaping stopped after %d iterations without meeting tol", it)
    return ControlSolution(sol, float(eta), np.asarray(history), float(energy_budget), converged, it)


def delayed_control_experiment(
    params: MemoryParams, input: ComplexEnvelope, control: ComplexEnvelope, delay: float
):
    """Leak with the nominal control and with the control shifted later by ``delay``.

    Returns ``(leak_nominal, leak_delayed, delayed/nominal leaked-energy ratio)``.
    """
    nominal = propagate_storage(params, control, input)
    late = propagate_storage(params, control.shifted(delay), input)
    n0 = nominal.leak.norm2
    ratio = late.leak.norm2 / n0 if n0 > 0 else float("inf")
    if int(round(delay / control.grid.step)) == 0:
        ratio = 1.0
    return nominal.leak, late.leak, float(ratio)


def saturation_energy(params: MemoryParams, threshold: float = 0.98, lo=1e-4, hi=10.0, rtol=1e-3):
    """Smallest control energy whose optimal storage efficiency reaches ``threshold``."""

    def eff(h):
        return optimal_spin_mode(params, h, max_iter=300, tol=1e-9, gap_iters=0).max_efficiency

    if eff(hi) < threshold:
        raise ValueError(f"efficiency {threshold} not reached below energy {hi}")
    while hi / lo > 1 + rtol:
        mid = np.sqrt(lo * hi)
        if eff(mid) >= threshold:
            hi = mid
        else:
            lo = mid
    return float(hi)
