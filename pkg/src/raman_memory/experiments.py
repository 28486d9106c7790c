"""Parameter sweeps, calibration and the headline figures of merit."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache

import numpy as np

from .grid_pulse import ComplexEnvelope, PulseShapeSpec, bandwidth_estimate, fwhm, make_pulse
from .memory_dynamics import (
    MemoryParams,
    efficiencies,
    intensity_from_power,
    propagate_retrieval,
    propagate_storage,
)
from .optimal_control import ControlSolution, shape_write_pulse, square_control
from .quantum_states import (
    ChannelParams,
    coherent_channel_fidelity,
    coherent_state,
    ensemble_fidelity,
    fidelity_closed_form,
)
from .tomography import MLConfig, reconstruct_fidelity_pipeline

log = logging.getLogger(__name__)

__all__ = [
    "ControlSetup",
    "SweepSpec",
    "SweepResult",
    "SWEEP_KINDS",
    "reference_params",
    "reference_input",
    "gaussian_control",
    "read_pulse",
    "calibrate_write",
    "calibrate_kappa",
    "run_sweep",
    "write_sweep",
    "delay_bandwidth_product",
    "headline_report",
    "config_hash",
]

SWEEP_KINDS = ("write_energy", "read_energy", "drive_power", "fidelity_vs_nbar", "delay_scan")
CONTROL_MODES = ("optimal", "gaussian", "square")

# largest Fock cutoff used to simulate homodyne data
TOMO_NMAX_CAP = 160

QUOTED_VALUES = {
    "eta_w": 0.84,
    "eta_r": 0.985,
    "eta_t": 0.826,
    "fidelity_0.76": 0.98,
    "fidelity_4.2": 0.915,
    "delay_bandwidth_product": 52.0,
    "retrieved_fwhm_ns": 13.0,
    "retrieved_bandwidth_ghz": 0.077,
    "input_fwhm_ns": 10.0,
    "input_bandwidth_ghz": 0.100,
}


@dataclass(frozen=True)
class ControlSetup:
    """Input pulse, calibration point and read pulse of the reference run.

    The input is a near-square pulse of ``input_width`` ns starting at
    ``input_delay``.  ``kappa=None`` means calibrate it: the optimised write
    control that reaches ``calib_eta_w`` is assigned ``calib_power_mw``.
    The read pulse is a square of ``read_duration`` ns with raised-cosine
    edges of ``read_rise`` ns at ``read_power_mw``.
    """

    input_width: float = 10.0
    input_delay: float = 15.0
    input_rise: float | None = None
    energy_budget: float = 0.05
    max_iter: int = 200
    tol: float = 1e-6
    reg_weight: float = 0.0
    smooth_weight: float = 0.0
    warm_start: str = "mode_matching"
    calib_eta_w: float = 0.84
    calib_power_mw: float = 190.0
    kappa: float | None = None
    read_power_mw: float = 190.0
    read_duration: float = 1500.0
    read_rise: float = 50.0

    def __post_init__(self):
        if not self.input_width > 0:
            raise ValueError("input_width must be positive")
        if self.energy_budget < 0:
            raise ValueError("energy_budget must be >= 0")
        if not 0 < self.calib_eta_w < 1:
            raise ValueError("calib_eta_w must lie in (0, 1)")
        if self.kappa is not None and not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not self.read_duration > 0 or self.read_rise < 0:
            raise ValueError("read pulse needs positive duration and rise >= 0")
        if self.warm_start not in ("mode_matching", "square"):
            raise ValueError(f"unknown warm start {self.warm_start!r}")

    def to_dict(self) -> dict:
        return asdict(self)


def reference_params(**kw) -> MemoryParams:
    """d=1100, Delta=3 GHz, 40-ns write window, 1.5-us read window."""
    base = dict(t_read=1500.0, nt_read=15000)
    base.update(kw)
    return MemoryParams(**base)


def reference_input(params: MemoryParams, setup: ControlSetup | None = None) -> ComplexEnvelope:
    setup = setup or ControlSetup()
    spec = PulseShapeSpec(
        "square", setup.input_width, 1.0, setup.input_delay, rise_time=setup.input_rise
    )
    return make_pulse(spec, params.time_grid())


def gaussian_control(params: MemoryParams, energy: float, centre: float, width: float = 10.0):
    """Real Gaussian control of intensity FWHM ``width`` holding ``energy``."""
    g = make_pulse(PulseShapeSpec("gaussian", width, 1.0, centre), params.time_grid())
    if energy <= 0:
        return ComplexEnvelope.zeros(g.grid)
    return g.scaled(np.sqrt(energy / g.norm2))


def read_pulse(
    params: MemoryParams,
    setup: ControlSetup,
    kind: str = "square",
    energy: float | None = None,
    peak: float | None = None,
) -> ComplexEnvelope:
    """Read control on the read grid, fixed either by ``energy`` or ``peak`` |Omega|^2.

    The Gaussian alternative is centred in the window with FWHM a quarter of
    the read duration, which keeps its tails inside the window.
    """
    rg = params.read_grid()
    if kind == "square":
        shape = make_pulse(
            PulseShapeSpec("square", setup.read_duration, 1.0, rg.lo, rise_time=setup.read_rise), rg
        )
    elif kind == "gaussian":
        shape = make_pulse(
            PulseShapeSpec("gaussian", setup.read_duration / 4, 1.0, rg.lo + 0.5 * rg.span), rg
        )
    else:
        raise ValueError(f"unknown read pulse kind {kind!r}")
    if energy is not None:
        if energy <= 0:
            return ComplexEnvelope.zeros(rg)
        return shape.scaled(np.sqrt(energy / shape.norm2))
    if peak is None:
        raise ValueError("give the read pulse energy or peak intensity")
    return shape.scaled(np.sqrt(peak / np.max(np.abs(shape.samples) ** 2)))


def _shape(params, inp, setup, budget, warm_start=None):
    return shape_write_pulse(
        params,
        inp,
        energy_budget=budget,
        max_iter=setup.max_iter,
        tol=setup.tol,
        reg_weight=setup.reg_weight,
        smooth_weight=setup.smooth_weight,
        warm_start=warm_start or setup.warm_start,
    )


@lru_cache(maxsize=8)
def calibrate_write(params: MemoryParams, setup: ControlSetup, rtol: float = 1e-7) -> ControlSolution:
    """Optimised write control whose storage efficiency equals ``setup.calib_eta_w``.

    Bisection on the energy budget; achieved efficiency grows with budget.
    """
    inp = reference_input(params, setup)
    target = setup.calib_eta_w
    lo, hi = 0.0, 0.01
    sol_hi = _shape(params, inp, setup, hi)
    while sol_hi.achieved_eta_w < target:
        lo, hi = hi, 2 * hi
        if hi > 100:
            raise ValueError(f"storage efficiency {target} unreachable")
        sol_hi = _shape(params, inp, setup, hi)
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        sol = _shape(params, inp, setup, mid)
        if sol.achieved_eta_w < target:
            lo = mid
        else:
            hi, sol_hi = mid, sol
    return sol_hi


def calibrate_kappa(params: MemoryParams, setup: ControlSetup) -> float:
    """kappa in Omega^2 = kappa P from the single calibration point."""
    if setup.kappa is not None:
        return setup.kappa
    sol = calibrate_write(params, setup)
    peak = float(np.max(np.abs(sol.write_pulse.samples) ** 2))
    return peak / setup.calib_power_mw


def config_hash(doc: dict) -> str:
    text = json.dumps(doc, sort_keys=True, default=_json_default)
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialise {type(o)}")


@dataclass(frozen=True)
class SweepSpec:
    """One sweep.  ``points`` are the x values in the units of ``kind``:

    write_energy / read_energy: int |Omega|^2 dt (GHz^2 ns);
    drive_power: mW; fidelity_vs_nbar: mean photon number;
    delay_scan: storage time in ns.
    """

    kind: str
    points: tuple
    memory: MemoryParams = field(default_factory=reference_params)
    channel: ChannelParams = field(default_factory=ChannelParams)
    control_mode: str = "optimal"
    setup: ControlSetup = field(default_factory=ControlSetup)
    seed: int = 0
    tomography: bool = False
    ml: MLConfig = field(default_factory=MLConfig)
    n_samples: int = 100_000
    n_bar: float = 0.76

    def __post_init__(self):
        if self.kind not in SWEEP_KINDS:
            raise ValueError(f"unknown sweep kind {self.kind!r}")
        if self.control_mode not in CONTROL_MODES:
            raise ValueError(f"unknown control mode {self.control_mode!r}")
        pts = tuple(float(p) for p in np.atleast_1d(self.points))
        if len(pts) < 2:
            raise ValueError("a sweep needs at least 2 points")
        if np.any(np.diff(pts) <= 0):
            raise ValueError("sweep points must be strictly increasing")
        object.__setattr__(self, "points", pts)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "points": list(self.points),
            "memory": self.memory.to_dict(),
            "channel": self.channel.to_dict(),
            "control_mode": self.control_mode,
            "setup": self.setup.to_dict(),
            "seed": self.seed,
            "tomography": self.tomography,
            "ml": self.ml.to_dict(),
            "n_samples": self.n_samples,
            "n_bar": self.n_bar,
        }


COLUMNS = ("x", "eta_w", "eta_r", "eta_t", "fidelity")


@dataclass
class SweepResult:
    spec: SweepSpec
    rows: list
    config_hash: str
    seed: int

    def column(self, name: str) -> np.ndarray:
        return np.array([r.get(name, np.nan) for r in self.rows], dtype=float)

    def aux_keys(self) -> list:
        keys = []
        for r in self.rows:
            for k in r:
                if k not in COLUMNS and k != "error" and k not in keys:
                    keys.append(k)
        return keys

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        buf.write(f"# config_hash={self.config_hash} seed={self.seed} kind={self.spec.kind}\n")
        aux = self.aux_keys()
        w.writerow(list(COLUMNS) + aux + ["error"])
        for r in self.rows:
            vals = [_fmt(r.get(k)) for k in COLUMNS] + [_fmt(r.get(k)) for k in aux]
            w.writerow(vals + [r.get("error", "")])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "spec": self.spec.to_dict(),
            "rows": self.rows,
        }
        return json.dumps(doc, indent=2, sort_keys=True, default=_json_default)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _nan():
    return float("nan")


def _write_control(spec: SweepSpec, inp: ComplexEnvelope, energy: float):
    p, s = spec.memory, spec.setup
    if spec.control_mode == "optimal":
        return _shape(p, inp, s, energy).write_pulse
    if spec.control_mode == "gaussian":
        return gaussian_control(p, energy, s.input_delay + 0.5 * s.input_width, s.input_width)
    return square_control(inp.grid, energy, s.input_delay, s.input_delay + s.input_width)


def _reference_read(spec: SweepSpec, kappa: float, power: float | None = None):
    s = spec.setup
    power = s.read_power_mw if power is None else power
    return read_pulse(spec.memory, s, "square", peak=float(intensity_from_power(power, kappa)))


def _point(spec: SweepSpec, x: float, seed: int, shared: dict) -> dict:
    p, s, ch = spec.memory, spec.setup, spec.channel
    row = {"x": x}
    if spec.kind in ("write_energy", "read_energy", "drive_power"):
        inp = reference_input(p, s)
        if spec.kind == "write_energy":
            control = _write_control(spec, inp, x)
            read = shared["read"]
        elif spec.kind == "read_energy":
            control = shared["write"]
            kind = "gaussian" if spec.control_mode == "gaussian" else "square"
            read = read_pulse(p, s, kind, energy=x)
        else:
            scale = np.sqrt(x / s.calib_power_mw)
            control = shared["write"].scaled(scale)
            read = _reference_read(spec, shared["kappa"], x)
        st = propagate_storage(p, control, inp)
        rt = propagate_retrieval(p, read, st.spin_wave)
        eta_w, eta_r, eta_t = efficiencies(st, rt)
        row.update(eta_w=eta_w, eta_r=eta_r, eta_t=eta_t, fidelity=_nan())
        row["write_energy"] = control.norm2
        row["read_energy"] = read.norm2
        if spec.kind == "drive_power":
            row["peak_intensity"] = float(intensity_from_power(x, shared["kappa"]))
        return row
    if spec.kind == "fidelity_vs_nbar":
        n_bar = x
        row.update(eta_w=_nan(), eta_r=_nan(), eta_t=ch.eta_eff)
        row["closed_form"] = float(fidelity_closed_form(n_bar, ch.eta_eff))
        row["coherent"] = coherent_channel_fidelity(np.sqrt(n_bar), ch)
        row["ensemble"] = ensemble_fidelity(n_bar, ch)
        row["fidelity"] = row["ensemble"]
        if spec.tomography:
            row["tomography"] = _tomography_fidelity(spec, n_bar, ch, seed)
            row["fidelity"] = row["tomography"]
        return row
    # delay_scan
    chd = replace(ch, tau=x)
    row.update(eta_w=_nan(), eta_r=_nan(), eta_t=chd.eta_eff)
    row["closed_form"] = float(fidelity_closed_form(spec.n_bar, chd.eta_eff))
    row["fidelity"] = coherent_channel_fidelity(np.sqrt(spec.n_bar), chd)
    if spec.tomography:
        row["tomography"] = _tomography_fidelity(spec, spec.n_bar, chd, seed)
        row["fidelity"] = row["tomography"]
    return row


def _tomography_fidelity(spec: SweepSpec, n_bar: float, ch: ChannelParams, seed: int) -> float:
    """Tomographic fidelity; bright states are reconstructed in a displaced frame."""
    # photon-number tail beyond 8 standard deviations is negligible
    need = int(math.ceil(n_bar + 8 * math.sqrt(n_bar) + 8))
    recentre = need > spec.ml.n_max
    if need > TOMO_NMAX_CAP:
        raise ValueError(f"state with {n_bar} photons is too bright to simulate")
    n_sim = max(spec.ml.n_max, need)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rho = coherent_state(np.sqrt(n_bar), n_sim)
    return float(
        reconstruct_fidelity_pipeline(rho, ch, spec.n_samples, spec.ml, seed, recentre=recentre)[2]
    )


def _safe_point(args):
    spec, i, x, seed, shared = args
    try:
        return _point(spec, x, seed, shared)
    except Exception as exc:  # recorded per row; the sweep continues
        log.warning("sweep point %d (x=%g) failed: %s", i, x, exc)
        row = {k: _nan() for k in COLUMNS}
        row["x"] = x
        row["error"] = f"{type(exc).__name__}: {exc}"
        return row


def _shared_inputs(spec: SweepSpec) -> dict:
    shared = {}
    p, s = spec.memory, spec.setup
    if spec.kind == "write_energy":
        shared["read"] = _reference_read(spec, calibrate_kappa(p, s))
    elif spec.kind == "read_energy":
        shared["write"] = calibrate_write(p, s).write_pulse
    elif spec.kind == "drive_power":
        shared["write"] = calibrate_write(p, s).write_pulse
        shared["kappa"] = calibrate_kappa(p, s)
    return shared


def run_sweep(spec: SweepSpec, jobs: int = 1) -> SweepResult:
    """Run every point of ``spec``; rows come back in point order.

    Each point gets its own seed spawned from ``spec.seed`` so the result does
    not depend on ``jobs``.  A failing point yields a row with NaNs and an
    ``error`` message.
    """
    shared = {}
    try:
        shared = _shared_inputs(spec)
    except Exception as exc:
        log.warning("sweep setup failed: %s", exc)
        shared = None
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(spec.seed).spawn(len(spec.points))]
    if shared is None:
        rows = [dict({k: _nan() for k in COLUMNS}, x=x, error="setup failed") for x in spec.points]
    else:
        tasks = [(spec, i, x, seeds[i], shared) for i, x in enumerate(spec.points)]
        if jobs > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
                rows = list(pool.map(_safe_point, tasks))
        else:
            rows = [_safe_point(t) for t in tasks]
    return SweepResult(spec, rows, config_hash(spec.to_dict()), spec.seed)


def write_sweep(result: SweepResult, out_dir) -> tuple[str, str]:
    """Write ``<kind>_<hash>.csv`` and ``.json`` into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    stem = os.path.join(out_dir, f"{result.spec.kind}_{result.config_hash}")
    with open(stem + ".csv", "w") as fh:
        fh.write(result.to_csv())
    with open(stem + ".json", "w") as fh:
        fh.write(result.to_json())
    return stem + ".csv", stem + ".json"


def delay_bandwidth_product(eta_t0: float, tau_c: float, pulse_duration: float):
    """Storage time at which eta_t0 exp(-tau/tau_c) falls to 1/2, and its ratio
    to the pulse duration."""
    if not tau_c > 0 or not pulse_duration > 0:
        raise ValueError("tau_c and pulse_duration must be positive")
    if eta_t0 <= 0.5:
        raise ValueError("efficiency below 50% at zero delay")
    tau_50 = tau_c * math.log(2 * eta_t0)
    return tau_50, tau_50 / pulse_duration


def headline_report(
    params: MemoryParams | None = None,
    setup: ControlSetup | None = None,
    channel: ChannelParams | None = None,
    ml: MLConfig | None = None,
    n_samples: int = 100_000,
    seed: int = 0,
    tomography: bool = True,
) -> dict:
    """Simulated figures of merit next to the quoted experimental ones.

    The memory efficiencies come from the calibrated reference run.  The
    fidelities use ``channel`` (the reference noise channel by default) with
    its ``eta_t`` replaced by the simulated total efficiency when ``channel``
    is not given.
    """
    params = params or reference_params()
    setup = setup or ControlSetup()
    ml = ml or MLConfig()
    kappa = calibrate_kappa(params, setup)
    inp = reference_input(params, setup)
    write = calibrate_write(params, setup).write_pulse
    if setup.kappa is not None:
        peak = float(np.max(np.abs(write.samples) ** 2))
        write = write.scaled(np.sqrt(kappa * setup.calib_power_mw / peak))
    read = read_pulse(params, setup, "square", peak=float(intensity_from_power(setup.read_power_mw, kappa)))
    st = propagate_storage(params, write, inp)
    rt = propagate_retrieval(params, read, st.spin_wave)
    eta_w, eta_r, eta_t = efficiencies(st, rt)
    if channel is None:
        channel = ChannelParams.reference(eta_t=min(eta_t, 1.0))
    report = {
        "kappa_ghz2_per_mw": kappa,
        "write_energy": write.norm2,
        "read_energy": read.norm2,
        "channel": channel.to_dict(),
        "quantities": {},
    }
    q = report["quantities"]

    def put(name, value, quoted=None):
        entry = {"simulated": float(value)}
        quoted = QUOTED_VALUES.get(name) if quoted is None else quoted
        if quoted is not None:
            entry["quoted"] = quoted
            entry["ratio"] = float(value) / quoted
        q[name] = entry

    put("eta_w", eta_w)
    put("eta_r", eta_r)
    put("eta_t", eta_t)
    put("input_fwhm_ns", fwhm(inp))
    put("input_bandwidth_ghz", bandwidth_estimate(inp))
    put("retrieved_fwhm_ns", fwhm(rt.output))
    put("retrieved_bandwidth_ghz", bandwidth_estimate(rt.output))
    put("delay_bandwidth_product", delay_bandwidth_product(eta_t, channel.tau_c, setup.input_width)[1]
        if eta_t > 0.5 else float("nan"))
    seeds = np.random.SeedSequence(seed).spawn(2)
    fid = {}
    for key, n_bar, ss in (("fidelity_0.76", 0.76, seeds[0]), ("fidelity_4.2", 4.2, seeds[1])):
        entry = {
            "closed_form": fidelity_closed_form(n_bar, channel.eta_eff),
            "coherent": coherent_channel_fidelity(np.sqrt(n_bar), channel),
        }
        value = entry["coherent"]
        if tomography:
            cfg = ml
            rho = coherent_state(np.sqrt(n_bar), cfg.n_max)
            value = entry["tomography"] = float(
                reconstruct_fidelity_pipeline(rho, channel, n_samples, cfg, int(ss.generate_state(1)[0]))[2]
            )
        entry["ratio_to_closed_form"] = value / entry["closed_form"]
        put(key, value)
        fid[key] = entry
    report["fidelity_detail"] = fid
    return report
