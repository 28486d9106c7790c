"""Homodyne records and maximum-likelihood state reconstruction.

Quadrature convention: X_theta = (a exp(-i theta) + a^+ exp(i theta)) / sqrt(2),
so the vacuum variance is 1/2 and a coherent state |alpha> has
<X_theta> = sqrt(2) |alpha| cos(theta - arg alpha).
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

from .grid_pulse import ComplexEnvelope
from .quantum_states import ChannelParams, DensityMatrix, apply_memory_channel, uhlmann_fidelity

log = logging.getLogger(__name__)

__all__ = [
    "QuadratureRecord",
    "MLConfig",
    "Reconstruction",
    "fock_wavefunctions",
    "quadrature_distribution",
    "simulate_homodyne",
    "matched_filter_quadrature",
    "ml_reconstruct",
    "estimate_displacement",
    "shared_x_range",
    "reconstruct_fidelity_pipeline",
]

MAX_PHASE_GAP = np.pi / 8


@dataclass(frozen=True)
class QuadratureRecord:
    phases: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        th = np.mod(np.asarray(self.phases, dtype=float), 2 * np.pi)
        x = np.asarray(self.values, dtype=float)
        if th.shape != x.shape or th.ndim != 1:
            raise ValueError("phases and values must be 1-D arrays of equal length")
        object.__setattr__(self, "phases", th)
        object.__setattr__(self, "values", x)

    @property
    def n_samples(self) -> int:
        return len(self.values)

    def max_phase_gap(self) -> float:
        if self.n_samples == 0:
            return 2 * np.pi
        th = np.sort(self.phases)
        gaps = np.diff(np.concatenate([th, [th[0] + 2 * np.pi]]))
        return float(gaps.max())

    def rotated(self, phi: float) -> "QuadratureRecord":
        return QuadratureRecord(self.phases + phi, self.values)

    def displaced(self, beta: complex) -> "QuadratureRecord":
        """Record of D(-beta) rho D(-beta)^+, i.e. every X_theta shifted by its mean offset."""
        shift = np.sqrt(2.0) * np.real(beta * np.exp(-1j * self.phases))
        return QuadratureRecord(self.phases, self.values - shift)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["phase", "value"])
        for t, x in zip(self.phases, self.values):
            w.writerow([repr(float(t)), repr(float(x))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "QuadratureRecord":
        lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
        rows = list(csv.reader(lines))
        if not rows or [c.strip() for c in rows[0]] != ["phase", "value"]:
            raise ValueError("record CSV must start with header phase,value")
        data = np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=float)
        data = data.reshape(-1, 2)
        return cls(data[:, 0], data[:, 1])


@dataclass(frozen=True)
class MLConfig:
    n_max: int = 20
    n_phase_bins: int = 30
    n_x_bins: int = 120
    x_range: float | None = None
    max_iter: int = 3000
    loglik_tol: float = 1e-10

    def __post_init__(self):
        if self.n_phase_bins < 8 or self.n_x_bins < 8:
            raise ValueError("need at least 8 phase bins and 8 quadrature bins")
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")
        if self.x_range is not None and not self.x_range > 0:
            raise ValueError("x_range must be positive")

    def to_dict(self) -> dict:
        return {
            "n_max": self.n_max,
            "n_phase_bins": self.n_phase_bins,
            "n_x_bins": self.n_x_bins,
            "x_range": self.x_range,
            "max_iter": self.max_iter,
            "loglik_tol": self.loglik_tol,
        }


@dataclass
class Reconstruction:
    rho: DensityMatrix
    converged: bool
    iterations: int
    loglik_history: list = field(default_factory=list)
    x_range: float = 0.0


def fock_wavefunctions(x: np.ndarray, dim: int) -> np.ndarray:
    """psi_n(x) for n < dim, shape (dim, len(x)), by the stable three-term recurrence."""
    x = np.asarray(x, dtype=float)
    psi = np.zeros((dim, x.size))
    psi[0] = np.pi**-0.25 * np.exp(-0.5 * x**2)
    if dim > 1:
        psi[1] = np.sqrt(2.0) * x * psi[0]
    for n in range(1, dim - 1):
        psi[n + 1] = np.sqrt(2.0 / (n + 1)) * x * psi[n] - np.sqrt(n / (n + 1)) * psi[n - 1]
    return psi


def _harmonics(rho: np.ndarray, psi: np.ndarray):
    """c_k(x) with p(x|theta) = Re sum_k w_k c_k(x) exp(i k theta), k = 0..dim-1."""
    dim = rho.shape[0]
    c = np.zeros((dim, psi.shape[1]), dtype=complex)
    for k in range(dim):
        # terms with n - m = k: rho[m, n] psi_m psi_n exp(i k theta)
        m = np.arange(dim - k)
        c[k] = np.sum(rho[m, m + k][:, None] * psi[m] * psi[m + k], axis=0)
    w = np.full(dim, 2.0)
    w[0] = 1.0
    return c * w[:, None]


def quadrature_distribution(rho: DensityMatrix, theta, x) -> np.ndarray:
    """p(x | theta) = <x_theta| rho |x_theta>, shape (len(theta), len(x))."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    psi = fock_wavefunctions(x, rho.dim)
    c = _harmonics(rho.elements, psi)
    e = np.exp(1j * np.outer(theta, np.arange(rho.dim)))
    return np.real(e @ c)


def _effective_dim(rho: np.ndarray, tol: float = 1e-13) -> int:
    diag = np.real(np.diag(rho))
    tail = np.cumsum(diag[::-1])[::-1]
    keep = np.nonzero(tail > tol)[0]
    return int(keep[-1] + 1) if keep.size else 1


def simulate_homodyne(
    rho: DensityMatrix,
    n_samples: int,
    seed: int,
    phase_lattice: int = 2048,
    x_points: int = 2001,
) -> QuadratureRecord:
    """Draw phase-randomised homodyne samples from ``rho``.

    Phases are uniform on [0, 2 pi).  Each quadrature value is drawn by
    inverse transform from p(x | theta) built from Hermite functions, with
    theta rounded to a lattice of ``phase_lattice`` points for the
    distribution (the recorded phase is the unrounded one).
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    m = rho.elements
    dim = _effective_dim(m)
    m = m[:dim, :dim]
    theta = rng.uniform(0.0, 2 * np.pi, n_samples)
    u = rng.uniform(0.0, 1.0, n_samples)
    n_bar = float(np.real(np.sum(np.arange(dim) * np.diag(m))))
    half = np.sqrt(2 * dim + 1) + 6.0 + np.sqrt(2 * max(n_bar, 0.0))
    x = np.linspace(-half, half, x_points)
    psi = fock_wavefunctions(x, dim)
    c = _harmonics(m, psi)
    lattice = np.arange(phase_lattice) * (2 * np.pi / phase_lattice)
    idx = np.rint(theta / (2 * np.pi) * phase_lattice).astype(int) % phase_lattice
    values = np.empty(n_samples)
    order = np.argsort(idx, kind="stable")
    bounds = np.searchsorted(idx[order], np.arange(phase_lattice + 1))
    used = np.nonzero(np.diff(bounds))[0]
    k = np.arange(dim)
    dx = x[1] - x[0]
    for chunk in np.array_split(used, max(1, len(used) // 256)):
        if chunk.size == 0:
            continue
        e = np.exp(1j * np.outer(lattice[chunk], k))
        p = np.clip(np.real(e @ c), 0.0, None)
        cdf = np.concatenate(
            [np.zeros((len(chunk), 1)), np.cumsum(0.5 * (p[:, 1:] + p[:, :-1]) * dx, axis=1)],
            axis=1,
        )
        cdf /= cdf[:, -1:]
        for row, li in enumerate(chunk):
            sel = order[bounds[li] : bounds[li + 1]]
            values[sel] = np.interp(u[sel], cdf[row], x)
    return QuadratureRecord(theta, values)


def matched_filter_quadrature(raw, mode: ComplexEnvelope, norm_tol: float = 1e-6) -> float:
    """Temporal-mode projection Re sum raw(t) conj(mode(t)) dt of one pulse trace."""
    if abs(mode.norm2 - 1.0) > norm_tol:
        raise ValueError(f"mode must have unit norm, got {mode.norm2}")
    if isinstance(raw, ComplexEnvelope):
        if not raw.grid.matches(mode.grid):
            raise ValueError("trace and mode grids differ")
        raw = raw.samples
    raw = np.asarray(raw)
    if raw.shape[-1] != mode.grid.n_points:
        raise ValueError("trace length does not match mode grid")
    return np.real(raw @ np.conj(mode.samples)) * mode.grid.step


def estimate_displacement(record: QuadratureRecord) -> complex:
    """Least-squares amplitude beta from <X_theta> = sqrt(2) Re(beta exp(-i theta))."""
    th = record.phases
    a = np.sqrt(2.0) * np.column_stack([np.cos(th), np.sin(th)])
    (br, bi), *_ = np.linalg.lstsq(a, record.values, rcond=None)
    return complex(br, bi)


def _auto_x_range(record: QuadratureRecord, n_phase_bins: int) -> float:
    ib = np.minimum((record.phases / (2 * np.pi) * n_phase_bins).astype(int), n_phase_bins - 1)
    sums = np.bincount(ib, weights=record.values, minlength=n_phase_bins)
    counts = np.bincount(ib, minlength=n_phase_bins)
    means = np.divide(sums, counts, out=np.zeros(n_phase_bins), where=counts > 0)
    # |mean| <= sqrt(2) |alpha|
    return 5.0 / np.sqrt(2.0) + float(np.max(np.abs(means)))


def shared_x_range(records, n_phase_bins: int) -> float:
    """One quadrature window covering all ``records`` so their POVMs agree."""
    return max(_auto_x_range(r, n_phase_bins) for r in records)


def _povm(cfg: MLConfig, x_range: float, nodes: int = 8):
    """Binned POVM elements, shape (n_phase_bins, n_x_bins, dim, dim).

    The outer quadrature bins are open to +-infinity, so each phase bin's set
    sums to the identity on the truncated space.  Phase bins average the
    rotated projectors over their width exactly.
    """
    dim = cfg.n_max + 1
    edges = np.linspace(-x_range, x_range, cfg.n_x_bins + 1)
    far = x_range + np.sqrt(2 * dim + 1) + 8.0
    lo = edges[:-1].copy()
    hi = edges[1:].copy()
    lo[0] = -far
    hi[-1] = far
    gx, gw = leggauss(nodes)
    # sub-divide the open outer bins more finely
    bx = []
    bw = []
    for a, b in zip(lo, hi):
        nsub = max(1, int(np.ceil((b - a) / (edges[1] - edges[0]))))
        sub = np.linspace(a, b, nsub + 1)
        xs = (0.5 * (sub[1:, None] + sub[:-1, None]) + 0.5 * (sub[1:, None] - sub[:-1, None]) * gx).ravel()
        ws = (0.5 * (sub[1:, None] - sub[:-1, None]) * gw).ravel()
        bx.append(xs)
        bw.append(ws)
    blocks = np.empty((cfg.n_x_bins, dim, dim))
    for j, (xs, ws) in enumerate(zip(bx, bw)):
        psi = fock_wavefunctions(xs, dim)
        blocks[j] = (psi * ws) @ psi.T
    width = 2 * np.pi / cfg.n_phase_bins
    centers = (np.arange(cfg.n_phase_bins) + 0.5) * width
    n = np.arange(dim)
    diff = n[:, None] - n[None, :]
    damp = np.sinc(diff * width / (2 * np.pi))
    rot = np.exp(1j * centers[:, None, None] * diff[None]) * damp[None]
    povm = rot[:, None] * blocks[None]
    return povm, edges


def _bin_counts(record: QuadratureRecord, cfg: MLConfig, edges: np.ndarray) -> np.ndarray:
    ib = np.minimum((record.phases / (2 * np.pi) * cfg.n_phase_bins).astype(int), cfg.n_phase_bins - 1)
    jb = np.clip(np.searchsorted(edges, record.values, side="right") - 1, 0, cfg.n_x_bins - 1)
    counts = np.zeros((cfg.n_phase_bins, cfg.n_x_bins))
    np.add.at(counts, (ib, jb), 1.0)
    return counts


def _loglik(freq, probs):
    mask = freq > 0
    return float(np.sum(freq[mask] * np.log(np.clip(probs[mask], 1e-300, None))))


def ml_reconstruct(record: QuadratureRecord, cfg: MLConfig | None = None) -> Reconstruction:
    """Iterative maximum-likelihood (R rho R) reconstruction from binned data.

    A full R rho R step is tried first; if it lowers the log-likelihood the
    diluted update (1 + eps R) rho (1 + eps R) is used with eps halved until
    the likelihood increases, so the log-likelihood never decreases.
    """
    cfg = cfg or MLConfig()
    if record.n_samples == 0:
        raise ValueError("empty quadrature record")
    if record.max_phase_gap() >= MAX_PHASE_GAP:
        raise ValueError(
            f"insufficient phase coverage: largest gap {record.max_phase_gap():.3f} rad"
        )
    x_range = cfg.x_range or _auto_x_range(record, cfg.n_phase_bins)
    povm, edges = _povm(cfg, x_range)
    counts = _bin_counts(record, cfg, edges)
    dim = cfg.n_max + 1
    k = cfg.n_phase_bins * cfg.n_x_bins
    pv = povm.reshape(k, dim, dim)
    # conditional likelihood given the phase bin of each sample
    freq = counts.reshape(k) / record.n_samples
    pv_t = np.ascontiguousarray(pv.transpose(0, 2, 1)).reshape(k, dim * dim)
    pv_flat = pv.reshape(k, dim * dim)

    def probs(rho):
        return np.real(pv_t @ rho.reshape(-1))

    rho = np.eye(dim, dtype=complex) / dim
    p = probs(rho)
    ll = _loglik(freq, p)
    history = [ll]
    converged = False
    it = 0
    ident = np.eye(dim)
    for it in range(1, cfg.max_iter + 1):
        wts = np.divide(freq, p, out=np.zeros_like(freq), where=p > 0)
        r = (wts @ pv_flat).reshape(dim, dim)
        r = 0.5 * (r + r.conj().T)
        eps = None
        while True:
            op = r if eps is None else ident + eps * r
            new = op @ rho @ op
            new = 0.5 * (new + new.conj().T)
            new /= np.trace(new).real
            p_new = probs(new)
            ll_new = _loglik(freq, p_new)
            if ll_new >= ll or (eps is not None and eps < 1e-12):
                break
            eps = 1.0 if eps is None else 0.5 * eps
        if ll_new < ll:
            converged = True
            break
        change = (ll_new - ll) / max(abs(ll), 1e-300)
        rho, p, ll = new, p_new, ll_new
        history.append(ll)
        if change < cfg.loglik_tol:
            converged = True
            break
    if record.n_samples < 10 * dim:
        # too few samples for the truncation; the estimate is not meaningful
        converged = False
    return Reconstruction(DensityMatrix(rho), converged, it, history, float(x_range))


def reconstruct_fidelity_pipeline(
    rho_true_in: DensityMatrix,
    ch: ChannelParams,
    n_samples: int,
    cfg: MLConfig | None = None,
    seed: int = 0,
    recentre: bool = False,
):
    """Simulate, reconstruct and compare input and memory output.

    Returns ``(rho_in_hat, rho_out_hat, fidelity)`` where the fidelity is the
    Uhlmann fidelity of the two reconstructions.  With ``recentre`` both
    records are shifted by the displacement fitted to the output record
    before reconstruction.  The fidelity is unchanged by a common
    displacement, and bright states then fit a small Fock cutoff; the
    returned matrices are in the displaced frame.
    """
    cfg = cfg or MLConfig()
    rho_out = apply_memory_channel(rho_true_in, ch)
    seeds = np.random.SeedSequence(seed).generate_state(2)
    rec_in = simulate_homodyne(rho_true_in, n_samples, int(seeds[0]))
    rec_out = simulate_homodyne(rho_out, n_samples, int(seeds[1]))
    if recentre:
        beta = estimate_displacement(rec_out)
        rec_in, rec_out = rec_in.displaced(beta), rec_out.displaced(beta)
    # one quadrature range for both so the POVMs agree
    xr = cfg.x_range or shared_x_range((rec_in, rec_out), cfg.n_phase_bins)
    cfg = MLConfig(**{**cfg.to_dict(), "x_range": xr})
    r_in = ml_reconstruct(rec_in, cfg)
    r_out = ml_reconstruct(rec_out, cfg)
    f = uhlmann_fidelity(r_in.rho, r_out.rho)
    return r_in.rho, r_out.rho, f
