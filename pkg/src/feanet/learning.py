"""Inverse problems on (loading, response) pairs.

* :func:`fit_multiphysics_filter` regresses the homogeneous 3x3 kernel.
* :func:`estimate_phase` recovers the phase image for known materials.
* :func:`estimate_properties` recovers both materials for a known phase.
* :func:`estimate_joint` recovers materials and phase together.

Losses are evaluated on interior nodes only, where the convolution sees
all four neighbouring elements. Young's moduli are optimised in units of
1e12 Pa so one step size suits every variable.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .conv import conv_biphase_array, grad_phase_array, phase_weighted_outer
from .errors import (
    IdentifiabilityError,
    MulticollinearityError,
    StagnationError,
    ValidationError,
)
from .fields import Dataset, FieldImage, PhaseImage, PhysicsKind, Sample, interior_mask
from .kernels import MaterialParams, StencilKernel, biphase_theta, dtheta_drho

log = logging.getLogger(__name__)

E_SCALE = 1e12
DEFAULT_BOUNDS = {"E": (1e-6 * E_SCALE, 0.5 * E_SCALE), "nu": (1e-6, 0.5 - 1e-6)}
INIT_RANGE = {"E": (0.05 * E_SCALE, 0.5 * E_SCALE), "nu": (0.05, 0.45)}


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class OptimizerState:
    method: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None
    iteration: int = 0
    loss_history: list = field(default_factory=list)

    def __post_init__(self):
        if self.method not in ("adam", "gd"):
            raise ValidationError(f"unknown optimizer {self.method!r}")
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be positive")


class Adam:
    """Bias-corrected Adam on a flat parameter vector."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.state = OptimizerState("adam", lr, beta1, beta2, eps)

    def step(self, x: np.ndarray, g: np.ndarray) -> np.ndarray:
        s = self.state
        if s.m is None:
            s.m = np.zeros_like(x)
            s.v = np.zeros_like(x)
        s.iteration += 1
        s.m = s.beta1 * s.m + (1 - s.beta1) * g
        s.v = s.beta2 * s.v + (1 - s.beta2) * g * g
        mhat = s.m / (1 - s.beta1 ** s.iteration)
        vhat = s.v / (1 - s.beta2 ** s.iteration)
        return x - s.learning_rate * mhat / (np.sqrt(vhat) + s.eps)


@dataclass(frozen=True)
class EstimateOptions:
    """Settings shared by the three estimators.

    ``tol`` stops a run once the loss falls below ``tol`` times its initial
    value. ``stagnation_window`` steps without a ``stagnation_rtol``
    relative improvement of the best loss end the run with status
    ``stagnated`` (an error when ``strict``).
    """

    method: str = "adam"
    lr: float = 1e-3
    lr_phase: Optional[float] = None
    max_iter: int = 20000
    tol: float = 1e-20
    seed: int = 0
    reduction: str = "mean"
    stagnation_window: int = 100
    stagnation_rtol: float = 1e-12
    strict: bool = False
    bounds: Optional[dict] = None
    init_rho: Optional[tuple] = None
    init_phase: Optional[np.ndarray] = None
    postprocess: bool = True

    def __post_init__(self):
        if self.method not in ("adam", "gd"):
            raise ValidationError(f"unknown optimizer {self.method!r}")
        if not self.lr > 0 or (self.lr_phase is not None and not self.lr_phase > 0):
            raise ValidationError("learning rates must be positive")
        if self.max_iter < 1:
            raise ValidationError("max_iter must be >= 1")
        if self.reduction not in ("mean", "sum"):
            raise ValidationError("reduction must be 'mean' or 'sum'")

    def to_dict(self) -> dict:
        out = {}
        for k in ("method", "lr", "lr_phase", "max_iter", "tol", "seed", "reduction",
                  "stagnation_window", "stagnation_rtol", "strict", "postprocess"):
            out[k] = getattr(self, k)
        return out


@dataclass
class EstimationResult:
    rho0: Optional[MaterialParams]
    rho1: Optional[MaterialParams]
    phase: Optional[PhaseImage]
    phase_binary: Optional[PhaseImage]
    loss_history: list
    status: str
    iterations: int
    clip_fraction: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def final_loss(self) -> float:
        return self.loss_history[-1] if self.loss_history else math.nan


def _minimize(x0, loss_grad: Callable, project: Callable, opts: EstimateOptions, lr):
    """Projected first-order descent; returns ``(x, losses, status, iters, clip_frac)``.

    ``lr`` may be an array giving a per-variable Adam step size.
    """
    x = project(np.array(x0, dtype=float))
    losses = []
    adam = Adam(1.0)
    lr = np.broadcast_to(np.asarray(lr, dtype=float), x.shape)
    best = math.inf
    since_best = 0
    clipped = 0
    status = "max_iter"
    step = 1.0
    loss, g = loss_grad(x)
    loss0 = loss
    it = 0
    for it in range(1, opts.max_iter + 1):
        losses.append(loss)
        if loss <= opts.tol * loss0 or loss == 0.0:
            status = "converged"
            break
        if loss < best * (1 - opts.stagnation_rtol):
            best = loss
            since_best = 0
        else:
            since_best += 1
            if since_best >= opts.stagnation_window:
                status = "stagnated"
                break
        if opts.method == "adam":
            raw = x - lr * (x - adam.step(x, g))
            xn = project(raw)
            clipped += bool(np.any(xn != raw))
            x = xn
            loss, g = loss_grad(x)
        else:
            # projected gradient descent with Armijo backtracking
            step *= 2.0
            while True:
                raw = x - step * lr * g
                xn = project(raw)
                ln, gn = loss_grad(xn)
                if ln <= loss + 1e-4 * np.dot(g, xn - x) or step < 1e-30:
                    break
                step *= 0.5
            clipped += bool(np.any(xn != raw))
            x, loss, g = xn, ln, gn
    else:
        losses.append(loss)
        if loss <= opts.tol * loss0:
            status = "converged"
    if status == "stagnated":
        msg = f"no {opts.stagnation_rtol:g} relative improvement in {opts.stagnation_window} steps (loss {loss:.3e})"
        if opts.strict:
            raise StagnationError(msg)
        log.warning("optimisation stagnated: %s", msg)
    return x, losses, status, it, clipped / max(it, 1)


# ---------------------------------------------------------------------------
# helpers


def relative_error(pred, ref) -> float:
    """``|pred - ref|_2 / |ref|_2``."""
    p = np.asarray(getattr(pred, "data", pred), dtype=float)
    r = np.asarray(getattr(ref, "data", ref), dtype=float)
    den = np.linalg.norm(r)
    if den == 0:
        raise ValidationError("reference is zero; relative error undefined")
    return float(np.linalg.norm(p - r) / den)


def param_errors(pred: MaterialParams, ref: MaterialParams) -> dict:
    """Relative error per material constant present in both."""
    out = {}
    for k, v in ref.to_dict().items():
        pv = getattr(pred, k)
        if pv is not None:
            out[k] = relative_error(pv, v)
    return out


def clip_rho(rho: MaterialParams, bounds: Optional[dict] = None) -> MaterialParams:
    """Clamp each material constant into ``bounds[name] = (lower, upper)``."""
    bounds = DEFAULT_BOUNDS if bounds is None else bounds
    vals = rho.to_dict()
    for k, (lo, hi) in bounds.items():
        if not lo < hi:
            raise ValidationError(f"bounds for {k} must satisfy lower < upper")
        if k in vals:
            vals[k] = float(min(max(vals[k], lo), hi))
    return MaterialParams(**vals)


def window(sample: Sample, i0: int, j0: int, size: int) -> Sample:
    """Square sub-window of ``size`` nodes starting at node ``(i0, j0)``."""
    n = sample.n
    if size < 3 or i0 < 0 or j0 < 0 or i0 + size > n or j0 + size > n:
        raise ValidationError("window must fit inside the grid and span at least 3 nodes")
    sl = np.s_[i0 : i0 + size, j0 : j0 + size]
    h = None
    if sample.H is not None:
        h = PhaseImage(sample.H.data[i0 : i0 + size - 1, j0 : j0 + size - 1])
    return Sample(FieldImage(sample.V.data[sl], sample.kind), FieldImage(sample.U.data[sl], sample.kind),
                  h, sample.rho0, sample.rho1)


def _as_dataset(data) -> Dataset:
    if isinstance(data, Sample):
        return Dataset([data])
    if isinstance(data, Dataset):
        if len(data) == 0:
            raise ValidationError("dataset is empty")
        return data
    return _as_dataset(Dataset(list(data)))


# ---------------------------------------------------------------------------
# filter regression


def _patches(u: np.ndarray) -> np.ndarray:
    """Interior 3x3 neighbourhoods, ``(rows, 9 * Q)`` ordered ``(r, c, q)``."""
    n = u.shape[0]
    cols = [u[r : r + n - 2, c : c + n - 2] for r in range(3) for c in range(3)]
    return np.stack(cols, axis=2).reshape((n - 2) ** 2, -1)


def _design(ds: Dataset):
    A = np.concatenate([_patches(s.U.data) for s in ds])
    b = np.concatenate([s.V.data[1:-1, 1:-1].reshape(-1, s.V.channels) for s in ds])
    return A, b


@dataclass
class RankReport:
    ok: bool
    rank: int
    unknowns: int
    rows: int
    sigma_ratio: float
    null_vector: Optional[np.ndarray] = None
    channel_combination: Optional[np.ndarray] = None

    def to_dict(self) -> dict:
        d = {"ok": self.ok, "rank": self.rank, "unknowns": self.unknowns, "rows": self.rows,
             "sigma_ratio": self.sigma_ratio}
        if self.channel_combination is not None:
            d["channel_combination"] = self.channel_combination.tolist()
        return d


RANK_TOL = 1e-10


def _loading_combination(ds: Dataset) -> Optional[np.ndarray]:
    """Coefficients ``c`` with ``sum_p c_p V^p = 0`` on the interior, if any."""
    V = np.concatenate([s.V.data[1:-1, 1:-1].reshape(-1, s.V.channels) for s in ds])
    if V.shape[1] < 2:
        return None
    norms = np.linalg.norm(V, axis=0)
    if np.any(norms == 0):
        c = (norms == 0).astype(float)
        return c / np.linalg.norm(c)
    _, s, vt = np.linalg.svd(V / norms, full_matrices=False)
    if s[-1] / s[0] < RANK_TOL:
        c = vt[-1] / norms
        return c / np.abs(c).max()
    return None


def check_loading_rank(dataset) -> RankReport:
    """Numerical rank of the filter-regression design matrix.

    Columns are scaled to unit norm first; the design is deficient when it
    has fewer rows than unknowns or ``sigma_min / sigma_max < 1e-10``.
    """
    ds = _as_dataset(dataset)
    if ds.n < 3:
        return RankReport(False, 0, 9 * ds.kind.channels, 0, 0.0)
    A, _ = _design(ds)
    rows, unknowns = A.shape
    norms = np.linalg.norm(A, axis=0)
    combo = _loading_combination(ds)
    if rows < unknowns or np.any(norms == 0):
        return RankReport(False, int(min(rows, np.count_nonzero(norms))), unknowns, rows, 0.0, None, combo)
    _, s, vt = np.linalg.svd(A / norms, full_matrices=False)
    ratio = float(s[-1] / s[0])
    ok = ratio >= RANK_TOL
    rank = int(np.sum(s / s[0] >= RANK_TOL))
    null = None if ok else (vt[-1] / norms).reshape(3, 3, -1)
    return RankReport(ok, rank, unknowns, rows, ratio, null, combo)


def fit_multiphysics_filter(dataset, method: str = "lstsq", opts: Optional[EstimateOptions] = None) -> StencilKernel:
    """Least-squares 3x3 kernel mapping responses to loadings.

    Every output channel is an independent regression on the ``9 * Q``
    neighbourhood values of the interior nodes of all samples.
    """
    ds = _as_dataset(dataset)
    if ds.n < 6:
        raise ValidationError(f"filter regression needs at least 6 nodes per side, got {ds.n}")
    rep = check_loading_rank(ds)
    if not rep.ok:
        raise MulticollinearityError(
            f"design matrix is rank deficient (rank {rep.rank} of {rep.unknowns}, "
            f"sigma ratio {rep.sigma_ratio:.2e})",
            channel=rep.channel_combination, rank=rep.rank, unknowns=rep.unknowns,
            null_vector=rep.null_vector,
        )
    A, b = _design(ds)
    norms = np.linalg.norm(A, axis=0)
    As = A / norms
    if method == "lstsq":
        x, *_ = np.linalg.lstsq(As, b, rcond=None)
    elif method == "adam":
        opts = opts or EstimateOptions(lr=1e-2, max_iter=20000, tol=1e-24)
        bs = np.linalg.norm(b, axis=0)
        bs[bs == 0] = 1.0
        target = b / bs
        G = As.T @ As
        c = As.T @ target

        def loss_grad(flat):
            X = flat.reshape(As.shape[1], -1)
            r = As @ X - target
            return float(np.sum(r * r)), (2 * (G @ X - c)).ravel()

        x0 = np.zeros(As.shape[1] * b.shape[1])
        xs, *_ = _minimize(x0, loss_grad, lambda z: z, opts, opts.lr)
        x = xs.reshape(As.shape[1], -1) * bs
    else:
        raise ValidationError(f"unknown fitting method {method!r}")
    x = x / norms[:, None]
    Q = ds.kind.channels
    w = x.reshape(3, 3, Q, b.shape[1]).transpose(0, 1, 3, 2)
    return StencilKernel(w, ds.kind)


# ---------------------------------------------------------------------------
# bi-phase estimation


class _BiphaseProblem:
    """Interior least-squares misfit of the bi-phase convolution."""

    def __init__(self, ds: Dataset, reduction: str):
        if ds.kind is not PhysicsKind.ELASTICITY:
            raise ValidationError("bi-phase estimation is defined for elasticity data")
        self.ds = ds
        self.mask = interior_mask(ds.n)[:, :, None]
        count = len(ds) * int(self.mask.sum()) * ds.kind.channels
        self.scale = 1.0 / count if reduction == "mean" else 1.0

    def residuals(self, theta, h):
        for s in self.ds:
            r = np.where(self.mask, conv_biphase_array(theta, s.U.data, h) - s.V.data, 0.0)
            yield s, r

    def loss(self, theta, h) -> float:
        return self.scale * sum(float(np.sum(r * r)) for _, r in self.residuals(theta, h))

    def loss_grads(self, theta, h, want_h=True, want_rho=True):
        loss = 0.0
        gh = np.zeros_like(h) if want_h else None
        outer = 0.0
        for s, r in self.residuals(theta, h):
            loss += float(np.sum(r * r))
            vhat = 2.0 * self.scale * r
            if want_h:
                gh += grad_phase_array(theta, s.U.data, vhat)
            if want_rho:
                outer = outer + phase_weighted_outer(s.U.data, vhat, h)
        return self.scale * loss, gh, outer


def _theta(x):
    r0 = MaterialParams(E=x[0] * E_SCALE, nu=x[1])
    r1 = MaterialParams(E=x[2] * E_SCALE, nu=x[3])
    return r0, r1


def _rho_grad(outer, r0, r1):
    d = dtheta_drho(r0, r1)
    return np.array([np.sum(outer * d["E0"]) * E_SCALE, np.sum(outer * d["nu0"]),
                     np.sum(outer * d["E1"]) * E_SCALE, np.sum(outer * d["nu1"])])


def _rho_box(bounds):
    b = dict(DEFAULT_BOUNDS)
    b.update(bounds or {})
    lo = np.array([b["E"][0] / E_SCALE, b["nu"][0], b["E"][0] / E_SCALE, b["nu"][0]])
    hi = np.array([b["E"][1] / E_SCALE, b["nu"][1], b["E"][1] / E_SCALE, b["nu"][1]])
    if np.any(lo >= hi):
        raise ValidationError("bounds must satisfy lower < upper")
    return lo, hi


def _initial_rho(opts: EstimateOptions, rng: np.random.Generator, lo, hi):
    if opts.init_rho is not None:
        r0, r1 = opts.init_rho
        x = np.array([r0.E / E_SCALE, r0.nu, r1.E / E_SCALE, r1.nu])
    else:
        e = np.array(INIT_RANGE["E"]) / E_SCALE
        nu = INIT_RANGE["nu"]
        x = np.array([rng.uniform(*e), rng.uniform(*nu), rng.uniform(*e), rng.uniform(*nu)])
    return np.clip(x, lo, hi)


def estimate_phase(dataset, rho0: MaterialParams, rho1: MaterialParams,
                   opts: Optional[EstimateOptions] = None) -> EstimationResult:
    """Recover the phase image by projected descent on ``H`` in ``[0, 1]``."""
    opts = opts or EstimateOptions(lr=1e-2)
    ds = _as_dataset(dataset)
    prob = _BiphaseProblem(ds, opts.reduction)
    theta = np.ascontiguousarray(biphase_theta(rho0, rho1).theta)
    m = ds.n - 1
    rng = np.random.default_rng(opts.seed)
    h0 = rng.uniform(0.0, 1.0, (m, m)) if opts.init_phase is None else np.asarray(opts.init_phase, float)
    if h0.shape != (m, m):
        raise ValidationError(f"initial phase must be {(m, m)}")

    def loss_grad(x):
        loss, gh, _ = prob.loss_grads(theta, x.reshape(m, m), want_rho=False)
        return loss, gh.ravel()

    x, losses, status, it, frac = _minimize(h0.ravel(), loss_grad, lambda z: np.clip(z, 0.0, 1.0),
                                            opts, opts.lr_phase or opts.lr)
    h = PhaseImage(x.reshape(m, m))
    return EstimationResult(rho0, rho1, h, h.binarize(), losses, status, it, frac)


def _require_identifiable(ds: Dataset, h: np.ndarray):
    hb = h >= 0.5
    if hb.all() or not hb.any():
        raise IdentifiabilityError("phase image holds a single phase; the absent material is unidentifiable")
    inner = interior_mask(ds.n)
    if not any(np.any(s.V.data[inner] != 0) for s in ds):
        raise IdentifiabilityError("loading vanishes on the interior; material constants are unidentifiable")


def estimate_properties(dataset, h: Optional[PhaseImage] = None,
                        opts: Optional[EstimateOptions] = None) -> EstimationResult:
    """Recover ``(E, nu)`` of both phases for a known phase image."""
    opts = opts or EstimateOptions(lr=1e-3)
    ds = _as_dataset(dataset)
    if h is None:
        h = ds[0].H
    if h is None:
        raise ValidationError("property estimation needs a phase image")
    if not isinstance(h, PhaseImage):
        h = PhaseImage(h)
    hd = np.ascontiguousarray(h.data)
    _require_identifiable(ds, hd)
    prob = _BiphaseProblem(ds, opts.reduction)
    lo, hi = _rho_box(opts.bounds)
    x0 = _initial_rho(opts, np.random.default_rng(opts.seed), lo, hi)

    def loss_grad(x):
        r0, r1 = _theta(x)
        theta = np.ascontiguousarray(biphase_theta(r0, r1).theta)
        loss, _, outer = prob.loss_grads(theta, hd, want_h=False)
        return loss, _rho_grad(outer, r0, r1)

    x, losses, status, it, frac = _minimize(x0, loss_grad, lambda z: np.clip(z, lo, hi), opts, opts.lr)
    if frac > 0.5:
        log.warning("bounds were active in %.0f%% of steps", 100 * frac)
    r0, r1 = _theta(x)
    return EstimationResult(r0, r1, h, h.binarize(), losses, status, it, frac)


def split_threshold(values: np.ndarray, iters: int = 100) -> float:
    """Two-cluster (1-D k-means) threshold between low and high values."""
    v = np.asarray(values, dtype=float).ravel()
    lo, hi = v.min(), v.max()
    if hi - lo < 1e-12:
        return 0.5
    t = 0.5 * (lo + hi)
    for _ in range(iters):
        a, b = v[v < t], v[v >= t]
        if a.size == 0 or b.size == 0:
            break
        nt = 0.5 * (a.mean() + b.mean())
        if nt == t:
            break
        t = nt
    return float(t)


def estimate_joint(dataset, opts: Optional[EstimateOptions] = None) -> EstimationResult:
    """Recover both materials and the phase image together.

    The continuous problem is only determined up to an affine change of
    ``H`` paired with an extrapolation of the materials, so the optional
    post-processing splits ``H`` into two clusters and re-fits the
    materials on that binary image. Results are defined up to the label
    swap ``(rho0, rho1, H) -> (rho1, rho0, 1 - H)``.
    """
    opts = opts or EstimateOptions(lr=1e-2)
    ds = _as_dataset(dataset)
    prob = _BiphaseProblem(ds, opts.reduction)
    lo, hi = _rho_box(opts.bounds)
    rng = np.random.default_rng(opts.seed)
    m = ds.n - 1
    x_rho = _initial_rho(opts, rng, lo, hi)
    h0 = rng.uniform(0.0, 1.0, (m, m)) if opts.init_phase is None else np.asarray(opts.init_phase, float)
    lo_all = np.concatenate([lo, np.zeros(m * m)])
    hi_all = np.concatenate([hi, np.ones(m * m)])
    lrs = np.concatenate([np.full(4, opts.lr), np.full(m * m, opts.lr_phase or opts.lr)])

    def loss_grad(x):
        r0, r1 = _theta(x[:4])
        theta = np.ascontiguousarray(biphase_theta(r0, r1).theta)
        h = x[4:].reshape(m, m)
        loss, gh, outer = prob.loss_grads(theta, h)
        return loss, np.concatenate([_rho_grad(outer, r0, r1), gh.ravel()])

    x, losses, status, it, frac = _minimize(np.concatenate([x_rho, h0.ravel()]), loss_grad,
                                            lambda z: np.clip(z, lo_all, hi_all), opts, lrs)
    r0, r1 = _theta(x[:4])
    h = PhaseImage(x[4:].reshape(m, m))
    t = split_threshold(h.data)
    hb = PhaseImage((h.data >= t).astype(float))
    extra = {"threshold": t, "continuous_rho": (r0, r1), "joint_status": status}
    result = EstimationResult(r0, r1, h, hb, losses, status, it, frac, extra)
    if opts.postprocess:
        if hb.data.all() or not hb.data.any():
            log.warning("phase estimate collapsed to a single phase; skipping the re-fit")
            return result
        refit = estimate_properties(ds, hb, replace(opts, init_rho=(clip_rho(r0), clip_rho(r1)), lr=opts.lr))
        result = EstimationResult(refit.rho0, refit.rho1, h, hb, losses + refit.loss_history,
                                  refit.status, it + refit.iterations, frac, extra)
    return result


def align_labels(result_rho: tuple, result_h: PhaseImage, true_h: PhaseImage):
    """Undo the label swap so the phase estimate best matches ``true_h``."""
    r0, r1 = result_rho
    direct = np.abs(result_h.data - true_h.data).sum()
    swapped = np.abs((1 - result_h.data) - true_h.data).sum()
    if swapped < direct:
        return (r1, r0), PhaseImage(1 - result_h.data), True
    return (r0, r1), result_h, False
