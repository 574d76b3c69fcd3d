"""Inference network: damped Jacobi layers built from FEA convolutions.

One layer computes ``U <- B(U + omega * P * (V - W * U))`` where ``P`` is
the signed reciprocal of the operator diagonal and ``B`` resets the
Dirichlet nodes. Stacking layers is exactly the weighted Jacobi iteration
on the Dirichlet-reduced sparse system.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import _backend, _fallback
from .conv import conv_biphase_array, conv_homogeneous_array
from .errors import DimensionError, DivergenceError, ValidationError
from .fields import BoundaryCondition, FieldImage, PhaseImage, interior_mask
from .kernels import StencilKernel, ThetaKernel

log = logging.getLogger(__name__)

_CHUNK = 256


@dataclass(frozen=True)
class InferenceConfig:
    omega: float = 2.0 / 3.0
    max_depth: int = 1000
    tol: Optional[float] = None
    record_history: bool = True
    record_every: int = 1
    divergence_factor: float = 10.0

    def __post_init__(self):
        if not 0.0 < self.omega < 2.0:
            raise ValidationError(f"omega must lie in (0, 2), got {self.omega}")
        if int(self.max_depth) < 1:
            raise ValidationError("max_depth must be >= 1")
        if int(self.record_every) < 1:
            raise ValidationError("record_every must be >= 1")
        if self.tol is not None and not self.tol > 0:
            raise ValidationError("tol must be positive")
        if not self.divergence_factor > 1:
            raise ValidationError("divergence_factor must exceed 1")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("omega", "max_depth", "tol", "record_history", "record_every", "divergence_factor")}


@dataclass(frozen=True)
class Preconditioner:
    """Signed reciprocal diagonal, ``(N, N, Q)`` or ``(1, 1, Q)`` when constant."""

    p: np.ndarray

    def __post_init__(self):
        p = np.array(self.p, dtype=np.float64)
        if p.ndim == 1:
            p = p[None, None, :]
        if p.ndim != 3:
            raise DimensionError(f"preconditioner must be 3-D, got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValidationError("preconditioner has non-finite entries")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    def full(self, n: int) -> np.ndarray:
        return np.ascontiguousarray(np.broadcast_to(self.p, (n, n, self.p.shape[2])))


def preconditioner_homogeneous(w: StencilKernel) -> Preconditioner:
    """``P[q] = 1 / W[1, 1, q, q]`` (centre entry, keeping its sign)."""
    if w.in_channels != w.out_channels:
        raise DimensionError("a Jacobi preconditioner needs a square kernel")
    d = np.array([w.w[1, 1, q, q] for q in range(w.in_channels)])
    if np.any(d == 0):
        raise ValidationError("kernel has a zero diagonal centre entry")
    return Preconditioner(1.0 / d)


def biphase_diagonal(theta: ThetaKernel, h: PhaseImage) -> np.ndarray:
    """Operator diagonal per node and channel, summed over adjacent elements."""
    t = theta.theta
    Q = t.shape[2]
    if t.shape[1] != Q:
        raise DimensionError("a Jacobi preconditioner needs square element blocks")
    diag = np.stack([np.stack([t[k, q, q].diagonal() for q in range(Q)]) for k in range(2)])  # (2, Q, 4)
    hd = h.data[:, :, None, None]
    blended = diag[1] + hd * (diag[0] - diag[1])
    return _fallback.scatter_nodes(blended, h.n_nodes)


def preconditioner_biphase(theta: ThetaKernel, h: PhaseImage) -> Preconditioner:
    """Per-node reciprocal of the phase-blended diagonal.

    Entries at the outer ring use only the elements that exist there.
    """
    if not isinstance(h, PhaseImage):
        h = PhaseImage(h)
    d = biphase_diagonal(theta, h)
    inner = interior_mask(h.n_nodes)
    if np.any(d[inner] == 0):
        raise ValidationError("zero diagonal at an interior node")
    with np.errstate(divide="ignore"):
        p = np.where(d != 0, 1.0 / np.where(d != 0, d, 1.0), 0.0)
    return Preconditioner(p)


def apply_boundary(u: FieldImage, bc: BoundaryCondition) -> FieldImage:
    """Overwrite constrained nodes with their prescribed values."""
    if u.n != bc.n or u.channels != bc.channels:
        raise DimensionError("image and boundary condition disagree in shape")
    return FieldImage(np.where(bc.mask[:, :, None], bc.values, u.data), u.kind)


Operator = Union[StencilKernel, tuple]


def _unpack(kernel: Operator):
    if isinstance(kernel, StencilKernel):
        return kernel, None, None
    if isinstance(kernel, tuple) and len(kernel) == 2 and isinstance(kernel[0], ThetaKernel):
        h = kernel[1] if isinstance(kernel[1], PhaseImage) else PhaseImage(kernel[1])
        return None, kernel[0], h
    raise ValidationError("kernel must be a StencilKernel or a (ThetaKernel, PhaseImage) pair")


def _apply(w, theta, h, u):
    if w is not None:
        return conv_homogeneous_array(w.w, u)
    return conv_biphase_array(theta.theta, u, h.data)


def residual(v: FieldImage, u: FieldImage, kernel: Operator, h: Optional[PhaseImage] = None,
             bc: Optional[BoundaryCondition] = None) -> FieldImage:
    """``V - conv(U)`` with the outer ring (and any constrained node) zeroed."""
    if h is not None and isinstance(kernel, ThetaKernel):
        kernel = (kernel, h)
    w, theta, hh = _unpack(kernel)
    if v.n != u.n or v.channels != u.channels:
        raise DimensionError("loading and response images disagree in shape")
    keep = interior_mask(v.n)
    if bc is not None:
        keep &= ~bc.mask
    r = v.data - _apply(w, theta, hh, u.data)
    return FieldImage(np.where(keep[:, :, None], r, 0.0), v.kind)


@dataclass
class History:
    """Per-layer relative residual and, where recorded, error against an oracle."""

    depth: list = field(default_factory=list)
    residual: list = field(default_factory=list)
    error: list = field(default_factory=list)

    def append(self, depth, res, err=math.nan):
        self.depth.append(int(depth))
        self.residual.append(float(res))
        self.error.append(float(err))

    def __len__(self):
        return len(self.depth)

    def at(self, depth: int) -> tuple:
        k = self.depth.index(depth)
        return self.residual[k], self.error[k]

    def rows(self):
        return list(zip(self.depth, self.residual, self.error))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["depth", "residual", "error"])
            for d, r, e in self.rows():
                wr.writerow([d, repr(r), "" if math.isnan(e) else repr(e)])


def _rel(x, ref):
    den = np.linalg.norm(ref)
    return float(np.linalg.norm(x) / den) if den > 0 else float(np.linalg.norm(x))


def infer(v: FieldImage, kernel: Operator, bc: BoundaryCondition,
          cfg: Optional[InferenceConfig] = None, oracle: Optional[FieldImage] = None,
          u0: Optional[FieldImage] = None):
    """Run the Jacobi network; returns ``(u, history)``.

    ``kernel`` is a homogeneous stencil or a ``(theta, phase)`` pair. The
    initial iterate is ``B(V)`` unless ``u0`` is given. Residuals and errors
    are relative norms over the unconstrained nodes.
    """
    cfg = cfg or InferenceConfig()
    w, theta, h = _unpack(kernel)
    C = v.channels
    square = (w.in_channels, w.out_channels) if w is not None else (theta.in_channels, theta.out_channels)
    if square != (C, C):
        raise DimensionError(f"operator maps {square[0]} to {square[1]} channels, loading has {C}")
    if bc.n != v.n or bc.channels != C:
        raise DimensionError("boundary condition does not match the loading image")
    if h is not None and h.data.shape != (v.n - 1, v.n - 1):
        raise DimensionError("phase image does not match the loading image")
    if oracle is not None and oracle.data.shape != v.data.shape:
        raise DimensionError("oracle does not match the loading image")
    pre = preconditioner_homogeneous(w) if w is not None else preconditioner_biphase(theta, h)
    pinv = pre.full(v.n)
    free = np.ascontiguousarray(~bc.mask, dtype=np.uint8)
    fm = free.astype(bool)
    start = u0 if u0 is not None else v
    u = np.ascontiguousarray(np.where(bc.mask[:, :, None], bc.values, start.data))
    vd = np.ascontiguousarray(v.data)
    vnorm = np.linalg.norm(vd[fm])
    vnorm = vnorm if vnorm > 0 else 1.0
    backend = _backend.get()

    def run(steps):
        if w is not None:
            return backend.jacobi_homogeneous(u, vd, np.ascontiguousarray(w.w), pinv, free, cfg.omega, steps)
        return backend.jacobi_biphase(u, vd, np.ascontiguousarray(h.data), np.ascontiguousarray(theta.theta),
                                      pinv, free, cfg.omega, steps)

    def err_now():
        return _rel(u[fm] - oracle.data[fm], oracle.data[fm]) if oracle is not None else math.nan

    hist = History()
    # bounded chunks so a blow-up is caught before it overflows
    chunk = cfg.record_every if (oracle is not None or cfg.tol is not None) else _CHUNK
    chunk = min(chunk, cfg.max_depth)
    best = math.inf
    depth = 0
    converged = False
    first_err = err_now()
    while depth < cfg.max_depth:
        steps = min(chunk, cfg.max_depth - depth)
        with np.errstate(over="ignore", invalid="ignore"):
            res = np.sqrt(run(steps)) / vnorm
        if not np.all(np.isfinite(res)):
            raise DivergenceError(f"non-finite residual with omega={cfg.omega} before depth {depth + steps}")
        for k, r in enumerate(res):
            best = min(best, r)
            if r > cfg.divergence_factor * best and best > 0:
                raise DivergenceError(
                    f"residual grew {cfg.divergence_factor:g}x above its minimum at depth {depth + k} "
                    f"with omega={cfg.omega}"
                )
            if cfg.record_history:
                err = first_err if k == 0 and depth == 0 else math.nan
                hist.append(depth + k, r, err)
        depth += steps
        if cfg.record_history and oracle is not None and depth % cfg.record_every == 0 and depth < cfg.max_depth:
            # the next residual entry belongs to this depth; error recorded now
            hist.append(depth, math.nan, err_now())
        if cfg.tol is not None and res.min() <= cfg.tol:
            converged = True
            break
    final_res = float(np.linalg.norm((vd - _apply(w, theta, h, u))[fm]) / vnorm)
    if cfg.record_history:
        hist.append(depth, final_res, err_now())
        hist = _merge(hist)
    if cfg.tol is not None and not converged and final_res <= cfg.tol:
        converged = True
    if cfg.tol is not None and not converged:
        log.warning("tolerance %g not reached after %d layers (residual %.3e)", cfg.tol, depth, final_res)
    result = FieldImage(u, v.kind)
    return result, hist


def _merge(hist: History) -> History:
    """Combine residual-only and error-only entries recorded at the same depth."""
    out = {}
    for d, r, e in hist.rows():
        r0, e0 = out.get(d, (math.nan, math.nan))
        out[d] = (r if not math.isnan(r) else r0, e if not math.isnan(e) else e0)
    merged = History()
    for d in sorted(out):
        merged.append(d, *out[d])
    return merged


__all__ = [
    "InferenceConfig",
    "Preconditioner",
    "History",
    "preconditioner_homogeneous",
    "preconditioner_biphase",
    "apply_boundary",
    "infer",
    "residual",
]
