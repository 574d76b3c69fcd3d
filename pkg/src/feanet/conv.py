"""Forward FEA convolutions and their gradients.

The homogeneous operator applies a 3x3 stencil with zero padding. The
bi-phase operator is a sum over elements: each element contributes
``sum_h w_h(H_e) * theta[h] @ u_e`` to its four nodes, where
``w_0 = H`` and ``w_1 = 1 - H``.

Values at the outer ring of nodes are reactions that depend on missing
ghost elements; compare and fit on :func:`~feanet.fields.interior_mask`
only.

Gradients take an upstream gradient ``vhat = dL/dV`` (all ones when
omitted) and return ``dL/dU``, ``dL/dH`` and ``dL/drho``.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from . import _backend
from .errors import DimensionError, ValidationError
from .fields import FieldImage, PhaseImage, PhysicsKind
from .kernels import PARAM_NAMES, StencilKernel, ThetaKernel


def _c(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def conv_homogeneous_array(w: np.ndarray, u: np.ndarray) -> np.ndarray:
    return _backend.get().conv3x3(_c(u), _c(w))


def conv_biphase_array(theta: np.ndarray, u: np.ndarray, h: np.ndarray) -> np.ndarray:
    return _backend.get().biphase_apply(_c(u), _c(h), _c(theta))


def adjoint_biphase_array(theta: np.ndarray, vhat: np.ndarray, h: np.ndarray) -> np.ndarray:
    # swapping (p, q) and (a, b) turns the element scatter into its transpose
    return conv_biphase_array(theta.transpose(0, 2, 1, 4, 3), vhat, h)


def grad_phase_array(theta: np.ndarray, u: np.ndarray, vhat: np.ndarray) -> np.ndarray:
    return _backend.get().element_bilinear(_c(u), _c(vhat), _c(theta[0] - theta[1]))


def phase_weighted_outer(u: np.ndarray, vhat: np.ndarray, h: np.ndarray) -> np.ndarray:
    """``G[h,p,q,a,b] = sum_e w_h(H_e) vhat_e[p,a] u_e[q,b]``."""
    return _backend.get().element_outer(_c(u), _c(vhat), _c(h))


def _check_kernel_input(w: StencilKernel, u: FieldImage):
    if u.channels != w.in_channels:
        raise DimensionError(f"kernel expects {w.in_channels} input channel(s), image has {u.channels}")
    if u.n < 3:
        raise DimensionError("convolution needs at least 3 nodes per side")


def _output_kind(channels: int, fallback: PhysicsKind) -> PhysicsKind:
    if fallback.channels == channels:
        return fallback
    return {1: PhysicsKind.THERMAL, 2: PhysicsKind.ELASTICITY, 3: PhysicsKind.THERMOELASTICITY}[channels]


def conv_homogeneous(w: StencilKernel, u: FieldImage) -> FieldImage:
    """``V[i,j,p] = sum_{r,c,q} W[r,c,p,q] U[i+r-1, j+c-1, q]``, zero padded."""
    _check_kernel_input(w, u)
    out = conv_homogeneous_array(w.w, u.data)
    return FieldImage(out, w.kind or _output_kind(w.out_channels, u.kind))


def _check_biphase(theta: ThetaKernel, img: FieldImage, h: PhaseImage, channels: int):
    if not isinstance(h, PhaseImage):
        h = PhaseImage(h)
    if img.channels != channels:
        raise DimensionError(f"expected {channels} channel(s), image has {img.channels}")
    if h.data.shape != (img.n - 1, img.n - 1):
        raise DimensionError(f"phase image {h.data.shape} does not fit a {img.n}-node grid")
    return h


def conv_biphase(theta: ThetaKernel, u: FieldImage, h: PhaseImage) -> FieldImage:
    """Phase-blended element convolution of a response image."""
    h = _check_biphase(theta, u, h, theta.in_channels)
    out = conv_biphase_array(theta.theta, u.data, h.data)
    return FieldImage(out, _output_kind(theta.out_channels, u.kind))


def _ones_like(n: int, channels: int, kind: PhysicsKind) -> FieldImage:
    return FieldImage(np.ones((n, n, channels)), _output_kind(channels, kind))


def grad_wrt_response(theta: ThetaKernel, h: PhaseImage, vhat: FieldImage) -> FieldImage:
    """Adjoint of :func:`conv_biphase` applied to ``vhat``."""
    h = _check_biphase(theta, vhat, h, theta.out_channels)
    g = adjoint_biphase_array(theta.theta, vhat.data, h.data)
    return FieldImage(g, _output_kind(theta.in_channels, vhat.kind))


def grad_wrt_phase(theta: ThetaKernel, u: FieldImage, vhat: Optional[FieldImage] = None) -> np.ndarray:
    """Per-element ``<vhat_e, (theta[0] - theta[1]) u_e>``, shaped like the phase image."""
    if u.channels != theta.in_channels:
        raise DimensionError(f"expected {theta.in_channels} channel(s), image has {u.channels}")
    if vhat is None:
        vhat = _ones_like(u.n, theta.out_channels, u.kind)
    if vhat.n != u.n or vhat.channels != theta.out_channels:
        raise DimensionError("upstream gradient does not match the convolution output")
    return grad_phase_array(theta.theta, u.data, vhat.data)


def grad_wrt_rho(dtheta: dict, u: FieldImage, h: PhaseImage, vhat: Optional[FieldImage] = None) -> dict:
    """Contract ``dtheta/drho`` with the phase-weighted element products.

    ``dtheta`` maps parameter names to tensors shaped like ``theta``, as
    returned by :func:`feanet.kernels.dtheta_drho`.
    """
    if not dtheta:
        raise ValidationError("no derivative tensors given")
    shape = next(iter(dtheta.values())).shape
    if not isinstance(h, PhaseImage):
        h = PhaseImage(h)
    if u.channels != shape[2] or h.data.shape != (u.n - 1, u.n - 1):
        raise DimensionError("response or phase image does not match the derivative tensors")
    if vhat is None:
        vhat = _ones_like(u.n, shape[1], u.kind)
    g = phase_weighted_outer(u.data, vhat.data, h.data)
    return {k: float(np.sum(g * np.asarray(d))) for k, d in dtheta.items()}


__all__ = [
    "PARAM_NAMES",
    "conv_homogeneous",
    "conv_biphase",
    "grad_wrt_response",
    "grad_wrt_phase",
    "grad_wrt_rho",
]
