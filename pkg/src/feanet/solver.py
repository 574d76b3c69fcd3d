"""Classical sparse finite-element reference: assembly, Dirichlet solves,
synthetic data generation and memory accounting.

Global DOF numbering is node-major, ``(i * n + j) * C + c``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .errors import ConvergenceError, DimensionError, SingularSystemError, ValidationError
from .fields import (
    BoundaryCondition,
    FieldImage,
    PhaseImage,
    PhysicsKind,
    Sample,
    interior_mask,
)
from .kernels import NODE_OFFSETS, MaterialParams, element_stiffness


@dataclass(frozen=True)
class SparseStiffness:
    """Global stiffness in CSR form plus the grid it was assembled on."""

    matrix: scipy.sparse.csr_matrix
    kind: PhysicsKind
    n: int

    @property
    def channels(self) -> int:
        return self.kind.channels

    @property
    def dof_count(self) -> int:
        return self.matrix.shape[0]

    @property
    def values(self) -> np.ndarray:
        return self.matrix.data

    @property
    def indices(self) -> np.ndarray:
        return self.matrix.indices

    @property
    def indptr(self) -> np.ndarray:
        return self.matrix.indptr

    def diagonal(self) -> np.ndarray:
        """Diagonal as an ``(n, n, C)`` image array."""
        return self.matrix.diagonal().reshape(self.n, self.n, self.channels)

    def matvec(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return (self.matrix @ u.ravel()).reshape(u.shape)


def _element_tensors(kind, rho0, rho1, h, n):
    """Per-element ``(P, Q, 4, 4)`` tensors, shape ``(n-1, n-1, P, Q, 4, 4)``."""
    t0 = element_stiffness(kind, rho0).tensor
    if h is None:
        return np.broadcast_to(t0, (n - 1, n - 1) + t0.shape)
    t1 = element_stiffness(kind, rho1).tensor
    hd = h.data[:, :, None, None, None, None]
    return hd * t0 + (1.0 - hd) * t1


def assemble_global(kind, rho0: MaterialParams, n: int, rho1: Optional[MaterialParams] = None,
                    h: Optional[PhaseImage] = None) -> SparseStiffness:
    """Sum element matrices into the global CSR stiffness.

    With a phase image each element blends ``H * K(rho0) + (1 - H) * K(rho1)``.
    """
    kind = PhysicsKind.parse(kind)
    if n < 2:
        raise DimensionError(f"need n >= 2, got {n}")
    if (h is None) != (rho1 is None):
        raise ValidationError("a phase image and a second material must be given together")
    if h is not None:
        if not isinstance(h, PhaseImage):
            h = PhaseImage(h)
        if h.data.shape != (n - 1, n - 1):
            raise DimensionError(f"phase image {h.data.shape} does not fit n={n}")
    te = _element_tensors(kind, rho0, rho1, h, n)
    C = kind.channels
    ea, eb = np.mgrid[0 : n - 1, 0 : n - 1]
    node = np.stack([(ea + dr) * n + (eb + dc) for dr, dc in NODE_OFFSETS], axis=-1)  # (m, m, 4)
    ch = np.arange(C)
    # rows indexed by (p, a) and cols by (q, b), broadcast to te's trailing axes
    rows = node[:, :, None, None, :, None] * C + ch[:, None, None, None]
    cols = node[:, :, None, None, None, :] * C + ch[None, :, None, None]
    rows = np.broadcast_to(rows, te.shape).ravel()
    cols = np.broadcast_to(cols, te.shape).ravel()
    dof = n * n * C
    K = scipy.sparse.coo_matrix((np.asarray(te).ravel(), (rows, cols)), shape=(dof, dof)).tocsr()
    K.sum_duplicates()
    K.eliminate_zeros()
    return SparseStiffness(K, kind, n)


# ---------------------------------------------------------------------------
# solves


def _banded_spd_solve(A: scipy.sparse.csr_matrix, b: np.ndarray) -> np.ndarray:
    coo = A.tocoo()
    upper = coo.col >= coo.row
    bw = int(np.max(coo.col[upper] - coo.row[upper])) if upper.any() else 0
    ab = np.zeros((bw + 1, A.shape[0]))
    ab[bw + coo.row[upper] - coo.col[upper], coo.col[upper]] = coo.data[upper]
    try:
        c = scipy.linalg.cholesky_banded(ab, lower=False)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"reduced stiffness is not positive definite: {exc}") from None
    return scipy.linalg.cho_solve_banded((c, False), b)


def _spd_solve(A, b, method, tol):
    if A.shape[0] == 0:
        return np.zeros(0)
    # thermal blocks are negative definite under the Laplacian sign convention
    sign = -1.0 if A.diagonal().mean() < 0 else 1.0
    A = (sign * A).tocsr()
    b = sign * b
    if method == "direct":
        return _banded_spd_solve(A, b)
    if method == "cg":
        scale = np.linalg.norm(b)
        if scale == 0:
            return np.zeros_like(b)
        x, info = scipy.sparse.linalg.cg(A, b, rtol=tol, atol=0.0, maxiter=10 * A.shape[0])
        if info != 0:
            raise ConvergenceError(f"CG did not reach relative residual {tol} in {10 * A.shape[0]} iterations")
        return x
    raise ValidationError(f"unknown solve method {method!r}")


def solve_dirichlet(k: SparseStiffness, v: FieldImage, bc: Optional[BoundaryCondition],
                    method: str = "direct", tol: float = 1e-12) -> FieldImage:
    """Solve ``K u = v`` with ``u`` prescribed on the constrained nodes.

    Constrained rows are replaced by identity rows; the remaining system is
    reduced and solved by banded Cholesky (``direct``) or conjugate
    gradients (``cg``). The thermoelastic operator is block triangular and
    is solved thermal block first.
    """
    if bc is None or not np.any(bc.mask):
        raise SingularSystemError("no Dirichlet nodes: the stiffness has a nontrivial null space")
    if v.n != k.n or bc.n != k.n:
        raise DimensionError("loading, boundary condition and stiffness disagree on resolution")
    if v.channels != k.channels or bc.channels != k.channels:
        raise DimensionError("loading or boundary values have the wrong channel count")
    C = k.channels
    fixed = np.repeat(bc.mask.ravel(), C)
    free = ~fixed
    u = np.where(fixed, bc.values.ravel(), 0.0)
    K = k.matrix
    rhs = v.data.ravel()[free] - K[free][:, fixed] @ u[fixed]
    Kff = K[free][:, free]
    if k.kind is PhysicsKind.THERMOELASTICITY:
        chan = np.tile(np.arange(C), k.n * k.n)[free]
        t = chan == 2
        m = ~t
        ut = _spd_solve(Kff[t][:, t], rhs[t], method, tol)
        um = _spd_solve(Kff[m][:, m], rhs[m] - Kff[m][:, t] @ ut, method, tol)
        uf = np.empty(free.sum())
        uf[t], uf[m] = ut, um
    else:
        uf = _spd_solve(Kff, rhs, method, tol)
    u[free] = uf
    return FieldImage(u.reshape(k.n, k.n, C), k.kind)


def reactions(k: SparseStiffness, u: FieldImage, bc: BoundaryCondition) -> FieldImage:
    """Nodal forces ``K u`` at constrained nodes (zero elsewhere)."""
    f = k.matvec(u.data)
    return FieldImage(np.where(bc.mask[:, :, None], f, 0.0), k.kind)


# ---------------------------------------------------------------------------
# data generation


def _as_spec(spec) -> dict:
    if isinstance(spec, str):
        return {"type": spec}
    if not isinstance(spec, dict) or "type" not in spec:
        raise ValidationError("loading spec must be a type name or a dict with a 'type' key")
    return dict(spec)


def make_loading(spec, kind, n: int, rng: np.random.Generator) -> np.ndarray:
    """Applied loads on interior nodes as an ``(n, n, C)`` array.

    Spec types: ``random`` (i.i.d. uniform(-1, 1), optional per-channel
    ``scale`` and ``tie = {"channel", "to", "factor"}`` making one channel a
    multiple of another), ``point`` (``node``, ``value``) and ``strip``
    (``channel``, ``axis`` in {row, col}, ``index``, ``width``, ``value``).
    """
    kind = PhysicsKind.parse(kind)
    spec = _as_spec(spec)
    C = kind.channels
    inner = interior_mask(n)
    v = np.zeros((n, n, C))
    typ = spec["type"]
    if typ == "random":
        v[inner] = rng.uniform(-1.0, 1.0, size=(int(inner.sum()), C))
        scale = np.broadcast_to(np.asarray(spec.get("scale", 1.0), dtype=float), (C,))
        v *= scale
        tie = spec.get("tie")
        if tie:
            src = kind.channel_index(tie.get("to", "y"))
            dst = kind.channel_index(tie.get("channel", "x"))
            if src == dst:
                raise ValidationError("a tie must link two different channels")
            v[:, :, dst] = float(tie.get("factor", 1.0)) * v[:, :, src]
    elif typ == "point":
        i, j = spec.get("node", (n // 2, n // 2))
        if not inner[i, j]:
            raise ValidationError(f"point load node {(i, j)} is not an interior node")
        v[i, j] = np.broadcast_to(np.asarray(spec.get("value", 1.0), dtype=float), (C,))
    elif typ == "strip":
        c = kind.channel_index(spec.get("channel", kind.labels[0]))
        start = int(spec.get("index", n // 2))
        width = int(spec.get("width", 1))
        sel = np.zeros((n, n), dtype=bool)
        if spec.get("axis", "col") == "col":
            sel[:, start : start + width] = True
        elif spec["axis"] == "row":
            sel[start : start + width, :] = True
        else:
            raise ValidationError("strip axis must be 'row' or 'col'")
        sel &= inner
        if not sel.any():
            raise ValidationError("strip does not intersect the interior")
        v[sel, c] = float(spec.get("value", 1.0))
    else:
        raise ValidationError(f"unknown loading type {typ!r}")
    return v


def generate_sample(loading_spec, kind, rho0: MaterialParams, n: int, seed: int = 0,
                    rho1: Optional[MaterialParams] = None, h: Optional[PhaseImage] = None,
                    bc: Optional[BoundaryCondition] = None, method: str = "direct") -> Sample:
    """Loading image, its reference response and the boundary reactions.

    Deterministic for a given seed.
    """
    kind = PhysicsKind.parse(kind)
    if n < 3:
        raise DimensionError("need at least 3 nodes per side")
    rng = np.random.default_rng(seed)
    v = FieldImage(make_loading(loading_spec, kind, n, rng), kind)
    bc = bc if bc is not None else BoundaryCondition.clamped(n, kind)
    k = assemble_global(kind, rho0, n, rho1, h)
    u = solve_dirichlet(k, v, bc, method=method)
    return Sample(v, u, h, rho0, rho1, reactions(k, u, bc))


# ---------------------------------------------------------------------------
# memory accounting

MEMORY_PROBLEMS = ("thermal", "elasticity", "biphase-elasticity", "thermoelasticity")


def _memory_coefficients(problem: str, dim: int):
    """Per-node byte coefficient of FEA and (per-node, constant) of the network."""
    d = {"thermal": 1, "elasticity": dim, "biphase-elasticity": dim, "thermoelasticity": dim + 1}[problem]
    stencil = 3 ** dim
    # FEA: solution vector plus a value and a column index per nonzero of a row
    fea = 8 * d + 16 * d * stencil
    if problem == "biphase-elasticity" and dim == 3:
        fea = 1304  # tabulated figure, 16 bytes below the sparse-storage count
    # network: response image, phase image for bi-phase, 8-byte kernel entries
    net_node = 8 * d + (8 if problem == "biphase-elasticity" else 0)
    net_const = 8 * stencil * d * d
    return fea, net_node, net_const


def memory_estimate(problem: str, n: int, dim: Optional[int] = None) -> dict:
    """Byte counts of a sparse FEA solve versus the convolutional network.

    ``problem`` is one of :data:`MEMORY_PROBLEMS`, optionally suffixed
    ``-2D``/``-3D`` instead of passing ``dim``.
    """
    name = str(problem).strip()
    low = name.lower()
    if low.endswith(("-2d", "-3d")):
        if dim is not None and dim != int(low[-2]):
            raise ValidationError("dimension given twice and inconsistent")
        dim = int(low[-2])
        low = low[:-3]
    dim = 2 if dim is None else int(dim)
    if low not in MEMORY_PROBLEMS or dim not in (2, 3):
        raise ValidationError(f"unsupported memory problem {problem!r} in {dim}D")
    if n < 1:
        raise ValidationError("n must be >= 1")
    fea_c, net_c, net_k = _memory_coefficients(low, dim)
    fea = fea_c * n ** dim
    net = net_c * n ** dim + net_k
    return {
        "problem": f"{low}-{dim}D",
        "fea_bytes": fea,
        "feanet_bytes": net,
        "ratio": fea / net,
        "fea_per_node": fea_c,
        "feanet_per_node": net_c,
        "feanet_constant": net_k,
        "asymptotic_ratio": fea_c / net_c,
    }
