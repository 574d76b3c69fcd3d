"""Element stiffness matrices and the stencils assembled from them.

Every element lives on the parent square ``[-1, 1]^2`` with local nodes
numbered counter-clockwise from the bottom-left corner::

    4 --- 3        local node : image offset from element (a, b)
    |     |          1 (BL)   : (a+1, b)
    1 --- 2          2 (BR)   : (a+1, b+1)
                     3 (TR)   : (a,   b+1)
                     4 (TL)   : (a,   b)

Rows of every element matrix index loading DOFs and columns index response
DOFs. Multi-channel element matrices are stored channel-blocked,
``[x1..x4, y1..y4, T1..T4]``.

Sign conventions: the mechanical blocks are the usual positive
semi-definite stiffness; the thermal block is the discrete Laplacian
``v = kappa * lap(u)`` and is therefore negative semi-definite; the
thermoelastic coupling moves the thermal-strain load to the left-hand
side.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionError, ValidationError
from .fields import PhysicsKind

# image offsets (row, col) of local nodes 1..4 relative to the element's top-left node
NODE_OFFSETS = ((1, 0), (1, 1), (0, 1), (0, 0))
_XI = np.array([-1.0, 1.0, 1.0, -1.0])
_ETA = np.array([-1.0, -1.0, 1.0, 1.0])


@dataclass(frozen=True)
class MaterialParams:
    """Material constants; which ones are required depends on the physics."""

    E: Optional[float] = None
    nu: Optional[float] = None
    kappa: Optional[float] = None
    alpha: Optional[float] = None

    _REQUIRED = {
        PhysicsKind.THERMAL: ("kappa",),
        PhysicsKind.ELASTICITY: ("E", "nu"),
        PhysicsKind.THERMOELASTICITY: ("E", "nu", "kappa", "alpha"),
    }

    def validate(self, kind) -> "MaterialParams":
        kind = PhysicsKind.parse(kind)
        for name in self._REQUIRED[kind]:
            val = getattr(self, name)
            if val is None:
                raise ValidationError(f"{kind.name.lower()} needs parameter {name}")
            if not np.isfinite(val):
                raise ValidationError(f"parameter {name} must be finite")
        if self.E is not None and self.E <= 0:
            raise ValidationError(f"E must be positive, got {self.E}")
        if self.nu is not None and not 0.0 < self.nu < 0.5:
            raise ValidationError(f"nu must lie in (0, 0.5), got {self.nu}")
        if self.kappa is not None and self.kappa <= 0:
            raise ValidationError(f"kappa must be positive, got {self.kappa}")
        if self.alpha is not None and self.alpha < 0:
            raise ValidationError(f"alpha must be non-negative, got {self.alpha}")
        return self

    def replace(self, **kw) -> "MaterialParams":
        d = self.to_dict()
        d.update(kw)
        return MaterialParams(**d)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("E", "nu", "kappa", "alpha") if getattr(self, k) is not None}

    @classmethod
    def from_dict(cls, d: dict) -> "MaterialParams":
        unknown = set(d) - {"E", "nu", "kappa", "alpha"}
        if unknown:
            raise ValidationError(f"unknown material parameter(s): {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})


@dataclass(frozen=True)
class ElementStiffness:
    """A ``(4P, 4Q)`` element matrix, channel-blocked."""

    matrix: np.ndarray
    element_kind: str

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] % 4 or m.shape[1] % 4:
            raise DimensionError(f"element matrix must be (4P, 4Q), got {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def out_channels(self) -> int:
        return self.matrix.shape[0] // 4

    @property
    def in_channels(self) -> int:
        return self.matrix.shape[1] // 4

    @property
    def tensor(self) -> np.ndarray:
        """The same entries as ``(P, Q, 4, 4)``: ``[p, q, v_node, u_node]``."""
        P, Q = self.out_channels, self.in_channels
        return self.matrix.reshape(P, 4, Q, 4).transpose(0, 2, 1, 3)


@dataclass(frozen=True)
class StencilKernel:
    """Homogeneous 3x3 FEA convolution filter ``w[r, c, p, q]``.

    Output channel ``p`` at node ``(i, j)`` receives
    ``w[r, c, p, q] * u[i + r - 1, j + c - 1, q]``.
    """

    w: np.ndarray
    kind: Optional[PhysicsKind] = None

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64)
        if w.ndim != 4 or w.shape[:2] != (3, 3):
            raise DimensionError(f"stencil must be (3, 3, P, Q), got {w.shape}")
        if self.kind is not None:
            kind = PhysicsKind.parse(self.kind)
            if w.shape[2:] != (kind.channels,) * 2:
                raise DimensionError(f"{kind.name.lower()} stencil must have {kind.channels} channels")
            object.__setattr__(self, "kind", kind)
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @property
    def out_channels(self) -> int:
        return self.w.shape[2]

    @property
    def in_channels(self) -> int:
        return self.w.shape[3]

    def block(self, out_label: str, in_label: str) -> np.ndarray:
        """3x3 block coupling response channel ``in_label`` to loading ``out_label``."""
        if self.kind is None:
            raise ValidationError("labelled access needs a kernel with a physics kind")
        return self.w[:, :, self.kind.channel_index(out_label), self.kind.channel_index(in_label)]

    def scaled(self, factor: float) -> "StencilKernel":
        return StencilKernel(self.w * factor, self.kind)


@dataclass(frozen=True)
class ThetaKernel:
    """Bi-phase element tensor ``theta[h, p, q, v_node, u_node]``."""

    theta: np.ndarray
    rho0: Optional[MaterialParams] = None
    rho1: Optional[MaterialParams] = None

    def __post_init__(self):
        t = np.array(self.theta, dtype=np.float64)
        if t.ndim != 5 or t.shape[0] != 2 or t.shape[3:] != (4, 4):
            raise DimensionError(f"theta must be (2, P, Q, 4, 4), got {t.shape}")
        t.setflags(write=False)
        object.__setattr__(self, "theta", t)

    @property
    def out_channels(self) -> int:
        return self.theta.shape[1]

    @property
    def in_channels(self) -> int:
        return self.theta.shape[2]


# ---------------------------------------------------------------------------
# quadrature oracle


def shape_functions(xi, eta):
    """Bilinear shape functions and their parent-coordinate derivatives."""
    n = 0.25 * (1 + _XI * xi) * (1 + _ETA * eta)
    dxi = 0.25 * _XI * (1 + _ETA * eta)
    deta = 0.25 * _ETA * (1 + _XI * xi)
    return n, dxi, deta


def _plane_stress(E, nu):
    return E / (1 - nu ** 2) * np.array([[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]])


def _strain_matrix(dxi, deta):
    B = np.zeros((3, 8))
    B[0, :4] = dxi
    B[1, 4:] = deta
    B[2, :4] = deta
    B[2, 4:] = dxi
    return B


def _integrate(integrand, order):
    pts, wts = np.polynomial.legendre.leggauss(order)
    total = 0.0
    for a, wa in zip(pts, wts):
        for b, wb in zip(pts, wts):
            total = total + wa * wb * integrand(*shape_functions(a, b))
    return total


def element_stiffness_quadrature(kind: str, rho: MaterialParams, gauss_order: int = 2) -> ElementStiffness:
    """Element matrix by Gauss-Legendre quadrature over the parent square.

    ``kind`` is one of ``thermal``, ``elasticity``, ``coupling`` (the 8x4
    mechanical-by-temperature block) or ``thermoelasticity`` (the full
    12x12 one-way coupled matrix).
    """
    if gauss_order < 2:
        raise ValidationError("gauss_order must be >= 2 to integrate bilinear elements exactly")
    kind = str(kind).lower()
    if kind == "thermal":
        rho.validate(PhysicsKind.THERMAL)
        k = _integrate(lambda n, dx, dy: np.outer(dx, dx) + np.outer(dy, dy), gauss_order)
        return ElementStiffness(-rho.kappa * k, "thermal")
    if kind == "elasticity":
        rho.validate(PhysicsKind.ELASTICITY)
        C = _plane_stress(rho.E, rho.nu)

        def f(n, dx, dy):
            B = _strain_matrix(dx, dy)
            return B.T @ C @ B

        return ElementStiffness(_integrate(f, gauss_order), "elasticity")
    if kind == "coupling":
        if rho.alpha is None:
            raise ValidationError("coupling needs alpha")
        MaterialParams(E=rho.E, nu=rho.nu, alpha=rho.alpha).validate(PhysicsKind.ELASTICITY)
        thermal_strain = np.array([rho.alpha, rho.alpha, 0.0])
        stress = _plane_stress(rho.E, rho.nu) @ thermal_strain

        def f(n, dx, dy):
            return -np.outer(_strain_matrix(dx, dy).T @ stress, n)

        return ElementStiffness(_integrate(f, gauss_order), "coupling")
    if kind == "thermoelasticity":
        rho.validate(PhysicsKind.THERMOELASTICITY)
        ke = element_stiffness_quadrature("elasticity", rho, gauss_order).matrix
        kc = element_stiffness_quadrature("coupling", rho, gauss_order).matrix
        kt = element_stiffness_quadrature("thermal", rho, gauss_order).matrix
        return ElementStiffness(np.block([[ke, kc], [np.zeros((4, 8)), kt]]), "thermoelasticity")
    raise ValidationError(f"unsupported element kind {kind!r}")


# ---------------------------------------------------------------------------
# closed forms

_THERMAL_PATTERN = np.array([[4, -1, -2, -1], [-1, 4, -1, -2], [-2, -1, 4, -1], [-1, -2, -1, 4]], float)

# entries of the elasticity element are E/(16(1-nu^2)) * (a + b*nu); the
# tokens below index (a, b) pairs, rows and columns are [x1..x4, y1..y4]
_EL_TOKENS = {
    1: (8.0, -8 / 3), 2: (2.0, 2.0), 3: (-4.0, -4 / 3), 4: (-2.0, 6.0),
    5: (-4.0, 4 / 3), 6: (-2.0, -2.0), 7: (0.0, 8 / 3), 8: (2.0, -6.0),
}
_EL_LAYOUT = np.array([
    [1, 3, 5, 7, 2, 4, 6, 8],
    [3, 1, 7, 5, 8, 6, 4, 2],
    [5, 7, 1, 3, 6, 8, 2, 4],
    [7, 5, 3, 1, 4, 2, 8, 6],
    [2, 8, 6, 4, 1, 7, 5, 3],
    [4, 6, 8, 2, 7, 1, 3, 5],
    [6, 4, 2, 8, 5, 3, 1, 7],
    [8, 2, 4, 6, 3, 5, 7, 1],
])
_EL_CONST = np.vectorize(lambda t: _EL_TOKENS[t][0])(_EL_LAYOUT)
_EL_NU = np.vectorize(lambda t: _EL_TOKENS[t][1])(_EL_LAYOUT)

# coupling block in units of alpha*E/(6(1-nu)); rows [x1..x4, y1..y4], cols T1..T4
_COUPLING_PATTERN = np.array([
    [2, 2, 1, 1], [-2, -2, -1, -1], [-1, -1, -2, -2], [1, 1, 2, 2],
    [2, 1, 1, 2], [1, 2, 2, 1], [-1, -2, -2, -1], [-2, -1, -1, -2],
], float)


def thermal_element(kappa: float) -> ElementStiffness:
    MaterialParams(kappa=kappa).validate(PhysicsKind.THERMAL)
    return ElementStiffness(-kappa / 6.0 * _THERMAL_PATTERN, "thermal")


def elasticity_element(E: float, nu: float) -> ElementStiffness:
    MaterialParams(E=E, nu=nu).validate(PhysicsKind.ELASTICITY)
    return ElementStiffness(E / (16 * (1 - nu ** 2)) * (_EL_CONST + nu * _EL_NU), "elasticity")


def elasticity_element_dnu(E: float, nu: float) -> np.ndarray:
    """Derivative of :func:`elasticity_element` with respect to ``nu``."""
    s = 1 - nu ** 2
    return E / 16 * (_EL_NU * s + (_EL_CONST + nu * _EL_NU) * 2 * nu) / s ** 2


def coupling_element(E: float, nu: float, alpha: float) -> ElementStiffness:
    MaterialParams(E=E, nu=nu, alpha=alpha).validate(PhysicsKind.ELASTICITY)
    if alpha < 0:
        raise ValidationError("alpha must be non-negative")
    return ElementStiffness(alpha * E / (6 * (1 - nu)) * _COUPLING_PATTERN, "coupling")


def element_stiffness(kind, rho: MaterialParams) -> ElementStiffness:
    """Closed-form element matrix for a physics kind or ``"coupling"``."""
    if isinstance(kind, str) and kind.strip().lower() == "coupling":
        return coupling_element(rho.E, rho.nu, rho.alpha)
    kind = PhysicsKind.parse(kind)
    rho.validate(kind)
    if kind is PhysicsKind.THERMAL:
        return thermal_element(rho.kappa)
    if kind is PhysicsKind.ELASTICITY:
        return elasticity_element(rho.E, rho.nu)
    ke = elasticity_element(rho.E, rho.nu).matrix
    kc = coupling_element(rho.E, rho.nu, rho.alpha).matrix
    kt = thermal_element(rho.kappa).matrix
    return ElementStiffness(np.block([[ke, kc], [np.zeros((4, 8)), kt]]), "thermoelasticity")


# ---------------------------------------------------------------------------
# stencils


def assemble_kernel(ke: ElementStiffness) -> StencilKernel:
    """Sum the four elements around a node into a 3x3 stencil.

    The node sits at local position 3 of its lower-left element, 4 of its
    lower-right, 1 of its upper-right and 2 of its upper-left one.
    """
    if not isinstance(ke, ElementStiffness):
        ke = ElementStiffness(ke, "custom")
    t = ke.tensor
    P, Q = t.shape[:2]
    w = np.zeros((3, 3, P, Q))
    for e_row, e_col, v_local in ((0, -1, 2), (0, 0, 3), (-1, 0, 0), (-1, -1, 1)):
        # element (i + e_row, j + e_col) owns node (i, j) as local v_local
        for u_local, (dr, dc) in enumerate(NODE_OFFSETS):
            r = e_row + dr
            c = e_col + dc
            w[r + 1, c + 1] += t[:, :, v_local, u_local]
    kind = {1: PhysicsKind.THERMAL, 2: PhysicsKind.ELASTICITY, 3: PhysicsKind.THERMOELASTICITY}.get(P)
    return StencilKernel(w, kind if P == Q else None)


_LAPLACE9 = np.array([[1, 1, 1], [1, -8, 1], [1, 1, 1]], float)


def thermal_kernel(kappa: float) -> StencilKernel:
    if kappa is None or not kappa > 0:
        raise ValidationError(f"kappa must be positive, got {kappa}")
    return StencilKernel((kappa / 3.0 * _LAPLACE9)[:, :, None, None], PhysicsKind.THERMAL)


def _elastic_blocks(E, nu):
    MaterialParams(E=E, nu=nu).validate(PhysicsKind.ELASTICITY)
    a, b, c = 1 - nu / 3, 2 * (1 + nu / 3), 4 * nu / 3
    yy = E / (4 * (1 - nu ** 2)) * np.array([[-a, -b, -a], [c, 8 * a, c], [-a, -b, -a]])
    xy = E / (8 * (1 - nu)) * np.array([[1, 0, -1], [0, 0, 0], [-1, 0, 1]], float)
    return yy.T, xy, xy, yy


def elasticity_kernel(E: float, nu: float) -> StencilKernel:
    xx, xy, yx, yy = _elastic_blocks(E, nu)
    w = np.zeros((3, 3, 2, 2))
    w[:, :, 0, 0], w[:, :, 0, 1], w[:, :, 1, 0], w[:, :, 1, 1] = xx, xy, yx, yy
    return StencilKernel(w, PhysicsKind.ELASTICITY)


def coupling_kernel(E: float, nu: float, alpha: float) -> dict:
    """Thermoelastic coupling blocks keyed ``xt``, ``yt``, ``tx``, ``ty``."""
    MaterialParams(E=E, nu=nu).validate(PhysicsKind.ELASTICITY)
    if alpha is None or alpha < 0:
        raise ValidationError(f"alpha must be non-negative, got {alpha}")
    yt = alpha * E / (6 * (1 - nu)) * np.array([[1, 4, 1], [0, 0, 0], [-1, -4, -1]], float)
    return {"xt": -yt.T, "yt": yt, "tx": np.zeros((3, 3)), "ty": np.zeros((3, 3))}


def thermoelastic_kernel(rho: MaterialParams) -> StencilKernel:
    rho.validate(PhysicsKind.THERMOELASTICITY)
    w = np.zeros((3, 3, 3, 3))
    w[:, :, :2, :2] = elasticity_kernel(rho.E, rho.nu).w
    cp = coupling_kernel(rho.E, rho.nu, rho.alpha)
    w[:, :, 0, 2], w[:, :, 1, 2] = cp["xt"], cp["yt"]
    w[:, :, 2, 0], w[:, :, 2, 1] = cp["tx"], cp["ty"]
    w[:, :, 2, 2] = thermal_kernel(rho.kappa).w[:, :, 0, 0]
    return StencilKernel(w, PhysicsKind.THERMOELASTICITY)


def kernel_for(kind, rho: MaterialParams) -> StencilKernel:
    kind = PhysicsKind.parse(kind)
    rho.validate(kind)
    if kind is PhysicsKind.THERMAL:
        return thermal_kernel(rho.kappa)
    if kind is PhysicsKind.ELASTICITY:
        return elasticity_kernel(rho.E, rho.nu)
    return thermoelastic_kernel(rho)


# ---------------------------------------------------------------------------
# bi-phase


def biphase_theta(rho0: MaterialParams, rho1: MaterialParams) -> ThetaKernel:
    """Element tensors of both elastic phases, stacked on the phase axis."""
    t0 = elasticity_element(rho0.E, rho0.nu).tensor
    t1 = elasticity_element(rho1.E, rho1.nu).tensor
    return ThetaKernel(np.stack([t0, t1]), rho0, rho1)


PARAM_NAMES = ("E0", "nu0", "E1", "nu1")


def dtheta_drho(rho0: MaterialParams, rho1: MaterialParams) -> dict:
    """Derivatives of :func:`biphase_theta` for each of ``E0, nu0, E1, nu1``."""
    out = {}
    for h, rho in enumerate((rho0, rho1)):
        rho.validate(PhysicsKind.ELASTICITY)
        d_e = np.zeros((2, 2, 2, 4, 4))
        d_nu = np.zeros((2, 2, 2, 4, 4))
        d_e[h] = elasticity_element(1.0, rho.nu).tensor
        d_nu[h] = ElementStiffness(elasticity_element_dnu(rho.E, rho.nu), "elasticity").tensor
        out[f"E{h}"] = d_e
        out[f"nu{h}"] = d_nu
    return out


def collapse_theta(theta: ThetaKernel, phase: int) -> StencilKernel:
    """Homogeneous stencil of one phase of a bi-phase tensor."""
    t = theta.theta[phase]
    P, Q = t.shape[:2]
    return assemble_kernel(ElementStiffness(t.transpose(0, 2, 1, 3).reshape(4 * P, 4 * Q), "elasticity"))
