import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracle
from feanet.errors import DimensionError, ValidationError
from feanet.kernels import (
    ElementStiffness,
    MaterialParams,
    assemble_kernel,
    biphase_theta,
    collapse_theta,
    coupling_kernel,
    dtheta_drho,
    elasticity_element,
    elasticity_kernel,
    element_stiffness,
    element_stiffness_quadrature,
    kernel_for,
    thermal_element,
    thermal_kernel,
    thermoelastic_kernel,
)

E_ = st.floats(0.1e12, 0.4e12)
NU = st.floats(0.2, 0.35)
KAPPA = st.floats(10.0, 14.0)
ALPHA = st.floats(11e-5, 15e-5)


def rel(a, b):
    return np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(b)


class TestMaterialParams:
    def test_required_fields(self):
        with pytest.raises(ValidationError):
            MaterialParams(E=1.0).validate("elasticity")
        MaterialParams(kappa=1.0).validate("thermal")

    @pytest.mark.parametrize("nu", [0.0, 0.5, -0.1, 0.7])
    def test_nu_open_interval(self, nu):
        with pytest.raises(ValidationError):
            MaterialParams(E=1.0, nu=nu).validate("elasticity")

    def test_dict_round_trip(self, steel):
        assert MaterialParams.from_dict(steel.to_dict()) == steel
        with pytest.raises(ValidationError):
            MaterialParams.from_dict({"G": 1.0})


class TestQuadrature:
    def test_thermal_kappa6(self):
        ke = element_stiffness_quadrature("thermal", MaterialParams(kappa=6.0))
        assert np.allclose(ke.matrix[0], oracle.THERMAL_K6_ROW1, atol=1e-14)

    def test_gauss_order_one_rejected(self):
        with pytest.raises(ValidationError):
            element_stiffness_quadrature("thermal", MaterialParams(kappa=1.0), gauss_order=1)

    def test_unknown_kind(self):
        with pytest.raises(ValidationError):
            element_stiffness_quadrature("acoustic", MaterialParams(kappa=1.0))

    def test_higher_order_agrees(self, steel):
        a = element_stiffness_quadrature("elasticity", steel, 2).matrix
        b = element_stiffness_quadrature("elasticity", steel, 4).matrix
        assert rel(a, b) < 1e-14

    @pytest.mark.parametrize("kind", ["thermal", "elasticity", "thermoelasticity"])
    def test_matches_independent_oracle(self, kind, steel):
        ke = element_stiffness_quadrature(kind, steel).matrix
        ref = oracle.element(kind, steel.E, steel.nu, steel.kappa, steel.alpha)
        assert rel(ke, ref) < 1e-13

    @pytest.mark.parametrize("kind", ["thermal", "elasticity"])
    def test_row_sums_and_symmetry(self, kind, steel):
        m = element_stiffness_quadrature(kind, steel).matrix
        scale = np.abs(m).max()
        assert np.abs(m - m.T).max() <= 1e-12 * scale
        assert np.abs(m.sum(axis=1)).max() <= 1e-12 * scale


class TestClosedForms:
    @given(E=E_, nu=NU, kappa=KAPPA, alpha=ALPHA)
    def test_elements_match_quadrature(self, E, nu, kappa, alpha):
        rho = MaterialParams(E=E, nu=nu, kappa=kappa, alpha=alpha)
        for kind in ("thermal", "elasticity", "coupling", "thermoelasticity"):
            assert rel(element_stiffness(kind, rho).matrix,
                       element_stiffness_quadrature(kind, rho).matrix) < 1e-12

    def test_printed_thermal_stencil(self):
        w = thermal_kernel(3.0).w[:, :, 0, 0]
        assert np.array_equal(w, [[1, 1, 1], [1, -8, 1], [1, 1, 1]])

    def test_thermal_kernel_sums_to_zero(self):
        assert abs(thermal_kernel(7.3).w.sum()) < 1e-12 * 7.3

    def test_thermal_invalid(self):
        with pytest.raises(ValidationError):
            thermal_kernel(0.0)

    def test_frozen_elasticity_values(self):
        w = elasticity_kernel(1.0, 0.3)
        assert np.allclose(w.block("x", "x"), oracle.FROZEN_WXX, atol=1e-14)
        assert np.allclose(w.block("x", "y"), oracle.FROZEN_WXY, atol=1e-14)

    def test_frozen_coupling_values(self):
        cp = coupling_kernel(1.0, 0.3, 1.0)
        assert np.allclose(cp["yt"], oracle.FROZEN_WYT, atol=1e-14)
        assert np.array_equal(cp["xt"], -cp["yt"].T)
        assert not cp["tx"].any() and not cp["ty"].any()
        assert not cp["yt"][1].any()

    def test_table_reference_entries(self):
        w = elasticity_kernel(0.23e12, 0.289)
        assert abs(w.block("x", "x")[0, 0] / oracle.TABLE1_WXX11 - 1) < 1e-3
        assert abs(w.block("x", "y")[0, 0] / oracle.TABLE1_WXY11 - 1) < 1e-3

    @given(E=E_, nu=NU)
    def test_elasticity_symmetries(self, E, nu):
        w = elasticity_kernel(E, nu)
        xx, xy, yx, yy = (w.block(a, b) for a, b in (("x", "x"), ("x", "y"), ("y", "x"), ("y", "y")))
        assert np.array_equal(xx.T, yy)
        assert np.array_equal(xy, yx)
        assert np.array_equal(xx, xx[::-1]) and np.array_equal(xx, xx[:, ::-1])
        assert not xy[1].any() and not xy[:, 1].any()

    def test_invalid_nu(self):
        with pytest.raises(ValidationError):
            elasticity_kernel(1.0, 0.5)

    def test_thermoelastic_blocks(self, steel):
        w = thermoelastic_kernel(steel)
        assert np.array_equal(w.block("T", "T"), thermal_kernel(steel.kappa).w[:, :, 0, 0])
        assert not w.block("T", "x").any() and not w.block("T", "y").any()

    def test_thermoelastic_needs_all(self):
        with pytest.raises(ValidationError):
            thermoelastic_kernel(MaterialParams(E=1.0, nu=0.3, kappa=1.0))


class TestAssembly:
    def test_thermal_kappa6(self):
        w = assemble_kernel(element_stiffness_quadrature("thermal", MaterialParams(kappa=6.0)))
        assert np.allclose(w.w[:, :, 0, 0], 2 * np.array([[1, 1, 1], [1, -8, 1], [1, 1, 1]]), atol=1e-13)

    def test_zero_element(self):
        assert not assemble_kernel(ElementStiffness(np.zeros((8, 8)), "elasticity")).w.any()

    def test_bad_shape(self):
        with pytest.raises(DimensionError):
            ElementStiffness(np.zeros((6, 8)), "x")

    @pytest.mark.parametrize("kind,C", [("thermal", 1), ("elasticity", 2), ("thermoelasticity", 3)])
    def test_matches_centre_row_oracle(self, kind, C, steel):
        ke = element_stiffness_quadrature(kind, steel)
        ref = oracle.stencil(oracle.element(kind, steel.E, steel.nu, steel.kappa, steel.alpha), C)
        assert rel(assemble_kernel(ke).w, ref) < 1e-13
        assert rel(kernel_for(kind, steel).w, ref) < 1e-13

    def test_coupling_block_oracle(self, steel):
        ke = element_stiffness_quadrature("coupling", steel)
        ref = oracle.stencil_rect(oracle.coupling_element(steel.E, steel.nu, steel.alpha), 2, 1)
        got = assemble_kernel(ke).w
        assert rel(got, ref) < 1e-13
        cp = coupling_kernel(steel.E, steel.nu, steel.alpha)
        assert rel(got[:, :, 0, 0], cp["xt"]) < 1e-13


class TestBiphase:
    def test_collapse_matches_homogeneous(self, inclusion_pair):
        r0, r1 = inclusion_pair
        th = biphase_theta(r0, r1)
        for h, rho in enumerate((r0, r1)):
            assert rel(collapse_theta(th, h).w, elasticity_kernel(rho.E, rho.nu).w) < 1e-14

    def test_blocks_symmetric(self, inclusion_pair):
        t = biphase_theta(*inclusion_pair).theta
        for h in range(2):
            full = t[h].transpose(0, 2, 1, 3).reshape(8, 8)
            assert np.abs(full - full.T).max() <= 1e-12 * np.abs(full).max()

    def test_dE_is_unit_modulus_theta(self, inclusion_pair):
        r0, r1 = inclusion_pair
        d = dtheta_drho(r0, r1)
        assert np.allclose(d["E0"][0], elasticity_element(1.0, r0.nu).tensor, rtol=0, atol=1e-16)
        assert not d["E0"][1].any() and not d["E1"][0].any()
        # linear in E: derivative times E reproduces the phase tensor
        assert rel(d["E1"][1] * r1.E, biphase_theta(r0, r1).theta[1]) < 1e-14

    def test_dnu_finite_difference(self):
        rho = MaterialParams(E=0.2e12, nu=0.25)
        step = 1e-6
        up = elasticity_element(rho.E, rho.nu + step).tensor
        dn = elasticity_element(rho.E, rho.nu - step).tensor
        fd = (up - dn) / (2 * step)
        exact = dtheta_drho(rho, rho)["nu0"][0]
        assert rel(exact, fd) < 1e-6

    def test_thermal_element_has_uniform_diagonal(self):
        assert np.all(np.diag(thermal_element(6.0).matrix) == -4.0)
