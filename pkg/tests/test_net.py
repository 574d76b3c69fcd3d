import csv

import numpy as np
import pytest

import oracle
from feanet.errors import DimensionError, DivergenceError, ValidationError
from feanet.fields import BoundaryCondition, FieldImage, PhaseImage, circular_inclusion, interior_mask
from feanet.kernels import MaterialParams, biphase_theta, elasticity_kernel, kernel_for, thermal_kernel
from feanet.net import (
    InferenceConfig,
    apply_boundary,
    infer,
    preconditioner_biphase,
    preconditioner_homogeneous,
    residual,
)
from feanet.solver import assemble_global, generate_sample

CH = {"thermal": 1, "elasticity": 2, "thermoelasticity": 3}


def rel(a, b):
    return np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(b)


class TestConfig:
    @pytest.mark.parametrize("omega", [0.0, 2.0, -1.0])
    def test_omega_range(self, omega):
        with pytest.raises(ValidationError):
            InferenceConfig(omega=omega)

    def test_depth(self):
        with pytest.raises(ValidationError):
            InferenceConfig(max_depth=0)

    def test_default_omega(self):
        assert InferenceConfig().omega == pytest.approx(2 / 3)


class TestPreconditioner:
    def test_thermal(self):
        assert preconditioner_homogeneous(thermal_kernel(3.0)).p.ravel()[0] == -1 / 8

    def test_elasticity(self):
        E, nu = 0.2e12, 0.3
        p = preconditioner_homogeneous(elasticity_kernel(E, nu)).p.ravel()
        expected = 4 * (1 - nu ** 2) / (8 * E * (1 - nu / 3))
        assert np.allclose(p, expected, rtol=1e-14)

    def test_scaling(self, steel):
        w = kernel_for("thermoelasticity", steel)
        assert np.allclose(preconditioner_homogeneous(w.scaled(2.0)).p, preconditioner_homogeneous(w).p / 2)

    def test_biphase_all_ones(self, inclusion_pair):
        r0, r1 = inclusion_pair
        p = preconditioner_biphase(biphase_theta(r0, r1), PhaseImage(np.ones((6, 6)))).p
        ref = preconditioner_homogeneous(elasticity_kernel(r0.E, r0.nu)).p
        inner = interior_mask(7)
        assert np.allclose(p[inner], ref[0, 0], rtol=1e-14)

    def test_biphase_matches_sparse_diagonal(self, inclusion_pair, rng):
        r0, r1 = inclusion_pair
        h = PhaseImage(rng.uniform(0, 1, (8, 8)))
        p = preconditioner_biphase(biphase_theta(r0, r1), h).p
        d = assemble_global("elasticity", r0, 9, r1, h).diagonal()
        inner = interior_mask(9)
        assert np.allclose(1 / p[inner], d[inner], rtol=1e-13)

    def test_biphase_equal_materials_constant(self, rng):
        r = MaterialParams(E=0.2e12, nu=0.3)
        p = preconditioner_biphase(biphase_theta(r, r), PhaseImage(rng.uniform(0, 1, (6, 6)))).p
        inner = p[interior_mask(7)]
        assert np.allclose(inner, inner[0], rtol=1e-14)

    def test_non_square(self, steel):
        from feanet.kernels import StencilKernel

        with pytest.raises(DimensionError):
            preconditioner_homogeneous(StencilKernel(np.ones((3, 3, 2, 1))))


class TestBoundary:
    def test_idempotent_and_interior_untouched(self, rng):
        u = FieldImage(rng.standard_normal((6, 6, 2)), "elasticity")
        bc = BoundaryCondition.clamped(6, "elasticity", value=(1.0, -2.0))
        once = apply_boundary(u, bc)
        assert apply_boundary(once, bc) == once
        inner = interior_mask(6)
        assert np.array_equal(once.data[inner], u.data[inner])
        assert np.all(once.data[~inner] == (1.0, -2.0))

    def test_everything_constrained(self, rng):
        vals = rng.standard_normal((5, 5, 1))
        bc = BoundaryCondition(np.ones((5, 5), bool), vals)
        assert np.array_equal(apply_boundary(FieldImage(np.zeros((5, 5, 1)), "thermal"), bc).data, vals)


class TestResidual:
    def test_oracle_solution(self, backend, steel):
        s = generate_sample("random", "elasticity", steel, 9, seed=0)
        r = residual(s.V, s.U, kernel_for("elasticity", steel))
        inner = interior_mask(9)
        assert np.linalg.norm(r.data[inner]) <= 1e-8 * np.linalg.norm(s.V.data[inner])

    def test_zero_response(self, steel, rng):
        v = FieldImage(rng.standard_normal((7, 7, 3)), "thermoelasticity")
        r = residual(v, FieldImage(np.zeros((7, 7, 3)), "thermoelasticity"), kernel_for("thermoelasticity", steel))
        inner = interior_mask(7)
        assert np.array_equal(r.data[inner], v.data[inner])
        assert not r.data[~inner].any()

    def test_linear_in_response(self, steel, rng):
        w = kernel_for("thermal", steel)
        zero = FieldImage(np.zeros((6, 6, 1)), "thermal")
        u1 = FieldImage(rng.standard_normal((6, 6, 1)), "thermal")
        u2 = FieldImage(rng.standard_normal((6, 6, 1)), "thermal")
        v = FieldImage(rng.standard_normal((6, 6, 1)), "thermal")
        r = lambda u: residual(v, u, w).data - residual(v, zero, w).data  # noqa: E731
        both = r(FieldImage(u1.data + 3 * u2.data, "thermal"))
        assert np.allclose(both, r(u1) + 3 * r(u2), rtol=1e-12, atol=1e-12 * np.abs(both).max())


def _dense_layer(kind, rho, n, v, u):
    C = CH[kind]
    K = oracle.homogeneous_global(oracle.element(kind, rho.E, rho.nu, rho.kappa, rho.alpha), n, C)
    fixed = np.repeat((~interior_mask(n)).ravel(), C)
    return oracle.jacobi_step(K, u.ravel(), v.ravel(), fixed, 2 / 3).reshape(n, n, C)


class TestInfer:
    @pytest.mark.parametrize("kind", list(CH))
    def test_one_layer_is_one_jacobi_step(self, backend, kind, steel, rng):
        n = 6
        v = FieldImage(rng.uniform(-1, 1, (n, n, CH[kind])), kind)
        u0 = FieldImage(rng.standard_normal((n, n, CH[kind])), kind)
        bc = BoundaryCondition.clamped(n, kind)
        u, _ = infer(v, kernel_for(kind, steel), bc, InferenceConfig(max_depth=1), u0=u0)
        ref = _dense_layer(kind, steel, n, v.data, apply_boundary(u0, bc).data)
        assert np.abs(u.data - ref).max() <= 1e-12 * np.abs(ref).max()

    def test_thermal_point_load(self, backend):
        n = 13
        rho = MaterialParams(kappa=11.82)
        s = generate_sample({"type": "point"}, "thermal", rho, n)
        u, hist = infer(s.V, kernel_for("thermal", rho), BoundaryCondition.clamped(n, "thermal"),
                        InferenceConfig(max_depth=5000, record_every=500), oracle=s.U)
        assert hist.error[-1] < 1e-6
        assert rel(u.data, s.U.data) < 1e-6

    def test_tol_stop_matches_solver(self, backend, steel):
        n = 9
        s = generate_sample("random", "elasticity", steel, n, seed=3)
        u, hist = infer(s.V, kernel_for("elasticity", steel), BoundaryCondition.clamped(n, "elasticity"),
                        InferenceConfig(max_depth=100000, tol=1e-11, record_every=50))
        assert hist.residual[-1] <= 1e-11
        assert hist.depth[-1] < 100000
        assert rel(u.data, s.U.data) < 1e-8

    def test_monotone_error(self, backend, steel):
        n = 13
        s = generate_sample("random", "elasticity", steel, n, seed=4)
        _, hist = infer(s.V, kernel_for("elasticity", steel), BoundaryCondition.clamped(n, "elasticity"),
                        InferenceConfig(max_depth=2000, record_every=100), oracle=s.U)
        errs = [hist.at(d)[1] for d in range(100, 2001, 100)]
        # once at the rounding floor the error only wobbles in its last bits
        assert all(b <= a for a, b in zip(errs, errs[1:]) if a > 1e-12)
        assert errs[-1] < 1e-12

    def test_biphase_converges(self, backend, inclusion_pair):
        r0, r1 = inclusion_pair
        n = 13
        h = circular_inclusion(n)
        s = generate_sample("random", "elasticity", r0, n, seed=0, rho1=r1, h=h)
        u, hist = infer(s.V, (biphase_theta(r0, r1), h), BoundaryCondition.clamped(n, "elasticity"),
                        InferenceConfig(max_depth=6000, record_every=1000), oracle=s.U)
        assert hist.error[-1] < 1e-6

    def test_divergence_detected(self, backend):
        n = 9
        v = FieldImage(np.pad(np.ones((7, 7, 1)), ((1, 1), (1, 1), (0, 0))), "thermal")
        with pytest.raises(DivergenceError, match="omega=1.9"):
            infer(v, thermal_kernel(1.0), BoundaryCondition.clamped(n, "thermal"),
                  InferenceConfig(omega=1.9, max_depth=2000))

    def test_history_csv(self, tmp_path, steel):
        s = generate_sample("random", "thermal", steel, 7, seed=0)
        _, hist = infer(s.V, kernel_for("thermal", steel), BoundaryCondition.clamped(7, "thermal"),
                        InferenceConfig(max_depth=30, record_every=10), oracle=s.U)
        hist.to_csv(tmp_path / "h.csv")
        rows = list(csv.reader(open(tmp_path / "h.csv")))
        assert rows[0] == ["depth", "residual", "error"]
        depths = [int(r[0]) for r in rows[1:]]
        assert depths == sorted(set(depths)) and depths[-1] == 30
        assert all(r[2] for r in rows[1:] if int(r[0]) % 10 == 0)

    def test_history_error_matches_offline(self, steel):
        s = generate_sample("random", "elasticity", steel, 9, seed=1)
        bc = BoundaryCondition.clamped(9, "elasticity")
        u, hist = infer(s.V, kernel_for("elasticity", steel), bc, InferenceConfig(max_depth=300), oracle=s.U)
        free = interior_mask(9)
        assert hist.error[-1] == pytest.approx(rel(u.data[free], s.U.data[free]), rel=1e-12)

    def test_resolution_independent(self, steel):
        w = kernel_for("thermal", steel)
        for n in (25, 50):
            s = generate_sample("random", "thermal", steel, n, seed=0)
            u, _ = infer(s.V, w, BoundaryCondition.clamped(n, "thermal"), InferenceConfig(max_depth=10))
            assert u.n == n

    def test_shape_checks(self, steel):
        v = FieldImage(np.zeros((6, 6, 1)), "thermal")
        with pytest.raises(DimensionError):
            infer(v, elasticity_kernel(1.0, 0.3), BoundaryCondition.clamped(6, "thermal"))
        with pytest.raises(DimensionError):
            infer(v, thermal_kernel(1.0), BoundaryCondition.clamped(7, "thermal"))
        with pytest.raises(ValidationError):
            infer(v, "not a kernel", BoundaryCondition.clamped(6, "thermal"))
