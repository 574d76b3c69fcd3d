import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from feanet.errors import IdentifiabilityError, MulticollinearityError, StagnationError, ValidationError
from feanet.conv import conv_homogeneous
from feanet.fields import Dataset, FieldImage, PhaseImage, Sample, circular_inclusion, interior_mask
from feanet.kernels import MaterialParams, kernel_for
from feanet.learning import (
    Adam,
    EstimateOptions,
    OptimizerState,
    align_labels,
    check_loading_rank,
    clip_rho,
    estimate_joint,
    estimate_phase,
    estimate_properties,
    fit_multiphysics_filter,
    param_errors,
    relative_error,
    split_threshold,
    window,
)
from feanet.solver import generate_sample

CH = {"thermal": 1, "elasticity": 2, "thermoelasticity": 3}
TIE = {"type": "random", "tie": {"channel": "x", "to": "y", "factor": 2.0}}


@pytest.fixture(scope="module")
def inclusion13():
    r0, r1 = MaterialParams(E=0.241e12, nu=0.36), MaterialParams(E=0.2e12, nu=0.25)
    h = circular_inclusion(13)
    return r0, r1, h, generate_sample("random", "elasticity", r0, 13, seed=0, rho1=r1, h=h)


class TestHelpers:
    def test_relative_error(self):
        assert relative_error([1.0, 2.0], [1.0, 2.0]) == 0.0
        assert relative_error([3.0, 4.0], [0.0, 5.0]) == pytest.approx(np.sqrt(10) / 5)
        with pytest.raises(ValidationError):
            relative_error([1.0], [0.0])

    def test_clip_identity_inside(self):
        rho = MaterialParams(E=0.2e12, nu=0.3)
        assert clip_rho(rho) == rho

    def test_clip_upper(self):
        assert clip_rho(MaterialParams(E=0.9e12, nu=0.3), {"E": (0.0, 0.5e12)}).E == 0.5e12

    def test_clip_bad_bounds(self):
        with pytest.raises(ValidationError):
            clip_rho(MaterialParams(E=1.0, nu=0.3), {"nu": (0.4, 0.1)})

    def test_param_errors(self):
        e = param_errors(MaterialParams(E=1.1, nu=0.3), MaterialParams(E=1.0, nu=0.3))
        assert e["E"] == pytest.approx(0.1) and e["nu"] == 0.0

    def test_split_threshold(self):
        v = np.r_[np.full(30, 0.2), np.full(10, 0.9)]
        t = split_threshold(v)
        assert 0.2 < t < 0.9
        assert split_threshold(np.full(5, 0.3)) == 0.5

    def test_align_labels(self):
        h = circular_inclusion(9)
        a, b = MaterialParams(E=1.0, nu=0.1), MaterialParams(E=2.0, nu=0.2)
        (r0, r1), hh, swapped = align_labels((a, b), PhaseImage(1 - h.data), h)
        assert swapped and (r0, r1) == (b, a) and hh == h
        assert align_labels((a, b), h, h)[2] is False

    def test_window(self, inclusion13):
        s = inclusion13[3]
        w = window(s, 2, 3, 6)
        assert w.n == 6 and np.array_equal(w.H.data, s.H.data[2:7, 3:8])
        with pytest.raises(ValidationError):
            window(s, 10, 10, 6)


class TestAdam:
    def test_minimises_quadratic(self):
        opt = Adam(lr=0.1)
        x = np.array([3.0, -2.0])
        for _ in range(500):
            x = opt.step(x, 2 * x)
        assert np.abs(x).max() < 1e-3

    def test_first_step_size(self):
        # bias correction makes the first step lr * sign(g) up to eps
        x = Adam(lr=0.5).step(np.zeros(3), np.array([1e-2, -4.0, 7.0]))
        assert np.allclose(x, [-0.5, 0.5, -0.5], rtol=1e-6)

    def test_state_validation(self):
        with pytest.raises(ValidationError):
            OptimizerState(method="sgd")
        with pytest.raises(ValidationError):
            OptimizerState(learning_rate=0.0)
        with pytest.raises(ValidationError):
            EstimateOptions(reduction="max")


class TestFilterRegression:
    @pytest.mark.parametrize("kind", list(CH))
    def test_noiseless_recovery(self, kind, steel):
        s = generate_sample("random", kind, steel, 8, seed=1)
        w = fit_multiphysics_filter(s)
        ref = kernel_for(kind, steel).w
        inner = interior_mask(8)
        v = conv_homogeneous(w, s.U).data[inner]
        assert np.linalg.norm(v - s.V.data[inner]) <= 1e-7 * np.linalg.norm(s.V.data[inner])
        # the heat row sees displacement columns 1e10 times larger than its own
        for p, tol in zip(range(CH[kind]), (1e-7, 1e-7, 1e-5)):
            scale = np.abs(ref[:, :, p, :]).max()
            assert np.abs(w.w[:, :, p, :] - ref[:, :, p, :]).max() <= tol * scale

    def test_iterative_mode(self, steel):
        s = generate_sample("random", "thermal", steel, 8, seed=1)
        w = fit_multiphysics_filter(s, method="adam", opts=EstimateOptions(lr=1e-2, max_iter=20000, tol=1e-24))
        assert relative_error(w.w, kernel_for("thermal", steel).w) < 1e-6

    def test_too_small(self, steel):
        with pytest.raises(ValidationError):
            fit_multiphysics_filter(generate_sample("random", "thermal", steel, 5))

    def test_tied_channels_rejected(self, steel):
        s = generate_sample(TIE, "thermoelasticity", steel, 13, seed=0)
        with pytest.raises(MulticollinearityError) as exc:
            fit_multiphysics_filter(s)
        c = exc.value.channel
        assert c is not None
        c = c / c[0]
        assert np.allclose(c, [1.0, -2.0, 0.0], atol=1e-8)
        assert exc.value.rank < exc.value.unknowns
        assert exc.value.null_vector.shape == (3, 3, 3)

    def test_rank_report(self, steel):
        assert check_loading_rank(generate_sample("random", "thermoelasticity", steel, 13, seed=0)).ok
        rep = check_loading_rank(generate_sample(TIE, "thermoelasticity", steel, 13, seed=0))
        assert not rep.ok and rep.sigma_ratio < 1e-10
        assert not check_loading_rank(generate_sample("random", "thermoelasticity", steel, 4)).ok

    def test_dataset_of_samples(self, steel):
        ds = Dataset([generate_sample("random", "elasticity", steel, 6, seed=k) for k in range(3)])
        assert check_loading_rank(ds).rows == 3 * 16

    @given(seed=st.integers(0, 2 ** 31))
    def test_unique_minimiser_equals_generator(self, seed):
        # any full-rank response paired with its convolution is fitted exactly
        rng = np.random.default_rng(seed)
        u = rng.standard_normal((7, 7, 2))
        w = kernel_for("elasticity", MaterialParams(E=1.0, nu=rng.uniform(0.1, 0.45)))
        s = Sample(conv_homogeneous(w, FieldImage(u, "elasticity")), FieldImage(u, "elasticity"))
        assert np.abs(fit_multiphysics_filter(s).w - w.w).max() < 1e-10


class TestPhase:
    def test_recovers_inclusion(self, inclusion13):
        r0, r1, h, s = inclusion13
        res = estimate_phase(s, r0, r1, EstimateOptions(lr=1e-2, max_iter=20000, seed=1))
        assert res.status == "converged"
        assert relative_error(res.phase_binary, h) < 0.0025
        assert relative_error(res.phase, h) < 1e-6

    def test_sub_window(self):
        r0, r1 = MaterialParams(E=0.241e12, nu=0.36), MaterialParams(E=0.2e12, nu=0.25)
        h = circular_inclusion(25)
        s = generate_sample("random", "elasticity", r0, 25, seed=0, rho1=r1, h=h)
        w = window(s, 4, 4, 17)
        res = estimate_phase(w, r0, r1, EstimateOptions(lr=1e-2, max_iter=20000, seed=1))
        assert res.phase_binary == w.H

    def test_equal_materials_stagnate(self, inclusion13, caplog):
        r0 = inclusion13[0]
        s = inclusion13[3]
        with caplog.at_level(logging.WARNING):
            res = estimate_phase(s, r0, r0, EstimateOptions(lr=1e-2, max_iter=1000))
        assert res.status == "stagnated"
        assert res.iterations == 101
        assert len(set(res.loss_history)) == 1
        assert "stagnated" in caplog.text

    def test_strict_stagnation_raises(self, inclusion13):
        r0 = inclusion13[0]
        with pytest.raises(StagnationError):
            estimate_phase(inclusion13[3], r0, r0, EstimateOptions(lr=1e-2, max_iter=1000, strict=True))

    def test_gd_monotone(self, inclusion13):
        r0, r1, _, s = inclusion13
        res = estimate_phase(s, r0, r1, EstimateOptions(method="gd", lr=1e-4, max_iter=500, seed=2))
        assert np.all(np.diff(res.loss_history) <= 0)

    def test_reductions_agree(self, inclusion13):
        r0, r1, _, s = inclusion13
        init = np.full((12, 12), 0.5)
        a = estimate_phase(s, r0, r1, EstimateOptions(lr=1e-2, max_iter=5, init_phase=init))
        b = estimate_phase(s, r0, r1, EstimateOptions(lr=1e-2, max_iter=5, init_phase=init, reduction="sum"))
        count = 11 * 11 * 2
        assert a.loss_history[0] * count == pytest.approx(b.loss_history[0], rel=1e-12)


class TestProperties:
    def test_recovers_materials(self, inclusion13):
        r0, r1, h, s = inclusion13
        res = estimate_properties(s, h, EstimateOptions(lr=1e-3, max_iter=20000, seed=3))
        assert res.status == "converged"
        assert max(param_errors(res.rho0, r0).values()) < 1e-6
        assert max(param_errors(res.rho1, r1).values()) < 1e-6

    def test_gd_monotone(self, inclusion13):
        r0, r1, h, s = inclusion13
        res = estimate_properties(s, h, EstimateOptions(method="gd", lr=1e-4, max_iter=500, seed=2))
        assert np.all(np.diff(res.loss_history) <= 0)

    def test_zero_loading_rejected(self, inclusion13):
        _, _, h, s = inclusion13
        zero = FieldImage(np.zeros_like(s.V.data), "elasticity")
        with pytest.raises(IdentifiabilityError):
            estimate_properties(Sample(zero, s.U, h), h)

    def test_single_phase_rejected(self, inclusion13):
        s = inclusion13[3]
        with pytest.raises(IdentifiabilityError):
            estimate_properties(s, PhaseImage(np.ones((12, 12))))

    def test_needs_phase(self, steel):
        s = generate_sample("random", "elasticity", steel, 6)
        with pytest.raises(ValidationError):
            estimate_properties(s)

    def test_clip_warning(self, inclusion13, caplog):
        r0, r1, h, s = inclusion13
        tight = {"E": (0.3e12, 0.5e12), "nu": (0.05, 0.45)}
        with caplog.at_level(logging.WARNING):
            res = estimate_properties(s, h, EstimateOptions(lr=1e-3, max_iter=300, bounds=tight))
        assert res.clip_fraction > 0.5
        assert "bounds were active" in caplog.text
        assert res.rho0.E >= 0.3e12 and res.rho1.E >= 0.3e12

    def test_thermal_rejected(self, steel):
        s = generate_sample("random", "thermal", steel, 6)
        with pytest.raises(ValidationError):
            estimate_properties(s, circular_inclusion(6))


class TestJoint:
    def test_modulo_label_swap(self, inclusion13):
        r0, r1, h, s = inclusion13
        res = estimate_joint(s, EstimateOptions(lr=1e-2, max_iter=20000, seed=2))
        (a0, a1), hb, _ = align_labels((res.rho0, res.rho1), res.phase_binary, h)
        assert hb == h
        assert relative_error(a0.E, r0.E) < 0.03 and relative_error(a1.E, r1.E) < 0.03
        assert "threshold" in res.extra and "continuous_rho" in res.extra

    def test_without_postprocess(self, inclusion13):
        s = inclusion13[3]
        res = estimate_joint(s, EstimateOptions(lr=1e-2, max_iter=50, seed=0, postprocess=False))
        assert res.iterations <= 50
        assert res.status == res.extra["joint_status"]
