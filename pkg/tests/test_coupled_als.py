"""Tests for the coupled alternating least-squares solver."""

import numpy as np
import pytest
from conftest import reference_instance

from perstd.coupled_als import (
    AlsState,
    CouplingSpec,
    coupled_als_fit,
    fit_multistart,
    objective,
    random_state,
    state_from_semialg,
)
from perstd.cpd import CpdOptions
from perstd.semialg import semialg_decompose
from perstd.tensor_core import cp_tensor, khatri_rao, unfold
from perstd.uniqueness import Witness


def truth_state(model, meas):
    c = [m.copy() for m in model.common.matrices()]
    xc = [[meas[k].matrices()[j] @ c[j] for j in range(3)] for k in range(model.n_datasets)]
    xd = [[m.copy() for m in model.distinct[k]] for k in range(model.n_datasets)]
    return AlsState(c=c, xc=xc, xd=xd)


def add_noise(y, snr_db, seed):
    """White Gaussian noise rescaled so each dataset hits the SNR exactly."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    out = []
    for t in y:
        g = rng.standard_normal(t.shape)
        out.append(t + g * (np.linalg.norm(t) / (np.linalg.norm(g) * 10 ** (snr_db / 20))))
    return out


def nrmse(got, want):
    return np.linalg.norm(got - want) / np.linalg.norm(want)


class TestObjective:
    def test_exact_state_is_zero(self):
        model, meas, y = reference_instance(61)
        state = truth_state(model, meas)
        spec = CouplingSpec.full(3)
        assert objective(state, y, meas) <= 1e-18 * sum(np.linalg.norm(t) ** 2 for t in y)
        assert objective(state, y, meas, spec) == objective(state, y, meas)

    def test_zero_state_is_data_energy(self):
        model, meas, y = reference_instance(67)
        state = truth_state(model, meas)
        state.c = [np.zeros_like(m) for m in state.c]
        state.xc = [[np.zeros_like(m) for m in row] for row in state.xc]
        state.xd = [[np.zeros_like(m) for m in row] for row in state.xd]
        want = sum(np.linalg.norm(t) ** 2 for t in y)
        assert objective(state, y, meas) == pytest.approx(want, rel=1e-12)
        assert objective(state, y, meas, CouplingSpec.full(3)) == pytest.approx(want, rel=1e-12)

    def test_matches_entrywise_oracle(self):
        model, meas, y = reference_instance(
            71, common=(3, 4, 3), rank=2, l_ranks=(2, 1),
            dataset=((4, 5, 4), (5, 4, 5)),
        )
        spec = CouplingSpec.full(2)
        state = random_state(y, meas, 2, (2, 1), spec, seed=1)
        total = 0.0
        for k, t in enumerate(y):
            xc, xd = state.xc[k], state.xd[k]
            for i in range(t.shape[0]):
                for j in range(t.shape[1]):
                    for l in range(t.shape[2]):
                        pred = sum(xc[0][i, r] * xc[1][j, r] * xc[2][l, r]
                                   for r in range(2))
                        pred += sum(xd[0][i, r] * xd[1][j, r] * xd[2][l, r]
                                    for r in range(xd[0].shape[1]))
                        total += (t[i, j, l] - pred) ** 2
        got = objective(state, y, meas, spec)
        assert got == pytest.approx(total, rel=1e-10)

    def test_substitution_overrides_stale_factors(self):
        model, meas, y = reference_instance(73)
        spec = CouplingSpec.full(3)
        state = random_state(y, meas, 5, (5, 5, 5), spec, seed=2)
        state.xc[0][0] = state.xc[0][0] + 10.0  # violate the constraint
        substituted = objective(state, y, meas, spec)
        raw = objective(state, y, meas)
        assert substituted != raw
        state.xc[0][0] = meas[0].matrices()[0] @ state.c[0]
        assert objective(state, y, meas, spec) == pytest.approx(substituted, rel=1e-12)


class TestFit:
    def test_noiseless_semialg_init(self):
        model, meas, y = reference_instance(79)
        out = semialg_decompose(
            y, meas, model.rank, model.l_ranks, Witness(1, (0, 1, 2)),
            CpdOptions(rank=1, max_iters=1500, tol=1e-12, restarts=15, seed=79),
            distinct_cpd=True,
        )
        spec = CouplingSpec.full(3)
        init = state_from_semialg(out, y, meas, model.l_ranks, spec)
        fitted = coupled_als_fit(y, meas, model.rank, model.l_ranks, spec, init,
                                 max_iters=1000, tol=1e-12)
        got = cp_tensor(*fitted.c)
        assert nrmse(got, model.common_tensor()) <= 1e-4

    def test_no_distinct_reduces_to_coupled_cpd(self):
        model, meas, y = reference_instance(83, l_ranks=(0, 0, 0))
        spec = CouplingSpec.full(3)
        best, index, finals = fit_multistart(
            y, meas, model.rank, (0, 0, 0), spec,
            [random_state(y, meas, model.rank, (0, 0, 0), spec, seed=[83, s])
             for s in range(8)],
            max_iters=1000, tol=1e-12,
        )
        assert nrmse(cp_tensor(*best.c), model.common_tensor()) <= 1e-6
        assert finals[index] == min(finals)

    def test_objective_nonincreasing_per_block(self):
        spec = CouplingSpec.full(3)
        for seed in range(5):
            model, meas, y = reference_instance([101, seed])
            noisy = add_noise(y, 30.0, [102, seed])
            init = random_state(noisy, meas, 5, (5, 5, 5), spec, seed=[103, seed])
            fitted = coupled_als_fit(noisy, meas, 5, (5, 5, 5), spec, init,
                                     max_iters=40, tol=1e-15, check_monotone=True)
            blocks = np.array(fitted.block_trace)
            assert blocks.size == 7 * fitted.n_iters
            drops = np.diff(np.concatenate([[fitted.objective_trace[0]], blocks]))
            assert np.all(drops <= 1e-9 * np.maximum(1.0, blocks))

    def test_constraint_exact_after_fit(self):
        model, meas, y = reference_instance(107)
        noisy = add_noise(y, 30.0, 108)
        spec = CouplingSpec(({0, 1, 2}, {0, 1}, {1, 2}))
        init = random_state(noisy, meas, 5, (5, 5, 5), spec, seed=109)
        fitted = coupled_als_fit(noisy, meas, 5, (5, 5, 5), spec, init, max_iters=25)
        for j in range(3):
            for k in spec.gamma[j]:
                want = meas[k].matrices()[j] @ fitted.c[j]
                assert np.array_equal(fitted.xc[k][j], want)

    def test_stationarity_matches_finite_differences(self):
        spec = CouplingSpec.full(3)
        for seed in range(5):
            model, meas, y = reference_instance([113, seed])
            state = random_state(y, meas, 5, (5, 5, 5), spec, seed=[114, seed])

            grams = []
            rhs = np.zeros((5, meas[0].in_dims[0]))
            for k in range(3):
                xc = state.xc[k]
                ytil = unfold(y[k], 1) - khatri_rao(state.xd[k][2], state.xd[k][1]) @ state.xd[k][0].T
                kr = khatri_rao(xc[2], xc[1])
                p = meas[k].matrices()[0]
                grams.append(((xc[1].T @ xc[1]) * (xc[2].T @ xc[2]), p.T @ p))
                rhs += kr.T @ ytil @ p
            c1t = state.c[0].T
            analytic = 2.0 * sum(a @ c1t @ b for a, b in grams) - 2.0 * rhs
            analytic = analytic.T

            def f(c1):
                probe = state.copy()
                probe.c[0] = c1
                return objective(probe, y, meas, spec)

            fd = np.zeros_like(state.c[0])
            for i in range(fd.shape[0]):
                for r in range(fd.shape[1]):
                    h = 1e-6 * max(1.0, abs(state.c[0][i, r]))
                    up = state.c[0].copy()
                    up[i, r] += h
                    down = state.c[0].copy()
                    down[i, r] -= h
                    fd[i, r] = (f(up) - f(down)) / (2 * h)
            assert np.linalg.norm(fd - analytic) <= 1e-5 * np.linalg.norm(analytic)

    def test_seed_determinism(self):
        model, meas, y = reference_instance(127)
        noisy = add_noise(y, 30.0, 128)
        spec = CouplingSpec.full(3)
        runs = []
        for _ in range(2):
            init = random_state(noisy, meas, 5, (5, 5, 5), spec, seed=129)
            fitted = coupled_als_fit(noisy, meas, 5, (5, 5, 5), spec, init, max_iters=30)
            runs.append(fitted)
        assert runs[0].objective_trace == runs[1].objective_trace
        for j in range(3):
            assert np.array_equal(runs[0].c[j], runs[1].c[j])

    def test_uncoupled_mode_leaves_factor_untouched(self):
        model, meas, y = reference_instance(131)
        spec = CouplingSpec(({0, 1, 2}, {0, 1, 2}, frozenset()))
        init = random_state(y, meas, 5, (5, 5, 5), spec, seed=132)
        fitted = coupled_als_fit(y, meas, 5, (5, 5, 5), spec, init, max_iters=5)
        assert np.array_equal(fitted.c[2], init.c[2])
        assert not np.array_equal(fitted.c[0], init.c[0])


class TestValidation:
    def test_coupling_must_cover_every_dataset(self):
        spec = CouplingSpec(({0}, {0}, {0}))
        with pytest.raises(ValueError, match="not coupled"):
            spec.validate(2)
        CouplingSpec.full(2).validate(2)

    def test_coupling_index_range(self):
        with pytest.raises(ValueError, match="out of range"):
            CouplingSpec(({0, 5}, {0}, {0})).validate(2)

    def test_state_shape_mismatch(self):
        model, meas, y = reference_instance(137)
        spec = CouplingSpec.full(3)
        init = random_state(y, meas, 5, (5, 5, 5), spec, seed=138)
        init.c[0] = init.c[0][:, :4]
        with pytest.raises(ValueError, match="common factor"):
            coupled_als_fit(y, meas, 5, (5, 5, 5), spec, init, max_iters=2)

    def test_semialg_state_needs_distinct_factors(self):
        model, meas, y = reference_instance(139)
        rng = np.random.Generator(np.random.Philox(key=139))
        pre = {}
        for k in range(3):
            mats = []
            for j, p in enumerate(meas[k].matrices()):
                mats.append(np.hstack([p @ model.common.matrices()[j],
                                       model.distinct[k][j]]))
            from perstd.tensor_core import CpdFactors
            pre[k] = CpdFactors(*mats)
        out = semialg_decompose(
            y, meas, 5, (5, 5, 5), Witness(1, (0, 1, 2)),
            CpdOptions(rank=1), precomputed=pre,
        )
        with pytest.raises(ValueError, match="distinct_cpd"):
            state_from_semialg(out, y, meas, (5, 5, 5), CouplingSpec.full(3))


def test_fit_multistart_requires_inits():
    model, meas, y = reference_instance(149)
    with pytest.raises(ValueError, match="initial states"):
        fit_multistart(y, meas, 5, (5, 5, 5), CouplingSpec.full(3), [])
