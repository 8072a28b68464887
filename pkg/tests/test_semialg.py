"""Tests for the semi-algebraic common/distinct recovery pipeline."""

import numpy as np
import pytest
from conftest import reference_instance

from perstd.cpd import CpdOptions
from perstd.model import CoupledModel, MeasurementModel, clean_datasets, identity_measurement
from perstd.semialg import SemiAlgResult, hybrid_regression_mode3, semialg_decompose
from perstd.tensor_core import CpdFactors, cp_reconstruct, cp_tensor, khatri_rao, unfold
from perstd.uniqueness import Witness


def stacked_cpd(model, meas, k, rng):
    """Exact CPD of dataset k from the ground truth, with the column
    order and scalings randomly disguised (mode scales multiply to 1)."""
    mats = []
    for j, p in enumerate(meas[k].matrices()):
        block = [p @ model.common.matrices()[j]]
        if model.l_ranks[k] > 0:
            block.append(model.distinct[k][j])
        mats.append(np.hstack(block))
    width = mats[0].shape[1]
    perm = rng.permutation(width)
    s1 = rng.uniform(0.5, 2.0, width)
    s2 = rng.uniform(0.5, 2.0, width)
    return CpdFactors(
        mats[0][:, perm] * s1,
        mats[1][:, perm] * s2,
        mats[2][:, perm] / (s1 * s2),
    )


def relerr(t, ref):
    return np.linalg.norm(t - ref) / np.linalg.norm(ref)


class TestExactPipeline:
    """With exact decompositions handed in, the matching, column
    selection, and scale correction must reproduce the common tensor to
    round-off."""

    def test_reference_shape_recovery(self):
        hits = 0
        for trial in range(100):
            rng = np.random.Generator(np.random.Philox(key=[9000, trial]))
            model, meas, y = reference_instance([9000, trial])
            pre = {k: stacked_cpd(model, meas, k, rng) for k in range(3)}
            out = semialg_decompose(
                y, meas, model.rank, model.l_ranks, Witness(1, (0, 1, 2)),
                CpdOptions(rank=1), precomputed=pre,
            )
            if relerr(out.common.reconstruct(), model.common_tensor()) <= 1e-8:
                hits += 1
        assert hits == 100

    def test_distinct_is_exact_complement(self):
        model, meas, y = reference_instance(41)
        rng = np.random.Generator(np.random.Philox(key=41))
        pre = {k: stacked_cpd(model, meas, k, rng) for k in range(3)}
        out = semialg_decompose(
            y, meas, model.rank, model.l_ranks, Witness(1, (0, 1, 2)),
            CpdOptions(rank=1), precomputed=pre,
        )
        for k in range(3):
            p1, p2, p3 = meas[k].matrices()
            degraded = cp_tensor(p1 @ out.common.a, p2 @ out.common.b, p3 @ out.common.c)
            assert np.allclose(out.distinct[k] + degraded, y[k], atol=1e-10)
            assert relerr(out.distinct[k], model.distinct_tensor(k)) <= 1e-8

    def test_match_scores_near_perfect(self):
        model, meas, y = reference_instance(43)
        rng = np.random.Generator(np.random.Philox(key=43))
        pre = {k: stacked_cpd(model, meas, k, rng) for k in range(3)}
        out = semialg_decompose(
            y, meas, model.rank, model.l_ranks, Witness(1, (0, 1, 2)),
            CpdOptions(rank=1), precomputed=pre,
        )
        # witness modes 1 and 3 are matched across datasets; mode 2 reuses
        # the anchor's own columns, so no score is recorded for it
        assert set(out.match_scores) == {1, 3}
        for score in out.match_scores.values():
            assert score >= model.rank - 1e-6

    def test_permutation_and_scaling_invariance(self):
        model, meas, y = reference_instance(47)
        rng = np.random.Generator(np.random.Philox(key=47))
        pre = {k: stacked_cpd(model, meas, k, rng) for k in range(3)}
        witness = Witness(1, (0, 1, 2))
        base = semialg_decompose(
            y, meas, model.rank, model.l_ranks, witness,
            CpdOptions(rank=1), precomputed=pre,
        )
        f = pre[1]
        perm = rng.permutation(f.rank)
        s1 = rng.uniform(0.5, 2.0, f.rank)
        s2 = rng.uniform(0.5, 2.0, f.rank)
        pre2 = dict(pre)
        pre2[1] = CpdFactors(
            f.a[:, perm] * s1, f.b[:, perm] * s2, f.c[:, perm] / (s1 * s2)
        )
        again = semialg_decompose(
            y, meas, model.rank, model.l_ranks, witness,
            CpdOptions(rank=1), precomputed=pre2,
        )
        assert relerr(again.common.reconstruct(), base.common.reconstruct()) <= 1e-8


class TestEndToEnd:
    def test_noiseless_reference_recovery(self):
        model, meas, y = reference_instance(7)
        out = semialg_decompose(
            y, meas, model.rank, model.l_ranks, Witness(1, (0, 1, 2)),
            CpdOptions(rank=1, max_iters=2500, tol=1e-12, restarts=20, seed=7),
        )
        assert relerr(out.common.reconstruct(), model.common_tensor()) <= 1e-3

    def test_two_datasets_no_distinct(self):
        rng = np.random.Generator(np.random.Philox(key=11))
        c = CpdFactors(*(rng.standard_normal((m, 2)) for m in (4, 5, 6)))
        model = CoupledModel(common=c, distinct=(
            tuple(np.zeros((m, 0)) for m in (4, 5, 6)),
            tuple(np.zeros((m, 0)) for m in (4, 5, 6)),
        ))
        meas = (identity_measurement((4, 5, 6)), identity_measurement((4, 5, 6)))
        y = clean_datasets(model, meas)
        out = semialg_decompose(
            y, meas, 2, (0, 0), Witness(0, (1, 1, 1)),
            CpdOptions(rank=1, restarts=8, seed=3),
        )
        assert relerr(out.common.reconstruct(), model.common_tensor()) <= 1e-6
        for resid in out.distinct:
            assert np.linalg.norm(resid) <= 1e-6 * np.linalg.norm(y[0])

    def test_determinism(self):
        model, meas, y = reference_instance(13)
        opts = CpdOptions(rank=1, max_iters=300, restarts=3, seed=5)
        w = Witness(1, (0, 1, 2))
        a = semialg_decompose(y, meas, model.rank, model.l_ranks, w, opts)
        b = semialg_decompose(y, meas, model.rank, model.l_ranks, w, opts)
        assert np.array_equal(a.common.a, b.common.a)
        assert np.array_equal(a.common.b, b.common.b)
        assert np.array_equal(a.common.c, b.common.c)

    def test_distinct_cpd_option(self):
        model, meas, y = reference_instance(
            17, common=(4, 5, 4), rank=2, l_ranks=(2, 0),
            dataset=((6, 6, 6), (6, 6, 6)),
        )
        rng = np.random.Generator(np.random.Philox(key=17))
        pre = {k: stacked_cpd(model, meas, k, rng) for k in range(2)}
        out = semialg_decompose(
            y, meas, 2, (2, 0), Witness(0, (1, 1, 1)),
            CpdOptions(rank=1, restarts=6, seed=2),
            distinct_cpd=True, precomputed=pre,
        )
        assert out.distinct_factors[1] is None
        fitted = out.distinct_factors[0]
        assert fitted.rank == 2
        assert relerr(cp_reconstruct(fitted), out.distinct[0]) <= 1e-6


class TestValidation:
    def test_witness_must_cross_datasets(self):
        model, meas, y = reference_instance(19)
        with pytest.raises(ValueError, match="xi"):
            semialg_decompose(
                y, meas, model.rank, model.l_ranks, Witness(1, (1, 1, 1)),
                CpdOptions(rank=1),
            )

    def test_rejects_non_left_invertible_operator(self):
        model, meas, y = reference_instance(23)
        # dataset 2 has a wide mode-1 operator (5 x 7), so using it as the
        # mode-1 witness is invalid
        with pytest.raises(ValueError, match="left-invertible"):
            semialg_decompose(
                y, meas, model.rank, model.l_ranks, Witness(1, (2, 1, 2)),
                CpdOptions(rank=1),
            )

    def test_length_mismatch(self):
        model, meas, y = reference_instance(29)
        with pytest.raises(ValueError, match="measurement"):
            semialg_decompose(
                y, meas[:2], model.rank, model.l_ranks, Witness(1, (0, 1, 2)),
                CpdOptions(rank=1),
            )
        with pytest.raises(ValueError, match="distinct"):
            semialg_decompose(
                y, meas, model.rank, (5, 5), Witness(1, (0, 1, 2)),
                CpdOptions(rank=1),
            )


class TestHybridRegression:
    def test_exact_recovery(self):
        rng = np.random.Generator(np.random.Philox(key=31))
        c1 = rng.standard_normal((6, 3))
        c2 = rng.standard_normal((7, 3))
        c3 = rng.standard_normal((5, 3))
        meas1 = MeasurementModel(
            rng.standard_normal((8, 6)), rng.standard_normal((9, 7)), np.eye(5)
        )
        y1 = cp_tensor(meas1.p1 @ c1, meas1.p2 @ c2, c3)
        got = hybrid_regression_mode3(y1, meas1, c1, c2)
        assert np.allclose(got, c3, atol=1e-9)

    def test_matches_least_squares_oracle(self):
        rng = np.random.Generator(np.random.Philox(key=37))
        c1 = rng.standard_normal((4, 2))
        c2 = rng.standard_normal((5, 2))
        meas1 = MeasurementModel(
            rng.standard_normal((6, 4)), rng.standard_normal((7, 5)), np.eye(3)
        )
        y1 = rng.standard_normal((6, 7, 3))
        got = hybrid_regression_mode3(y1, meas1, c1, c2)
        reg = khatri_rao(meas1.p2 @ c2, meas1.p1 @ c1)
        want = np.linalg.lstsq(reg, unfold(y1, 3), rcond=None)[0].T
        assert np.allclose(got, want, atol=1e-10)

    def test_rank_deficient_regressor_warns(self):
        rng = np.random.Generator(np.random.Philox(key=39))
        c1 = rng.standard_normal((4, 1))
        c1 = np.hstack([c1, c1])  # component duplicated in both modes
        c2 = rng.standard_normal((5, 1))
        c2 = np.hstack([c2, c2])
        meas1 = MeasurementModel(np.eye(4), np.eye(5), np.eye(3))
        y1 = rng.standard_normal((4, 5, 3))
        with pytest.warns(UserWarning, match="rank-deficient"):
            hybrid_regression_mode3(y1, meas1, c1, c2)


def test_scale_correction_flags_dead_column():
    from perstd.semialg import _scale_to_reference

    reference = np.array([[1.0, 2.0], [3.0, 4.0]])
    candidate = np.array([[2.0, 0.0], [6.0, 0.0]])
    with pytest.warns(UserWarning, match="degenerate"):
        lam = _scale_to_reference(reference, candidate)
    assert lam[0] == pytest.approx(0.5)
    assert lam[1] == 0.0


def test_result_reports_used_decompositions():
    model, meas, y = reference_instance(53)
    rng = np.random.Generator(np.random.Philox(key=53))
    pre = {k: stacked_cpd(model, meas, k, rng) for k in range(3)}
    out = semialg_decompose(
        y, meas, model.rank, model.l_ranks, Witness(1, (0, 1, 2)),
        CpdOptions(rank=1), precomputed=pre,
    )
    assert isinstance(out, SemiAlgResult)
    assert set(out.cpd_factors) == {0, 1, 2}
    for k in range(3):
        assert out.cpd_factors[k] is pre[k]
    assert set(out.scalings) == {1, 2, 3}
