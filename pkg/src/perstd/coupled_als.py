"""Coupled alternating least squares for common plus distinct recovery.

Minimizes sum_k ||Y_k - [[Xc_k1, Xc_k2, Xc_k3]] - [[Xd_k1, Xd_k2, Xd_k3]]||_F^2
subject to Xc_kj = P_kj C_j for the datasets coupled in mode j.  Each
sweep solves, in order: C_1, then the mode-1 coupled factors, C_2,
mode-2 factors, C_3, mode-3 factors, and finally one alternating pass
over each dataset's distinct factors against the common-part residual.
Every block is an exact least-squares solve, so the objective never
increases within a sweep.

The common-factor update is a generalized Sylvester equation in C_j^T:
sum_{k in Gamma_j} (J_kj^T J_kj) C_j^T (P_kj^T P_kj) = J_kj^T Ytil_k^(j) P_kj,
with J_kj the Khatri-Rao product of the other two coupled factors and
Ytil_k the data minus the distinct part.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import DEFAULT_TOL, SylvesterSystem, pinv, solve_generalized_sylvester
from .tensor_core import cp_tensor, khatri_rao, unfold

# relative-objective floor treated as an exact fit (residual at the
# square root of this level is pure round-off)
EXACT_OBJECTIVE_REL = 1e-26

# Khatri-Rao factor order reproducing unfold(t, j): mode j's unfolding
# is kr(X_{hi}, X_{lo}) @ X_j^T with (lo, hi) the other two modes
_OTHERS = ((1, 2), (0, 2), (0, 1))


@dataclass(frozen=True)
class CouplingSpec:
    """Which datasets share the common factor in each mode.

    ``gamma[j]`` holds the dataset indices whose mode-(j+1) factor is
    constrained to P_kj C_j.  Every dataset must appear in at least one
    mode for its measurement to constrain the common tensor.
    """

    gamma: tuple

    def __post_init__(self):
        object.__setattr__(self, "gamma", tuple(frozenset(g) for g in self.gamma))
        if len(self.gamma) != 3:
            raise ValueError(f"need 3 coupling sets, got {len(self.gamma)}")

    @classmethod
    def full(cls, n_datasets):
        return cls(tuple(frozenset(range(n_datasets)) for _ in range(3)))

    def validate(self, n_datasets):
        seen = set()
        for g in self.gamma:
            for k in g:
                if not 0 <= k < n_datasets:
                    raise ValueError(f"dataset index {k} out of range")
            seen |= g
        if seen != set(range(n_datasets)):
            missing = sorted(set(range(n_datasets)) - seen)
            raise ValueError(f"datasets {missing} are not coupled in any mode")


@dataclass
class AlsState:
    """Iterate of the coupled solver.

    ``c`` holds the three common factors; ``xc[k][j]`` / ``xd[k][j]``
    the per-dataset coupled and distinct mode factors (width L_k = 0
    allowed); ``objective_trace`` the objective before the first sweep
    and after each one.  ``block_trace`` is filled only when the solver
    runs with ``check_monotone`` and then holds the objective after
    every individual block update.
    """

    c: list
    xc: list
    xd: list
    objective_trace: list = field(default_factory=list)
    block_trace: list = field(default_factory=list)
    converged: bool = False
    n_iters: int = 0

    def copy(self):
        return AlsState(
            c=[m.copy() for m in self.c],
            xc=[[m.copy() for m in row] for row in self.xc],
            xd=[[m.copy() for m in row] for row in self.xd],
            objective_trace=list(self.objective_trace),
            block_trace=list(self.block_trace),
            converged=self.converged,
            n_iters=self.n_iters,
        )


def _check_state(state, y, meas, rank, l_ranks):
    if len(state.xc) != len(y) or len(state.xd) != len(y):
        raise ValueError("state does not cover every dataset")
    for j in range(3):
        m = meas[0].in_dims[j]
        if state.c[j].shape != (m, rank):
            raise ValueError(
                f"common factor {j + 1} has shape {state.c[j].shape}, "
                f"expected {(m, rank)}"
            )
    for k, t in enumerate(y):
        for j in range(3):
            if state.xc[k][j].shape != (t.shape[j], rank):
                raise ValueError(f"coupled factor ({k}, {j + 1}) has wrong shape")
            if state.xd[k][j].shape != (t.shape[j], l_ranks[k]):
                raise ValueError(f"distinct factor ({k}, {j + 1}) has wrong shape")


def objective(state, y, meas, spec=None):
    """Sum of squared residuals of the coupled model.

    With ``spec`` given, the coupled factors of constrained datasets are
    replaced by P_kj C_j before evaluating (the constraint is part of
    the problem, not of the stored state)."""
    total = 0.0
    for k, t in enumerate(y):
        xc = list(state.xc[k])
        if spec is not None:
            for j in range(3):
                if k in spec.gamma[j]:
                    xc[j] = meas[k].matrices()[j] @ state.c[j]
        recon = cp_tensor(*xc) + cp_tensor(*state.xd[k])
        total += float(np.linalg.norm(t - recon) ** 2)
    return total


def random_state(y, meas, rank, l_ranks, spec, seed):
    """Seeded standard-normal initialization.

    Distinct factors are sampled away from zero because an all-zero
    distinct block is a fixed point of its own update.  Signed entries
    matter: factors confined to one orthant tend to stall on shallow
    plateaus the solver never leaves."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    c = [rng.standard_normal((m, rank)) for m in meas[0].in_dims]
    xc = []
    xd = []
    for k, t in enumerate(y):
        row = []
        for j in range(3):
            if k in spec.gamma[j]:
                row.append(meas[k].matrices()[j] @ c[j])
            else:
                row.append(rng.standard_normal((t.shape[j], rank)))
        xc.append(row)
        xd.append([rng.standard_normal((t.shape[j], l_ranks[k])) for j in range(3)])
    return AlsState(c=c, xc=xc, xd=xd)


def state_from_semialg(result, y, meas, l_ranks, spec):
    """Initial state from a semi-algebraic result.

    Needs the distinct factors, so the pipeline must have run with
    ``distinct_cpd=True`` whenever any L_k > 0."""
    rank = result.common.rank
    c = [m.copy() for m in result.common.matrices()]
    xc = []
    xd = []
    for k, t in enumerate(y):
        xc.append([meas[k].matrices()[j] @ c[j] for j in range(3)])
        if l_ranks[k] == 0:
            xd.append([np.zeros((t.shape[j], 0)) for j in range(3)])
            continue
        if result.distinct_factors is None or result.distinct_factors[k] is None:
            raise ValueError(
                f"dataset {k} has distinct rank {l_ranks[k]} but the "
                "result carries no distinct factors; rerun with distinct_cpd=True"
            )
        xd.append([m.copy() for m in result.distinct_factors[k].matrices()])
    return AlsState(c=c, xc=xc, xd=xd)


def coupled_als_fit(y, meas, rank, l_ranks, spec, init, max_iters=1000,
                    tol=1e-9, check_monotone=False):
    """Run the coupled solver from ``init`` until the relative objective
    change drops below ``tol`` or ``max_iters`` sweeps elapse.

    Returns a new state; ``init`` is not modified.  Singular common-
    factor systems fall back to a damped solve with a warning."""
    y = [np.asarray(t, dtype=float) for t in y]
    if len(meas) != len(y):
        raise ValueError(f"{len(meas)} measurement models for {len(y)} datasets")
    l_ranks = tuple(int(v) for v in l_ranks)
    spec.validate(len(y))
    state = init.copy()
    _check_state(state, y, meas, rank, l_ranks)

    y_unf = [[unfold(t, j + 1) for j in range(3)] for t in y]
    p_mats = [meas[k].matrices() for k in range(len(y))]
    ptp = [[p.T @ p for p in row] for row in p_mats]
    total_norm2 = sum(float(np.linalg.norm(t) ** 2) for t in y)
    floor = EXACT_OBJECTIVE_REL * total_norm2

    def record_block():
        if check_monotone:
            state.block_trace.append(objective(state, y, meas, spec))

    obj = objective(state, y, meas, spec)
    state.objective_trace.append(obj)
    state.converged = obj <= floor

    for sweep in range(1, max_iters + 1):
        if state.converged:
            break
        for j in range(3):
            lo, hi = _OTHERS[j]
            # data minus the distinct part, unfolded in mode j
            ytil = []
            for k in range(len(y)):
                xd = state.xd[k]
                ytil.append(y_unf[k][j] - khatri_rao(xd[hi], xd[lo]) @ xd[j].T)

            terms = []
            rhs = None
            for k in sorted(spec.gamma[j]):
                xc = state.xc[k]
                gram = (xc[lo].T @ xc[lo]) * (xc[hi].T @ xc[hi])
                terms.append((gram, ptp[k][j]))
                kr = khatri_rao(xc[hi], xc[lo])
                part = kr.T @ ytil[k] @ p_mats[k][j]
                rhs = part if rhs is None else rhs + part
            if terms:
                # with nothing coupled in this mode the objective does
                # not depend on C_j, so it stays at its current value
                state.c[j] = solve_generalized_sylvester(
                    SylvesterSystem(tuple(terms), rhs)
                ).T
            record_block()

            for k in range(len(y)):
                if k in spec.gamma[j]:
                    state.xc[k][j] = p_mats[k][j] @ state.c[j]
                else:
                    xc = state.xc[k]
                    kr = khatri_rao(xc[hi], xc[lo])
                    state.xc[k][j] = (pinv(kr) @ ytil[k]).T
            record_block()

        # distinct-factor sweep; the mode-3 pass already holds the full
        # residual, so the objective falls out for free
        prev = obj
        obj = 0.0
        for k in range(len(y)):
            xc = state.xc[k]
            if l_ranks[k] == 0:
                r3 = y_unf[k][2] - khatri_rao(xc[1], xc[0]) @ xc[2].T
                obj += float(np.linalg.norm(r3) ** 2)
                continue
            xd = state.xd[k]
            for j in range(3):
                lo, hi = _OTHERS[j]
                ybar = y_unf[k][j] - khatri_rao(xc[hi], xc[lo]) @ xc[j].T
                kr = khatri_rao(xd[hi], xd[lo])
                xd[j] = (pinv(kr) @ ybar).T
                if j == 2:
                    obj += float(np.linalg.norm(ybar - kr @ xd[2].T) ** 2)
        record_block()

        state.objective_trace.append(obj)
        state.n_iters = sweep
        if obj <= floor or abs(prev - obj) <= tol * max(prev, 1e-300):
            state.converged = True
    return state


def fit_multistart(y, meas, rank, l_ranks, spec, inits, max_iters=1000,
                   tol=1e-9, check_monotone=False):
    """Fit from every state in ``inits`` and keep the lowest final
    objective (ties go to the earliest).  Returns (best state, index,
    final objectives)."""
    best = None
    finals = []
    for s, init in enumerate(inits):
        fitted = coupled_als_fit(
            y, meas, rank, l_ranks, spec, init,
            max_iters=max_iters, tol=tol, check_monotone=check_monotone,
        )
        final = fitted.objective_trace[-1]
        finals.append(final)
        if best is None or final < best[1]:
            best = (fitted, final, s)
    if best is None:
        raise ValueError("no initial states supplied")
    return best[0], best[2], finals


def _batch_kr(a, b):
    """Khatri-Rao product over the leading stack axis."""
    n_batch, n1, r = a.shape
    return (a[:, :, None, :] * b[:, None, :, :]).reshape(n_batch, n1 * b.shape[1], r)


def _batch_sylvester(terms, rhs):
    """Stacked generalized Sylvester solve matching the scalar path.

    ``terms`` pairs a stacked (B, r, r) Gram with a fixed (m, m) operator
    Gram; ``rhs`` is (B, r, m).  Slices whose dense solve fails are
    retried one by one through the damped scalar fallback.
    """
    n_batch, r, m = rhs.shape
    astack = np.stack([a for a, _ in terms])
    bstack = np.stack([b for _, b in terms])
    blocks = np.empty((n_batch, m, r, m, r))
    # fused kron accumulation: G[(i,k),(j,l)] = sum_t b_t[j,i] a_t[k,l]
    np.einsum("tji,tbkl->bikjl", bstack, astack, out=blocks)
    g = blocks.reshape(n_batch, m * r, m * r)
    f = rhs.transpose(0, 2, 1).reshape(n_batch, m * r)
    try:
        x = np.linalg.solve(g, f[..., None])[..., 0]
    except np.linalg.LinAlgError:
        x = np.full((n_batch, m * r), np.nan)
    resid = np.linalg.norm(np.einsum("bij,bj->bi", g, x) - f, axis=1)
    scale = (
        np.linalg.norm(g, axis=(1, 2)) * np.linalg.norm(x, axis=1)
        + np.linalg.norm(f, axis=1)
    )
    bad = ~np.isfinite(x).all(axis=1) | (resid > 1e-6 * scale)
    for i in np.flatnonzero(bad):
        system = SylvesterSystem(
            tuple((a[i], b) for a, b in terms), rhs[i]
        )
        x[i] = solve_generalized_sylvester(system).reshape(-1, order="F")
    # vec is column-major, so reshaping by (m, r) lands as X^T directly
    return x.reshape(n_batch, m, r)


def fit_multistart_batched(y, meas, rank, l_ranks, spec, inits,
                           max_iters=1000, tol=1e-9):
    """Multi-restart fit with all restarts advanced in lockstep.

    Runs the same block updates as :func:`coupled_als_fit` on stacked
    factors, so one numpy call serves every live restart; a restart is
    frozen the moment it converges.  Results match the sequential path
    up to floating-point reduction order.  Returns (best state, index,
    final objectives) like :func:`fit_multistart`; per-block
    instrumentation is only available on the sequential path.
    """
    if not inits:
        raise ValueError("no initial states supplied")
    y = [np.asarray(t, dtype=float) for t in y]
    if len(meas) != len(y):
        raise ValueError(f"{len(meas)} measurement models for {len(y)} datasets")
    l_ranks = tuple(int(v) for v in l_ranks)
    spec.validate(len(y))
    for init in inits:
        _check_state(init, y, meas, rank, l_ranks)

    n_batch = len(inits)
    c = [np.stack([st.c[j] for st in inits]) for j in range(3)]
    xc = [[np.stack([st.xc[k][j] for st in inits]) for j in range(3)]
          for k in range(len(y))]
    xd = [[np.stack([st.xd[k][j] for st in inits]) for j in range(3)]
          for k in range(len(y))]

    y_unf = [[unfold(t, j + 1) for j in range(3)] for t in y]
    p_mats = [meas[k].matrices() for k in range(len(y))]
    ptp = [[p.T @ p for p in row] for row in p_mats]
    total_norm2 = sum(float(np.linalg.norm(t) ** 2) for t in y)
    floor = EXACT_OBJECTIVE_REL * total_norm2

    def slice_objective():
        total = np.zeros(n_batch)
        for k in range(len(y)):
            eff = [
                p_mats[k][j][None] @ c[j] if k in spec.gamma[j] else xc[k][j]
                for j in range(3)
            ]
            recon = np.einsum("bir,bjr,bkr->bijk", eff[0], eff[1], eff[2])
            if l_ranks[k] > 0:
                recon += np.einsum(
                    "bir,bjr,bkr->bijk", xd[k][0], xd[k][1], xd[k][2]
                )
            total += np.linalg.norm(
                (y[k][None] - recon).reshape(n_batch, -1), axis=1
            ) ** 2
        return total

    obj = slice_objective()
    traces = [[float(v)] for v in obj]
    done = obj <= floor
    results = [None] * n_batch
    live = np.arange(n_batch)

    def freeze(local, sweep, converged):
        """Snapshot a live slice into its original restart's result."""
        orig = int(live[local])
        results[orig] = AlsState(
            c=[c[j][local].copy() for j in range(3)],
            xc=[[xc[k][j][local].copy() for j in range(3)] for k in range(len(y))],
            xd=[[xd[k][j][local].copy() for j in range(3)] for k in range(len(y))],
            objective_trace=traces[orig],
            converged=converged,
            n_iters=sweep,
        )

    for local in np.flatnonzero(done):
        freeze(local, 0, True)

    def compact(keep):
        nonlocal live, obj
        live = live[keep]
        obj = obj[keep]
        for j in range(3):
            c[j] = c[j][keep]
        for k in range(len(y)):
            for j in range(3):
                xc[k][j] = xc[k][j][keep]
                xd[k][j] = xd[k][j][keep]

    compact(~done)

    sweep = 0
    while live.size and sweep < max_iters:
        sweep += 1
        nb = live.size
        for j in range(3):
            lo, hi = _OTHERS[j]
            ytil = []
            for k in range(len(y)):
                ytil.append(
                    y_unf[k][j][None]
                    - _batch_kr(xd[k][hi], xd[k][lo]) @ xd[k][j].transpose(0, 2, 1)
                )
            terms = []
            rhs = None
            for k in sorted(spec.gamma[j]):
                gram = (
                    xc[k][lo].transpose(0, 2, 1) @ xc[k][lo]
                ) * (xc[k][hi].transpose(0, 2, 1) @ xc[k][hi])
                terms.append((gram, ptp[k][j]))
                kr = _batch_kr(xc[k][hi], xc[k][lo])
                part = kr.transpose(0, 2, 1) @ ytil[k] @ p_mats[k][j]
                rhs = part if rhs is None else rhs + part
            if terms:
                c[j] = _batch_sylvester(terms, rhs)
            for k in range(len(y)):
                if k in spec.gamma[j]:
                    xc[k][j] = p_mats[k][j][None] @ c[j]
                else:
                    kr = _batch_kr(xc[k][hi], xc[k][lo])
                    xc[k][j] = (np.linalg.pinv(kr, rcond=DEFAULT_TOL) @ ytil[k]).transpose(0, 2, 1)

        prev = obj
        obj = np.zeros(nb)
        for k in range(len(y)):
            if l_ranks[k] == 0:
                r3 = y_unf[k][2][None] - _batch_kr(xc[k][1], xc[k][0]) @ xc[k][2].transpose(0, 2, 1)
                obj += np.linalg.norm(r3.reshape(nb, -1), axis=1) ** 2
                continue
            for j in range(3):
                lo, hi = _OTHERS[j]
                ybar = (
                    y_unf[k][j][None]
                    - _batch_kr(xc[k][hi], xc[k][lo]) @ xc[k][j].transpose(0, 2, 1)
                )
                kr = _batch_kr(xd[k][hi], xd[k][lo])
                xd[k][j] = (np.linalg.pinv(kr, rcond=DEFAULT_TOL) @ ybar).transpose(0, 2, 1)
                if j == 2:
                    obj += np.linalg.norm(
                        (ybar - kr @ xd[k][2].transpose(0, 2, 1)).reshape(nb, -1),
                        axis=1,
                    ) ** 2

        for local in range(nb):
            traces[int(live[local])].append(float(obj[local]))
        crit = (obj <= floor) | (np.abs(prev - obj) <= tol * np.maximum(prev, 1e-300))
        done = crit.copy()
        if sweep == max_iters:
            done[:] = True
        for local in np.flatnonzero(done):
            freeze(local, sweep, bool(crit[local]))
        if done.any():
            compact(~done)

    # reached only when max_iters == 0 leaves slices unswept
    for local in range(live.size):
        freeze(local, sweep, False)

    finals = [st.objective_trace[-1] for st in results]
    best = int(np.argmin(finals))
    return results[best], best, finals
