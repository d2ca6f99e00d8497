"""Optimal mechanisms over explicit finite product priors, by LP.

The decision variables are, per support profile, a lottery over outcomes and
one payment per bidder. Feasibility means: lotteries sum to one, the
mechanism is IR at every profile, and either exact interim (BIC) truthfulness
or ex-post truthfulness up to a slack eta (DSIC mode) holds for deviations
within the support. The objective is expected revenue under the prior.

Interim constraint weights are assembled as exact rationals and converted to
floats once, so identical priors produce identical matrices; the HiGHS solve
is deterministic, making the whole oracle a deterministic function of its
input.

Two extension rules lift a support-domain solution to the full grid:

* ``extend_bic``: a bidder with any off-support coordinate is re-bid as the
  in-support type vector maximizing her interim expected utility (others
  drawn fresh from the prior), ties to the lexicographically smallest type.
* ``extend_dsic``: with exactly one off-support bidder, her best in-support
  reply against the realized others is played through a downward-closure
  witness that keeps her value and payment and zeroes everyone else; with
  two or more off-support bidders everything is zeroed.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from fractions import Fraction
from typing import Literal

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .errors import CapacityError, InvariantError, UsageError
from .grid import ProductPrior
from .mechanism import (
    MechanismTable,
    ProfileDomain,
    _axis_views,
    _bidder_weight_vectors,
    _rest_weights,
    audit_over_domain,
    revenue,
)
from .outcomes import (
    ClosureResult,
    OutcomeSpace,
    ValuationModel,
    grid_type_indices,
)

__all__ = ["OracleProblem", "LpSolution", "solve_optimal", "extend_bic", "extend_dsic"]

VARIABLE_BUDGET = 500_000
FEASIBILITY_TOL = 1e-8


@dataclass(frozen=True)
class OracleProblem:
    """A revenue-maximization instance over an explicit product prior."""

    prior: ProductPrior
    space: OutcomeSpace
    model: ValuationModel
    ic_mode: Literal["bic", "dsic"] = "bic"
    eta: float = 0.0

    def __post_init__(self) -> None:
        if self.ic_mode not in ("bic", "dsic"):
            raise UsageError(f"ic_mode must be 'bic' or 'dsic', got {self.ic_mode!r}")
        if self.eta < 0:
            raise UsageError(f"eta must be nonnegative, got {self.eta}")
        if (self.prior.n, self.prior.m) != (self.space.n, self.space.m):
            raise UsageError("prior and outcome space disagree on (n, m)")

    def domain(self) -> ProfileDomain:
        return ProfileDomain(spec=self.prior.spec, supports=self.prior.supports())

    def check_budget(self) -> None:
        lottery_vars = self.domain().num_profiles * self.space.num_outcomes
        if lottery_vars > VARIABLE_BUDGET:
            raise CapacityError(
                f"{lottery_vars} lottery variables exceed the {VARIABLE_BUDGET} budget"
            )


@dataclass
class LpSolution:
    mechanism: MechanismTable
    objective_value: float
    solver_status: str
    certificate: float  # dual objective value

    def __post_init__(self) -> None:
        gap = abs(self.objective_value - self.certificate)
        if gap > 1e-7 * (1.0 + abs(self.objective_value)):
            raise InvariantError(
                f"primal/dual gap {gap} too large: "
                f"{self.objective_value} vs {self.certificate}"
            )


def _profile_type_ranks(domain: ProfileDomain) -> np.ndarray:
    """(R, n) array: bidder i's type rank at each profile rank."""
    sizes = [domain.bidder_type_count(i) for i in range(domain.n)]
    strides = domain.bidder_strides()
    r = domain.num_profiles
    ranks = np.arange(r, dtype=np.int64)
    return np.stack(
        [(ranks // strides[i]) % sizes[i] for i in range(domain.n)], axis=1
    )


def _rest_bases(domain: ProfileDomain, k: int) -> np.ndarray:
    """Profile-rank contribution of every combination of other bidders'
    types, enumerated in the same order as the flattened rest axis."""
    strides = domain.bidder_strides()
    parts = [
        np.arange(domain.bidder_type_count(i), dtype=np.int64) * strides[i]
        for i in range(domain.n)
        if i != k
    ]
    if not parts:
        return np.zeros(1, dtype=np.int64)
    return functools.reduce(np.add.outer, parts).reshape(-1)


def solve_optimal(problem: OracleProblem, lp_dump: str | None = None) -> LpSolution:
    """Revenue-maximal IR + (exact-BIC | eta-DSIC) mechanism on the support."""
    problem.check_budget()
    domain = problem.domain()
    space = problem.space
    n, m = domain.n, domain.m
    r_profiles = domain.num_profiles
    k_out = space.num_outcomes
    n_x = r_profiles * k_out
    n_vars = n_x + r_profiles * n

    def xvar(r: int, o: int) -> int:
        return r * k_out + o

    def pvar(r: int, i: int) -> int:
        return n_x + r * n + i

    # Exact rational weights, converted to float exactly once.
    weights_frac = _bidder_weight_vectors_fraction(problem.prior, domain)
    weights = [np.array([float(w) for w in ws]) for ws in weights_frac]
    type_ranks = _profile_type_ranks(domain)
    profile_w = np.ones(r_profiles)
    for i in range(n):
        profile_w *= weights[i][type_ranks[:, i]]

    vals = [
        problem.model.values_for(
            space, i, domain.bidder_types(i) * domain.spec.epsilon
        )
        for i in range(n)
    ]

    c = np.zeros(n_vars)
    for i in range(n):
        c[n_x + np.arange(r_profiles) * n + i] = -profile_w  # maximize revenue

    eq_rows: list[int] = []
    eq_cols: list[int] = []
    eq_data: list[float] = []
    for r in range(r_profiles):
        eq_rows.extend([r] * k_out)
        eq_cols.extend(range(r * k_out, (r + 1) * k_out))
        eq_data.extend([1.0] * k_out)
    a_eq = sp.coo_matrix(
        (eq_data, (eq_rows, eq_cols)), shape=(r_profiles, n_vars)
    )
    b_eq = np.ones(r_profiles)

    ub_rows: list[int] = []
    ub_cols: list[int] = []
    ub_data: list[float] = []
    b_ub: list[float] = []
    row_id = 0

    def add_entry(row: int, col: int, coef: float) -> None:
        ub_rows.append(row)
        ub_cols.append(col)
        ub_data.append(coef)

    # IR: payment can never exceed the expected lottery value.
    for r in range(r_profiles):
        for i in range(n):
            v = vals[i][type_ranks[r, i]]
            for o in range(k_out):
                if v[o] != 0.0:
                    add_entry(row_id, xvar(r, o), -float(v[o]))
            add_entry(row_id, pvar(r, i), 1.0)
            b_ub.append(0.0)
            row_id += 1

    if problem.ic_mode == "bic":
        for i in range(n):
            w_rest_frac = _rest_weights_fraction(weights_frac, i)
            w_rest = np.array([float(w) for w in w_rest_frac])
            bases = _rest_bases(domain, i)
            stride = int(domain.bidder_strides()[i])
            t_i = domain.bidder_type_count(i)
            for t in range(t_i):
                v = vals[i][t]
                for t_rep in range(t_i):
                    if t_rep == t:
                        continue
                    # interim utility of reporting t_rep minus truthful, <= 0
                    for rest, wr in zip(bases, w_rest):
                        if wr == 0.0:
                            continue
                        r_dev = int(rest) + t_rep * stride
                        r_tru = int(rest) + t * stride
                        for o in range(k_out):
                            if v[o] != 0.0:
                                add_entry(row_id, xvar(r_dev, o), wr * float(v[o]))
                                add_entry(row_id, xvar(r_tru, o), -wr * float(v[o]))
                        add_entry(row_id, pvar(r_dev, i), -wr)
                        add_entry(row_id, pvar(r_tru, i), wr)
                    b_ub.append(0.0)
                    row_id += 1
    else:
        for i in range(n):
            stride = int(domain.bidder_strides()[i])
            t_i = domain.bidder_type_count(i)
            bases = _rest_bases(domain, i)
            for t in range(t_i):
                v = vals[i][t]
                for t_rep in range(t_i):
                    if t_rep == t:
                        continue
                    for rest in bases:
                        r_dev = int(rest) + t_rep * stride
                        r_tru = int(rest) + t * stride
                        for o in range(k_out):
                            if v[o] != 0.0:
                                add_entry(row_id, xvar(r_dev, o), float(v[o]))
                                add_entry(row_id, xvar(r_tru, o), -float(v[o]))
                        add_entry(row_id, pvar(r_dev, i), -1.0)
                        add_entry(row_id, pvar(r_tru, i), 1.0)
                        b_ub.append(problem.eta)
                        row_id += 1

    a_ub = sp.coo_matrix(
        (ub_data, (ub_rows, ub_cols)), shape=(row_id, n_vars)
    )
    bounds = [(0.0, None)] * n_x + [(None, None)] * (r_profiles * n)

    if lp_dump is not None:
        _dump_lp(lp_dump, c, a_ub.tocsr(), np.array(b_ub), a_eq.tocsr(), b_eq, n_x)

    res = linprog(
        c,
        A_ub=a_ub.tocsr(),
        b_ub=np.array(b_ub),
        A_eq=a_eq.tocsr(),
        b_eq=b_eq,
        bounds=bounds,
        method="highs",
    )
    if res.status == 2:
        raise InvariantError(
            "oracle LP reported infeasible, but the zero mechanism is always "
            "feasible; this is an internal solver fault"
        )
    if res.status != 0:
        raise InvariantError(f"LP solver failed with status {res.status}: {res.message}")

    x = np.asarray(res.x)
    probs = np.clip(x[:n_x].reshape(r_profiles, k_out), 0.0, None)
    sums = probs.sum(axis=1)
    if np.max(np.abs(sums - 1.0)) > 1e-6:
        raise InvariantError("solver returned lotteries far from stochastic")
    probs = probs / sums[:, None]
    payments = x[n_x:].reshape(r_profiles, n)
    mech = MechanismTable(
        domain=domain,
        space=space,
        probs=probs,
        payments=payments,
        meta={"ic_mode": problem.ic_mode, "eta": problem.eta},
    )

    objective = -float(res.fun)
    dual = float(res.eqlin.marginals @ b_eq + res.ineqlin.marginals @ np.array(b_ub))
    solution = LpSolution(
        mechanism=mech,
        objective_value=objective,
        solver_status="optimal",
        certificate=-dual,
    )
    _audit_solution(problem, solution)
    return solution


def _bidder_weight_vectors_fraction(
    prior: ProductPrior, domain: ProfileDomain
) -> list[list[Fraction]]:
    out = []
    for i in range(domain.n):
        types = domain.bidder_types(i)
        ws = []
        for t in types:
            w = Fraction(1)
            for j in range(domain.m):
                w *= prior.marginals[i][j].mass.get(int(t[j]), Fraction(0))
            ws.append(w)
        out.append(ws)
    return out


def _rest_weights_fraction(weights: list[list[Fraction]], k: int) -> list[Fraction]:
    rest = [w for i, w in enumerate(weights) if i != k]
    acc = [Fraction(1)]
    for ws in rest:
        acc = [a * w for a in acc for w in ws]
    return acc


def _audit_solution(problem: OracleProblem, solution: LpSolution) -> None:
    mech = solution.mechanism
    report = audit_over_domain(mech, problem.prior, problem.model)
    if report.ir_slack < -FEASIBILITY_TOL:
        raise InvariantError(f"oracle output violates IR: slack {report.ir_slack}")
    if problem.ic_mode == "bic" and report.bic_regret > FEASIBILITY_TOL:
        raise InvariantError(
            f"oracle output violates BIC: regret {report.bic_regret}"
        )
    if problem.ic_mode == "dsic" and report.dsic_regret > problem.eta + FEASIBILITY_TOL:
        raise InvariantError(
            f"oracle output violates {problem.eta}-DSIC: regret {report.dsic_regret}"
        )
    recomputed = revenue(mech, problem.prior)
    if abs(recomputed - solution.objective_value) > 1e-8 * (
        1.0 + abs(solution.objective_value)
    ):
        raise InvariantError(
            f"objective {solution.objective_value} != recomputed revenue {recomputed}"
        )


def _full_type_data(
    domain: ProfileDomain, space: OutcomeSpace, model: ValuationModel
):
    """Full-grid types per bidder plus on-support maps into domain types."""
    spec = domain.spec
    full_types = grid_type_indices(spec, domain.m)  # shared across bidders
    t_full = full_types.shape[0]
    on_mask = []
    to_support = []
    for i in range(domain.n):
        mask = np.ones(t_full, dtype=bool)
        rank = np.zeros(t_full, dtype=np.int64)
        mult = 1
        # mixed-radix rank over support positions, parameter 0 most significant
        for j in range(domain.m - 1, -1, -1):
            cell = domain.supports[i][j]
            lookup = -np.ones(spec.levels, dtype=np.int64)
            for pos, idx in enumerate(cell):
                lookup[idx] = pos
            pos_j = lookup[full_types[:, j]]
            mask &= pos_j >= 0
            rank += np.where(pos_j >= 0, pos_j, 0) * mult
            mult *= len(cell)
        rank[~mask] = -1
        on_mask.append(mask)
        to_support.append(rank)
    return full_types, on_mask, to_support


def extend_bic(
    mech: MechanismTable,
    prior: ProductPrior,
    model: ValuationModel,
) -> MechanismTable:
    """Algorithm-level best-response extension of a support mechanism."""
    domain = mech.domain
    spec = domain.spec
    space = mech.space
    full_types, on_mask, to_support = _full_type_data(domain, space, model)
    weights = _bidder_weight_vectors(mech, prior)

    replace = []
    for k in range(mech.n):
        probs_view, pay_view = _axis_views(mech, k)
        w_rest = _rest_weights(weights, k)
        cp = np.einsum("sro,r->so", probs_view, w_rest)  # (T_supp, K)
        cpay = pay_view @ w_rest
        val_full = model.values_for(space, k, full_types * spec.epsilon)
        utilities = val_full @ cp.T - cpay[None, :]  # (T_full, T_supp)
        best = np.argmax(utilities, axis=1)  # first max = lex smallest type
        rep = np.where(on_mask[k], to_support[k], best)
        replace.append(rep.astype(np.int64))

    strides = domain.bidder_strides()
    parts = [replace[i] * strides[i] for i in range(mech.n)]
    src = functools.reduce(np.add.outer, parts).reshape(-1)
    full_domain = ProfileDomain.full_grid(spec, mech.n, mech.m)
    return MechanismTable(
        domain=full_domain,
        space=space,
        probs=mech.probs[src],
        payments=mech.payments[src],
        meta={**mech.meta, "extension": "bic_best_response"},
    )


def bic_replacement_map(
    mech: MechanismTable, prior: ProductPrior, model: ValuationModel, k: int
) -> np.ndarray:
    """Support-type rank chosen for each full-grid type of bidder k."""
    domain = mech.domain
    full_types, on_mask, to_support = _full_type_data(domain, mech.space, model)
    weights = _bidder_weight_vectors(mech, prior)
    probs_view, pay_view = _axis_views(mech, k)
    w_rest = _rest_weights(weights, k)
    cp = np.einsum("sro,r->so", probs_view, w_rest)
    cpay = pay_view @ w_rest
    val_full = model.values_for(mech.space, k, full_types * domain.spec.epsilon)
    utilities = val_full @ cp.T - cpay[None, :]
    best = np.argmax(utilities, axis=1)
    return np.where(on_mask[k], to_support[k], best).astype(np.int64)


def extend_dsic(
    mech: MechanismTable,
    space: OutcomeSpace,
    model: ValuationModel,
    closure: ClosureResult,
) -> MechanismTable:
    """Algorithm-level zero-out extension of a support mechanism."""
    if not closure.closed or closure.witness is None:
        raise UsageError(
            "outcome space is not weakly downward closed (or the closure "
            "check was not run); verify downward closure first"
        )
    domain = mech.domain
    spec = domain.spec
    n, m = mech.n, mech.m
    full_types, on_mask, to_support = _full_type_data(domain, space, model)
    t_full = full_types.shape[0]
    k_out = space.num_outcomes

    full_domain = ProfileDomain.full_grid(spec, n, m)
    r_full = full_domain.num_profiles
    probs = np.zeros((r_full, k_out))
    payments = np.zeros((r_full, n))

    # bidder i's full-grid type at each full profile rank, and off counts
    digits = _profile_type_ranks(full_domain)  # (R_full, n)
    off = np.stack([~on_mask[i][digits[:, i]] for i in range(n)], axis=1)
    off_counts = off.sum(axis=1)
    supp_strides = domain.bidder_strides()

    # all bidders on-support: copy the corresponding support row
    on_all = off_counts == 0
    src = np.zeros(r_full, dtype=np.int64)
    for i in range(n):
        src += np.where(on_mask[i][digits[:, i]], to_support[i][digits[:, i]], 0) * supp_strides[i]
    probs[on_all] = mech.probs[src[on_all]]
    payments[on_all] = mech.payments[src[on_all]]

    # two or more off-support bidders: priceless zero outcome
    many_off = off_counts >= 2
    if np.any(many_off):
        if closure.zero_outcome is None:
            raise InvariantError(
                "closed space provided no all-zero outcome for the zero-out rule"
            )
        probs[many_off, closure.zero_outcome] = 1.0

    # Exactly one off-support bidder: best reply, played via the witness.
    # Her reply set includes walking away (zero outcome, zero payment) when
    # the space offers one; without it, a type below the whole support could
    # be forced to pay above her value, breaking the IR the oracle promises.
    for k in range(n):
        group = (off_counts == 1) & off[:, k]
        ranks = np.flatnonzero(group)
        if ranks.size == 0:
            continue
        probs_view, pay_view = _axis_views(mech, k)  # (T_supp, R_rest, K)
        val_full = model.values_for(space, k, full_types * spec.epsilon)
        # u[t_full, s, rest] over mechanism randomness only
        u = np.einsum("sro,to->tsr", probs_view, val_full) - pay_view[None, :, :]
        best = np.argmax(u, axis=1)  # (T_full, R_rest), lex-smallest ties

        rest_bases = _rest_bases(domain, k)
        rest_strides = _rest_strides(domain, k)
        rest_rank = np.zeros(ranks.size, dtype=np.int64)
        pos = 0
        for i in range(n):
            if i == k:
                continue
            rest_rank += to_support[i][digits[ranks, i]] * rest_strides[pos]
            pos += 1
        chosen = best[digits[ranks, k], rest_rank]
        src_rank = chosen * supp_strides[k] + rest_bases[rest_rank]

        wit = closure.witness[:, k]
        scatter = np.zeros((k_out, k_out))
        scatter[np.arange(k_out), wit] = 1.0
        probs[ranks] = mech.probs[src_rank] @ scatter
        payments[ranks, k] = mech.payments[src_rank, k]
        if closure.zero_outcome is not None:
            declines = u[digits[ranks, k], chosen, rest_rank] < 0.0
            out_ranks = ranks[declines]
            probs[out_ranks] = 0.0
            probs[out_ranks, closure.zero_outcome] = 1.0
            payments[out_ranks, k] = 0.0

    return MechanismTable(
        domain=full_domain,
        space=space,
        probs=probs,
        payments=payments,
        meta={**mech.meta, "extension": "dsic_zero_out"},
    )


def _rest_strides(domain: ProfileDomain, k: int) -> np.ndarray:
    sizes = [
        domain.bidder_type_count(i) for i in range(domain.n) if i != k
    ]
    strides = np.ones(len(sizes), dtype=np.int64)
    for i in range(len(sizes) - 2, -1, -1):
        strides[i] = strides[i + 1] * sizes[i + 1]
    return strides


def _dump_lp(
    path: str,
    c: np.ndarray,
    a_ub: sp.csr_matrix,
    b_ub: np.ndarray,
    a_eq: sp.csr_matrix,
    b_eq: np.ndarray,
    n_x: int,
) -> None:
    """Write the instance in CPLEX LP text format for external checking."""

    def var(j: int) -> str:
        return f"x{j}" if j < n_x else f"p{j - n_x}"

    def expr(row: sp.csr_matrix) -> str:
        terms = []
        for j, v in zip(row.indices, row.data):
            sign = "+" if v >= 0 else "-"
            terms.append(f"{sign} {abs(float(v))!r} {var(j)}")
        return " ".join(terms) if terms else "0"

    with open(path, "w", encoding="utf-8") as fh:
        fh.write("Minimize\n obj: ")
        fh.write(
            " ".join(
                f"{'+' if v >= 0 else '-'} {abs(float(v))!r} {var(j)}"
                for j, v in enumerate(c)
                if v != 0.0
            )
        )
        fh.write("\nSubject To\n")
        for r in range(a_ub.shape[0]):
            fh.write(f" ub{r}: {expr(a_ub.getrow(r))} <= {float(b_ub[r])!r}\n")
        for r in range(a_eq.shape[0]):
            fh.write(f" eq{r}: {expr(a_eq.getrow(r))} = {float(b_eq[r])!r}\n")
        fh.write("Bounds\n")
        for j in range(n_x, len(c)):
            fh.write(f" {var(j)} free\n")
        fh.write("End\n")
