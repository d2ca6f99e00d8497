"""Explicit mechanism tables over grid type-profiles, and their audits.

A mechanism is a table: one row per type profile in its domain, each row a
lottery over outcomes plus one expected payment per bidder. All revenue,
interim-utility, and incentive-regret quantities are exact expectations over
these finite objects; nothing is ever estimated by simulation here.

Profile ranking is mixed-radix and bidder-major: bidder 0's type is the most
significant super-digit. Within one bidder, parameter 0 is the most
significant digit. All enumeration orders derive from this single convention.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Sequence

import numpy as np

from .errors import InvariantError, ParseError, UsageError
from .grid import GridSpec, ProductPrior
from .outcomes import OutcomeSpace, ValuationModel

__all__ = [
    "ProfileDomain",
    "MechanismTable",
    "InterimForm",
    "RegretReport",
    "revenue",
    "interim_form",
    "regret_report",
    "audit_over_domain",
    "serialize_mechanism",
    "deserialize_mechanism",
]


@dataclass(frozen=True)
class ProfileDomain:
    """Which grid profiles a mechanism table covers.

    ``supports[i][j]`` is the sorted tuple of grid indices bidder i may
    report for parameter j; the domain is their Cartesian product.
    """

    spec: GridSpec
    supports: tuple[tuple[tuple[int, ...], ...], ...]

    def __post_init__(self) -> None:
        sup = tuple(
            tuple(tuple(int(k) for k in cell) for cell in row)
            for row in self.supports
        )
        object.__setattr__(self, "supports", sup)
        top = self.spec.top_index
        for row in sup:
            for cell in row:
                if not cell:
                    raise UsageError("every support cell must be nonempty")
                if list(cell) != sorted(set(cell)):
                    raise UsageError("support cells must be sorted and duplicate-free")
                if cell[0] < 0 or cell[-1] > top:
                    raise UsageError(f"support {cell} leaves the grid [0, {top}]")

    @classmethod
    def full_grid(cls, spec: GridSpec, n: int, m: int) -> "ProfileDomain":
        cell = tuple(range(spec.levels))
        return cls(spec=spec, supports=tuple((cell,) * m for _ in range(n)))

    @property
    def n(self) -> int:
        return len(self.supports)

    @property
    def m(self) -> int:
        return len(self.supports[0])

    @property
    def is_full_grid(self) -> bool:
        cell = tuple(range(self.spec.levels))
        return all(c == cell for row in self.supports for c in row)

    def bidder_type_count(self, i: int) -> int:
        out = 1
        for cell in self.supports[i]:
            out *= len(cell)
        return out

    @property
    def num_profiles(self) -> int:
        out = 1
        for i in range(self.n):
            out *= self.bidder_type_count(i)
        return out

    def bidder_types(self, i: int) -> np.ndarray:
        """(T_i, m) grid indices of bidder i's domain types, lex order."""
        combos = list(itertools.product(*self.supports[i]))
        return np.asarray(combos, dtype=np.int64)

    def bidder_type_rank(self, i: int, indices: Sequence[int]) -> int:
        rank = 0
        for j, idx in enumerate(indices):
            cell = self.supports[i][j]
            try:
                pos = cell.index(int(idx))
            except ValueError:
                raise UsageError(
                    f"grid index {idx} not in bidder {i} parameter {j} support {cell}"
                ) from None
            rank = rank * len(cell) + pos
        return rank

    def bidder_strides(self) -> np.ndarray:
        sizes = [self.bidder_type_count(i) for i in range(self.n)]
        strides = np.ones(self.n, dtype=np.int64)
        for i in range(self.n - 2, -1, -1):
            strides[i] = strides[i + 1] * sizes[i + 1]
        return strides

    def profile_rank(self, profile: Sequence[Sequence[int]]) -> int:
        strides = self.bidder_strides()
        return int(
            sum(
                self.bidder_type_rank(i, profile[i]) * strides[i]
                for i in range(self.n)
            )
        )

    def profiles(self) -> Iterator[tuple[tuple[int, ...], ...]]:
        """All profiles in rank order, as n-tuples of m-tuples of indices."""
        per_bidder = [
            list(itertools.product(*self.supports[i])) for i in range(self.n)
        ]
        for combo in itertools.product(*per_bidder):
            yield combo

    def covers(self, prior: ProductPrior) -> tuple[int, int, int] | None:
        """First (bidder, parameter, grid index) of prior mass outside the
        domain, or None if fully covered."""
        for i in range(self.n):
            for j in range(self.m):
                cell = set(self.supports[i][j])
                for k in prior.marginals[i][j].support:
                    if k not in cell:
                        return (i, j, k)
        return None


@dataclass
class MechanismTable:
    """One lottery row per domain profile, plus expected payments."""

    domain: ProfileDomain
    space: OutcomeSpace
    probs: np.ndarray  # (R, K)
    payments: np.ndarray  # (R, n)
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        r, k = self.domain.num_profiles, self.space.num_outcomes
        self.probs = np.asarray(self.probs, dtype=np.float64)
        self.payments = np.asarray(self.payments, dtype=np.float64)
        if self.probs.shape != (r, k):
            raise UsageError(f"probs shape {self.probs.shape} != ({r}, {k})")
        if self.payments.shape != (r, self.domain.n):
            raise UsageError(
                f"payments shape {self.payments.shape} != ({r}, {self.domain.n})"
            )
        if self.probs.size and self.probs.min() < -1e-9:
            raise UsageError("lottery probabilities must be nonnegative")
        sums = self.probs.sum(axis=1)
        if sums.size and np.max(np.abs(sums - 1.0)) > 1e-9:
            bad = int(np.argmax(np.abs(sums - 1.0)))
            raise UsageError(
                f"lottery at profile rank {bad} sums to {float(sums[bad])!r}, not 1"
            )
        if not np.all(np.isfinite(self.payments)):
            raise UsageError("payments must be finite")
        if (self.domain.n, self.domain.m) != (self.space.n, self.space.m):
            raise UsageError("domain and outcome space disagree on (n, m)")

    @property
    def n(self) -> int:
        return self.domain.n

    @property
    def m(self) -> int:
        return self.domain.m

    def row(self, profile: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
        r = self.domain.profile_rank(profile)
        return self.probs[r], self.payments[r]

    def lottery_entries(self, rank: int) -> list[tuple[float, int, np.ndarray]]:
        """Explicit (probability, outcome, payments) entries of one row."""
        out = []
        for o in np.flatnonzero(self.probs[rank] > 0.0):
            out.append((float(self.probs[rank, o]), int(o), self.payments[rank]))
        return out


def _bidder_weight_vectors(
    mech: MechanismTable, prior: ProductPrior
) -> list[np.ndarray]:
    """Per-bidder probabilities of each domain type under the prior.

    Weights are assembled as exact rationals and collapsed to floats once.
    """
    missing = mech.domain.covers(prior)
    if missing is not None:
        i, j, k = missing
        profile = [
            [cells[0] for cells in row] for row in mech.domain.supports
        ]
        profile[i][j] = k
        raise UsageError(
            f"prior support leaves the mechanism domain; first uncovered "
            f"profile {profile} (bidder {i}, parameter {j}, grid index {k})"
        )
    out = []
    for i in range(mech.n):
        types = mech.domain.bidder_types(i)
        weights = []
        for t in types:
            w = Fraction(1)
            for j in range(mech.m):
                w *= prior.marginals[i][j].mass.get(int(t[j]), Fraction(0))
            weights.append(w)
        out.append(np.array([float(w) for w in weights]))
    return out


def _axis_views(mech: MechanismTable, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Lottery and payment tensors with bidder k's type axis first.

    Returns probs as (T_k, R_rest, K) and bidder k's payments as
    (T_k, R_rest); the rest axis enumerates other bidders' types in bidder
    order, consistent with flattened outer products of their weights.
    """
    sizes = [mech.domain.bidder_type_count(i) for i in range(mech.n)]
    probs = mech.probs.reshape(*sizes, mech.space.num_outcomes)
    pay = mech.payments[:, k].reshape(*sizes)
    probs = np.moveaxis(probs, k, 0).reshape(sizes[k], -1, mech.space.num_outcomes)
    pay = np.moveaxis(pay, k, 0).reshape(sizes[k], -1)
    return probs, pay


def _rest_weights(weights: list[np.ndarray], k: int) -> np.ndarray:
    rest = [w for i, w in enumerate(weights) if i != k]
    out = np.ones(1)
    for w in rest:
        out = np.multiply.outer(out, w).reshape(-1)
    return out


def _domain_value_table(
    mech: MechanismTable, model: ValuationModel, k: int
) -> np.ndarray:
    types = mech.domain.bidder_types(k)
    return model.values_for(mech.space, k, types * mech.domain.spec.epsilon)


def revenue(
    mech: MechanismTable, prior: ProductPrior, exact: bool = False
) -> float | Fraction:
    """Expected total payment under the prior.

    With ``exact=True`` all arithmetic is rational (float payments embedded
    exactly), so regrouping the sum cannot change the result.
    """
    if exact:
        missing = mech.domain.covers(prior)
        if missing is not None:
            _bidder_weight_vectors(mech, prior)  # raises with details
        total = Fraction(0)
        for profile in prior.support_profiles():
            p = prior.profile_prob(profile)
            if p == 0:
                continue
            rank = mech.domain.profile_rank(profile)
            paysum = sum(
                (Fraction(float(x)) for x in mech.payments[rank]), Fraction(0)
            )
            total += p * paysum
        return total
    weights = _bidder_weight_vectors(mech, prior)
    sizes = [mech.domain.bidder_type_count(i) for i in range(mech.n)]
    acc = mech.payments.sum(axis=1).reshape(sizes)
    for w in reversed(weights):
        acc = acc @ w
    return float(acc)


@dataclass(frozen=True)
class InterimForm:
    """Interim utilities and expected payments of one bidder.

    ``utilities[t, r]`` is the expected utility of true type t reporting
    type r, in expectation over the other bidders' prior and the mechanism's
    randomness. ``expected_payment[r]`` is the interim expected payment of a
    report r.
    """

    bidder: int
    types: np.ndarray  # (T, m) grid indices
    utilities: np.ndarray  # (T, T)
    expected_payment: np.ndarray  # (T,)

    def __post_init__(self) -> None:
        if not (
            np.all(np.isfinite(self.utilities))
            and np.all(np.isfinite(self.expected_payment))
        ):
            raise InvariantError("interim quantities must be finite")


def interim_form(
    mech: MechanismTable,
    prior: ProductPrior,
    model: ValuationModel,
    k: int,
) -> InterimForm:
    weights = _bidder_weight_vectors(mech, prior)
    probs_view, pay_view = _axis_views(mech, k)
    w_rest = _rest_weights(weights, k)
    val = _domain_value_table(mech, model, k)  # (T, K)
    cp = np.einsum("sro,r->so", probs_view, w_rest)  # (T', K)
    cpay = pay_view @ w_rest  # (T',)
    utilities = val @ cp.T - cpay[None, :]
    return InterimForm(
        bidder=k,
        types=mech.domain.bidder_types(k),
        utilities=utilities,
        expected_payment=cpay,
    )


@dataclass(frozen=True)
class RegretReport:
    """Worst-case incentive violations and IR slack over a domain."""

    bic_regret: float
    dsic_regret: float
    ir_slack: float
    bic_witness: dict
    dsic_witness: dict
    ir_witness: dict

    def __str__(self) -> str:  # CLI-friendly
        return (
            f"bic_regret={self.bic_regret!r} at {self.bic_witness}\n"
            f"dsic_regret={self.dsic_regret!r} at {self.dsic_witness}\n"
            f"ir_slack={self.ir_slack!r} at {self.ir_witness}"
        )


def audit_over_domain(
    mech: MechanismTable,
    prior: ProductPrior,
    model: ValuationModel,
) -> RegretReport:
    """Regret and IR metrics with deviations ranging over the mechanism's
    own domain (full grid or a listed support)."""
    bic_best = 0.0
    bic_wit: dict = {}
    dsic_best = 0.0
    dsic_wit: dict = {}
    ir_best = np.inf
    ir_wit: dict = {}
    for k in range(mech.n):
        types = mech.domain.bidder_types(k)
        form = interim_form(mech, prior, model, k)
        u = form.utilities
        gain = u - np.diag(u)[:, None]
        t, r = np.unravel_index(np.argmax(gain), gain.shape)
        if gain[t, r] > bic_best:
            bic_best = float(gain[t, r])
            bic_wit = {
                "bidder": k,
                "true_type": types[t].tolist(),
                "report": types[r].tolist(),
            }

        probs_view, pay_view = _axis_views(mech, k)
        val = _domain_value_table(mech, model, k)
        # u_expost[t, s, rest]: true type t, report s, others' profile rest
        u_expost = np.einsum("sro,to->tsr", probs_view, val) - pay_view[None, :, :]
        truth = np.einsum("tro,to->tr", probs_view, val) - pay_view
        gain_x = u_expost - truth[:, None, :]
        t, s, rest = np.unravel_index(np.argmax(gain_x), gain_x.shape)
        if gain_x[t, s, rest] > dsic_best:
            dsic_best = float(gain_x[t, s, rest])
            dsic_wit = {
                "bidder": k,
                "true_type": types[t].tolist(),
                "report": types[s].tolist(),
                "rest_rank": int(rest),
            }
        t, rest = np.unravel_index(np.argmin(truth), truth.shape)
        if truth[t, rest] < ir_best:
            ir_best = float(truth[t, rest])
            ir_wit = {"bidder": k, "type": types[t].tolist(), "rest_rank": int(rest)}
    return RegretReport(
        bic_regret=max(bic_best, 0.0),
        dsic_regret=max(dsic_best, 0.0),
        ir_slack=float(ir_best),
        bic_witness=bic_wit,
        dsic_witness=dsic_wit,
        ir_witness=ir_wit,
    )


def regret_report(
    mech: MechanismTable,
    prior: ProductPrior,
    model: ValuationModel,
    space: OutcomeSpace | None = None,
) -> RegretReport:
    """Full-grid regret report; partial-domain mechanisms must be extended
    first so that deviations range over all grid types."""
    if space is not None and space is not mech.space:
        raise UsageError("regret_report must use the mechanism's own space")
    if not mech.domain.is_full_grid:
        raise UsageError(
            "mechanism domain does not cover the full grid; extend it first"
        )
    return audit_over_domain(mech, prior, model)


# ---------------------------------------------------------------------------
# Serialization: JSON with numbers as strings so reloads are bit-exact.
# ---------------------------------------------------------------------------

_FORMAT = "mechlearn-mechanism/1"


def _num_to_str(x: float) -> str:
    return repr(float(x))


def _num_from_str(s: str, where: str) -> float:
    try:
        if "/" in s:
            return float(Fraction(s))
        return float(s)
    except (ValueError, ZeroDivisionError) as exc:
        raise ParseError(f"{where}: bad number {s!r}") from exc


def serialize_mechanism(mech: MechanismTable) -> str:
    dom = mech.domain
    header = {
        "format": _FORMAT,
        "n": mech.n,
        "m": mech.m,
        "epsilon": _num_to_str(dom.spec.epsilon),
        "h": _num_to_str(dom.spec.h),
        "space_hash": mech.space.content_hash(),
        "space": json.loads(mech.space.canonical_json()),
        "domain": "full" if dom.is_full_grid else [
            [list(cell) for cell in row] for row in dom.supports
        ],
        "meta": mech.meta,
    }
    rows = []
    for rank, profile in enumerate(dom.profiles()):
        entries = [
            {
                "p": _num_to_str(mech.probs[rank, o]),
                "outcome": int(o),
                "pay": [_num_to_str(x) for x in mech.payments[rank]],
            }
            for o in np.flatnonzero(mech.probs[rank] != 0.0)
        ]
        rows.append(
            {"profile": [int(k) for bidder in profile for k in bidder], "entries": entries}
        )
    return json.dumps(
        {"header": header, "rows": rows}, sort_keys=True, separators=(",", ":")
    )


def deserialize_mechanism(text: str) -> MechanismTable:
    try:
        doc = json.loads(text)
        header = doc["header"]
        rows = doc["rows"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ParseError(f"mechanism file is not valid: {exc}") from exc
    if header.get("format") != _FORMAT:
        raise ParseError(f"unknown mechanism format {header.get('format')!r}")
    n, m = int(header["n"]), int(header["m"])
    spec = GridSpec(
        epsilon=_num_from_str(header["epsilon"], "header.epsilon"),
        h=_num_from_str(header["h"], "header.h"),
    )
    space_doc = dict(header["space"])
    alloc = [
        [[_num_from_str(x, "space.alloc") for x in row] for row in out]
        for out in space_doc["alloc"]
    ]
    space = OutcomeSpace(
        kind=space_doc["kind"], n=n, m=m, alloc=np.asarray(alloc)
    )
    if header.get("space_hash") != space.content_hash():
        raise ParseError("space_hash does not match the embedded space")
    if header["domain"] == "full":
        domain = ProfileDomain.full_grid(spec, n, m)
    else:
        domain = ProfileDomain(
            spec=spec,
            supports=tuple(
                tuple(tuple(cell) for cell in row) for row in header["domain"]
            ),
        )
    r, k = domain.num_profiles, space.num_outcomes
    if len(rows) != r:
        raise ParseError(f"expected {r} rows for the declared domain, got {len(rows)}")
    probs = np.zeros((r, k))
    payments = np.zeros((r, n))
    for rank, (row, profile) in enumerate(zip(rows, domain.profiles())):
        flat = [idx for bidder in profile for idx in bidder]
        if row.get("profile") != flat:
            raise ParseError(
                f"row {rank}: profile {row.get('profile')} out of order; expected {flat}"
            )
        total = 0.0
        for e, entry in enumerate(row.get("entries", [])):
            where = f"row {rank} entry {e}"
            o = int(entry["outcome"])
            if not (0 <= o < k):
                raise ParseError(f"{where}: outcome {o} outside the space")
            p = _num_from_str(entry["p"], where)
            probs[rank, o] += p
            total += p
            payments[rank] = [ _num_from_str(x, where) for x in entry["pay"] ]
        if abs(total - 1.0) > 1e-9:
            raise ParseError(f"row {rank}: lottery probabilities sum to {total!r}")
    try:
        return MechanismTable(
            domain=domain,
            space=space,
            probs=probs,
            payments=payments,
            meta=dict(header.get("meta", {})),
        )
    except UsageError as exc:
        raise ParseError(str(exc)) from exc
