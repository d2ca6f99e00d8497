"""Discrete Myerson machinery: ironing, virtual-welfare auctions, payments.

Ironing works in quantile space with exact rationals: the revenue curve of a
discrete marginal is the set of points (sale quantile, price * quantile) plus
the origin, its upper concave hull is computed with exact cross products, and
the ironed virtual value of a support point is the hull slope over that
point's quantile segment. Exactness matters: a float hull can misorder the
virtual values of near-tied support points, and everything downstream
(allocation monotonicity, payment identity, optimality) leans on the
ordering.

The auction allocates by maximizing total virtual welfare with a fixed,
bid-independent tie order; winners pay ladder thresholds, which makes the
auction exactly IR and DSIC.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import UsageError
from .grid import DiscreteMarginal, GridSpec, SampleSet, empirical_marginal
from .outcomes import OutcomeSpace, PricedOutcome

__all__ = [
    "IronedVirtuals",
    "MyersonAuction",
    "iron",
    "run_myerson",
    "snap_to_support",
    "single_parameter_table",
    "ironed_curve_rows",
]


@dataclass(frozen=True)
class IronedVirtuals:
    """Ironed virtual values of one marginal, exact and per support point."""

    marginal: DiscreteMarginal
    phi_exact: tuple[Fraction, ...]  # aligned with marginal.support
    quantiles: tuple[Fraction, ...]  # sale quantile of each support point
    curve: tuple[Fraction, ...]  # revenue-curve ordinate at each quantile
    hull: tuple[Fraction, ...]  # hull ordinate at each quantile

    def __post_init__(self) -> None:
        for a, b in zip(self.phi_exact, self.phi_exact[1:]):
            if a > b:
                raise UsageError("ironed virtual values must be nondecreasing")

    @property
    def support(self) -> tuple[int, ...]:
        return self.marginal.support

    def phi(self, position: int) -> float:
        return float(self.phi_exact[position])

    def phi_floats(self) -> np.ndarray:
        return np.array([float(p) for p in self.phi_exact])


def _upper_hull(points: list[tuple[Fraction, Fraction]]) -> list[tuple[Fraction, Fraction]]:
    """Upper concave envelope of points with strictly increasing abscissas."""
    hull: list[tuple[Fraction, Fraction]] = []
    for p in points:
        while len(hull) >= 2:
            o, a = hull[-2], hull[-1]
            cross = (a[0] - o[0]) * (p[1] - o[1]) - (a[1] - o[1]) * (p[0] - o[0])
            if cross >= 0:  # middle point at or below the chord: drop it
                hull.pop()
            else:
                break
        hull.append(p)
    return hull


def _hull_value(hull: list[tuple[Fraction, Fraction]], q: Fraction) -> Fraction:
    for (x0, y0), (x1, y1) in zip(hull, hull[1:]):
        if x0 <= q <= x1:
            if x0 == q:
                return y0
            return y0 + (y1 - y0) * (q - x0) / (x1 - x0)
    if hull and hull[-1][0] == q:
        return hull[-1][1]
    raise UsageError(f"quantile {q} outside the hull range")


def iron(marginal: DiscreteMarginal) -> IronedVirtuals:
    """Ironed virtual value of every support point, via the concave hull of
    the discrete revenue curve in quantile space."""
    support = marginal.support
    if not support:
        raise UsageError("cannot iron an empty marginal")
    probs = marginal.probs(support)
    values = [Fraction(marginal.spec.value(k)) for k in support]
    t = len(support)
    # sale quantile of posting each support value as a price
    quantiles = [Fraction(0)] * t
    acc = Fraction(0)
    for i in range(t - 1, -1, -1):
        acc += probs[i]
        quantiles[i] = acc
    curve = [values[i] * quantiles[i] for i in range(t)]
    points = [(Fraction(0), Fraction(0))] + [
        (quantiles[i], curve[i]) for i in range(t - 1, -1, -1)
    ]
    hull = _upper_hull(points)
    hull_at = [_hull_value(hull, quantiles[i]) for i in range(t)]
    phi = []
    for i in range(t):
        hi_q = quantiles[i]
        lo_q = quantiles[i + 1] if i + 1 < t else Fraction(0)
        hi_r = hull_at[i]
        lo_r = hull_at[i + 1] if i + 1 < t else Fraction(0)
        phi.append((hi_r - lo_r) / (hi_q - lo_q))
    return IronedVirtuals(
        marginal=marginal,
        phi_exact=tuple(phi),
        quantiles=tuple(quantiles),
        curve=tuple(curve),
        hull=tuple(hull_at),
    )


def ironed_curve_rows(iv: IronedVirtuals) -> list[dict]:
    """CSV-ready rows: value, quantile, revenue-curve point, hull point, phi."""
    rows = []
    for pos, k in enumerate(iv.support):
        rows.append(
            {
                "value": iv.marginal.spec.value(k),
                "quantile": float(iv.quantiles[pos]),
                "revenue_curve": float(iv.curve[pos]),
                "hull": float(iv.hull[pos]),
                "phi": float(iv.phi_exact[pos]),
            }
        )
    return rows


NON_PARTICIPANT = -1  # sentinel support position for below-minimum bids


@dataclass(frozen=True)
class MyersonAuction:
    """Virtual-welfare maximizer with a fixed tie order over outcomes.

    The outcome space must be single-parameter (one allocation level per
    bidder). At exact zero-virtual-value ties the default is to allocate;
    both conventions are revenue-neutral but one must be fixed for the tie
    order to be consistent.
    """

    virtuals: tuple[IronedVirtuals, ...]
    space: OutcomeSpace
    allocate_on_zero_ties: bool = True

    def __post_init__(self) -> None:
        if self.space.m != 1:
            raise UsageError("Myersonian auctions require a single-parameter space")
        if len(self.virtuals) != self.space.n:
            raise UsageError("need one IronedVirtuals per bidder")

    @property
    def n(self) -> int:
        return self.space.n

    def support_values(self, i: int) -> np.ndarray:
        return self.virtuals[i].marginal.support_values()

    def _choose(self, phi: Sequence[float | None]) -> int:
        """Argmax outcome of total virtual welfare under the fixed tie order.

        ``phi[i] is None`` marks a non-participant, whose allocation must be
        zero in the chosen outcome.
        """
        alloc = self.space.alloc[:, :, 0]  # (K, n)
        feasible = np.ones(alloc.shape[0], dtype=bool)
        vw = np.zeros(alloc.shape[0])
        total = np.zeros(alloc.shape[0])
        for i, f in enumerate(phi):
            if f is None:
                feasible &= alloc[:, i] == 0.0
            else:
                vw += alloc[:, i] * f
                total += alloc[:, i]
        if not np.any(feasible):
            raise UsageError(
                "no outcome excludes the non-participating bidders; the space "
                "cannot host below-minimum bids"
            )
        order = np.flatnonzero(feasible)
        best = order[0]
        for o in order[1:]:
            if vw[o] > vw[best]:
                best = o
            elif vw[o] == vw[best]:
                if self.allocate_on_zero_ties and total[o] > total[best]:
                    best = o
                elif not self.allocate_on_zero_ties and total[o] < total[best]:
                    best = o
        return int(best)

    def outcome_for_positions(self, positions: Sequence[int]) -> int:
        phi = [
            None if pos == NON_PARTICIPANT else self.virtuals[i].phi(pos)
            for i, pos in enumerate(positions)
        ]
        return self._choose(phi)

    def priced_outcome(self, positions: Sequence[int]) -> PricedOutcome:
        """Allocation plus ladder-threshold payments for support positions."""
        chosen = self.outcome_for_positions(positions)
        alloc = self.space.alloc[:, :, 0]
        payments = np.zeros(self.n)
        for i, pos in enumerate(positions):
            if pos == NON_PARTICIPANT:
                continue
            x_here = alloc[chosen, i]
            support_vals = self.support_values(i)
            ladder = 0.0
            for lower in range(pos):
                probe = list(positions)
                probe[i] = lower
                x_low = alloc[self.outcome_for_positions(probe), i]
                ladder += x_low * (support_vals[lower + 1] - support_vals[lower])
            payments[i] = support_vals[pos] * x_here - ladder
        return PricedOutcome(outcome=chosen, payments=payments)


def snap_to_support(v: float, marginal: DiscreteMarginal) -> int:
    """Largest support position with value <= v, or the sentinel if v is
    below the whole support (treated as non-participation)."""
    vals = marginal.support_values()
    pos = int(np.searchsorted(vals, v, side="right")) - 1
    return pos if pos >= 0 else NON_PARTICIPANT


def run_myerson(auction: MyersonAuction, bids: Sequence[float]) -> PricedOutcome:
    """Run the auction on bids that must sit exactly on each bidder's support."""
    if len(bids) != auction.n:
        raise UsageError(f"expected {auction.n} bids, got {len(bids)}")
    positions = []
    for i, b in enumerate(bids):
        vals = auction.support_values(i)
        hit = np.flatnonzero(vals == float(b))
        if hit.size == 0:
            raise UsageError(
                f"bid {b!r} of bidder {i} is not a support value; use "
                f"snap_to_support first"
            )
        positions.append(int(hit[0]))
    return auction.priced_outcome(positions)


def single_parameter_table(
    auction: MyersonAuction, spec: GridSpec
) -> "MechanismTable":
    """Materialize the snapped auction as a full-grid mechanism table."""
    from .mechanism import MechanismTable, ProfileDomain

    n = auction.n
    domain = ProfileDomain.full_grid(spec, n, 1)
    k_out = auction.space.num_outcomes
    r = domain.num_profiles
    probs = np.zeros((r, k_out))
    payments = np.zeros((r, n))
    support_positions = []
    for i in range(n):
        vals = auction.support_values(i)
        grid_vals = spec.values()
        support_positions.append(
            np.searchsorted(vals, grid_vals, side="right") - 1
        )
    for rank, profile in enumerate(domain.profiles()):
        positions = [
            int(support_positions[i][profile[i][0]]) for i in range(n)
        ]
        positions = [
            p if p >= 0 else NON_PARTICIPANT for p in positions
        ]
        priced = auction.priced_outcome(positions)
        probs[rank, priced.outcome] = 1.0
        payments[rank] = priced.payments
    return MechanismTable(
        domain=domain,
        space=auction.space,
        probs=probs,
        payments=payments,
        meta={"pipeline": "myerson"},
    )


def learn_single_parameter(
    samples: SampleSet, epsilon: float, space: OutcomeSpace
) -> "LearnedMechanism":
    """Rounding, empirical marginals, ironing, and the snapped Myersonian
    auction, wrapped for real bids; exactly IR and DSIC."""
    from .learner import LearnedMechanism

    if samples.m != 1:
        raise UsageError("single-parameter learning requires m = 1 samples")
    if space.m != 1:
        raise UsageError("single-parameter learning requires an m = 1 space")
    spec = GridSpec(epsilon=epsilon, h=samples.h)
    marginals = tuple(
        (empirical_marginal(samples.cell(i, 0), spec),) for i in range(samples.n)
    )
    auction = MyersonAuction(
        virtuals=tuple(iron(row[0]) for row in marginals), space=space
    )
    inner = single_parameter_table(auction, spec)
    inner.meta.update({"mode": "dsic", "pipeline": "single_parameter"})
    return LearnedMechanism(inner=inner, mode="dsic")
