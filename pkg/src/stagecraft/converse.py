"""Rebuild an energy-budget certificate from a total-cost certificate.

The construction is fully constructive.  From a total-cost
certificate whose stage cost splits into a strictly increasing state
gauge plus an input gauge, it derives

* an excursion bound capping the state measure along any certified
  rollout,
* a settle horizon within which the rollout must dip below any
  threshold, which lets certified prefixes be stitched into controls
  that settle through a schedule of shrinking targets, and
* a sampled decay bound on the state measure assembled from the
  schedule's settling times.

The stitched controls price their own energy through the input
gauge, so the output certifies a state decay bound together with an
energy budget, using the stitched controls as its policy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .cmpfn import KInfFn, NonnegFn, SampledKL, combine, compose, inverse_of
from .certificates import (
    DEFAULT_SLACK,
    TAIL_ZERO,
    PolicyOracle,
    UBgECCert,
    UCCCert,
    VerificationReport,
    verify,
)
from .errors import BudgetError, CertificateInvalidError, ParameterError
from .system import ControlSystem, StageCost, rollout, total_cost
from .system import _fmt

__all__ = [
    "DEFAULT_STEP_CAP",
    "excursion_bound",
    "relay_bound",
    "total_bound",
    "settle_horizon",
    "StitchResult",
    "stitch_controls",
    "SettlingSchedule",
    "settling_schedule",
    "stitched_policy",
    "NuCurve",
    "StateBoundBuild",
    "assemble_state_bound",
    "ConverseResult",
    "converse_pipeline",
]

DEFAULT_STEP_CAP = 10 ** 9
DEFAULT_DEPTH = 16
DEFAULT_NU_DEPTH = 48
DEFAULT_POLICY_LENGTH = 4096

_STRICTIFIER = 1e-3


def _gauges(ucc: UCCCert) -> Tuple[KInfFn, NonnegFn]:
    """State and input gauges of the certificate's stage cost."""
    if not isinstance(ucc, UCCCert):
        raise ParameterError("expected a total-cost certificate")
    cost = ucc.stage_cost
    if cost.cross_cost is not None:
        raise ParameterError("the converse construction needs a stage cost without a cross term")
    if not isinstance(cost.state_cost, KInfFn):
        raise ParameterError(
            "the converse construction needs a strictly increasing, unbounded state gauge"
        )
    if cost.input_cost is None:
        raise ParameterError("the converse construction needs an input gauge")
    return cost.state_cost, cost.input_cost


def excursion_bound(ucc: UCCCert) -> KInfFn:
    """Cap on the state measure along any certified rollout.

    Every stage cost is at least the state gauge of the current
    state, so the whole trajectory cost bounds each state: apply the
    inverse state gauge to the cost bound.
    """
    state_gauge, _ = _gauges(ucc)
    return compose(inverse_of(state_gauge), ucc.cost_bound)


def relay_bound(ucc: UCCCert) -> KInfFn:
    """Cost bound surviving one hand-off to a fresh certified prefix.

    A stitched control pays at most the cost bound before the
    hand-off state, whose measure the excursion bound caps, plus the
    cost bound from there.
    """
    bound = ucc.cost_bound
    return combine(bound, compose(bound, excursion_bound(ucc)), "sum")


def total_bound(ucc: UCCCert) -> KInfFn:
    """Cost bound for the full settling schedule of hand-offs."""
    return combine(relay_bound(ucc), ucc.cost_bound, "sum")


def settle_horizon(
    ucc: UCCCert,
    radius: float,
    eps: float,
    eps_tilde_factor: float = 0.5,
    step_cap: int = DEFAULT_STEP_CAP,
) -> int:
    """Steps within which a certified rollout must dip below a threshold.

    The threshold is the excursion level of ``eps_tilde_factor *
    eps``.  Each step spent above it costs at least the state gauge
    of the threshold, so the cost bound at ``radius`` cannot pay for
    more than the returned number of steps: the smallest positive
    integer at least ``cost_bound(radius) / state_gauge(threshold) - 1``.
    """
    state_gauge, _ = _gauges(ucc)
    if not (np.isfinite(radius) and radius >= 0):
        raise ParameterError(f"radius must be finite and nonnegative, got {radius!r}")
    if not (np.isfinite(eps) and eps > 0):
        raise ParameterError(f"target must be finite and positive, got {eps!r}")
    if not 0.0 < eps_tilde_factor < 1.0:
        raise ParameterError(f"eps_tilde_factor must lie in (0, 1), got {eps_tilde_factor!r}")
    threshold = excursion_bound(ucc).invert(eps_tilde_factor * eps)
    floor_cost = state_gauge.eval(threshold)
    top = ucc.cost_bound.eval(radius)
    if floor_cost <= 0.0:
        if top <= 0.0:
            return 1
        raise BudgetError(f"threshold {threshold:g} carries no stage cost; cannot bound steps")
    ratio = top / floor_cost
    if ratio > step_cap:
        raise BudgetError(
            f"settling from radius {radius:g} to target {eps:g} needs about "
            f"{ratio:.3g} steps, above the cap {step_cap:g}"
        )
    value = ratio - 1.0
    nearest = round(value)
    if abs(value - nearest) <= 1e-9 * max(1.0, abs(value)):
        value = nearest
    return max(1, math.ceil(value))


@dataclass(frozen=True)
class StitchResult:
    """One certified prefix handed off to a fresh one at the switch step."""

    controls: Tuple
    switch_step: Optional[int]
    horizon: int
    threshold: float
    cost: float
    bound: float


def stitch_controls(
    ucc: UCCCert,
    sys: ControlSystem,
    x,
    eps: float,
    radius: Optional[float] = None,
    eps_tilde_factor: float = 0.5,
    step_cap: int = DEFAULT_STEP_CAP,
    length: Optional[int] = None,
) -> StitchResult:
    """Follow the certified policy until it dips below the target threshold,
    then restart it from the state reached there.

    The scan must succeed within the settle horizon; failure means
    the certificate's cost accounting is inconsistent.  With an
    explicit ``length`` the returned prefix is truncated, and a scan
    window cut short by the truncation is not an error.
    """
    state_gauge, _ = _gauges(ucc)
    start = sys.sigma(x)
    big_r = start if radius is None else float(radius)
    if big_r < start:
        raise ParameterError(f"radius {big_r:g} is below the sample's state measure {start:g}")
    threshold = excursion_bound(ucc).invert(eps_tilde_factor * eps)
    horizon = settle_horizon(ucc, big_r, eps, eps_tilde_factor, step_cap) if big_r > 0 else 1
    out_len = horizon + ucc.policy.length if length is None else int(length)
    if out_len < 0:
        raise ParameterError(f"length must be nonnegative, got {length!r}")

    scan_cap = min(horizon, out_len)
    lead = ucc.policy.controls(x, scan_cap)
    state = x
    switch = None
    tolerance = threshold * (1.0 + 1e-12)
    for n in range(scan_cap + 1):
        if sys.sigma(state) <= tolerance:
            switch = n
            break
        if n < scan_cap:
            state = sys.transition(state, lead[n])
    if switch is None:
        if scan_cap >= horizon:
            raise CertificateInvalidError(
                f"no certified state dipped below {threshold:g} within {horizon} steps "
                f"from state measure {start:g}; the cost bound cannot hold"
            )
        stitched = list(lead[:out_len])
    else:
        stitched = list(lead[:switch]) + ucc.policy.controls(state, out_len - switch)

    traj = rollout(sys, x, stitched)
    return StitchResult(
        controls=tuple(stitched),
        switch_step=switch,
        horizon=horizon,
        threshold=threshold,
        cost=total_cost(sys, ucc.stage_cost, traj),
        bound=relay_bound(ucc).eval(start),
    )


@dataclass(frozen=True)
class SettlingSchedule:
    """Shrinking targets and per-round horizons for one starting radius.

    Round ``m`` (1-based) drives the state measure below
    ``eps_targets[m-1]`` within ``round_horizons[m-1]`` further
    steps; after ``cum_horizons[m-1]`` total steps the measure stays
    below ``eps_levels[m-1]``.
    """

    radius: float
    eps_levels: Tuple[float, ...]
    eps_targets: Tuple[float, ...]
    round_horizons: Tuple[int, ...]
    cum_horizons: Tuple[int, ...]

    @property
    def depth(self) -> int:
        return len(self.eps_levels)


def settling_schedule(
    ucc: UCCCert,
    radius: float,
    depth: int = DEFAULT_DEPTH,
    eps_levels: Optional[Sequence[float]] = None,
    eps_tilde_factor: float = 0.5,
    step_cap: int = DEFAULT_STEP_CAP,
) -> SettlingSchedule:
    """Target sequence for settling from the given radius.

    Levels default to ``1/m``.  The round-``m`` target is clipped
    three ways: below the relay preimage of the level's stage cost,
    below the relay preimage of a geometrically shrinking share of
    the starting cost budget, and below the radius itself.  The
    clipping makes both the per-round costs and the final measures
    summable.

    Rounds whose horizon would blow the step cap are dropped: the
    schedule truncates at the last computable round.  At least the
    first round must fit under the cap.
    """
    if not (np.isfinite(radius) and radius > 0):
        raise ParameterError(f"radius must be finite and positive, got {radius!r}")
    if depth < 1:
        raise ParameterError(f"depth must be at least 1, got {depth}")
    if eps_levels is None:
        levels = [1.0 / m for m in range(1, depth + 1)]
    else:
        levels = [float(e) for e in eps_levels]
        if len(levels) != depth:
            raise ParameterError(f"expected {depth} levels, got {len(levels)}")
        if any(not (0.0 < e <= 1.0) for e in levels):
            raise ParameterError("levels must lie in (0, 1]")
        if any(b >= a for a, b in zip(levels, levels[1:])):
            raise ParameterError("levels must be strictly decreasing")

    state_gauge, _ = _gauges(ucc)
    relay = relay_bound(ucc)
    top = ucc.cost_bound.eval(radius)

    targets, horizons, cums = [], [], []
    total_steps = 0
    for m, level in enumerate(levels, start=1):
        target = min(
            relay.invert(state_gauge.eval(level)),
            relay.invert((2.0 ** -m) * top),
            radius,
        )
        try:
            if target <= 0.0:
                raise BudgetError(f"round {m} target degenerated to {target!r}")
            steps = settle_horizon(ucc, radius, target, eps_tilde_factor, step_cap)
        except BudgetError:
            if m == 1:
                raise
            break
        total_steps += steps
        targets.append(target)
        horizons.append(steps)
        cums.append(total_steps)
    return SettlingSchedule(
        radius=float(radius),
        eps_levels=tuple(levels[: len(targets)]),
        eps_targets=tuple(targets),
        round_horizons=tuple(horizons),
        cum_horizons=tuple(cums),
    )


def stitched_policy(
    ucc: UCCCert,
    sys: ControlSystem,
    depth: int = DEFAULT_DEPTH,
    eps_tilde_factor: float = 0.5,
    length: int = DEFAULT_POLICY_LENGTH,
    step_cap: int = DEFAULT_STEP_CAP,
    zero_input=0.0,
) -> PolicyOracle:
    """Concatenate stitched prefixes through the settling schedule.

    Per starting state, round ``m`` runs the stitched control for the
    round's target, truncated to the round's horizon; the prefix is
    capped at ``length`` controls and states with zero measure fall
    back to the certificate's own policy.
    """
    if length < 1:
        raise ParameterError(f"length must be positive, got {length}")

    def prefix(x):
        start = sys.sigma(x)
        if start <= 0.0:
            return ucc.policy.controls(x, length)
        schedule = settling_schedule(
            ucc, start, depth=depth, eps_tilde_factor=eps_tilde_factor, step_cap=step_cap
        )
        controls = []
        state = x
        for m in range(schedule.depth):
            room = length - len(controls)
            if room <= 0:
                break
            block = stitch_controls(
                ucc,
                sys,
                state,
                eps=schedule.eps_targets[m],
                radius=start,
                eps_tilde_factor=eps_tilde_factor,
                step_cap=step_cap,
                length=min(schedule.round_horizons[m], room),
            )
            controls.extend(block.controls)
            state = rollout(sys, state, block.controls).states[-1]
        if len(controls) < length:
            controls.extend(ucc.policy.controls(state, length - len(controls)))
        return controls[:length]

    return PolicyOracle(
        prefix=prefix, length=length, tail=TAIL_ZERO, zero_input=zero_input, ref="stitched"
    )


# ---------------------------------------------------------------------------
# settling-time curve and its inverse
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NuCurve:
    """Smoothed settling-time curve for one starting radius.

    ``count(eps)`` is the scheduled step count after which the state
    measure stays below ``eps``; it is a nonincreasing step function
    of ``eps``.  ``value(eps)`` averages the count over
    ``[eps/2, eps]`` and adds ``radius / eps``, which makes it
    strictly decreasing and continuous, hence invertible.
    """

    radius: float
    eps_levels: Tuple[float, ...]
    cum_horizons: Tuple[int, ...]

    @property
    def floor(self) -> float:
        """Largest target with a computable count."""
        return self.eps_levels[-1]

    def count(self, eps: float) -> int:
        """Scheduled steps to stay below eps: the cumulative horizon of
        the first level strictly inside the target."""
        if eps <= self.floor:
            raise ParameterError(
                f"target {eps:g} is at or below the schedule floor {self.floor:g}"
            )
        descending = self.eps_levels
        lo, hi = 0, len(descending)
        while lo < hi:
            mid = (lo + hi) // 2
            if descending[mid] < eps:
                hi = mid
            else:
                lo = mid + 1
        return self.cum_horizons[lo]

    def value(self, eps: float) -> float:
        if eps / 2.0 <= self.floor:
            raise ParameterError(
                f"averaging window of target {eps:g} dips below the schedule floor"
            )
        a, b = eps / 2.0, eps
        cuts = sorted({a, b} | {e for e in self.eps_levels if a < e < b})
        integral = 0.0
        for left, right in zip(cuts, cuts[1:]):
            integral += (right - left) * self.count(0.5 * (left + right))
        return (2.0 / eps) * integral + self.radius / eps

    def inverse(self, steps: float) -> Optional[float]:
        """Largest measure guaranteed after the given step count.

        Returns None when the step count is too small to say anything
        (below the first cumulative horizon) or too large for the
        schedule's depth.
        """
        base = float(self.cum_horizons[0])
        if steps <= base:
            return None
        knee = base + self.radius / 2.0
        if steps <= knee:
            return self.radius / (steps - base)
        lo = 2.0 * self.floor * (1.0 + 1e-9)
        hi = 2.0
        if self.value(lo) < steps:
            return None
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if self.value(mid) >= steps:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-14 * hi:
                break
        return 0.5 * (lo + hi)


@dataclass(frozen=True)
class StateBoundBuild:
    """Assembled decay bound plus the data it came from."""

    bound: SampledKL
    schedules: Tuple[SettlingSchedule, ...]
    curves: Tuple[NuCurve, ...]


def assemble_state_bound(
    ucc: UCCCert,
    r_values: Sequence[float],
    t_grid=None,
    depth: int = DEFAULT_NU_DEPTH,
    eps_tilde_factor: float = 0.5,
    step_cap: int = DEFAULT_STEP_CAP,
) -> StateBoundBuild:
    """Decay bound on the state measure for the stitched policy.

    Rows are the given radii.  Each cell takes the smaller of the
    excursion bound (valid at every step) and the settling-curve
    inverse (valid once enough steps have passed), plus a vanishing
    strictly-decreasing term that keeps the grid a valid decay bound.
    Rows are repaired to strict increase with a running maximum.
    """
    exc = excursion_bound(ucc)
    radii = np.asarray(sorted(set(float(r) for r in r_values)), dtype=float)
    if radii.size < 2 or np.any(radii <= 0):
        raise ParameterError("need at least two distinct positive radii")
    t_grid = np.arange(65, dtype=float) if t_grid is None else np.asarray(t_grid, dtype=float)

    schedules, curves, rows = [], [], []
    for radius in radii:
        schedule = settling_schedule(
            ucc, radius, depth=depth, eps_tilde_factor=eps_tilde_factor, step_cap=step_cap
        )
        curve = NuCurve(
            radius=radius,
            eps_levels=schedule.eps_levels,
            cum_horizons=schedule.cum_horizons,
        )
        ceiling = exc.eval(radius)
        row = []
        for t in t_grid:
            settled = curve.inverse(float(t))
            value = ceiling if settled is None else min(ceiling, settled)
            row.append(value + _STRICTIFIER * ceiling / (1.0 + float(t)))
        schedules.append(schedule)
        curves.append(curve)
        rows.append(row)

    values = np.maximum.accumulate(np.asarray(rows, dtype=float), axis=0)
    bound = SampledKL(r_grid=radii, t_grid=t_grid, values=values)
    return StateBoundBuild(bound=bound, schedules=tuple(schedules), curves=tuple(curves))


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConverseResult:
    """Energy-budget certificate rebuilt from a total-cost certificate."""

    cert: UBgECCert
    excursion: KInfFn
    relay: KInfFn
    total: KInfFn
    build: StateBoundBuild
    report: VerificationReport

    def to_json(self) -> dict:
        return {
            "kind": "converse",
            "excursion": self.excursion.to_json(),
            "relay": self.relay.to_json(),
            "total": self.total.to_json(),
            "state_bound": self.cert.state_bound.to_json(),
            "energy": self.cert.energy.to_json(),
            "energy_budget": self.cert.energy_budget.to_json(),
            "passed": self.report.passed,
        }

    def schedule_csv(self, fp) -> None:
        fp.write("radius,round,eps_level,eps_target,round_horizon,cum_horizon\r\n")
        for schedule in self.build.schedules:
            for m in range(schedule.depth):
                fp.write(
                    f"{_fmt(schedule.radius)},{m + 1},{_fmt(schedule.eps_levels[m])},"
                    f"{_fmt(schedule.eps_targets[m])},{schedule.round_horizons[m]},"
                    f"{schedule.cum_horizons[m]}\r\n"
                )

    def nu_csv(self, fp, points: int = 9) -> None:
        fp.write("radius,eps,nu\r\n")
        for curve in self.build.curves:
            lo = 2.0 * curve.floor * 1.05
            sweep = np.geomspace(lo, max(4.0, 4.0 * lo), points)
            for eps in sweep:
                fp.write(f"{_fmt(curve.radius)},{_fmt(eps)},{_fmt(curve.value(eps))}\r\n")


def converse_pipeline(
    ucc: UCCCert,
    sys: ControlSystem,
    samples: Sequence,
    horizon: int = 64,
    depth: int = DEFAULT_DEPTH,
    nu_depth: int = DEFAULT_NU_DEPTH,
    eps_tilde_factor: float = 0.5,
    slack: float = DEFAULT_SLACK,
    policy_length: int = DEFAULT_POLICY_LENGTH,
    step_cap: int = DEFAULT_STEP_CAP,
    t_grid=None,
) -> ConverseResult:
    """Full constructive converse, verified on the given samples.

    The total-cost certificate must assert forward invariance and
    must itself verify on the samples; both are preconditions, not
    verification failures of the result.
    """
    if not ucc.forward_invariant:
        raise ParameterError(
            "the converse construction needs a forward-invariant total-cost certificate"
        )
    _gauges(ucc)
    base_report = verify(ucc, sys, samples, horizon, slack)
    if not base_report.passed:
        worst = base_report.worst()
        raise ParameterError(
            "the total-cost certificate fails verification "
            f"({worst.inequality} margin {worst.margin:g} at sample {worst.sample})"
        )

    measures = sorted({sys.sigma(x) for x in samples if sys.sigma(x) > 0.0})
    if not measures:
        radii = [1.0, 2.0]
    elif len(measures) == 1:
        radii = [measures[0], 2.0 * measures[0]]
    else:
        radii = measures

    build = assemble_state_bound(
        ucc,
        radii,
        t_grid=t_grid,
        depth=nu_depth,
        eps_tilde_factor=eps_tilde_factor,
        step_cap=step_cap,
    )
    policy = stitched_policy(
        ucc,
        sys,
        depth=depth,
        eps_tilde_factor=eps_tilde_factor,
        length=policy_length,
        step_cap=step_cap,
    )
    cert = UBgECCert(
        state_bound=build.bound,
        energy=ucc.stage_cost.input_cost,
        energy_budget=total_bound(ucc),
        domain=ucc.domain,
        policy=policy,
    )
    report = verify(cert, sys, samples, horizon, slack)
    return ConverseResult(
        cert=cert,
        excursion=excursion_bound(ucc),
        relay=relay_bound(ucc),
        total=total_bound(ucc),
        build=build,
        report=report,
    )
