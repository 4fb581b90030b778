"""Ground-truth costs and policies for small finite systems.

Value iteration over an explicit transition table yields, per state,
the cheapest achievable total cost and a greedy policy attaining it.
Both serve as an independent reference: ``extract_ucc`` packages
them as a total-cost certificate with forward invariance, and the
brute-force enumerator re-derives the same costs from scratch on
systems small enough to enumerate.

States with no finite-cost future are detected structurally before
iterating: a total cost can only stay finite by eventually riding
zero-cost edges forever, so finite values exist exactly on states
that can reach the zero-cost core.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Optional, Tuple

import numpy as np

from .cmpfn import identity, strict_table
from .certificates import TAIL_REPEAT, PolicyOracle, UCCCert
from .errors import EnvelopeError, ParameterError
from .system import ControlSystem, StageCost, _fmt

__all__ = [
    "FiniteSystem",
    "ValueTable",
    "value_iterate",
    "extract_ucc",
    "greedy_policy",
    "zero_cost_core",
    "reaches_core",
    "brute_force_values",
    "discretize_scalar",
]

MAX_STATES = 10 ** 4
MAX_INPUTS = 10 ** 2
DIVERGENCE_FACTOR = 10 ** 6


@dataclass(frozen=True, eq=False)
class FiniteSystem:
    """Explicit transition and measure tables.

    ``successor[x, u]`` is the next state index; measures are indexed
    the same way.  At least one state must sit at measure zero so a
    cost-free resting place can exist.
    """

    successor: np.ndarray
    state_measure: np.ndarray
    input_measure: np.ndarray

    def __post_init__(self):
        succ = np.asarray(self.successor, dtype=int)
        sig = np.asarray(self.state_measure, dtype=float)
        rho = np.asarray(self.input_measure, dtype=float)
        if succ.ndim != 2:
            raise ParameterError("successor table must be two-dimensional (states x inputs)")
        states, inputs = succ.shape
        if not (1 <= states <= MAX_STATES and 1 <= inputs <= MAX_INPUTS):
            raise ParameterError(f"table of {states} states x {inputs} inputs is out of range")
        if sig.shape != (states,) or rho.shape != (inputs,):
            raise ParameterError("measure tables must match the successor table")
        if np.any(succ < 0) or np.any(succ >= states):
            raise ParameterError("successor entries must be valid state indices")
        if np.any(sig < 0) or not np.all(np.isfinite(sig)):
            raise ParameterError("state measures must be finite and nonnegative")
        if np.any(rho < 0) or not np.all(np.isfinite(rho)):
            raise ParameterError("input measures must be finite and nonnegative")
        if not np.any(sig == 0.0):
            raise ParameterError("at least one state must have measure zero")
        object.__setattr__(self, "successor", succ)
        object.__setattr__(self, "state_measure", sig)
        object.__setattr__(self, "input_measure", rho)

    @property
    def num_states(self) -> int:
        return self.successor.shape[0]

    @property
    def num_inputs(self) -> int:
        return self.successor.shape[1]

    def to_control_system(self) -> ControlSystem:
        succ, sig, rho = self.successor, self.state_measure, self.input_measure
        return ControlSystem(
            transition=lambda x, u: int(succ[int(x), int(u)]),
            state_measure=lambda x: float(sig[int(x)]),
            input_measure=lambda u: float(rho[int(u)]),
            state_info="finite state index",
            input_info="finite input index",
        )

    def to_json(self) -> dict:
        return {
            "kind": "finite_system",
            "successor": self.successor.tolist(),
            "state_measure": self.state_measure.tolist(),
            "input_measure": self.input_measure.tolist(),
        }

    @staticmethod
    def from_json(obj: dict) -> "FiniteSystem":
        return FiniteSystem(
            successor=np.asarray(obj["successor"], dtype=int),
            state_measure=np.asarray(obj["state_measure"], dtype=float),
            input_measure=np.asarray(obj["input_measure"], dtype=float),
        )


def _cost_table(fsys: FiniteSystem, cost: StageCost) -> np.ndarray:
    table = np.empty((fsys.num_states, fsys.num_inputs))
    for x in range(fsys.num_states):
        for u in range(fsys.num_inputs):
            table[x, u] = cost.of_measures(
                float(fsys.state_measure[x]), float(fsys.input_measure[u])
            )
    return table


def zero_cost_core(fsys: FiniteSystem, cost: StageCost) -> np.ndarray:
    """States that can ride zero-cost edges forever (boolean mask).

    Greatest fixed point: repeatedly drop states without a zero-cost
    edge back into the surviving set.
    """
    table = _cost_table(fsys, cost)
    core = np.ones(fsys.num_states, dtype=bool)
    while True:
        stays = np.zeros_like(core)
        for x in np.flatnonzero(core):
            row = fsys.successor[x]
            stays[x] = bool(np.any((table[x] == 0.0) & core[row]))
        if np.array_equal(stays, core):
            return core
        core = stays


def reaches_core(fsys: FiniteSystem, core: np.ndarray) -> np.ndarray:
    """States with some path into the core (boolean mask)."""
    reach = core.copy()
    while True:
        grown = reach.copy()
        for x in np.flatnonzero(~reach):
            grown[x] = bool(np.any(reach[fsys.successor[x]]))
        if np.array_equal(grown, reach):
            return reach
        reach = grown


@dataclass(frozen=True, eq=False)
class ValueTable:
    """Converged cheapest total costs with a greedy policy.

    ``values`` is infinite on states that cannot keep their total
    cost finite.  ``greedy[x]`` is the lowest input index minimizing
    stage cost plus successor value.
    """

    values: np.ndarray
    greedy: np.ndarray
    iterations: int
    residual: float
    converged: bool
    cost: StageCost

    def to_csv(self, fsys: FiniteSystem, fp) -> None:
        fp.write("state,sigma,value,greedy\r\n")
        for x in range(fsys.num_states):
            value = "inf" if np.isinf(self.values[x]) else _fmt(self.values[x])
            fp.write(f"{x},{_fmt(fsys.state_measure[x])},{value},{int(self.greedy[x])}\r\n")


def value_iterate(
    fsys: FiniteSystem,
    cost: StageCost,
    tol: float = 1e-10,
    max_iter: int = 10000,
) -> ValueTable:
    """Synchronous value iteration from below.

    Values start at zero and rise monotonically, so iteration is
    restricted to states that can reach the zero-cost core; all
    others are infinite outright.  Stops when one sweep moves no
    finite value by more than ``tol``; hitting ``max_iter`` first is
    reported through the ``converged`` flag, not an exception.
    """
    if tol < 0:
        raise ParameterError(f"tolerance must be nonnegative, got {tol!r}")
    table = _cost_table(fsys, cost)
    finite_mask = reaches_core(fsys, zero_cost_core(fsys, cost))

    values = np.where(finite_mask, 0.0, np.inf)
    succ = fsys.successor
    iterations = 0
    residual = np.inf
    converged = False
    while iterations < max_iter:
        candidates = table + values[succ]
        new_values = np.where(finite_mask, np.min(candidates, axis=1), np.inf)
        iterations += 1
        if finite_mask.any():
            residual = float(np.max(np.abs(new_values[finite_mask] - values[finite_mask])))
        else:
            residual = 0.0
        values = new_values
        if residual <= tol:
            converged = True
            break

    cap = DIVERGENCE_FACTOR * max(float(np.max(table)), 1.0)
    values = np.where(values > cap, np.inf, values)
    greedy = np.argmin(table + np.where(np.isfinite(values[succ]), values[succ], np.inf), axis=1)
    return ValueTable(
        values=values,
        greedy=np.asarray(greedy, dtype=int),
        iterations=iterations,
        residual=residual,
        converged=converged,
        cost=cost,
    )


def greedy_policy(vt: ValueTable, fsys: FiniteSystem, prefix_len: int = 512) -> PolicyOracle:
    """Follow the greedy input table from a starting state index."""
    succ, greedy = fsys.successor, vt.greedy

    def prefix(x):
        state = int(x)
        controls = []
        for _ in range(prefix_len):
            u = int(greedy[state])
            controls.append(u)
            state = int(succ[state, u])
        return controls

    return PolicyOracle(prefix=prefix, length=prefix_len, tail=TAIL_REPEAT, ref="greedy")


def extract_ucc(
    vt: ValueTable,
    fsys: FiniteSystem,
    margin: float = 1.5,
    prefix_len: int = 512,
) -> UCCCert:
    """Package a converged value table as a total-cost certificate.

    The cost bound is a strictly increasing envelope over the
    per-measure-level maxima of ``margin * value``; states sharing a
    measure level share the larger value.  Requires finite values
    everywhere and zero values on zero-measure states, otherwise the
    envelope cannot both vanish at zero and dominate.
    """
    if not vt.converged:
        raise ParameterError("value table did not converge; refusing to certify")
    if margin < 1.0:
        raise ParameterError(f"margin must be at least 1, got {margin!r}")
    sig = fsys.state_measure
    values = vt.values
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        x = int(bad[0])
        raise EnvelopeError(
            f"state {x} (measure {sig[x]:g}) has no finite total cost; "
            "restrict the system to states that can reach the zero-cost core"
        )
    bad = np.flatnonzero((sig == 0.0) & (values > 0.0))
    if bad.size:
        x = int(bad[0])
        raise EnvelopeError(
            f"state {x} has measure 0 but total cost {values[x]:g}; "
            "a strictly increasing bound through the origin cannot dominate it"
        )

    positive = sig > 0.0
    if not np.any(positive):
        bound = identity()
    else:
        knots = np.unique(sig[positive])
        peaks = np.array([np.max(values[sig == k]) for k in knots])
        bound = strict_table(knots, margin * peaks + 1e-9 * knots)

    states = fsys.num_states
    return UCCCert(
        stage_cost=vt.cost,
        cost_bound=bound,
        domain=lambda x: 0 <= int(x) < states,
        policy=greedy_policy(vt, fsys, prefix_len),
        forward_invariant=True,
    )


def brute_force_values(fsys: FiniteSystem, cost: StageCost, depth: int = 8) -> np.ndarray:
    """Cheapest cost over all input sequences of the given depth.

    Sequences must end inside the zero-cost core so the remaining
    infinite tail is free; all others count as infinite.  Exponential
    in ``depth``, intended only as an independent check on tiny
    systems.
    """
    if fsys.num_inputs ** depth > 2 ** 20:
        raise ParameterError("enumeration would be too large; shrink depth or the system")
    table = _cost_table(fsys, cost)
    core = zero_cost_core(fsys, cost)
    best = np.full(fsys.num_states, np.inf)
    for seq in product(range(fsys.num_inputs), repeat=depth):
        for x0 in range(fsys.num_states):
            state = x0
            total = 0.0
            for u in seq:
                total += table[state, u]
                state = int(fsys.successor[state, u])
            if core[state]:
                best[x0] = min(best[x0], total)
    return best


def discretize_scalar(
    step,
    state_points,
    input_points,
    state_measure=abs,
    input_measure=abs,
) -> FiniteSystem:
    """Snap a scalar map onto finite grids by nearest neighbor.

    ``step(x, u)`` is evaluated on the grid cross product and its
    result snapped to the nearest state grid point (clamped at the
    ends).  The state grid must contain a zero-measure point.
    """
    xs = np.asarray(state_points, dtype=float)
    us = np.asarray(input_points, dtype=float)
    if xs.ndim != 1 or us.ndim != 1 or xs.size < 1 or us.size < 1:
        raise ParameterError("grids must be one-dimensional and nonempty")
    if np.any(np.diff(xs) <= 0):
        raise ParameterError("state grid must be strictly increasing")
    succ = np.empty((xs.size, us.size), dtype=int)
    for i, x in enumerate(xs):
        for j, u in enumerate(us):
            target = float(step(x, u))
            k = int(np.searchsorted(xs, target))
            if k <= 0:
                snapped = 0
            elif k >= xs.size:
                snapped = xs.size - 1
            else:
                snapped = k if (xs[k] - target) <= (target - xs[k - 1]) else k - 1
            succ[i, j] = snapped
    return FiniteSystem(
        successor=succ,
        state_measure=np.array([float(state_measure(x)) for x in xs]),
        input_measure=np.array([float(input_measure(u)) for u in us]),
    )
