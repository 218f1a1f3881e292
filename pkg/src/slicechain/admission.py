"""Revenue-maximizing admission of slice requests under per-type capacity.

A request is admitted only as a whole, so the per-type assignment matrix
collapses onto the admission vector and the problem is a multidimensional
0/1 knapsack. Solvers work on the admission vector and expand the
assignment matrix on output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

import numpy as np

from .contracts import GeneralRequest

GREEDY_EPS = 1e-9
BRUTE_FORCE_MAX_J = 20


@dataclass(frozen=True)
class AdmissionInstance:
    demands: tuple[tuple[float, ...], ...]   # J x I
    prices: tuple[tuple[float, ...], ...]    # J x I
    capacity: tuple[float, ...]              # I
    revenues: tuple[float, ...] = None       # J, derived from prices when omitted

    def __post_init__(self):
        demands = tuple(tuple(row) for row in self.demands)
        prices = tuple(tuple(row) for row in self.prices)
        capacity = tuple(self.capacity)
        object.__setattr__(self, "demands", demands)
        object.__setattr__(self, "prices", prices)
        object.__setattr__(self, "capacity", capacity)
        if not capacity:
            raise ValueError("need at least one resource type")
        if len(prices) != len(demands):
            raise ValueError("demands and prices must have the same number of rows")
        for row in demands + prices:
            if len(row) != len(capacity):
                raise ValueError("every row must have one entry per resource type")
        if any(v < 0 for row in demands + prices for v in row) or any(r < 0 for r in capacity):
            raise ValueError("all entries must be non-negative")
        derived = tuple(sum(row) for row in prices)
        if self.revenues is None:
            object.__setattr__(self, "revenues", derived)
        elif tuple(self.revenues) != derived:
            raise ValueError("revenues must equal the per-request sum of prices")
        else:
            object.__setattr__(self, "revenues", tuple(self.revenues))

    @property
    def J(self) -> int:
        return len(self.demands)

    @property
    def I(self) -> int:
        return len(self.capacity)

    def feasible(self, y: Sequence[int]) -> bool:
        for i in range(self.I):
            if sum(self.demands[j][i] for j in range(self.J) if y[j]) > self.capacity[i]:
                return False
        return True

    def objective(self, y: Sequence[int]) -> float:
        return sum(self.revenues[j] for j in range(self.J) if y[j])


@dataclass(frozen=True)
class AdmissionDecision:
    x: tuple[tuple[int, ...], ...]
    y: tuple[int, ...]
    objective: float

    @classmethod
    def from_admitted(cls, inst: AdmissionInstance, y: Sequence[int]) -> "AdmissionDecision":
        y = tuple(1 if v else 0 for v in y)
        x = tuple((v,) * inst.I for v in y)
        return cls(x, y, inst.objective(y))

    def check(self, inst: AdmissionInstance) -> None:
        """Raise AssertionError unless the decision satisfies every constraint."""
        assert len(self.y) == inst.J and len(self.x) == inst.J
        for j, row in enumerate(self.x):
            assert sum(row) == inst.I * self.y[j], f"request {j} partially assigned"
        for i in range(inst.I):
            used = sum(inst.demands[j][i] * self.x[j][i] for j in range(inst.J))
            assert used <= inst.capacity[i], f"capacity of type {i} exceeded"
        assert self.objective == inst.objective(self.y)


def _fits_alone(inst: AdmissionInstance, j: int) -> bool:
    return all(inst.demands[j][i] <= inst.capacity[i] for i in range(inst.I))


def _ratio(value: float, weight: float) -> float:
    return math.inf if weight == 0 else value / weight


def _density(inst: AdmissionInstance, j: int) -> float:
    load = 0.0
    for d, r in zip(inst.demands[j], inst.capacity):
        if d == 0:
            continue
        if r == 0:
            return -math.inf
        load += d / r
    return inst.revenues[j] / (load + GREEDY_EPS)


def solve_greedy(inst: AdmissionInstance) -> AdmissionDecision:
    order = sorted(range(inst.J), key=lambda j: (-_density(inst, j), j))
    slack = list(inst.capacity)
    y = [0] * inst.J
    for j in order:
        if all(inst.demands[j][i] <= slack[i] for i in range(inst.I)):
            y[j] = 1
            for i in range(inst.I):
                slack[i] -= inst.demands[j][i]
    return AdmissionDecision.from_admitted(inst, y)


def solve_exact(inst: AdmissionInstance) -> AdmissionDecision:
    """Branch and bound; the bound is the tightest single-type fractional knapsack."""
    I = inst.I
    y = [0] * inst.J
    slack = list(inst.capacity)
    items = []
    for j in range(inst.J):
        if not _fits_alone(inst, j):
            continue
        if all(d == 0 for d in inst.demands[j]):
            y[j] = 1  # costs nothing, never hurts
        elif inst.revenues[j] > 0:
            items.append(j)
    items.sort(key=lambda j: (-_density(inst, j), j))
    n = len(items)
    demand = [inst.demands[j] for j in items]
    value = [inst.revenues[j] for j in items]
    per_type_order = [
        sorted(range(n), key=lambda k: (-_ratio(value[k], demand[k][i]), k)) for i in range(I)
    ]

    def bound(depth: int, slack: list, acc: float) -> float:
        best = math.inf
        for i in range(I):
            cap = slack[i]
            total = 0.0
            for k in per_type_order[i]:
                if k < depth:
                    continue
                d = demand[k][i]
                if d <= cap:
                    cap -= d
                    total += value[k]
                else:
                    total += value[k] * cap / d
                    break
            best = min(best, total)
        return acc + best

    incumbent = solve_greedy(inst)
    best_pick = [k for k in range(n) if incumbent.y[items[k]]]
    best_value = sum(value[k] for k in best_pick)
    chosen: list[int] = []

    def search(depth: int, acc: float) -> None:
        nonlocal best_value, best_pick
        if acc > best_value:
            best_value = acc
            best_pick = list(chosen)
        if depth == n:
            return
        tol = 1e-9 * max(1.0, abs(best_value))
        if bound(depth, slack, acc) <= best_value + tol:
            return
        if all(demand[depth][i] <= slack[i] for i in range(I)):
            for i in range(I):
                slack[i] -= demand[depth][i]
            chosen.append(depth)
            search(depth + 1, acc + value[depth])
            chosen.pop()
            for i in range(I):
                slack[i] += demand[depth][i]
        search(depth + 1, acc)

    search(0, 0)
    for k in best_pick:
        y[items[k]] = 1
    return AdmissionDecision.from_admitted(inst, y)


def brute_force_oracle(inst: AdmissionInstance) -> float:
    """Maximum feasible objective by enumerating all 2^J admission vectors."""
    if inst.J > BRUTE_FORCE_MAX_J:
        raise ValueError(f"brute force refuses J={inst.J} > {BRUTE_FORCE_MAX_J}")
    exact = all(isinstance(v, (int, np.integer)) for row in inst.demands + inst.prices for v in row) \
        and all(isinstance(v, (int, np.integer)) for v in inst.capacity)
    dtype = np.int64 if exact else np.float64
    loads = np.zeros((1, inst.I), dtype=dtype)
    gains = np.zeros(1, dtype=dtype)
    for j in range(inst.J):
        loads = np.concatenate([loads, loads + np.asarray(inst.demands[j], dtype=dtype)])
        gains = np.concatenate([gains, gains + dtype(inst.revenues[j])])
    ok = np.all(loads <= np.asarray(inst.capacity, dtype=dtype), axis=1)
    best = gains[ok].max()
    return int(best) if exact else float(best)


# --------------------------------------------------------------------------
# Structured text import/export


def instance_from_requests(requests: Iterable[GeneralRequest], capacity: Sequence[float]) -> AdmissionInstance:
    requests = list(requests)
    return AdmissionInstance(tuple(r.demands for r in requests), tuple(r.prices for r in requests),
                             tuple(capacity))


def _num(token: str) -> float:
    try:
        return int(token)
    except ValueError:
        return float(token)


def write_instance(inst: AdmissionInstance, fh: TextIO) -> None:
    fh.write(f"{inst.I} {inst.J}\n")
    fh.write(" ".join(str(v) for v in inst.capacity) + "\n")
    for row in inst.demands:
        fh.write(" ".join(str(v) for v in row) + "\n")
    for row in inst.prices:
        fh.write(" ".join(str(v) for v in row) + "\n")


def read_instance(text: str) -> AdmissionInstance:
    """Parse ``I J``, the capacity line, J demand rows, then J price rows.

    Blank lines and ``#`` comments are ignored.
    """
    rows = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            rows.append((lineno, [_num(t) for t in line.split()]))
        except ValueError:
            raise ValueError(f"line {lineno}: not a list of numbers") from None
    if not rows:
        raise ValueError("empty instance")
    lineno, head = rows[0]
    if len(head) != 2 or not all(isinstance(v, int) for v in head):
        raise ValueError(f"line {lineno}: header must be 'I J'")
    I, J = head
    if len(rows) != 2 + 2 * J:
        raise ValueError(f"expected {2 + 2 * J} data lines, found {len(rows)}")
    for lineno, row in rows[1:]:
        if len(row) != I:
            raise ValueError(f"line {lineno}: expected {I} values, found {len(row)}")
    capacity = tuple(rows[1][1])
    demands = tuple(tuple(r) for _, r in rows[2:2 + J])
    prices = tuple(tuple(r) for _, r in rows[2 + J:])
    return AdmissionInstance(demands, prices, capacity)
