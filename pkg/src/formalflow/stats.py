"""Rank correlations and inter-judge agreement statistics.

Coefficients are computed directly from their definitions (average ranks
for ties). p-values use the standard approximations: a t reference
distribution for Pearson and Spearman (n >= 4), a normal approximation for
Kendall, and optionally an exact permutation test for n <= 8, where the
asymptotics are meaningless.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import permutations

import numpy as np
from scipy.stats import norm as _norm
from scipy.stats import t as _student_t

CORRELATION_KINDS = ("spearman", "pearson", "kendall")


class DegenerateInput(Exception):
    pass


class ZeroMarginal(Exception):
    pass


def average_ranks(values) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    arr = np.asarray(values, dtype=float)
    order = np.argsort(arr, kind="mergesort")
    ranks = np.empty(len(arr), dtype=float)
    i = 0
    while i < len(arr):
        j = i
        while j + 1 < len(arr) and arr[order[j + 1]] == arr[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def _check(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y):
        raise DegenerateInput(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 3:
        raise DegenerateInput(f"need at least 3 points, got {len(x)}")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise DegenerateInput("constant vector has no defined rank correlation")
    return x, y


def _pearson_r(x: np.ndarray, y: np.ndarray) -> float:
    dx = x - x.mean()
    dy = y - y.mean()
    denom = math.sqrt(float(np.dot(dx, dx)) * float(np.dot(dy, dy)))
    return float(np.dot(dx, dy)) / denom


def _t_approx_p(r: float, n: int) -> float:
    """Two-sided p for a correlation coefficient via the t distribution."""
    if n < 4:
        return float("nan")
    r = max(min(r, 1.0), -1.0)
    if abs(r) == 1.0:
        return 0.0
    t_stat = r * math.sqrt((n - 2) / (1 - r * r))
    return float(2 * _student_t.sf(abs(t_stat), df=n - 2))


def pearson(x, y) -> tuple[float, float]:
    x, y = _check(x, y)
    r = _pearson_r(x, y)
    return r, _t_approx_p(r, len(x))


def spearman(x, y) -> tuple[float, float]:
    x, y = _check(x, y)
    rho = _pearson_r(average_ranks(x), average_ranks(y))
    return rho, _t_approx_p(rho, len(x))


def _kendall_tau_b(x: np.ndarray, y: np.ndarray) -> float:
    n = len(x)
    concordant = discordant = 0
    ties_x = ties_y = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx = x[i] - x[j]
            dy = y[i] - y[j]
            if dx == 0 and dy == 0:
                ties_x += 1
                ties_y += 1
            elif dx == 0:
                ties_x += 1
            elif dy == 0:
                ties_y += 1
            elif dx * dy > 0:
                concordant += 1
            else:
                discordant += 1
    n0 = n * (n - 1) / 2
    denom = math.sqrt((n0 - ties_x) * (n0 - ties_y))
    if denom == 0:
        raise DegenerateInput("all pairs tied")
    return (concordant - discordant) / denom


def kendall(x, y) -> tuple[float, float]:
    x, y = _check(x, y)
    tau = _kendall_tau_b(x, y)
    n = len(x)
    # Normal approximation with the no-tie null variance.
    var = 2 * (2 * n + 5) / (9 * n * (n - 1))
    z = tau / math.sqrt(var)
    return tau, float(2 * _norm.sf(abs(z)))


_COEFFICIENTS = {
    "pearson": lambda x, y: _pearson_r(x, y),
    "spearman": lambda x, y: _pearson_r(average_ranks(x), average_ranks(y)),
    "kendall": _kendall_tau_b,
}


def exact_permutation_p(kind: str, x, y) -> float:
    """Exact two-sided permutation p-value; only sensible for tiny n."""
    x, y = _check(x, y)
    if len(x) > 8:
        raise DegenerateInput("exact permutation test limited to n <= 8")
    stat = _COEFFICIENTS[kind]
    observed = abs(stat(x, y))
    count = total = 0
    for perm in permutations(range(len(y))):
        total += 1
        if abs(stat(x, y[list(perm)])) >= observed - 1e-12:
            count += 1
    return count / total


def rank_correlation(kind: str, x, y, exact: bool = False) -> tuple[float, float]:
    """Dispatch to one of spearman / pearson / kendall.

    ``exact=True`` replaces the approximate p-value with an exact
    permutation test (n <= 8 only).
    """
    if kind not in CORRELATION_KINDS:
        raise ValueError(f"unknown correlation kind {kind!r}; want one of {CORRELATION_KINDS}")
    func = {"spearman": spearman, "pearson": pearson, "kendall": kendall}[kind]
    coefficient, p = func(x, y)
    if exact:
        p = exact_permutation_p(kind, x, y)
    return coefficient, p


@dataclass(frozen=True)
class ContingencyTable2x2:
    """Paired binary judgments: a = both positive, b = first only,
    c = second only, d = both negative."""

    a: int
    b: int
    c: int
    d: int

    def __post_init__(self):
        if min(self.a, self.b, self.c, self.d) < 0:
            raise ValueError("cell counts must be nonnegative")
        if self.n == 0:
            raise ValueError("table must contain at least one observation")

    @property
    def n(self) -> int:
        return self.a + self.b + self.c + self.d

    @classmethod
    def from_pairs(cls, first: list[int], second: list[int]) -> "ContingencyTable2x2":
        if len(first) != len(second):
            raise ValueError("paired judgments must have equal length")
        a = sum(1 for f, s in zip(first, second) if f and s)
        b = sum(1 for f, s in zip(first, second) if f and not s)
        c = sum(1 for f, s in zip(first, second) if not f and s)
        d = sum(1 for f, s in zip(first, second) if not f and not s)
        return cls(a, b, c, d)


def phi_coefficient(table: ContingencyTable2x2) -> float:
    """(ad - bc) / sqrt((a+b)(c+d)(a+c)(b+d)); undefined on zero marginals."""
    a, b, c, d = table.a, table.b, table.c, table.d
    marginals = [(a + b), (c + d), (a + c), (b + d)]
    if any(m == 0 for m in marginals):
        raise ZeroMarginal(f"zero marginal in table {table}")
    return (a * d - b * c) / math.sqrt(math.prod(marginals))
