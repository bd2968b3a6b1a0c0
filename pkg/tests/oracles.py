"""Independent reference implementations used only by the tests."""

from fractions import Fraction
from itertools import combinations
from math import factorial

import numpy as np


def brute_force_projection(atoms, probs, support_atoms):
    """Split each atom's mass between its two neighbouring support points, one atom at a time."""
    z = list(support_atoms)
    out = [0.0] * len(z)
    for x, p in zip(atoms, probs):
        if x <= z[0]:
            out[0] += p
            continue
        if x >= z[-1]:
            out[-1] += p
            continue
        for i in range(len(z) - 1):
            if z[i] <= x <= z[i + 1]:
                if x == z[i]:
                    out[i] += p
                elif x == z[i + 1]:
                    out[i + 1] += p
                else:
                    w_hi = (x - z[i]) / (z[i + 1] - z[i])
                    out[i] += p * (1.0 - w_hi)
                    out[i + 1] += p * w_hi
                break
    return np.array(out)


def shapley_by_formula(players, value):
    """Weighted marginal contributions over all subsets (no permutations)."""
    n = len(players)
    phi = {}
    for p in players:
        others = [q for q in players if q != p]
        total = Fraction(0)
        for k in range(n):
            for subset in combinations(others, k):
                weight = Fraction(factorial(k) * factorial(n - k - 1), factorial(n))
                total += weight * (Fraction(value(frozenset(subset) | {p})) - Fraction(value(frozenset(subset))))
        phi[p] = total
    return phi


def discounted_sum(rewards, discount, tail=0.0):
    """Direct double loop, O(n^2)."""
    n = len(rewards)
    out = []
    for t in range(n):
        g = sum(discount ** (k - t) * rewards[k] for k in range(t, n))
        out.append(g + discount ** (n - t) * tail)
    return np.array(out)


def shapley_by_orderings(players, value):
    """Average marginal contribution over all n! arrival orders."""
    from itertools import permutations

    totals = {p: Fraction(0) for p in players}
    orders = list(permutations(players))
    for order in orders:
        seen = frozenset()
        for p in order:
            totals[p] += Fraction(value(seen | {p})) - Fraction(value(seen))
            seen = seen | {p}
    return {p: t / len(orders) for p, t in totals.items()}


def bootstrap_reference(samples, n_resamples, confidence, seed):
    """Resample one row at a time from the same generator stream, percentile interval."""
    rng = np.random.default_rng(seed)
    x = list(samples)
    n = len(x)
    draws = rng.integers(0, n, size=(n_resamples, n))
    means = sorted(sum(x[i] for i in row) / n for row in draws)
    tail = (1.0 - confidence) / 2.0

    def pct(q):
        pos = q * (len(means) - 1)
        lo = int(np.floor(pos))
        hi = min(lo + 1, len(means) - 1)
        return means[lo] + (means[hi] - means[lo]) * (pos - lo)

    return pct(tail), pct(1.0 - tail)
