"""Independent reference implementations used to check the library.

Everything here is deliberately written the slow, obvious way (quadrature,
explicit covariance algebra, brute-force enumeration) so that agreement
with the fast closed forms in the package is meaningful.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.integrate import quad

from vlcmap.rates import RateModel

LN2 = math.log(2.0)


# ---------------------------------------------------------------------------
# Truncated-Gaussian moments by quadrature


def tg_quadrature(mu: float, nu: float, peak: float):
    """(rho, mean, var, phi) of a Gaussian truncated to [0, peak]."""

    def density(x):
        return math.exp(-0.5 * ((x - mu) / nu) ** 2) / (nu * math.sqrt(2 * math.pi))

    mass, _ = quad(density, 0.0, peak, limit=200)
    rho = 1.0 / mass

    def f(x):
        return rho * density(x)

    mean, _ = quad(lambda x: x * f(x), 0.0, peak, limit=200)
    var, _ = quad(lambda x: (x - mean) ** 2 * f(x), 0.0, peak, limit=200)
    entropy, _ = quad(lambda x: -f(x) * math.log(f(x)), 0.0, peak, limit=200)
    phi = 0.5 * math.log(2 * math.pi * math.e * nu**2) - entropy
    return rho, mean, var, phi


# ---------------------------------------------------------------------------
# Achievable rate through explicit covariance algebra


def covariance_rate(model: RateModel, signal, noise) -> float:
    """Stage-by-stage mutual information from assembled joint covariances.

    For each signal layer (ascending) the observation is formed from the
    full joint covariance of all layer inputs plus the channel noise; the
    conditional variance comes from a Schur complement computed with
    generic matrix algebra rather than the package's suffix-sum shortcut.
    """
    sig = sorted(signal)
    noi = sorted(noise)
    L = model.n_layers
    C = np.diag(model.var)  # independent layer inputs
    total = 0.0
    for m_idx, m in enumerate(sig):
        # Layers still treated as noise at this stage.
        active = sig[m_idx:] + noi
        w = np.zeros(L)
        w[active] = model.gains[active]
        var_y = float(w @ C @ w) + model.noise_var
        cov_xy = float(C[m] @ w)
        joint = np.array([[C[m, m], cov_xy], [cov_xy, var_y]])
        cond = joint[0, 0] - joint[0, 1] * float(
            np.linalg.solve(joint[1:, 1:], joint[1:, 0])[0]
        )
        h_x = 0.5 * math.log(2 * math.pi * math.e * model.nu2[m]) - model.phi[m]
        h_x_given_y = 0.5 * math.log(2 * math.pi * math.e * float(cond))
        total += h_x - h_x_given_y
    return total / LN2


# ---------------------------------------------------------------------------
# Brute force over group-ordered partitions


def ordered_partitions(items, tau):
    """All ordered partitions of ``items`` into blocks of size <= tau."""
    items = list(items)
    if not items:
        yield []
        return
    first = items[0]
    rest = items[1:]
    for size in range(0, min(tau, len(items))):
        for extra in itertools.combinations(rest, size):
            block = tuple(sorted((first,) + extra))
            remaining = [x for x in rest if x not in extra]
            for tail in ordered_partitions(remaining, tau):
                yield [block] + tail
                # The block can also appear later in the order: generate by
                # inserting it at every position of the tail.
                for pos in range(len(tail)):
                    yield tail[: pos + 1] + [block] + tail[pos + 1 :]


def naive_rate(model: RateModel, signal, noise, clamp=True) -> float:
    """Plain-loop version of the closed-form sum rate (bits)."""
    sig = sorted(signal)
    nats = 0.0
    for i, m in enumerate(sig):
        denom = model.noise_var
        for j in sig[i:]:
            denom += model.gains[j] ** 2 * model.var[j]
        for g in noise:
            denom += model.gains[g] ** 2 * model.var[g]
        cond = model.var[m] - (model.gains[m] ** 2 * model.var[m] ** 2) / denom
        nats += 0.5 * (math.log(model.nu2[m]) - math.log(cond)) - model.phi[m]
    rate = nats / LN2
    if clamp and rate < 0.0:
        return 0.0
    return rate


def rates_for_order(model: RateModel, groups, clamp=True) -> dict[int, float]:
    """Per-layer rates of a fixed decoding order, the slow way.

    Stage m's group gets the worst per-layer naive rate over its non-empty
    subsets with all later groups as noise.
    """
    out: dict[int, float] = {}
    for m, grp in enumerate(groups):
        later = [k for g in groups[m + 1 :] for k in g]
        best = math.inf
        for size in range(1, len(grp) + 1):
            for sub in itertools.combinations(grp, size):
                val = naive_rate(model, sub, later, clamp=clamp) / len(sub)
                best = min(best, val)
        for k in grp:
            out[k] = best
    return out


def best_min_rate(model: RateModel, layers, tau, clamp=True) -> float:
    """Max over group-ordered partitions of the minimum per-layer rate."""
    best = -math.inf
    for groups in ordered_partitions(sorted(layers), tau):
        rates = rates_for_order(model, groups, clamp=clamp)
        best = max(best, min(rates.values()))
    return best


def exhaustive_assignments(candidates: dict[int, list[int]]):
    """All injective user->transmitter choices (users may stay unassigned
    only when every candidate is taken)."""
    users = sorted(candidates)

    def rec(idx, used, cur):
        if idx == len(users):
            yield dict(cur)
            return
        j = users[idx]
        free = [tx for tx in candidates[j] if tx not in used]
        if not free:
            yield from rec(idx + 1, used, cur)
            return
        for tx in free:
            used.add(tx)
            cur[j] = tx
            yield from rec(idx + 1, used, cur)
            del cur[j]
            used.remove(tx)

    yield from rec(0, set(), {})
