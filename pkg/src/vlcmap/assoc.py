"""Transmitter-user association and iterative rate refinement.

Each user is matched to exactly one transmitter (a transmitter serves at
most one user); the global per-layer rate vector is the elementwise minimum
of the users' local vectors, with layers a user discards (decoded after its
own signal completes, or undetectable) set to +inf so they do not bind.  The
0-1 assignment maximizing the sum rate is searched with a genetic algorithm;
a second phase redistributes margins with the iterative update pass.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .cpgd import TIE_RTOL, DecodingOrder, _tie_argmin, greedy_order
from .decmap import DecodingMap
from .errors import InfeasibleError, InvalidParameterError
from .rates import LN2, RateModel, model_at_position, rate_margin, subsets_in_bitmask_order
from .signaling import LayerTable


# ---------------------------------------------------------------------------
# Decoding-order providers


class MapLookupSolver:
    """Order lookup on a prebuilt decoding map (positions on the map plane)."""

    def __init__(self, dmap: DecodingMap):
        self.dmap = dmap

    def order_at(self, position) -> DecodingOrder:
        return self.dmap.cell_at(position[0], position[1]).order


class DirectSolver:
    """Greedy solve at arbitrary 3D positions, with caching."""

    def __init__(self, scene, table: LayerTable, filter_index: int, tau: int = 1):
        self.scene = scene
        self.table = table
        self.filter_index = filter_index
        self.tau = tau
        self._cache: dict[tuple[float, ...], DecodingOrder] = {}

    def model_at(self, position) -> RateModel:
        return model_at_position(self.scene, self.table, position, self.filter_index)

    def order_at(self, position) -> DecodingOrder:
        key = tuple(float(p) for p in position)
        if key not in self._cache:
            self._cache[key] = greedy_order(
                self.model_at(position), tau=self.tau, position=key
            )
        return self._cache[key]


# ---------------------------------------------------------------------------
# Truncation and the global rate fold


def truncate_depth(
    order: DecodingOrder, table: LayerTable, tx: int, rtol: float = 1e-9
) -> int:
    """Last decoding stage (0-based) the user decodes for the given transmitter.

    The base depth is the last stage containing one of the transmitter's
    layers; raises if the transmitter is undetectable at the order's position.
    Exactly tied stages have no canonical sequence (the greedy tie-break is
    by layer id, which reflections relabel), so the depth extends through any
    following stages whose rate ties the base stage's — this keeps the kept
    prefix invariant under the scene's symmetries.
    """
    depth = -1
    for m, grp in enumerate(order.groups):
        if any(table.tx[k] == tx for k in grp):
            depth = m
    if depth < 0:
        raise InfeasibleError(f"transmitter {tx} undetectable in this order")
    own_rate = float(order.rates[order.groups[depth][0]])
    tol = rtol * max(abs(own_rate), 1.0)
    while depth + 1 < len(order.groups):
        nxt = float(order.rates[order.groups[depth + 1][0]])
        if abs(nxt - own_rate) > tol:
            break
        depth += 1
    return depth


def local_rate_vector(order: DecodingOrder, table: LayerTable, tx: int) -> np.ndarray:
    """User's local per-layer rates with discarded layers at +inf.

    Layers in stages after the truncation depth and layers undetectable at
    the position never bind the global fold.
    """
    out = np.full(table.n_layers, np.inf)
    depth = truncate_depth(order, table, tx)
    for grp in order.groups[: depth + 1]:
        for k in grp:
            out[k] = order.rates[k]
    return out


def global_rates(local_vectors: list[np.ndarray]) -> np.ndarray:
    """Elementwise minimum fold of the users' local rate vectors."""
    if not local_vectors:
        raise InvalidParameterError("need at least one local vector")
    return np.min(np.stack(local_vectors), axis=0)


def assigned_sum_rate(rbar: np.ndarray, table: LayerTable, assignment) -> float:
    """Sum-rate objective: assigned transmitters' layers only."""
    total = 0.0
    for tx in assignment:
        if tx < 0:
            continue
        for k in np.flatnonzero(table.tx == tx):
            r = rbar[k]
            if math.isfinite(r):
                total += float(r)
    return total


def sentinel_rate_vector(rbar: np.ndarray) -> np.ndarray:
    """1-based copy of a global rate vector with the index-0 zero sentinel."""
    out = np.zeros(rbar.size + 1)
    out[1:] = rbar
    return out


# ---------------------------------------------------------------------------
# Association search


@dataclass
class GAConfig:
    population: int = 64
    generations: int = 200
    crossover_rate: float = 0.8
    mutation_rate: float = 0.05
    elitism: int = 2
    # Fresh random genomes injected per generation; keeps the population from
    # fixating on a local optimum of the fold-coupled objective.
    immigrants: int = 4
    # Independent GA runs; the best final answer wins.  Restarts tame the
    # run-to-run variance of the search on large candidate spaces.
    restarts: int = 3
    seed: int = 0
    # When the number of candidate choice combinations is at most this, the
    # GA answer is cross-checked against brute force and the better one wins.
    exhaustive_limit: int = 5000

    def validate(self) -> None:
        if self.population < 2 or self.generations < 1 or self.elitism < 0:
            raise InvalidParameterError("bad GA sizes")
        if self.immigrants < 0 or self.elitism + self.immigrants > self.population:
            raise InvalidParameterError("elitism + immigrants exceed the population")
        if self.restarts < 1:
            raise InvalidParameterError("need at least one GA run")
        for r in (self.crossover_rate, self.mutation_rate):
            if not 0.0 <= r <= 1.0:
                raise InvalidParameterError("GA rates must be in [0, 1]")


@dataclass
class Association:
    """Result of the assignment search."""

    assignment: np.ndarray          # (N_r,) transmitter per user, -1 = unserved
    rbar: np.ndarray                # (L,) global rates, +inf where unbound
    objective: float
    orders: list[DecodingOrder]     # per-user decoding orders used
    depths: np.ndarray              # (N_r,) truncation stage per user, -1 unserved

    def eta_matrix(self, n_tx: int) -> np.ndarray:
        out = np.zeros((self.assignment.size, n_tx), dtype=int)
        for j, tx in enumerate(self.assignment):
            if tx >= 0:
                out[j, tx] = 1
        return out


class _AssignmentProblem:
    """Per-user candidate transmitters and precomputed discarded-rate rows."""

    def __init__(self, solver, table: LayerTable, user_positions):
        self.table = table
        self.orders = [solver.order_at(p) for p in user_positions]
        self.candidates: list[list[int]] = []
        self.local: list[np.ndarray] = []  # (n_cand, L) per user
        self.cand_sum: list[np.ndarray] = []
        for order in self.orders:
            if order.outage:
                self.candidates.append([])
                self.local.append(np.empty((0, table.n_layers)))
                self.cand_sum.append(np.empty(0))
                continue
            txs = sorted({int(table.tx[k]) for k in order.detectable})
            rows = np.stack([local_rate_vector(order, table, tx) for tx in txs])
            self.candidates.append(txs)
            self.local.append(rows)
            sums = np.empty(len(txs))
            for c, tx in enumerate(txs):
                own = np.flatnonzero(table.tx == tx)
                sums[c] = rows[c][own][np.isfinite(rows[c][own])].sum()
            self.cand_sum.append(sums)
        self.active = [j for j, c in enumerate(self.candidates) if c]
        if not self.active:
            raise InfeasibleError("all users are in outage")

    def evaluate(self, choice: dict[int, int]) -> tuple[float, np.ndarray]:
        """Objective and global rate vector of a per-user candidate choice."""
        rows = [self.local[j][c] for j, c in choice.items()]
        rbar = np.min(np.stack(rows), axis=0)
        total = 0.0
        for j, c in choice.items():
            tx = self.candidates[j][c]
            own = np.flatnonzero(self.table.tx == tx)
            vals = rbar[own]
            total += float(vals[np.isfinite(vals)].sum())
        return total, rbar

    def repair(self, genome: np.ndarray) -> dict[int, int]:
        """Resolve transmitter conflicts deterministically (first keeps it)."""
        used: set[int] = set()
        choice: dict[int, int] = {}
        for j in self.active:
            cands = self.candidates[j]
            c = int(genome[j]) % len(cands)
            if cands[c] in used:
                # Best own-rate unused candidate; ties toward lower tx index.
                best = None
                for alt in np.argsort(-self.cand_sum[j], kind="stable"):
                    if cands[int(alt)] not in used:
                        best = int(alt)
                        break
                if best is None:
                    continue
                c = best
            used.add(cands[c])
            choice[j] = c
        return choice

    def to_assignment(self, choice: dict[int, int]) -> np.ndarray:
        out = np.full(len(self.candidates), -1, dtype=int)
        for j, c in choice.items():
            out[j] = self.candidates[j][c]
        return out


def exhaustive_association(problem: _AssignmentProblem) -> tuple[float, dict[int, int]]:
    """Brute force over all injective candidate choices (small instances)."""
    best_val, best_choice = -math.inf, None
    users = problem.active

    def rec(idx: int, used: set[int], choice: dict[int, int]):
        nonlocal best_val, best_choice
        if idx == len(users):
            if choice:
                val, _ = problem.evaluate(choice)
                if val > best_val:
                    best_val, best_choice = val, dict(choice)
            return
        j = users[idx]
        assigned_any = False
        for c, tx in enumerate(problem.candidates[j]):
            if tx in used:
                continue
            assigned_any = True
            used.add(tx)
            choice[j] = c
            rec(idx + 1, used, choice)
            del choice[j]
            used.remove(tx)
        if not assigned_any:
            rec(idx + 1, used, choice)

    rec(0, set(), {})
    if best_choice is None:
        raise InfeasibleError("no feasible assignment")
    return best_val, best_choice


def solve_association(
    solver,
    user_positions,
    table: LayerTable,
    ga: GAConfig | None = None,
) -> Association:
    """GA search for the sum-rate-maximizing transmitter-user assignment.

    ``solver`` provides decoding orders per position (map lookup or direct).
    Users in outage are left unserved.  The search is reproducible for a
    fixed seed.
    """
    ga = ga or GAConfig()
    ga.validate()
    problem = _AssignmentProblem(solver, table, user_positions)
    n_users = len(problem.candidates)
    sizes = np.array([max(len(c), 1) for c in problem.candidates])

    def one_run(rng: np.random.Generator) -> tuple[float, dict[int, int]]:
        pop = np.stack([rng.integers(0, sizes) for _ in range(ga.population)])
        fitness = np.empty(ga.population)
        choices: list[dict[int, int]] = [None] * ga.population

        def score(i: int) -> None:
            choices[i] = problem.repair(pop[i])
            fitness[i] = problem.evaluate(choices[i])[0] if choices[i] else -math.inf

        for i in range(ga.population):
            score(i)

        for _ in range(ga.generations):
            elite = np.argsort(-fitness, kind="stable")[: ga.elitism]
            new = [pop[e].copy() for e in elite]
            new.extend(rng.integers(0, sizes) for _ in range(ga.immigrants))
            while len(new) < ga.population:
                a = rng.integers(0, ga.population, 2)
                b = rng.integers(0, ga.population, 2)
                p1 = pop[a[np.argmax(fitness[a])]]
                p2 = pop[b[np.argmax(fitness[b])]]
                child = p1.copy()
                if rng.random() < ga.crossover_rate:
                    mask = rng.random(n_users) < 0.5
                    child[mask] = p2[mask]
                mut = rng.random(n_users) < ga.mutation_rate
                if mut.any():
                    child[mut] = rng.integers(0, sizes)[mut]
                new.append(child)
            pop = np.stack(new)
            for i in range(ga.population):
                score(i)

        best = int(np.argmax(fitness))
        return float(fitness[best]), choices[best]

    val, choice = -math.inf, None
    for r in range(ga.restarts):
        run_val, run_choice = one_run(np.random.default_rng((ga.seed, r)))
        if run_val > val:
            val, choice = run_val, run_choice
    val, rbar = problem.evaluate(choice)

    combos = 1
    for j in problem.active:
        combos *= len(problem.candidates[j])
        if combos > ga.exhaustive_limit:
            break
    if combos <= ga.exhaustive_limit:
        opt_val, opt_choice = exhaustive_association(problem)
        if opt_val > val:
            choice = opt_choice
            val, rbar = problem.evaluate(choice)
    assignment = problem.to_assignment(choice)
    depths = np.full(n_users, -1, dtype=int)
    for j, c in choice.items():
        depths[j] = truncate_depth(problem.orders[j], table, problem.candidates[j][c])
    return Association(
        assignment=assignment,
        rbar=rbar,
        objective=val,
        orders=problem.orders,
        depths=depths,
    )


# ---------------------------------------------------------------------------
# Iterative rate update (phase two)


@dataclass
class UserOrder:
    """Margin-greedy order of one user: decoded stages plus a residual bucket."""

    groups: list[tuple[int, ...]]
    residual: tuple[int, ...]


@dataclass
class RateUpdateResult:
    rates: np.ndarray               # (L,) refined global rates, +inf where unbound
    orders: list[UserOrder | None]  # per user, None when unserved
    rounds: int
    converged: bool
    sum_rate: float
    # Assigned-layer sum rate recorded after each refinement round.
    history: list[float] = field(default_factory=list)


def _margin_greedy_user(
    model: RateModel,
    table: LayerTable,
    tx: int,
    rhat: np.ndarray,
    tau: int,
) -> tuple[np.ndarray, UserOrder]:
    """One user's extraction pass of the iterative update.

    Returns the per-layer recorded increments (+inf where not recorded) and
    the resulting order.  Groups are extracted by smallest accumulated-rate
    margin; increments are recorded only once a layer of the user's own
    transmitter has been extracted.
    """
    detectable = [int(k) for k in np.flatnonzero(model.gains != 0.0)]
    increments = np.full(table.n_layers, np.inf)
    own = set(int(k) for k in np.flatnonzero(table.tx == tx))
    if not own & set(detectable):
        raise InfeasibleError(f"assigned transmitter {tx} undetectable")
    remaining = list(detectable)
    extracted: list[int] = []
    taken: list[tuple[int, ...]] = []
    recorded_flags: list[bool] = []
    seen_own = False
    pw = model.power
    log_nu2 = np.log(model.nu2)
    base = model.noise_var
    while remaining:
        if tau == 1:
            arr = np.asarray(remaining, dtype=int)
            denom = pw[arr] + base
            rates = (
                0.5 * (log_nu2[arr] - np.log(model.var[arr] - pw[arr] * model.var[arr] / denom))
                - model.phi[arr]
            ) / LN2
            np.maximum(rates, 0.0, out=rates)
            margins = rates - rhat[arr]
            j = int(np.argmin(margins))
            if model.tiebreak is not None and math.isfinite(margins[j]):
                tol = TIE_RTOL * max(abs(float(margins[j])), 1.0)
                tied = np.flatnonzero(margins <= margins[j] + tol)
                if tied.size > 1:
                    j = int(tied[_tie_argmin(model.tiebreak, arr[tied])])
            best_set, best_val = (int(arr[j]),), float(margins[j])
        else:
            best_set, best_val = None, None
            for sub in subsets_in_bitmask_order(remaining, tau):
                val = rate_margin(model, sub, extracted, rhat)
                if best_val is None or val < best_val:
                    best_set, best_val = sub, val
        taken.append(best_set)
        for k in best_set:
            remaining.remove(k)
        extracted.extend(best_set)
        base += float(pw[list(best_set)].sum())
        if not seen_own and own & set(best_set):
            seen_own = True
        recorded_flags.append(seen_own)
        if seen_own:
            for k in best_set:
                increments[k] = best_val
    decoded = [grp for grp, rec in zip(taken, recorded_flags) if rec]
    residual = tuple(k for grp, rec in zip(taken, recorded_flags) if not rec for k in grp)
    return increments, UserOrder(groups=list(reversed(decoded)), residual=residual)


def iterative_rate_update(
    association: Association,
    user_models: list[RateModel | None],
    table: LayerTable,
    tau: int = 1,
    eps: float = 1e-6,
    max_rounds: int = 50,
) -> RateUpdateResult:
    """Refine the global rates by repeated per-user margin redistribution.

    Per round every served user rebuilds its order greedily on the
    accumulated rates; the elementwise minimum of the recorded increments is
    added to the global vector until the largest increment falls below
    ``eps`` (or ``max_rounds`` is hit, flagged as non-converged).
    """
    rhat = association.rbar.copy()
    served = [j for j, tx in enumerate(association.assignment) if tx >= 0]
    orders: list[UserOrder | None] = [None] * len(association.assignment)
    rounds = 0
    converged = False
    history: list[float] = []
    while rounds < max_rounds:
        rounds += 1
        all_inc = []
        for j in served:
            inc, order = _margin_greedy_user(
                user_models[j], table, int(association.assignment[j]), rhat, tau
            )
            orders[j] = order
            all_inc.append(inc)
        fold = np.min(np.stack(all_inc), axis=0)
        finite = np.isfinite(fold)
        rhat[finite] = rhat[finite] + fold[finite]
        history.append(assigned_sum_rate(rhat, table, association.assignment))
        if not finite.any() or np.max(np.abs(fold[finite])) < eps:
            converged = True
            break
    return RateUpdateResult(
        rates=rhat,
        orders=orders,
        rounds=rounds,
        converged=converged,
        sum_rate=assigned_sum_rate(rhat, table, association.assignment),
        history=history,
    )
