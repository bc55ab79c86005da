"""Independent reference computations used as test oracles.

None of these call the package's solvers; they work by explicit enumeration
or exact rational arithmetic.
"""
from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np


def enumerate_path_value(P, reward_table, policy_table, gamma, start, t0=0):
    """Expected discounted return from ``(t0, start)`` by summing over every path."""
    T = policy_table.shape[0]
    total = 0.0
    frontier = [(start, 1.0)]
    for t in range(t0, T):
        total += sum(prob * gamma ** (t - t0) * reward_table[t, s] for s, prob in frontier)
        nxt = []
        for s, prob in frontier:
            a = policy_table[t, s]
            for s2, p in enumerate(P[s, a]):
                if p > 0:
                    nxt.append((s2, prob * p))
        frontier = nxt
    return total


def all_policies(S, A, T):
    """Every deterministic non-stationary action table (use only for tiny MDPs)."""
    for flat in itertools.product(range(A), repeat=S * T):
        yield np.array(flat, dtype=np.int64).reshape(T, S)


def open_loop_returns(P, reward, T, start, gamma):
    """Discounted and undiscounted returns of every action sequence on a deterministic kernel."""
    S, A, _ = P.shape
    out = []
    for seq in itertools.product(range(A), repeat=T):
        s, disc, tot = start, 0.0, 0.0
        for t, a in enumerate(seq):
            disc += gamma ** t * reward[s]
            tot += reward[s]
            s = int(np.argmax(P[s, a]))
        out.append((disc, tot))
    return out


def exact_policy_values(P, reward, policy_table, gamma):
    """Start values of a policy for every state, in exact rational arithmetic.

    Floats are converted to :class:`fractions.Fraction` without rounding and
    the state distribution is pushed forward one step at a time.
    """
    S = P.shape[0]
    T = policy_table.shape[0]
    g = Fraction(gamma)
    Pf = [[[Fraction(x) for x in row] for row in P[s]] for s in range(S)]
    rf = [Fraction(x) for x in reward]
    values = []
    for start in range(S):
        dist = [Fraction(0)] * S
        dist[start] = Fraction(1)
        v = Fraction(0)
        for t in range(T):
            v += g ** t * sum(d * r for d, r in zip(dist, rf))
            new = [Fraction(0)] * S
            for s, d in enumerate(dist):
                if d:
                    row = Pf[s][policy_table[t, s]]
                    for s2 in range(S):
                        new[s2] += d * row[s2]
            dist = new
        values.append(v)
    return values


def time_expanded_best(P, reward, T, start):
    """Best undiscounted return and reachable states per time on a deterministic kernel.

    Plain dictionary relaxation over the time-expanded graph.
    """
    best = {start: 0.0}
    seen = [set(best)]
    for _ in range(T):
        nxt = {}
        for s, acc in best.items():
            for a in range(P.shape[1]):
                s2 = int(np.argmax(P[s, a]))
                val = acc + reward[s]
                if val > nxt.get(s2, -np.inf):
                    nxt[s2] = val
        best = nxt
        seen.append(set(best))
    return max(best.values()), seen


def bfs_reachable(P, start_states, T):
    """States reachable within ``T`` steps, by breadth-first search over positive kernel entries."""
    frontier = set(start_states)
    reached = set(frontier)
    for _ in range(T):
        frontier = {int(s2) for s in frontier for a in range(P.shape[1]) for s2 in np.flatnonzero(P[s, a] > 0)}
        reached |= frontier
    return reached
