"""Shared domain types: problem interface, simplex utilities, seeded RNG streams.

Conventions used throughout the package:

* Basic states, side-information support points and actions are 0-indexed
  integers internally.  Environments may expose friendlier labels for
  reporting (the robot grid uses 1-based cell numbers in its labels).
* ``w`` is opaque to everything except the environment that produced it;
  cost and transition evaluators close over it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SIMPLEX_ATOL = 1e-9


class InvalidDistributionError(ValueError):
    """A vector that should be a probability mass function is not."""


class ModelError(ValueError):
    """An environment contract was violated (empty menu, illegal action, ...)."""


class NumericError(ArithmeticError):
    """Non-finite value produced mid-run; carries the slot index when known."""

    def __init__(self, message: str, slot: int | None = None):
        super().__init__(message)
        self.slot = slot


class InstanceTooLargeError(ValueError):
    """Brute-force enumeration would exceed the policy-count guard."""


class EmptyRunError(ValueError):
    """Asked to summarize a run with zero slots."""


def sample_state(q: np.ndarray, r: float) -> int:
    """Draw a state index from mass function ``q`` using one uniform ``r``.

    Inverse-CDF rule with half-open intervals: returns the smallest j with
    sum(q[:j+1]) > r, i.e. r in [sum(q[:j]), sum(q[:j+1])) selects j.
    Deterministic given (q, r).
    """
    q = np.asarray(q, dtype=float)
    if q.ndim != 1 or abs(q.sum() - 1.0) > SIMPLEX_ATOL or np.any(q < 0):
        raise InvalidDistributionError("q must be a probability mass function")
    edges = np.cumsum(q)
    j = int(np.searchsorted(edges, r, side="right"))
    return min(j, q.shape[0] - 1)


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """K-L divergence D(p;q) = sum_i p_i log(p_i/q_i), with 0 log 0 = 0.

    ``p`` may touch the simplex boundary; ``q`` must be strictly positive.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if np.any(q <= 0.0):
        raise ValueError("q must be strictly positive")
    mask = p > 0.0
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))


class BeliefVector:
    """Point in the open simplex, stored as normalized log-probabilities.

    Keeping the log representation means a state whose weight underflows to
    zero in the linear readout still carries a finite log-weight and can
    recover under later multiplicative updates.
    """

    __slots__ = ("log_p", "probs")

    def __init__(self, log_weights: np.ndarray):
        lw = np.asarray(log_weights, dtype=float)
        m = lw.max()
        log_norm = m + np.log(np.exp(lw - m).sum())
        self.log_p = lw - log_norm
        self.probs = np.exp(self.log_p)

    @classmethod
    def uniform(cls, n: int) -> "BeliefVector":
        return cls(np.zeros(n))

    @property
    def n(self) -> int:
        return self.log_p.shape[0]


@dataclass
class SlotMatrices:
    """Per-slot evaluation of the environment at the chosen contingency actions.

    g0[i]   = c_{i,0}(w, a_i)
    y[i, j] = 1{i=j} - p_{i,j}(w, a_i)        (rows sum to 0)
    g[i, l] = c_{i,l+1}(w, a_i)               (n x k, absent when k = 0)
    """

    g0: np.ndarray
    y: np.ndarray
    g: np.ndarray

    @classmethod
    def initial(cls, n: int, k: int, c_max: float) -> "SlotMatrices":
        # Slot -1 values: g0 = -(c_max, ..., c_max), y = 0, g = 0.
        return cls(np.full(n, -c_max), np.zeros((n, n)), np.zeros((n, k)))


class RngStreams:
    """Three mutually independent uniform streams behind one master seed.

    w: nature's side information; u: controller randomization (drawn every
    slot, currently unused by the deterministic layer-2 rule); v: nature's
    state transitions.  Streams are PCG64 generators built from distinct
    children of ``SeedSequence(master)``, so equal master seeds reproduce
    bit-identical trajectories.
    """

    __slots__ = ("seed", "w", "u", "v")

    def __init__(self, seed):
        self.seed = seed
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        w_ss, u_ss, v_ss = ss.spawn(3)
        self.w = np.random.Generator(np.random.PCG64(w_ss))
        self.u = np.random.Generator(np.random.PCG64(u_ss))
        self.v = np.random.Generator(np.random.PCG64(v_ss))


class ProblemSpec:
    """Contract every environment implements.

    Attributes
    ----------
    n : int            number of basic states
    k : int            number of inequality constraints
    c_max : float      uniform bound on |c_{i,l}|

    An environment supplies evaluators that close over the opaque side
    information ``w``; nothing outside the environment inspects ``w``.
    Menus may depend on (i, w): impossible actions are removed, never
    penalized.
    """

    n: int
    k: int
    c_max: float

    def sample_w(self, rng: np.random.Generator):
        raise NotImplementedError

    def actions(self, i: int, w) -> list:
        """Nonempty ordered action menu for basic state i under w."""
        raise NotImplementedError

    def cost(self, i: int, l: int, w, a) -> float:
        """c_{i,l}(w, a), in [-c_max, c_max]; l = 0 is the objective."""
        raise NotImplementedError

    def transition_row(self, i: int, w, a) -> np.ndarray:
        """Length-n row (p_{i,1}, ..., p_{i,n})(w, a); sums to 1."""
        raise NotImplementedError

    def transition(self, i: int, j: int, w, a) -> float:
        return float(self.transition_row(i, w, a)[j])

    def build_slot_matrices(self, w, actions) -> SlotMatrices:
        g0 = np.empty(self.n)
        y = np.zeros((self.n, self.n))
        g = np.empty((self.n, self.k))
        for i in range(self.n):
            a = actions[i]
            g0[i] = self.cost(i, 0, w, a)
            y[i] = -self.transition_row(i, w, a)
            y[i, i] += 1.0
            for l in range(self.k):
                g[i, l] = self.cost(i, l + 1, w, a)
        return SlotMatrices(g0, y, g)
