"""Exact finite-chain analog of the stopping game, used as ground truth.

On a chain with at most a dozen states every quantity is computable to
working precision: continuation values by killed forward propagation, the
best-response operator exactly, and equilibria by brute-force enumeration
over all subsets.  Structural properties of the continuous theory are then
checked exhaustively; where the discrete setting genuinely departs from the
continuous one, the checker reports findings instead of asserting theorems.

Precision policy: transition mass is propagated in float64, value sums are
accumulated in extended precision (longdouble), and all set classifications
use a fixed 1e-9 tolerance.  Results are bit-reproducible across runs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .discounting import DiscountCurve

MAX_STATES = 12
EQ_TOL = 1e-9


class HorizonError(RuntimeError):
    """The requested horizon leaves a certified tail above tolerance."""


@dataclass(frozen=True)
class FiniteChain:
    """Row-stochastic transition matrix with a calendar step of h."""

    P: np.ndarray
    h: float
    labels: Optional[tuple] = None

    def __post_init__(self):
        P = np.asarray(self.P, float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError("transition matrix must be square")
        if P.shape[0] > MAX_STATES:
            raise ValueError(f"at most {MAX_STATES} states supported")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("rows must be nonnegative and sum to one")
        if self.h <= 0:
            raise ValueError("time step must be positive")
        object.__setattr__(self, "P", P)

    @property
    def n_states(self) -> int:
        return self.P.shape[0]


def symmetric_walk(n: int, h: float = 0.2, p_stay: float = 0.2,
                   absorbing: tuple[bool, bool] = (False, False)) -> FiniteChain:
    """Nearest-neighbour walk; ends either lazily reflect or absorb."""
    P = np.zeros((n, n))
    for i in range(1, n - 1):
        P[i, i] = p_stay
        P[i, i - 1] = P[i, i + 1] = (1.0 - p_stay) / 2.0
    P[0, 0], P[0, 1] = (1.0, 0.0) if absorbing[0] else (0.5, 0.5)
    P[-1, -1], P[-1, -2] = (1.0, 0.0) if absorbing[1] else (0.5, 0.5)
    return FiniteChain(P=P, h=h)


def biased_walk(n: int, p: float, h: float = 0.2,
                absorbing: tuple[bool, bool] = (False, False)) -> FiniteChain:
    """Walk stepping right with probability p; asymmetric for p != 1/2."""
    if not 0 < p < 1:
        raise ValueError("p must lie strictly between 0 and 1")
    P = np.zeros((n, n))
    for i in range(1, n - 1):
        P[i, i + 1] = p
        P[i, i - 1] = 1.0 - p
    P[0, 0], P[0, 1] = (1.0, 0.0) if absorbing[0] else (1.0 - p, p)
    P[-1, -1], P[-1, -2] = (1.0, 0.0) if absorbing[1] else (p, 1.0 - p)
    return FiniteChain(P=P, h=h)


def chain_from_csv(path, h: float) -> FiniteChain:
    return FiniteChain(P=np.loadtxt(path, delimiter=","), h=h)


def subset_mask(chain: FiniteChain, bits: int) -> np.ndarray:
    return np.array([(bits >> i) & 1 for i in range(chain.n_states)], bool)


def mask_bits(mask: np.ndarray) -> int:
    return int(sum(1 << i for i, b in enumerate(mask) if b))


@dataclass(frozen=True)
class ExactValue:
    values: np.ndarray          # longdouble, one entry per state
    horizon: int
    tail_bound: float

    def as_float(self) -> np.ndarray:
        return np.asarray(self.values, float)


def _reachable(P: np.ndarray, R: np.ndarray) -> np.ndarray:
    """States from which R can be hit in at least one step."""
    can = R.copy()
    for _ in range(len(R)):
        nxt = can | (P @ can.astype(float) > 0)
        if np.array_equal(nxt, can):
            break
        can = nxt
    return can


def exact_J(chain: FiniteChain, R, f, delta: DiscountCurve,
            horizon: Optional[int] = None, tol: float = 1e-12,
            max_steps: int = 200_000) -> ExactValue:
    """J(x) = sum_{k>=1} d(k h) P^x(rho_R = k, X_k = y) f(y), summed exactly.

    The chain is killed on entry to R and the absorbed mass collected step by
    step.  The certified tail bound is f_max * d((N+1) h) times the surviving
    mass that can still reach R; mass trapped where R is unreachable
    contributes exactly zero and is excluded from the bound.  With a fixed
    ``horizon`` the bound must already be below ``tol`` there, otherwise a
    HorizonError is raised; with ``horizon=None`` the horizon adapts.
    """
    R = np.asarray(R, bool)
    f = np.asarray(f, float)
    if R.shape != (chain.n_states,) or f.shape != (chain.n_states,):
        raise ValueError("R and f must have one entry per state")
    if np.any(f < 0):
        raise ValueError("payoff must be nonnegative")
    P, h = chain.P, chain.h
    fmax = float(f.max()) if f.size else 0.0
    can_feed = _reachable(P, R) & ~R   # survivor states that may still reach R

    J = np.zeros(chain.n_states, dtype=np.longdouble)
    M = np.eye(chain.n_states)
    k = 0
    tail = np.inf
    limit = horizon if horizon is not None else max_steps
    while k < limit:
        k += 1
        M = M @ P
        absorbed = M[:, R]
        if absorbed.size:
            J += np.longdouble(delta.eval(k * h)) * (absorbed @ f[R]).astype(np.longdouble)
        M[:, R] = 0.0
        feeding = float(M[:, can_feed].sum(axis=1).max()) if can_feed.any() else 0.0
        tail = fmax * float(delta.eval((k + 1) * h)) * feeding
        if horizon is None and tail < tol:
            break
    if tail >= tol:
        raise HorizonError(f"certified tail {tail:.3e} above tolerance after {k} steps")
    return ExactValue(values=J, horizon=k, tail_bound=tail)


def first_entry_value(chain: FiniteChain, R, f, delta: DiscountCurve,
                      tol: float = 1e-12) -> np.ndarray:
    """Entry-time variant (k >= 0): stopping immediately inside R pays f now."""
    R = np.asarray(R, bool)
    f = np.asarray(f, float)
    J = exact_J(chain, R, f, delta, tol=tol).as_float()
    return np.where(R, f, J)


def theta_exact(chain: FiniteChain, R, f, delta: DiscountCurve,
                eq_tol: float = EQ_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Best-response subset and the exact values it was derived from."""
    R = np.asarray(R, bool)
    J = exact_J(chain, R, f, delta).as_float()
    f = np.asarray(f, float)
    S = J < f - eq_tol
    indiff = np.abs(J - f) <= eq_tol
    return S | (indiff & R), J


def iterate_theta_exact(chain: FiniteChain, R0, f, delta: DiscountCurve,
                        max_iters: int = 64) -> list[np.ndarray]:
    """Exact fixed-point iteration; returns the subset trajectory."""
    R = np.asarray(R0, bool)
    out = [R]
    for _ in range(max_iters):
        R_next, _ = theta_exact(chain, R, f, delta)
        out.append(R_next)
        if np.array_equal(R_next, R):
            break
        R = R_next
    return out


@dataclass(frozen=True)
class EnumerationResult:
    equilibria: list            # subset bitmasks, ascending
    theta_of: dict              # bits -> bits
    values: dict                # bits -> per-state J as float array

    def equilibrium_masks(self, chain: FiniteChain) -> list[np.ndarray]:
        return [subset_mask(chain, bits) for bits in self.equilibria]


def enumerate_equilibria(chain: FiniteChain, f, delta: DiscountCurve,
                         eq_tol: float = EQ_TOL) -> EnumerationResult:
    """Exact best response for every subset; equilibria are the fixed points."""
    n = chain.n_states
    theta_of, values = {}, {}
    for bits in range(1 << n):
        R = subset_mask(chain, bits)
        TR, J = theta_exact(chain, R, f, delta, eq_tol)
        theta_of[bits] = mask_bits(TR)
        values[bits] = J
    eqs = [bits for bits in range(1 << n) if theta_of[bits] == bits]
    return EnumerationResult(equilibria=eqs, theta_of=theta_of, values=values)


@dataclass(frozen=True)
class StructuralReport:
    """Exhaustive findings for the four structural checks.

    (a) one-step decrease gives a fixed point; (b) smaller equilibria
    dominate their supersets; (c) pairwise intersection improvement holds
    with its precondition; (d) some equilibrium dominates all others by
    value.  Exceptions carry full data so that genuine discrete departures
    from the continuous theory surface as findings, not silent failures.
    """

    n_states: int
    equilibria: list
    a_exceptions: list
    b_exceptions: list
    c_pass: int
    c_total: int
    c_precondition_failures: int
    c_exceptions: list
    d_holds: bool
    d_witness: Optional[int]

    @property
    def a_ok(self) -> bool:
        return not self.a_exceptions

    @property
    def b_ok(self) -> bool:
        return not self.b_exceptions

    @property
    def c_rate(self) -> float:
        return 1.0 if self.c_total == 0 else self.c_pass / self.c_total

    def summary(self) -> str:
        return (f"equilibria={len(self.equilibria)} "
                f"a_exceptions={len(self.a_exceptions)} "
                f"b_exceptions={len(self.b_exceptions)} "
                f"c={self.c_pass}/{self.c_total} (pre-fail {self.c_precondition_failures}) "
                f"d={'yes' if self.d_holds else 'NO'}")

    def as_dict(self) -> dict:
        """JSON-serializable view of the report."""
        return {
            "n_states": self.n_states,
            "equilibria": list(self.equilibria),
            "a_exceptions": self.a_exceptions,
            "b_exceptions": self.b_exceptions,
            "c_pass": self.c_pass,
            "c_total": self.c_total,
            "c_precondition_failures": self.c_precondition_failures,
            "c_exceptions": [{k: (bool(v) if isinstance(v, np.bool_) else v)
                              for k, v in e.items()} for e in self.c_exceptions],
            "d_holds": bool(self.d_holds),
            "d_witness": self.d_witness,
        }


def verify_structural_theorems(chain: FiniteChain, f, delta: DiscountCurve,
                               eq_tol: float = EQ_TOL,
                               cmp_tol: float = 1e-9) -> StructuralReport:
    """Run the four exhaustive checks over every subset / subset pair."""
    n = chain.n_states
    f = np.asarray(f, float)
    enum = enumerate_equilibria(chain, f, delta, eq_tol)
    theta_of, values = enum.theta_of, enum.values
    eqs = enum.equilibria

    a_exceptions = []
    for bits in range(1 << n):
        tbits = theta_of[bits]
        if tbits & ~bits:
            continue       # not a decrease
        if theta_of[tbits] != tbits:
            a_exceptions.append({"R": bits, "theta": tbits,
                                 "theta2": theta_of[tbits]})

    b_exceptions = []
    for rbits in eqs:
        J_R = values[rbits]
        for tbits in range(1 << n):
            if (rbits & tbits) != rbits:
                continue   # not a superset
            if np.any(J_R < values[tbits] - cmp_tol):
                b_exceptions.append({"R": rbits, "T": tbits})

    c_pass = c_total = c_pre = 0
    c_exceptions = []
    for i, rbits in enumerate(eqs):
        for tbits in eqs[i:]:
            inter = rbits & tbits
            imp = theta_of[inter]
            if imp & ~inter:
                c_pre += 1
                continue
            c_total += 1
            is_fixed = theta_of[imp] == imp
            dominates = bool(np.all(values[imp]
                                    >= np.maximum(values[rbits], values[tbits]) - cmp_tol))
            if is_fixed and dominates:
                c_pass += 1
            else:
                c_exceptions.append({"R": rbits, "T": tbits, "improved": imp,
                                     "fixed_point": is_fixed, "dominates": dominates})

    d_witness = None
    for rbits in eqs:
        V_R = np.maximum(f, values[rbits])
        if all(np.all(V_R >= np.maximum(f, values[o]) - cmp_tol) for o in eqs):
            d_witness = rbits
            break

    return StructuralReport(n_states=n, equilibria=eqs,
                            a_exceptions=a_exceptions, b_exceptions=b_exceptions,
                            c_pass=c_pass, c_total=c_total,
                            c_precondition_failures=c_pre,
                            c_exceptions=c_exceptions,
                            d_holds=d_witness is not None, d_witness=d_witness)
