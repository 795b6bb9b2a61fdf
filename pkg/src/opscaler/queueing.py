"""M/M/R queueing mathematics for per-operator wait modeling.

Each operator replica pool is treated as an M/M/R queue: Poisson batch
arrivals at rate lambda, exponential batch service at rate mu per replica.
The probability an arriving batch waits is given by Erlang-C, and the
expected wait is

    W = C(R, rho) / (R * mu - lambda),   rho = lambda / (R * mu).

Erlang-C is evaluated through the Erlang-B recurrence rather than the
factorial form, which overflows for replica counts in the hundreds.

A discrete-event simulation oracle (`des_oracle`) is included for
verifying the closed forms empirically.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .errors import OpscalerError


class Unstable(OpscalerError):
    """Arrival rate meets or exceeds total service capacity (rho >= 1)."""


class DomainError(OpscalerError):
    """Queueing parameter outside its mathematical domain."""


@dataclass(frozen=True)
class QueueOperatingPoint:
    """One operator queue: arrivals (batches/sec), per-replica service
    rate (batches/sec, already folded with layer count), replica count."""

    lam: float
    mu: float
    replicas: int

    @property
    def utilization(self) -> float:
        return self.lam / (self.replicas * self.mu)

    @property
    def stable(self) -> bool:
        # strict: lam == R*mu is rejected
        return self.lam < self.replicas * self.mu


def erlang_c(replicas: int, rho: float) -> float:
    """Probability that an arriving job waits in an M/M/R queue.

    Uses the Erlang-B recurrence B(k) = a*B(k-1) / (k + a*B(k-1)) with
    offered load a = R*rho, then converts:

        C = R*B / (R - a*(1 - B))

    Stable for replica counts far beyond where factorials overflow.
    """
    if replicas < 1:
        raise DomainError(f"replicas must be >= 1, got {replicas}")
    if rho <= 0.0:
        raise DomainError(f"utilization must be positive, got {rho}")
    if rho >= 1.0:
        raise Unstable(f"utilization {rho} >= 1: queue has no steady state")

    a = replicas * rho
    b = 1.0
    for k in range(1, replicas + 1):
        b = a * b / (k + a * b)
    return replicas * b / (replicas - a * (1.0 - b))


def expected_wait(pt: QueueOperatingPoint) -> float:
    """Expected queueing delay (seconds) before service starts."""
    if pt.lam <= 0.0 or pt.mu <= 0.0:
        raise DomainError(f"rates must be positive, got lam={pt.lam} mu={pt.mu}")
    if not pt.stable:
        raise Unstable(
            f"lam={pt.lam} >= R*mu={pt.replicas * pt.mu}: queue is unstable"
        )
    c = erlang_c(pt.replicas, pt.utilization)
    return c / (pt.replicas * pt.mu - pt.lam)


def min_replicas_stable(lam: float, mu: float) -> int:
    """Smallest R with lam < R*mu (strict)."""
    if lam <= 0.0 or mu <= 0.0:
        raise DomainError(f"rates must be positive, got lam={lam} mu={mu}")
    r = max(1, int(lam / mu))
    while lam >= r * mu:
        r += 1
    return r


def min_replicas_for_wait(lam: float, mu: float, w_max: float) -> int:
    """Smallest R whose expected wait is at or below w_max seconds.

    Always terminates: the wait vanishes as R grows.
    """
    if w_max <= 0.0:
        raise DomainError(f"w_max must be positive, got {w_max}")
    r = min_replicas_stable(lam, mu)
    while expected_wait(QueueOperatingPoint(lam, mu, r)) > w_max:
        r += 1
    return r


def des_oracle(
    lam: float,
    mu: float,
    replicas: int,
    n_arrivals: int,
    seed: int,
) -> float:
    """Empirical mean wait from a FIFO M/M/R discrete-event simulation.

    Poisson arrivals, exponential service, jobs claim the earliest-free
    server in arrival order. Deterministic given the seed. Intended as an
    independent check on `expected_wait`; use n_arrivals >= 1e5 for
    meaningful comparisons.
    """
    pt = QueueOperatingPoint(lam, mu, replicas)
    if not pt.stable:
        raise Unstable(f"lam={lam} >= R*mu={replicas * mu}: simulation diverges")
    if n_arrivals < 1:
        raise DomainError("n_arrivals must be >= 1")

    rng = np.random.default_rng(seed)
    arrivals = np.cumsum(rng.exponential(1.0 / lam, n_arrivals)).tolist()
    services = rng.exponential(1.0 / mu, n_arrivals).tolist()

    free = [0.0] * replicas
    heapq.heapify(free)
    push, pop = heapq.heappush, heapq.heappop
    total_wait = 0.0
    for t, s in zip(arrivals, services):
        f = pop(free)
        start = t if t > f else f
        total_wait += start - t
        push(free, start + s)
    return total_wait / n_arrivals
