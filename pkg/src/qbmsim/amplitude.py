"""Ideal amplitude-estimation outcome model and amplified inversion.

Amplitude estimation with L Grover iterations measures a phase-grid outcome
y in {0..L-1} whose probability follows the exact phase-estimation kernel

    Pr(y) = sin^2(L * delta_y * pi) / (L^2 * sin^2(delta_y * pi)),

where delta_y is the wrapped distance between y/L and theta/pi with
theta = asin(sqrt(a)).  The reported estimate is a_hat = sin^2(pi y / L); the
two symmetric grid outcomes y and L-y produce the same estimate and are
merged.  Simulating the exact kernel (rather than an interval noise model)
makes the 8/pi^2 success constant of the standard accuracy guarantee
|a_hat - a| <= pi(pi+1)/L a checkable property.

The amplified-inversion helpers boost a small success probability p through m
Grover iterations, P_s = sin^2((2m+1) asin(sqrt(p))), estimate P_s, and invert
back; the inversion is single-valued only while (2m+1) asin(sqrt(p)) <= pi/2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(eq=False)
class AEOutcome:
    """One draw of the amplitude-estimation outcome model."""

    a_true: float
    L: int
    a_hat: float
    within_bound: bool


def accuracy_bound(L: int) -> float:
    """Half-width pi(pi+1)/L of the standard estimation guarantee."""
    return math.pi * (math.pi + 1.0) / L


def ae_outcome_distribution(a: float, L: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact outcome distribution over the estimate grid.

    Returns (estimates, probabilities): estimates are sin^2(pi y / L) for
    y = 0..floor(L/2); probabilities sum to 1.
    """
    if not 0.0 <= a <= 1.0:
        raise ValueError(f"amplitude must lie in [0, 1], got {a}")
    if L < 1 or int(L) != L:
        raise ValueError(f"iteration count must be a positive integer, got {L}")
    L = int(L)
    omega = math.asin(math.sqrt(a)) / math.pi
    y = np.arange(L, dtype=np.float64)
    frac = np.mod(y / L - omega, 1.0)
    delta = np.minimum(frac, 1.0 - frac)
    with np.errstate(divide="ignore", invalid="ignore"):
        num = np.sin(L * delta * np.pi) ** 2
        den = (L * np.sin(delta * np.pi)) ** 2
        probs_y = np.where(delta == 0.0, 1.0, num / den)
    merged = np.zeros(L // 2 + 1)
    target = np.minimum(np.arange(L), L - np.arange(L))
    np.add.at(merged, target, probs_y)
    estimates = np.sin(np.pi * np.arange(L // 2 + 1) / L) ** 2
    return estimates, merged


def sample_ae(a: float, L: int, seed: Optional[int] = None) -> AEOutcome:
    """Draw one estimate from the exact outcome kernel."""
    estimates, probs = ae_outcome_distribution(a, L)
    rng = np.random.default_rng(seed)
    a_hat = float(rng.choice(estimates, p=probs / probs.sum()))
    return AEOutcome(
        a_true=float(a),
        L=int(L),
        a_hat=a_hat,
        within_bound=abs(a_hat - a) <= accuracy_bound(L),
    )


def amplified_probability(p: float, m: int) -> float:
    """Success probability after m Grover iterations: sin^2((2m+1) asin(sqrt(p)))."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability must lie in [0, 1], got {p}")
    if m < 0 or int(m) != m:
        raise ValueError(f"iteration count must be a non-negative integer, got {m}")
    return math.sin((2 * m + 1) * math.asin(math.sqrt(p))) ** 2


def invert_amplified(P_s: float, m: int, P_u: Optional[float] = None) -> float:
    """Invert the amplified probability: sin^2(asin(sqrt(P_s)) / (2m+1)).

    The inversion is only single-valued while (2m+1) asin(sqrt(p)) <= pi/2 for
    the true p.  Callers certify the regime by passing their upper bound
    ``P_u`` on p; a bound that violates the regime raises ValueError.
    """
    if not 0.0 <= P_s <= 1.0:
        raise ValueError(f"probability must lie in [0, 1], got {P_s}")
    if m < 0 or int(m) != m:
        raise ValueError(f"iteration count must be a non-negative integer, got {m}")
    if P_u is not None:
        if not 0.0 < P_u <= 1.0:
            raise ValueError(f"upper bound must lie in (0, 1], got {P_u}")
        if (2 * m + 1) * math.asin(math.sqrt(P_u)) > math.pi / 2.0 + 1e-12:
            raise ValueError(
                f"inversion ambiguous: (2m+1) asin(sqrt(P_u)) > pi/2 for m={m}, P_u={P_u}"
            )
    return math.sin(math.asin(math.sqrt(P_s)) / (2 * m + 1)) ** 2


def choose_m(P_u: float) -> int:
    """Largest m with (2m+1) asin(sqrt(P_u)) <= pi/2 (always >= 0)."""
    if not 0.0 < P_u <= 1.0:
        raise ValueError(f"upper bound must lie in (0, 1], got {P_u}")
    m = math.floor((math.pi / (2.0 * math.asin(math.sqrt(P_u))) - 1.0) / 2.0)
    return max(0, int(m))
