"""Reference-to-estimate assignment.

Two strategies: a greedy step-by-step ordering that consumes one reference
per chain step while the forward pass runs (N(N+1)/2 distance evaluations),
and the exhaustive permutation search used by PIT baselines and by scoring
(N! permutations).  Both carry explicit counters so the complexity claims
are assertable.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from itertools import permutations
from typing import Callable, Sequence

import numpy as np

from .constants import FACTORIAL_BOUND
from .metrics import ctc_forward, si_snr


class DistanceKind(enum.Enum):
    NEG_SI_SNR = "neg_si_snr"  # waveform separation
    CTC = "ctc"  # recognition: loss of this step's posteriors vs a candidate
    MEAN_SQUARE = "mean_square"  # silence / diagnostics

    def __call__(self, est, ref) -> float:
        if self is DistanceKind.NEG_SI_SNR:
            return -si_snr(est, ref).value
        if self is DistanceKind.CTC:
            return ctc_forward(np.asarray(est, dtype=np.float64), ref)[0]
        est = np.asarray(est, dtype=np.float64)
        ref = np.asarray(ref, dtype=np.float64)
        return float(np.mean((est - ref) ** 2))


@dataclass
class GreedyResult:
    permutation: list  # step i -> reference index
    step_distances: list
    distance_evals: int

    @property
    def total(self) -> float:
        return float(sum(self.step_distances))


@dataclass
class PitResult:
    permutation: tuple
    total_loss: float
    permutations_evaluated: int


def greedy_order(
    produce: Callable[[int, object], object],
    refs: Sequence,
    distance: DistanceKind,
) -> GreedyResult:
    """Order references greedily while estimates are produced one at a time.

    ``produce(step, prev_ref)`` must return the step's estimate given the
    reference selected for the previous step (None at step 0); this is how
    the chain's conditioning stays interleaved with the selection, with no
    re-run of the forward pass.  At step i the distance is evaluated against
    exactly the N-i remaining references; ties pick the lowest index.
    """
    n = len(refs)
    if n < 1:
        raise ValueError("greedy_order needs at least one reference")
    remaining = list(range(n))
    perm: list[int] = []
    dists: list[float] = []
    evals = 0
    prev_ref = None
    for step in range(n):
        est = produce(step, prev_ref)
        best_j = None
        best_d = None
        for j in remaining:
            d = distance(est, refs[j])
            evals += 1
            if best_d is None or d < best_d:
                best_d, best_j = d, j
        remaining.remove(best_j)
        perm.append(best_j)
        dists.append(float(best_d))
        prev_ref = refs[best_j]
    return GreedyResult(permutation=perm, step_distances=dists, distance_evals=evals)


def producer_from_list(estimates: Sequence) -> Callable[[int, object], object]:
    """Adapter for non-conditional estimate sets (diagnostics and tests)."""

    def produce(step, prev_ref):
        return estimates[step]

    return produce


def pit_optimal(
    estimates: Sequence, refs: Sequence, distance: DistanceKind
) -> PitResult:
    """Exhaustive minimum of the summed distance over all N! pairings.

    Ties resolve to the lexicographically smallest permutation; refuses to
    run above FACTORIAL_BOUND sources.
    """
    n = len(estimates)
    if n != len(refs):
        raise ValueError("estimate and reference counts differ")
    if n < 1:
        raise ValueError("pit_optimal needs at least one pair")
    if n > FACTORIAL_BOUND:
        raise ValueError(f"{n} sources exceed the factorial bound {FACTORIAL_BOUND}")
    dmat = np.array(
        [[distance(estimates[i], refs[j]) for j in range(n)] for i in range(n)]
    )
    best_perm = None
    best_total = None
    evaluated = 0
    for perm in permutations(range(n)):  # lexicographic order
        evaluated += 1
        total = float(sum(dmat[i, perm[i]] for i in range(n)))
        if best_total is None or total < best_total:
            best_total, best_perm = total, perm
    assert evaluated == math.factorial(n)
    return PitResult(
        permutation=best_perm, total_loss=best_total, permutations_evaluated=evaluated
    )
