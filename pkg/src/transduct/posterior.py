"""Joint Gaussian posterior over a finite domain, and its information metrics.

The conditional covariance is maintained in full and updated per observation
with the rank-one formula

    K <- K - K[:, j] K[j, :] / (K[j, j] + rho^2(x_j)),

which matches batch conditioning from the prior for any observation order.
On top of the state the module computes marginal variances, joint entropies,
the information gain I(f_A; y_x | D) in its forward (determinant ratio over
the target block) and backward (scalar variance ratio at the candidate)
forms, the batch gain I(f_A; y_B | D), and the information capacity

    gamma_n = max_{X, |X| <= n} 1/2 log det(I + P_X^{-1} K_XX)

by greedy maximization or exhaustive enumeration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from itertools import combinations, combinations_with_replacement
from typing import Iterable, Sequence

import numpy as np

from .errors import BudgetError, InputError, NumericError
from .kernels import KernelMatrix, NoiseModel, jittered

LOG_2PI_E = math.log(2.0 * math.pi * math.e)

#: Hard cap on exhaustive enumeration sizes (subsets or multisets).
BRUTE_FORCE_CAP = 200_000


def chol_logdet(matrix: np.ndarray) -> float:
    """log det of a PSD matrix via Cholesky of its jittered copy."""
    if matrix.size == 0:
        return 0.0
    try:
        chol = np.linalg.cholesky(jittered(matrix))
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"Cholesky factorization failed: {exc}") from exc
    return 2.0 * float(np.sum(np.log(np.diag(chol))))


def solve_psd(matrix: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve a PSD system after jittering the matrix."""
    if matrix.size == 0:
        return np.zeros_like(rhs)
    try:
        return np.linalg.solve(jittered(matrix), rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"PSD solve failed: {exc}") from exc


@dataclass(frozen=True)
class Observation:
    """One noisy measurement y = f(x) + eps at a domain index.

    Repeated indices are allowed: each observation is an independent noisy
    measurement of the same latent value.
    """

    index: int
    value: float
    noise_var: float

    def __post_init__(self):
        if not self.noise_var > 0:
            raise InputError("observation noise variance must be positive")
        if not math.isfinite(self.value):
            raise InputError("observation value must be finite")


@dataclass(frozen=True)
class IGQuery:
    """An information-gain query: targets A, candidate x, evaluation method."""

    targets: tuple[int, ...]
    candidate: int
    method: str = "backward"

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        if not self.targets:
            raise InputError("target set must be nonempty")
        if self.method not in ("forward", "backward"):
            raise InputError("method must be 'forward' or 'backward'")


@dataclass(frozen=True)
class PosteriorState:
    """Gaussian posterior over the domain after an observation history."""

    gram: KernelMatrix
    noise: NoiseModel
    cov: np.ndarray
    mean: np.ndarray
    history: tuple[Observation, ...] = ()

    @classmethod
    def from_prior(cls, gram: KernelMatrix, noise: NoiseModel,
                   mean: np.ndarray | None = None) -> "PosteriorState":
        if mean is None:
            mean = np.zeros(gram.size)
        mean = np.asarray(mean, dtype=np.float64)
        if mean.shape != (gram.size,):
            raise InputError("prior mean length does not match the domain")
        return cls(gram=gram, noise=noise, cov=gram.values.copy(), mean=mean.copy())

    @property
    def round(self) -> int:
        return len(self.history)

    @property
    def ids(self) -> tuple[int, ...]:
        return self.gram.ids

    def position(self, index: int) -> int:
        return self.gram.position(index)

    def positions(self, indices: Iterable[int]) -> np.ndarray:
        return self.gram.positions(indices)

    def variance_vector(self, indices: Sequence[int]) -> np.ndarray:
        pos = self.positions(indices)
        return np.maximum(np.diag(self.cov)[pos], 0.0)

    def mean_vector(self, indices: Sequence[int]) -> np.ndarray:
        return self.mean[self.positions(indices)]


def condition(state: PosteriorState, obs: Observation) -> PosteriorState:
    """Condition the posterior on one observation (rank-one update)."""
    j = state.position(obs.index)
    col = state.cov[:, j]
    denom = float(state.cov[j, j]) + obs.noise_var
    if not denom > 0:
        raise NumericError("non-positive predictive variance at the observed index")
    mean = state.mean + col * ((obs.value - state.mean[j]) / denom)
    cov = state.cov - np.outer(col, col) / denom
    diag = np.diag(cov)
    if np.min(diag) < 0.0:
        np.fill_diagonal(cov, np.maximum(diag, 0.0))
    if not (np.all(np.isfinite(cov)) and np.all(np.isfinite(mean))):
        raise NumericError("conditioning produced non-finite values")
    return replace(state, cov=cov, mean=mean, history=state.history + (obs,))


def condition_all(state: PosteriorState, observations: Iterable[Observation]) -> PosteriorState:
    for obs in observations:
        state = condition(state, obs)
    return state


def observe(state: PosteriorState, index: int, value: float) -> PosteriorState:
    """Condition on a measurement using the domain noise model at ``index``."""
    return condition(state, Observation(index, value, state.noise.variance_at(index)))


def marginal_variance(state: PosteriorState, index: int) -> float:
    """Var[f(x) | D_n], clamped at zero from below."""
    j = state.position(index)
    return max(float(state.cov[j, j]), 0.0)


def _target_block(state: PosteriorState, targets: Sequence[int],
                  stabilize: bool) -> tuple[np.ndarray, np.ndarray]:
    pa = state.positions(targets)
    block = state.cov[np.ix_(pa, pa)]
    if stabilize:
        block = block + np.diag(state.noise.vector(targets))
    return pa, block


def information_gain(state: PosteriorState, query: IGQuery, *,
                     stabilize: bool = False) -> float:
    """I(f_A; y_x | D_n), nonnegative.

    ``stabilize=True`` computes I(y_A; y_x | D_n) instead, which adds the
    target noise variances to the target-block diagonal before inversion;
    this trades a small bias for numerical robustness on near-singular blocks.
    Forward and backward methods agree to high accuracy on either variant.
    """
    px = state.position(query.candidate)
    rho2 = state.noise.variance_at(query.candidate)
    if not rho2 > 0:
        raise InputError("candidate noise variance must be positive for the gain to exist")
    pa, block = _target_block(state, query.targets, stabilize)
    k_ax = state.cov[pa, px]
    kxx = max(float(state.cov[px, px]), 0.0)
    denom = kxx + rho2
    if query.method == "forward":
        downdated = block - np.outer(k_ax, k_ax) / denom
        gain = 0.5 * (chol_logdet(block) - chol_logdet(downdated))
    else:
        if not stabilize and query.candidate in query.targets:
            # y_x is independent of f_{A \ x} given f_x, so the residual
            # variance is the bare noise; evaluating it exactly avoids
            # solve round-off on near-singular conditional blocks
            resid = rho2
        else:
            resid = denom - float(k_ax @ solve_psd(block, k_ax))
            resid = max(resid, 1e-300)
        gain = 0.5 * math.log(denom / resid)
    return max(gain, 0.0)


def batch_information_gain(state: PosteriorState, targets: Sequence[int],
                           batch: Sequence[int], *, stabilize: bool = False) -> float:
    """I(f_A; y_B | D_n) for a (multi)set B of candidate indices."""
    if len(batch) == 0:
        return 0.0
    _, block = _target_block(state, targets, stabilize)
    pa = state.positions(targets)
    pb = state.positions(batch)
    c_bb = state.cov[np.ix_(pb, pb)] + np.diag(state.noise.vector(batch))
    c_ab = state.cov[np.ix_(pa, pb)]
    downdated = block - c_ab @ np.linalg.solve(c_bb, c_ab.T)
    gain = 0.5 * (chol_logdet(block) - chol_logdet(downdated))
    return max(gain, 0.0)


def entropy(state: PosteriorState, indices: Sequence[int]) -> float:
    """Joint differential entropy of f at ``indices`` under the current state."""
    pos = state.positions(indices)
    block = state.cov[np.ix_(pos, pos)]
    return 0.5 * len(indices) * LOG_2PI_E + 0.5 * chol_logdet(block)


def _joint_gain(cov: np.ndarray, noise_diag: np.ndarray) -> float:
    """1/2 log det(I + P^-1 K) evaluated as logdet(K + P) - logdet(P)."""
    if cov.size == 0:
        return 0.0
    gain = 0.5 * (chol_logdet(cov + np.diag(noise_diag)) - float(np.sum(np.log(noise_diag))))
    return max(gain, 0.0)


def _grouped_joint_gain(cov: np.ndarray, noise: np.ndarray, counts: np.ndarray) -> float:
    """1/2 log det(I + sqrt(N) K sqrt(N)) with N = diag(counts / noise).

    Repeated independent measurements of the same point enter only through
    their count, so a multiset of any size evaluates on the distinct-point
    block (Sylvester's determinant identity).
    """
    active = counts > 0
    if not np.any(active):
        return 0.0
    root = np.sqrt(counts[active] / noise[active])
    sub = cov[np.ix_(active, active)] * np.outer(root, root)
    sub = sub + np.eye(sub.shape[0])
    gain = 0.5 * float(np.linalg.slogdet(sub)[1])
    return max(gain, 0.0)


def _capacity_brute(state: PosteriorState, candidates: Sequence[int], budget: int,
                    multiset: bool) -> float:
    pos = state.positions(candidates)
    noise = state.noise.vector(candidates)
    cov = state.cov[np.ix_(pos, pos)]
    sizes = range(1, budget + 1)
    total = sum(math.comb(len(candidates) + (s - 1 if multiset else 0), s) for s in sizes)
    if total > BRUTE_FORCE_CAP:
        raise BudgetError(f"exhaustive capacity search over {total} subsets exceeds the cap")
    best = 0.0
    if multiset:
        for size in sizes:
            for combo in combinations_with_replacement(range(len(candidates)), size):
                counts = np.bincount(combo, minlength=len(candidates))
                best = max(best, _grouped_joint_gain(cov, noise, counts))
    else:
        for size in sizes:
            for combo in combinations(range(len(candidates)), size):
                sel = list(combo)
                best = max(best, _joint_gain(cov[np.ix_(sel, sel)], noise[sel]))
    return best


def _capacity_greedy(state: PosteriorState, candidates: Sequence[int], budget: int,
                     multiset: bool) -> float:
    pos = state.positions(candidates)
    noise = state.noise.vector(candidates)
    cov = state.cov[np.ix_(pos, pos)].copy()
    available = np.ones(len(candidates), dtype=bool)
    total = 0.0
    for _ in range(budget):
        var = np.maximum(np.diag(cov), 0.0)
        gains = np.where(available, 0.5 * np.log1p(var / noise), -np.inf)
        best = int(np.argmax(gains))
        if not np.isfinite(gains[best]) or gains[best] <= 0.0:
            break
        total += float(gains[best])
        col = cov[:, best].copy()
        cov -= np.outer(col, col) / (var[best] + noise[best])
        if not multiset:
            available[best] = False
    return total


def information_capacity(state: PosteriorState, candidates: Sequence[int], budget: int,
                         mode: str = "greedy", *, multiset: bool = False) -> float:
    """Maximum information obtainable from ``budget`` noisy observations.

    ``greedy`` returns the value of greedy maximization (a (1 - 1/e)
    approximation by submodularity); ``brute`` enumerates every candidate
    subset of size <= budget, or every multiset when ``multiset=True``.
    """
    if budget < 0:
        raise InputError("budget must be nonnegative")
    if budget == 0 or not candidates:
        return 0.0
    if mode == "brute":
        if not multiset and budget > len(candidates):
            raise InputError("budget exceeds the candidate pool; enable multiset sampling")
        return _capacity_brute(state, candidates, budget, multiset)
    if mode == "greedy":
        return _capacity_greedy(state, candidates, budget, multiset)
    raise InputError("mode must be 'greedy' or 'brute'")


def beta_n(norm_bound: float, rho: float, gamma_n: float, delta: float) -> float:
    """Confidence-width multiplier B + rho * sqrt(2 (gamma_n + 1 + log(1/delta)))."""
    if not 0.0 < delta < 1.0:
        raise InputError("delta must lie in (0, 1)")
    if norm_bound < 0 or rho < 0 or gamma_n < 0:
        raise InputError("norm bound, noise scale and capacity must be nonnegative")
    return norm_bound + rho * math.sqrt(2.0 * (gamma_n + 1.0 + math.log(1.0 / delta)))
