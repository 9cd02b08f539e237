"""Benchmark distributions with known transport maps, metrics, and exact oracles.

A :class:`GroundTruthPair` is described by a coupled sampler returning
``(x, T*(x))`` with ``x ~ mu``.  Both the forward metrics (fitted map applied
to ``x``) and the inverse metrics (fitted inverse applied to ``T*(x)``, which
is distributed as ``nu``) come from the same draws, so no inverse of ``T*``
is ever needed in closed form.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg
import torch
from scipy.optimize import linear_sum_assignment

from .diffcore import DTYPE
from .embedder import EmpiricalDistribution
from .icnn import Potential, transport_map

MapFn = Callable[[np.ndarray], np.ndarray]
EVAL_SAMPLES = 4096
VAR_SAMPLES = 1 << 16
MAX_ORACLE_SIZE = 512


@dataclass
class GaussianMixture:
    means: np.ndarray
    covs: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        k, d = self.means.shape
        self.covs = np.asarray(self.covs, dtype=np.float64).reshape(k, d, d)
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(k)
        if abs(self.weights.sum() - 1.0) > 1e-9 or (self.weights < 0).any():
            raise ValueError("mixture weights must lie on the simplex")
        for c in self.covs:
            if not np.allclose(c, c.T, atol=1e-12) or np.linalg.eigvalsh(c).min() <= 0:
                raise ValueError("component covariance must be symmetric positive definite")
        self._chol = np.linalg.cholesky(self.covs)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.choice(len(self.weights), size=n, p=self.weights)
        eps = rng.standard_normal((n, self.dim))
        return self.means[comp] + np.einsum("nij,nj->ni", self._chol[comp], eps)

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def total_variance(self) -> float:
        second = sum(w * (np.trace(c) + m @ m) for w, m, c in zip(self.weights, self.means, self.covs))
        mu = self.mean()
        return float(second - mu @ mu)

    def affine_image(self, S: np.ndarray, b: np.ndarray) -> "GaussianMixture":
        """Law of ``S x + b`` for ``x`` drawn from this mixture."""
        return GaussianMixture(self.means @ S.T + b, S @ self.covs @ S.T, self.weights)


def gaussian(mean, cov) -> GaussianMixture:
    mean = np.asarray(mean, dtype=np.float64)
    return GaussianMixture(mean[None], np.asarray(cov, dtype=np.float64)[None], [1.0])


def sample(gm: GaussianMixture, n: int, seed: int) -> EmpiricalDistribution:
    return EmpiricalDistribution.uniform(gm.draw(n, np.random.default_rng(seed)))


def random_mixture(d: int, rng: np.random.Generator, k: int = 3, mean_range: float = 4.0) -> GaussianMixture:
    means = rng.uniform(-mean_range, mean_range, size=(k, d))
    G = rng.standard_normal((k, d, d))
    covs = G @ G.transpose(0, 2, 1) / d + 0.1 * np.eye(d)
    weights = rng.dirichlet(np.ones(k))
    return GaussianMixture(means, covs, weights)


@dataclass
class GroundTruthPair:
    """Source/target pair with an exact transport map.

    ``coupled(n, rng)`` returns ``(x, y)`` with ``x ~ mu`` and ``y = T*(x)``.
    """

    coupled: Callable[[int, np.random.Generator], tuple[np.ndarray, np.ndarray]]
    var_source: float
    var_target: float
    forward_map: Optional[MapFn] = None

    def source(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.coupled(n, rng)[0]

    def target(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.coupled(n, rng)[1]


def _variance(pts: np.ndarray) -> float:
    return float(pts.var(axis=0).sum())


def potential_map(potential: Potential, chunk: int = 8192) -> MapFn:
    """Numpy gradient map of a potential network (no graph kept)."""
    def T(x: np.ndarray) -> np.ndarray:
        out = []
        for i in range(0, len(x), chunk):
            xt = torch.as_tensor(x[i:i + chunk], dtype=DTYPE)
            out.append(transport_map(potential, xt, create_graph=False).detach().numpy())
        return np.concatenate(out) if out else np.zeros_like(x)
    return T


def make_pair_brenier(source: Callable[[int, np.random.Generator], np.ndarray], u: Potential,
                      seed: int = 0, var_samples: int = VAR_SAMPLES) -> GroundTruthPair:
    """Target defined as the pushforward of ``source`` by the gradient of convex ``u``."""
    T = potential_map(u)

    def coupled(n, rng):
        x = source(n, rng)
        return x, T(x)

    x, y = coupled(var_samples, np.random.default_rng(seed))
    return GroundTruthPair(coupled, _variance(x), _variance(y), T)


def gaussian_ot_map(m1, S1, m2, S2) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form OT map between Gaussians as ``(A, c)`` with ``T(x) = A x + c``."""
    m1, m2 = np.asarray(m1, float), np.asarray(m2, float)
    S1, S2 = np.asarray(S1, float), np.asarray(S2, float)
    r = np.real(scipy.linalg.sqrtm(S1))
    r_inv = np.linalg.inv(r)
    A = r_inv @ np.real(scipy.linalg.sqrtm(r @ S2 @ r)) @ r_inv
    A = 0.5 * (A + A.T)
    return A, m2 - A @ m1


def gaussian_pair(m1, S1, m2, S2) -> GroundTruthPair:
    A, c = gaussian_ot_map(m1, S1, m2, S2)
    src = gaussian(m1, S1)

    def coupled(n, rng):
        x = src.draw(n, rng)
        return x, x @ A.T + c

    return GroundTruthPair(coupled, float(np.trace(S1)), float(np.trace(S2)), lambda x: x @ A.T + c)


def affine_source_pair(target: GaussianMixture, S: np.ndarray, b: np.ndarray) -> tuple[GaussianMixture, GroundTruthPair]:
    """Source ``mu = (S y + b)_# nu`` for SPD ``S``; the map mu -> nu is ``S^{-1}(x - b)``.

    The map is the gradient of a convex quadratic, hence optimal, and ``mu`` is
    again a Gaussian mixture.
    """
    mu = target.affine_image(S, b)

    def coupled(n, rng):
        y = target.draw(n, rng)
        return y @ S.T + b, y

    S_inv = np.linalg.inv(S)
    return mu, GroundTruthPair(coupled, mu.total_variance(), target.total_variance(),
                               lambda x: (x - b) @ S_inv.T)


def random_spd(d: int, rng: np.random.Generator, log_range: float = 0.5) -> np.ndarray:
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    lam = np.exp(rng.uniform(-log_range, log_range, size=d))
    S = (Q * lam) @ Q.T
    return 0.5 * (S + S.T)


def l2_uvp_from(pred: np.ndarray, truth: np.ndarray, var: float) -> float:
    return float(100.0 * ((pred - truth) ** 2).sum(-1).mean() / var)


def cos_from(pred: np.ndarray, truth: np.ndarray, base: np.ndarray) -> float:
    a, b = pred - base, truth - base
    denom = np.sqrt((a * a).sum(-1).mean() * (b * b).sum(-1).mean())
    if denom == 0:
        return 0.0
    return float(np.clip((a * b).sum(-1).mean() / denom, -1.0, 1.0))


def l2_uvp(T_hat: MapFn, pair: GroundTruthPair, n_eval: int = EVAL_SAMPLES, seed: int = 0) -> float:
    x, y = pair.coupled(n_eval, np.random.default_rng(seed))
    return l2_uvp_from(T_hat(x), y, pair.var_target)


def cos_sim(T_hat: MapFn, pair: GroundTruthPair, n_eval: int = EVAL_SAMPLES, seed: int = 0) -> float:
    x, y = pair.coupled(n_eval, np.random.default_rng(seed))
    return cos_from(T_hat(x), y, x)


@dataclass
class EvalReport:
    uvp_fwd: float
    uvp_inv: float
    cs_fwd: float
    cs_inv: float
    n_eval: int
    seed: int
    seconds: float

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_maps(forward: MapFn, inverse: Optional[MapFn], pair: GroundTruthPair,
                  n_eval: int = EVAL_SAMPLES, seed: int = 0) -> EvalReport:
    start = time.perf_counter()
    x, y = pair.coupled(n_eval, np.random.default_rng(seed))
    tx = forward(x)
    uvp_f, cs_f = l2_uvp_from(tx, y, pair.var_target), cos_from(tx, y, x)
    uvp_i = cs_i = float("nan")
    if inverse is not None:
        ty = inverse(y)
        uvp_i, cs_i = l2_uvp_from(ty, x, pair.var_source), cos_from(ty, x, y)
    return EvalReport(uvp_f, uvp_i, cs_f, cs_i, n_eval, seed, time.perf_counter() - start)


def discrete_ot_oracle(X: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, float]:
    """Exact optimal matching of two equal-size uniform point clouds.

    Returns ``perm`` with ``X[i]`` matched to ``Y[perm[i]]`` and the mean
    squared distance of the matching (the empirical W2^2).
    """
    X, Y = np.atleast_2d(X), np.atleast_2d(Y)
    if X.shape != Y.shape:
        raise ValueError("oracle needs equal-size clouds in the same dimension")
    if X.shape[0] > MAX_ORACLE_SIZE:
        raise ValueError(f"oracle limited to {MAX_ORACLE_SIZE} points")
    cost = ((X[:, None, :] - Y[None, :, :]) ** 2).sum(-1)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(len(X), dtype=int)
    perm[rows] = cols
    return perm, float(cost[rows, cols].mean())


def brenier_benchmark_pair(d: int, seed: int = 0, potential_scale: float = 0.5) -> GroundTruthPair:
    """Mixture source pushed through the gradient of a frozen random potential network."""
    from .icnn import default_spec, random_params

    rng = np.random.default_rng([seed, d])
    source = random_mixture(d, rng, mean_range=2.0)
    g = torch.Generator().manual_seed(int(rng.integers(2**31)))
    u = random_params(default_spec(d), g, scale=potential_scale)
    return make_pair_brenier(source.draw, u, seed=seed)


def mixture_family(d: int, n: int, seed: int = 0, log_range: float = 0.5,
                   shift_range: float = 1.5) -> tuple[GaussianMixture, list[tuple[GaussianMixture, GroundTruthPair]]]:
    """A reference mixture and ``n`` source mixtures obtained from it by random SPD affine maps.

    Log-eigenvalues of the linear parts lie in ``[-log_range, log_range]`` and
    shifts in the box ``[-shift_range, shift_range]^d``, so every member comes
    from the same bounded parameter set.
    """
    rng = np.random.default_rng([seed, d, n])
    target = random_mixture(d, rng)
    members = []
    for _ in range(n):
        S = random_spd(d, rng, log_range)
        b = rng.uniform(-shift_range, shift_range, size=d)
        members.append(affine_source_pair(target, S, b))
    return target, members
