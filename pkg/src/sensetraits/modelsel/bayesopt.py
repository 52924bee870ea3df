"""Gaussian-process Bayesian optimization (maximization).

Configurations live in the unit cube (log-scaled dimensions in log space).
The surrogate is a Matérn 5/2 GP with per-dimension lengthscales and a
signal variance, fitted to standardized scores by maximizing the marginal
likelihood with a batched multi-start (1+1) evolution strategy. New points
maximize expected improvement over seeded uniform candidates plus small
perturbations of the incumbent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy.stats import norm, qmc

INT, REAL, REAL_LOG = "int", "real", "real-log"

_LOG_LS_BOUNDS = (math.log(0.01), math.log(10.0))
_LOG_VAR_BOUNDS = (math.log(0.05), math.log(20.0))


@dataclass(frozen=True)
class Dim:
    name: str
    type: str
    low: float
    high: float

    def __post_init__(self):
        if self.type not in (INT, REAL, REAL_LOG):
            raise ValueError(f"unknown dimension type: {self.type}")
        if not self.low < self.high:
            raise ValueError(f"{self.name}: lower bound must be < upper bound")
        if self.type == REAL_LOG and self.low <= 0:
            raise ValueError(f"{self.name}: log-scaled bounds must be positive")

    def from_unit(self, u: float):
        u = min(max(float(u), 0.0), 1.0)
        if self.type == REAL_LOG:
            lo, hi = math.log(self.low), math.log(self.high)
            return float(min(max(math.exp(lo + u * (hi - lo)), self.low), self.high))
        v = self.low + u * (self.high - self.low)
        if self.type == INT:
            return int(min(max(round(v), math.ceil(self.low)), math.floor(self.high)))
        return float(v)

    def to_unit(self, v) -> float:
        if self.type == REAL_LOG:
            lo, hi = math.log(self.low), math.log(self.high)
            return (math.log(v) - lo) / (hi - lo)
        return (float(v) - self.low) / (self.high - self.low)


@dataclass(frozen=True)
class SearchSpace:
    dims: tuple[Dim, ...]

    @classmethod
    def from_dict(cls, d: dict[str, Sequence]) -> "SearchSpace":
        """``{"name": [type, low, high], ...}``."""
        return cls(tuple(Dim(name, spec[0], float(spec[1]), float(spec[2])) for name, spec in d.items()))

    def to_dict(self) -> dict[str, list]:
        return {dim.name: [dim.type, dim.low, dim.high] for dim in self.dims}

    @property
    def d(self) -> int:
        return len(self.dims)

    def decode(self, u) -> dict[str, Any]:
        return {dim.name: dim.from_unit(x) for dim, x in zip(self.dims, u)}

    def encode(self, config: dict[str, Any]) -> np.ndarray:
        return np.array([dim.to_unit(config[dim.name]) for dim in self.dims])

    def contains(self, config: dict[str, Any]) -> bool:
        for dim in self.dims:
            v = config[dim.name]
            if not dim.low <= v <= dim.high:
                return False
            if dim.type == INT and not isinstance(v, int):
                return False
        return True


def matern52(A: np.ndarray, B: np.ndarray, lengthscale, variance: float) -> np.ndarray:
    diff = (A[:, None, :] - B[None, :, :]) / np.asarray(lengthscale)
    r = np.sqrt(np.sum(diff**2, axis=-1))
    s = math.sqrt(5.0) * r
    return variance * (1.0 + s + s * s / 3.0) * np.exp(-s)


def _batched_nll(theta: np.ndarray, X: np.ndarray, y: np.ndarray, jitter: float) -> np.ndarray:
    """Negative log marginal likelihood for a batch of ``theta = [log ls..., log var]``."""
    ls = np.exp(theta[:, :-1])
    var = np.exp(theta[:, -1])
    diff = (X[None, :, None, :] - X[None, None, :, :]) / ls[:, None, None, :]
    s = math.sqrt(5.0) * np.sqrt(np.sum(diff**2, axis=-1))
    K = var[:, None, None] * (1.0 + s + s * s / 3.0) * np.exp(-s)
    n = X.shape[0]
    K += jitter * np.eye(n)
    out = np.full(theta.shape[0], np.inf)
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        # fall back to one-by-one so one bad member doesn't sink the batch
        for b in range(theta.shape[0]):
            try:
                out[b] = _batched_nll(theta[b:b + 1], X, y, jitter)[0]
            except np.linalg.LinAlgError:
                pass
        return out
    yb = np.broadcast_to(y, (theta.shape[0], n))[..., None]
    alpha = np.linalg.solve(L, yb)[..., 0]
    logdet = np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)
    return 0.5 * np.sum(alpha**2, axis=1) + logdet + 0.5 * n * math.log(2 * math.pi)


@dataclass
class GpSurrogate:
    X: np.ndarray
    y: np.ndarray  # raw scores
    lengthscale: np.ndarray
    variance: float
    jitter: float = 1e-6
    _mu: float = 0.0
    _sd: float = 1.0
    _L: np.ndarray | None = None
    _alpha: np.ndarray | None = None

    def __post_init__(self):
        self._mu = float(np.mean(self.y))
        sd = float(np.std(self.y))
        self._sd = sd if sd > 0 else 1.0
        z = (self.y - self._mu) / self._sd
        K = matern52(self.X, self.X, self.lengthscale, self.variance) + self.jitter * np.eye(len(self.X))
        self._L = np.linalg.cholesky(K)
        self._alpha = np.linalg.solve(self._L.T, np.linalg.solve(self._L, z))

    @property
    def z(self) -> np.ndarray:
        return (self.y - self._mu) / self._sd

    def predict_std(self, Xq) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and sd in standardized units.

        The jitter is a nugget in the covariance: a query that coincides with
        an observed point shares its jitter term, so the posterior
        interpolates observations exactly and their sd is ~0.
        """
        Xq = np.atleast_2d(Xq)
        Ks = matern52(Xq, self.X, self.lengthscale, self.variance)
        Ks += self.jitter * np.all(Xq[:, None, :] == self.X[None, :, :], axis=-1)
        mean = Ks @ self._alpha
        v = np.linalg.solve(self._L, Ks.T)
        var = self.variance + self.jitter - np.sum(v**2, axis=0)
        return mean, np.sqrt(np.clip(var, 0.0, None))

    def predict(self, Xq) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and sd in score units."""
        m, s = self.predict_std(Xq)
        return self._mu + self._sd * m, self._sd * s

    def expected_improvement(self, Xq) -> np.ndarray:
        """EI over the best observed score, in standardized units."""
        mean, sd = self.predict_std(Xq)
        best = float(np.max(self.z))
        imp = mean - best
        ei = np.maximum(imp, 0.0)
        pos = sd > 1e-12
        zz = imp[pos] / sd[pos]
        ei[pos] = imp[pos] * norm.cdf(zz) + sd[pos] * norm.pdf(zz)
        return np.maximum(ei, 0.0)


def fit_gp(X, y, rng: np.random.Generator, *, jitter: float = 1e-6, n_restarts: int = 32,
           n_steps: int = 60, warm_start: np.ndarray | None = None) -> GpSurrogate:
    """Fit lengthscales and signal variance by maximizing the marginal likelihood.

    ``n_restarts`` (1+1)-ES chains run side by side from random starts (one
    optionally replaced by ``warm_start``), each adapting its step size with
    the 1/5 success rule.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    d = X.shape[1]
    sd = float(np.std(y))
    z = (y - np.mean(y)) / (sd if sd > 0 else 1.0)
    lo = np.array([_LOG_LS_BOUNDS[0]] * d + [_LOG_VAR_BOUNDS[0]])
    hi = np.array([_LOG_LS_BOUNDS[1]] * d + [_LOG_VAR_BOUNDS[1]])
    theta = lo + rng.random((n_restarts, d + 1)) * (hi - lo)
    if warm_start is not None:
        theta[0] = np.clip(warm_start, lo, hi)
    f = _batched_nll(theta, X, z, jitter)
    step = np.full(n_restarts, 0.3 * (hi[0] - lo[0]))
    for _ in range(n_steps):
        prop = np.clip(theta + step[:, None] * rng.standard_normal(theta.shape), lo, hi)
        fp = _batched_nll(prop, X, z, jitter)
        ok = fp < f
        theta[ok] = prop[ok]
        f[ok] = fp[ok]
        step = np.where(ok, step * 1.5, step * 1.5 ** -0.25)
    best = int(np.argmin(f))
    th = theta[best]
    return GpSurrogate(X, y, np.exp(th[:-1]), float(np.exp(th[-1])), jitter)


@dataclass
class BOResult:
    best_config: dict[str, Any]
    best_score: float
    trace: list[dict[str, Any]] = field(default_factory=list)

    def trace_rows(self) -> list[dict[str, Any]]:
        return [{"iteration": t["iteration"], "phase": t["phase"], **t["config"], "score": t["score"]}
                for t in self.trace]


def _evaluate(objective, config, scores_so_far):
    raw = float(objective(config))
    if math.isfinite(raw):
        return raw, raw
    finite = [s for s in scores_so_far if math.isfinite(s)]
    return raw, (min(finite) if finite else 0.0)


def bayes_opt(space: SearchSpace, objective: Callable[[dict], float], budget: int = 40,
              seed: int = 0, *, init_points: int = 10, n_candidates: int = 1024,
              n_restarts: int = 32, jitter: float = 1e-6) -> BOResult:
    """Maximize ``objective`` over ``space`` with ``budget`` evaluations.

    The first ``min(init_points, budget)`` configurations form a seeded Latin
    hypercube. Non-finite objective values are recorded as-is in the trace and
    replaced by the worst finite score seen for modelling.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    rng = np.random.default_rng(seed)
    n_init = min(init_points, budget)
    lhs = qmc.LatinHypercube(d=space.d, seed=rng).random(n_init)

    U: list[np.ndarray] = []
    used: list[float] = []
    trace: list[dict[str, Any]] = []
    seen: set[tuple] = set()

    def run(u, phase):
        config = space.decode(u)
        raw, val = _evaluate(objective, config, used)
        U.append(space.encode(config))
        used.append(val)
        seen.add(tuple(sorted(config.items())))
        trace.append({"iteration": len(trace), "phase": phase, "config": config, "score": raw})

    for u in lhs:
        run(u, "init")

    theta = None
    while len(trace) < budget:
        gp = fit_gp(np.array(U), np.array(used), rng, jitter=jitter, n_restarts=n_restarts,
                    warm_start=theta)
        theta = np.append(np.log(gp.lengthscale), math.log(gp.variance))
        inc = U[int(np.argmax(used))]
        cand = np.vstack([
            rng.random((n_candidates, space.d)),
            np.clip(inc + 0.05 * rng.standard_normal((8, space.d)), 0.0, 1.0),
        ])
        ei = gp.expected_improvement(cand)
        order = np.argsort(-ei, kind="stable")
        pick = cand[order[0]]
        for j in order:
            key = tuple(sorted(space.decode(cand[j]).items()))
            if key not in seen:
                pick = cand[j]
                break
        run(pick, "bo")

    best = int(np.argmax(used))
    return BOResult(best_config=trace[best]["config"], best_score=used[best], trace=trace)


def random_search(space: SearchSpace, objective: Callable[[dict], float], budget: int,
                  seed: int = 0) -> BOResult:
    rng = np.random.default_rng(seed)
    trace, used = [], []
    for i in range(budget):
        config = space.decode(rng.random(space.d))
        raw, val = _evaluate(objective, config, used)
        used.append(val)
        trace.append({"iteration": i, "phase": "random", "config": config, "score": raw})
    best = int(np.argmax(used))
    return BOResult(best_config=trace[best]["config"], best_score=used[best], trace=trace)
