"""Tree-structured Parzen estimator over corruption parameter boxes.

Observations are split at a quantile of past performance into promising and
poor sets; each dimension gets an independent kernel density (Gaussian
kernels for floats, add-one smoothed frequencies for choices), and the next
suggestion is the candidate maximizing the promising/poor likelihood ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .corruption import ChoiceParam, FloatParam, P_KEY, ParameterSpace


@dataclass(frozen=True)
class Trial:
    theta: dict
    psi: float  # normalized objective; lower = more adversarial


@dataclass
class TrialHistory:
    gamma: float = 0.25
    trials: list[Trial] = field(default_factory=list)

    def usable(self) -> list[Trial]:
        return [t for t in self.trials if math.isfinite(t.psi)]

    def split(self) -> tuple[list[Trial], list[Trial]]:
        """Promising/poor split at the gamma-quantile of recorded psi values."""
        done = self.usable()
        order = sorted(range(len(done)), key=lambda i: (done[i].psi, i))
        n_below = max(1, math.ceil(self.gamma * len(done)))
        below = [done[i] for i in order[:n_below]]
        above = [done[i] for i in order[n_below:]]
        return below, above

    def best(self) -> Trial | None:
        done = self.usable()
        if not done:
            return None
        return min(done, key=lambda t: t.psi)


def sample_uniform(space: ParameterSpace, rng: np.random.Generator) -> dict:
    theta = {}
    for name, param in space.items():
        if isinstance(param, FloatParam):
            theta[name] = float(rng.uniform(param.lo, param.hi))
        else:
            theta[name] = param.values[int(rng.integers(len(param.values)))]
    return theta


def zero_corruption_theta(space: ParameterSpace, rng: np.random.Generator) -> dict:
    """The identity point: p = 0, remaining parameters drawn uniformly."""
    theta = sample_uniform(space, rng)
    theta[P_KEY] = 0.0
    return theta


class _FloatDensity:
    """Mixture of Gaussian kernels at observed points, clipped to the box.

    The bandwidth uses the spread of the whole observed sample, not just this
    density's kernels, so suggestions keep moving while the history is spread
    and only sharpen once the search as a whole has concentrated.
    """

    def __init__(self, points: np.ndarray, param: FloatParam, sample_std: float | None = None):
        self.lo, self.hi = param.lo, param.hi
        self.points = points
        span = self.hi - self.lo
        if span <= 0 or len(points) == 0:
            self.bw = 1.0
        else:
            spread = float(points.std()) if sample_std is None else sample_std
            self.bw = max(span / 20.0, spread * len(points) ** -0.2)

    def degenerate(self) -> bool:
        return self.hi <= self.lo or len(self.points) == 0

    def sample(self, rng: np.random.Generator) -> float:
        if self.degenerate():
            return self.lo
        center = self.points[int(rng.integers(len(self.points)))]
        return float(np.clip(rng.normal(center, self.bw), self.lo, self.hi))

    def logpdf(self, x: float) -> float:
        if self.degenerate():
            return 0.0
        z = (x - self.points) / self.bw
        dens = float(np.exp(-0.5 * z * z).mean()) / (self.bw * math.sqrt(2 * math.pi))
        return math.log(dens + 1e-300)


class _ChoiceDensity:
    def __init__(self, observed: list[str], param: ChoiceParam):
        self.values = param.values
        counts = {v: 1.0 for v in self.values}  # add-one smoothing
        for v in observed:
            counts[v] = counts.get(v, 0.0) + 1.0
        total = sum(counts[v] for v in self.values)
        self.probs = {v: counts[v] / total for v in self.values}

    def sample(self, rng: np.random.Generator) -> str:
        r = float(rng.random())
        acc = 0.0
        for v in self.values:
            acc += self.probs[v]
            if r <= acc:
                return v
        return self.values[-1]

    def logpdf(self, x: str) -> float:
        return math.log(self.probs.get(x, 1e-12))


def _fit_densities(
    trials: list[Trial], space: ParameterSpace, sample: list[Trial]
) -> dict:
    densities = {}
    for name, param in space.items():
        if isinstance(param, FloatParam):
            pts = np.array([float(t.theta[name]) for t in trials])
            spread = float(np.std([float(t.theta[name]) for t in sample])) if sample else None
            densities[name] = _FloatDensity(pts, param, spread)
        else:
            densities[name] = _ChoiceDensity([t.theta[name] for t in trials], param)
    return densities


def tpe_suggest(
    history: TrialHistory,
    space: ParameterSpace,
    rng: np.random.Generator,
    n_init: int = 10,
    candidate_pool: int = 24,
) -> dict:
    """Next parameter binding; uniform during cold start, TPE afterwards."""
    done = history.usable()
    if len(done) < n_init:
        return sample_uniform(space, rng)
    below, above = history.split()
    if not below or not above:
        return sample_uniform(space, rng)
    g = _fit_densities(below, space, done)
    l = _fit_densities(above, space, done)
    best_theta = None
    best_score = -math.inf
    for _ in range(candidate_pool):
        theta = {name: g[name].sample(rng) for name in space}
        score = sum(g[name].logpdf(theta[name]) - l[name].logpdf(theta[name]) for name in space)
        if score > best_score:
            best_score = score
            best_theta = theta
    return best_theta
