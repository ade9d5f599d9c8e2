"""Datasets drawn from a known random-parameters logit, for recovery tests."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .data import N_ALT, ChoiceDataset, ModelSpec, build_design
from .simll import softmax


@dataclass(frozen=True)
class DgpConfig:
    """True model plus covariate generators.

    ``covariates`` maps a variable name to ``("bernoulli", p)`` or
    ``("normal", mean, sd)``; every generator is independent.
    """

    spec: ModelSpec
    true_values: Mapping[str, float]
    covariates: Mapping[str, tuple]
    n_obs: int
    seed: int = 0
    id_prefix: str = "s"

    def __post_init__(self):
        if self.n_obs < 1:
            raise ValueError("n_obs must be >= 1")
        for name, gen in self.covariates.items():
            kind = gen[0]
            if kind == "bernoulli":
                if not 0.0 <= gen[1] <= 1.0:
                    raise ValueError(f"{name}: Bernoulli probability {gen[1]} outside [0, 1]")
            elif kind == "normal":
                if gen[2] < 0:
                    raise ValueError(f"{name}: negative standard deviation")
            else:
                raise ValueError(f"{name}: unknown generator {kind!r}")


@dataclass
class SyntheticSample:
    dataset: ChoiceDataset
    probabilities: np.ndarray  # (N, 3) exact logit probabilities given the drawn coefficients
    coefficients: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))  # (N, P) realized


def generate(config: DgpConfig) -> SyntheticSample:
    # Philox is counter-based, so a seed fixes the whole stream independent of platform.
    rng = np.random.Generator(np.random.Philox(config.seed))
    N = config.n_obs
    cols = {}
    indicators = []
    for name in sorted(config.covariates):
        gen = config.covariates[name]
        if gen[0] == "bernoulli":
            cols[name] = (rng.random(N) < gen[1]).astype(float)
            indicators.append(name)
        else:
            cols[name] = gen[1] + gen[2] * rng.standard_normal(N)
    ids = [f"{config.id_prefix}{n:06d}" for n in range(N)]
    placeholder = ChoiceDataset(ids, np.zeros(N, dtype=int), cols, indicators=indicators)
    design = build_design(placeholder, config.spec)
    idx = design.index
    theta = idx.from_dict(config.true_values, default=0.0)

    u = np.zeros((N, N_ALT))
    contrib = design.fixed_x * theta[idx.fixed]
    for j, a in enumerate(design.fixed_alt):
        u[:, a] += contrib[:, j]
    v = rng.standard_normal((N, len(design.random)))
    realized = np.zeros((N, len(design.random)))
    t0, p0 = idx.theta.start, idx.psi.start
    for p, rd in enumerate(design.random):
        kz, kw = rd.z.shape[1], rd.w.shape[1]
        mean = theta[idx.means.start + p] + rd.z @ theta[t0:t0 + kz]
        scale = abs(theta[idx.sd.start + p]) * np.exp(rd.w @ theta[p0:p0 + kw])
        t0 += kz
        p0 += kw
        realized[:, p] = mean + scale * v[:, p]
        u[:, rd.alternative] += realized[:, p] * rd.x
    probs = softmax(u)
    cum = np.cumsum(probs, axis=1)
    draw = rng.random(N)
    outcomes = np.minimum((draw[:, None] >= cum).sum(axis=1), N_ALT - 1)
    dataset = ChoiceDataset(ids, outcomes, cols, indicators=indicators)
    return SyntheticSample(dataset=dataset, probabilities=probs, coefficients=realized)
