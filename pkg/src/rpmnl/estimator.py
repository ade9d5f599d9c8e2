"""Maximum simulated likelihood estimation."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping

import numpy as np

from . import __version__
from .data import ChoiceDataset, ModelSpec, ParameterIndex, SpecValidationError, validate_spec
from .quasirandom import DrawMatrix, HaltonConfig
from .simll import ProbabilityEngine, SimulationUnderflowError

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class StartMode(str, Enum):
    ZERO = "ZERO"
    USER = "USER"
    STAGED = "STAGED"


@dataclass(frozen=True)
class OptimizerConfig:
    max_iterations: int = 500
    gradient_tolerance: float = 1e-6
    step_tolerance: float = 1e-8
    start: StartMode = StartMode.STAGED
    initial_values: Mapping[str, float] | None = None
    max_step: float = 5.0
    hessian_step: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "start", StartMode(self.start))
        if self.gradient_tolerance <= 0 or self.step_tolerance <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.start is StartMode.USER and not self.initial_values:
            raise ValueError("USER start needs initial_values")


@dataclass
class OptimizeOutcome:
    x: np.ndarray
    value: float
    gradient: np.ndarray
    iterations: int
    converged: bool
    message: str
    trace: list[float] = field(default_factory=list)


def _safe_eval(fun: Callable, x):
    try:
        f, g = fun(x)
    except (SimulationUnderflowError, FloatingPointError, OverflowError):
        return -math.inf, None
    if not math.isfinite(f) or not np.all(np.isfinite(g)):
        return -math.inf, None
    return f, g


def bfgs_maximize(
    fun: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0,
    max_iterations: int = 500,
    gradient_tolerance: float = 1e-6,
    step_tolerance: float = 1e-8,
    max_step: float = 5.0,
) -> OptimizeOutcome:
    """Quasi-Newton ascent with an Armijo backtracking line search.

    ``fun`` returns the objective and its gradient. Accepted steps never
    lower the objective.
    """
    x = np.array(x0, dtype=float)
    f, g = _safe_eval(fun, x)
    if g is None:
        raise FloatingPointError("objective is not finite at the starting values")
    n = x.size
    trace = [f]
    if n == 0:
        return OptimizeOutcome(x, f, g, 0, True, "no free parameters", trace)
    H = np.eye(n) / max(1.0, float(np.max(np.abs(g))))
    fresh = True
    message = "iteration limit reached"
    converged = False
    it = 0
    while it < max_iterations:
        if np.max(np.abs(g)) <= gradient_tolerance:
            converged, message = True, "gradient tolerance reached"
            break
        it += 1
        d = H @ g
        slope = float(g @ d)
        if slope <= 0 or not np.all(np.isfinite(d)):
            H = np.eye(n) / max(1.0, float(np.max(np.abs(g))))
            d = H @ g
            slope = float(g @ d)
            fresh = True
        big = np.max(np.abs(d))
        if big > max_step:
            d *= max_step / big
            slope *= max_step / big
        t = 1.0
        accepted = False
        for _ in range(60):
            x_new = x + t * d
            f_new, g_new = _safe_eval(fun, x_new)
            if g_new is not None and f_new >= f + 1e-4 * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            if not fresh:
                H = np.eye(n) / max(1.0, float(np.max(np.abs(g))))
                fresh = True
                continue
            message = "line search failed to improve the objective"
            break
        s = x_new - x
        y = g - g_new
        f_old = f
        x, f, g = x_new, f_new, g_new
        trace.append(f)
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if fresh:
                H = np.eye(n) * (sy / float(y @ y))
            rho = 1.0 / sy
            Hy = H @ y
            H = H - rho * (np.outer(s, Hy) + np.outer(Hy, s)) + (rho * rho * float(y @ Hy) + rho) * np.outer(s, s)
            H = 0.5 * (H + H.T)
            fresh = False
        if np.max(np.abs(s)) <= step_tolerance * (1.0 + np.max(np.abs(x))) and abs(f - f_old) <= 1e-12 * (1 + abs(f)):
            converged, message = True, "parameter change below tolerance"
            break
    else:
        if np.max(np.abs(g)) <= gradient_tolerance:
            converged, message = True, "gradient tolerance reached"
    return OptimizeOutcome(x, f, g, it, converged, message, trace)


def hessian(grad: Callable[[np.ndarray], np.ndarray], theta, step: float = 1e-5, names=None) -> np.ndarray:
    """Central-difference Hessian built from gradient evaluations, symmetrized.

    The step for coordinate ``j`` is ``step * max(1, |theta_j|)``.
    """
    theta = np.asarray(theta, dtype=float)
    n = theta.size
    H = np.empty((n, n))
    for j in range(n):
        h = step * max(1.0, abs(theta[j]))
        up, dn = theta.copy(), theta.copy()
        up[j] += h
        dn[j] -= h
        H[:, j] = (np.asarray(grad(up)) - np.asarray(grad(dn))) / (2 * h)
    H = 0.5 * (H + H.T)
    bad = np.argwhere(~np.isfinite(H))
    if bad.size:
        i, j = bad[0]
        label = (names[i], names[j]) if names is not None else (int(i), int(j))
        raise FloatingPointError(f"non-finite Hessian entry for coefficient pair {label}")
    return H


@dataclass
class EstimationResult:
    names: list[str]
    estimates: dict[str, float]
    std_errors: dict[str, float | None]
    t_stats: dict[str, float | None]
    ll0: float
    llb: float
    rho2: float
    n_obs: int
    iterations: int
    converged: bool
    message: str
    gradient_norm: float
    draws: dict
    spec: dict
    spec_hash: str
    data_hash: str
    per_observation: list[float]
    se_available: bool = True
    notes: list[str] = field(default_factory=list)

    @property
    def n_parameters(self) -> int:
        return len(self.names)

    @property
    def theta(self) -> np.ndarray:
        return np.array([self.estimates[k] for k in self.names])

    def model_spec(self) -> ModelSpec:
        return spec_from_dict(self.spec)

    def halton_config(self) -> HaltonConfig:
        return HaltonConfig.from_dict(self.draws)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "tool_version": __version__,
            "names": self.names,
            "estimates": self.estimates,
            "std_errors": self.std_errors,
            "t_stats": self.t_stats,
            "ll0": self.ll0,
            "llb": self.llb,
            "rho2": self.rho2,
            "n_obs": self.n_obs,
            "n_parameters": self.n_parameters,
            "iterations": self.iterations,
            "converged": self.converged,
            "message": self.message,
            "gradient_norm": self.gradient_norm,
            "se_available": self.se_available,
            "draws": self.draws,
            "spec": self.spec,
            "spec_hash": self.spec_hash,
            "data_hash": self.data_hash,
            "notes": self.notes,
            "per_observation": self.per_observation,
        }

    def to_json(self) -> str:
        return json.dumps(_json_safe(self.to_dict()), indent=2, sort_keys=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "EstimationResult":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported result schema version {d.get('schema_version')!r}")
        return cls(
            names=list(d["names"]),
            estimates={k: float(v) for k, v in d["estimates"].items()},
            std_errors={k: _opt_float(v) for k, v in d["std_errors"].items()},
            t_stats={k: _opt_float(v) for k, v in d["t_stats"].items()},
            ll0=float(d["ll0"]),
            llb=float(d["llb"]),
            rho2=float(d["rho2"]),
            n_obs=int(d["n_obs"]),
            iterations=int(d["iterations"]),
            converged=bool(d["converged"]),
            message=d["message"],
            gradient_norm=float(d["gradient_norm"]),
            draws=d["draws"],
            spec=d["spec"],
            spec_hash=d["spec_hash"],
            data_hash=d["data_hash"],
            per_observation=[float(v) for v in d["per_observation"]],
            se_available=bool(d.get("se_available", True)),
            notes=list(d.get("notes", [])),
        )

    @classmethod
    def from_json(cls, text: str) -> "EstimationResult":
        return cls.from_dict(json.loads(text))


def _opt_float(v):
    return None if v is None else float(v)


def _json_safe(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def spec_from_dict(d: dict) -> ModelSpec:
    from .data import RandomParameterSpec, SeverityLevel, UtilityTerm

    terms, rps = [], []
    for c in d["coefficients"]:
        terms.append(UtilityTerm(c["id"], c["variable"], SeverityLevel.parse(c["alternative"])))
        if "random" in c:
            rps.append(
                RandomParameterSpec(
                    coef_id=c["id"],
                    sd_id=c["sd_id"],
                    mean_shift=tuple(tuple(p) for p in c["mean_shift"]),
                    variance_shift=tuple(tuple(p) for p in c["variance_shift"]),
                    distribution=c["random"],
                )
            )
    return ModelSpec(tuple(terms), tuple(rps), SeverityLevel.parse(d["base"]), d.get("name", ""))


def rho_squared(ll0: float, llb: float) -> float:
    """Likelihood ratio index ``1 - LL(beta) / LL(0)``."""
    if ll0 == 0:
        raise ValueError("LL(0) must be nonzero")
    return 1.0 - llb / ll0


def _maximize_subset(engine, theta, free, config):
    idx = np.flatnonzero(free)

    def fun(x_free):
        full = theta.copy()
        full[idx] = x_free
        v = engine.simulated_loglik(full)
        return v.loglik, v.gradient[idx]

    out = bfgs_maximize(
        fun,
        theta[idx],
        max_iterations=config.max_iterations,
        gradient_tolerance=config.gradient_tolerance,
        step_tolerance=config.step_tolerance,
        max_step=config.max_step,
    )
    theta = theta.copy()
    theta[idx] = out.x
    return theta, out


def estimate(
    dataset: ChoiceDataset,
    spec: ModelSpec,
    draws: DrawMatrix | None,
    config: OptimizerConfig | None = None,
    engine: ProbabilityEngine | None = None,
) -> EstimationResult:
    config = config or OptimizerConfig()
    report = validate_spec(spec, dataset)
    if not report.ok:
        raise SpecValidationError("; ".join(report.errors))
    for w in report.warnings:
        log.warning(w)
    engine = engine or ProbabilityEngine.from_data(dataset, spec, draws)
    index: ParameterIndex = engine.index
    K = len(index)
    ll0 = engine.loglik(np.zeros(K))

    theta = np.zeros(K)
    theta[index.sd] = 0.1
    if config.start is StartMode.USER:
        theta = index.from_dict(config.initial_values, default=0.0)
    iterations = 0
    if config.start is StartMode.STAGED and spec.random_parameters:
        free = np.zeros(K, dtype=bool)
        free[index.fixed] = True
        free[index.means] = True
        stage1 = np.zeros(K)
        stage1, out1 = _maximize_subset(engine, stage1, free, config)
        iterations += out1.iterations
        theta = stage1.copy()
        theta[index.sd] = 0.1
    theta, out = _maximize_subset(engine, theta, np.ones(K, dtype=bool), config)
    iterations += out.iterations
    theta[index.sd] = np.abs(theta[index.sd])
    final = engine.simulated_loglik(theta)
    llb = final.loglik

    se = np.full(K, np.nan)
    se_ok = False
    notes = []
    try:
        H = hessian(lambda t: engine.simulated_loglik(t).gradient, theta, config.hessian_step, index.names)
        neg = -H
        np.linalg.cholesky(neg)
        cov = np.linalg.inv(neg)
        diag = np.diag(cov)
        if np.all(diag > 0):
            se = np.sqrt(diag)
            se_ok = True
        else:
            notes.append("covariance diagonal not positive; standard errors unavailable")
    except np.linalg.LinAlgError:
        notes.append("Hessian is singular or not negative definite; standard errors unavailable")
    except FloatingPointError as exc:
        notes.append(f"Hessian evaluation failed: {exc}")

    names = list(index.names)
    estimates = {k: float(theta[i]) for i, k in enumerate(names)}
    std_errors = {k: (float(se[i]) if se_ok else None) for i, k in enumerate(names)}
    t_stats = {
        k: (float(theta[i] / se[i]) if se_ok and se[i] > 0 else None) for i, k in enumerate(names)
    }
    if not out.converged:
        notes.append(f"optimizer did not converge: {out.message}")
    return EstimationResult(
        names=names,
        estimates=estimates,
        std_errors=std_errors,
        t_stats=t_stats,
        ll0=ll0,
        llb=llb,
        rho2=rho_squared(ll0, llb) if ll0 != 0 else float("nan"),
        n_obs=len(dataset),
        iterations=iterations,
        converged=out.converged,
        message=out.message,
        gradient_norm=float(np.max(np.abs(final.gradient))) if K else 0.0,
        draws=(draws.config.to_dict() | {"n_random": engine.n_random}) if draws is not None else {},
        spec=spec.to_dict(),
        spec_hash=spec.spec_hash(),
        data_hash=dataset.content_hash(),
        per_observation=[float(v) for v in final.per_observation],
        se_available=se_ok,
        notes=notes,
    )
