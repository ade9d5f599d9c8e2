"""Simulated choice probabilities, log-likelihood and analytic gradient.

For observation ``n`` and draw ``r`` every random coefficient is realized as

    beta_nr = mean + theta . z_n + |sd| * exp(psi . w_n) * v_nr

and the logit kernel is evaluated on the resulting utilities. Probabilities
are averaged over draws; the log-likelihood sums the log of the averaged
probability of the observed outcome. Reductions over observations use
``math.fsum`` so results do not depend on chunking, thread count or
observation order.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import N_ALT, ChoiceDataset, DesignMatrices, ModelSpec, build_design
from .quasirandom import DrawMatrix

LOG_UNDERFLOW = math.log(1e-300)
THREADS_ENV = "RPMNL_THREADS"
_CELLS_PER_CHUNK = 200_000


class SimulationUnderflowError(FloatingPointError):
    def __init__(self, index: int, obs_id: str | None = None):
        self.index = index
        self.obs_id = obs_id
        label = f"observation {index}" + (f" (id {obs_id!r})" if obs_id is not None else "")
        super().__init__(f"simulated probability of the observed outcome underflows below 1e-300 at {label}")


@dataclass
class LikelihoodValue:
    loglik: float
    per_observation: np.ndarray
    gradient: np.ndarray | None = None


def realized_coefficient(mean, theta, z, sd, psi, w, v):
    """``mean + theta . z + |sd| * exp(psi . w) * v`` for one observation."""
    theta, z = np.atleast_1d(np.asarray(theta, float)), np.atleast_1d(np.asarray(z, float))
    psi, w = np.atleast_1d(np.asarray(psi, float)), np.atleast_1d(np.asarray(w, float))
    shift = float(np.dot(theta, z)) if theta.size else 0.0
    scale = math.exp(float(np.dot(psi, w))) if psi.size else 1.0
    return mean + shift + abs(sd) * scale * v


def softmax(u) -> np.ndarray:
    """Logit probabilities over the last axis, max-shifted for stability."""
    u = np.asarray(u, dtype=float)
    e = np.exp(u - u.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _thread_count() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


class ProbabilityEngine:
    """Evaluates the simulated model for a fixed design and draw matrix."""

    def __init__(
        self,
        design: DesignMatrices,
        draws: DrawMatrix | None,
        ids=None,
        threads: int | None = None,
        always_simulate: bool = False,
    ):
        self.design = design
        # when False, a model whose sd entries are all zero is evaluated once per
        # observation instead of once per draw (identical utilities on every draw)
        self.always_simulate = always_simulate
        self.index = design.index
        self.ids = ids
        self.n_random = len(design.random)
        N = design.n_obs
        if self.n_random:
            if draws is None:
                raise ValueError("random parameters need a draw matrix")
            if draws.n_obs != N or draws.n_params < self.n_random:
                raise ValueError(
                    f"draw matrix is (R={draws.n_draws}, N={draws.n_obs}, P={draws.n_params}); "
                    f"need N={N}, P>={self.n_random}"
                )
            # (P, N, R) so each observation's draws are contiguous
            self._v = np.ascontiguousarray(np.transpose(draws.values[:, :, : self.n_random], (2, 1, 0)))
            self.n_draws = draws.n_draws
        else:
            self._v = np.zeros((0, N, 1))
            self.n_draws = 1
        self.draws = draws
        self.threads = threads if threads is not None else _thread_count()
        self._alt_masks = [design.fixed_alt == k for k in range(N_ALT)]
        self._theta_slices, self._psi_slices = [], []
        t0, p0 = self.index.theta.start, self.index.psi.start
        for rd in design.random:
            self._theta_slices.append(slice(t0, t0 + rd.z.shape[1]))
            t0 += rd.z.shape[1]
            self._psi_slices.append(slice(p0, p0 + rd.w.shape[1]))
            p0 += rd.w.shape[1]
        rows = max(1, _CELLS_PER_CHUNK // max(self.n_draws, 1))
        self._chunks = [(lo, min(lo + rows, N)) for lo in range(0, N, rows)]

    @classmethod
    def from_data(cls, dataset: ChoiceDataset, spec: ModelSpec, draws: DrawMatrix | None, **kw) -> "ProbabilityEngine":
        return cls(build_design(dataset, spec), draws, ids=dataset.ids, **kw)

    @property
    def n_obs(self) -> int:
        return self.design.n_obs

    @property
    def n_params(self) -> int:
        return len(self.index)

    # -- core ---------------------------------------------------------------

    def _coefficients(self, theta, lo, hi):
        """Realized random coefficients for rows lo:hi, shape (P, n, R_eff)."""
        d = self.design
        means, sds = theta[self.index.means], theta[self.index.sd]
        simulate = self.always_simulate or bool(np.any(sds != 0.0))
        out, scales = [], []
        for p, rd in enumerate(d.random):
            mu = means[p] + (rd.z[lo:hi] * theta[self._theta_slices[p]]).sum(axis=1)
            scale = np.exp((rd.w[lo:hi] * theta[self._psi_slices[p]]).sum(axis=1))
            scales.append(scale)
            if simulate:
                out.append(mu[:, None] + (abs(sds[p]) * scale)[:, None] * self._v[p, lo:hi])
            else:
                out.append(mu[:, None])
        return out, scales, simulate

    def _utilities(self, theta, lo, hi):
        """Utilities of the minor and moderate/severe alternatives, each (n, R_eff).

        The base alternative's utility is identically zero.
        """
        d = self.design
        n = hi - lo
        contrib = d.fixed_x[lo:hi] * theta[self.index.fixed]
        betas, scales, simulate = self._coefficients(theta, lo, hi)
        R = self.n_draws if simulate else 1
        u = []
        for k in range(1, N_ALT):
            mask = self._alt_masks[k]
            uk = np.empty((n, R))
            uk[:] = contrib[:, mask].sum(axis=1)[:, None] if mask.any() else 0.0
            u.append(uk)
        for p, rd in enumerate(d.random):
            u[rd.alternative - 1] += betas[p] * rd.x[lo:hi, None]
        return u, scales, simulate

    @staticmethod
    def _kernel(u):
        """Per-draw probabilities (list of K arrays) and log-normalizer pieces."""
        u1, u2 = u
        m = np.maximum(np.maximum(u1, u2), 0.0)
        e = [np.exp(-m), np.exp(u1 - m), np.exp(u2 - m)]
        total = e[0] + e[1] + e[2]
        for ek in e:
            ek /= total
        return e, m + np.log(total)

    def _chunk_probabilities(self, theta, lo, hi):
        u, _, _ = self._utilities(theta, lo, hi)
        prob, _ = self._kernel(u)
        return np.stack([pk.mean(axis=1) for pk in prob], axis=1)

    def _chunk_loglik(self, theta, lo, hi, want_grad):
        d = self.design
        n = hi - lo
        y = d.outcomes[lo:hi]
        u, scales, simulate = self._utilities(theta, lo, hi)
        prob, log_norm = self._kernel(u)
        R = log_norm.shape[1]
        u_y = np.zeros((n, R))
        for k in (1, 2):
            sel = y == k
            u_y[sel] = u[k - 1][sel]
        lp_y = u_y - log_norm
        m = lp_y.max(axis=1)
        lse = m + np.log(np.exp(lp_y - m[:, None]).sum(axis=1))
        per_obs = lse - math.log(R)
        bad = np.nonzero(per_obs < LOG_UNDERFLOW)[0]
        if bad.size:
            i = lo + int(bad[0])
            raise SimulationUnderflowError(i, self.ids[i] if self.ids is not None else None)
        if not want_grad:
            return per_obs, None
        weights = np.exp(lp_y - lse[:, None])  # (n, R), rows sum to 1
        onehot = np.zeros((n, N_ALT))
        onehot[np.arange(n), y] = 1.0
        h = onehot - np.stack([(weights * pk).sum(axis=1) for pk in prob], axis=1)
        scores = np.zeros((n, self.n_params))
        scores[:, self.index.fixed] = d.fixed_x[lo:hi] * h[:, d.fixed_alt]
        sds = theta[self.index.sd]
        for p, rd in enumerate(d.random):
            a = rd.alternative
            x = rd.x[lo:hi]
            g_mean = x * h[:, a]
            scores[:, self.index.means.start + p] = g_mean
            scores[:, self._theta_slices[p]] = g_mean[:, None] * rd.z[lo:hi]
            if simulate:
                # sum_r w_r (1[y=a] - P_ra) v_r
                wv = weights * self._v[p, lo:hi]
                s_v = onehot[:, a] * wv.sum(axis=1) - (wv * prob[a]).sum(axis=1)
                g_scale = x * scales[p] * s_v
                scores[:, self.index.sd.start + p] = np.sign(sds[p]) * g_scale
                scores[:, self._psi_slices[p]] = (abs(sds[p]) * g_scale)[:, None] * rd.w[lo:hi]
        return per_obs, scores

    def _map_chunks(self, fn):
        if self.threads > 1 and len(self._chunks) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                return list(pool.map(lambda c: fn(*c), self._chunks))
        return [fn(lo, hi) for lo, hi in self._chunks]

    # -- public -------------------------------------------------------------

    def probabilities(self, theta) -> np.ndarray:
        """Draw-averaged probabilities for every observation, shape (N, 3)."""
        theta = self._check(theta)
        parts = self._map_chunks(lambda lo, hi: self._chunk_probabilities(theta, lo, hi))
        return np.concatenate(parts, axis=0) if parts else np.zeros((0, N_ALT))

    def choice_probabilities(self, theta, n: int) -> np.ndarray:
        theta = self._check(theta)
        return self._chunk_probabilities(theta, n, n + 1)[0]

    def simulated_loglik(self, theta, gradient: bool = True) -> LikelihoodValue:
        theta = self._check(theta)
        parts = self._map_chunks(lambda lo, hi: self._chunk_loglik(theta, lo, hi, gradient))
        per_obs = np.concatenate([p[0] for p in parts]) if parts else np.zeros(0)
        ll = math.fsum(per_obs)
        grad = None
        if gradient:
            scores = np.concatenate([p[1] for p in parts], axis=0) if parts else np.zeros((0, self.n_params))
            grad = np.array([math.fsum(scores[:, j]) for j in range(self.n_params)])
        return LikelihoodValue(ll, per_obs, grad)

    def loglik(self, theta) -> float:
        return self.simulated_loglik(theta, gradient=False).loglik

    def _check(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ValueError(f"parameter vector has shape {theta.shape}, expected ({self.n_params},)")
        return theta


def gradient_check(engine: ProbabilityEngine, theta, step: float = 1e-6) -> float:
    """Largest component-wise discrepancy between analytic and central-difference gradients.

    The discrepancy is scaled by ``max(|analytic|, |numeric|, 1)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    theta = np.asarray(theta, dtype=float)
    analytic = engine.simulated_loglik(theta).gradient
    numeric = np.empty_like(analytic)
    for j in range(theta.size):
        up, dn = theta.copy(), theta.copy()
        up[j] += step
        dn[j] -= step
        numeric[j] = (engine.loglik(up) - engine.loglik(dn)) / (2 * step)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
    return float(np.max(np.abs(analytic - numeric) / scale)) if theta.size else 0.0
