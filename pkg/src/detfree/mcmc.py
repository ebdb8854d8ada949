"""Determinant-free auxiliary-variable MCMC and the Cholesky baseline.

The augmented target is

    log p(theta) - 1/2 r^T S^-1 r - 1/2 z^T S z,    r = y - A mu_theta,

with auxiliary ``z | theta ~ N(0, S^-1)``. Its normalizing constants cancel
the marginal likelihood's determinant, so each iteration needs one exact
Gibbs draw of ``z`` (rational approximation + multi-shift CG, or fantasy
observations for sparse precisions) and a random-walk MH step on ``theta``
that only involves solves and products with ``S``.
"""
from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConvergenceError, NumericalError
from .krylov import SolverConfig, cg_solve
from .models import DENSE_GUARD, GaussianModel, _check_guard
from .rational import apply_invsqrt, auto_order, build_invsqrt_quadrature
from .sparse_linalg import LinearOperator, as_operator

logger = logging.getLogger(__name__)

OPTIMAL_RW_FACTOR = 2.38**2
TARGET_ACCEPTANCE = 0.3
COV_FLOOR = 1e-10
MIN_WINDOW = 50


# --- proposals -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ProposalConfig:
    """Gaussian random walk ``theta' = theta + scale * chol(covariance) @ xi``."""

    covariance: np.ndarray
    scale: float = 1.0
    _chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        cov = np.atleast_2d(np.array(self.covariance, dtype=np.float64))
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ValueError("proposal covariance must be SPD") from None
        cov.flags.writeable = False
        chol.flags.writeable = False
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "_chol", chol)
        if not self.scale > 0:
            raise ValueError("proposal scale must be positive")

    @classmethod
    def isotropic(cls, dim, sd, scale=1.0):
        return cls(np.eye(dim) * sd**2, scale)

    @property
    def dim(self):
        return self.covariance.shape[0]

    def step(self, rng):
        return self.scale * (self._chol @ rng.standard_normal(self.dim))

    def to_dict(self):
        return {"covariance": self.covariance.tolist(), "scale": self.scale}


def adapt_proposal(window, current: ProposalConfig | None = None, acceptance=None) -> ProposalConfig:
    """Proposal from a window of samples: ``2.38^2/d * (cov + 1e-10 I)``.

    The scale multiplier of ``current`` moves 10% towards an acceptance rate
    of 0.3. A window with a zero-variance coordinate falls back to an
    isotropic proposal with the current average variance.
    """
    window = np.asarray(window, dtype=np.float64)
    if window.ndim == 1:
        window = window[:, None]
    k, d = window.shape
    if k < MIN_WINDOW:
        raise ValueError(f"adaptation window needs at least {MIN_WINDOW} samples")
    scale = 1.0 if current is None else current.scale
    if acceptance is not None:
        scale *= 1.1 if acceptance > TARGET_ACCEPTANCE else 0.9
    emp = np.atleast_2d(np.cov(window, rowvar=False, ddof=1))
    if np.any(np.diag(emp) <= 0.0):
        var = float(np.trace(current.covariance)) / d if current is not None else 0.01
        return ProposalConfig(np.eye(d) * var, scale)
    return ProposalConfig(OPTIMAL_RW_FACTOR / d * (emp + COV_FLOOR * np.eye(d)), scale)


# --- chain state and traces ----------------------------------------------------------

@dataclass
class ChainState:
    theta: np.ndarray
    log_target: float
    z: np.ndarray | None = None
    iteration: int = 0


@dataclass
class ChainConfig:
    iterations: int
    burnin: int | None = None
    init: np.ndarray | None = None
    proposal_sd: float = 0.1
    adapt_every: int = 100
    solver: SolverConfig = field(default_factory=SolverConfig)
    quad_order: int | None = None
    adapt: bool = True
    dense_guard: int = DENSE_GUARD
    seed: int | None = None

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.burnin is None:
            self.burnin = int(0.3 * self.iterations)
        if self.iterations and not 0 <= self.burnin < self.iterations:
            raise ValueError("burn-in must be smaller than the number of iterations")
        if self.adapt_every < MIN_WINDOW:
            raise ValueError(f"adapt_every must be >= {MIN_WINDOW}")


@dataclass
class Trace:
    param_names: tuple
    theta: np.ndarray
    log_target: np.ndarray
    accepted: np.ndarray
    seconds: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return self.theta.shape[0]

    @property
    def complete(self):
        return bool(self.metadata.get("complete", True))

    @property
    def burnin(self):
        return int(self.metadata.get("burnin", 0))

    def column(self, name):
        return self.theta[:, self.param_names.index(name)]

    def acceptance_rate(self, start=0):
        acc = self.accepted[start:]
        return float(acc.mean()) if acc.size else float("nan")

    def header(self):
        return ["iter", *self.param_names, "log_target", "accepted", "seconds_cum"]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            for i in range(len(self)):
                w.writerow([i, *(repr(float(t)) for t in self.theta[i]),
                            repr(float(self.log_target[i])), int(self.accepted[i]),
                            repr(float(self.seconds[i]))])

    def write_metadata(self, path):
        Path(path).write_text(json.dumps(self.metadata, indent=2, sort_keys=True) + "\n")

    def save(self, csv_path, json_path=None):
        self.write_csv(csv_path)
        self.write_metadata(json_path or Path(csv_path).with_suffix(".json"))

    @classmethod
    def read(cls, csv_path, json_path=None):
        csv_path = Path(csv_path)
        json_path = Path(json_path) if json_path else csv_path.with_suffix(".json")
        with open(csv_path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if not header or header[0] != "iter" or header[-3:] != ["log_target", "accepted", "seconds_cum"]:
                raise ValueError(f"{csv_path}: not a trace file")
            rows = [[float(v) for v in row] for row in reader if row]
        names = tuple(header[1:-3])
        arr = np.array(rows, dtype=np.float64).reshape(-1, len(header))
        meta = json.loads(json_path.read_text()) if json_path.exists() else {}
        return cls(names, arr[:, 1:1 + len(names)], arr[:, -3], arr[:, -2].astype(bool), arr[:, -1], meta)


def config_digest(config) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


# --- determinant-free target ----------------------------------------------------------

def _require(stats, what):
    if not stats.converged:
        raise ConvergenceError(
            f"{what}: CG stopped at relative residual {stats.final_relative_residual:.3e} "
            f"after {stats.iterations} iterations",
            stats,
        )


def _precision_operator(model, theta) -> LinearOperator:
    if hasattr(model, "precision_operator"):
        return model.precision_operator(theta)
    return as_operator(model.sparse_precision(theta))


def lemma_operator(model, theta) -> LinearOperator:
    """``v -> Q_theta v + tau A^T A v``."""
    if hasattr(model, "lemma_matrix"):
        # one assembled sparse product per CG step instead of four
        return as_operator(model.lemma_matrix(theta))
    tau = model.noise_precision(theta)
    Q = _precision_operator(model, theta)
    return LinearOperator(model.latent_dim, lambda v: Q(v) + tau * model.apply_At(model.apply_A(v)))


def apply_S_inverse_precision(model, theta, v, solver=SolverConfig()):
    """``S^-1 v`` for a sparse-precision model through the matrix inversion lemma.

    ``S^-1 v = tau v - tau^2 A (Q + tau A^T A)^-1 A^T v``; without
    observation noise (``A = I``) it is simply ``Q v``.
    """
    tau = model.noise_precision(theta)
    if math.isinf(tau):
        return _precision_operator(model, theta)(v)
    u, stats = cg_solve(lemma_operator(model, theta), model.apply_At(v), solver)
    _require(stats, "matrix-inversion-lemma solve")
    return tau * v - tau * tau * model.apply_A(u)


class _AugEvaluator:
    """Per-theta pieces of the augmented target, cached for the last two thetas."""

    def __init__(self, model: GaussianModel, solver: SolverConfig):
        self.model = model
        self.solver = solver
        self._cache = {}

    def pieces(self, theta):
        key = np.asarray(theta, dtype=np.float64).tobytes()
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        model = self.model
        lp = model.log_prior(theta)
        entry = {"log_prior": lp}
        if np.isfinite(lp):
            r = model.y - model.obs_mean(theta)
            if model.route == "covariance":
                cov = model.sparse_covariance(theta)
                entry["cov"] = cov
                S = model.S_operator(theta, cov=cov)
                x, stats = cg_solve(S, r, self.solver)
                _require(stats, "covariance solve")
            else:
                S = model.S_operator(theta, self.solver)
                x = apply_S_inverse_precision(model, theta, r, self.solver)
            entry["S"] = S
            entry["quad_y"] = float(r @ x)
        if len(self._cache) >= 2:
            self._cache.pop(next(iter(self._cache)))
        self._cache[key] = entry
        return entry

    def log_target(self, theta, z):
        p = self.pieces(theta)
        if not np.isfinite(p["log_prior"]):
            return -np.inf
        return p["log_prior"] - 0.5 * p["quad_y"] - 0.5 * float(z @ p["S"](z))


def log_joint_aug(model: GaussianModel, theta, z, solver=SolverConfig()) -> float:
    """Log of the augmented joint density, up to a theta-free constant."""
    return _AugEvaluator(model, solver).log_target(np.asarray(theta, dtype=float), np.asarray(z, dtype=float))


def gibbs_update_aux_cov(model, theta, rng, solver=SolverConfig(), quad_order=None, cov=None):
    """Draw ``z ~ N(0, S^-1)`` as ``S^-1/2 w`` through the rational approximation."""
    cov = cov if cov is not None else model.sparse_covariance(theta)
    op = model.S_operator(theta, cov=cov)
    bounds = model.S_bounds(theta, cov=cov)
    quad = build_invsqrt_quadrature(bounds, quad_order or auto_order(bounds))
    w = rng.standard_normal(model.n)
    return apply_invsqrt(op, w, quad, solver)


def gibbs_update_aux_prec(model, theta, rng, solver=SolverConfig(), quad_order=None):
    """Draw ``z ~ N(0, S^-1)`` from fantasy observations ``y~ = A x~ + eps``, ``z = S^-1 y~``."""
    if getattr(model, "whitening", False):
        x = model.simulate_latent(theta, rng)
    else:
        bounds = model.precision_bounds(theta)
        quad = build_invsqrt_quadrature(bounds, quad_order or auto_order(bounds))
        w = rng.standard_normal(model.latent_dim)
        x = apply_invsqrt(_precision_operator(model, theta), w, quad, solver)
    y_f = model.apply_A(x)
    tau = model.noise_precision(theta)
    if math.isfinite(tau):
        y_f = y_f + rng.standard_normal(model.n) / math.sqrt(tau)
    return apply_S_inverse_precision(model, theta, y_f, solver)


def gibbs_update_aux(model, theta, rng, solver=SolverConfig(), quad_order=None, cov=None):
    if model.route == "covariance":
        return gibbs_update_aux_cov(model, theta, rng, solver, quad_order, cov)
    return gibbs_update_aux_prec(model, theta, rng, solver, quad_order)


def _mh_step(theta, log_target, target_fn, proposal, rng):
    """Shared MH kernel; always consumes one normal vector then one uniform."""
    prop = theta + proposal.step(rng)
    u = rng.uniform()
    new = target_fn(prop)
    if not np.isfinite(new):
        return theta, log_target, False
    log_u = math.log(u) if u > 0.0 else -math.inf
    if log_u < new - log_target:
        return prop, new, True
    return theta, log_target, False


def mh_update_theta(model, state: ChainState, proposal: ProposalConfig, rng,
                    solver=SolverConfig(), evaluator=None):
    """Random-walk MH on theta with ``z`` held fixed. Returns ``(state, accepted)``."""
    ev = evaluator or _AugEvaluator(model, solver)
    theta, lt, acc = _mh_step(state.theta, state.log_target,
                              lambda t: ev.log_target(t, state.z), proposal, rng)
    return ChainState(theta, lt, state.z, state.iteration + 1), acc


# --- drivers -------------------------------------------------------------------------

def _initial_theta(model, config, rng):
    if config.init is not None:
        theta = np.array(config.init, dtype=np.float64)
        if theta.shape != (model.n_params,):
            raise ValueError(f"init must have {model.n_params} entries")
        return theta
    return model.prior_sample(rng)


class _Recorder:
    def __init__(self, model, config, sampler):
        self.model = model
        self.n = config.iterations
        d = model.n_params
        self.theta = np.empty((self.n, d))
        self.log_target = np.empty(self.n)
        self.accepted = np.zeros(self.n, dtype=bool)
        self.seconds = np.empty(self.n)
        self.k = 0
        self.adapted_at = []
        self.meta = {
            "sampler": sampler,
            "family": model.family,
            "param_names": list(model.param_names),
            "seed": config.seed,
            "iterations": config.iterations,
            "burnin": config.burnin,
            "start": _now(),
            "complete": False,
        }

    def record(self, theta, lt, acc, elapsed):
        k = self.k
        self.theta[k] = theta
        self.log_target[k] = lt
        self.accepted[k] = acc
        self.seconds[k] = elapsed
        self.k += 1

    def finish(self, complete, proposal, error=None):
        k = self.k
        meta = dict(self.meta, end=_now(), complete=complete, proposal=proposal.to_dict(),
                    adapted_at=self.adapted_at)
        if error is not None:
            meta["error"] = error
        return Trace(tuple(self.model.param_names), self.theta[:k].copy(), self.log_target[:k].copy(),
                     self.accepted[:k].copy(), self.seconds[:k].copy(), meta)


def _adapt(rec, proposal, config, it):
    """Re-fit the proposal inside burn-in; returns the (possibly unchanged) proposal."""
    if not config.adapt or it >= config.burnin or (it + 1) % config.adapt_every:
        return proposal
    lo = max(0, (it + 1) // 2, it + 1 - 10 * config.adapt_every)
    lo = min(lo, it + 1 - config.adapt_every)
    acc = float(rec.accepted[it + 1 - config.adapt_every:it + 1].mean())
    return adapt_proposal(rec.theta[lo:it + 1], proposal, acc)


def _run(model, config, rng, sampler, init_fn, step_fn):
    rec = _Recorder(model, config, sampler)
    proposal = ProposalConfig.isotropic(model.n_params, config.proposal_sd)
    if config.iterations == 0:
        return rec.finish(True, proposal)
    t0 = time.perf_counter()
    try:
        state = init_fn(_initial_theta(model, config, rng))
        for it in range(config.iterations):
            state, acc = step_fn(state, proposal)
            rec.record(state.theta, state.log_target, acc, time.perf_counter() - t0)
            new = _adapt(rec, proposal, config, it)
            if new is not proposal:
                rec.adapted_at.append(it)
                proposal = new
    except NumericalError as exc:
        logger.error("%s chain aborted at iteration %d: %s", sampler, rec.k, exc)
        return rec.finish(False, proposal, error=str(exc))
    return rec.finish(True, proposal)


def run_detfree_chain(model: GaussianModel, config: ChainConfig, rng) -> Trace:
    """Alternate an exact Gibbs refresh of ``z`` with an MH update of ``theta``."""
    ev = _AugEvaluator(model, config.solver)

    def init(theta):
        if not np.isfinite(model.log_prior(theta)):
            raise ValueError("initial theta outside the prior support")
        return ChainState(theta, -np.inf, None, 0)

    def step(state, proposal):
        cached = ev.pieces(state.theta)
        z = gibbs_update_aux(model, state.theta, rng, config.solver, config.quad_order, cached.get("cov"))
        current = ev.log_target(state.theta, z)
        return mh_update_theta(model, ChainState(state.theta, current, z, state.iteration),
                               proposal, rng, config.solver, ev)

    return _run(model, config, rng, "detfree", init, step)


def run_cholesky_chain(model: GaussianModel, config: ChainConfig, rng) -> Trace:
    """Random-walk MH on the exact marginal posterior (Cholesky log-determinants)."""
    _check_guard(model.n, config.dense_guard)
    _check_guard(model.latent_dim, config.dense_guard)

    def target(theta):
        lp = model.log_prior(theta)
        if not np.isfinite(lp):
            return -np.inf
        return lp + model.exact_loglik(theta)

    def init(theta):
        lt = target(theta)
        if not np.isfinite(lt):
            raise ValueError("initial theta outside the prior support")
        return ChainState(theta, lt, None, 0)

    def step(state, proposal):
        theta, lt, acc = _mh_step(state.theta, state.log_target, target, proposal, rng)
        return ChainState(theta, lt, None, state.iteration + 1), acc

    return _run(model, config, rng, "cholesky", init, step)
