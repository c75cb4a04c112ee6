"""Maximum-likelihood learning of the mode transition matrix.

The objective is the log marginal likelihood of the IMU data, accumulated
sample by sample from the predictive terms of the pruned filter bank. Each
column of the transition matrix is mapped to the simplex with a softmax over
its free entries, and the unconstrained vector is fitted by a Newton-type
ascent whose curvature is the information of the expected transition
counts (or, optionally, by BFGS).

Because branch filters never depend on the transition matrix (only their
weights do), the derivative of the pruned likelihood with respect to
``log(Pi)`` can be carried through the same pass as the likelihood itself.
Finite differences are available for checking.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .exceptions import ConfigError, NonFinite, NotConverged
from .filterbank import FilterBank, level_prior
from .models import MotionModel, TransitionMatrix
from .strapdown import NoiseConfig

GRADIENTS = ("analytic", "central", "forward")
METHODS = ("scoring", "bfgs")
ARMIJO = 1e-4
MIN_STEP = 1.0 / 1024


def _as_sequences(data):
    if isinstance(data, np.ndarray):
        data = [data] if data.ndim == 2 else list(data)
    seqs = []
    for i, seq in enumerate(data):
        arr = np.ascontiguousarray(seq, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 7:
            raise ConfigError(f"sequence {i}: expected columns t, sx, sy, sz, wx, wy, wz")
        if arr.shape[0] < 2:
            raise ConfigError(f"sequence {i}: need at least two samples")
        if not np.all(np.isfinite(arr)):
            raise ConfigError(f"sequence {i}: non-finite values")
        seqs.append(arr)
    return seqs


def _as_transition(model: MotionModel, theta) -> MotionModel:
    if theta is None:
        return model
    values = theta.values if isinstance(theta, TransitionMatrix) else theta
    return model.with_transition(values)


@dataclass
class LearnConfig:
    """Settings of a transition-matrix fit.

    Parameters
    ----------
    dataset : list of ndarray
        IMU sequences, each with columns ``t, sx, sy, sz, wx, wy, wz``.
    free : ndarray of bool, optional
        Entries of the transition matrix to estimate. Defaults to every
        admissible, non-pinned entry in columns with at least two of them.
        Entries outside ``free`` keep their initial values.
    max_iter : int
        Iteration cap of the optimizer.
    tol_loglik : float
        Stop once an accepted step improves the log-likelihood by less.
    max_leaves : int or None
        Leaf budget of the bank while evaluating the likelihood.
    noise : NoiseConfig, optional
        IMU noise and nominal sample period.
    align : int
        Number of leading samples of each sequence used for leveling.
    method : {"scoring", "bfgs"}
        ``"scoring"`` takes Newton steps with the information matrix of the
        expected transition counts as curvature and backtracks until the
        log-likelihood increases; ``"bfgs"`` runs scipy's BFGS seeded with
        the same curvature at the start point.
    gradient : {"analytic", "central", "forward"}
        How the gradient is obtained.
    fd_step : float
        Step in the unconstrained parameters for finite differences.
    """

    dataset: list
    free: np.ndarray | None = None
    max_iter: int = 50
    tol_loglik: float = 1e-4
    max_leaves: int | None = 9
    noise: NoiseConfig | None = None
    align: int = 20
    method: str = "scoring"
    gradient: str = "analytic"
    fd_step: float = 1e-5

    def __post_init__(self):
        if self.max_iter < 1:
            raise ConfigError("max_iter must be at least 1")
        if not self.tol_loglik > 0:
            raise ConfigError("tol_loglik must be positive")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}")
        if self.gradient not in GRADIENTS:
            raise ConfigError(f"gradient must be one of {GRADIENTS}")
        if not self.fd_step > 0:
            raise ConfigError("fd_step must be positive")
        if self.align < 1:
            raise ConfigError("align must be at least 1")


@dataclass
class LearnReport:
    """Outcome of a transition-matrix fit."""

    pi: TransitionMatrix
    loglik_trace: list
    iterations: int
    converged: bool
    occupancy: np.ndarray
    message: str = ""
    free: np.ndarray = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "pi": self.pi.values.tolist(),
            "loglik_trace": [float(v) for v in self.loglik_trace],
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "occupancy": [float(v) for v in self.occupancy],
        }


def _priors(seqs, model, align):
    return [level_prior(seq[: min(align, len(seq))], model) for seq in seqs]


def _evaluate(seqs, priors, model, noise, max_leaves, grad=False, posterior=False):
    """Sum of log predictive terms, optionally with d/dlog(Pi) and posteriors."""
    total = 0.0
    G = np.zeros((model.n_modes, model.n_modes))
    posts = []
    for seq, prior in zip(seqs, priors):
        bank = FilterBank(model, prior, noise=noise, max_leaves=max_leaves, t0=seq[0, 0])
        out = bank.sequence_loglik(seq, return_posterior=posterior, return_grad=grad)
        lse = out[0] if isinstance(out, tuple) else out
        if not np.all(np.isfinite(lse)):
            k = int(np.flatnonzero(~np.isfinite(lse))[0])
            raise NonFinite(f"predictive likelihood not finite at sample {k}")
        total += float(lse.sum())
        if posterior:
            posts.append(out[1])
        if grad:
            G += out[-1]
    return total, G, posts


def log_marginal_likelihood(
    data,
    model: MotionModel,
    theta=None,
    noise: NoiseConfig | None = None,
    max_leaves: int | None = 9,
    align: int = 20,
) -> float:
    """Log-likelihood of IMU sequences under ``model``.

    Parameters
    ----------
    data : ndarray or list of ndarray
        One or more sequences with columns ``t, sx, sy, sz, wx, wy, wz``.
    model : MotionModel
    theta : TransitionMatrix or array-like, optional
        Transition matrix to evaluate; the model's own by default.
    noise : NoiseConfig, optional
    max_leaves : int or None
        Leaf budget; ``None`` evaluates the full hypothesis tree.
    align : int
        Leading samples of each sequence used for the leveling prior.

    Returns
    -------
    float
        Sum over sequences of ``log p(y_2:N | y_1)``. The term of the first
        sample does not depend on the transition matrix and is left out.
    """
    seqs = _as_sequences(data)
    if not seqs:
        return 0.0
    model = _as_transition(model, theta)
    value, _, _ = _evaluate(seqs, _priors(seqs, model, align), model, noise, max_leaves)
    return value


class _SoftmaxColumns:
    """Map between a transition matrix and unconstrained per-column logits.

    In column ``j`` the free entries are ``m_j * softmax(phi_j)``, where
    ``m_j`` is the mass left by the fixed entries and the first logit is held
    at zero.
    """

    def __init__(self, pi0: TransitionMatrix, free):
        self.pi0 = pi0
        self.free = free
        self.cols = [j for j in range(free.shape[1]) if free[:, j].sum() >= 2]
        self.rows = [np.flatnonzero(free[:, j]) for j in self.cols]
        self.mass = [1.0 - pi0.values[~free[:, j], j].sum() for j in self.cols]
        self.size = sum(len(r) - 1 for r in self.rows)

    def encode(self, pi):
        phi = []
        for j, rows in zip(self.cols, self.rows):
            logp = np.log(pi[rows, j])
            phi.extend(logp[1:] - logp[0])
        return np.array(phi)

    def _split(self, phi):
        out, k = [], 0
        for rows in self.rows:
            n = len(rows) - 1
            z = np.r_[0.0, phi[k : k + n]]
            out.append(z - np.logaddexp.reduce(z))
            k += n
        return out

    def decode(self, phi):
        values = self.pi0.values.copy()
        for j, rows, m, logs in zip(self.cols, self.rows, self.mass, self._split(phi)):
            col = m * np.exp(logs)
            # absorb rounding so the column sums to one exactly as far as possible
            col[np.argmax(col)] += m - col.sum()
            values[rows, j] = col
        return values

    def fisher(self, phi, G):
        """Multinomial information of the logits given expected counts ``G``.

        The derivative of the log-likelihood with respect to ``log(Pi)`` is
        the expected number of each transition, so column ``j`` behaves like
        a multinomial with ``N_j`` trials and information
        ``N_j (diag(p) - p p^T)`` in its free logits.
        """
        blocks = []
        for j, rows, logs in zip(self.cols, self.rows, self._split(phi)):
            p = np.exp(logs)
            N = max(float(np.clip(G[rows, j], 0.0, None).sum()), 1.0)
            blocks.append(N * (np.diag(p) - np.outer(p, p))[1:, 1:])
        out = np.zeros((self.size, self.size))
        k = 0
        for B in blocks:
            m = B.shape[0]
            out[k : k + m, k : k + m] = B
            k += m
        return out

    def chain(self, phi, G):
        """Gradient in ``phi`` from the gradient ``G`` in ``log(Pi)``."""
        grad = []
        for j, rows, logs in zip(self.cols, self.rows, self._split(phi)):
            s = np.exp(logs)
            g = G[rows, j]
            grad.extend((g - s * g.sum())[1:])
        return np.array(grad)


def _bfgs(phi0, evaluate, gradient, param, trace, cfg, n_total):
    """BFGS on the per-sample average, seeded with the inverse information."""
    G0 = evaluate(phi0)[2]
    hess_inv0 = np.linalg.inv(param.fisher(phi0, G0) / n_total)
    state = {"phi": phi0, "stopped": False}

    def callback(intermediate_result):
        value = -intermediate_result.fun * n_total
        gain = value - trace[-1]
        trace.append(value)
        state["phi"] = intermediate_result.x.copy()
        if gain < cfg.tol_loglik:
            state["stopped"] = True
            raise StopIteration

    res = minimize(
        lambda phi: -evaluate(phi)[0] / n_total,
        phi0,
        jac=lambda phi: -gradient(phi) / n_total,
        method="BFGS",
        callback=callback,
        options={"maxiter": cfg.max_iter, "gtol": 1e-9, "hess_inv0": hess_inv0},
    )
    # precision loss means the line search found no further decrease
    converged = state["stopped"] or res.status in (0, 2)
    if len(trace) - 1 >= cfg.max_iter and not state["stopped"]:
        converged = False
    message = "log-likelihood improvement below tolerance" if state["stopped"] else str(res.message)
    return state["phi"], converged, message


def default_free_mask(transition: TransitionMatrix):
    """Admissible, non-pinned entries in columns that have at least two of them."""
    free = transition.mask & ~transition.pinned
    free[:, free.sum(axis=0) < 2] = False
    return free


def learn_transition_matrix(cfg: LearnConfig, model: MotionModel, pi_init=None, strict: bool = False) -> LearnReport:
    """Maximum-likelihood transition matrix for ``model`` given ``cfg.dataset``.

    Parameters
    ----------
    cfg : LearnConfig
    model : MotionModel
        Supplies the structure mask, pinned entries and constraint settings.
    pi_init : TransitionMatrix or array-like, optional
        Starting point; the model's current matrix by default. Free entries
        must be strictly positive.
    strict : bool
        Raise :class:`NotConverged` (carrying the report) when the iteration
        cap is reached instead of returning an unconverged report.

    Returns
    -------
    LearnReport
    """
    if pi_init is None:
        pi0 = model.transition
    else:
        values = pi_init.values if isinstance(pi_init, TransitionMatrix) else pi_init
        pi0 = model.transition.with_values(values)
    free = default_free_mask(pi0) if cfg.free is None else np.asarray(cfg.free, dtype=bool)
    if free.shape != pi0.values.shape:
        raise ConfigError("free mask shape does not match the transition matrix")
    if np.any(free & ~pi0.mask) or np.any(free & pi0.pinned):
        raise ConfigError("free entries must be admissible and not pinned")
    if np.any((free.sum(axis=0) == 1)):
        raise ConfigError("every column with free entries needs at least two of them")
    if not free.any():
        raise ConfigError("no free transition entries to learn")
    if np.any(pi0.values[free] <= 0.0):
        raise ConfigError("free entries of the initial transition matrix must be positive")

    seqs = _as_sequences(cfg.dataset)
    if not seqs:
        raise ConfigError("learning needs at least one sequence")
    priors = _priors(seqs, model, cfg.align)
    n_total = sum(len(s) - 1 for s in seqs)
    param = _SoftmaxColumns(pi0, free)
    cache = {}  # phi bytes -> (loglik, gradient in phi, expected counts)

    def evaluate(phi):
        """Log-likelihood, gradient in ``phi`` and expected counts at ``phi``."""
        key = phi.tobytes()
        if key not in cache:
            m = model.with_transition(param.decode(phi))
            value, G, _ = _evaluate(seqs, priors, m, cfg.noise, cfg.max_leaves, grad=True)
            cache[key] = (value, param.chain(phi, G), G)
        return cache[key]

    def value_only(phi):
        key = phi.tobytes()
        if key in cache:
            return cache[key][0]
        m = model.with_transition(param.decode(phi))
        return _evaluate(seqs, priors, m, cfg.noise, cfg.max_leaves)[0]

    def gradient(phi):
        if cfg.gradient == "analytic":
            return evaluate(phi)[1]
        h = cfg.fd_step
        g = np.empty_like(phi)
        f0 = evaluate(phi)[0]
        for a in range(phi.size):
            e = np.zeros_like(phi)
            e[a] = h
            if cfg.gradient == "central":
                g[a] = (value_only(phi + e) - value_only(phi - e)) / (2 * h)
            else:
                g[a] = (value_only(phi + e) - f0) / h
        return g

    phi = param.encode(pi0.values)
    trace = [evaluate(phi)[0]]
    converged = False
    message = "iteration limit reached"
    if cfg.method == "bfgs":
        phi, converged, message = _bfgs(phi, evaluate, gradient, param, trace, cfg, n_total)
    else:
        for _ in range(cfg.max_iter):
            value, _, G = evaluate(phi)
            g = gradient(phi)
            H = param.fisher(phi, G)
            d = np.linalg.solve(H + 1e-9 * np.trace(H) * np.eye(H.shape[0]), g)
            slope = float(g @ d)
            step, accepted = 1.0, False
            while step >= MIN_STEP:
                trial = phi + step * d
                new = evaluate(trial)[0]
                if new >= value + ARMIJO * step * slope:
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                # no ascent along the scoring direction at working precision
                converged, message = True, "no further ascent along the search direction"
                break
            phi = trial
            trace.append(new)
            if new - value < cfg.tol_loglik:
                converged, message = True, "log-likelihood improvement below tolerance"
                break
    phi_hat = phi
    iterations = len(trace) - 1

    pi_hat = pi0.with_values(param.decode(phi_hat))
    m_hat = model.with_transition(pi_hat.values)
    _, _, posts = _evaluate(seqs, priors, m_hat, cfg.noise, cfg.max_leaves, posterior=True)
    stacked = np.concatenate(posts, axis=0)
    occupancy = 100.0 * stacked.sum(axis=0) / stacked.sum()

    report = LearnReport(pi_hat, trace, iterations, bool(converged), occupancy, message, free)
    if strict and not converged:
        raise NotConverged(f"no convergence within {cfg.max_iter} iterations", report=report)
    return report
