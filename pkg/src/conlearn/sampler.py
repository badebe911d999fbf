"""Damped-Hamiltonian SDE sampler with a Stormer-Verlet scheme.

N independent chains integrate the second-order stochastic dynamics whose
invariant position marginal is the kernel-mixture density tilted by the
current multiplier. All randomness (initial states and Wiener increments)
is drawn once into a :class:`NoiseBank` so repeated runs with different
multipliers see identical noise, and the terminal positions of the chains
form the learned set.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ChainDiverged, MissingSurrogate

__all__ = ["IsdeConfig", "NoiseBank", "LearnedSet", "init_conditions",
           "drift", "run", "default_time_step", "default_step_count"]

_NORM_CAP = 1.0e6


def default_time_step(prior, divisor=20.0):
    """Default time step tied to the kernel width: 2*pi*s_hat / divisor."""
    return 2.0 * math.pi * prior.s_hat / divisor


def default_step_count(f0, dt, horizon_factor=40.0):
    """Steps needed so the integration horizon reaches horizon_factor / f0."""
    return int(math.ceil(horizon_factor / (f0 * dt)))


@dataclass
class IsdeConfig:
    """Integration parameters for one sampler run.

    gamma = f0 * dt / 4 must stay below one for the velocity update to be
    a contraction.
    """

    dt: float
    m_s: int
    n_chains: int
    seed: int
    f0: float = 4.0

    def __post_init__(self):
        if self.f0 <= 0:
            raise ValueError("f0 must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.m_s < 1:
            raise ValueError("m_s must be at least 1")
        if self.n_chains < 2:
            raise ValueError("need at least two chains")
        if self.gamma >= 1.0:
            raise ValueError(f"gamma = f0*dt/4 = {self.gamma:.3g} must be < 1")

    @property
    def gamma(self):
        return self.f0 * self.dt / 4.0

    @classmethod
    def for_prior(cls, prior, n_chains, seed, f0=4.0, dt=None, m_s=None):
        """Config with the default step size and horizon for a given prior."""
        if dt is None:
            dt = default_time_step(prior)
        if m_s is None:
            m_s = default_step_count(f0, dt)
        return cls(dt=dt, m_s=m_s, n_chains=n_chains, seed=seed, f0=f0)


@dataclass
class NoiseBank:
    """Pre-drawn initial conditions and Wiener increments for all chains.

    Drawn once per solve and reused identically across Newton iterations,
    so the learned sets are a deterministic function of the multiplier
    sequence and the seed.
    """

    u0: np.ndarray          # (nu, N) initial positions
    v0: np.ndarray          # (nu, N) initial velocities
    increments: np.ndarray  # (m_s, nu, N), scaled by sqrt(dt)

    @property
    def n_chains(self):
        return self.u0.shape[1]

    @property
    def m_s(self):
        return self.increments.shape[0]


@dataclass
class LearnedSet:
    """Terminal chain positions, one sample per column."""

    points: np.ndarray  # (nu, N)
    lam: Optional[np.ndarray] = None

    @property
    def n_points(self):
        return self.points.shape[1]


def init_conditions(prior, config):
    """Draw the noise bank for a run: start points, velocities, increments.

    Initial positions are training anchors picked uniformly at random,
    initial velocities are standard normal, and the increments are centered
    Gaussian with covariance dt * I. The draw order is fixed, so the bank
    is fully determined by the seed.
    """
    rng = np.random.default_rng(config.seed)
    idx = rng.integers(0, prior.n_d, size=config.n_chains)
    u0 = prior.eta_d[:, idx].copy()
    v0 = rng.standard_normal((prior.nu, config.n_chains))
    increments = rng.standard_normal(
        (config.m_s, prior.nu, config.n_chains)) * math.sqrt(config.dt)
    return NoiseBank(u0=u0, v0=v0, increments=increments)


def drift(prior, model, lam, u):
    """Drift vector at one point: grad log zeta minus the surrogate pull.

    With a zero multiplier the surrogate term is omitted entirely; a
    nonzero multiplier without a model is an error.
    """
    base = prior.grad_log_zeta(u)
    if lam is None or not np.any(np.asarray(lam) != 0):
        return base
    if model is None:
        raise MissingSurrogate("nonzero multiplier requires a surrogate model")
    return base - model.grad(u) @ np.asarray(lam, dtype=float)


def _check_state(u, step, iteration=None):
    sq = np.einsum("ij,ij->j", u, u)
    bad = ~np.isfinite(sq) | (sq > _NORM_CAP**2)
    if bad.any():
        raise ChainDiverged(int(np.argmax(bad)), step, iteration)


def _integrate(u0, v0, increments, dt, gamma, f0, drift_many, iteration=None):
    """Run the three-stage velocity-Verlet recurrence over all chains."""
    u = u0.copy()
    v = v0.copy()
    cv = (1.0 - gamma) / (1.0 + gamma)
    cl = dt / (1.0 + gamma)
    cw = math.sqrt(f0) / (1.0 + gamma)
    half = 0.5 * dt
    for m in range(increments.shape[0]):
        u += half * v
        v = cv * v + cl * drift_many(u) + cw * increments[m]
        u += half * v
        _check_state(u, m + 1, iteration)
    return u


def run(config, bank, prior, model=None, lam=None, iteration=None):
    """Integrate all chains and return the terminal positions.

    Parameters
    ----------
    config : IsdeConfig
    bank : NoiseBank
        Must be sized for (m_s, n_chains) of the config.
    prior : KdePrior
    model : SurrogateModel, optional
        Required whenever ``lam`` has a nonzero component.
    lam : array, optional
        Lagrange multiplier; None means zero.
    iteration : int, optional
        Attached to divergence errors for diagnostics.
    """
    if bank.m_s != config.m_s or bank.n_chains != config.n_chains:
        raise ValueError("noise bank does not match the config dimensions")
    lam_arr = None if lam is None else np.asarray(lam, dtype=float)
    tilted = lam_arr is not None and np.any(lam_arr != 0)
    if tilted and model is None:
        raise MissingSurrogate("nonzero multiplier requires a surrogate model")
    op = model.drift_operator(lam_arr) if tilted else None

    def drift_many(u):
        g = prior.grad_log_zeta_many(u)
        if op is not None:
            g -= op(u)
        return g

    u = _integrate(bank.u0, bank.v0, bank.increments, config.dt,
                   config.gamma, config.f0, drift_many, iteration)
    return LearnedSet(points=u, lam=lam_arr)
