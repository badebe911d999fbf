"""Concrete constraint maps: analytic moment constraints with a closed-form
tilting oracle, and the homogenization constraint assembly (residue block,
mean-elasticity block, dispersion block).
"""

from dataclasses import dataclass

import numpy as np

from .solver import Block, ConstraintSpec

__all__ = ["TiltingOracle", "linear_moment_spec", "HomogenizationBlocks",
           "HomogenizationConstraint", "homogenization_spec", "residue"]


@dataclass
class TiltingOracle:
    """Closed-form moments of the exponentially tilted kernel mixture.

    For the linear constraint h(eta) = selected components of eta, tilting
    the mixture by exp(-<lam, h(eta)>) keeps it a Gaussian mixture: component
    j keeps width s_hat, its mean shifts to m_j - s_hat^2 lam, and its weight
    becomes proportional to exp(-<lam, m_j>) (restricted to the selected
    components). The tilted mean is therefore available in closed form, as
    is its Jacobian, which is minus the tilted covariance.
    """

    centers: np.ndarray  # (n_sel, N_d) selected rows of the mixture centers
    s_hat: float
    target: np.ndarray   # (n_sel,)

    @classmethod
    def from_prior(cls, prior, components, target):
        components = np.asarray(components, dtype=int)
        return cls(centers=prior.centers[components, :], s_hat=prior.s_hat,
                   target=np.asarray(target, dtype=float))

    def _weights(self, lam):
        logits = -self.centers.T @ lam
        logits -= logits.max()
        w = np.exp(logits)
        return w / w.sum()

    def mean(self, lam):
        """E{h(H_lam)} under the tilted mixture."""
        lam = np.asarray(lam, dtype=float)
        pi = self._weights(lam)
        return self.centers @ pi - self.s_hat**2 * lam

    def covariance(self, lam):
        """Covariance of h(H_lam): reweighted center scatter plus s_hat^2 I."""
        pi = self._weights(np.asarray(lam, dtype=float))
        mbar = self.centers @ pi
        scatter = (self.centers * pi[None, :]) @ self.centers.T \
            - np.outer(mbar, mbar)
        return scatter + self.s_hat**2 * np.eye(self.centers.shape[0])

    def jacobian(self, lam):
        """d mean / d lam, which equals minus the tilted covariance."""
        return -self.covariance(lam)

    def root(self, tol=1e-12, max_iter=200):
        """Multiplier solving mean(lam) = target, by damped Newton."""
        lam = np.zeros(self.centers.shape[0])
        res = self.mean(lam) - self.target
        for _ in range(max_iter):
            if np.linalg.norm(res) <= tol:
                return lam
            step = np.linalg.solve(self.jacobian(lam), -res)
            t = 1.0
            while t > 1e-8:
                cand = lam + t * step
                cand_res = self.mean(cand) - self.target
                if np.linalg.norm(cand_res) < np.linalg.norm(res):
                    lam, res = cand, cand_res
                    break
                t /= 2.0
            else:
                break
        if np.linalg.norm(res) > tol:
            raise RuntimeError(f"oracle Newton stalled, |res|={np.linalg.norm(res):.3g}")
        return lam


def linear_moment_spec(prior, target, components=None):
    """Constraint pinning the mean of selected reduced components.

    ``components`` defaults to the first len(target) coordinates. Single
    block, weight one.
    """
    target = np.atleast_1d(np.asarray(target, dtype=float))
    if components is None:
        components = np.arange(target.size)
    components = np.asarray(components, dtype=int)
    if components.size != target.size:
        raise ValueError("components and target must have the same length")
    if components.size > prior.nu:
        raise ValueError("cannot select more components than the dimension")

    def evaluate(eta):
        return np.asarray(eta, dtype=float)[components]

    def evaluate_batch(etas):
        return np.asarray(etas, dtype=float)[components, :]

    return ConstraintSpec(evaluate=evaluate,
                          blocks=[Block("moment", target.size)],
                          target=target,
                          evaluate_batch=evaluate_batch)


@dataclass
class HomogenizationBlocks:
    """Targets for the three homogenization constraint blocks."""

    b_rho: float
    b_c: np.ndarray      # (21,) upper triangle of the normalized target mean
    b_delta: float
    mu_exp: float
    mu_eff: float

    def __post_init__(self):
        self.b_c = np.asarray(self.b_c, dtype=float)
        if self.b_c.size != 21:
            raise ValueError("b_c must have 21 entries")
        if self.b_delta <= 0:
            raise ValueError("b_delta must be positive")

    @classmethod
    def from_matrices(cls, c_exp_mean, delta_exp, c_train_mean, b_rho=1.0):
        """Assemble targets from a 6x6 target mean matrix and a dispersion.

        mu_eff is taken from the training-set mean matrix, consistent with
        freezing the reference mean at its training estimate.
        """
        c_exp_mean = np.asarray(c_exp_mean, dtype=float)
        mu_exp = np.linalg.norm(c_exp_mean, "fro")
        mu_eff = np.linalg.norm(np.asarray(c_train_mean, dtype=float), "fro")
        iu = np.triu_indices(6)
        return cls(b_rho=b_rho,
                   b_c=(c_exp_mean / mu_exp)[iu],
                   b_delta=(mu_eff * delta_exp / mu_exp) ** 2,
                   mu_exp=mu_exp, mu_eff=mu_eff)

    def target_vector(self):
        return np.concatenate(([self.b_rho], self.b_c, [self.b_delta]))


class HomogenizationConstraint:
    """Stateful evaluator for the 23-component homogenization constraint.

    Components: squared normalized residue (1), upper triangle of the
    normalized effective matrix (21), squared normalized distance to the
    frozen training mean matrix (1). The residue normalization rho0 is
    calibrated as the mean unnormalized residue over the first batch
    evaluated (the first-iteration learned set), so that block has mean one
    there by construction.
    """

    def __init__(self, bvp, norm_map, layout, targets, c_train_mean,
                 rho0=None):
        self.bvp = bvp
        self.norm_map = norm_map
        self.layout = layout
        self.targets = targets
        self.cbar_n = np.asarray(c_train_mean, dtype=float) / targets.mu_exp
        self.rho0 = rho0
        self._iu = np.triu_indices(6)

    def evaluate_batch(self, etas):
        etas = np.asarray(etas, dtype=float)
        x = self.norm_map.reconstruct(etas)
        y, kappa, mu, _ = self.layout.unpack(x)
        rho_hat = self.bvp.residual_norms(y, kappa, mu)
        if self.rho0 is None:
            self.rho0 = float(rho_hat.mean())
        ceff = self.bvp.effective_matrices(y, kappa, mu)
        ceff = 0.5 * (ceff + np.transpose(ceff, (0, 2, 1)))
        cn = ceff / self.targets.mu_exp
        h_rho = (rho_hat / self.rho0) ** 2
        h_c = cn[:, self._iu[0], self._iu[1]].T
        diff = cn - self.cbar_n[None, :, :]
        h_delta = np.einsum("bij,bij->b", diff, diff)
        return np.vstack([h_rho[None, :], h_c, h_delta[None, :]])

    def evaluate(self, eta):
        if self.rho0 is None:
            raise RuntimeError(
                "residue normalization not calibrated; evaluate a first "
                "batch or set rho0 explicitly")
        return self.evaluate_batch(np.asarray(eta, dtype=float)[:, None])[:, 0]

    def residues(self, etas):
        """Normalized residues rho at the columns of ``etas``."""
        if self.rho0 is None:
            raise RuntimeError("residue normalization not calibrated")
        x = self.norm_map.reconstruct(np.asarray(etas, dtype=float))
        y, kappa, mu, _ = self.layout.unpack(x)
        return self.bvp.residual_norms(y, kappa, mu) / self.rho0


def homogenization_spec(bvp, norm_map, layout, targets, c_train_mean,
                        rho0=None, rho_weight=1.0):
    """Assemble the 23-component constraint. Returns (spec, evaluator).

    The residue block participates in the multiplier iteration but is
    excluded from the error function used to pick the solution iterate.
    """
    evaluator = HomogenizationConstraint(bvp, norm_map, layout, targets,
                                         c_train_mean, rho0=rho0)
    spec = ConstraintSpec(
        evaluate=evaluator.evaluate,
        blocks=[Block("residue", 1, weight=rho_weight, in_error=False),
                Block("mean_matrix", 21),
                Block("dispersion", 1)],
        target=targets.target_vector(),
        evaluate_batch=evaluator.evaluate_batch)
    return spec, evaluator


def residue(bvp, y_blocks, g, w=None, rho0=1.0):
    """Normalized residue of the discrete equilibrium equations.

    ``y_blocks`` holds the six displacement solutions (free dofs), ``g``
    the bulk and shear moduli at the integration points (concatenated).
    ``w`` is accepted for signature compatibility but unused: in this
    material model the operator is fully determined by the moduli field.
    """
    y_blocks = np.asarray(y_blocks, dtype=float)
    g = np.asarray(g, dtype=float)
    n_p = g.size // 2
    kappa, mu = g[:n_p], g[n_p:]
    rho_hat = bvp.residual_norms(y_blocks[..., None], kappa[:, None],
                                 mu[:, None])[0]
    return float(rho_hat / rho0)
