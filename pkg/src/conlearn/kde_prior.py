"""Training-set normalization and the Gaussian-mixture reference density.

Vectors are stored column-wise: a set of N points in R^n is an (n, N)
array. The reduced coordinates produced by :func:`normalize_training` have
zero empirical mean and unit unbiased empirical covariance by construction.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateTrainingSet

__all__ = [
    "TrainingSetRaw",
    "NormalizationMap",
    "TrainingSetReduced",
    "KdePrior",
    "bandwidths",
    "normalize_training",
]


@dataclass
class TrainingSetRaw:
    """N_d physical-space points stored as the columns of ``points``."""

    points: np.ndarray  # (n_x, N_d)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2:
            raise ValueError("training points must form an (n_x, N_d) matrix")
        if self.n_x < 1:
            raise ValueError("points must have dimension >= 1")
        if self.n_d < 2:
            raise ValueError("need at least two training points")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("training points must be finite")

    @property
    def n_x(self):
        return self.points.shape[0]

    @property
    def n_d(self):
        return self.points.shape[1]


@dataclass
class NormalizationMap:
    """Affine change of coordinates between physical and reduced vectors.

    A physical vector x relates to its reduced coordinates eta through

        x = mean + basis @ diag(sqrt(eigvals)) @ eta

    where ``basis`` has orthonormal columns and ``eigvals`` are the
    (positive) eigenvalues of the empirical covariance of the training set.
    """

    mean: np.ndarray     # (n_x,)
    basis: np.ndarray    # (n_x, nu), orthonormal columns
    eigvals: np.ndarray  # (nu,), strictly positive, non-increasing

    @property
    def n_x(self):
        return self.mean.shape[0]

    @property
    def nu(self):
        return self.eigvals.shape[0]

    def reduce(self, x):
        """Map physical vectors (columns) to reduced coordinates."""
        x = np.asarray(x, dtype=float)
        ctr = (x.T - self.mean).T
        return (self.basis.T @ ctr) / np.sqrt(self.eigvals)[:, None] \
            if ctr.ndim == 2 else (self.basis.T @ ctr) / np.sqrt(self.eigvals)

    def reconstruct(self, eta):
        """Map reduced coordinates (columns) back to physical vectors."""
        eta = np.asarray(eta, dtype=float)
        scaled = (np.sqrt(self.eigvals) * eta.T).T
        rec = self.basis @ scaled
        return (rec.T + self.mean).T if rec.ndim == 2 else rec + self.mean


@dataclass
class TrainingSetReduced:
    """The training set in reduced coordinates, one point per column."""

    eta_d: np.ndarray  # (nu, N_d)

    @property
    def nu(self):
        return self.eta_d.shape[0]

    @property
    def n_d(self):
        return self.eta_d.shape[1]


def bandwidths(n_samples, dim):
    """Kernel bandwidths for ``n_samples`` points in dimension ``dim``.

    Returns the multivariate Silverman bandwidth ``s`` and the modified
    bandwidth ``s_hat = s * (s**2 + (n-1)/n) ** -0.5`` that makes the
    kernel mixture reproduce the empirical mean and covariance exactly.
    """
    if n_samples < 2:
        raise ValueError("bandwidths need n_samples >= 2")
    if dim < 1:
        raise ValueError("bandwidths need dim >= 1")
    s = (4.0 / (n_samples * (2.0 + dim))) ** (1.0 / (dim + 4.0))
    s_hat = s / np.sqrt(s * s + (n_samples - 1.0) / n_samples)
    return s, s_hat


def normalize_training(raw, nu=None, rtol=1e-12):
    """PCA-normalize a raw training set.

    Centers the points, takes the thin SVD of the centered matrix, and
    rescales so the reduced points have zero mean and unit unbiased
    covariance. Singular values at or below ``rtol`` times the largest are
    treated as numerically zero and dropped; the reduced dimension is
    additionally capped at N_d - 1 and, when given, at ``nu``.

    Parameters
    ----------
    raw : TrainingSetRaw
    nu : int, optional
        Requested reduced dimension (clamped to the numerical rank).
    rtol : float
        Relative singular-value truncation threshold.

    Returns
    -------
    (NormalizationMap, TrainingSetReduced)
    """
    if not isinstance(raw, TrainingSetRaw):
        raw = TrainingSetRaw(np.asarray(raw))
    x = raw.points
    n_d = raw.n_d
    mean = x.mean(axis=1)
    ctr = x - mean[:, None]

    phi, sing, psi_t = np.linalg.svd(ctr, full_matrices=False)
    keep = int(np.count_nonzero(sing > rtol * sing[0])) if sing[0] > 0 else 0
    if keep == 0:
        raise DegenerateTrainingSet("all singular values below tolerance")
    keep = min(keep, n_d - 1)
    if nu is not None:
        keep = min(keep, int(nu))

    phi = phi[:, :keep]
    eigvals = sing[:keep] ** 2 / (n_d - 1)
    # eta = kappa^{-1/2} phi^T ctr, which collapses to sqrt(N_d-1) psi^T
    eta_d = np.sqrt(n_d - 1.0) * psi_t[:keep, :]
    return NormalizationMap(mean, phi, eigvals), TrainingSetReduced(eta_d)


@dataclass
class KdePrior:
    """Gaussian-mixture density over reduced coordinates.

    The density is proportional to ``zeta``, the mean of N_d isotropic
    Gaussian kernels of width ``s_hat`` centered at the anchors scaled by
    ``s_hat / s``. The scaling preserves the zero mean and identity
    covariance of the training set for any N_d.

    All evaluations run in the log domain, so ``log_zeta`` is finite for
    every finite argument even when the linear-domain value underflows.
    """

    eta_d: np.ndarray  # (nu, N_d) anchors
    s: float = field(init=False)
    s_hat: float = field(init=False)
    c_nu: float = field(init=False)

    def __post_init__(self):
        self.eta_d = np.asarray(self.eta_d, dtype=float)
        if self.eta_d.ndim != 2:
            raise ValueError("anchors must form a (nu, N_d) matrix")
        if not np.all(np.isfinite(self.eta_d)):
            raise ValueError("anchors must be finite")
        if self.n_d < 2:
            raise ValueError("need at least two anchors")
        self.s, self.s_hat = bandwidths(self.n_d, self.nu)
        self.c_nu = (np.sqrt(2.0 * np.pi) * self.s_hat) ** (-self.nu)
        # mixture component centers and their squared norms, cached
        self._centers = (self.s_hat / self.s) * self.eta_d
        self._center_sq = np.einsum("ij,ij->j", self._centers, self._centers)

    @classmethod
    def from_training(cls, reduced):
        return cls(reduced.eta_d if isinstance(reduced, TrainingSetReduced)
                   else reduced)

    @property
    def nu(self):
        return self.eta_d.shape[0]

    @property
    def n_d(self):
        return self.eta_d.shape[1]

    @property
    def centers(self):
        """Mixture component means (s_hat/s) * eta_d, shape (nu, N_d)."""
        return self._centers

    def _log_kernels(self, u):
        """Log of each mixture kernel at the columns of ``u``, (N_d, N)."""
        u = np.atleast_2d(np.asarray(u, dtype=float).T).T
        cross = self._centers.T @ u
        usq = np.einsum("ij,ij->j", u, u)
        d2 = self._center_sq[:, None] - 2.0 * cross + usq[None, :]
        return -d2 / (2.0 * self.s_hat**2)

    def log_zeta(self, eta):
        """log zeta at a single point."""
        return float(logsumexp(self._log_kernels(eta)[:, 0]) - np.log(self.n_d))

    def zeta(self, eta):
        """Kernel mixture value in (0, 1]; may underflow to 0 for far eta."""
        return float(np.exp(self.log_zeta(eta)))

    def log_zeta_many(self, etas):
        """log zeta at every column of ``etas``."""
        return logsumexp(self._log_kernels(etas), axis=0) - np.log(self.n_d)

    def grad_log_zeta(self, eta):
        """Gradient of log zeta (equivalently grad zeta / zeta) at a point."""
        return self.grad_log_zeta_many(np.asarray(eta, dtype=float)[:, None])[:, 0]

    def grad_log_zeta_many(self, etas):
        """Gradient of log zeta at every column of ``etas``, shape (nu, N).

        Softmax weights over the mixture components give
        grad log zeta(u) = (sum_j w_j(u) m_j - u) / s_hat^2.
        """
        etas = np.asarray(etas, dtype=float)
        logk = self._log_kernels(etas)
        logk -= logk.max(axis=0)[None, :]
        w = np.exp(logk)
        w /= w.sum(axis=0)[None, :]
        return (self._centers @ w - etas) / self.s_hat**2

    def mixture_mean(self):
        """Analytic mean of the mixture (zero for normalized anchors)."""
        return self._centers.mean(axis=1)

    def mixture_second_moment(self):
        """Analytic second-moment matrix of the mixture.

        Equals s_hat^2 I plus the second moment of the scaled anchors,
        which is the identity whenever the anchors are normalized.
        """
        m = self._centers
        return self.s_hat**2 * np.eye(self.nu) + (m @ m.T) / self.n_d
