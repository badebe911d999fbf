"""Kernel-weighted statistical surrogate of an implicit constraint map.

The surrogate interpolates constraint values recorded at the points of the
current learned set with normalized Gaussian weights in anchor-scaled
coordinates, and exposes the analytic gradient that the sampler drift
needs. Single-point evaluation and the gradient run in float64 through a
log-domain softmax; the batched drift kernel used inside the sampler loop
works on a float32 fused distance matrix for speed (the exponents are
nonpositive by construction, so no overflow shift is needed there).
"""

from dataclasses import dataclass

import numpy as np

from .errors import ZeroVarianceComponent

__all__ = ["SurrogateModel", "silverman_joint_bandwidth"]

_DRIFT_CHUNK = 512


def silverman_joint_bandwidth(n_points, n_c, nu):
    """Joint-space Silverman bandwidth for n_points samples in R^{n_c+nu}."""
    return (4.0 / (n_points * (2.0 + n_c + nu))) ** (1.0 / (n_c + nu + 4.0))


@dataclass
class SurrogateModel:
    """Normalized-kernel regression of constraint values on anchors.

    Attributes
    ----------
    anchors : (nu, N) array
        Points of the learned set the model was built from.
    values : (n_c, N) array
        Constraint values at the anchors.
    sigma : (nu,) array
        Per-component unbiased standard deviations of the anchors.
    s_sb : float
        Joint-space Silverman bandwidth.
    """

    anchors: np.ndarray
    values: np.ndarray
    sigma: np.ndarray
    s_sb: float

    @classmethod
    def build(cls, anchors, values):
        anchors = np.asarray(anchors, dtype=float)
        values = np.atleast_2d(np.asarray(values, dtype=float))
        if anchors.ndim != 2:
            raise ValueError("anchors must form a (nu, N) matrix")
        if anchors.shape[1] != values.shape[1]:
            raise ValueError("anchors and values must have matching columns")
        if anchors.shape[1] < 2:
            raise ValueError("need at least two anchors")
        sigma = anchors.std(axis=1, ddof=1)
        if np.any(sigma == 0.0):
            bad = np.nonzero(sigma == 0.0)[0]
            raise ZeroVarianceComponent(
                f"anchor component(s) {bad.tolist()} have zero sample variance")
        s_sb = silverman_joint_bandwidth(anchors.shape[1], values.shape[0],
                                         anchors.shape[0])
        return cls(anchors, values, sigma, s_sb)

    @property
    def nu(self):
        return self.anchors.shape[0]

    @property
    def n_c(self):
        return self.values.shape[0]

    @property
    def n_points(self):
        return self.anchors.shape[1]

    def _log_weights(self, etas):
        """Unnormalized log kernel weights, shape (N, B)."""
        etas = np.asarray(etas, dtype=float)
        scale = self.sigma[:, None] * self.s_sb
        a = self.anchors / scale
        u = etas / scale
        d2 = (np.einsum("ij,ij->j", a, a)[:, None]
              - 2.0 * (a.T @ u)
              + np.einsum("ij,ij->j", u, u)[None, :])
        return -0.5 * d2

    def weights(self, eta):
        """Normalized kernel weights at a point; they sum to one."""
        logw = self._log_weights(np.asarray(eta, dtype=float)[:, None])[:, 0]
        logw -= logw.max()
        w = np.exp(logw)
        return w / w.sum()

    def eval(self, eta):
        """Surrogate value at a point, a convex combination of the values."""
        return self.values @ self.weights(eta)

    def eval_many(self, etas):
        """Surrogate values at every column of ``etas``, shape (n_c, B)."""
        logw = self._log_weights(etas)
        logw -= logw.max(axis=0)[None, :]
        w = np.exp(logw)
        w /= w.sum(axis=0)[None, :]
        return self.values @ w

    def grad(self, eta):
        """Gradient matrix (nu, n_c) of the surrogate at a point.

        With w the normalized weights, d_l = sigma^-2 (anchor_l - eta) / s_sb^2
        and gamma_l = w_l (d_l - sum_l' w_l' d_l'), the gradient is
        sum_l gamma_l (x) value_l, which reduces to the two-term expression
        evaluated here.
        """
        eta = np.asarray(eta, dtype=float)
        w = self.weights(eta)
        scale = self.sigma**2 * self.s_sb**2
        r = self.anchors @ w
        abar = self.values @ w
        g = (self.anchors * w[None, :]) @ self.values.T - np.outer(r, abar)
        return g / scale[:, None]

    def drift_operator(self, lam):
        """Fast batched map U -> [grad h_hat(u)] lam over columns of U.

        Precomputes the anchor-side augmented matrices once, so repeated
        calls inside the time-stepping loop only pay for two slim GEMMs and
        one exponential per chunk. Columns whose kernel weights all
        underflow get a zero drift term, which is the exact far-field limit
        of the normalized-kernel gradient.
        """
        lam = np.asarray(lam, dtype=float)
        scale = (self.sigma * self.s_sb)[:, None]
        a = (self.anchors / scale).astype(np.float32)
        n = self.n_points
        a_aug = np.empty((self.nu + 2, n), dtype=np.float32)
        a_aug[: self.nu] = a
        a_aug[self.nu] = -0.5 * np.einsum("ij,ij->j", a, a)
        a_aug[self.nu + 1] = 1.0
        # a constant shift in c cancels exactly in q - p r; centering keeps
        # the float32 reductions at the scale of the spread of c
        c_full = self.values.T @ lam
        c = (c_full - c_full.mean()).astype(np.float32)
        red = np.empty((2 * self.nu + 2, n), dtype=np.float32)
        red[: self.nu] = self.anchors
        red[self.nu: 2 * self.nu] = self.anchors * c[None, :]
        red[2 * self.nu] = c
        red[2 * self.nu + 1] = 1.0
        inv_var = 1.0 / (self.sigma**2 * self.s_sb**2)

        def apply(u):
            u = np.asarray(u, dtype=float)
            b = u.shape[1]
            out = np.empty((2 * self.nu + 2, b), dtype=np.float32)
            for j0 in range(0, b, _DRIFT_CHUNK):
                j1 = min(j0 + _DRIFT_CHUNK, b)
                uc = (u[:, j0:j1] / scale).astype(np.float32)
                u_aug = np.empty((self.nu + 2, j1 - j0), dtype=np.float32)
                u_aug[: self.nu] = uc
                u_aug[self.nu] = 1.0
                u_aug[self.nu + 1] = -0.5 * np.einsum("ij,ij->j", uc, uc)
                expo = a_aug.T @ u_aug
                np.exp(expo, out=expo)
                np.matmul(red, expo, out=out[:, j0:j1])
            r = out[: self.nu].astype(float)
            q = out[self.nu: 2 * self.nu].astype(float)
            p = out[2 * self.nu].astype(float)
            s = out[2 * self.nu + 1].astype(float)
            s[s == 0.0] = 1.0
            return inv_var[:, None] * (q / s - (r / s) * (p / s))

        return apply
