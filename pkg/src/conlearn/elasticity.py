"""Desk-scale 3D linear elasticity on a structured hexahedral grid.

Six affine-Dirichlet load cases on a thick plate, a random isotropic
apparent-modulus field sampled at the 2x2x2 Gauss points, the effective
elasticity matrix by volume averaging of the stress, and training-set
generation for the inference pipeline.

Pair indexing convention: the six load cases and the rows/columns of the
effective matrix follow VOIGT_PAIRS = (11, 22, 33, 23, 13, 12); matrix
entries are plain tensor components (no sqrt(2) weighting). Strain
vectors inside the assembly use engineering shear components, which makes
the per-point stiffness in that basis numerically identical to the
pair-indexed tensor matrix.
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .errors import BvpSolveFailure, NotSpd
from .kde_prior import TrainingSetRaw

__all__ = ["VOIGT_PAIRS", "HexMesh", "ElasticityBvp", "FieldHyper",
           "MaterialFieldSample", "TrainingLayout", "TrainingRun",
           "MomentReport", "gaussian_field", "draw_controls", "sample_prior",
           "generate_training", "moment_report"]

VOIGT_PAIRS = ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1))

# corner signs of the trilinear element, bottom face then top face
_CORNERS = np.array([(-1, -1, -1), (1, -1, -1), (1, 1, -1), (-1, 1, -1),
                     (-1, -1, 1), (1, -1, 1), (1, 1, 1), (-1, 1, 1)],
                    dtype=float)

# bulk / deviatoric split of the isotropic stiffness in engineering Voigt
_D_VOL = np.zeros((6, 6))
_D_VOL[:3, :3] = 1.0
_D_DEV = np.zeros((6, 6))
_D_DEV[:3, :3] = -2.0 / 3.0
_D_DEV[np.arange(3), np.arange(3)] = 4.0 / 3.0
_D_DEV[np.arange(3, 6), np.arange(3, 6)] = 1.0


def isotropic_matrix(kappa, mu):
    """6x6 pair-indexed elasticity matrix of an isotropic medium."""
    return kappa * _D_VOL + mu * _D_DEV


@dataclass
class HexMesh:
    """Structured hexahedral grid over a box, with Dirichlet bookkeeping."""

    counts: tuple = (6, 6, 3)
    lengths: tuple = (1.0, 1.0, 0.1)

    def __post_init__(self):
        n1, n2, n3 = self.counts
        if min(n1, n2, n3) < 2:
            raise ValueError(
                "need at least two elements per direction so interior "
                "(free) dofs exist")
        self.h = np.array([self.lengths[d] / self.counts[d] for d in range(3)])

        nn = (n1 + 1, n2 + 1, n3 + 1)
        ii, jj, kk = np.meshgrid(np.arange(nn[0]), np.arange(nn[1]),
                                 np.arange(nn[2]), indexing="ij")
        node_id = (ii + nn[0] * (jj + nn[1] * kk))
        coords = np.stack([ii * self.h[0], jj * self.h[1], kk * self.h[2]],
                          axis=-1)
        self.nodes = np.empty((nn[0] * nn[1] * nn[2], 3))
        self.nodes[node_id.ravel()] = coords.reshape(-1, 3)

        e1, e2, e3 = np.meshgrid(np.arange(n1), np.arange(n2), np.arange(n3),
                                 indexing="ij")
        e1 = e1.transpose(2, 1, 0).ravel()
        e2 = e2.transpose(2, 1, 0).ravel()
        e3 = e3.transpose(2, 1, 0).ravel()
        corners = ((_CORNERS + 1.0) / 2.0).astype(int)
        self.elems = np.stack([
            (e1 + c[0]) + nn[0] * ((e2 + c[1]) + nn[1] * (e3 + c[2]))
            for c in corners], axis=1)

        boundary = ((ii == 0) | (ii == n1) | (jj == 0) | (jj == n2)
                    | (kk == 0) | (kk == n3))
        bmask = np.empty(self.n_nodes, dtype=bool)
        bmask[node_id.ravel()] = boundary.ravel()
        self.boundary_node_mask = bmask
        dof_bound = np.repeat(bmask, 3)
        self.free_dofs = np.nonzero(~dof_bound)[0]
        self.boundary_dofs = np.nonzero(dof_bound)[0]
        self.elem_dofs = (3 * self.elems[:, :, None]
                          + np.arange(3)[None, None, :]).reshape(-1, 24)

        # Gauss-point physical coordinates, element-major then point-major
        ref = _CORNERS / math.sqrt(3.0)
        origins = self.nodes[self.elems[:, 0]]
        local = (ref + 1.0) / 2.0 * self.h[None, :]
        self.gauss_points = (origins[:, None, :] + local[None, :, :]) \
            .reshape(-1, 3)

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_dofs(self):
        return 3 * self.n_nodes

    @property
    def n_elems(self):
        return self.elems.shape[0]

    @property
    def n_y(self):
        return self.free_dofs.size

    @property
    def n_p(self):
        return 8 * self.n_elems

    @property
    def volume(self):
        return float(np.prod(self.lengths))


def _shape_gradients(h):
    """Physical shape-function gradients at the 8 Gauss points, (8, 8, 3)."""
    gp = _CORNERS / math.sqrt(3.0)
    grads = np.empty((8, 8, 3))
    for g, xi in enumerate(gp):
        for a, s in enumerate(_CORNERS):
            terms = 1.0 + s * xi
            for d in range(3):
                others = np.prod(np.delete(terms, d))
                grads[g, a, d] = 0.125 * s[d] * others * (2.0 / h[d])
    return grads


def _strain_matrices(grads):
    """Engineering strain-displacement matrices at each Gauss point."""
    b = np.zeros((8, 6, 24))
    for g in range(8):
        for a in range(8):
            dx, dy, dz = grads[g, a]
            c = 3 * a
            b[g, 0, c + 0] = dx
            b[g, 1, c + 1] = dy
            b[g, 2, c + 2] = dz
            b[g, 3, c + 1] = dz
            b[g, 3, c + 2] = dy
            b[g, 4, c + 0] = dz
            b[g, 4, c + 2] = dx
            b[g, 5, c + 0] = dy
            b[g, 5, c + 1] = dx
    return b


def _affine_case_values(coords, m, r):
    """Affine Dirichlet field for load case (m, r) at given coordinates."""
    vals = np.zeros((coords.shape[0], 3))
    vals[:, m] += 0.5 * coords[:, r]
    vals[:, r] += 0.5 * coords[:, m]
    return vals


class ElasticityBvp:
    """Assembled model: element matrices, load-case data, scatter maps."""

    def __init__(self, mesh: HexMesh):
        self.mesh = mesh
        grads = _shape_gradients(mesh.h)
        self.b_mats = _strain_matrices(grads)
        det_j = float(np.prod(mesh.h)) / 8.0
        self.w_det_j = det_j  # unit Gauss weights
        self.k_vol = np.einsum("gsi,st,gtj->gij", self.b_mats, _D_VOL,
                               self.b_mats) * det_j
        self.k_dev = np.einsum("gsi,st,gtj->gij", self.b_mats, _D_DEV,
                               self.b_mats) * det_j

        # full-length affine fields per case; boundary rows are the BC data
        self.case_values = np.stack([
            _affine_case_values(mesh.nodes, m, r).reshape(-1)
            for (m, r) in VOIGT_PAIRS], axis=0)

        n_free = mesh.n_y
        free_index = -np.ones(mesh.n_dofs, dtype=int)
        free_index[mesh.free_dofs] = np.arange(n_free)
        flat = mesh.elem_dofs.reshape(-1)
        sel = free_index[flat] >= 0
        self._scatter_free = scipy.sparse.csr_matrix(
            (np.ones(sel.sum()), (free_index[flat[sel]],
                                  np.nonzero(sel)[0])),
            shape=(n_free, flat.size))

    # -- assembly ---------------------------------------------------------

    def _moduli_by_element(self, kappa, mu):
        ne = self.mesh.n_elems
        return kappa.reshape(ne, 8, -1), mu.reshape(ne, 8, -1)

    def assemble(self, kappa, mu):
        """Global stiffness matrix (all dofs) for a moduli field."""
        ke = kappa.reshape(self.mesh.n_elems, 8)
        me = mu.reshape(self.mesh.n_elems, 8)
        k_el = (np.einsum("eg,gij->eij", ke, self.k_vol)
                + np.einsum("eg,gij->eij", me, self.k_dev))
        rows = np.repeat(self.mesh.elem_dofs, 24, axis=1).reshape(-1)
        cols = np.tile(self.mesh.elem_dofs, (1, 24)).reshape(-1)
        a = scipy.sparse.coo_matrix((k_el.reshape(-1), (rows, cols)),
                                    shape=(self.mesh.n_dofs,) * 2)
        return a.tocsr()

    def solve_load_cases(self, mat):
        """Solve the six Dirichlet problems; returns free dofs, (6, n_y).

        A direct sparse factorization is used; if it fails (for example
        from fill-in on a large mesh), conjugate gradients with a Jacobi
        preconditioner takes over. Each case is checked to a relative
        residual of 1e-10.
        """
        mesh = self.mesh
        a = self.assemble(mat.kappa, mat.mu)
        a_ff = a[mesh.free_dofs][:, mesh.free_dofs].tocsc()
        a_fb = a[mesh.free_dofs][:, mesh.boundary_dofs].tocsr()
        try:
            solve_one = scipy.sparse.linalg.splu(a_ff).solve
        except (RuntimeError, MemoryError):
            diag = a_ff.diagonal()
            with np.errstate(over="ignore", divide="ignore"):
                inv_diag = 1.0 / diag
            if np.any(diag <= 0) or not np.all(np.isfinite(inv_diag)):
                raise BvpSolveFailure("stiffness diagonal is degenerate")
            precond = scipy.sparse.diags(inv_diag)

            def solve_one(rhs):
                y, info = scipy.sparse.linalg.cg(a_ff, rhs, rtol=1e-12,
                                                 maxiter=20 * mesh.n_y,
                                                 M=precond)
                if info != 0:
                    raise BvpSolveFailure(f"cg did not converge ({info})")
                return y

        out = np.empty((6, mesh.n_y))
        for c in range(6):
            rhs = -a_fb @ self.case_values[c, mesh.boundary_dofs]
            y = solve_one(rhs)
            res = np.linalg.norm(a_ff @ y - rhs)
            ref = max(np.linalg.norm(rhs), 1e-300)
            if not np.isfinite(res) or res / ref > 1e-10:
                raise BvpSolveFailure(
                    f"load case {c}: relative residual {res / ref:.3g}")
            out[c] = y
        return out

    # -- batched evaluation over reconstructed points ---------------------

    def _full_fields(self, y_free, case):
        """Insert boundary data: (n_y, B) free dofs -> (n_dofs, B)."""
        mesh = self.mesh
        full = np.empty((mesh.n_dofs, y_free.shape[1]))
        full[mesh.boundary_dofs] = \
            self.case_values[case, mesh.boundary_dofs][:, None]
        full[mesh.free_dofs] = y_free
        return full

    def residual_norms(self, y, kappa, mu):
        """Normalized residual over all cases for each batch column.

        Parameters: y (6, n_y, B), kappa and mu (n_p, B). Returns (B,) with
        rho_hat = sqrt(sum_cases |A y - b|^2 / (6 n_y)).
        """
        mesh = self.mesh
        ne, bsz = mesh.n_elems, y.shape[2]
        ke, me = self._moduli_by_element(kappa, mu)  # (ne, 8, B)
        kf = ke.transpose(0, 2, 1).reshape(ne * bsz, 8)
        mf = me.transpose(0, 2, 1).reshape(ne * bsz, 8)
        sumsq = np.zeros(bsz)
        for c in range(6):
            full = self._full_fields(y[c], c)
            ye = full[mesh.elem_dofs]                 # (ne, 24, B)
            ye2 = ye.transpose(0, 2, 1).reshape(ne * bsz, 24)
            r = np.zeros((ne * bsz, 24))
            for g in range(8):
                r += kf[:, g:g + 1] * (ye2 @ self.k_vol[g].T)
                r += mf[:, g:g + 1] * (ye2 @ self.k_dev[g].T)
            r = r.reshape(ne, bsz, 24).transpose(0, 2, 1).reshape(ne * 24, bsz)
            r_free = self._scatter_free @ r
            sumsq += np.einsum("ij,ij->j", r_free, r_free)
        return np.sqrt(sumsq / (6.0 * mesh.n_y))

    def effective_matrices(self, y, kappa, mu):
        """Volume-averaged stress response, (B, 6, 6), unsymmetrized.

        Column j holds the averaged stress of load case j; entry (i, j) is
        the pair-indexed effective tensor component.
        """
        mesh = self.mesh
        ne, bsz = mesh.n_elems, y.shape[2]
        ke, me = self._moduli_by_element(kappa, mu)
        kf = ke.transpose(0, 2, 1).reshape(ne * bsz, 8)
        mf = me.transpose(0, 2, 1).reshape(ne * bsz, 8)
        out = np.empty((bsz, 6, 6))
        scale = self.w_det_j / mesh.volume
        for c in range(6):
            full = self._full_fields(y[c], c)
            ye = full[mesh.elem_dofs]
            ye2 = ye.transpose(0, 2, 1).reshape(ne * bsz, 24)
            acc = np.zeros((ne * bsz, 6))
            for g in range(8):
                eps = ye2 @ self.b_mats[g].T
                acc += kf[:, g:g + 1] * (eps @ _D_VOL.T)
                acc += mf[:, g:g + 1] * (eps @ _D_DEV.T)
            out[:, :, c] = acc.reshape(ne, bsz, 6).sum(axis=0) * scale
        return out

    def effective_matrix_raw(self, mat, y_free):
        """Unsymmetrized effective matrix for one sample."""
        return self.effective_matrices(y_free[:, :, None],
                                       mat.kappa[:, None],
                                       mat.mu[:, None])[0]

    def effective_matrix(self, mat, y_free):
        """Symmetrized effective matrix; raises NotSpd if not positive."""
        raw = self.effective_matrix_raw(mat, y_free)
        sym = 0.5 * (raw + raw.T)
        if np.linalg.eigvalsh(sym).min() <= 0.0:
            raise NotSpd("effective matrix has a nonpositive eigenvalue")
        return sym

    def average_strains(self, y_free):
        """Volume-averaged strain tensor per case, (6, 3, 3)."""
        mesh = self.mesh
        out = np.empty((6, 3, 3))
        for c in range(6):
            full = self._full_fields(y_free[c][:, None], c)[:, 0]
            ye = full[mesh.elem_dofs]                  # (ne, 24)
            eps = np.einsum("gsk,ek->egs", self.b_mats, ye)
            avg = eps.sum(axis=(0, 1)) * self.w_det_j / mesh.volume
            t = np.empty((3, 3))
            t[0, 0], t[1, 1], t[2, 2] = avg[0], avg[1], avg[2]
            t[1, 2] = t[2, 1] = 0.5 * avg[3]
            t[0, 2] = t[2, 0] = 0.5 * avg[4]
            t[0, 1] = t[1, 0] = 0.5 * avg[5]
            out[c] = t
        return out


# -- random apparent-modulus field ----------------------------------------


@dataclass
class FieldHyper:
    """Hyperparameters of the prior modulus field.

    The bulk and shear multipliers are Gamma with the given means and
    coefficients of variation; the pointwise dispersion of the log-normal
    modulation fields is uniform on ``delta_bounds``. ``lengths`` are the
    spatial correlation lengths of the Gaussian kernel
    rho(tau) = exp(-pi tau^2 / (4 L^2)) per axis, normalized so the
    integral of rho over [0, inf) equals L.
    """

    lengths: tuple = (0.1, 0.1, 0.1)
    mean_bulk: float = 1.08974e11
    mean_shear: float = 6.85484e10
    cov_bulk: float = 0.5
    cov_shear: float = 0.25
    delta_bounds: tuple = (0.1, 0.5)
    n_modes: int = 512

    def __post_init__(self):
        if min(self.lengths) <= 0:
            raise ValueError("correlation lengths must be positive")
        if self.delta_bounds[0] <= 0 or \
                self.delta_bounds[1] < self.delta_bounds[0]:
            raise ValueError("delta bounds must satisfy 0 < lo <= hi")


@dataclass
class MaterialFieldSample:
    """One realization of the apparent-modulus field at the Gauss points."""

    kappa: np.ndarray    # (n_p,) bulk moduli
    mu: np.ndarray       # (n_p,) shear moduli
    z_bulk: np.ndarray   # underlying unit Gaussian field values
    z_shear: np.ndarray
    w: np.ndarray        # (log C_bulk, log C_shear, log delta)

    def __post_init__(self):
        if np.any(self.kappa <= 0) or np.any(self.mu <= 0):
            raise ValueError("moduli must be strictly positive")


def gaussian_field(points, lengths, rng, n_modes=512):
    """Homogeneous unit-variance Gaussian field by randomized cosines.

    Frequencies follow the spectral measure of the separable Gaussian
    kernel rho_d(tau) = exp(-pi tau^2 / (4 L_d^2)); every draw has exactly
    unit pointwise variance, and the spatial correlation approaches the
    kernel at rate 1/sqrt(n_modes).
    """
    lengths = np.asarray(lengths, dtype=float)
    omega = rng.standard_normal((n_modes, 3)) \
        * (np.sqrt(np.pi / 2.0) / lengths)[None, :]
    phase = rng.uniform(0.0, 2.0 * np.pi, n_modes)
    proj = points @ omega.T + phase[None, :]
    return np.sqrt(2.0 / n_modes) * np.cos(proj).sum(axis=1)


def draw_controls(hyper, rng):
    """Draw the scalar control variables (bulk, shear, dispersion)."""
    c_bulk = rng.gamma(1.0 / hyper.cov_bulk**2,
                       hyper.mean_bulk * hyper.cov_bulk**2)
    c_shear = rng.gamma(1.0 / hyper.cov_shear**2,
                        hyper.mean_shear * hyper.cov_shear**2)
    delta = rng.uniform(*hyper.delta_bounds)
    return c_bulk, c_shear, delta


def sample_prior(mesh, hyper, seed):
    """Draw one material realization: scalars, fields, control variables."""
    rng = np.random.default_rng(seed)
    c_bulk, c_shear, delta = draw_controls(hyper, rng)
    sig = math.sqrt(math.log(1.0 + delta * delta))
    pts = mesh.gauss_points
    z_bulk = gaussian_field(pts, hyper.lengths, rng, hyper.n_modes)
    z_shear = gaussian_field(pts, hyper.lengths, rng, hyper.n_modes)
    kappa = c_bulk * np.exp(sig * z_bulk - 0.5 * sig * sig)
    mu = c_shear * np.exp(sig * z_shear - 0.5 * sig * sig)
    w = np.array([math.log(c_bulk), math.log(c_shear), math.log(delta)])
    return MaterialFieldSample(kappa=kappa, mu=mu, z_bulk=z_bulk,
                               z_shear=z_shear, w=w)


# -- training set ----------------------------------------------------------


@dataclass
class TrainingLayout:
    """Fixed packing of one realization into a flat vector.

    Order: the six displacement solutions (free dofs, case-major), the bulk
    moduli at all integration points, the shear moduli, then the three
    control variables.
    """

    n_y: int
    n_p: int

    @property
    def n_x(self):
        return 6 * self.n_y + 2 * self.n_p + 3

    def pack(self, y, kappa, mu, w):
        return np.concatenate([np.asarray(y).reshape(-1), kappa, mu, w])

    def unpack(self, x):
        """Split columns of (n_x, B) into (y, kappa, mu, w) blocks."""
        x = np.atleast_2d(np.asarray(x, dtype=float).T).T
        ny, npts = self.n_y, self.n_p
        y = x[: 6 * ny].reshape(6, ny, -1)
        kappa = x[6 * ny: 6 * ny + npts]
        mu = x[6 * ny + npts: 6 * ny + 2 * npts]
        w = x[6 * ny + 2 * npts:]
        return y, kappa, mu, w


@dataclass
class TrainingRun:
    """Training set plus the statistics recorded while generating it."""

    raw: TrainingSetRaw
    c_eff: np.ndarray            # (N_d, 6, 6) symmetrized effective matrices
    residual_norms: np.ndarray   # (N_d,) unnormalized residues of the solves
    layout: TrainingLayout


def _one_realization(bvp, hyper, layout, child_seed, j):
    rng = np.random.default_rng(child_seed)
    mat = sample_prior(bvp.mesh, hyper, rng)
    try:
        y = bvp.solve_load_cases(mat)
    except BvpSolveFailure as exc:
        raise BvpSolveFailure(f"realization {j}: {exc}") from exc
    ceff = bvp.effective_matrix(mat, y)
    rho_hat = bvp.residual_norms(y[:, :, None], mat.kappa[:, None],
                                 mat.mu[:, None])[0]
    x = layout.pack(y, mat.kappa, mat.mu, mat.w)
    return x, ceff, rho_hat


def generate_training(bvp, hyper, n_d, seed, workers=1):
    """Monte Carlo training set of n_d solved realizations.

    Realizations use independent spawned seeds, so the result is identical
    for any worker count.
    """
    if n_d < 2:
        raise ValueError("need at least two realizations")
    layout = TrainingLayout(n_y=bvp.mesh.n_y, n_p=bvp.mesh.n_p)
    children = np.random.SeedSequence(seed).spawn(n_d)
    if workers > 1:
        from joblib import Parallel, delayed
        results = Parallel(n_jobs=workers)(
            delayed(_one_realization)(bvp, hyper, layout, children[j], j)
            for j in range(n_d))
    else:
        results = [_one_realization(bvp, hyper, layout, children[j], j)
                   for j in range(n_d)]
    points = np.stack([r[0] for r in results], axis=1)
    c_eff = np.stack([r[1] for r in results], axis=0)
    rho = np.array([r[2] for r in results])
    return TrainingRun(raw=TrainingSetRaw(points), c_eff=c_eff,
                       residual_norms=rho, layout=layout)


# -- dispersion statistics --------------------------------------------------


@dataclass
class MomentReport:
    """First/second-moment summary of a batch of effective matrices."""

    mean_matrix: np.ndarray
    mu: float                 # Frobenius norm of the mean matrix
    delta2: np.ndarray        # per-sample squared normalized deviation
    delta_eff: float
    delta_eff_ml: float       # sqrt of the mode of the delta2 density
    pdf_grid: np.ndarray
    pdf_values: np.ndarray


def moment_report(c_samples):
    """Dispersion report for samples of the effective matrix.

    delta2 follows the squared normalized Frobenius deviation from the
    sample mean; delta_eff is the square root of its mean, and the
    maximum-likelihood variant takes the mode of a 1-D Gaussian kernel
    density (Silverman bandwidth) of the delta2 samples.
    """
    c_samples = np.asarray(c_samples, dtype=float)
    if c_samples.ndim != 3 or c_samples.shape[0] < 2:
        raise ValueError("need at least two (6, 6) samples")
    mean = c_samples.mean(axis=0)
    mu = np.linalg.norm(mean, "fro")
    diff = c_samples - mean[None, :, :]
    delta2 = np.einsum("bij,bij->b", diff, diff) / mu**2
    delta_eff = math.sqrt(delta2.mean())

    n = delta2.size
    sd = delta2.std(ddof=1)
    if sd == 0.0:
        grid = np.array([delta2[0]])
        dens = np.array([np.inf])
        d2_ml = float(delta2[0])
    else:
        bw = sd * (4.0 / (3.0 * n)) ** 0.2
        grid = np.linspace(delta2.min() - 3 * bw, delta2.max() + 3 * bw, 512)
        z = (grid[:, None] - delta2[None, :]) / bw
        dens = np.exp(-0.5 * z * z).sum(axis=1) / (n * bw * math.sqrt(2 * math.pi))
        d2_ml = float(grid[np.argmax(dens)])
    return MomentReport(mean_matrix=mean, mu=float(mu), delta2=delta2,
                        delta_eff=float(delta_eff),
                        delta_eff_ml=math.sqrt(max(d2_ml, 0.0)),
                        pdf_grid=grid, pdf_values=dens)
