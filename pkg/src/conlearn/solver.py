"""Relaxed Newton iteration on the Lagrange multiplier.

Each outer iteration regenerates the learned set with the current
multiplier (reusing one fixed noise bank), evaluates the constraint map at
every point, updates the multiplier with the empirical gradient
(target minus moment) and Hessian (sample covariance of the constraint
values), and records a normalized error. The returned multiplier is the
iterate whose error was smallest, together with the learned set cached
from that iteration.
"""

import csv
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
import scipy.linalg

from .errors import (NonFiniteConstraint, SingularHessian,
                     ZeroFirstIterationError)
from .sampler import init_conditions, run
from .surrogate import SurrogateModel

__all__ = ["Block", "ConstraintSpec", "LagrangeTrace", "PosteriorResult",
           "estimate_grad_hessian", "newton_step", "block_errors",
           "error_value", "solve"]

_HESS_EPS = 1e-8
_ALPHA_FLOOR = 0.05


@dataclass
class Block:
    """One named segment of the constraint vector."""

    name: str
    size: int
    weight: float = 1.0
    in_error: bool = True


@dataclass
class ConstraintSpec:
    """Implicit constraint map, its block structure, and the target."""

    evaluate: Callable          # (nu,) -> (n_c,)
    blocks: List[Block]
    target: np.ndarray
    evaluate_batch: Optional[Callable] = None  # (nu, B) -> (n_c, B)

    def __post_init__(self):
        self.target = np.atleast_1d(np.asarray(self.target, dtype=float))
        if sum(b.size for b in self.blocks) != self.target.size:
            raise ValueError("block sizes must sum to the target dimension")
        if not any(b.weight > 0 for b in self.blocks if b.in_error):
            raise ValueError("at least one error block needs positive weight")
        if not np.all(np.isfinite(self.target)):
            raise ValueError("target must be finite")
        for blk, sl in zip(self.blocks, self.block_slices()):
            if blk.in_error and np.linalg.norm(self.target[sl]) == 0.0:
                raise ValueError(
                    f"block '{blk.name}' is in the error function but its "
                    "target has zero norm")

    @property
    def n_c(self):
        return self.target.size

    def block_slices(self):
        out, start = [], 0
        for b in self.blocks:
            out.append(slice(start, start + b.size))
            start += b.size
        return out

    def eval_batch(self, etas):
        """Constraint values at every column of ``etas``, shape (n_c, B)."""
        if self.evaluate_batch is not None:
            return np.asarray(self.evaluate_batch(etas), dtype=float)
        cols = [np.atleast_1d(self.evaluate(etas[:, j]))
                for j in range(etas.shape[1])]
        return np.stack(cols, axis=1)


def _regularized(hess):
    n = hess.shape[0]
    return hess + _HESS_EPS * (np.trace(hess) / n) * np.eye(n)


def estimate_grad_hessian(h_values, target):
    """Empirical gradient and Hessian of the dual objective.

    The gradient is target minus the column mean of the constraint values;
    the Hessian is their unbiased sample covariance, symmetric by
    construction. Raises SingularHessian when the covariance cannot be
    factorized even after the trace-scaled ridge is added.
    """
    h_values = np.atleast_2d(np.asarray(h_values, dtype=float))
    if h_values.shape[1] < 2:
        raise ValueError("need at least two samples")
    grad = np.asarray(target, dtype=float) - h_values.mean(axis=1)
    hess = np.atleast_2d(np.cov(h_values, ddof=1))
    try:
        scipy.linalg.cho_factor(_regularized(hess))
    except scipy.linalg.LinAlgError as exc:
        raise SingularHessian("constraint covariance is singular") from exc
    return grad, hess


def newton_step(lam, grad, hess, alpha_relax):
    """One relaxed Newton update of the multiplier."""
    if not 0.0 < alpha_relax <= 1.0:
        raise ValueError("alpha_relax must lie in (0, 1]")
    try:
        factor = scipy.linalg.cho_factor(_regularized(np.atleast_2d(hess)))
        delta = scipy.linalg.cho_solve(factor, np.atleast_1d(grad))
    except scipy.linalg.LinAlgError as exc:
        raise SingularHessian("Hessian factorization failed") from exc
    return np.asarray(lam, dtype=float) - alpha_relax * delta


def block_errors(moments, spec):
    """Relative moment mismatch per block, for every block."""
    out = np.empty(len(spec.blocks))
    for k, sl in enumerate(spec.block_slices()):
        tgt = spec.target[sl]
        denom = np.linalg.norm(tgt)
        out[k] = np.linalg.norm(tgt - moments[sl]) / denom if denom > 0 \
            else np.linalg.norm(tgt - moments[sl])
    return out


def error_value(errs_i, errs_1, spec):
    """Combined error at one iteration, self-normalized at iteration 1."""
    total = 0.0
    for k, blk in enumerate(spec.blocks):
        if not blk.in_error:
            continue
        if errs_1[k] == 0.0:
            raise ZeroFirstIterationError(
                f"block '{blk.name}' has zero error at iteration 1")
        total += blk.weight * (errs_i[k] / errs_1[k]) ** 2
    return float(np.sqrt(total))


@dataclass
class LagrangeTrace:
    """Per-iteration record of the Newton iteration."""

    block_names: List[str]
    lams: List[np.ndarray] = field(default_factory=list)
    moments: List[np.ndarray] = field(default_factory=list)
    grads: List[np.ndarray] = field(default_factory=list)
    hessians: List[np.ndarray] = field(default_factory=list)
    errs: List[float] = field(default_factory=list)
    block_errs: List[np.ndarray] = field(default_factory=list)

    def append(self, lam, moments, grad, hess, err, errs_m):
        self.lams.append(np.array(lam))
        self.moments.append(np.array(moments))
        self.grads.append(np.array(grad))
        self.hessians.append(np.array(hess))
        self.errs.append(float(err))
        self.block_errs.append(np.array(errs_m))

    @property
    def n_iterations(self):
        return len(self.errs)

    @property
    def i_sol(self):
        """1-based index of the smallest error; ties go to the earliest."""
        return int(np.argmin(self.errs)) + 1

    def write_csv(self, path):
        """Write the trace with a fixed column order and 17-digit floats."""
        n_c = self.moments[0].size if self.moments else 0
        header = (["iteration", "err"]
                  + [f"err_{name}" for name in self.block_names]
                  + ["lambda_norm"]
                  + [f"moment_{k}" for k in range(n_c)])
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i in range(self.n_iterations):
                row = [str(i + 1), f"{self.errs[i]:.17g}"]
                row += [f"{v:.17g}" for v in self.block_errs[i]]
                row += [f"{np.linalg.norm(self.lams[i]):.17g}"]
                row += [f"{v:.17g}" for v in self.moments[i]]
                writer.writerow(row)


@dataclass
class PosteriorResult:
    """Solution multiplier, its learned set, and the iteration trace."""

    lambda_sol: np.ndarray
    learned_set: object
    trace: LagrangeTrace


def solve(spec, prior, config, i_max, alpha_relax=0.3):
    """Run the full multiplier iteration and return the best iterate.

    Iteration i regenerates the learned set from the fixed noise bank with
    the multiplier after i-1 updates; the drift uses the surrogate built on
    the previous iteration's set (no surrogate term at i=1, where the
    multiplier is zero). If an iteration more than doubles the error, the
    relaxation factor is halved (floor 0.05) for subsequent steps.
    """
    if i_max < 1:
        raise ValueError("i_max must be at least 1")
    bank = init_conditions(prior, config)
    lam = np.zeros(spec.n_c)
    model = None
    alpha = alpha_relax
    trace = LagrangeTrace(block_names=[b.name for b in spec.blocks])
    errs_1 = None
    best_err = np.inf
    best_set = None

    for i in range(1, i_max + 1):
        learned = run(config, bank, prior, model=model, lam=lam, iteration=i)
        h_vals = spec.eval_batch(learned.points)
        if not np.all(np.isfinite(h_vals)):
            raise NonFiniteConstraint(
                f"constraint returned non-finite values at iteration {i}")
        moments = h_vals.mean(axis=1)
        try:
            grad, hess = estimate_grad_hessian(h_vals, spec.target)
        except SingularHessian as exc:
            raise SingularHessian(f"iteration {i}: {exc}") from exc
        errs_m = block_errors(moments, spec)
        if errs_1 is None:
            errs_1 = errs_m
        err_i = error_value(errs_m, errs_1, spec)
        trace.append(lam, moments, grad, hess, err_i, errs_m)
        if err_i < best_err:
            best_err = err_i
            best_set = learned
        if i == i_max:
            break
        if i >= 2 and err_i > 2.0 * trace.errs[i - 2]:
            alpha = max(alpha / 2.0, _ALPHA_FLOOR)
        lam = newton_step(lam, grad, hess, alpha)
        model = SurrogateModel.build(learned.points, h_vals)

    i_sol = trace.i_sol
    return PosteriorResult(lambda_sol=trace.lams[i_sol - 1],
                           learned_set=best_set, trace=trace)
