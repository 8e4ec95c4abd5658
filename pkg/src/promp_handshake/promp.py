"""Probabilistic Movement Primitives over joint-angle trajectories.

A ProMP is a Gaussian over basis-function weights. Trajectories are
``y(z) = Psi(z).T @ w`` with ``Psi(z)`` a block-diagonal matrix of radial
basis activations of the phase ``z`` in [0, 1]; dimension ``d`` owns weights
``w[d * n_basis:(d + 1) * n_basis]``.

Conditioning never inverts a matrix explicitly; every solve goes through a
Cholesky factorization.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import ContractError, LoadError, NumericalError, ValidationError
from .kinematics import fk_derivatives, forward_kinematics

FORMAT_VERSION = 1
DEFAULT_LAMBDA = 1e-10
COV_JITTER = 1e-8
DEFAULT_OBS_STD = 0.01  # rad


@dataclass(frozen=True)
class BasisConfig:
    """Gaussian RBFs on the phase axis.

    ``width`` is the variance of each kernel in squared phase units.
    ``centers`` defaults to ``n_basis`` equally spaced points on [0, 1].
    """

    n_basis: int = 3
    width: float = 0.01
    normalize: bool = True
    centers: tuple = field(default=None)

    def __post_init__(self):
        if self.n_basis < 2:
            raise ValidationError("n_basis must be >= 2")
        if not self.width > 0:
            raise ValidationError("width must be positive")
        centers = self.centers
        if centers is None:
            centers = np.linspace(0.0, 1.0, self.n_basis)
        centers = tuple(float(c) for c in centers)
        if len(centers) != self.n_basis or np.any(np.diff(centers) <= 0):
            raise ValidationError("centers must be n_basis strictly increasing values")
        object.__setattr__(self, "centers", centers)

    def to_dict(self):
        return {"n_basis": self.n_basis, "centers": list(self.centers),
                "width": self.width, "normalize": self.normalize}


def phase(t, t0, duration, full_output=False):
    """Normalized time ``(t - t0) / duration``, clamped to [0, 1].

    With ``full_output`` also returns whether clamping was needed.
    """
    if not duration > 0:
        raise ValidationError("duration must be positive")
    z = (t - t0) / duration
    clamped = z < 0.0 or z > 1.0
    z = min(max(z, 0.0), 1.0)
    return (z, clamped) if full_output else z


def _rbf_derivatives(z, cfg, order):
    """Activations and their z-derivatives up to ``order``: shape (order+1, m, n)."""
    z = np.atleast_1d(np.asarray(z, dtype=float))[:, None]
    c = np.asarray(cfg.centers)[None, :]
    w = cfg.width
    a = (z - c) / w
    expo = -0.5 * (z - c) ** 2 / w
    if cfg.normalize:
        # per-phase rescaling cancels in every normalized derivative
        expo = expo - expo.max(axis=1, keepdims=True)
    phi = np.exp(expo)
    out = [phi]
    if order >= 1:
        out.append(-a * phi)
    if order >= 2:
        out.append((a ** 2 - 1.0 / w) * phi)
    if order >= 3:
        out.append((3.0 * a / w - a ** 3) * phi)
    out = np.stack(out)
    if not cfg.normalize:
        return out
    s = out.sum(axis=2, keepdims=True)
    b = np.empty_like(out)
    b[0] = out[0] / s[0]
    if order >= 1:
        b[1] = (out[1] - b[0] * s[1]) / s[0]
    if order >= 2:
        b[2] = (out[2] - 2.0 * b[1] * s[1] - b[0] * s[2]) / s[0]
    if order >= 3:
        b[3] = (out[3] - 3.0 * b[2] * s[1] - 3.0 * b[1] * s[2] - b[0] * s[3]) / s[0]
    return b


def basis_activations(z, cfg):
    """Activation rows ``(m, n_basis)`` for an array of phases."""
    return _rbf_derivatives(z, cfg, 0)[0]


def _block(row, dof):
    n = row.shape[0]
    psi = np.zeros((dof * n, dof))
    for d in range(dof):
        psi[d * n:(d + 1) * n, d] = row
    return psi


def basis_matrix(z, cfg, dof):
    """Block-diagonal ``Psi(z)`` of shape ``(dof * n_basis, dof)``."""
    return _block(_rbf_derivatives(z, cfg, 0)[0, 0], dof)


def basis_third_derivative(z, cfg, dof):
    """Third phase-derivative of ``Psi`` at ``z``, same layout as :func:`basis_matrix`."""
    return _block(_rbf_derivatives(z, cfg, 3)[3, 0], dof)


def trajectory_phases(n_frames):
    """Phases of the frames of an ``n_frames`` trajectory, 0 to 1 inclusive."""
    if n_frames < 2:
        raise ValidationError("a trajectory needs at least 2 frames")
    return np.arange(n_frames) / (n_frames - 1)


def fit_weights(traj, cfg=None, regularizer="ridge", lam=DEFAULT_LAMBDA, phases=None):
    """Least-squares basis weights for one trajectory ``(T, dof)``.

    ``regularizer="ridge"`` solves ``(Phi'Phi + lam I) w = Phi' tau`` and
    ``"jerk"`` replaces the identity by ``Gamma'Gamma``, the Gram matrix of
    the third phase-derivative of the basis.
    """
    cfg = cfg or BasisConfig()
    traj = np.asarray(traj, dtype=float)
    if traj.ndim == 1:
        traj = traj[:, None]
    n_frames, dof = traj.shape
    if n_frames < cfg.n_basis:
        raise ValidationError(f"trajectory has {n_frames} frames, fewer than {cfg.n_basis} basis functions")
    z = trajectory_phases(n_frames) if phases is None else np.asarray(phases, dtype=float)
    derivs = _rbf_derivatives(z, cfg, 3 if regularizer == "jerk" else 0)
    phi = derivs[0]
    gram = phi.T @ phi
    if regularizer == "ridge":
        a = gram + lam * np.eye(cfg.n_basis)
    elif regularizer == "jerk":
        gamma = derivs[3]
        a = gram + lam * (gamma.T @ gamma)
    else:
        raise ValidationError(f"unknown regularizer {regularizer!r}")
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > 1e15:
        raise NumericalError(f"normal matrix is singular (condition estimate {cond:.3g})")
    try:
        w = cho_solve(cho_factor(a), phi.T @ traj)
    except LinAlgError as exc:
        raise NumericalError(f"normal matrix not positive definite (condition {cond:.3g})") from exc
    return w.T.reshape(-1)


def _check_psd(mat, name, tol=1e-10):
    if not np.allclose(mat, mat.T, rtol=0, atol=1e-9 * max(1.0, np.abs(mat).max())):
        raise ValidationError(f"{name} is not symmetric")
    lo = np.linalg.eigvalsh(mat).min()
    if lo < -tol * max(1.0, np.abs(mat).max()):
        raise ValidationError(f"{name} is not positive semidefinite (min eigenvalue {lo:.3g})")


@dataclass(frozen=True, eq=False)
class ProMP:
    mean_weights: np.ndarray
    weight_cov: np.ndarray
    obs_noise: np.ndarray
    basis: BasisConfig = field(default_factory=BasisConfig)

    def __post_init__(self):
        mu = np.asarray(self.mean_weights, dtype=float).reshape(-1)
        cov = np.asarray(self.weight_cov, dtype=float)
        noise = np.asarray(self.obs_noise, dtype=float)
        n = self.basis.n_basis
        if mu.size % n:
            raise ValidationError("mean_weights length is not a multiple of n_basis")
        dof = mu.size // n
        if cov.shape != (mu.size, mu.size) or noise.shape != (dof, dof):
            raise ValidationError(f"inconsistent shapes {mu.shape}, {cov.shape}, {noise.shape}")
        _check_psd(cov, "weight_cov")
        _check_psd(noise, "obs_noise")
        for name, val in (("mean_weights", mu), ("weight_cov", cov), ("obs_noise", noise)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def dof(self):
        return self.mean_weights.size // self.basis.n_basis

    def psi(self, z):
        return basis_matrix(z, self.basis, self.dof)

    def to_dict(self):
        return {
            "version": FORMAT_VERSION,
            "dof": self.dof,
            "basis": self.basis.to_dict(),
            "mean_weights": self.mean_weights.tolist(),
            "weight_cov": self.weight_cov.reshape(-1).tolist(),
            "obs_noise": self.obs_noise.reshape(-1).tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("version") != FORMAT_VERSION:
            raise LoadError(f"unsupported ProMP file version {d.get('version')!r}")
        try:
            basis = BasisConfig(**d["basis"])
            dof = int(d["dof"])
            size = dof * basis.n_basis
            return cls(
                np.array(d["mean_weights"], dtype=float).reshape(size),
                np.array(d["weight_cov"], dtype=float).reshape(size, size),
                np.array(d["obs_noise"], dtype=float).reshape(dof, dof),
                basis,
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise LoadError(f"malformed ProMP file: {exc}") from exc


def save_promp(path, p):
    Path(path).write_text(json.dumps(p.to_dict(), indent=1))


def load_promp(path):
    return ProMP.from_dict(json.loads(Path(path).read_text()))


def fit_promp(samples, obs_noise=None, basis=None):
    """Moment-match a ProMP to per-trajectory weight vectors ``(N, dof * n)``."""
    basis = basis or BasisConfig()
    w = np.asarray(samples, dtype=float)
    if w.ndim != 2 or len(w) < 2:
        raise ValidationError("fit_promp needs at least 2 weight samples")
    mu = w.mean(axis=0)
    dev = w - mu
    cov = dev.T @ dev / (len(w) - 1)
    cov = 0.5 * (cov + cov.T) + COV_JITTER * np.eye(w.shape[1])
    dof = w.shape[1] // basis.n_basis
    if obs_noise is None:
        obs_noise = DEFAULT_OBS_STD ** 2 * np.eye(dof)
    return ProMP(mu, cov, obs_noise, basis)


def learn_promp(trajectories, basis=None, regularizer="ridge", lam=DEFAULT_LAMBDA, obs_noise=None):
    """Fit weights to every trajectory, then the weight distribution."""
    basis = basis or BasisConfig()
    weights = [fit_weights(t, basis, regularizer, lam) for t in trajectories]
    return fit_promp(weights, obs_noise, basis)


def marginal(p, z):
    """Mean ``(dof,)`` and covariance ``(dof, dof)`` of ``y`` at phase ``z``."""
    psi = p.psi(z)
    return psi.T @ p.mean_weights, psi.T @ p.weight_cov @ psi + p.obs_noise


def mean_trajectory(p, phases):
    """Mean joint values at each phase, ``(len(phases), dof)``."""
    phi = basis_activations(phases, p.basis)
    return phi @ p.mean_weights.reshape(p.dof, -1).T


def _cho(mat, what):
    try:
        return cho_factor(mat)
    except LinAlgError:
        warnings.warn(f"{what} not positive definite; adding 1e-12 I", RuntimeWarning, stacklevel=3)
        try:
            return cho_factor(mat + 1e-12 * np.eye(len(mat)))
        except LinAlgError as exc:
            raise NumericalError(f"{what} is singular") from exc


def condition_joint_space(p, z, y_star, noise_star):
    """Condition on observing joint values ``y_star`` with covariance ``noise_star`` at ``z``."""
    psi = p.psi(z)
    y_star = np.asarray(y_star, dtype=float).reshape(p.dof)
    noise_star = np.asarray(noise_star, dtype=float)
    cov_psi = p.weight_cov @ psi
    inner = noise_star + psi.T @ cov_psi
    gain = cho_solve(_cho(inner, "observation covariance"), cov_psi.T).T
    mu = p.mean_weights + gain @ (y_star - psi.T @ p.mean_weights)
    cov = p.weight_cov - gain @ cov_psi.T
    cov = 0.5 * (cov + cov.T)
    return ProMP(mu, cov, p.obs_noise, p.basis)


@dataclass(frozen=True)
class TaskTarget:
    position: np.ndarray
    accuracy: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        acc = np.asarray(self.accuracy, dtype=float)
        if acc.shape != (3, 3):
            raise ValidationError("accuracy must be 3 x 3")
        _check_psd(acc, "accuracy")
        object.__setattr__(self, "accuracy", acc)


@dataclass(frozen=True)
class TaskSolution:
    y: np.ndarray
    converged: bool
    iterations: int
    cost: float


def solve_task_target(p, z, target, model, max_iters=100, tol=1e-8, max_step=0.5):
    """Most probable joint values reaching ``target`` under the ProMP at ``z``.

    Minimizes ``|f(y) - x|^2`` in the metric of ``target.accuracy`` plus
    ``|y - mu_y|^2`` in the metric of the marginal covariance, starting at the
    marginal mean. Each iteration solves the damped normal equations
    ``(H + damping * diag(H)) step = -grad``, where ``H`` adds the residual
    curvature of the forward kinematics to the Gauss-Newton term so that far,
    unreachable targets still converge quickly. Steps are capped at
    ``max_step`` radians.
    """
    mu_y, cov_y = marginal(p, z)
    prior = cho_solve(_cho(cov_y, "marginal covariance"), np.eye(p.dof))
    task = cho_solve(_cho(target.accuracy, "task accuracy"), np.eye(3))
    x_star = target.position

    def cost_of(y):
        r = forward_kinematics(model, y) - x_star
        d = y - mu_y
        return float(r @ task @ r + d @ prior @ d)

    y = mu_y.copy()
    cost = cost_of(y)
    damping, grow = 1e-3, 2.0
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        f, jac, fk_hess = fk_derivatives(model, y)
        wr = task @ (f - x_star)
        grad = jac.T @ wr + prior @ (y - mu_y)
        if not np.any(grad):
            converged = True
            break
        hess = jac.T @ task @ jac + prior + np.tensordot(wr, fk_hess, axes=1)
        diag = np.abs(np.diag(hess)) + 1e-12
        while True:
            try:
                damped = hess + damping * np.diag(diag)
                np.linalg.cholesky(damped)
                break
            except np.linalg.LinAlgError:
                damping *= 4.0
        step = -np.linalg.solve(damped, grad)
        norm = np.linalg.norm(step)
        if norm > max_step:
            step *= max_step / norm
        trial = cost_of(y + step)
        # grad and hess are half the derivatives of cost
        predicted = -2.0 * (grad @ step) - step @ hess @ step
        gain = (cost - trial) / predicted if predicted > 0 else -1.0
        if trial <= cost and gain > 0:
            y = y + step
            cost = trial
            damping *= max(1.0 / 3.0, 1.0 - (2.0 * gain - 1.0) ** 3)
            damping = max(damping, 1e-12)
            grow = 2.0
        elif trial <= cost:
            y = y + step
            cost = trial
        else:
            damping *= grow
            grow *= 2.0
        if norm < tol:
            converged = True
            break
    return TaskSolution(y, converged, it, cost)


def condition_task_space(p, z, target, model, kappa=0.01, max_iters=100, tol=1e-8,
                         full_output=False):
    """Condition the ProMP so that its mean reaches a 3D target at ``z``.

    The optimal joint values from :func:`solve_task_target` are applied as a
    joint-space observation with covariance ``kappa`` times the marginal
    covariance. With ``full_output`` also returns the :class:`TaskSolution`.
    """
    sol = solve_task_target(p, z, target, model, max_iters, tol)
    _, cov_y = marginal(p, z)
    out = condition_joint_space(p, z, sol.y, kappa * cov_y)
    return (out, sol) if full_output else out


def sample_weights(p, seed=None, size=None):
    """Draw weight vectors from ``N(mean_weights, weight_cov)``."""
    rng = np.random.default_rng(seed)
    vals, vecs = np.linalg.eigh(p.weight_cov)
    scale = vecs * np.sqrt(np.clip(vals, 0.0, None))
    shape = (p.mean_weights.size,) if size is None else (size, p.mean_weights.size)
    eps = rng.standard_normal(shape)
    return p.mean_weights + eps @ scale.T


def sample_trajectory(p, phases, seed=None):
    """One trajectory ``(len(phases), dof)`` from a single weight draw."""
    w = sample_weights(p, seed)
    phi = basis_activations(phases, p.basis)
    return phi @ w.reshape(p.dof, -1).T


def check_covariance_shrinks(before, after, tol=1e-9):
    """Smallest eigenvalue of ``before.weight_cov - after.weight_cov``."""
    lo = float(np.linalg.eigvalsh(before.weight_cov - after.weight_cov).min())
    if lo < -tol:
        raise ContractError(f"conditioning increased uncertainty (min eigenvalue {lo:.3g})")
    return lo
