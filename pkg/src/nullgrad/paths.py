"""Seeded Wiener increments, exponential-Euler paths and exact terminal draws."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .control import ControlKernel
from .errors import CovarianceError
from .model import LinearSystem, TimeGrid, drift_integral, semigroup, semigroup_action, transition_moments
from .quadrature import integrate

# Stream domains keep grid paths and exact-sampler blocks on disjoint counters.
GRID_DOMAIN = 0
EXACT_DOMAIN = 1
EXACT_BLOCK = 8192
DEFAULT_STEPS = 1024
_SEED_MASK = (1 << 64) - 1


def stream(seed: int, index: int, domain: int = GRID_DOMAIN) -> np.random.Generator:
    """Counter-based generator for stream ``index`` under ``seed``.

    The Philox key is (seed, index); the domain occupies the top counter word,
    so every (seed, index, domain) triple has its own reproducible stream
    regardless of how work is partitioned.
    """
    key = np.array([int(seed) & _SEED_MASK, int(index) & _SEED_MASK], dtype=np.uint64)
    counter = np.array([0, 0, 0, int(domain)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


@dataclass(frozen=True, eq=False)
class PathBundle:
    grid: TimeGrid
    dW: np.ndarray
    states: np.ndarray
    seed: int
    path_index: int


@dataclass(frozen=True, eq=False)
class PathBatch:
    """A block of paths sharing a grid; arrays carry a leading path axis."""

    grid: TimeGrid
    dW: np.ndarray
    terminal: np.ndarray
    seed: int
    path_indices: np.ndarray
    states: np.ndarray | None = field(default=None, repr=False)

    def __len__(self):
        return self.dW.shape[0]

    def bundle(self, i):
        if self.states is None:
            raise ValueError("batch was sampled without stored states")
        return PathBundle(self.grid, self.dW[i], self.states[i], self.seed, int(self.path_indices[i]))


def increments(m: int, grid: TimeGrid, seed: int, path_indices) -> np.ndarray:
    """Wiener increments of shape (len(path_indices), steps, m), each N(0, h)."""
    path_indices = np.atleast_1d(path_indices)
    out = np.empty((path_indices.size, grid.steps, m))
    scale = np.sqrt(grid.h)
    for row, idx in enumerate(path_indices):
        out[row] = stream(seed, idx).standard_normal((grid.steps, m))
    out *= scale
    return out


def simulate(sys: LinearSystem, x, grid: TimeGrid, dW: np.ndarray, store_states=False):
    """Exponential-Euler recursion X_{k+1} = e^{hA} X_k + c_h + e^{hA} B dW_k.

    ``c_h`` is the exact drift integral over one step, so only the stochastic
    convolution is approximated.  Returns the terminal states, plus the whole
    trajectory when ``store_states`` is set.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    n = dW.shape[0]
    E = semigroup(sys, grid.h)
    EB = E @ sys.B
    c = drift_integral(sys, grid.h)
    X = np.broadcast_to(x, (n, sys.d)).copy()
    states = None
    if store_states:
        states = np.empty((n, grid.steps + 1, sys.d))
        states[:, 0] = X
    for k in range(grid.steps):
        X = X @ E.T + dW[:, k] @ EB.T
        if np.any(c):
            X += c
        if store_states:
            states[:, k + 1] = X
    return X, states


def sample_paths(sys: LinearSystem, x, grid: TimeGrid, seed: int, path_indices,
                 store_states=False) -> PathBatch:
    path_indices = np.atleast_1d(np.asarray(path_indices, dtype=np.int64))
    dW = increments(sys.m, grid, seed, path_indices)
    terminal, states = simulate(sys, x, grid, dW, store_states)
    return PathBatch(grid, dW, terminal, int(seed), path_indices, states)


def sample_path(sys: LinearSystem, x, grid: TimeGrid, seed: int, path_index: int) -> PathBundle:
    """One seeded path; identical (seed, path_index) gives identical bits."""
    return sample_paths(sys, x, grid, seed, [path_index], store_states=True).bundle(0)


def path_batches(sys: LinearSystem, x, grid: TimeGrid, seed: int, N: int, batch_size=2048):
    """Yield consecutive PathBatch blocks covering path indices 0..N-1."""
    for start in range(0, N, batch_size):
        yield sample_paths(sys, x, grid, seed, np.arange(start, min(start + batch_size, N)))


@dataclass(frozen=True, eq=False)
class TerminalSample:
    x_T: np.ndarray
    I: np.ndarray

    @property
    def n(self):
        return self.I.shape[-1]

    def __len__(self):
        return self.x_T.shape[0]


def gaussian_factor(cov, tol=1e-10, scale=None):
    """Square-root factor L with L L^T = cov.

    Cholesky first; near-singular matrices fall back to the symmetric
    eigendecomposition with tiny negative eigenvalues clipped.  Negative
    eigenvalues below ``-tol * scale`` raise; ``scale`` defaults to the
    largest eigenvalue.
    """
    cov = 0.5 * (cov + cov.T)
    w, V = np.linalg.eigh(cov)
    if scale is None:
        scale = max(abs(w[-1]), 1e-300) if w.size else 1.0
    if w.size and w[0] < -tol * scale:
        raise CovarianceError(
            f"assembled covariance is not positive semidefinite (eigenvalue {w[0]:.3e}); "
            "control kernels are inconsistent with the system"
        )
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        return V * np.sqrt(np.clip(w, 0.0, None))


def cross_covariance(sys: LinearSystem, ctrl: ControlKernel, directions) -> np.ndarray:
    """Cov(X(t), I_t(y_j)): the integral of S(t-s) B u(t, y_j; s) over [0, t].

    Evaluated by quadrature rather than through the drive-to-zero identity,
    so that sampling checks of that identity are not circular.
    """
    Y = np.asarray(directions, dtype=float).reshape(-1, sys.d).T
    t = ctrl.t

    def integrand(s):
        S = semigroup_action(sys, t - s, np.eye(sys.d))
        BU = np.einsum("dm,kmn->kdn", sys.B, ctrl.apply(s, Y))
        return S @ BU

    return integrate(integrand, ctrl.support_start, t, breakpoints=ctrl.breakpoints)


class ExactTerminalSampler:
    """Discretization-free joint draws of (X^x(t), I_t(y_1), ..., I_t(y_n)).

    The vector is Gaussian with mean (m_x, 0) and covariance
    [[G_t, C], [C^T, J]] where C = Cov(X(t), I) and J is the Gram matrix of the
    controls.  Draws are produced in blocks of EXACT_BLOCK samples, block b
    coming from stream (seed, b); sample i therefore does not depend on N or on
    how blocks are distributed across workers.
    """

    def __init__(self, sys: LinearSystem, x, t: float, ctrl: ControlKernel | None = None,
                 directions=()):
        self.sys = sys
        self.x = np.asarray(x, dtype=float).reshape(-1)
        self.t = float(t)
        directions = np.asarray(directions, dtype=float).reshape(-1, sys.d)
        self.directions = directions
        n = directions.shape[0]
        if n and ctrl is None:
            raise ValueError("directions given without a control kernel")
        if n and abs(ctrl.t - self.t) > 1e-12 * self.t:
            raise ValueError("control horizon does not match sampling time")
        self.ctrl = ctrl
        moments = transition_moments(sys, self.x, self.t)
        self.mean = np.concatenate([moments.mean, np.zeros(n)])
        d = sys.d
        L = gaussian_factor(moments.cov)
        factor = np.zeros((d + n, d + n))
        factor[:d, :d] = L
        if n:
            # factor for unit directions, then rescale: I is exactly linear in y
            norms = np.linalg.norm(directions, axis=1)
            unit = directions / np.where(norms > 0, norms, 1.0)[:, None]
            C = cross_covariance(sys, ctrl, unit)
            J = unit @ ctrl.gram_matrix() @ unit.T
            J = 0.5 * (J + J.T)
            K = C.T @ np.linalg.pinv(L.T, rcond=1e-13)
            factor[d:, :d] = K
            factor[d:, d:] = gaussian_factor(J - K @ K.T, scale=max(np.trace(J), 1e-300))
            factor[d:] *= norms[:, None]
            self.C = C * norms
            self.J = J * np.outer(norms, norms)
        else:
            self.C = np.zeros((d, 0))
            self.J = np.zeros((0, 0))
        cov = np.zeros((d + n, d + n))
        cov[:d, :d] = moments.cov
        cov[:d, d:] = self.C
        cov[d:, :d] = self.C.T
        cov[d:, d:] = self.J
        self.cov = cov
        self.factor = factor
        self.n = n

    def block(self, seed: int, b: int) -> TerminalSample:
        # X uses the first d normals of each row whatever n is, so runs with
        # and without directions share X draws
        d = self.sys.d
        gen = stream(seed, b, EXACT_DOMAIN)
        z = gen.standard_normal((EXACT_BLOCK, d))
        if self.n:
            z = np.hstack([z, gen.standard_normal((EXACT_BLOCK, self.n))])
        v = self.mean + z @ self.factor.T
        return TerminalSample(v[:, :d], v[:, d:])

    def blocks(self, N: int, seed: int):
        """Yield TerminalSample blocks totalling N draws."""
        for b, start in enumerate(range(0, N, EXACT_BLOCK)):
            sample = self.block(seed, b)
            take = min(EXACT_BLOCK, N - start)
            if take < EXACT_BLOCK:
                sample = TerminalSample(sample.x_T[:take], sample.I[:take])
            yield sample

    def sample(self, N: int, seed: int) -> TerminalSample:
        parts = list(self.blocks(N, seed))
        return TerminalSample(np.concatenate([p.x_T for p in parts]),
                              np.concatenate([p.I for p in parts]))


def exact_terminal_sampler(sys, x, t, ctrl=None, directions=(), N=1, seed=0):
    """Stream of exact TerminalSample blocks; see :class:`ExactTerminalSampler`."""
    return ExactTerminalSampler(sys, x, t, ctrl, directions).blocks(N, seed)
