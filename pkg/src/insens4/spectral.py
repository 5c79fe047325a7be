"""Sine-spectral discretization of clamped-Laplacian boundary conditions.

All fields live on the interior nodes of a uniform grid over an interval or
a rectangle.  A field is identified with its sine interpolant, so the
bilaplacian with y = lap(y) = 0 on the boundary is diagonal in mode space
and every derivative operator below has an exact discrete transpose with
respect to the uniform-weight inner product.
"""
from __future__ import annotations

import numpy as np

__all__ = ["SineBasis"]


def _along(mat: np.ndarray, u: np.ndarray, axis: int) -> np.ndarray:
    """Apply a dense matrix along one axis of a 1D or 2D field."""
    if u.ndim == 1:
        return mat @ u
    if axis == 0:
        return mat @ u
    return u @ mat  # mat is symmetric, so u @ mat == u @ mat.T


class SineBasis:
    """Tensor-product sine basis on the interior of a box.

    Parameters
    ----------
    extents : tuple of float
        Axis lengths (L,) or (L1, L2).
    n_cells : int
        Number of cells per axis; interior nodes number ``n_cells - 1``
        per axis.

    Notes
    -----
    The transform pair uses the symmetric matrix S[k, m] = sin(pi*m*k/N),
    which satisfies S @ S = (N/2) I exactly, so round trips are spectrally
    exact up to rounding.  First derivatives evaluate on the cosine matrix
    C[k, m] = cos(pi*m*k/N); the discrete transpose of d/dx is obtained by
    applying the same two matrices in reverse order.
    """

    def __init__(self, extents: tuple[float, ...], n_cells: int):
        if n_cells < 2:
            raise ValueError("n_cells must be at least 2")
        self.extents = tuple(float(L) for L in extents)
        self.dim = len(self.extents)
        if self.dim not in (1, 2):
            raise ValueError("only dimensions 1 and 2 are supported")
        self.n_cells = int(n_cells)
        n = self.n_cells
        self.shape = (n - 1,) * self.dim
        self.nodes = tuple(
            np.arange(1, n) * (L / n) for L in self.extents
        )
        self.cell_volume = float(np.prod([L / n for L in self.extents]))
        # mode wavenumbers kappa_m = m*pi/L per axis
        self.kappa = tuple(
            np.arange(1, n) * (np.pi / L) for L in self.extents
        )
        k = np.arange(1, n)
        angles = np.pi * np.outer(k, k) / n
        self._sine = np.sin(angles)
        self._cosine = np.cos(angles)
        self._mode_scale = 2.0 / n
        # positive Laplacian symbol sum_i kappa_i^2 on the mode lattice
        if self.dim == 1:
            self.lap_modes = self.kappa[0] ** 2
        else:
            self.lap_modes = self.kappa[0][:, None] ** 2 + self.kappa[1][None, :] ** 2
        self.bilap_modes = self.lap_modes**2
        # Parseval factor: ||u||^2 = mode_volume * sum(c^2)
        self.mode_volume = float(np.prod([L / 2 for L in self.extents]))

    # -- transforms ------------------------------------------------------

    def to_modes(self, u: np.ndarray) -> np.ndarray:
        c = u
        for axis in range(self.dim):
            c = _along(self._sine, c, axis) * self._mode_scale
        return c

    def from_modes(self, c: np.ndarray) -> np.ndarray:
        u = c
        for axis in range(self.dim):
            u = _along(self._sine, u, axis)
        return u

    def mesh(self) -> tuple[np.ndarray, ...]:
        """Broadcastable node coordinate arrays (sparse meshgrid)."""
        if self.dim == 1:
            return (self.nodes[0],)
        return tuple(np.meshgrid(*self.nodes, indexing="ij", sparse=True))

    # -- derivative operators and their exact transposes -----------------

    def _mode_mult(self, arr: np.ndarray, w: np.ndarray, axis: int) -> np.ndarray:
        if arr.ndim == 1 or axis == 0:
            return arr * w.reshape((-1,) + (1,) * (arr.ndim - 1))
        return arr * w

    def dx(self, u: np.ndarray, axis: int = 0) -> np.ndarray:
        """First derivative along ``axis`` of the sine interpolant."""
        c = _along(self._sine, u, axis) * self._mode_scale
        c = self._mode_mult(c, self.kappa[axis], axis)
        return _along(self._cosine, c, axis)

    def dx_t(self, w: np.ndarray, axis: int = 0) -> np.ndarray:
        """Discrete transpose of :meth:`dx` in the uniform inner product."""
        c = _along(self._cosine, w, axis)
        c = self._mode_mult(c, self.kappa[axis], axis)
        return _along(self._sine, c, axis) * self._mode_scale

    def dxx(self, u: np.ndarray, axis: int = 0) -> np.ndarray:
        """Same-axis second derivative; symmetric, hence self-transposed."""
        c = _along(self._sine, u, axis) * self._mode_scale
        c = self._mode_mult(c, -self.kappa[axis] ** 2, axis)
        return _along(self._sine, c, axis)

    def d2(self, u: np.ndarray, ax_i: int, ax_j: int) -> np.ndarray:
        """Second derivative d^2/dx_i dx_j (mixed terms via nested dx)."""
        if ax_i == ax_j:
            return self.dxx(u, ax_i)
        return self.dx(self.dx(u, ax_i), ax_j)

    def d2_t(self, w: np.ndarray, ax_i: int, ax_j: int) -> np.ndarray:
        if ax_i == ax_j:
            return self.dxx(w, ax_i)
        return self.dx_t(self.dx_t(w, ax_i), ax_j)

    def lap(self, u: np.ndarray) -> np.ndarray:
        out = self.dxx(u, 0)
        if self.dim == 2:
            out = out + self.dxx(u, 1)
        return out

    def bilap(self, u: np.ndarray) -> np.ndarray:
        return self.from_modes(self.to_modes(u) * self.bilap_modes)

    def gradient(self, u: np.ndarray) -> np.ndarray:
        """Stacked first derivatives, shape (dim, *shape)."""
        return np.stack([self.dx(u, ax) for ax in range(self.dim)])

    def hessian(self, u: np.ndarray) -> np.ndarray:
        """Stacked second derivatives, shape (dim, dim, *shape)."""
        rows = []
        for i in range(self.dim):
            rows.append([self.d2(u, i, j) for j in range(self.dim)])
        return np.stack([np.stack(r) for r in rows])

    # -- inner products and norms ----------------------------------------

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        return float(self.cell_volume * np.sum(u * v))

    def norm(self, u: np.ndarray) -> float:
        return float(np.sqrt(self.cell_volume) * np.linalg.norm(u))

    def h2_norm_sq(self, u: np.ndarray) -> float:
        """Squared Sobolev norm of order two via the mode symbol."""
        c = self.to_modes(u)
        w = 1.0 + self.lap_modes + self.bilap_modes
        return float(self.mode_volume * np.sum(w * c * c))
