"""Semilinear reaction terms F(u, grad u, hess u) with analytic partials.

Each catalog entry bundles the scalar evaluator with its partial
derivatives in the state, gradient, and Hessian slots, a declared
Lipschitz payload, and a smoothness flag.  Partials are cross-checked
against central finite differences at construction, so a mistyped
derivative fails fast instead of corrupting a linearization downstream.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import SetupError

__all__ = ["NonlinearitySpec", "make_nonlinearity", "CATALOG_KINDS"]

Array = np.ndarray

CATALOG_KINDS = ("zero", "linear", "tanh", "sin", "quadratic", "mixed")


@dataclass
class NonlinearitySpec:
    """Reaction term F together with its analytic partial derivatives.

    ``f(u, p, r)`` takes the state u with shape S, the gradient stack p
    with shape (dim, *S) and the Hessian stack r with shape (dim, dim, *S),
    and returns an array of shape S.  ``f_u``, ``f_p``, ``f_r`` return the
    partials with shapes S, (dim, *S) and (dim, dim, *S).
    """

    name: str
    dim: int
    f: Callable[[Array, Array, Array], Array]
    f_u: Callable[[Array, Array, Array], Array]
    f_p: Callable[[Array, Array, Array], Array]
    f_r: Callable[[Array, Array, Array], Array]
    lipschitz_declared: float
    smooth: bool = True
    # box (u_max, p_max, r_max) on which the declared constant is claimed;
    # None means the claim is global.
    box: tuple[float, float, float] | None = None
    f0: float = field(init=False)

    def __post_init__(self):
        z = np.zeros(1)
        zp = np.zeros((self.dim, 1))
        zr = np.zeros((self.dim, self.dim, 1))
        self.f0 = float(self.f(z, zp, zr)[0])

    @property
    def is_zero(self) -> bool:
        return self.name == "zero"


def _fd_check(spec: NonlinearitySpec, rng: np.random.Generator, tol: float = 1e-6):
    """Cross-check analytic partials against central differences."""
    n = spec.dim
    h = 1e-6
    for _ in range(8):
        u = rng.uniform(-2.0, 2.0, size=1)
        p = rng.uniform(-2.0, 2.0, size=(n, 1))
        r = rng.uniform(-2.0, 2.0, size=(n, n, 1))
        fu = spec.f_u(u, p, r)[0]
        fd = (spec.f(u + h, p, r)[0] - spec.f(u - h, p, r)[0]) / (2 * h)
        if abs(fu - fd) > tol * (1 + abs(fd)):
            raise SetupError(
                "partials-inconsistent",
                f"{spec.name}: state partial {fu} vs finite difference {fd}",
            )
        fp = spec.f_p(u, p, r)
        for i in range(n):
            e = np.zeros_like(p)
            e[i] = h
            fd = (spec.f(u, p + e, r)[0] - spec.f(u, p - e, r)[0]) / (2 * h)
            if abs(fp[i, 0] - fd) > tol * (1 + abs(fd)):
                raise SetupError(
                    "partials-inconsistent",
                    f"{spec.name}: gradient partial {i} ({fp[i, 0]} vs {fd})",
                )
        fr = spec.f_r(u, p, r)
        for i in range(n):
            for j in range(n):
                e = np.zeros_like(r)
                e[i, j] = h
                fd = (spec.f(u, p, r + e)[0] - spec.f(u, p, r - e)[0]) / (2 * h)
                if abs(fr[i, j, 0] - fd) > tol * (1 + abs(fd)):
                    raise SetupError(
                        "partials-inconsistent",
                        f"{spec.name}: hessian partial ({i},{j}) "
                        f"({fr[i, j, 0]} vs {fd})",
                    )


def make_nonlinearity(kind: str, scale: float = 1.0, dim: int = 1) -> NonlinearitySpec:
    """Build a catalog entry.

    Kinds
    -----
    zero       F = 0
    linear     F = c*u
    tanh       F = c*tanh(u), globally Lipschitz with constant c
    sin        F = c*sin(u), globally Lipschitz with constant c
    quadratic  F = c*u^2, Lipschitz only on a box |u| <= 3
    mixed      F = c*(tanh(u) + sin(p_1) + tanh(r_11))
    """
    c = float(scale)
    n = int(dim)

    def zeros_like_p(p):
        return np.zeros_like(p)

    def zeros_like_r(r):
        return np.zeros_like(r)

    if kind == "zero":
        spec = NonlinearitySpec(
            "zero", n,
            f=lambda u, p, r: np.zeros_like(u),
            f_u=lambda u, p, r: np.zeros_like(u),
            f_p=lambda u, p, r: zeros_like_p(p),
            f_r=lambda u, p, r: zeros_like_r(r),
            lipschitz_declared=0.0,
        )
    elif kind == "linear":
        spec = NonlinearitySpec(
            "linear", n,
            f=lambda u, p, r: c * u,
            f_u=lambda u, p, r: np.full_like(u, c),
            f_p=lambda u, p, r: zeros_like_p(p),
            f_r=lambda u, p, r: zeros_like_r(r),
            lipschitz_declared=abs(c),
        )
    elif kind == "tanh":
        spec = NonlinearitySpec(
            "tanh", n,
            f=lambda u, p, r: c * np.tanh(u),
            f_u=lambda u, p, r: c / np.cosh(u) ** 2,
            f_p=lambda u, p, r: zeros_like_p(p),
            f_r=lambda u, p, r: zeros_like_r(r),
            lipschitz_declared=abs(c),
        )
    elif kind == "sin":
        spec = NonlinearitySpec(
            "sin", n,
            f=lambda u, p, r: c * np.sin(u),
            f_u=lambda u, p, r: c * np.cos(u),
            f_p=lambda u, p, r: zeros_like_p(p),
            f_r=lambda u, p, r: zeros_like_r(r),
            lipschitz_declared=abs(c),
        )
    elif kind == "quadratic":
        u_max = 3.0
        spec = NonlinearitySpec(
            "quadratic", n,
            f=lambda u, p, r: c * u * u,
            f_u=lambda u, p, r: 2 * c * u,
            f_p=lambda u, p, r: zeros_like_p(p),
            f_r=lambda u, p, r: zeros_like_r(r),
            lipschitz_declared=2 * abs(c) * u_max,
            box=(u_max, 0.0, 0.0),
        )
    elif kind == "mixed":
        def f(u, p, r):
            return c * (np.tanh(u) + np.sin(p[0]) + np.tanh(r[0, 0]))

        def f_u(u, p, r):
            return c / np.cosh(u) ** 2

        def f_p(u, p, r):
            out = np.zeros_like(p)
            out[0] = c * np.cos(p[0])
            return out

        def f_r(u, p, r):
            out = np.zeros_like(r)
            out[0, 0] = c / np.cosh(r[0, 0]) ** 2
            return out

        # |F_u| + |F_p| + sum |F_r| <= 3c pointwise
        spec = NonlinearitySpec(
            "mixed", n, f=f, f_u=f_u, f_p=f_p, f_r=f_r,
            lipschitz_declared=3 * abs(c),
        )
    else:
        raise SetupError("unknown-nonlinearity", f"no catalog entry named {kind!r}")

    _fd_check(spec, np.random.default_rng(np.random.Philox(17)))
    return spec
