"""Constant-curvature model spaces: Euclidean, hyperboloid (Lorentz) and hypersphere.

Curvature is fixed at 0, -1 and +1. Points are stored as rows in ambient
coordinates; the exponential map is always taken at the base point
``o = (1, 0, ..., 0)`` (the origin for the Euclidean space).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import ConfigError, DimensionError

# below this squared norm the sinh(t)/t and sin(t)/t factors use their series
SERIES_THRESHOLD = 1e-7
# the derivatives lose precision to cancellation much earlier
_DERIV_SERIES_SQ = 1e-4


class SpaceKind(str, enum.Enum):
    EUCLIDEAN = "E"
    HYPERBOLOID = "H"
    HYPERSPHERE = "S"


@dataclass(frozen=True)
class ModelSpace:
    kind: SpaceKind
    latent_dim: int

    def __post_init__(self):
        object.__setattr__(self, "kind", SpaceKind(self.kind))
        if self.latent_dim < 1:
            raise ConfigError("latent_dim must be >= 1")

    @property
    def ambient_dim(self) -> int:
        return self.latent_dim if self.kind is SpaceKind.EUCLIDEAN else self.latent_dim + 1

    @property
    def label(self) -> str:
        return self.kind.value

    def base_point(self) -> np.ndarray:
        o = np.zeros(self.ambient_dim)
        if self.kind is not SpaceKind.EUCLIDEAN:
            o[0] = 1.0
        return o


def parse_spaces(text: str, latent_dim: int = 4) -> list[ModelSpace]:
    """``"E+H+S"`` -> three model spaces (order preserved, duplicates rejected)."""
    labels = [s.strip().upper() for s in text.replace(",", "+").split("+")]
    if not any(labels):
        raise ConfigError("at least one model space is required")
    if not all(labels):
        raise ConfigError(f"empty model space entry in {text!r}")
    if len(set(labels)) != len(labels):
        raise ConfigError(f"duplicate model space in {text!r}")
    try:
        return [ModelSpace(SpaceKind(lbl), latent_dim) for lbl in labels]
    except ValueError:
        raise ConfigError(f"unknown model space in {text!r}; use E, H, S") from None


# --- smooth radial factors as functions of s = |v|^2 -------------------------
# Writing them in s (not |v|) keeps them differentiable at v = 0.


def _cosh_sqrt(s):
    return np.cosh(np.sqrt(s))


def _sinhc_sqrt(s):
    r = np.sqrt(s)
    small = s < SERIES_THRESHOLD**2
    safe = np.where(small, 1.0, r)
    return np.where(small, 1.0 + s / 6.0 + s * s / 120.0, np.sinh(safe) / safe)


def _d_sinhc_sqrt(s):
    r = np.sqrt(s)
    small = s < _DERIV_SERIES_SQ
    safe = np.where(small, 1.0, r)
    exact = (safe * np.cosh(safe) - np.sinh(safe)) / (2.0 * safe**3)
    return np.where(small, 1.0 / 6.0 + s / 60.0 + s * s / 1680.0, exact)


def _cos_sqrt(s):
    return np.cos(np.sqrt(s))


def _sinc_sqrt(s):
    r = np.sqrt(s)
    small = s < SERIES_THRESHOLD**2
    safe = np.where(small, 1.0, r)
    return np.where(small, 1.0 - s / 6.0 + s * s / 120.0, np.sin(safe) / safe)


def _d_sinc_sqrt(s):
    r = np.sqrt(s)
    small = s < _DERIV_SERIES_SQ
    safe = np.where(small, 1.0, r)
    exact = (safe * np.cos(safe) - np.sin(safe)) / (2.0 * safe**3)
    return np.where(small, -1.0 / 6.0 + s / 60.0 - s * s / 1680.0, exact)


def exp_map_origin(space: ModelSpace, v: Node) -> Node:
    """Project tangent coordinates at the base point onto the manifold."""
    if v.shape[1] != space.latent_dim:
        raise DimensionError(f"expected {space.latent_dim} tangent coordinates, got {v.shape[1]}")
    if space.kind is SpaceKind.EUCLIDEAN:
        return v
    sq = ad.rowsum(ad.square(v))
    if space.kind is SpaceKind.HYPERBOLOID:
        head = ad.unary(sq, _cosh_sqrt, lambda s: 0.5 * _sinhc_sqrt(s), "cosh_sqrt")
        factor = ad.unary(sq, _sinhc_sqrt, _d_sinhc_sqrt, "sinhc_sqrt")
    else:
        head = ad.unary(sq, _cos_sqrt, lambda s: -0.5 * _sinc_sqrt(s), "cos_sqrt")
        factor = ad.unary(sq, _sinc_sqrt, _d_sinc_sqrt, "sinc_sqrt")
    return ad.concat_cols([head, ad.mul(factor, v)])


def lorentz_gram(x: Node) -> Node:
    """Pairwise Lorentz products ``-x0*y0 + sum_i xi*yi``."""
    sign = np.ones((1, x.shape[1]))
    sign[0, 0] = -1.0
    return ad.matmul(ad.mul(x, sign), ad.transpose(x))


def geodesic_distance_pairwise(space: ModelSpace, x: Node) -> Node:
    """N x N geodesic distances between the rows of ``x``; diagonal exactly 0."""
    if x.shape[1] != space.ambient_dim:
        raise DimensionError(f"expected {space.ambient_dim} ambient coordinates, got {x.shape[1]}")
    if space.kind is SpaceKind.EUCLIDEAN:
        sq = ad.rowsum(ad.square(x))
        gram = ad.matmul(x, ad.transpose(x))
        d2 = ad.sub(ad.add(sq, ad.transpose(sq)), ad.scale(gram, 2.0))
        # zero the diagonal before the sqrt so self-pairs never see its kink
        dist = ad.sqrt(ad.clamp(ad.zero_diagonal(d2), lo=0.0))
    elif space.kind is SpaceKind.HYPERBOLOID:
        dist = ad.arccosh_clamped(ad.neg(lorentz_gram(x)))
    else:
        dist = ad.arccos_clamped(ad.matmul(x, ad.transpose(x)))
    return ad.zero_diagonal(dist)


def lorentz_norm_sq(x: np.ndarray) -> np.ndarray:
    """Per-row ``<x, x>_L`` for plain arrays."""
    x = np.atleast_2d(x)
    return -x[:, 0] ** 2 + (x[:, 1:] ** 2).sum(axis=1)


def membership_error(space: ModelSpace, x: np.ndarray) -> np.ndarray:
    """Per-row absolute violation of the manifold constraint (0 for Euclidean)."""
    x = np.atleast_2d(x)
    if space.kind is SpaceKind.EUCLIDEAN:
        return np.zeros(x.shape[0])
    if space.kind is SpaceKind.HYPERBOLOID:
        err = np.abs(lorentz_norm_sq(x) + 1.0)
        return np.where(x[:, 0] >= 1.0, err, np.inf)
    return np.abs(np.linalg.norm(x, axis=1) - 1.0)
