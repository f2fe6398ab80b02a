"""Legendre-Fenchel regularizer triples on the action simplex.

Every function here works on the last array axis (actions) and broadcasts
over any leading axes, so the same call handles a single distribution
``(A,)`` or a whole policy ``(S, A)``.

Supported kinds:

* ``negative_entropy``: ``sum p ln p``; conjugate log-sum-exp, greedy softmax.
* ``kl_uniform``: ``sum p ln p + ln|A|``; conjugate mellowmax, greedy softmax.
* ``tsallis``: ``(||p||^2 - 1) / 2``; greedy sparsemax.

A regularizer may be scaled by ``scale >= 0`` (``scale == 0`` is the hard
max with lowest-index argmax) and anchored at a policy, in which case it
becomes the Bregman divergence generated by its base kind: KL for the two
entropic kinds, half the squared Euclidean distance for ``tsallis``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import softmax, xlogy

from .errors import DomainError, SupportError, UnsupportedRegularizer

KINDS = ("negative_entropy", "kl_uniform", "tsallis")
_ALIASES = {"entropy": "negative_entropy", "shannon": "negative_entropy", "kl": "kl_uniform"}

ANCHOR_FLOOR = 1e-12
_NEG_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Regularizer:
    kind: str
    scale: float = 1.0
    anchor: np.ndarray | None = None

    def __post_init__(self):
        kind = _ALIASES.get(self.kind, self.kind)
        if kind not in KINDS:
            raise UnsupportedRegularizer(f"unknown regularizer kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if not (self.scale >= 0.0 and math.isfinite(self.scale)):
            raise DomainError(f"scale must be finite and nonnegative, got {self.scale}")
        if self.anchor is not None:
            anchor = np.array(self.anchor, dtype=float)
            _check_simplex(anchor)
            if self.entropic:
                anchor = floor_anchor(anchor)
            anchor.setflags(write=False)
            object.__setattr__(self, "anchor", anchor)

    @classmethod
    def entropy(cls, scale: float = 1.0) -> "Regularizer":
        return cls("negative_entropy", scale)

    @classmethod
    def kl_uniform(cls, scale: float = 1.0) -> "Regularizer":
        return cls("kl_uniform", scale)

    @classmethod
    def tsallis(cls, scale: float = 1.0) -> "Regularizer":
        return cls("tsallis", scale)

    @classmethod
    def hard_max(cls) -> "Regularizer":
        """Zero regularizer: the unregularized max / argmax."""
        return cls("negative_entropy", 0.0)

    @property
    def entropic(self) -> bool:
        return self.kind in ("negative_entropy", "kl_uniform")

    @property
    def bregman(self) -> bool:
        return self.anchor is not None

    def base(self) -> "Regularizer":
        return replace(self, anchor=None)

    def scaled(self, alpha: float) -> "Regularizer":
        return replace(self, scale=self.scale * alpha)

    def anchored(self, anchor: np.ndarray) -> "Regularizer":
        """Bregman divergence of this regularizer's base, centred at ``anchor``."""
        return replace(self, anchor=anchor)

    def bounds(self, n_actions: int) -> tuple[float, float]:
        """Constants ``(L, U)`` with ``L <= Omega(p) <= U`` on the simplex."""
        if self.bregman:
            if self.anchor.shape[-1] != n_actions:
                raise DomainError("anchor action dimension mismatch")
            return 0.0, bregman_radius(self.base(), self.anchor)
        if self.kind == "negative_entropy":
            lo, hi = -math.log(n_actions), 0.0
        elif self.kind == "kl_uniform":
            lo, hi = 0.0, math.log(n_actions)
        else:
            lo, hi = (1.0 / n_actions - 1.0) / 2.0, 0.0
        return self.scale * lo, self.scale * hi

    def describe(self) -> dict:
        return {"kind": self.kind, "scale": self.scale, "bregman": self.bregman}


def floor_anchor(anchor: np.ndarray) -> np.ndarray:
    """Floor entries at ``ANCHOR_FLOOR`` and renormalize; a no-op on interior points."""
    anchor = np.asarray(anchor, dtype=float)
    if np.all(anchor >= ANCHOR_FLOOR):
        return anchor.copy()
    floored = np.maximum(anchor, ANCHOR_FLOOR)
    return floored / floored.sum(axis=-1, keepdims=True)


def _check_simplex(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(p)):
        raise DomainError("distribution has non-finite entries")
    if np.any(p < -_NEG_TOL):
        raise DomainError("negative probability")
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-9):
        raise DomainError("distribution does not sum to one")
    return p


def _check_finite(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if not np.all(np.isfinite(q)):
        raise DomainError("q must be finite")
    return q


def _anchor_for(reg: Regularizer, shape: tuple) -> np.ndarray:
    if reg.anchor.shape[-1] != shape[-1]:
        raise DomainError(f"anchor has {reg.anchor.shape[-1]} actions, input has {shape[-1]}")
    return reg.anchor


def _logsumexp(z: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    # scipy's version costs ~10x more per call on the tiny rows used here
    top = np.max(z, axis=-1, keepdims=True)
    terms = np.exp(z - top)
    if weights is not None:
        terms = terms * weights
    return top[..., 0] + np.log(np.sum(terms, axis=-1))


def _one_hot_argmax(q: np.ndarray) -> np.ndarray:
    out = np.zeros_like(q)
    np.put_along_axis(out, np.argmax(q, axis=-1)[..., None], 1.0, axis=-1)
    return out


def simplex_project(z: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the simplex (sort-and-threshold, i.e. sparsemax)."""
    z = _check_finite(z)
    # stable sort keeps lower action index first among ties
    u = -np.sort(-z, axis=-1, kind="stable")
    css = np.cumsum(u, axis=-1) - 1.0
    k = np.arange(1, z.shape[-1] + 1)
    support = u - css / k > 0
    rho = z.shape[-1] - np.argmax(support[..., ::-1], axis=-1)
    tau = np.take_along_axis(css, (rho - 1)[..., None], axis=-1) / rho[..., None]
    return np.maximum(z - tau, 0.0)


def _base_omega(kind: str, p: np.ndarray) -> np.ndarray:
    if kind == "tsallis":
        return 0.5 * (np.sum(p * p, axis=-1) - 1.0)
    ent = np.sum(xlogy(p, p), axis=-1)
    if kind == "kl_uniform":
        ent = ent + math.log(p.shape[-1])
    return ent


def omega_value(reg: Regularizer, p: np.ndarray) -> np.ndarray:
    """``Omega(p)``, with ``0 ln 0 = 0`` for the entropic kinds."""
    p = np.maximum(_check_simplex(p), 0.0)
    if reg.scale == 0.0:
        return np.zeros(p.shape[:-1])
    if reg.bregman:
        return bregman_value(reg.base(), p, _anchor_for(reg, p.shape))
    return reg.scale * _base_omega(reg.kind, p)


def omega_gradient(reg: Regularizer, p: np.ndarray) -> np.ndarray:
    """Euclidean gradient of ``Omega`` at ``p``; ``-inf`` entries where ``ln 0`` appears."""
    p = np.asarray(p, dtype=float)
    if reg.scale == 0.0:
        return np.zeros_like(p)

    def grad(x):
        if reg.kind == "tsallis":
            return x.copy()
        with np.errstate(divide="ignore"):
            return np.log(x) + 1.0

    g = grad(p)
    if reg.bregman:
        g = g - grad(_anchor_for(reg, p.shape))
    return reg.scale * g


def conjugate_value(reg: Regularizer, q: np.ndarray) -> np.ndarray:
    """``Omega*(q) = max_p <p, q> - Omega(p)`` in closed form."""
    q = _check_finite(q)
    if reg.scale == 0.0:
        return np.max(q, axis=-1)
    a = reg.scale
    z = q / a
    if reg.entropic:
        if reg.bregman:
            return a * _logsumexp(z, _anchor_for(reg, q.shape))
        out = a * _logsumexp(z)
        if reg.kind == "kl_uniform":
            out = out - a * math.log(q.shape[-1])
        return out
    if reg.bregman:
        anchor = _anchor_for(reg, q.shape)
        p = simplex_project(anchor + z)
        return np.sum(p * q, axis=-1) - 0.5 * a * np.sum((p - anchor) ** 2, axis=-1)
    p = simplex_project(z)
    return np.sum(p * q, axis=-1) - 0.5 * a * (np.sum(p * p, axis=-1) - 1.0)


def greedy_distribution(reg: Regularizer, q: np.ndarray) -> np.ndarray:
    """``grad Omega*(q)``: the unique maximizer of ``<p, q> - Omega(p)``."""
    q = _check_finite(q)
    if reg.scale == 0.0:
        return _one_hot_argmax(q)
    z = q / reg.scale
    if reg.entropic:
        if reg.bregman:
            return softmax(z + np.log(_anchor_for(reg, q.shape)), axis=-1)
        return softmax(z, axis=-1)
    if reg.bregman:
        return simplex_project(_anchor_for(reg, q.shape) + z)
    return simplex_project(z)


def bregman_value(base: Regularizer, p: np.ndarray, anchor: np.ndarray) -> np.ndarray:
    """``D(p || anchor) = Omega(p) - Omega(anchor) - <grad Omega(anchor), p - anchor>``."""
    p = np.maximum(_check_simplex(p), 0.0)
    anchor = np.maximum(_check_simplex(anchor), 0.0)
    if base.kind == "tsallis":
        d = 0.5 * np.sum((p - anchor) ** 2, axis=-1)
    else:
        if np.any((p > 0) & (anchor <= 0)):
            raise SupportError("KL anchor is zero where the distribution has mass")
        with np.errstate(divide="ignore"):
            d = np.sum(xlogy(p, p) - xlogy(p, anchor), axis=-1)
        d = np.maximum(d, 0.0)
    return base.scale * d


def bregman_radius(base: Regularizer, anchor: np.ndarray) -> float:
    """``max_s sup_p D(p || anchor_s)``; the supremum sits at a simplex vertex."""
    anchor = np.atleast_2d(_check_simplex(anchor))
    if base.bregman:
        raise UnsupportedRegularizer("radius is defined for a base regularizer")
    if base.kind == "tsallis":
        sq = np.sum(anchor * anchor, axis=-1, keepdims=True)
        worst = 0.5 * (1.0 - 2.0 * anchor + sq)
    else:
        with np.errstate(divide="ignore"):
            worst = -np.log(anchor)
    return float(base.scale * np.max(worst))
