"""Seeded generators of admissible potentials.

Every sample is addressed by (seed, index) so that a worst case found by a
verification suite can be regenerated on its own.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit

from .errors import ModelError
from .model_space import ModelSpace, Potential, psh_envelope

KINDS = ("envelope", "smooth", "structured")


def sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & (2 ** 64 - 1), int(index)])


def _band_field(x: np.ndarray, rng: np.random.Generator, modes: int) -> np.ndarray:
    # x is assumed to lie in [0, 1]
    f = np.zeros_like(x)
    for k in range(1, modes + 1):
        f += rng.normal() / k * np.cos(np.pi * k * x + rng.uniform(0, 2 * np.pi))
    return f


def random_envelope(model: ModelSpace, rng: np.random.Generator, amp: float = 1.0,
                    even: bool = False, modes: int = 8) -> Potential:
    """psh envelope of a band-limited random field (radial)."""
    t = model.axis
    g = amp * model.V * _band_field((t + model.grid.T) / (2 * model.grid.T), rng, modes)
    if even:
        g = 0.5 * (g + g[::-1])
    phi = psh_envelope(g, model).values
    if even:
        phi = 0.5 * (phi + phi[::-1])
    return Potential(model, phi - phi.max(), "sup", even)


def _logistic_bump(model: ModelSpace, rng: np.random.Generator, modes: int) -> np.ndarray:
    # perturbation whose derivatives decay like those of u0 at the ends
    p = expit(model.axis)
    w = (4 * p * (1 - p)) ** 2
    if model.n == 1:
        return _band_field(p, rng, modes) * w
    f = np.zeros((p.size, p.size))
    for k1 in range(modes):
        for k2 in range(modes):
            f += (rng.normal() / (1 + k1 + k2)
                  * np.cos(np.pi * k1 * p + rng.uniform(0, 2 * np.pi))[:, None]
                  * np.cos(np.pi * k2 * p + rng.uniform(0, 2 * np.pi))[None, :])
    g = f * w[:, None] * w[None, :]
    g[:2, :] = g[-2:, :] = 0.0
    g[:, :2] = g[:, -2:] = 0.0
    return g.ravel()


def random_smooth(model: ModelSpace, rng: np.random.Generator, amp: float = 1.0,
                  even: bool = False, modes: int = 4, min_mass: float = 0.0) -> Potential:
    """Smooth potential with strictly admissible u, found by halving amp."""
    g = _logistic_bump(model, rng, modes)
    if even:
        g = 0.5 * (g + model.backend.reflect(g))
    scale = amp * (model.V if model.n == 1 else 1.0)
    for _ in range(60):
        phi = scale * g
        if model.admissibility_defect(phi) <= 0.0 and model.ma_weights(phi).min() > min_mass:
            break
        scale *= 0.5
    else:  # pragma: no cover - the zero potential always qualifies
        phi = np.zeros_like(g)
    if model.n == 1:
        return Potential(model, phi - phi.max(), "sup", even)
    return Potential(model, phi, "pinned", even)


def extremal_family(model: ModelSpace, m: float, mirror: bool = False) -> Potential:
    """phi_m(t) = -m log(1 + e^{-t}) and its mirror, sup-normalized."""
    if model.n != 1:
        raise ModelError("the extremal family lives on the radial model")
    if not 0 < m <= model.V:
        raise ModelError("m must lie in (0, V]")
    t = -model.axis if mirror else model.axis
    phi = -m * np.logaddexp(0.0, -t)
    return Potential(model, phi - phi.max(), "sup")


def kink_potential(model: ModelSpace, index: int, jump: float) -> Potential:
    """u piecewise linear with a single kink of slope jump at a node."""
    if model.n != 1:
        raise ModelError("kinks are built on the radial model")
    if not 0 < jump <= model.V:
        raise ModelError("jump must lie in (0, V]")
    t = model.axis
    lo = 0.5 * (model.V - jump)
    u = lo * (t - t[index]) + jump * np.maximum(t - t[index], 0.0)
    phi = u - model.u0
    return Potential(model, phi - phi.max(), "sup")


def translate_potential(model: ModelSpace, shift: float) -> Potential:
    """Reference potential translated in the log coordinate."""
    if model.n != 1:
        raise ModelError("translates are built on the radial model")
    beta = model.V / 2.0
    u = 2.0 * np.logaddexp(0.0, beta * (model.axis + shift))
    phi = u - model.u0
    return Potential(model, phi - phi.max(), "sup")


def sample_potential(model: ModelSpace, seed: int, index: int, kind: str = "mixed",
                     even: bool = False, amp: float | None = None) -> Potential:
    """Deterministic sample number `index` of the stream `seed`."""
    rng = sample_rng(seed, index)
    if model.n == 2:
        return random_smooth(model, rng, 0.5 if amp is None else amp, even=even)
    if kind == "mixed":
        kind = KINDS[index % 3]
    if kind == "envelope":
        a = rng.uniform(0.05, 1.0) if amp is None else amp
        return random_envelope(model, rng, a, even=even)
    if kind == "smooth":
        a = rng.uniform(0.1, 2.0) if amp is None else amp
        return random_smooth(model, rng, a, even=even)
    if kind == "structured":
        choice = rng.integers(3)
        if choice == 0 and not even:
            return extremal_family(model, rng.uniform(0.05, 1.0) * model.V, bool(rng.integers(2)))
        if choice == 1 and not even:
            k = int(rng.integers(model.grid.N // 4, 3 * model.grid.N // 4))
            return kink_potential(model, k, rng.uniform(0.1, 1.0) * model.V)
        base = random_smooth(model, rng, rng.uniform(0.1, 2.0), even=even)
        s = rng.uniform(0.2, 1.0)
        return Potential(model, s * base.values, "sup", even)
    raise ModelError(f"unknown sample kind {kind!r}")


def sample_many(model: ModelSpace, seed: int, count: int, **kw) -> list[Potential]:
    return [sample_potential(model, seed, i, **kw) for i in range(count)]
