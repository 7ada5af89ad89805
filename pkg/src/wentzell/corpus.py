"""Seeded generators of random smooth coefficient expressions."""

from __future__ import annotations

import numpy as np

from .fields import ExprField, VectorFieldSet

__all__ = ["random_expression", "random_field", "random_field_set"]


def _num(v: float) -> str:
    return f"{v:.4f}"


def random_expression(rng: np.random.Generator, d: int, amp: float = 1.0, terms: int = 3) -> str:
    """A random bounded-derivative expression in ``x1..xd`` of size about ``amp``."""
    parts = [_num(amp * rng.uniform(-1, 1))]
    for _ in range(terms):
        i, j = rng.integers(1, d + 1, size=2)
        a = amp * rng.uniform(-1, 1) / terms
        k = rng.uniform(0.5, 2.0)
        p = rng.uniform(-np.pi, np.pi)
        kind = rng.integers(0, 4)
        if kind == 0:
            parts.append(f"{_num(a)}*sin({_num(k)}*x{i} + {_num(p)})")
        elif kind == 1:
            parts.append(f"{_num(a)}*cos({_num(k)}*x{i})*x{j}")
        elif kind == 2:
            parts.append(f"{_num(a)}*tanh({_num(k)}*x{i} - {_num(0.3 * p)})")
        else:
            parts.append(f"{_num(a)}*x{i}*x{j}/(1 + x{i}^2)")
    return _tidy(" + ".join(parts))


def _tidy(text: str) -> str:
    return text.replace("+ -", "- ").replace("- -", "+ ")


def random_components(rng, d, amp=1.0, terms=3):
    return [random_expression(rng, d, amp, terms) for _ in range(d)]


def random_field(rng, d, amp=1.0, label="", cutoff=None) -> ExprField:
    return ExprField(random_components(rng, d, amp), d, label=label, cutoff=cutoff)


def random_field_set(
    seed: int,
    d: int = 2,
    d1: int = 1,
    d2: int = 2,
    amp_drift: float = 0.3,
    amp_noise: float = 0.4,
    amp_diff: float = 0.3,
    R0: float = 1.0,
    cutoff: bool = True,
    c_amp: float = 0.0,
) -> VectorFieldSet:
    """Random coefficient family; diffusion fields get a constant elliptic part."""
    rng = np.random.default_rng(seed)
    sigma = [random_components(rng, d, amp_drift)]
    for _ in range(d1):
        sigma.append(random_components(rng, d, amp_noise))
    for k in range(d2):
        comps = random_components(rng, d, 0.3 * amp_diff)
        comps[k % d] = _tidy(f"{_num(amp_diff)} + " + comps[k % d])
        sigma.append(comps)
    c = random_expression(rng, d, c_amp, 1) if c_amp else "0"
    return VectorFieldSet.build(d, d1, d2, sigma, c=c, R0=R0, cutoff=cutoff)
