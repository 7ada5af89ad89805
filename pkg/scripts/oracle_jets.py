"""Independent oracles for the jet tests, computed at high precision.

Finite differences are taken with mpmath at 50 digits so that only the
truncation error of the stencil remains.  Run once; the printed numbers are
frozen into tests/test_jetexpr.py and tests/test_fields.py.
"""

import itertools

import mpmath as mp
import sympy as sp

mp.mp.dps = 50


def fd_derivative(f, point, alpha, step):
    """Nested central differences of step ``step`` for multi-index ``alpha``."""
    step = mp.mpf(step)

    def partial(g, axis):
        def dg(*x):
            xp = list(x)
            xm = list(x)
            xp[axis] += step
            xm[axis] -= step
            return (g(*xp) - g(*xm)) / (2 * step)

        return dg

    g = f
    for axis, k in enumerate(alpha):
        for _ in range(k):
            g = partial(g, axis)
    return g(*[mp.mpf(p) for p in point])


def sin_product_jet():
    f = lambda a, b: mp.sin(a * b)
    point = ("0.7", "-0.3")
    out = {}
    for total in range(4):
        for a1 in range(total, -1, -1):
            alpha = (a1, total - a1)
            out[alpha] = fd_derivative(f, point, alpha, "1e-4")
    return out


def bracket_oracle():
    x1, x2 = sp.symbols("x1 x2")
    alpha = sp.Matrix([x2, 0])
    beta = sp.Matrix([0, x1])
    X = sp.Matrix([x1, x2])
    br = beta.jacobian(X) * alpha - alpha.jacobian(X) * beta
    return br.subs({x1: 1, x2: 2})


def nonlinear_bracket_oracle():
    x1, x2 = sp.symbols("x1 x2")
    X = sp.Matrix([x1, x2])
    alpha = sp.Matrix([sp.sin(x2), x1**2])
    beta = sp.Matrix([x1 * x2, sp.cos(x1)])
    br = beta.jacobian(X) * alpha - alpha.jacobian(X) * beta
    return [sp.N(v.subs({x1: sp.Rational(3, 10), x2: sp.Rational(-7, 10)}), 20) for v in br]


if __name__ == "__main__":
    for alpha, v in sin_product_jet().items():
        print(alpha, mp.nstr(v, 17))
    print("bracket at (1,2):", list(bracket_oracle()))
    print("nonlinear bracket at (0.3,-0.7):", nonlinear_bracket_oracle())
