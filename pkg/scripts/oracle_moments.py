"""Second moments of the linear diffusion dX1 = dW, dX2 = X1 dt.

The density of this process solves du = (1/2 D11 u - x1 D2 u) dt.  Its
covariance grows by int_0^t e^{As} B B^T e^{A^T s} ds and the initial
covariance is transported by e^{At}.  Evaluated exactly with sympy; the
numbers are frozen into tests/test_pde.py and tests/test_acceptance.py.
"""

import sympy as sp


def covariance(t):
    s, tt = sp.symbols("s t", nonnegative=True)
    A = sp.Matrix([[0, 0], [1, 0]])
    B = sp.Matrix([1, 0])
    E = (A * s).exp()
    gram = (E * B * B.T * E.T).applyfunc(lambda v: sp.integrate(v, (s, 0, tt)))
    return gram, (A * tt).exp(), gram.subs(tt, t)


if __name__ == "__main__":
    gram, M, at = covariance(sp.Rational(1, 2))
    print("growth:", gram)
    print("transport:", M)
    print("at t=1/2:", [sp.nsimplify(v) for v in at], [float(v) for v in at])
