"""Dense discriminant scan for U = 2 cos x (independent of the package).

Fixed-step RK4 vectorized over energies, step 1e-4 in energy, edges from
linear interpolation of |D| = 2 crossings.  Prints the edges to freeze.
"""

import numpy as np


def discriminant(lam, n_steps=4000):
    T = 2 * np.pi
    h = T / n_steps
    # two real solutions at once: (y1, y1', y2, y2')
    y = np.zeros((4, lam.size))
    y[0] = 1.0
    y[3] = 1.0

    def f(x, y):
        q = 2 * np.cos(x) - lam
        return np.array([y[1], q * y[0], y[3], q * y[2]])

    x = 0.0
    for _ in range(n_steps):
        k1 = f(x, y)
        k2 = f(x + h / 2, y + h / 2 * k1)
        k3 = f(x + h / 2, y + h / 2 * k2)
        k4 = f(x + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        x += h
    return y[0] + y[3]


def edges(lo=-2.0, hi=10.0, dlam=1e-4):
    lam = np.arange(lo, hi + dlam / 2, dlam)
    D = discriminant(lam)
    out = []
    for level in (2.0, -2.0):
        g = D - level
        s = np.nonzero(np.sign(g[:-1]) != np.sign(g[1:]))[0]
        for i in s:
            out.append(lam[i] - g[i] * (lam[i + 1] - lam[i]) / (g[i + 1] - g[i]))
    return np.sort(np.array(out)), lam, D


if __name__ == "__main__":
    e, lam, D = edges()
    np.set_printoptions(precision=12)
    print(repr(e))
    inside = np.abs(D) <= 2
    print("first lam inside:", lam[np.argmax(inside)])
