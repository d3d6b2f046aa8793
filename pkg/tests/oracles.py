"""Independent brute-force references shared by unit and acceptance tests."""

import itertools

import numpy as np


def best_matching_bruteforce(A, q, forbid_at):
    """Minimum total cost over every set of q disjoint pairs with cost < forbid_at."""
    a = A.shape[0]
    edges = [(i, j) for i, j in itertools.combinations(range(a), 2) if A[i, j] < forbid_at]
    best = (np.inf, None)
    for combo in itertools.combinations(edges, q):
        used = [v for e in combo for v in e]
        if len(set(used)) != 2 * q:
            continue
        c = sum(A[i, j] for i, j in combo)
        if c < best[0]:
            best = (c, set(combo))
    return best


def sphere_grid(count):
    """Fibonacci points on the whole sphere (independent of the library's grid)."""
    i = np.arange(count) + 0.5
    z = 1 - 2 * i / count
    r = np.sqrt(1 - z * z)
    phi = np.pi * (1 + 5**0.5) * i
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def min_quadratic_on_sphere(H, count=200000, refine=True):
    """argmin of v^T H v over unit v by grid search plus local polishing."""
    V = sphere_grid(count)
    vals = np.einsum("ij,jk,ik->i", V, H, V)
    v = V[np.argmin(vals)]
    if refine:
        step = 0.02
        for _ in range(60):
            c = v + step * np.random.default_rng(0).normal(size=(400, 3))
            c /= np.linalg.norm(c, axis=1)[:, None]
            c = np.vstack([v, c])
            v = c[np.argmin(np.einsum("ij,jk,ik->i", c, H, c))]
            step *= 0.85
    return v


def numeric_grad(f, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g
