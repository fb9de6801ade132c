"""Independent reference implementations used to check the library.

Everything here is deliberately brute force and kept free of the library's
fast paths (no KD-trees, no rasterizer reuse) so tests compare two routes.
"""

import itertools

import numpy as np


def brute_chamfer_a_to_b(a: np.ndarray, b: np.ndarray) -> float:
    """O(n*m) single-direction squared chamfer, mean over a."""
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    return float(d2.min(axis=1).mean())


def brute_chamfer_symmetric(a: np.ndarray, b: np.ndarray) -> float:
    return brute_chamfer_a_to_b(a, b) + brute_chamfer_a_to_b(b, a)


def brute_emd(a: np.ndarray, b: np.ndarray) -> float:
    """Exact EMD by enumerating all permutations; n <= 7 only."""
    n = len(a)
    assert n <= 7, "permutation oracle explodes beyond 7 points"
    cost = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))
    best = np.inf
    for perm in itertools.permutations(range(n)):
        best = min(best, cost[np.arange(n), perm].mean())
    return float(best)


def point_triangle_distance(p: np.ndarray, tri: np.ndarray) -> float:
    """Exact distance from a point to a 3D triangle (closest-point algorithm)."""
    a, b, c = tri
    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = ab @ ap, ac @ ap
    if d1 <= 0 and d2 <= 0:
        return float(np.linalg.norm(ap))
    bp = p - b
    d3, d4 = ab @ bp, ac @ bp
    if d3 >= 0 and d4 <= d3:
        return float(np.linalg.norm(bp))
    vc = d1 * d4 - d3 * d2
    if vc <= 0 and d1 >= 0 and d3 <= 0:
        v = d1 / (d1 - d3)
        return float(np.linalg.norm(ap - v * ab))
    cp = p - c
    d5, d6 = ab @ cp, ac @ cp
    if d6 >= 0 and d5 <= d6:
        return float(np.linalg.norm(cp))
    vb = d5 * d2 - d1 * d6
    if vb <= 0 and d2 >= 0 and d6 <= 0:
        w = d2 / (d2 - d6)
        return float(np.linalg.norm(ap - w * ac))
    va = d3 * d6 - d5 * d4
    if va <= 0 and (d4 - d3) >= 0 and (d5 - d6) >= 0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return float(np.linalg.norm(p - (b + w * (c - b))))
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return float(np.linalg.norm(p - (a + v * ab + w * ac)))


def max_distance_to_mesh(points: np.ndarray, vertices: np.ndarray, triangles: np.ndarray) -> float:
    """Largest point-to-surface distance over all points (loops; test sizes only)."""
    tris = vertices[triangles]
    worst = 0.0
    for p in points:
        best = min(point_triangle_distance(p, tri) for tri in tris)
        worst = max(worst, best)
    return worst


def analytic_chamfer_translation_gradient(
    scan: np.ndarray, posed_samples: np.ndarray
) -> np.ndarray:
    """d/dt of mean_p min_q ||p - (q + t)||^2 at t=0, nearest neighbors frozen."""
    d2 = ((scan[:, None, :] - posed_samples[None, :, :]) ** 2).sum(axis=2)
    nn = d2.argmin(axis=1)
    diff = scan - posed_samples[nn]
    return -2.0 * diff.mean(axis=0)
