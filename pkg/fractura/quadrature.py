"""
Reference-triangle data shared by the mesh, model and assembly modules.

Barycentric coordinates are used throughout: a point of triangle (v0, v1, v2)
is sum_i lambda_i v_i with sum_i lambda_i = 1. The P1 basis function of local
vertex i is lambda_i itself, and the cubic bubble is 27 lambda_0 lambda_1 lambda_2.
"""
from typing import Tuple

import numpy as np

_A1 = 0.445948490915965
_B1 = 1.0 - 2.0 * _A1
_W1 = 0.223381589678011
_A2 = 0.091576213509771
_B2 = 1.0 - 2.0 * _A2
_W2 = 0.109951743655322

#: Barycentric coordinates of the 6-point degree-4 symmetric rule, shape (6, 3).
POINTS = np.array(
    [
        [_B1, _A1, _A1],
        [_A1, _B1, _A1],
        [_A1, _A1, _B1],
        [_B2, _A2, _A2],
        [_A2, _B2, _A2],
        [_A2, _A2, _B2],
    ]
)
#: Weights relative to the triangle area; they sum to one.
WEIGHTS = np.array([_W1, _W1, _W1, _W2, _W2, _W2])
WEIGHTS = WEIGHTS / WEIGHTS.sum()

N_POINTS = POINTS.shape[0]


def bubble(bary: np.ndarray) -> np.ndarray:
    """
    Cubic bubble 27 l0 l1 l2, equal to one at the centroid and zero on the boundary.
    `bary` has barycentric coordinates on its last axis.
    """
    bary = np.asarray(bary, dtype=float)
    return 27.0 * bary[..., 0] * bary[..., 1] * bary[..., 2]


def bubble_bary_gradient(bary: np.ndarray) -> np.ndarray:
    """
    Derivatives of the bubble with respect to (l0, l1, l2).
    """
    bary = np.asarray(bary, dtype=float)
    return 27.0 * np.stack(
        [bary[..., 1] * bary[..., 2], bary[..., 0] * bary[..., 2], bary[..., 0] * bary[..., 1]],
        axis=-1,
    )


def signed_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p0 = vertices[triangles[:, 0]]
    p1 = vertices[triangles[:, 1]]
    p2 = vertices[triangles[:, 2]]
    d1 = p1 - p0
    d2 = p2 - p0
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def triangle_geometry(vertices: np.ndarray, triangles: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Returns (areas, grads) where grads[e, i] is the constant gradient of the
    barycentric coordinate of local vertex i on element e, shape (M, 3, 2).
    """
    areas = signed_areas(vertices, triangles)
    p = vertices[triangles]  # (M, 3, 2)
    grads = np.empty_like(p)
    # grad l_i = rot90(p_{i+2} - p_{i+1}) / (2 A), with rot90(x, y) = (-y, x) for CCW triangles
    for i in range(3):
        edge = p[:, (i + 2) % 3] - p[:, (i + 1) % 3]
        grads[:, i, 0] = -edge[:, 1]
        grads[:, i, 1] = edge[:, 0]
    grads /= (2.0 * areas)[:, None, None]
    return areas, grads


def quadrature_points(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """
    Physical coordinates of the quadrature points, shape (M, 6, 2).
    """
    return np.einsum("qi,eid->eqd", POINTS, vertices[triangles])


def p1_values() -> np.ndarray:
    """
    P1 basis values at the quadrature points, shape (6, 3).
    """
    return POINTS.copy()


def enriched_values() -> np.ndarray:
    """
    P1 + bubble basis values at the quadrature points, shape (6, 4).
    """
    return np.concatenate([POINTS, bubble(POINTS)[:, None]], axis=1)


def enriched_gradients(grads: np.ndarray) -> np.ndarray:
    """
    Physical gradients of the P1 + bubble basis, shape (M, 6, 4, 2).
    """
    n_el = grads.shape[0]
    out = np.empty((n_el, N_POINTS, 4, 2))
    out[:, :, :3, :] = grads[:, None, :, :]
    dbub = bubble_bary_gradient(POINTS)  # (6, 3)
    out[:, :, 3, :] = np.einsum("qi,eid->eqd", dbub, grads)
    return out
