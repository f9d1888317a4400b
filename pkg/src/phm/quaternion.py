"""Quaternion algebra, used as the exact oracle for subsumption checks.

Kept free of the autodiff machinery on purpose: everything here is plain
floats and numpy, so layer tests compare against an independent path.

A quaternion q = r + x*i + y*j + z*k multiplies on the left as a 4x4
matrix acting on the component vector (r, x, y, z).  That matrix is linear
in q, so it decomposes into a fixed basis of four sign/permutation
matrices weighted by the components; ``hamilton_kron_basis`` returns that
basis.  ``hamilton_diffusion_basis`` returns the analogous fixed matrices
for the column-wise construction (column q of the left-multiplication
matrix equals basis[q] @ (r, x, y, z)).
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Quaternion", "quat_add", "quat_scale", "hamilton",
    "hamilton_matrix", "hamilton_kron_basis", "hamilton_diffusion_basis",
    "random_quaternion",
]


@dataclass(frozen=True)
class Quaternion:
    """One real and three imaginary components, all finite reals."""

    r: float
    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.r, self.x, self.y, self.z], dtype=np.float64)

    @staticmethod
    def from_array(v) -> "Quaternion":
        r, x, y, z = (float(c) for c in np.asarray(v).reshape(4))
        return Quaternion(r, x, y, z)


def quat_add(q: Quaternion, p: Quaternion) -> Quaternion:
    return Quaternion(q.r + p.r, q.x + p.x, q.y + p.y, q.z + p.z)


def quat_scale(alpha: float, q: Quaternion) -> Quaternion:
    return Quaternion(alpha * q.r, alpha * q.x, alpha * q.y, alpha * q.z)


def hamilton(q: Quaternion, p: Quaternion) -> Quaternion:
    """Quaternion product q * p (noncommutative)."""
    return Quaternion(
        q.r * p.r - q.x * p.x - q.y * p.y - q.z * p.z,
        q.x * p.r + q.r * p.x - q.z * p.y + q.y * p.z,
        q.y * p.r + q.z * p.x + q.r * p.y - q.x * p.z,
        q.z * p.r - q.y * p.x + q.x * p.y + q.r * p.z,
    )


def hamilton_matrix(q: Quaternion) -> np.ndarray:
    """4x4 matrix M(q) with M(q) @ (p.r, p.x, p.y, p.z) == q * p."""
    r, x, y, z = q.r, q.x, q.y, q.z
    return np.array([
        [r, -x, -y, -z],
        [x,  r, -z,  y],
        [y,  z,  r, -x],
        [z, -y,  x,  r],
    ], dtype=np.float64)


# Fixed basis of the left-multiplication matrix in its component expansion:
# hamilton_matrix(q) == r*basis[0] + x*basis[1] + y*basis[2] + z*basis[3].
_KRON_BASIS = np.array([
    [[1, 0, 0, 0],
     [0, 1, 0, 0],
     [0, 0, 1, 0],
     [0, 0, 0, 1]],
    [[0, -1, 0, 0],
     [1, 0, 0, 0],
     [0, 0, 0, -1],
     [0, 0, 1, 0]],
    [[0, 0, -1, 0],
     [0, 0, 0, 1],
     [1, 0, 0, 0],
     [0, -1, 0, 0]],
    [[0, 0, 0, -1],
     [0, 0, -1, 0],
     [0, 1, 0, 0],
     [1, 0, 0, 0]],
], dtype=np.float64)

# Fixed matrices of the column-wise construction: column q of
# hamilton_matrix(q) equals _DIFFUSION_BASIS[q] @ (r, x, y, z).
_DIFFUSION_BASIS = np.array([
    [[1, 0, 0, 0],
     [0, 1, 0, 0],
     [0, 0, 1, 0],
     [0, 0, 0, 1]],
    [[0, -1, 0, 0],
     [1, 0, 0, 0],
     [0, 0, 0, 1],
     [0, 0, -1, 0]],
    [[0, 0, -1, 0],
     [0, 0, 0, -1],
     [1, 0, 0, 0],
     [0, 1, 0, 0]],
    [[0, 0, 0, -1],
     [0, 0, 1, 0],
     [0, -1, 0, 0],
     [1, 0, 0, 0]],
], dtype=np.float64)


def hamilton_kron_basis() -> np.ndarray:
    """The (4, 4, 4) stacked rule matrices of the component expansion.

    With scalar weight blocks equal to the components of q, the
    Kronecker-sum layer built on this basis reproduces q * p exactly.
    """
    return _KRON_BASIS.copy()


def hamilton_diffusion_basis() -> np.ndarray:
    """The (4, 4, 4) stacked column-rule matrices of the same product."""
    return _DIFFUSION_BASIS.copy()


def random_quaternion(rng: np.random.Generator, scale: float = 1.0) -> Quaternion:
    return Quaternion.from_array(rng.uniform(-scale, scale, size=4))
