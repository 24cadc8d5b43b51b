"""Shared fixtures that are plain data, not pytest fixtures."""
from pathlib import Path

import numpy as np

DATA = Path(__file__).parent / "data"

# Carbon with four different substituents at unequal bond lengths: no
# proper rotation maps it onto its mirror image.
CHIRAL = np.array([
    [0.0, 0.0, 0.0],
    [1.09, 0.0, 0.0],
    [-0.36, 1.43, 0.0],
    [-0.40, -0.62, 1.55],
    [-0.45, -0.85, -1.62],
])


def random_rotation(rng) -> np.ndarray:
    """Uniform proper rotation from a random unit quaternion."""
    w, x, y, z = rng.normal(size=4)
    n = np.sqrt(w * w + x * x + y * y + z * z)
    w, x, y, z = w / n, x / n, y / n, z / n
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])
