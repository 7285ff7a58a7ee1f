"""Input validation helpers shared by the estimator wrappers."""

from __future__ import annotations

import numbers

import numpy as np

from .cloudio import PointCloud

__all__ = [
    "as_point_cloud",
    "as_point_cloud_list",
    "check_positive",
    "check_fraction",
]


def as_point_cloud(X, frame_id: str = "cloud") -> PointCloud:
    """Coerce a PointCloud, (n, 4) array, or (n, 3) array to a PointCloud.

    Three-column input gets a zero intensity column appended.
    """
    if isinstance(X, PointCloud):
        return X
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] not in (3, 4):
        raise ValueError(f"expected (n, 3) or (n, 4) points, got {arr.shape}")
    if arr.shape[1] == 3:
        arr = np.column_stack([arr, np.zeros(arr.shape[0])])
    return PointCloud(arr, frame_id=frame_id)


def as_point_cloud_list(X) -> list:
    """Coerce one cloud or an iterable of clouds to a list of PointClouds.

    A bare 2D array is one cloud, never a sequence of (row) clouds.
    """
    if isinstance(X, PointCloud) or (
        isinstance(X, np.ndarray) and X.ndim == 2
    ):
        return [as_point_cloud(X)]
    clouds = list(X)
    return [
        as_point_cloud(c, frame_id=f"cloud{i:05d}") if not isinstance(c, PointCloud) else c
        for i, c in enumerate(clouds)
    ]


def check_positive(name: str, value) -> float:
    if not isinstance(value, numbers.Real) or not value > 0:
        raise ValueError(f"{name} must be a positive number, got {value!r}")
    return float(value)


def check_fraction(name: str, value) -> float:
    if not isinstance(value, numbers.Real) or not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value!r}")
    return float(value)
