"""Seeded toy tasks used by the tests, the CLI and the verification harness.

four-mode task
    Four frames whose translations sit at distance 3 from the origin on the
    x/y axes and whose rotations turn 2 rad about four different axes. The
    data distribution is those four frames, optionally jittered.

crossing task
    Two source clusters at ``(-3, ±1.5, 0)`` with rotations ``exp(±0.6 z)``
    and two target clusters at ``(3, ±1.5, 0)`` with the same two rotations.
    The reference coupling sends the upper source cluster to the lower
    target cluster and vice versa. Both geodesics then pass through the
    origin with the identity rotation at ``t = 1/2``, so the paths cross in
    the joint state, not just in translation. The cost-optimal coupling
    keeps the signs and needs no rotation at all.
"""

from __future__ import annotations

import numpy as np

from .frames import FrameTransform
from .quat import exp_map, geodesic_distance, hamilton_product, normalize

MODE_RADIUS = 3.0
MODE_ANGLE = 2.0
# jitter used by the default toy runs (training, rectification, verification)
TRANS_JITTER = 0.5
ROT_JITTER = 0.25
_MODE_AXES = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 1.0]])
_MODE_TRANS = MODE_RADIUS * np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0]])


def four_mode_centers() -> tuple[np.ndarray, np.ndarray]:
    axes = _MODE_AXES / np.linalg.norm(_MODE_AXES, axis=1, keepdims=True)
    return _MODE_TRANS.copy(), exp_map(MODE_ANGLE * axes)


def four_mode_frames() -> list[FrameTransform]:
    x, q = four_mode_centers()
    return [FrameTransform(a, b) for a, b in zip(x, q)]


def four_mode_dataset(
    n: int, rng: np.random.Generator, trans_jitter: float = 0.0, rot_jitter: float = 0.0
) -> tuple[np.ndarray, np.ndarray]:
    """``n`` draws from the four modes (balanced, shuffled) with Gaussian jitter."""
    xc, qc = four_mode_centers()
    labels = rng.permutation(np.arange(n) % 4)
    x = xc[labels] + trans_jitter * rng.standard_normal((n, 3))
    q = hamilton_product(qc[labels], exp_map(rot_jitter * rng.standard_normal((n, 3))))
    return x, normalize(q)


def four_mode_sampler(trans_jitter: float = TRANS_JITTER, rot_jitter: float = ROT_JITTER):
    """``sample(n, rng) -> (x, q)`` drawing fresh four-mode data."""

    def sample(n, rng):
        return four_mode_dataset(n, rng, trans_jitter, rot_jitter)

    return sample


def nearest_mode_error(x, q, centers=None) -> tuple[np.ndarray, np.ndarray]:
    """Translation distance and rotation angle to the nearest mode.

    "Nearest" minimizes the sum of the two; returns per-sample arrays.
    """
    xc, qc = centers if centers is not None else four_mode_centers()
    x = np.atleast_2d(x)
    q = np.atleast_2d(q)
    dx = np.linalg.norm(x[:, None, :] - xc[None], axis=-1)
    dq = geodesic_distance(q[:, None, :], qc[None])
    k = np.argmin(dx + dq, axis=1)
    rows = np.arange(len(x))
    return dx[rows, k], dq[rows, k]


CROSS_OFFSET = np.array([3.0, 1.5, 0.0])
CROSS_TWIST = 0.6


def crossing_centers():
    """Source and target cluster centres, index 0 = upper (+), 1 = lower (-)."""
    sign = np.array([1.0, -1.0])
    z = np.array([0.0, 0.0, 1.0])
    src_x = np.stack([[-CROSS_OFFSET[0], s * CROSS_OFFSET[1], 0.0] for s in sign])
    dst_x = np.stack([[CROSS_OFFSET[0], s * CROSS_OFFSET[1], 0.0] for s in sign])
    rots = exp_map(sign[:, None] * CROSS_TWIST * z)
    return (src_x, rots), (dst_x, rots.copy())


def _cluster_draw(cx, cq, labels, rng, trans_sd, rot_sd):
    n = len(labels)
    x = cx[labels] + trans_sd * rng.standard_normal((n, 3))
    q = hamilton_product(cq[labels], exp_map(rot_sd * rng.standard_normal((n, 3))))
    return x, normalize(q)


def crossing_source(n: int, rng: np.random.Generator, trans_sd: float = 0.2, rot_sd: float = 0.05):
    (sx, sq), _ = crossing_centers()
    labels = np.arange(n) % 2
    x, q = _cluster_draw(sx, sq, labels, rng, trans_sd, rot_sd)
    return x, q, labels


CROSSING_ASSIGNMENTS = ("crossed", "sorted", "independent")


def crossing_coupling(n: int, rng: np.random.Generator, trans_sd: float = 0.2, rot_sd: float = 0.05,
                      assignment: str = "crossed"):
    """Source/target arrays ``(x0, q0, x1, q1)``.

    ``assignment`` picks the target cluster: "crossed" swaps signs, "sorted"
    keeps them (the cost-optimal coupling), "independent" draws it at random.
    """
    if assignment not in CROSSING_ASSIGNMENTS:
        raise ValueError(f"assignment must be one of {CROSSING_ASSIGNMENTS}, got {assignment!r}")
    x0, q0, labels = crossing_source(n, rng, trans_sd, rot_sd)
    _, (dx, dq) = crossing_centers()
    if assignment == "crossed":
        target = 1 - labels
    elif assignment == "sorted":
        target = labels
    else:
        target = rng.integers(0, 2, size=n)
    x1, q1 = _cluster_draw(dx, dq, target, rng, trans_sd, rot_sd)
    return x0, q0, x1, q1


def crossing_target_error(x, q):
    _, centers = crossing_centers()
    return nearest_mode_error(x, q, centers)
