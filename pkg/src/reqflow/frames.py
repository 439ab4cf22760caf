"""Backbone frames: placing idealized residues, oxygen imputation, auxiliary losses.

Coordinates are in Ångström throughout; the pairwise-distance loss converts
to nanometres before applying its 0.6 nm neighbourhood cutoff.

Chain text format (``write_chain``/``read_chain``)::

    # reqflow-chain v1
    # residue atom x y z
    0 N -0.525 1.363 0.0
    0 CA 0.0 0.0 0.0
    ...

One whitespace-separated record per atom: residue index (int, from 0), atom
name (N, CA, C, O), then x, y, z in Å written with 17 significant digits so
that reading back is exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .quat import rotate_vector

ATOM_NAMES = ("N", "CA", "C", "O")
ANGSTROM_PER_NM = 10.0
NEIGHBOUR_CUTOFF_NM = 0.6

# Engh & Huber-derived backbone geometry.
N_CA_BOND = 1.458
CA_C_BOND = 1.525
C_O_BOND = 1.231
N_CA_C_ANGLE = np.deg2rad(111.2)
CA_C_O_ANGLE = np.deg2rad(120.8)


@dataclass(frozen=True)
class FrameTransform:
    trans: np.ndarray
    rot: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "trans", np.asarray(self.trans, dtype=float))
        object.__setattr__(self, "rot", np.asarray(self.rot, dtype=float))


def _ideal_coordinates() -> np.ndarray:
    n = N_CA_BOND * np.array([np.cos(np.pi - N_CA_C_ANGLE), np.sin(np.pi - N_CA_C_ANGLE), 0.0])
    c = np.array([CA_C_BOND, 0.0, 0.0])
    # O in the N-CA-C plane on the far side of C, CA-C-O angle fixed
    o = c + C_O_BOND * np.array([-np.cos(CA_C_O_ANGLE), -np.sin(CA_C_O_ANGLE), 0.0])
    return np.stack([n, np.zeros(3), c, o])


@dataclass(frozen=True)
class IdealResidue:
    """Idealized ``[N, CA, C, O]`` coordinates with CA at the origin and C on +x."""

    coords: np.ndarray = field(default_factory=_ideal_coordinates)

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float)
        if coords.shape != (4, 3):
            raise ValueError(f"ideal residue needs 4x3 coordinates, got {coords.shape}")
        if np.any(coords[1] != 0.0):
            raise ValueError("CA must sit exactly at the origin")
        object.__setattr__(self, "coords", coords)


@dataclass
class BackboneChain:
    frames: list[FrameTransform]
    atoms: np.ndarray  # (N, 4, 3) in Å, atom order N, CA, C, O

    def __len__(self) -> int:
        return len(self.frames)


def apply_frame(frame: FrameTransform, local) -> np.ndarray:
    """``x + rotate(q, local)``; ``local`` may carry leading batch axes."""
    return frame.trans + rotate_vector(frame.rot, local)


def place_atoms(trans: np.ndarray, rot: np.ndarray, ideal: IdealResidue) -> np.ndarray:
    """Vectorized frame application: (N,3), (N,4) -> (N,4,3) atoms."""
    rot4 = np.broadcast_to(rot[:, None, :], rot.shape[:1] + (4, 4))
    return trans[:, None, :] + rotate_vector(rot4, np.broadcast_to(ideal.coords, (len(trans), 4, 3)))


def realize_chain(frames: list[FrameTransform], ideal: IdealResidue | None = None) -> BackboneChain:
    if not frames:
        raise ValueError("need at least one frame")
    ideal = ideal or IdealResidue()
    trans = np.stack([f.trans for f in frames])
    rot = np.stack([f.rot for f in frames])
    return BackboneChain(list(frames), place_atoms(trans, rot, ideal))


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def impute_oxygen(chain: BackboneChain, bond: float = C_O_BOND) -> BackboneChain:
    """Rebuild each non-terminal O from CA(i), C(i) and N(i+1).

    O is placed in the CA(i)-C(i)-N(i+1) plane along the exterior bisector
    of the CA-C-N angle, i.e. trans to N(i+1) about the CA-C bond. The last
    residue keeps its frame-derived O.
    """
    if len(chain) < 2:
        raise ValueError("oxygen imputation needs at least two residues")
    atoms = chain.atoms.copy()
    ca, c, n_next = atoms[:-1, 1], atoms[:-1, 2], atoms[1:, 0]
    direction = -_unit(_unit(ca - c) + _unit(n_next - c))
    atoms[:-1, 3] = c + bond * direction
    return BackboneChain(list(chain.frames), atoms)


def _pair_distances_nm(atoms: np.ndarray) -> np.ndarray:
    flat = atoms.reshape(-1, 3) / ANGSTROM_PER_NM
    diff = flat[:, None, :] - flat[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def aux_loss(pred: BackboneChain | np.ndarray, truth: BackboneChain | np.ndarray):
    """Backbone-coordinate and local-distance losses.

    Returns ``(L_bb, L_dis, L_bb + L_dis)``. ``L_bb`` is the mean squared atom
    displacement in Å². ``L_dis`` sums squared distance errors (nm) over all
    ordered atom pairs whose true distance is below 0.6 nm, divided by
    ``(number of such pairs) - N``.
    """
    pa = pred.atoms if isinstance(pred, BackboneChain) else np.asarray(pred)
    ta = truth.atoms if isinstance(truth, BackboneChain) else np.asarray(truth)
    if pa.shape != ta.shape:
        raise ValueError(f"chain shapes differ: {pa.shape} vs {ta.shape}")
    n_res = pa.shape[0]
    l_bb = float(np.sum((pa - ta) ** 2) / (4 * n_res))
    d = _pair_distances_nm(ta)
    d_hat = _pair_distances_nm(pa)
    mask = d < NEIGHBOUR_CUTOFF_NM
    z = int(mask.sum()) - n_res
    if z <= 0:
        raise ValueError(f"distance-loss normalizer is {z}; chain too small")
    l_dis = float(np.sum(np.where(mask, (d - d_hat) ** 2, 0.0)) / z)
    return l_bb, l_dis, l_bb + l_dis


def aux_loss_atom_grad(pred_atoms: np.ndarray, true_atoms: np.ndarray) -> np.ndarray:
    """Gradient of ``L_aux`` with respect to predicted atom coordinates (Å)."""
    n_res = pred_atoms.shape[0]
    grad = 2.0 * (pred_atoms - true_atoms) / (4 * n_res)
    d = _pair_distances_nm(true_atoms)
    flat = pred_atoms.reshape(-1, 3) / ANGSTROM_PER_NM
    diff = flat[:, None, :] - flat[None, :, :]
    d_hat = np.sqrt(np.sum(diff * diff, axis=-1))
    mask = d < NEIGHBOUR_CUTOFF_NM
    z = int(mask.sum()) - n_res
    if z <= 0:
        raise ValueError(f"distance-loss normalizer is {z}; chain too small")
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(mask & (d_hat > 0), -2.0 * (d - d_hat) / d_hat, 0.0) / z
    # each ordered pair (i, j) pulls on both i and j; the sum is symmetric
    g_flat = 2.0 * np.sum(coef[:, :, None] * diff, axis=1) / ANGSTROM_PER_NM
    return grad + g_flat.reshape(pred_atoms.shape)


def rotate_vector_vjp(q: np.ndarray, v: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. ``q`` of ``g · rotate(q, v)`` for the homogeneous quadratic form
    ``(s² - |u|²) v + 2 (u·v) u + 2 s (u × v)``."""
    s, u = q[..., :1], q[..., 1:]
    gv = np.sum(grad_out * v, axis=-1, keepdims=True)
    gu = np.sum(grad_out * u, axis=-1, keepdims=True)
    uv = np.sum(u * v, axis=-1, keepdims=True)
    grad_s = 2 * s * gv + 2 * np.sum(grad_out * np.cross(u, v), axis=-1, keepdims=True)
    grad_u = -2 * gv * u + 2 * gu * v + 2 * uv * grad_out + 2 * s * np.cross(v, grad_out)
    return np.concatenate([grad_s, grad_u], axis=-1)


def write_chain(path, chain: BackboneChain) -> None:
    lines = ["# reqflow-chain v1", "# residue atom x y z"]
    for i, residue in enumerate(chain.atoms):
        for name, xyz in zip(ATOM_NAMES, residue):
            lines.append(f"{i} {name} {xyz[0]:.17g} {xyz[1]:.17g} {xyz[2]:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_chain(path) -> np.ndarray:
    """Read atom coordinates written by :func:`write_chain`; returns (N, 4, 3)."""
    records: dict[int, dict[str, np.ndarray]] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 5 or parts[1] not in ATOM_NAMES:
            raise ValueError(f"{path}:{lineno}: malformed atom record {line!r}")
        records.setdefault(int(parts[0]), {})[parts[1]] = np.array([float(p) for p in parts[2:]])
    atoms = np.empty((len(records), 4, 3))
    for i in range(len(records)):
        if i not in records or set(records[i]) != set(ATOM_NAMES):
            raise ValueError(f"{path}: residue {i} is missing atoms")
        atoms[i] = [records[i][name] for name in ATOM_NAMES]
    return atoms


FRAMES_HEADER = "# reqflow-frames v1"


def write_frames(path, trans: np.ndarray, rot: np.ndarray) -> None:
    """One frame per line: ``x y z s qx qy qz`` (Å, scalar-first unit quaternion)."""
    trans = np.asarray(trans, dtype=float).reshape(-1, 3)
    rot = np.asarray(rot, dtype=float).reshape(-1, 4)
    if len(trans) != len(rot):
        raise ValueError(f"{len(trans)} translations but {len(rot)} rotations")
    lines = [FRAMES_HEADER, "# x y z s qx qy qz"]
    lines += [" ".join(f"{v:.17g}" for v in row) for row in np.hstack([trans, rot])]
    Path(path).write_text("\n".join(lines) + "\n")


def read_frames(path) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`write_frames`; quaternions are renormalized on read."""
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 7:
            raise ValueError(f"{path}:{lineno}: expected 7 numbers, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise ValueError(f"{path}:{lineno}: non-numeric field in {line!r}") from None
    if not rows:
        raise ValueError(f"{path}: no frames")
    arr = np.array(rows)
    q = arr[:, 3:]
    norms = np.linalg.norm(q, axis=1, keepdims=True)
    if np.any(norms == 0) or not np.all(np.isfinite(arr)):
        raise ValueError(f"{path}: zero or non-finite quaternion")
    return arr[:, :3], q / norms
