"""Per-frame endpoint model, QFlow/ReQFlow training, and checkpoints.

The model maps ``(x_t, q_t, t)`` to a predicted endpoint ``(x1, q1)``. Its
output head is a raw 4-vector normalized to a unit quaternion; a zero raw
vector maps to the identity. Gradients are computed by a hand-written
reverse pass through the velocity conversion, the hemisphere-aligned
quaternion log, the Hamilton product and the normalization, and are checked
against central finite differences in the test suite.

Checkpoint format (JSON, one object)::

    {
      "format": "reqflow-checkpoint",
      "version": 1,
      "architecture": {"input_width": 8, "hidden": [64, 64], "output_width": 7,
                       "activation": "tanh"},
      "params": [...],            # flat float64, layer by layer: W (row-major), b
      "optimizer": {...} | null,  # optimizer name, step, flat state arrays
      "metadata": {...}           # seed, epochs, loss_trace, free-form fields
    }

Floats are written with ``repr`` precision so a load reproduces the
parameters bit for bit.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .frames import FrameTransform, IdealResidue, aux_loss, aux_loss_atom_grad, place_atoms, rotate_vector_vjp
from .interpolants import T_FLOOR, T_MIN, angular_velocity, lerp_translation, slerp_exp
from .quat import IDENTITY, canonical, hamilton_product, log_map, log_map_vjp, relative_rotation
from .so3_stats import IgsoConfig, make_rng, sample_gaussian_r3, sample_igso3
from .solvers import SolverConfig, integrate_batch

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "reqflow-checkpoint"
CHECKPOINT_VERSION = 1
INPUT_WIDTH = 8
OUTPUT_WIDTH = 7
ACTIVATIONS = ("tanh",)
OPTIMIZERS = ("sgd", "momentum", "adam")

# stream ids reserved for parameter initialization and noise draws
INIT_STREAM = 1 << 40
PAIRS_STREAM = 1 << 41


class ArchitectureError(ValueError):
    pass


class NonFiniteLossError(FloatingPointError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class Architecture:
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "tanh"
    input_width: int = INPUT_WIDTH
    output_width: int = OUTPUT_WIDTH

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_width != INPUT_WIDTH or self.output_width != OUTPUT_WIDTH:
            raise ArchitectureError(
                f"model must map {INPUT_WIDTH} inputs to {OUTPUT_WIDTH} outputs, "
                f"got {self.input_width} -> {self.output_width}"
            )
        if any(h < 1 for h in self.hidden):
            raise ArchitectureError(f"hidden widths must be positive: {self.hidden}")
        if self.activation not in ACTIVATIONS:
            raise ArchitectureError(f"unknown activation {self.activation!r}")

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.input_width, *self.hidden, self.output_width)

    @property
    def shapes(self) -> list[tuple[tuple[int, int], tuple[int]]]:
        w = self.widths
        return [((w[i], w[i + 1]), (w[i + 1],)) for i in range(len(w) - 1)]

    @property
    def size(self) -> int:
        return sum(a * b + b for (a, b), _ in self.shapes)

    def to_dict(self) -> dict:
        return {
            "input_width": self.input_width,
            "hidden": list(self.hidden),
            "output_width": self.output_width,
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        try:
            return cls(
                hidden=tuple(d["hidden"]),
                activation=d["activation"],
                input_width=int(d["input_width"]),
                output_width=int(d["output_width"]),
            )
        except KeyError as exc:
            raise ArchitectureError(f"architecture descriptor missing {exc}") from None


@dataclass
class ModelParams:
    arch: Architecture
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        shapes = self.arch.shapes
        if len(self.weights) != len(shapes) or len(self.biases) != len(shapes):
            raise ArchitectureError("layer count does not match architecture")
        for (ws, bs), w, b in zip(shapes, self.weights, self.biases):
            if w.shape != ws or b.shape != bs:
                raise ArchitectureError(f"layer shape {w.shape}/{b.shape} != {ws}/{bs}")

    def flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts += [w.ravel(), b.ravel()]
        return np.concatenate(parts)

    @classmethod
    def from_flat(cls, arch: Architecture, flat: np.ndarray) -> "ModelParams":
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (arch.size,):
            raise ArchitectureError(f"expected {arch.size} parameters, got {flat.size}")
        weights, biases, i = [], [], 0
        for (ws, bs) in arch.shapes:
            n = ws[0] * ws[1]
            weights.append(flat[i:i + n].reshape(ws).copy())
            i += n
            biases.append(flat[i:i + bs[0]].copy())
            i += bs[0]
        return cls(arch, weights, biases)

    @classmethod
    def zeros(cls, arch: Architecture) -> "ModelParams":
        return cls.from_flat(arch, np.zeros(arch.size))

    def copy(self) -> "ModelParams":
        return ModelParams.from_flat(self.arch, self.flat())


def init_params(arch: Architecture, rng: np.random.Generator) -> ModelParams:
    """Gaussian weights scaled by ``1/sqrt(fan_in)``, zero biases."""
    weights = [rng.standard_normal(ws) / np.sqrt(ws[0]) for ws, _ in arch.shapes]
    biases = [np.zeros(bs) for _, bs in arch.shapes]
    return ModelParams(arch, weights, biases)


# ---------------------------------------------------------------- forward


def _features(x_t, q_t, t) -> np.ndarray:
    x_t = np.atleast_2d(x_t)
    q_t = canonical(np.atleast_2d(q_t))
    t = np.broadcast_to(np.asarray(t, dtype=float).reshape(-1, 1), (len(x_t), 1))
    return np.concatenate([x_t, q_t, t], axis=1)


def _mlp(params: ModelParams, z: np.ndarray):
    acts = [z]
    h = z
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < last:
            h = np.tanh(h)
        acts.append(h)
    return h, acts


def _head(out: np.ndarray):
    raw = out[:, 3:]
    norm = np.linalg.norm(raw, axis=1, keepdims=True)
    zero = norm == 0
    q = np.where(zero, IDENTITY, raw / np.where(zero, 1.0, norm))
    return out[:, :3], q, norm


def model_forward(params: ModelParams, x_t, q_t, t):
    """Predict the ``t = 1`` endpoint. Accepts one frame or a batch."""
    single = np.ndim(x_t) == 1
    z = _features(x_t, q_t, t)
    if z.shape[1] != params.arch.input_width:
        raise ArchitectureError(f"input width {z.shape[1]} != {params.arch.input_width}")
    out, _ = _mlp(params, z)
    x1, q1, _ = _head(out)
    return (x1[0], q1[0]) if single else (x1, q1)


def as_endpoint_model(params: ModelParams) -> Callable:
    def predict(x_t, q_t, t):
        return model_forward(params, x_t, q_t, t)

    return predict


# ---------------------------------------------------------------- loss


@dataclass
class Batch:
    """Interpolant samples with their targets, stacked along axis 0.

    ``chains`` optionally lists index arrays; each selects the frames of one
    backbone chain (in residue order) for the auxiliary loss.
    """

    x_t: np.ndarray
    q_t: np.ndarray
    t: np.ndarray
    v: np.ndarray
    omega: np.ndarray
    x1: np.ndarray
    q1: np.ndarray
    chains: list[np.ndarray] | None = None

    def __len__(self) -> int:
        return len(self.t)

    @classmethod
    def from_samples(cls, samples, chains=None) -> "Batch":
        """Build from ``(InterpolantSample, FrameTransform target)`` pairs."""
        return cls(
            x_t=np.stack([s.x_t for s, _ in samples]),
            q_t=np.stack([s.q_t for s, _ in samples]),
            t=np.array([s.t for s, _ in samples], dtype=float),
            v=np.stack([s.v_target for s, _ in samples]),
            omega=np.stack([s.omega_target for s, _ in samples]),
            x1=np.stack([f.trans for _, f in samples]),
            q1=np.stack([f.rot for _, f in samples]),
            chains=chains,
        )

    def with_target_rot(self, q1: np.ndarray) -> "Batch":
        return replace(self, q1=q1)


@dataclass(frozen=True)
class LossConfig:
    rotation_weight: float = 1.0
    aux_weight: float = 0.0
    aux_time_threshold: float = 0.5
    t_floor: float = T_FLOOR


def build_batch(x0, q0, x1, q1, t, chains=None) -> Batch:
    x_t, v = lerp_translation(x0, x1, t)
    return Batch(
        x_t=x_t,
        q_t=slerp_exp(q0, q1, t),
        t=np.asarray(t, dtype=float),
        v=v,
        omega=angular_velocity(q0, q1),
        x1=np.asarray(x1, dtype=float),
        q1=np.asarray(q1, dtype=float),
        chains=chains,
    )


def _loss_terms(params: ModelParams, batch: Batch, cfg: LossConfig, need_grad: bool):
    if np.any(1.0 - batch.t < cfg.t_floor):
        raise ValueError(f"batch has t within {cfg.t_floor} of 1")
    z = _features(batch.x_t, batch.q_t, batch.t)
    out, acts = _mlp(params, z)
    x1p, q1p, raw_norm = _head(out)
    inv = 1.0 / (1.0 - batch.t)[:, None]

    v_pred = (x1p - batch.x_t) * inv
    rel = relative_rotation(batch.q_t, q1p)
    log_rel = log_map(rel)
    omega_pred = log_rel * inv
    dv = batch.v - v_pred
    dw = batch.omega - omega_pred
    per_sample = np.sum(dv * dv, axis=1) + cfg.rotation_weight * np.sum(dw * dw, axis=1)
    bad = np.flatnonzero(~np.isfinite(per_sample))
    if bad.size:
        i = int(bad[0])
        raise NonFiniteLossError(
            f"non-finite loss at sample {i} (t = {batch.t[i]}, x_t = {batch.x_t[i]}, q_t = {batch.q_t[i]})"
        )
    n = len(batch)
    loss = float(per_sample.mean())

    g_x1 = -2.0 * dv * inv / n if need_grad else None
    g_q1 = None
    if need_grad:
        g_log = -2.0 * cfg.rotation_weight * dw * inv / n
        g_rel = log_map_vjp(rel, g_log)
        # rel = conj(q_t) ⊗ (±q1p); the sign is locally constant
        sign = np.where(np.sum(batch.q_t * q1p, axis=1, keepdims=True) < 0, -1.0, 1.0)
        g_q1 = sign * hamilton_product(batch.q_t, g_rel)

    if cfg.aux_weight > 0 and batch.chains:
        ideal = IdealResidue()
        scale = cfg.aux_weight / len(batch.chains)
        for idx in batch.chains:
            if batch.t[idx[0]] >= cfg.aux_time_threshold:
                continue
            pred_atoms = place_atoms(x1p[idx], q1p[idx], ideal)
            true_atoms = place_atoms(batch.x1[idx], batch.q1[idx], ideal)
            loss += scale * aux_loss(pred_atoms, true_atoms)[2]
            if need_grad:
                g_atoms = scale * aux_loss_atom_grad(pred_atoms, true_atoms)
                g_x1[idx] += g_atoms.sum(axis=1)
                qb = np.broadcast_to(q1p[idx][:, None, :], (len(idx), 4, 4))
                vb = np.broadcast_to(ideal.coords, (len(idx), 4, 3))
                g_q1[idx] += rotate_vector_vjp(qb, vb, g_atoms).sum(axis=1)

    if not np.isfinite(loss):
        raise NonFiniteLossError(f"non-finite total loss {loss}")
    if not need_grad:
        return loss, None

    # through q1p = raw / |raw|
    nz = raw_norm > 0
    proj = g_q1 - q1p * np.sum(q1p * g_q1, axis=1, keepdims=True)
    g_raw = np.where(nz, proj / np.where(nz, raw_norm, 1.0), 0.0)
    g_out = np.concatenate([g_x1, g_raw], axis=1)

    g_w, g_b = [], []
    g = g_out
    for i in range(len(params.weights) - 1, -1, -1):
        g_w.append(acts[i].T @ g)
        g_b.append(g.sum(axis=0))
        if i > 0:
            g = (g @ params.weights[i].T) * (1.0 - acts[i] ** 2)
    grad = ModelParams(params.arch, g_w[::-1], g_b[::-1])
    return loss, grad


def flow_loss(params: ModelParams, batch: Batch, cfg: LossConfig = LossConfig()) -> float:
    """Mean of ``|v - v_θ|² + w |ω - ω_θ|²`` plus the gated auxiliary term."""
    return _loss_terms(params, batch, cfg, need_grad=False)[0]


def loss_and_gradient(params: ModelParams, batch: Batch, cfg: LossConfig = LossConfig()):
    return _loss_terms(params, batch, cfg, need_grad=True)


def loss_gradient(params: ModelParams, batch: Batch, cfg: LossConfig = LossConfig()) -> ModelParams:
    return _loss_terms(params, batch, cfg, need_grad=True)[1]


# ---------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 128
    learning_rate: float = 1e-4
    aux_weight: float = 0.0
    aux_time_threshold: float = 0.5
    t_min: float = T_MIN
    seed: int = 0
    optimizer: str = "sgd"
    momentum: float = 0.9
    rotation_weight: float = 1.0
    hidden: tuple[int, ...] = (64, 64)
    # step decay: from this absolute epoch on, the rate is multiplied by lr_drop_factor
    lr_drop_epoch: int | None = None
    lr_drop_factor: float = 0.1

    def __post_init__(self):
        if self.lr_drop_epoch is not None and self.lr_drop_epoch < 0:
            raise ValueError(f"lr_drop_epoch must be >= 0, got {self.lr_drop_epoch}")
        if not 0.0 < self.lr_drop_factor <= 1.0:
            raise ValueError(f"lr_drop_factor must lie in (0, 1], got {self.lr_drop_factor}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 <= self.aux_time_threshold <= 1.0:
            raise ValueError(f"aux_time_threshold must lie in [0, 1], got {self.aux_time_threshold}")
        if not 0.0 <= self.t_min < 0.5:
            raise ValueError(f"t_min must lie in [0, 0.5), got {self.t_min}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")

    def rate_at(self, epoch: int) -> float:
        if self.lr_drop_epoch is not None and epoch >= self.lr_drop_epoch:
            return self.learning_rate * self.lr_drop_factor
        return self.learning_rate

    @property
    def loss_config(self) -> LossConfig:
        return LossConfig(
            rotation_weight=self.rotation_weight,
            aux_weight=self.aux_weight,
            aux_time_threshold=self.aux_time_threshold,
        )


@dataclass
class OptimizerState:
    name: str
    step: int = 0
    slots: list[np.ndarray] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"name": self.name, "step": self.step, "slots": [s.tolist() for s in self.slots]}

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizerState":
        return cls(d["name"], int(d["step"]), [np.array(s, dtype=float) for s in d["slots"]])


def _apply_update(flat: np.ndarray, grad: np.ndarray, cfg: TrainConfig, state: OptimizerState,
                  lr: float) -> np.ndarray:
    state.step += 1
    if cfg.optimizer == "sgd":
        return flat - lr * grad
    if cfg.optimizer == "momentum":
        if not state.slots:
            state.slots = [np.zeros_like(flat)]
        state.slots[0] = cfg.momentum * state.slots[0] + grad
        return flat - lr * state.slots[0]
    # adam, default betas
    b1, b2, eps = 0.9, 0.999, 1e-8
    if not state.slots:
        state.slots = [np.zeros_like(flat), np.zeros_like(flat)]
    m, v = state.slots
    m[:] = b1 * m + (1 - b1) * grad
    v[:] = b2 * v + (1 - b2) * grad * grad
    m_hat = m / (1 - b1**state.step)
    v_hat = v / (1 - b2**state.step)
    return flat - lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class TrainResult:
    params: ModelParams
    loss_trace: list[float]
    optimizer: OptimizerState
    epochs_done: int


def _stack_frames(dataset) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(dataset, tuple):
        x, q = dataset
        return np.asarray(x, dtype=float), np.asarray(q, dtype=float)
    return np.stack([f.trans for f in dataset]), np.stack([f.rot for f in dataset])


def _fit(params, n_items, make_batch, cfg: TrainConfig, start_epoch, optimizer, label):
    flat = params.flat()
    state = optimizer or OptimizerState(cfg.optimizer)
    if state.name != cfg.optimizer:
        raise ValueError(f"optimizer state is {state.name!r} but config asks for {cfg.optimizer!r}")
    trace = []
    loss_cfg = cfg.loss_config
    for epoch in range(start_epoch, start_epoch + cfg.epochs):
        rng = make_rng(cfg.seed, epoch)
        lr = cfg.rate_at(epoch)
        order = rng.permutation(n_items)
        losses = []
        for b, start in enumerate(range(0, n_items, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            t = rng.uniform(cfg.t_min, 1.0 - cfg.t_min, size=len(idx))
            batch = make_batch(idx, t, rng)
            try:
                loss, grad = loss_and_gradient(ModelParams.from_flat(params.arch, flat), batch, loss_cfg)
            except NonFiniteLossError as exc:
                raise NonFiniteLossError(f"{label}: epoch {epoch}, batch {b}: {exc}") from None
            flat = _apply_update(flat, grad.flat(), cfg, state, lr)
            if not np.all(np.isfinite(flat)):
                raise NonFiniteLossError(f"{label}: non-finite parameters after epoch {epoch}, batch {b}")
            losses.append(loss)
        trace.append(float(np.mean(losses)))
    return TrainResult(ModelParams.from_flat(params.arch, flat), trace, state, start_epoch + cfg.epochs)


def train_qflow(
    dataset,
    cfg: TrainConfig,
    params: ModelParams | None = None,
    *,
    igso: IgsoConfig = IgsoConfig(),
    start_epoch: int = 0,
    optimizer: OptimizerState | None = None,
) -> TrainResult:
    """Flow matching with fresh noise per mini-batch.

    Epoch ``e`` draws all of its randomness from stream ``(cfg.seed, e)``, so
    training for ``a + b`` epochs equals training ``a`` then resuming for
    ``b`` with the returned optimizer state.
    """
    x1_all, q1_all = _stack_frames(dataset)
    if len(x1_all) == 0:
        raise ValueError("dataset is empty")
    if params is None:
        params = init_params(Architecture(hidden=cfg.hidden), make_rng(cfg.seed, INIT_STREAM))

    def make_batch(idx, t, rng):
        x0 = sample_gaussian_r3(rng, len(idx))
        q0 = sample_igso3(igso, rng, len(idx))
        return build_batch(x0, q0, x1_all[idx], q1_all[idx], t)

    return _fit(params, len(x1_all), make_batch, cfg, start_epoch, optimizer, "train_qflow")


@dataclass(frozen=True)
class CouplingPair:
    t0: FrameTransform
    t1: FrameTransform


def stack_pairs(pairs: Sequence[CouplingPair]):
    x0 = np.stack([p.t0.trans for p in pairs])
    q0 = np.stack([p.t0.rot for p in pairs])
    x1 = np.stack([p.t1.trans for p in pairs])
    q1 = np.stack([p.t1.rot for p in pairs])
    return x0, q0, x1, q1


def make_pairs(x0, q0, x1, q1) -> list[CouplingPair]:
    return [CouplingPair(FrameTransform(a, b), FrameTransform(c, d)) for a, b, c, d in zip(x0, q0, x1, q1)]


def sample_noise(count: int, rng: np.random.Generator, igso: IgsoConfig = IgsoConfig()):
    return sample_gaussian_r3(rng, count), sample_igso3(igso, rng, count)


def generate_pairs(
    params: ModelParams,
    count: int,
    solver_cfg: SolverConfig,
    rng: np.random.Generator,
    *,
    igso: IgsoConfig = IgsoConfig(),
    noise: tuple[np.ndarray, np.ndarray] | None = None,
) -> list[CouplingPair]:
    """Draw noise (or use ``noise``), integrate it with the model, keep the exact pairs."""
    if noise is None:
        x0, q0 = sample_noise(count, rng, igso)
    else:
        x0, q0 = (np.asarray(a, dtype=float) for a in noise)
        if len(x0) != count:
            raise ValueError(f"got {len(x0)} noise frames for count {count}")
    x1, q1 = integrate_batch(as_endpoint_model(params), x0, q0, solver_cfg)
    return make_pairs(x0, q0, x1, q1)


def filter_pairs(pairs: Sequence[CouplingPair], predicate: Callable[[FrameTransform], bool]) -> list[CouplingPair]:
    kept = [p for p in pairs if predicate(p.t1)]
    logger.info("filter kept %d of %d pairs (%d dropped)", len(kept), len(pairs), len(pairs) - len(kept))
    return kept


def rectify(
    params: ModelParams,
    pairs: Sequence[CouplingPair],
    cfg: TrainConfig,
    *,
    start_epoch: int = 0,
    optimizer: OptimizerState | None = None,
) -> TrainResult:
    """Continue training from ``params`` on fixed noise-sample couplings."""
    if len(pairs) == 0:
        return TrainResult(params.copy(), [], optimizer or OptimizerState(cfg.optimizer), start_epoch)
    x0, q0, x1, q1 = stack_pairs(pairs)

    def make_batch(idx, t, rng):
        return build_batch(x0[idx], q0[idx], x1[idx], q1[idx], t)

    return _fit(params, len(pairs), make_batch, cfg, start_epoch, optimizer, "rectify")


def train_on_pairs(pairs: Sequence[CouplingPair], cfg: TrainConfig, params: ModelParams | None = None) -> TrainResult:
    """Fixed-coupling training from a fresh initialization (or ``params``)."""
    if params is None:
        params = init_params(Architecture(hidden=cfg.hidden), make_rng(cfg.seed, INIT_STREAM))
    return rectify(params, pairs, cfg)


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(path, params: ModelParams, metadata: dict | None = None,
                    optimizer: OptimizerState | None = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "architecture": params.arch.to_dict(),
        "params": params.flat().tolist(),
        "optimizer": optimizer.to_dict() if optimizer is not None else None,
        "metadata": metadata or {},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


@dataclass
class Checkpoint:
    params: ModelParams
    metadata: dict
    optimizer: OptimizerState | None


def load_checkpoint(path, expected: Architecture | None = None) -> Checkpoint:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not a checkpoint ({exc})") from None
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: unknown format {doc.get('format')!r}")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {doc.get('version')!r}")
    arch = Architecture.from_dict(doc["architecture"])
    if expected is not None and arch != expected:
        raise ArchitectureError(f"{path}: architecture {arch} does not match expected {expected}")
    params = ModelParams.from_flat(arch, np.array(doc["params"], dtype=float))
    opt = OptimizerState.from_dict(doc["optimizer"]) if doc.get("optimizer") else None
    return Checkpoint(params, doc.get("metadata", {}), opt)
