"""``reqflow`` command-line runner.

Subcommands: ``bench-roundtrip``, ``train``, ``sample``, ``rectify``, ``verify``.

Configuration is resolved in three layers: built-in defaults, then an INI
file (``--config``), then the flags ``--seed``, ``--steps``, ``--gamma`` and
``--out``. Unknown sections or keys are rejected. The resolved configuration
is validated completely before the output directory is created, then written
to ``<out>/config.json`` before any work starts.

Output directory: ``--out``, else ``[run] out``, else
``$REQFLOW_OUT/<command>``, else ``./reqflow-runs/<command>``. Every data
artifact is a pure function of the config and seed; the wall-clock timestamp
appears only in ``manifest.json``.

Exit status: 0 success (and, for ``bench-roundtrip``/``verify``, all checks
passed), 1 a check failed or training diverged, 2 invalid configuration or
inputs.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .bench import (
    TRANSPORT_HEADER,
    VerifyConfig,
    probe_small_angle_nan,
    run_roundtrip_bench,
    run_verification,
    write_json,
)
from .frames import FrameTransform, read_frames, realize_chain, write_chain, write_frames
from .model import (
    PAIRS_STREAM,
    Architecture,
    ArchitectureError,
    CheckpointError,
    NonFiniteLossError,
    TrainConfig,
    as_endpoint_model,
    filter_pairs,
    generate_pairs,
    load_checkpoint,
    rectify,
    sample_noise,
    save_checkpoint,
    stack_pairs,
    train_qflow,
)
from .so3_stats import IgsoConfig, make_rng
from .solvers import SolverConfig, integrate_batch
from .toy import four_mode_dataset, four_mode_sampler, nearest_mode_error

log = logging.getLogger("reqflow")

ENV_OUT = "REQFLOW_OUT"
DEFAULT_ROOT = "reqflow-runs"
EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

DATA_STREAM = 1 << 42
SAMPLE_STREAM = 1 << 43
VERIFY_STREAM = 1 << 44
BENCH_STREAM = 1 << 45
# rectification draws its mini-batches from a different seed than training
RECTIFY_SEED_OFFSET = 1


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    states = configparser.ConfigParser.BOOLEAN_STATES
    if text.lower() not in states:
        raise ValueError(f"not a boolean: {text!r}")
    return states[text.lower()]


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(",") if p.strip())


def _opt_int(text: str) -> int | None:
    return None if text.strip().lower() in ("", "none") else int(text)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.split(",") if p.strip())


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple]] = {
    "run": {"seed": (int, 0), "out": (str, "")},
    "solver": {
        "steps": (int, 500),
        "gamma": (float, 10.0),
        "scheduler": (_bool, True),
        "rotation_mode": (str, "scheduled"),
    },
    "igso": {"epsilon": (float, 1.5), "series_terms": (int, 2000), "grid_size": (int, 8192)},
    "train": {
        "dataset": (str, "toy"),
        "toy_size": (int, 1024),
        "trans_jitter": (float, 0.5),
        "rot_jitter": (float, 0.25),
        "epochs": (int, 1000),
        "batch_size": (int, 128),
        "learning_rate": (float, 1e-4),
        "optimizer": (str, "sgd"),
        "momentum": (float, 0.9),
        "hidden": (_ints, (64, 64)),
        "t_min": (float, 0.01),
        "rotation_weight": (float, 1.0),
        "aux_weight": (float, 0.0),
        "aux_time_threshold": (float, 0.5),
        "lr_drop_epoch": (_opt_int, None),
        "lr_drop_factor": (float, 0.1),
    },
    "rectify": {
        "pairs": (int, 1000),
        "epochs": (int, 1000),
        "filter": (str, "none"),
        "filter_threshold": (float, 1.5),
        "lr_drop_epoch": (_opt_int, None),
    },
    "sample": {"count": (int, 10), "chain": (_bool, False)},
    "bench": {"trials": (int, 100), "offsets": (_floats, tuple(10.0 ** -k for k in range(1, 8)))},
    "verify": {
        "samples": (int, 1000),
        "pair_count": (int, 4000),
        "steps": (int, 200),
        "ks_threshold": (float, 0.1),
        "se_factor": (float, 2.0),
        "limit_gamma": (float, 0.01),
    },
}


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults, then the INI file, then ``{"section.key": value}`` overrides."""
    cfg = {sec: {k: d for k, (_, d) in keys.items()} for sec, keys in SCHEMA.items()}
    if path is not None:
        parser = configparser.ConfigParser()
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for sec in parser.sections():
            if sec not in SCHEMA:
                raise ConfigError(f"{path}: unknown section [{sec}]")
            for key, raw in parser.items(sec):
                if key not in SCHEMA[sec]:
                    raise ConfigError(f"{path}: unknown key {sec}.{key}")
                conv = SCHEMA[sec][key][0]
                try:
                    cfg[sec][key] = conv(raw)
                except ValueError as exc:
                    raise ConfigError(f"{path}: bad value for {sec}.{key}: {exc}") from None
    for dotted, value in (overrides or {}).items():
        sec, key = dotted.split(".")
        cfg[sec][key] = value
    return cfg


def _build(kind: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid {kind} settings: {exc}") from None


def solver_config(cfg: dict) -> SolverConfig:
    s = cfg["solver"]
    return _build("solver", SolverConfig, steps=s["steps"], gamma=s["gamma"],
                  scheduler_enabled=s["scheduler"], rotation_mode=s["rotation_mode"])


def igso_config(cfg: dict) -> IgsoConfig:
    return _build("igso", IgsoConfig, **cfg["igso"])


def train_config(cfg: dict, rectifying: bool = False) -> TrainConfig:
    t = cfg["train"]
    seed = cfg["run"]["seed"] + (RECTIFY_SEED_OFFSET if rectifying else 0)
    return _build(
        "train", TrainConfig,
        epochs=cfg["rectify"]["epochs"] if rectifying else t["epochs"],
        batch_size=t["batch_size"], learning_rate=t["learning_rate"], optimizer=t["optimizer"],
        momentum=t["momentum"], hidden=t["hidden"], t_min=t["t_min"], rotation_weight=t["rotation_weight"],
        aux_weight=t["aux_weight"], aux_time_threshold=t["aux_time_threshold"], seed=seed,
        lr_drop_epoch=cfg["rectify"]["lr_drop_epoch"] if rectifying else t["lr_drop_epoch"],
        lr_drop_factor=t["lr_drop_factor"],
    )


def verify_config(cfg: dict) -> VerifyConfig:
    v = cfg["verify"]
    vc = _build("verify", VerifyConfig, samples=v["samples"], pair_count=v["pair_count"], steps=v["steps"],
                gamma=cfg["solver"]["gamma"], limit_gamma=v["limit_gamma"], ks_threshold=v["ks_threshold"],
                se_factor=v["se_factor"])
    _build("verify", SolverConfig, steps=vc.steps, scheduler_enabled=False)
    return vc


def _is_toy(cfg: dict) -> bool:
    return cfg["train"]["dataset"] == "toy"


def load_dataset(cfg: dict) -> tuple[np.ndarray, np.ndarray]:
    t = cfg["train"]
    if _is_toy(cfg):
        return four_mode_dataset(t["toy_size"], make_rng(cfg["run"]["seed"], DATA_STREAM),
                                 t["trans_jitter"], t["rot_jitter"])
    path = Path(t["dataset"])
    if not path.is_file():
        raise ConfigError(f"dataset file not found: {path}")
    try:
        return read_frames(path)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def target_sampler(cfg: dict, data=None):
    """Draws from the toy distribution, or resamples the dataset file with replacement."""
    if _is_toy(cfg):
        return four_mode_sampler(cfg["train"]["trans_jitter"], cfg["train"]["rot_jitter"])
    x, q = data if data is not None else load_dataset(cfg)

    def sample(n, rng):
        idx = rng.integers(0, len(x), size=n)
        return x[idx], q[idx]

    return sample


def _near_mode(threshold: float):
    def keep(frame: FrameTransform) -> bool:
        dx, dq = nearest_mode_error(frame.trans, frame.rot)
        return bool(dx[0] + dq[0] < threshold)

    return keep


def _finite(frame: FrameTransform) -> bool:
    return bool(np.all(np.isfinite(frame.trans)) and np.all(np.isfinite(frame.rot)))


FILTERS = {
    "none": lambda cfg: (lambda frame: True),
    "finite": lambda cfg: _finite,
    "near_mode": lambda cfg: _near_mode(cfg["rectify"]["filter_threshold"]),
}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_trace(path: Path, start_epoch: int, trace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for i, loss in enumerate(trace):
            w.writerow([start_epoch + i, repr(loss)])


class Run:
    """Output directory bookkeeping for one command invocation."""

    def __init__(self, command: str, cfg: dict, argv: list[str], extra: dict | None = None):
        self.command = command
        self.cfg = cfg
        self.argv = argv
        self.extra = extra or {}
        root = os.environ.get(ENV_OUT) or DEFAULT_ROOT
        self.out = Path(cfg["run"]["out"] or Path(root) / command)
        self.outputs: list[str] = []

    def start(self) -> None:
        try:
            self.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory {self.out}: {exc.strerror}") from None
        echo = {sec: dict(vals) for sec, vals in self.cfg.items()}
        echo["run"].pop("out")
        self.write_json("config.json", echo)

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out / name

    def write_json(self, name: str, doc) -> None:
        write_json(self.path(name), _jsonable(doc))

    def finish(self, status: int) -> None:
        manifest = {
            "command": self.command,
            "argv": self.argv,
            "created_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "version": __version__,
            "seed": self.cfg["run"]["seed"],
            "exit_status": status,
            "outputs": {name: _sha256(self.out / name) for name in sorted(set(self.outputs))},
            **self.extra,
        }
        write_json(self.out / "manifest.json", _jsonable(manifest))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# ---------------------------------------------------------------- commands


def cmd_bench_roundtrip(cfg: dict, run: Run, args) -> int:
    b = cfg["bench"]
    if b["trials"] < 1 or not b["offsets"]:
        raise ConfigError("bench needs trials >= 1 and at least one offset")
    run.start()
    report = run_roundtrip_bench(b["offsets"], b["trials"], make_rng(cfg["run"]["seed"], BENCH_STREAM))
    report.write_csv(run.path("roundtrip.csv"))
    summary = report.summary()
    run.write_json("summary.json", summary)
    print(f"quat_beats_matrix={summary['quat_beats_matrix']} min_gap={summary['min_gap']:.3g}")
    return EXIT_OK if summary["quat_beats_matrix"] else EXIT_FAIL


def _resume_state(cfg: dict, path):
    arch = Architecture(hidden=cfg["train"]["hidden"])
    ckpt = _load(path, arch)
    return ckpt.params, ckpt.optimizer, int(ckpt.metadata.get("epochs_done", 0))


def _load(path, arch=None):
    try:
        return load_checkpoint(path, arch)
    except (CheckpointError, ArchitectureError) as exc:
        raise ConfigError(str(exc)) from None


def cmd_train(cfg: dict, run: Run, args) -> int:
    tcfg = train_config(cfg)
    igso = igso_config(cfg)
    data = load_dataset(cfg)
    params, optimizer, start = None, None, 0
    if args.checkpoint:
        params, optimizer, start = _resume_state(cfg, args.checkpoint[0])
        run.extra["resumed_from_epoch"] = start
    run.start()
    try:
        result = train_qflow(data, tcfg, params, igso=igso, start_epoch=start, optimizer=optimizer)
    except NonFiniteLossError as exc:
        log.error("training aborted: %s", exc)
        return EXIT_FAIL
    meta = {"kind": "qflow", "epochs_done": result.epochs_done, "seed": tcfg.seed}
    save_checkpoint(run.path("checkpoint.json"), result.params, meta, result.optimizer)
    _write_trace(run.path("loss_trace.csv"), start, result.loss_trace)
    if result.loss_trace:
        print(f"epochs {start}..{result.epochs_done - 1}: loss {result.loss_trace[0]:.4g} -> {result.loss_trace[-1]:.4g}")
    return EXIT_OK


def _need_checkpoints(args, count: int, names: str) -> list[str]:
    given = args.checkpoint or []
    if len(given) < count:
        raise ConfigError(f"missing --checkpoint: expected {names}, got {len(given)}")
    missing = [p for p in given[:count] if not Path(p).is_file()]
    if missing:
        raise ConfigError("checkpoint not found: " + ", ".join(missing))
    return given[:count]


def cmd_sample(cfg: dict, run: Run, args) -> int:
    (path,) = _need_checkpoints(args, 1, "one model checkpoint")
    solver = solver_config(cfg)
    igso = igso_config(cfg)
    count = cfg["sample"]["count"]
    if count < 1:
        raise ConfigError(f"sample.count must be >= 1, got {count}")
    params = _load(path).params
    run.extra["noise_stream"] = SAMPLE_STREAM
    run.start()
    x0, q0 = sample_noise(count, make_rng(cfg["run"]["seed"], SAMPLE_STREAM), igso)
    x1, q1 = integrate_batch(as_endpoint_model(params), x0, q0, solver)
    write_frames(run.path("samples.txt"), x1, q1)
    if cfg["sample"]["chain"]:
        chain = realize_chain([FrameTransform(a, b) for a, b in zip(x1, q1)])
        write_chain(run.path("chain.txt"), chain)
    print(f"wrote {count} frames to {run.out / 'samples.txt'}")
    return EXIT_OK


def cmd_rectify(cfg: dict, run: Run, args) -> int:
    (path,) = _need_checkpoints(args, 1, "the trained model checkpoint")
    solver = solver_config(cfg)
    igso = igso_config(cfg)
    tcfg = train_config(cfg, rectifying=True)
    r = cfg["rectify"]
    if r["filter"] not in FILTERS:
        raise ConfigError(f"unknown filter {r['filter']!r}; choose from {sorted(FILTERS)}")
    if r["pairs"] < 1:
        raise ConfigError(f"rectify.pairs must be >= 1, got {r['pairs']}")
    params = _load(path, Architecture(hidden=cfg["train"]["hidden"])).params
    run.extra["pairs_stream"] = PAIRS_STREAM
    run.start()
    pairs = generate_pairs(params, r["pairs"], solver, make_rng(cfg["run"]["seed"], PAIRS_STREAM), igso=igso)
    kept = filter_pairs(pairs, FILTERS[r["filter"]](cfg))
    stacked = np.concatenate([a.reshape(len(a), -1) for a in stack_pairs(kept)], axis=1) if kept else np.zeros((0, 14))
    run.write_json("pairs_manifest.json", {
        "generated": len(pairs),
        "kept": len(kept),
        "dropped": len(pairs) - len(kept),
        "filter": r["filter"],
        "seed": cfg["run"]["seed"],
        "stream": PAIRS_STREAM,
        "sha256": hashlib.sha256(np.ascontiguousarray(stacked).tobytes()).hexdigest(),
    })
    if not kept:
        log.error("filter %r kept 0 of %d pairs; nothing to rectify on", r["filter"], len(pairs))
        return EXIT_FAIL
    try:
        result = rectify(params, kept, tcfg)
    except NonFiniteLossError as exc:
        log.error("rectification aborted: %s", exc)
        return EXIT_FAIL
    meta = {"kind": "reqflow", "epochs_done": result.epochs_done, "seed": tcfg.seed, "pairs": len(kept)}
    save_checkpoint(run.path("checkpoint.json"), result.params, meta, result.optimizer)
    _write_trace(run.path("loss_trace.csv"), 0, result.loss_trace)
    print(f"rectified on {len(kept)} of {len(pairs)} pairs")
    return EXIT_OK


def cmd_verify(cfg: dict, run: Run, args) -> int:
    paths = _need_checkpoints(args, 2, "the trained checkpoint then the rectified checkpoint")
    vcfg = verify_config(cfg)
    igso = igso_config(cfg)
    before, after = _load(paths[0]).params, _load(paths[1]).params
    sampler = target_sampler(cfg)
    run.extra["checkpoints"] = paths
    run.extra["verify_stream"] = VERIFY_STREAM
    run.start()
    verdict = run_verification(before, after, sampler, make_rng(cfg["run"]["seed"], VERIFY_STREAM), vcfg,
                               metric=nearest_mode_error if _is_toy(cfg) else None, igso=igso)
    run.write_json("verdict.json", verdict)
    with open(run.path("marginals.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        records = verdict["checks"]["marginals"]["records"]
        w.writerow(list(records[0]))
        for rec in records:
            w.writerow([repr(v) for v in rec.values()])
    with open(run.path("transport.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["check"] + TRANSPORT_HEADER)
        for name, check in verdict["checks"].items():
            if "before" in check and isinstance(check["before"], dict):
                for comp in check["before"]:
                    b, a = check["before"][comp], check["after"][comp]
                    w.writerow([name, check["cost"], comp, repr(b["mean"]), repr(b["se"]), repr(a["mean"]),
                                repr(a["se"]), check["n_before"], check["n_after"]])
    with open(run.path("nan_probe.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["phi", "dtype", "exp_finite", "additive_finite"])
        for row in probe_small_angle_nan():
            w.writerow([repr(row.phi), row.dtype, int(row.exp_finite), int(row.additive_finite)])
    for name, check in verdict["checks"].items():
        print(f"{'PASS' if check['pass'] else 'FAIL'} {name}")
    return EXIT_OK if verdict["pass"] else EXIT_FAIL


COMMANDS = {
    "bench-roundtrip": cmd_bench_roundtrip,
    "train": cmd_train,
    "sample": cmd_sample,
    "rectify": cmd_rectify,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [run], [solver], [igso], [train], ... sections")
    common.add_argument("--seed", type=int, help="overrides run.seed")
    common.add_argument("--steps", type=int, help="overrides solver.steps (Euler steps L)")
    common.add_argument("--gamma", type=float, help="overrides solver.gamma")
    common.add_argument("--out", help=f"output directory (default ${ENV_OUT}/<command>)")
    common.add_argument("--checkpoint", action="append",
                        help="checkpoint path; repeat for verify (trained, then rectified)")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="reqflow", description="Quaternion flow matching and rectification.")
    parser.add_argument("--version", action="version", version=f"reqflow {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "bench-roundtrip": "axis-angle round trips through quaternions vs matrices near pi",
        "train": "train the flow model (resume with --checkpoint)",
        "sample": "integrate noise to frames with a checkpoint",
        "rectify": "generate noise/sample pairs and retrain on them",
        "verify": "marginal, transport-cost and small-angle checks on two checkpoints",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: v for k, v in {"run.seed": args.seed, "solver.steps": args.steps,
                                   "solver.gamma": args.gamma, "run.out": args.out}.items() if v is not None}
    try:
        cfg = load_config(args.config, overrides)
        # solver/igso/train sections are validated up front for every command
        solver_config(cfg)
        igso_config(cfg)
        train_config(cfg)
        run = Run(args.command, cfg, argv)
        status = COMMANDS[args.command](cfg, run, args)
    except ConfigError as exc:
        print(f"reqflow {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"reqflow {args.command}: I/O error on {exc.filename}: {exc.strerror}", file=sys.stderr)
        return EXIT_FAIL
    run.finish(status)
    return status


if __name__ == "__main__":
    sys.exit(main())
