"""Alternating generator/critic optimisation with per-epoch schedules.

Epochs are numbered 1..total_epochs in metrics and checkpoints; schedules are
evaluated at ``t = epoch - 1`` so the first epoch sees the ramp start and the
learning-rate profile matches "constant for the first half, then linear".
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import synthdata
from .losses import LossConfig, discriminator_objective, generator_objective
from .nets import (
    DiscriminatorNet, GeneratorNet, collect_params, generator_forward, init_params,
)
from .rng import derive_seed
from .schedules import ScheduleConfig, gamma_at, lambda_at, lr_at
from .tensor import Tensor, backward

log = logging.getLogger(__name__)

NET_NAMES = ("G", "F", "DX", "DY")
CHECKPOINT_MAGIC = "cyclet-checkpoint 1"


class TrainingDivergedError(FloatingPointError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class AdamConfig:
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainerConfig:
    total_epochs: int = 200
    batch_size: int = 4
    samples_per_domain: int = 256
    seed: int = 0
    checkpoint_every: int = 10
    output_dir: str = "runs/cyclet"
    data_root: str | None = None
    adam: AdamConfig = field(default_factory=AdamConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        self.schedule.total_epochs = self.total_epochs

    def validate(self) -> None:
        if not isinstance(self.total_epochs, int) or self.total_epochs < 1:
            raise ValueError(f"total_epochs must be an integer >= 1, got {self.total_epochs!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.samples_per_domain < 1 or self.samples_per_domain % self.batch_size:
            raise ValueError("samples_per_domain must be a positive multiple of batch_size")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if not (0 <= self.adam.beta1 < 1 and 0 <= self.adam.beta2 < 1 and self.adam.eps > 0):
            raise ValueError("adam betas must lie in [0, 1) and eps > 0")
        self.schedule.total_epochs = self.total_epochs
        self.schedule.validate()
        if self.loss.gan_form not in ("least_squares", "log"):
            raise ValueError(f"unknown gan_form {self.loss.gan_form!r}")
        if self.loss.quality_mode not in ("generated", "literal", "off"):
            raise ValueError(f"unknown quality_mode {self.loss.quality_mode!r}")

    def to_dict(self) -> dict:
        """Fully resolved, JSON-ready view (field names as in the dataclasses)."""
        return {
            "total_epochs": self.total_epochs,
            "batch_size": self.batch_size,
            "samples_per_domain": self.samples_per_domain,
            "seed": self.seed,
            "checkpoint_every": self.checkpoint_every,
            "output_dir": self.output_dir,
            "data_root": self.data_root,
            "adam": dataclasses.asdict(self.adam),
            "schedule": dataclasses.asdict(self.schedule.resolved()),
            "loss": {"gan_form": self.loss.gan_form, "quality_mode": self.loss.quality_mode},
        }

    def config_hash(self) -> str:
        d = self.to_dict()
        for k in ("output_dir", "checkpoint_every"):
            d.pop(k)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


@dataclass
class MetricRecord:
    epoch: int
    lambda_t: float
    gamma_t: float
    lr_t: float
    gan_g: float
    gan_f: float
    loss_dx: float
    loss_dy: float
    cyc_x_pixel: float
    cyc_x_feature: float
    cyc_x_weight: float
    cyc_x_combined: float
    cyc_y_pixel: float
    cyc_y_feature: float
    cyc_y_weight: float
    cyc_y_combined: float
    dx_real_score: float
    dx_fake_score: float
    dy_real_score: float
    dy_fake_score: float


METRIC_COLUMNS = tuple(f.name for f in dataclasses.fields(MetricRecord))
_STEP_COLUMNS = METRIC_COLUMNS[4:]


@dataclass
class TrainerState:
    nets: dict
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)
    epoch: int = 0
    step: int = 0
    seed: int = 0
    config_hash: str = ""
    metrics: list = field(default_factory=list)

    def params(self, *names: str):
        out = []
        for n in names or NET_NAMES:
            out += collect_params(self.nets[n])
        return out

    def named_arrays(self):
        """(name, array) for every parameter and Adam moment, in checkpoint order."""
        for name, t in self.params():
            yield f"param/{name}", t.data
            yield f"adam_m/{name}", self.adam_m[name]
            yield f"adam_v/{name}", self.adam_v[name]


def build_nets(seed: int, image_size: int = synthdata.SIZE) -> dict:
    nets = {"G": GeneratorNet("G", image_size), "F": GeneratorNet("F", image_size),
            "DX": DiscriminatorNet("DX", image_size), "DY": DiscriminatorNet("DY", image_size)}
    for i, name in enumerate(NET_NAMES):
        init_params(nets[name], derive_seed(seed, 0x1E7, i))
    return nets


def new_state(seed: int, image_size: int = synthdata.SIZE) -> TrainerState:
    state = TrainerState(nets=build_nets(seed, image_size), seed=seed)
    for name, t in state.params():
        state.adam_m[name] = np.zeros_like(t.data)
        state.adam_v[name] = np.zeros_like(t.data)
    return state


# ----------------------------------------------------------------------- Adam


def adam_step(params, state: TrainerState, lr: float, adam: AdamConfig | None = None, t: int | None = None) -> None:
    """Bias-corrected Adam update in place, then zero the grads of ``params``."""
    adam = adam or AdamConfig()
    t = state.step if t is None else t
    if t < 1:
        raise ValueError("Adam step count must be >= 1")
    b1, b2 = adam.beta1, adam.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params:
        g = p.grad
        m = state.adam_m[name]
        v = state.adam_v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + adam.eps)
        p.zero_grad()


def _zero_all(state: TrainerState) -> None:
    for _, t in state.params():
        t.zero_grad()


def _finite(name: str, value: float, where: str) -> float:
    if not math.isfinite(value):
        raise TrainingDivergedError(f"non-finite {name} ({value}) at {where}")
    return value


def train_step(state: TrainerState, x: Tensor, y: Tensor, lam: float, gam: float, lr: float,
               loss_cfg: LossConfig | None = None, adam: AdamConfig | None = None,
               critic_view: str = "stop_gradient", check_isolation: bool = False) -> dict:
    """One generator update followed by one critic update.

    Returns the per-step loss values: the total generator objective under
    ``gen_loss`` plus one entry per MetricRecord loss/score column.
    """
    base = loss_cfg or LossConfig()
    cfg = LossConfig(gamma=gam, lambda_=lam, gan_form=base.gan_form, quality_mode=base.quality_mode)
    nets = state.nets
    g, f, dx, dy = (nets[n] for n in NET_NAMES)
    where = f"epoch {state.epoch} step {state.step + 1}"
    _zero_all(state)
    state.step += 1

    # (1) generators
    gen_loss, diag = generator_objective(g, f, dx, dy, x, y, cfg, critic_view=critic_view)
    cx, cy = diag["cyc_x"].as_floats(), diag["cyc_y"].as_floats()
    for name, v in (("gan_g", diag["gan_g"]), ("gan_f", diag["gan_f"]),
                    ("cycle_x", cx["combined"]), ("cycle_y", cy["combined"]),
                    ("generator_loss", gen_loss.item())):
        _finite(name, v, where)
    backward(gen_loss)
    if check_isolation:
        for name, t in state.params("DX", "DY"):
            if t._grad is not None and np.any(t._grad != 0.0):
                raise AssertionError(f"generator objective leaked gradient into {name}")
    adam_step(state.params("G", "F"), state, lr, adam)
    _zero_all(state)

    # (2) critics on fakes recomputed by the updated generators
    fake_y = generator_forward(g, x, frozen=True)
    fake_x = generator_forward(f, y, frozen=True)
    loss_dx, dx_real, dx_fake = discriminator_objective(dx, x, fake_x, cfg.gan_form)
    loss_dy, dy_real, dy_fake = discriminator_objective(dy, y, fake_y, cfg.gan_form)
    _finite("loss_dx", loss_dx.item(), where)
    _finite("loss_dy", loss_dy.item(), where)
    backward(loss_dx)
    backward(loss_dy)
    adam_step(state.params("DX", "DY"), state, lr, adam)
    _zero_all(state)

    return {
        "gen_loss": gen_loss.item(),
        "gan_g": diag["gan_g"], "gan_f": diag["gan_f"],
        "loss_dx": loss_dx.item(), "loss_dy": loss_dy.item(),
        "cyc_x_pixel": cx["pixel"], "cyc_x_feature": cx["feature"],
        "cyc_x_weight": cx["weight"], "cyc_x_combined": cx["combined"],
        "cyc_y_pixel": cy["pixel"], "cyc_y_feature": cy["feature"],
        "cyc_y_weight": cy["weight"], "cyc_y_combined": cy["combined"],
        "dx_real_score": dx_real, "dx_fake_score": dx_fake,
        "dy_real_score": dy_real, "dy_fake_score": dy_fake,
    }


# -------------------------------------------------------------------- metrics


def _fmt(v) -> str:
    return str(v) if isinstance(v, int) else f"{v:.9g}"


def log_metrics(record: MetricRecord, sink) -> None:
    """Append one CSV row to ``sink``, writing the header first if the file is new."""
    path = Path(sink)
    new = not path.exists() or path.stat().st_size == 0
    with path.open("a", newline="") as fh:
        if new:
            fh.write(",".join(METRIC_COLUMNS) + "\n")
        fh.write(",".join(_fmt(getattr(record, c)) for c in METRIC_COLUMNS) + "\n")


def read_metrics(path) -> list[MetricRecord]:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != METRIC_COLUMNS:
            raise ValueError(f"{path}: unexpected metrics header {header}")
        return [MetricRecord(int(row[0]), *(float(v) for v in row[1:])) for row in reader]


# ----------------------------------------------------------------- checkpoint


def quantize_state(state: TrainerState) -> None:
    """Round parameters and moments to float32 in place (what a checkpoint stores)."""
    for _, arr in state.named_arrays():
        arr[...] = arr.astype("<f4").astype(np.float64)


def save_checkpoint(state: TrainerState, path) -> Path:
    """Write ``<path>`` (text manifest) and ``<path>.bin`` (little-endian float32 blob)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob_path = path.with_name(path.name + ".bin")
    lines = [CHECKPOINT_MAGIC, f"epoch {state.epoch}", f"step {state.step}", f"seed {state.seed}",
             f"image_size {state.nets['G'].image_size}", f"config_hash {state.config_hash}",
             f"blob {blob_path.name}"]
    chunks = []
    offset = 0
    for name, arr in state.named_arrays():
        lines.append(f"tensor {name} {offset} {','.join(map(str, arr.shape))}")
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        offset += arr.size
    lines.append(f"total {offset}")
    blob_path.write_bytes(b"".join(chunks))
    path.write_text("\n".join(lines) + "\n")
    return path


def load_checkpoint(path) -> TrainerState:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint manifest {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a cyclet checkpoint manifest")
    meta: dict[str, str] = {}
    table: list[tuple[str, int, tuple[int, ...]]] = []
    for ln in lines[1:]:
        parts = ln.split()
        if not parts:
            continue
        if parts[0] == "tensor":
            if len(parts) != 4:
                raise CheckpointError(f"{path}: malformed tensor line {ln!r}")
            shape = tuple(int(s) for s in parts[3].split(",") if s)
            table.append((parts[1], int(parts[2]), shape))
        else:
            meta[parts[0]] = parts[1] if len(parts) > 1 else ""
    try:
        image_size = int(meta["image_size"])
        state = new_state(int(meta["seed"]), image_size)
        state.epoch = int(meta["epoch"])
        state.step = int(meta["step"])
        total = int(meta["total"])
        blob_path = path.with_name(meta["blob"])
    except KeyError as exc:
        raise CheckpointError(f"{path}: manifest missing key {exc}") from None
    state.config_hash = meta.get("config_hash", "")
    blob = blob_path.read_bytes() if blob_path.exists() else None
    if blob is None:
        raise CheckpointError(f"{path}: blob {blob_path} not found")
    if len(blob) != 4 * total:
        raise CheckpointError(f"{blob_path}: blob has {len(blob)} bytes, manifest expects {4 * total} (truncated?)")
    values = np.frombuffer(blob, dtype="<f4")
    expected = list(state.named_arrays())
    if len(table) != len(expected):
        raise CheckpointError(f"{path}: manifest lists {len(table)} tensors, architecture has {len(expected)}")
    for (name, offset, shape), (want_name, arr) in zip(table, expected):
        if name != want_name:
            raise CheckpointError(f"{path}: tensor {name!r} where {want_name!r} was expected")
        if shape != arr.shape:
            raise CheckpointError(f"{path}: shape mismatch for {name}: manifest {shape}, architecture {arr.shape}")
        n = arr.size
        if offset < 0 or offset + n > total:
            raise CheckpointError(f"{path}: offset {offset} of {name} out of range")
        arr[...] = values[offset:offset + n].astype(np.float64).reshape(shape)
    return state


# ---------------------------------------------------------------------- data


@dataclass
class DataPools:
    train_a: np.ndarray
    train_b: np.ndarray
    test_a: np.ndarray
    test_b: np.ndarray


def load_pools(cfg: TrainerConfig, test_count: int = 4) -> DataPools:
    """Model-range pools, from ``data_root`` PPMs or generated in memory."""
    n = cfg.samples_per_domain
    if cfg.data_root:
        root = Path(cfg.data_root)
        ta = synthdata.load_domain_dir(root / "trainA", n)
        tb = synthdata.load_domain_dir(root / "trainB", n)
        sa = synthdata.load_domain_dir(root / "testA")[:test_count]
        sb = synthdata.load_domain_dir(root / "testB")[:test_count]
    else:
        ta = synthdata.domain_pool("A", "train", n, cfg.seed)[0]
        tb = synthdata.domain_pool("B", "train", n, cfg.seed)[0]
        sa = synthdata.domain_pool("A", "test", test_count, cfg.seed)[0]
        sb = synthdata.domain_pool("B", "test", test_count, cfg.seed)[0]
    for name, arr in (("trainA", ta), ("trainB", tb)):
        if arr.shape[1:] != (synthdata.SIZE, synthdata.SIZE, 3):
            raise ValueError(f"{name} images must be {synthdata.SIZE}x{synthdata.SIZE} RGB, got {arr.shape[1:]}")
    conv = synthdata.to_model_range
    return DataPools(conv(ta), conv(tb), conv(sa), conv(sb))


def sample_grid(state: TrainerState, test_a: np.ndarray, test_b: np.ndarray) -> np.ndarray:
    """uint8 montage: rows real A, G(A), F(G(A)), real B, F(B), G(F(B)); one column per sample."""
    g, f = state.nets["G"], state.nets["F"]
    a, b = Tensor(test_a), Tensor(test_b)
    ga = generator_forward(g, a, frozen=True)
    fb = generator_forward(f, b, frozen=True)
    rows = [a, ga, generator_forward(f, ga, frozen=True), b, fb, generator_forward(g, fb, frozen=True)]
    imgs = [synthdata.from_model_range(r.data) for r in rows]  # each [N,H,W,3]
    return np.concatenate([np.concatenate(list(r), axis=1) for r in imgs], axis=0)


# ----------------------------------------------------------------------- loop


def train_loop(cfg: TrainerConfig, resume_from=None,
               on_epoch_end: Callable[[TrainerState, MetricRecord], None] | None = None,
               critic_view: str = "stop_gradient", check_isolation: bool = False,
               write_samples: bool = True) -> TrainerState:
    cfg.validate()
    out = Path(cfg.output_dir)
    ckpt_dir = out / "checkpoints"
    metrics_path = out / "metrics.csv"
    try:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc

    pools = load_pools(cfg)
    if resume_from is not None:
        state = load_checkpoint(resume_from)
        if state.config_hash != cfg.config_hash():
            raise CheckpointError(f"{resume_from}: config hash {state.config_hash[:12]} does not match "
                                  f"current config {cfg.config_hash()[:12]}")
        prior = Path(resume_from).parent.parent / "metrics.csv"
        if prior.exists():
            state.metrics = [r for r in read_metrics(prior) if r.epoch <= state.epoch]
    else:
        state = new_state(cfg.seed)
        state.config_hash = cfg.config_hash()

    if metrics_path.exists():
        metrics_path.unlink()
    for rec in state.metrics:
        log_metrics(rec, metrics_path)

    sched = cfg.schedule
    for epoch in range(state.epoch + 1, cfg.total_epochs + 1):
        state.epoch = epoch
        t = epoch - 1
        lam, gam, lr = lambda_at(sched, t), gamma_at(sched, t), lr_at(sched, t)
        batches_a = synthdata.make_epoch_batches(pools.train_a, cfg.batch_size, cfg.seed, epoch, "A")
        batches_b = synthdata.make_epoch_batches(pools.train_b, cfg.batch_size, cfg.seed, epoch, "B")
        sums = dict.fromkeys(_STEP_COLUMNS, 0.0)
        for ba, bb in zip(batches_a, batches_b):
            vals = train_step(state, ba.images, bb.images, lam, gam, lr, cfg.loss, cfg.adam,
                              critic_view=critic_view, check_isolation=check_isolation)
            for k in _STEP_COLUMNS:
                sums[k] += vals[k]
        n = len(batches_a)
        rec = MetricRecord(epoch, lam, gam, lr, **{k: sums[k] / n for k in _STEP_COLUMNS})
        state.metrics.append(rec)
        log_metrics(rec, metrics_path)
        log.info("epoch %d/%d lambda=%.4g gamma=%.4g lr=%.3g gan=%.4f/%.4f cyc=%.4f/%.4f",
                 epoch, cfg.total_epochs, lam, gam, lr, rec.gan_g, rec.gan_f,
                 rec.cyc_x_pixel, rec.cyc_y_pixel)

        if epoch % cfg.checkpoint_every == 0 or epoch == cfg.total_epochs:
            save_checkpoint(state, ckpt_dir / f"epoch_{epoch:04d}.ckpt")
            # the live run continues from exactly what a resume would load
            quantize_state(state)
            if write_samples:
                grid = sample_grid(state, pools.test_a, pools.test_b)
                (out / "samples").mkdir(exist_ok=True)
                synthdata.write_ppm(grid, out / "samples" / f"epoch_{epoch:04d}.ppm")
        if on_epoch_end is not None:
            on_epoch_end(state, rec)
    return state
