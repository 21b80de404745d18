"""Training loop: Adam with a stepped learning-rate decay, gradient-norm
clipping, teacher-forcing perturbations, JSON-lines metric logging, and a
binary checkpoint format that round-trips bit-exactly (parameters, optimizer
moments, and RNG state), so an interrupted run continues identically.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import chain as ch
from . import data as sd
from .autodiff import Tape, Tensor
from .chain import ChainMode, ChainModel, TeacherForcing
from .constants import (
    ADAM_BETA1,
    ADAM_BETA2,
    ADAM_EPS,
    GRAD_CLIP_NORM,
    LR_DECAY,
    LR_DECAY_EPOCHS,
    LR_INITIAL,
)
from .errors import ConfigError, DataError, NumericError
from .layers import ModelConfig

_MODES = ("separation", "recognition", "joint", "denoise", "baseline-pit", "baseline-serial")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = LR_INITIAL
    decay: float = LR_DECAY
    decay_epochs: int = LR_DECAY_EPOCHS
    optimizer: str = "adam"
    noise_std: float = 0.25
    ss_wav: float = 0.5
    ss_ctc: float = 0.3
    batch_size: int = 1
    max_epochs: int = 4
    seed: int = 0
    mode: str = "separation"
    pit_task: str = "separation"  # task behind the baseline-pit mode
    pit_heads: int = 2
    grad_clip: float = GRAD_CLIP_NORM

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if not 0.0 < self.decay <= 1.0:
            raise ConfigError("decay must be in (0, 1]")
        if self.decay_epochs < 1:
            raise ConfigError("decay interval must be >= 1 epoch")
        if self.optimizer != "adam":
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.noise_std < 0:
            raise ConfigError("noise std must be >= 0")
        for p in (self.ss_wav, self.ss_ctc):
            if not 0.0 <= p <= 1.0:
                raise ConfigError("ss probabilities live in [0, 1]")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch size and max epochs must be >= 1")
        if self.mode not in _MODES:
            raise ConfigError(f"unknown training mode {self.mode!r}")
        if self.pit_task not in ("separation", "recognition"):
            raise ConfigError("pit_task must be separation or recognition")
        if self.pit_heads < 1:
            raise ConfigError("pit_heads must be >= 1")
        if self.grad_clip <= 0:
            raise ConfigError("grad clip must be > 0")

    def lr_at(self, epoch: int) -> float:
        return lr_at(epoch, self.lr, self.decay, self.decay_epochs)

    def chain_mode(self) -> ChainMode:
        if self.mode == "baseline-pit":
            return ChainMode(self.pit_task, parallel_pit=True, pit_heads=self.pit_heads)
        if self.mode == "baseline-serial":
            return ChainMode("separation", serial_only=True)
        return ChainMode(self.mode)


def lr_at(epoch: int, lr0: float = LR_INITIAL, decay: float = LR_DECAY, interval: int = LR_DECAY_EPOCHS) -> float:
    """Stepped decay: lr0 * decay^(epoch // interval)."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return lr0 * decay ** (epoch // interval)


def make_condition(prev_ref, prev_est, mode, cfg: TrainConfig, rng, training: bool = True):
    """Teacher-forcing condition per the training schedule: ground truth plus
    Gaussian noise for waveforms, ground-truth alignments swapped for the
    prediction with probability ss_ctc; at inference always the prediction."""
    task = mode.task if isinstance(mode, ChainMode) else str(mode)
    kind = "alignment" if task == "recognition" else "wave"
    if training and prev_ref is None:
        raise ValueError("training conditions need the ground-truth reference")
    tf = TeacherForcing(noise_std=cfg.noise_std, ss_wav=cfg.ss_wav, ss_ctc=cfg.ss_ctc, rng=rng)
    return ch.make_condition(prev_ref, prev_est, kind, tf if training else None, training)


class Adam:
    """Adam over a fixed, ordered parameter set."""

    def __init__(self, named_params: dict, beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2, eps: float = ADAM_EPS):
        self.names = list(named_params)
        self.params = [named_params[n] for n in self.names]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data, dtype=np.float64) for p in self.params]
        self.v = [np.zeros_like(p.data, dtype=np.float64) for p in self.params]

    def step(self, grads: dict, lr: float) -> None:
        """grads maps parameter Tensor -> gradient array; missing entries
        count as zero gradient."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            g = grads.get(p)
            if g is None:
                g = np.zeros_like(p.data, dtype=np.float64)
            g = np.asarray(g, dtype=np.float64)
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            m_hat = self.m[i] / (1 - b1**self.t)
            v_hat = self.v[i] / (1 - b2**self.t)
            update = lr * m_hat / (np.sqrt(v_hat) + self.eps)
            p.data -= update.astype(p.data.dtype)


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Scale all gradients in place so their global L2 norm is <= max_norm;
    returns the pre-clip norm."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.asarray(g, dtype=np.float64) ** 2))
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for k in list(grads):
            grads[k] = grads[k] * scale
    return norm


# ---------------------------------------------------------------------------
# checkpointing

_MAGIC = b"SQCHAIN1"
_CKPT_VERSION = 1


def config_digest(model: ChainModel, cfg: Optional[TrainConfig] = None) -> str:
    blob = {
        "model": dataclasses.asdict(model.cfg),
        "mode": dataclasses.asdict(model.mode),
        "token_samples": model.token_samples,
    }
    if cfg is not None:
        blob["train"] = dataclasses.asdict(cfg)
    return hashlib.sha256(json.dumps(blob, sort_keys=True).encode()).hexdigest()


def _pack_bytes(fh, raw: bytes) -> None:
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)


def _unpack_bytes(fh) -> bytes:
    (n,) = struct.unpack("<I", fh.read(4))
    return fh.read(n)


def _pack_array(fh, arr: np.ndarray) -> None:
    dtype = {np.dtype("float32"): b"f4", np.dtype("float64"): b"f8"}[arr.dtype]
    fh.write(dtype)
    fh.write(struct.pack("<B", arr.ndim))
    for d in arr.shape:
        fh.write(struct.pack("<I", d))
    fh.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())


def _unpack_array(fh) -> np.ndarray:
    dtype = np.dtype("<" + fh.read(2).decode())
    (ndim,) = struct.unpack("<B", fh.read(1))
    shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(ndim))
    raw = fh.read(int(np.prod(shape, dtype=np.int64)) * dtype.itemsize)
    return np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))


def save_checkpoint(path: str, model: ChainModel, opt: Optional[Adam], epoch: int, rng: Optional[np.random.Generator], best_valid: float = float("inf"), best_epoch: int = -1) -> None:
    named = model.named_parameters()
    header = {
        "digest": config_digest(model),
        "model": dataclasses.asdict(model.cfg),
        "mode": dataclasses.asdict(model.mode),
        "token_samples": model.token_samples,
        "epoch": int(epoch),
        "best_valid": float(best_valid),
        "best_epoch": int(best_epoch),
        "param_names": list(named),
        "dtype": str(next(iter(named.values())).data.dtype) if named else "float64",
    }
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _CKPT_VERSION))
        _pack_bytes(fh, json.dumps(header, sort_keys=True).encode())
        for name in header["param_names"]:
            _pack_array(fh, named[name].data)
        if opt is None:
            fh.write(struct.pack("<B", 0))
        else:
            fh.write(struct.pack("<B", 1))
            fh.write(struct.pack("<Q", opt.t))
            for arr in opt.m:
                _pack_array(fh, arr)
            for arr in opt.v:
                _pack_array(fh, arr)
        if rng is None:
            fh.write(struct.pack("<B", 0))
        else:
            fh.write(struct.pack("<B", 1))
            _pack_bytes(fh, json.dumps(rng.bit_generator.state).encode())
    os.replace(tmp, path)


def load_checkpoint(path: str) -> dict:
    """Rebuild the model (and optimizer/RNG state when present) from a
    checkpoint file."""
    if not os.path.exists(path):
        raise DataError(f"missing checkpoint {path}")
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise DataError(f"{path} is not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _CKPT_VERSION:
            raise DataError(f"unsupported checkpoint version {version}")
        header = json.loads(_unpack_bytes(fh).decode())
        cfg = ModelConfig(**header["model"])
        mode = ChainMode(**header["mode"])
        dtype = np.dtype(header["dtype"])
        model = ch.build_model(cfg, mode, seed=0, dtype=dtype, token_samples=header["token_samples"])
        named = model.named_parameters()
        if list(named) != header["param_names"]:
            raise DataError("checkpoint parameter names do not match the rebuilt model")
        for name in header["param_names"]:
            arr = _unpack_array(fh)
            if arr.shape != named[name].data.shape:
                raise DataError(f"checkpoint blob {name} has shape {arr.shape}")
            named[name].data = arr.astype(dtype)
        opt = None
        (has_opt,) = struct.unpack("<B", fh.read(1))
        if has_opt:
            opt = Adam(named)
            (opt.t,) = struct.unpack("<Q", fh.read(8))
            opt.m = [_unpack_array(fh) for _ in opt.names]
            opt.v = [_unpack_array(fh) for _ in opt.names]
        rng = None
        (has_rng,) = struct.unpack("<B", fh.read(1))
        if has_rng:
            state = json.loads(_unpack_bytes(fh).decode())
            rng = np.random.default_rng(0)
            rng.bit_generator.state = state
    return {
        "model": model,
        "optimizer": opt,
        "rng": rng,
        "epoch": header["epoch"],
        "best_valid": header["best_valid"],
        "best_epoch": header["best_epoch"],
        "digest": header["digest"],
    }


# ---------------------------------------------------------------------------
# the loop

def _item_loss(model: ChainModel, cfg: TrainConfig, manifest: dict, rec, rng, training: bool) -> Tensor:
    mix, sources = sd.record_waves(manifest, rec)
    tf = TeacherForcing(
        noise_std=cfg.noise_std if training else 0.0,
        ss_wav=cfg.ss_wav if training else 0.0,
        ss_ctc=cfg.ss_ctc if training else 0.0,
        rng=rng,
    )
    mode = cfg.mode
    if mode == "separation":
        total, _, _ = model.run_chain_train(mix, sources, tf)
        return total
    if mode == "recognition":
        total, _, _ = model.run_chain_train(mix, rec.tokens, tf)
        return total
    if mode == "baseline-serial":
        return model.serial_forward(mix, sources, tf)
    if mode == "baseline-pit":
        refs = sources if cfg.pit_task == "separation" else rec.tokens
        loss, _ = model.parallel_pit_forward(mix, refs)
        return loss
    if mode == "joint":
        res = model.joint_forward(
            mix,
            sources,
            rec.tokens,
            ss_wav=cfg.ss_wav if training else 0.0,
            ss_ctc=cfg.ss_ctc if training else 0.0,
            rng=rng,
            noise_std=cfg.noise_std if training else 0.0,
        )
        total = res.sep_losses[0]
        for l in res.sep_losses[1:] + res.ctc_losses:
            total = total + l
        return total
    if mode == "denoise":
        l1, l2 = model.denoise_forward(mix, sources[0])
        return l1 + l2
    raise ConfigError(f"unknown training mode {mode!r}")


def _check_mode_match(cfg: TrainConfig, model: ChainModel, manifest: dict) -> None:
    if model.mode != cfg.chain_mode():
        raise ConfigError(f"model mode {model.mode} does not match training mode {cfg.mode!r}")
    want_kind = "denoise" if cfg.mode == "denoise" else "mix"
    if manifest.get("kind") != want_kind:
        raise DataError(f"mode {cfg.mode!r} needs a {want_kind!r} dataset, got {manifest.get('kind')!r}")


def train(cfg: TrainConfig, dataset, model: ChainModel, out_dir: str, resume: Optional[str] = None, quiet: bool = True) -> dict:
    """Run the optimization loop; returns a summary dict.

    Writes {out_dir}/train_log.jsonl (one record per epoch), {out_dir}/last.ckpt
    after every epoch, and {out_dir}/best.ckpt whenever the validation loss
    improves.  Aborts with NumericError if any loss turns non-finite.
    """
    manifest = sd.load_manifest(dataset) if isinstance(dataset, str) else dataset
    _check_mode_match(cfg, model, manifest)
    train_recs = [r for r in manifest["records"] if r.split == "train"]
    valid_recs = [r for r in manifest["records"] if r.split == "valid"]
    if not train_recs:
        raise DataError("dataset has no training records")
    os.makedirs(out_dir, exist_ok=True)
    log_path = os.path.join(out_dir, "train_log.jsonl")
    best_path = os.path.join(out_dir, "best.ckpt")
    last_path = os.path.join(out_dir, "last.ckpt")

    named = model.named_parameters()
    opt = Adam(named)
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 101)))
    start_epoch = 0
    best_valid = float("inf")
    best_epoch = -1
    if resume is not None:
        snap = load_checkpoint(resume)
        if snap["digest"] != config_digest(model):
            raise ConfigError("checkpoint was written for a different model configuration")
        for name, tensor in snap["model"].named_parameters().items():
            named[name].data = tensor.data
        opt = snap["optimizer"] or opt
        opt.names = list(named)
        opt.params = [named[n] for n in opt.names]
        rng = snap["rng"] or rng
        start_epoch = snap["epoch"] + 1
        best_valid = snap["best_valid"]
        best_epoch = snap["best_epoch"]

    log_lines = []
    for epoch in range(start_epoch, cfg.max_epochs):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(len(train_recs))
        running = 0.0
        pending: dict = {}
        pending_items = 0
        for pos, idx in enumerate(order):
            rec = train_recs[int(idx)]
            with Tape() as tape:
                loss = _item_loss(model, cfg, manifest, rec, rng, training=True)
                value = loss.item()
                if not np.isfinite(value):
                    raise NumericError(f"non-finite training loss at epoch {epoch}: {value}")
                grads = tape.backward(loss)
            running += value
            for p, g in grads.items():
                acc = pending.get(p)
                pending[p] = g if acc is None else acc + g
            pending_items += 1
            if pending_items == cfg.batch_size or pos == len(order) - 1:
                for p in list(pending):
                    pending[p] = pending[p] / pending_items
                clip_gradients(pending, cfg.grad_clip)
                opt.step(pending, lr)
                pending = {}
                pending_items = 0
        train_loss = running / len(train_recs)

        valid_loss = float("nan")
        if valid_recs:
            total = 0.0
            for rec in valid_recs:
                value = _item_loss(model, cfg, manifest, rec, rng, training=False).item()
                if not np.isfinite(value):
                    raise NumericError(f"non-finite validation loss at epoch {epoch}: {value}")
                total += value
            valid_loss = total / len(valid_recs)

        line = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": train_loss,
            "valid_loss": valid_loss,
            "mode": cfg.mode,
        }
        log_lines.append(line)
        with open(log_path, "a") as fh:
            fh.write(json.dumps(line, sort_keys=True) + "\n")
        if not quiet:
            print(json.dumps(line, sort_keys=True))

        improved = valid_recs and valid_loss < best_valid
        if improved:
            best_valid = valid_loss
            best_epoch = epoch
            save_checkpoint(best_path, model, opt, epoch, rng, best_valid, best_epoch)
        save_checkpoint(last_path, model, opt, epoch, rng, best_valid, best_epoch)

    if not valid_recs and start_epoch < cfg.max_epochs:
        save_checkpoint(best_path, model, opt, cfg.max_epochs - 1, rng, best_valid, best_epoch)
    return {
        "epochs_run": cfg.max_epochs - start_epoch,
        "best_valid": best_valid,
        "best_epoch": best_epoch,
        "log": log_lines,
        "log_path": log_path,
        "best_path": best_path,
        "last_path": last_path,
    }
