"""Autoregressive source-extraction chain over encoded mixtures.

One model extracts an unknown number of sources from a mixture, one source
per step.  A per-frame LSTM carries memory across steps (the recurrence runs
over the source index, not over time), so step i sees the mixture features
plus everything already extracted.  Training matches steps to references
greedily and appends one extra step trained toward silence (or the all-blank
token sequence), which becomes the stop signal at inference.  Fixed-order
(serial) and fixed-count (parallel multi-head) baselines share the backbone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from . import layers
from . import metrics as mx
from .assign import DistanceKind, greedy_order, pit_optimal
from .autodiff import Tensor
from .constants import (
    BLANK_ID,
    ENERGY_THRESHOLD,
    MAX_CHAIN_STEPS,
    SAMPLE_RATE,
    TOKEN_SECONDS,
)
from .errors import ConfigError, DataError, ShapeError
from .layers import ModelConfig

_TASKS = ("separation", "recognition", "joint", "denoise")
DEFAULT_TOKEN_SAMPLES = int(round(SAMPLE_RATE * TOKEN_SECONDS))
STOP_FRAME_LEN = 128


def _neg_sdr_distance(est, ref) -> float:
    return -mx.sdr(est, ref).value


@dataclass(frozen=True)
class ChainMode:
    """Task plus baseline variant.  Baseline flags swap the chain's
    conditioning for a fixed-order or fixed-count scheme."""

    task: str = "separation"
    parallel_pit: bool = False
    serial_only: bool = False
    pit_heads: int = 0

    def __post_init__(self):
        if self.task not in _TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.parallel_pit and self.serial_only:
            raise ConfigError("baseline flags are mutually exclusive")
        if self.parallel_pit:
            if self.task not in ("separation", "recognition"):
                raise ConfigError("parallel_pit baseline covers separation and recognition")
            if self.pit_heads < 1:
                raise ConfigError("parallel_pit needs pit_heads >= 1")
        elif self.pit_heads:
            raise ConfigError("pit_heads only applies with parallel_pit")
        if self.serial_only and self.task != "separation":
            raise ConfigError("serial baseline covers separation only")


@dataclass
class ChainState:
    """Per-frame recurrent memory carried across extraction steps."""

    h: Tensor
    c: Tensor
    step: int = 0

    @property
    def frames(self) -> int:
        return self.h.data.shape[0]


@dataclass
class StepOutput:
    estimate: Tensor  # waveform or frame log-posteriors
    ref_index: Optional[int]
    loss: Tensor
    stop_flag: bool


@dataclass
class JointResult:
    sep_losses: list
    ctc_losses: list
    permutation: tuple
    asr_saw_estimate: list  # one flag per step
    cond_used_predicted: list  # one flag per conditioned step (steps 2..N)


@dataclass(frozen=True)
class TeacherForcing:
    noise_std: float = 0.0
    ss_wav: float = 0.0
    ss_ctc: float = 0.0
    rng: Optional[np.random.Generator] = None

    def __post_init__(self):
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")
        for p in (self.ss_wav, self.ss_ctc):
            if not 0.0 <= p <= 1.0:
                raise ConfigError("scheduled-sampling probabilities live in [0, 1]")


@dataclass(frozen=True)
class StopCriterion:
    max_steps: int = MAX_CHAIN_STEPS
    energy_threshold: float = ENERGY_THRESHOLD
    frame_len: int = STOP_FRAME_LEN

    def __post_init__(self):
        if self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")
        if self.frame_len < 1:
            raise ConfigError("frame_len must be >= 1")


def make_condition(prev_ref, prev_est, kind: str, tf: Optional[TeacherForcing] = None, training: bool = True):
    """Pick the next step's condition source.

    Training conditions on the ground truth (waves optionally perturbed with
    Gaussian noise, alignments swapped for the prediction with probability
    ss_ctc); inference always conditions on the prediction, never noised.
    """
    if not training:
        if prev_est is None:
            raise ValueError("inference conditioning needs a previous estimate")
        return np.asarray(prev_est)
    if kind == "wave":
        wave = np.asarray(prev_ref, dtype=np.float64)
        if tf is not None and tf.noise_std > 0:
            if tf.rng is None:
                raise ConfigError("condition noise needs an rng")
            wave = wave + tf.noise_std * tf.rng.standard_normal(wave.shape)
        return wave
    if kind == "alignment":
        if tf is not None and tf.ss_ctc > 0 and prev_est is not None:
            if _bernoulli(tf.ss_ctc, tf.rng):
                return np.asarray(prev_est)
        return np.asarray(prev_ref)
    raise ValueError(f"unknown condition kind {kind!r}")


def _bernoulli(p: float, rng: Optional[np.random.Generator]) -> bool:
    if p <= 0.0:
        return False
    if p >= 1.0:
        return True
    if rng is None:
        raise ConfigError("fractional sampling probability needs an rng")
    return bool(rng.random() < p)


def uniform_alignment(tokens, frames: int, stride: int, kernel: int, token_samples: int = DEFAULT_TOKEN_SAMPLES) -> np.ndarray:
    """Frame-level labels for equal-duration tokens: each frame takes the
    token whose time slot contains the frame's center sample, blank past the
    end.  Because tokens genuinely occupy uniform slots, this is the true
    alignment, not an approximation."""
    tokens = list(tokens)
    out = np.full(frames, BLANK_ID, dtype=np.int64)
    for t in range(frames):
        idx = (t * stride + kernel // 2) // token_samples
        if idx < len(tokens):
            out[t] = int(tokens[idx])
    return out


def fit_length(wave: Tensor, n: int) -> Tensor:
    """Trim or zero-pad a decoded waveform to exactly n samples."""
    m = wave.data.shape[0]
    if m == n:
        return wave
    if m > n:
        return ad.slice_axis(wave, axis=0, start=0, stop=n)
    return ad.pad(wave, axis=0, before=0, after=n - m)


class ChainModel:
    """Shared-parameter extraction chain.  Every step reuses the single
    parameter set held in ``parts``; there are no per-step copies."""

    def __init__(self, cfg: ModelConfig, mode: ChainMode, parts: dict, token_samples: int = DEFAULT_TOKEN_SAMPLES):
        self.cfg = cfg
        self.mode = mode
        self.parts = parts
        self.token_samples = token_samples

    # -- parameters ---------------------------------------------------------

    def named_parameters(self) -> dict:
        return layers.named_parameters(self.parts)

    def parameters(self) -> list:
        return list(self.named_parameters().values())

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    # -- building blocks ----------------------------------------------------

    def encode_mixture(self, mixture) -> tuple:
        """Waveform -> (encoder basis features E0, processed features R)."""
        E0 = layers.waveform_encoder(mixture, self.parts["enc"])
        R = layers.separator(E0, self.parts["sep"])
        return E0, R

    def initial_state(self, frames: int) -> ChainState:
        dtype = self.parts["chain"].b.data.dtype
        hidden = self.parts["chain"].hidden
        zeros = np.zeros((frames, hidden), dtype=dtype)
        return ChainState(h=Tensor(zeros.copy()), c=Tensor(zeros.copy()), step=0)

    def chain_step(self, E: Tensor, cond: Tensor, state: ChainState) -> tuple:
        """Fuse mixture features with the condition and advance the per-frame
        recurrence one source index."""
        if E.data.shape[0] != cond.data.shape[0]:
            raise ShapeError(
                f"frame counts differ: features {E.data.shape[0]} vs condition {cond.data.shape[0]}"
            )
        if state.frames != E.data.shape[0]:
            raise ShapeError("state frame count does not match the features")
        fused = ad.concat([E, cond], axis=1)
        h, c = layers.lstm_step(fused, state.h, state.c, self.parts["chain"])
        return h, ChainState(h=h, c=c, step=state.step + 1)

    def _tile(self, vec: Tensor, frames: int) -> Tensor:
        base = np.zeros((frames, vec.data.shape[-1]), dtype=vec.data.dtype)
        return ad.add(Tensor(base), vec)

    def _first_condition(self, frames: int) -> Tensor:
        return self._tile(self.parts["zero_cond"], frames)

    def _wave_condition(self, wave) -> Tensor:
        return layers.waveform_encoder(wave, self.parts["enc"])

    def _align_condition(self, frames_labels) -> Tensor:
        return layers.embed_tokens(frames_labels, self.parts["emb"])

    def _condition(self, step: int, prev_ref, prev_est, tf, training: bool, frames: int) -> Tensor:
        if step == 0:
            return self._first_condition(frames)
        if self.mode.task == "recognition":
            if training:
                gt = uniform_alignment(
                    prev_ref, frames, self.cfg.stride, self.cfg.kernel, self.token_samples
                )
            else:
                gt = None
            labels = make_condition(gt, prev_est, "alignment", tf, training)
            return self._align_condition(labels)
        wave = make_condition(prev_ref, prev_est, "wave", tf, training)
        return self._wave_condition(wave)

    def _wave_estimate(self, h: Tensor, E0: Tensor, n: int) -> Tensor:
        mask = ad.sigmoid(layers.linear(h, self.parts["mask"]))
        masked = mask * E0
        return fit_length(layers.waveform_decoder(masked, self.parts["dec"]), n)

    def _frame_logprobs(self, h: Tensor) -> Tensor:
        return ad.log_softmax(layers.linear(h, self.parts["head"]), axis=1)

    def _stop_fired(self, est: Tensor, stop: StopCriterion) -> bool:
        if self.mode.task == "recognition":
            return len(mx.collapse_ctc(mx.ctc_greedy_frames(est.data))) == 0
        energies = mx.frame_energy(est.data, stop.frame_len)
        return bool(np.all(energies < stop.energy_threshold))

    def _check_feasible(self, refs, frames: int) -> None:
        for r in refs:
            if mx.min_frames_for(r) > frames:
                raise DataError(
                    f"reference {list(r)} needs more than {frames} frames for an alignment"
                )

    # -- training forward passes --------------------------------------------

    def run_chain_train(self, mixture, refs: Sequence, tf: Optional[TeacherForcing] = None) -> tuple:
        """Teacher-forced chain pass: greedily match steps to references while
        producing them, then train one extra step toward silence (separation)
        or the all-blank sequence (recognition).

        Returns (total loss, StepOutputs, permutation); total loss is exactly
        the sum of the per-step losses.
        """
        if self.mode.parallel_pit or self.mode.serial_only:
            raise ConfigError("baselines train via parallel_pit_forward / serial_forward")
        task = self.mode.task
        if task not in ("separation", "recognition"):
            raise ConfigError("run_chain_train covers separation and recognition tasks")
        refs = list(refs)
        if not refs:
            raise DataError("empty reference set")
        mixture = np.asarray(mixture, dtype=np.float64)
        n = mixture.shape[0]
        E0, R = self.encode_mixture(mixture)
        frames = R.data.shape[0]
        if task == "recognition":
            self._check_feasible(refs, frames)
        state = self.initial_state(frames)
        stop = StopCriterion()
        estimates: list[Tensor] = []
        prev_pred = None

        def produce(step, prev_ref):
            nonlocal state, prev_pred
            cond = self._condition(step, prev_ref, prev_pred, tf, True, frames)
            h, state = self.chain_step(R, cond, state)
            if task == "separation":
                est = self._wave_estimate(h, E0, n)
                prev_pred = est.data
            else:
                est = self._frame_logprobs(h)
                prev_pred = mx.ctc_greedy_frames(est.data)
            estimates.append(est)
            return est.data

        distance = DistanceKind.NEG_SI_SNR if task == "separation" else DistanceKind.CTC
        order = greedy_order(produce, refs, distance)

        steps: list[StepOutput] = []
        total: Optional[Tensor] = None
        for i, est in enumerate(estimates):
            ridx = order.permutation[i]
            if task == "separation":
                # matching is scale-invariant, the optimized loss is not:
                # conditions must come out at the reference scale
                loss = mx.neg_sdr_loss(est, refs[ridx])
            else:
                loss = mx.ctc_loss(est, refs[ridx])
            steps.append(StepOutput(est, ridx, loss, self._stop_fired(est, stop)))
            total = loss if total is None else total + loss

        # the appended stop step, conditioned on the last matched reference
        cond = self._condition(len(refs), refs[order.permutation[-1]], prev_pred, tf, True, frames)
        h, state = self.chain_step(R, cond, state)
        if task == "separation":
            sil_est = self._wave_estimate(h, E0, n)
            sil_loss = mx.silence_loss(sil_est)
        else:
            sil_est = self._frame_logprobs(h)
            sil_loss = mx.ctc_loss(sil_est, [])
        steps.append(StepOutput(sil_est, None, sil_loss, self._stop_fired(sil_est, stop)))
        total = total + sil_loss
        return total, steps, order.permutation

    def serial_forward(self, mixture, refs: Sequence, tf: Optional[TeacherForcing] = None, training: bool = True) -> Tensor:
        """Fixed-order pipeline baseline: step 1 consumes the mixture, every
        later step consumes only the previous step's output (the mixture
        features are zeroed and the mask applies to the condition's encoding
        instead)."""
        if self.mode.task != "separation":
            raise ConfigError("serial baseline covers separation only")
        refs = list(refs)
        if not refs:
            raise DataError("empty reference set")
        mixture = np.asarray(mixture, dtype=np.float64)
        n = mixture.shape[0]
        E0, R = self.encode_mixture(mixture)
        frames = R.data.shape[0]
        zero_R = Tensor(np.zeros_like(R.data))
        state = self.initial_state(frames)
        total: Optional[Tensor] = None
        prev_est = None
        for i, ref in enumerate(refs):
            if i == 0:
                feats, basis, cond = R, E0, self._first_condition(frames)
            else:
                wave = make_condition(refs[i - 1], prev_est, "wave", tf, training)
                basis = self._wave_condition(wave)
                feats, cond = zero_R, basis
            h, state = self.chain_step(feats, cond, state)
            est = self._wave_estimate(h, basis, n)
            prev_est = est.data
            loss = mx.neg_sdr_loss(est, ref)
            total = loss if total is None else total + loss
        return total

    def serial_estimates(self, mixture, n_steps: int) -> list:
        """Inference pass of the serial baseline: exactly ``n_steps`` waveform
        estimates, each later step conditioned on the previous estimate."""
        if not self.mode.serial_only:
            raise ConfigError("model was not built with the serial baseline")
        if n_steps < 1:
            raise ConfigError("n_steps must be >= 1")
        mixture = np.asarray(mixture, dtype=np.float64)
        n = mixture.shape[0]
        E0, R = self.encode_mixture(mixture)
        frames = R.data.shape[0]
        zero_R = Tensor(np.zeros_like(R.data))
        state = self.initial_state(frames)
        outputs: list = []
        for i in range(n_steps):
            if i == 0:
                feats, basis, cond = R, E0, self._first_condition(frames)
            else:
                basis = self._wave_condition(outputs[-1])
                feats, cond = zero_R, basis
            h, state = self.chain_step(feats, cond, state)
            outputs.append(self._wave_estimate(h, basis, n).data)
        return outputs

    def parallel_pit_forward(self, mixture, refs: Sequence) -> tuple:
        """Fixed-count multi-head baseline: one head embedding per source,
        all estimates produced independently, loss under the best of the N!
        reference permutations."""
        if not self.mode.parallel_pit:
            raise ConfigError("model was not built with the parallel_pit baseline")
        refs = list(refs)
        heads = self.parts["pit"]
        n_heads = heads.data.shape[0]
        if len(refs) != n_heads:
            raise DataError(f"{len(refs)} references for {n_heads} heads")
        mixture = np.asarray(mixture, dtype=np.float64)
        n = mixture.shape[0]
        E0, R = self.encode_mixture(mixture)
        frames = R.data.shape[0]
        if self.mode.task == "recognition":
            self._check_feasible(refs, frames)
        estimates: list[Tensor] = []
        for k in range(n_heads):
            row = ad.slice_axis(heads, axis=0, start=k, stop=k + 1)
            cond = self._tile(row, frames)
            h, _ = self.chain_step(R, cond, self.initial_state(frames))
            if self.mode.task == "separation":
                estimates.append(self._wave_estimate(h, E0, n))
            else:
                estimates.append(self._frame_logprobs(h))
        if self.mode.task == "separation":
            # permutation search under the training loss itself, so the
            # returned loss is exactly the permutation minimum
            distance = _neg_sdr_distance
        else:
            distance = DistanceKind.CTC
        pit = pit_optimal([e.data for e in estimates], refs, distance)
        total: Optional[Tensor] = None
        for i, est in enumerate(estimates):
            ref = refs[pit.permutation[i]]
            if self.mode.task == "separation":
                loss = mx.neg_sdr_loss(est, ref)
            else:
                loss = mx.ctc_loss(est, ref)
            total = loss if total is None else total + loss
        return total, pit.permutation

    def pit_estimates(self, mixture) -> list:
        """Per-head outputs of the parallel baseline: waveforms for
        separation, collapsed token lists for recognition."""
        if not self.mode.parallel_pit:
            raise ConfigError("model was not built with the parallel_pit baseline")
        mixture = np.asarray(mixture, dtype=np.float64)
        n = mixture.shape[0]
        E0, R = self.encode_mixture(mixture)
        frames = R.data.shape[0]
        heads = self.parts["pit"]
        outputs: list = []
        for k in range(heads.data.shape[0]):
            row = ad.slice_axis(heads, axis=0, start=k, stop=k + 1)
            cond = self._tile(row, frames)
            h, _ = self.chain_step(R, cond, self.initial_state(frames))
            if self.mode.task == "separation":
                outputs.append(self._wave_estimate(h, E0, n).data)
            else:
                logp = self._frame_logprobs(h)
                outputs.append(mx.collapse_ctc(mx.ctc_greedy_frames(logp.data)))
        return outputs

    def joint_forward(self, mixture, wave_refs: Sequence, token_refs: Sequence, ss_wav: float = 0.0, ss_ctc: float = 0.0, rng: Optional[np.random.Generator] = None, noise_std: float = 0.0) -> JointResult:
        """Separation and recognition trained together: every step emits a
        waveform and CTC posteriors, and the next step is conditioned on both
        the waveform and the embedded frame alignment.

        Scheduled sampling: with probability ss_wav the recognizer consumes
        the separated estimate instead of the matched reference; with
        probability ss_ctc the alignment condition uses the prediction
        instead of the true alignment.
        """
        if self.mode.task != "joint":
            raise ConfigError("joint_forward needs a joint-task model")
        wave_refs = list(wave_refs)
        token_refs = list(token_refs)
        if len(wave_refs) != len(token_refs):
            raise DataError("wave and token reference counts differ")
        if not wave_refs:
            raise DataError("empty reference set")
        mixture = np.asarray(mixture, dtype=np.float64)
        n = mixture.shape[0]
        E0, R = self.encode_mixture(mixture)
        frames = R.data.shape[0]
        self._check_feasible(token_refs, frames)
        tf = TeacherForcing(noise_std=noise_std, ss_wav=ss_wav, ss_ctc=ss_ctc, rng=rng)
        state = self.initial_state(frames)
        waves: list[Tensor] = []
        logps: list[Tensor] = []
        asr_saw_estimate: list[bool] = []
        cond_used_predicted: list[bool] = []

        def run_asr(step_idx: int, matched: int) -> Tensor:
            use_est = _bernoulli(ss_wav, rng)
            asr_saw_estimate.append(use_est)
            source = waves[step_idx] if use_est else np.asarray(wave_refs[matched], dtype=np.float64)
            feats = layers.waveform_encoder(source, self.parts["asr_enc"])
            hidden = layers.separator(feats, self.parts["asr_sep"])
            return ad.log_softmax(layers.linear(hidden, self.parts["asr_head"]), axis=1)

        def produce(step, prev_idx):
            nonlocal state
            if step == 0:
                cond = self._first_condition(frames)
            else:
                logp = run_asr(step - 1, prev_idx)
                logps.append(logp)
                gt_align = uniform_alignment(
                    token_refs[prev_idx], frames, self.cfg.stride, self.cfg.kernel, self.token_samples
                )
                pred_align = mx.ctc_greedy_frames(logp.data)
                use_pred = _bernoulli(ss_ctc, rng)
                cond_used_predicted.append(use_pred)
                labels = pred_align if use_pred else gt_align
                wave = make_condition(wave_refs[prev_idx], None, "wave", tf, True)
                cond = ad.concat(
                    [self._wave_condition(wave), self._align_condition(labels)], axis=1
                )
            h, state = self.chain_step(R, cond, state)
            est = self._wave_estimate(h, E0, n)
            waves.append(est)
            return est.data

        indices = list(range(len(wave_refs)))
        distance = lambda est, k: DistanceKind.NEG_SI_SNR(est, wave_refs[k])
        order = greedy_order(produce, indices, distance)
        logps.append(run_asr(len(waves) - 1, order.permutation[-1]))

        sep_losses = [
            mx.neg_sdr_loss(waves[i], wave_refs[order.permutation[i]])
            for i in range(len(waves))
        ]
        ctc_losses = [
            mx.ctc_loss(logps[i], token_refs[order.permutation[i]])
            for i in range(len(logps))
        ]
        return JointResult(
            sep_losses=sep_losses,
            ctc_losses=ctc_losses,
            permutation=order.permutation,
            asr_saw_estimate=asr_saw_estimate,
            cond_used_predicted=cond_used_predicted,
        )

    def denoise_forward(self, noisy, clean) -> tuple:
        """Two-step refinement against one reference: step 2 is conditioned on
        step 1's estimate (gradients flow through it), both losses negative
        SDR."""
        if self.mode.task != "denoise":
            raise ConfigError("denoise_forward needs a denoise-task model")
        noisy = np.asarray(noisy, dtype=np.float64)
        clean = np.asarray(clean, dtype=np.float64)
        if noisy.shape != clean.shape:
            raise ShapeError(f"length mismatch: noisy {noisy.shape} vs clean {clean.shape}")
        est1, est2 = self._denoise_steps(noisy)
        return mx.neg_sdr_loss(est1, clean), mx.neg_sdr_loss(est2, clean)

    def denoise_estimates(self, noisy) -> tuple:
        """Step-1 and step-2 waveform estimates as plain arrays."""
        est1, est2 = self._denoise_steps(np.asarray(noisy, dtype=np.float64))
        return est1.data, est2.data

    def _denoise_steps(self, noisy: np.ndarray) -> tuple:
        n = noisy.shape[0]
        E0, R = self.encode_mixture(noisy)
        frames = R.data.shape[0]
        state = self.initial_state(frames)
        h, state = self.chain_step(R, self._first_condition(frames), state)
        est1 = self._wave_estimate(h, E0, n)
        h, state = self.chain_step(R, self._wave_condition(est1), state)
        est2 = self._wave_estimate(h, E0, n)
        return est1, est2

    # -- inference ----------------------------------------------------------

    def infer(self, mixture, stop: Optional[StopCriterion] = None, oracle_steps: Optional[int] = None) -> list:
        """Extract sources until the stop criterion fires (the stopping
        estimate is discarded) or max_steps is reached.  Returns waveforms for
        separation/denoise, token lists for recognition, (waveform, tokens)
        pairs for joint.

        With ``oracle_steps`` the chain runs for exactly that many steps and
        every estimate is kept; this is the known-count evaluation regime."""
        if self.mode.parallel_pit or self.mode.serial_only:
            raise ConfigError("infer covers the conditional chain only")
        stop = stop or StopCriterion()
        if oracle_steps is not None and oracle_steps < 1:
            raise ConfigError("oracle_steps must be >= 1")
        task = self.mode.task
        mixture = np.asarray(mixture, dtype=np.float64)
        n = mixture.shape[0]
        E0, R = self.encode_mixture(mixture)
        frames = R.data.shape[0]
        state = self.initial_state(frames)
        outputs: list = []
        prev_pred = None
        total = stop.max_steps if oracle_steps is None else oracle_steps
        for step in range(total):
            if step == 0:
                cond = self._first_condition(frames)
            elif task == "joint":
                wave, align = prev_pred
                cond = ad.concat(
                    [self._wave_condition(wave), self._align_condition(align)], axis=1
                )
            else:
                cond = self._condition(step, None, prev_pred, None, False, frames)
            h, state = self.chain_step(R, cond, state)
            if task == "recognition":
                logp = self._frame_logprobs(h)
                align = mx.ctc_greedy_frames(logp.data)
                tokens = mx.collapse_ctc(align)
                if not tokens and oracle_steps is None:
                    break
                outputs.append(tokens)
                prev_pred = align
                continue
            est = self._wave_estimate(h, E0, n)
            if oracle_steps is None:
                energies = mx.frame_energy(est.data, stop.frame_len)
                if bool(np.all(energies < stop.energy_threshold)):
                    break
            if task == "joint":
                feats = layers.waveform_encoder(est, self.parts["asr_enc"])
                hidden = layers.separator(feats, self.parts["asr_sep"])
                logp = ad.log_softmax(layers.linear(hidden, self.parts["asr_head"]), axis=1)
                align = mx.ctc_greedy_frames(logp.data)
                outputs.append((est.data, mx.collapse_ctc(align)))
                prev_pred = (est.data, align)
            else:
                outputs.append(est.data)
                prev_pred = est.data
        return outputs


def build_model(cfg: ModelConfig, mode: ChainMode, seed: int = 0, dtype=np.float64, token_samples: int = DEFAULT_TOKEN_SAMPLES) -> ChainModel:
    """Initialize all parameters for the given task; one shared set serves
    every chain step."""
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 11)))
    B, C = cfg.basis, cfg.sep_channels
    cond_dim = 2 * B if mode.task == "joint" else B
    parts: dict = {}
    parts["enc"] = layers.init_wave_encoder(rng, cfg.kernel, B, cfg.stride, dtype=dtype)
    parts["sep"] = layers.init_separator(
        rng, B, C, cfg.sep_blocks, cfg.sep_layers, cfg.sep_kernel, dtype=dtype
    )
    parts["chain"] = layers.init_lstm(rng, C + cond_dim, cfg.chain_hidden, dtype=dtype)
    if mode.parallel_pit:
        spread = rng.uniform(-0.1, 0.1, size=(mode.pit_heads, cond_dim))
        parts["pit"] = Tensor(spread.astype(dtype), requires_grad=True)
    else:
        parts["zero_cond"] = Tensor(np.zeros(cond_dim, dtype=dtype), requires_grad=True)
    if mode.task in ("separation", "denoise", "joint"):
        parts["mask"] = layers.init_linear(rng, cfg.chain_hidden, B, dtype=dtype)
        parts["dec"] = layers.init_conv_transpose1d(rng, cfg.kernel, B, stride=cfg.stride, dtype=dtype)
    if mode.task in ("recognition", "joint"):
        parts["emb"] = layers.init_embedding(rng, cfg.vocab, B, dtype=dtype)
        if mode.task == "recognition":
            parts["head"] = layers.init_linear(rng, cfg.chain_hidden, cfg.vocab, dtype=dtype)
    if mode.task == "joint":
        parts["asr_enc"] = layers.init_wave_encoder(rng, cfg.kernel, B, cfg.stride, dtype=dtype)
        parts["asr_sep"] = layers.init_separator(rng, B, C, 1, cfg.sep_layers, cfg.sep_kernel, dtype=dtype)
        parts["asr_head"] = layers.init_linear(rng, C, cfg.vocab, dtype=dtype)
    return ChainModel(cfg, mode, parts, token_samples=token_samples)
