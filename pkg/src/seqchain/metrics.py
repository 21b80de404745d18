"""Losses and evaluation metrics.

Evaluation metrics (si_snr, sdr, si_snri, token_error_rate, frame_energy)
are plain numpy: they return :class:`MetricValue` or floats and clamp dB
values at +-DB_CAP.  Training losses (neg_sdr_loss, neg_si_snr_loss,
silence_loss, ctc_loss) return Tensors and are differentiable; the dB losses
carry a small epsilon inside the log so their floor sits exactly at the cap
instead of diverging.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, record_op
from .constants import BLANK_ID, DB_CAP, LOSS_FLOOR_EPS
from .errors import DataError, ShapeError

_LOG10 = float(np.log(10.0))


@dataclass(frozen=True)
class MetricValue:
    value: float
    capped: bool = False

    def __float__(self):
        return self.value


def _as_wave(x) -> np.ndarray:
    arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError("waveform metrics expect rank-1 signals")
    return np.asarray(arr, dtype=np.float64)


def _capped_db(num: float, den: float) -> MetricValue:
    if num <= 0.0:
        return MetricValue(-DB_CAP, capped=True)
    if den <= 0.0:
        return MetricValue(DB_CAP, capped=True)
    db = 10.0 * np.log10(num / den)
    if db >= DB_CAP:
        return MetricValue(DB_CAP, capped=True)
    if db <= -DB_CAP:
        return MetricValue(-DB_CAP, capped=True)
    return MetricValue(float(db), capped=False)


def si_snr(est, ref) -> MetricValue:
    """Scale-invariant SNR in dB after zero-meaning and projecting ``est``
    onto ``ref``.  All-zero (or DC-only) references are the silence step and
    must be scored by silence_loss instead."""
    e, r = _as_wave(est), _as_wave(ref)
    if e.shape != r.shape:
        raise ShapeError("si_snr length mismatch")
    e = e - e.mean()
    r = r - r.mean()
    rpow = float(r @ r)
    if rpow == 0.0:
        raise ValueError("si_snr undefined for an all-zero reference")
    alpha = float(e @ r) / rpow
    target = alpha * r
    noise = e - target
    return _capped_db(float(target @ target), float(noise @ noise))


def sdr(est, ref) -> MetricValue:
    """Plain SDR in dB; unlike si_snr this punishes wrong gain."""
    e, r = _as_wave(est), _as_wave(ref)
    if e.shape != r.shape:
        raise ShapeError("sdr length mismatch")
    rpow = float(r @ r)
    if rpow == 0.0:
        raise ValueError("sdr undefined for an all-zero reference")
    err = r - e
    return _capped_db(rpow, float(err @ err))


def si_snri(est, ref, mixture) -> MetricValue:
    """Improvement of si_snr over leaving the mixture untouched."""
    a = si_snr(est, ref)
    b = si_snr(mixture, ref)
    return MetricValue(a.value - b.value, capped=False)


def sdri(est, ref, mixture) -> MetricValue:
    a = sdr(est, ref)
    b = sdr(mixture, ref)
    return MetricValue(a.value - b.value, capped=False)


# ---------------------------------------------------------------------------
# differentiable training losses


def _tensorize(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def neg_sdr_loss(est, ref) -> Tensor:
    """Differentiable -SDR with an epsilon floor: a perfect reconstruction
    scores exactly -DB_CAP instead of diverging."""
    est = _tensorize(est)
    ref_arr = np.asarray(ref.data if isinstance(ref, Tensor) else ref, dtype=np.float64)
    rpow = float(ref_arr @ ref_arr)
    if rpow == 0.0:
        raise ValueError("neg_sdr_loss needs a nonzero reference; use silence_loss")
    diff = ad.sub(est, Tensor(ref_arr, dtype=est.dtype))
    err = ad.sum_along(ad.mul(diff, diff))
    floored = ad.add(err, float(LOSS_FLOOR_EPS * rpow))
    return ad.mul(ad.sub(ad.log(floored), float(np.log(rpow))), 10.0 / _LOG10)


def neg_si_snr_loss(est, ref) -> Tensor:
    """Differentiable -si_snr, epsilon-bounded on both sides of the ratio."""
    est = _tensorize(est)
    ref_arr = np.asarray(ref.data if isinstance(ref, Tensor) else ref, dtype=np.float64)
    r = ref_arr - ref_arr.mean()
    rpow = float(r @ r)
    if rpow == 0.0:
        raise ValueError("neg_si_snr_loss needs a nonzero reference; use silence_loss")
    e = ad.sub(est, ad.mean_along(est))
    rt = Tensor(r, dtype=est.dtype)
    alpha = ad.mul(ad.sum_along(ad.mul(e, rt)), 1.0 / rpow)
    target = ad.mul(alpha, rt)
    noise = ad.sub(e, target)
    tpow = ad.sum_along(ad.mul(target, target))
    npow = ad.sum_along(ad.mul(noise, noise))
    eps = float(LOSS_FLOOR_EPS * rpow)
    ratio = ad.sub(ad.log(ad.add(tpow, eps)), ad.log(ad.add(npow, eps)))
    return ad.mul(ratio, -10.0 / _LOG10)


def silence_loss(est) -> Tensor:
    """Mean-square energy; the training target for the appended silence step."""
    est = _tensorize(est)
    return ad.mean_along(ad.mul(est, est))


# ---------------------------------------------------------------------------
# CTC


def _check_log_probs(lp: np.ndarray) -> None:
    if lp.ndim != 2:
        raise ShapeError("log_probs must be (frames, vocab)")
    rows = np.logaddexp.reduce(lp, axis=1)
    if not np.allclose(rows, 0.0, atol=1e-6):
        raise ShapeError("log_probs rows must normalize to 1")


def ctc_label_lattice(labels) -> np.ndarray:
    """Blank-augmented label sequence [-, l1, -, l2, ..., -]."""
    ext = np.full(2 * len(labels) + 1, BLANK_ID, dtype=np.int64)
    ext[1::2] = labels
    return ext


def min_frames_for(labels) -> int:
    labels = list(labels)
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def ctc_forward(lp: np.ndarray, labels) -> tuple:
    """Log-space forward-backward.

    Returns (negative log-likelihood, gradient of it w.r.t. ``lp``).  The
    gradient is the standard occupancy form: -sum over lattice states with
    symbol v of exp(alpha + beta - lp - logP).
    """
    T, V = lp.shape
    labels = [int(x) for x in labels]
    for lab in labels:
        if lab == BLANK_ID or not 0 <= lab < V:
            raise DataError(f"label {lab} outside vocabulary (blank={BLANK_ID})")
    if T < min_frames_for(labels):
        raise DataError(
            f"{T} frames cannot carry {len(labels)} labels "
            f"(need {min_frames_for(labels)})"
        )
    ext = ctc_label_lattice(labels)
    S = ext.size
    NEG = -np.inf

    # can_skip[s]: the s-2 -> s transition is legal (label state, no repeat)
    can_skip = np.zeros(S, dtype=bool)
    for s in range(2, S):
        can_skip[s] = ext[s] != BLANK_ID and ext[s] != ext[s - 2]

    alpha = np.full((T, S), NEG)
    alpha[0, 0] = lp[0, ext[0]]
    if S > 1:
        alpha[0, 1] = lp[0, ext[1]]
    for t in range(1, T):
        stay = alpha[t - 1]
        step = np.full(S, NEG)
        step[1:] = alpha[t - 1, :-1]
        skip = np.full(S, NEG)
        skip[2:] = np.where(can_skip[2:], alpha[t - 1, :-2], NEG)
        alpha[t] = np.logaddexp(np.logaddexp(stay, step), skip) + lp[t, ext]

    if S > 1:
        log_p = np.logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2])
    else:
        log_p = alpha[T - 1, 0]
    if not np.isfinite(log_p):
        raise DataError("label sequence has no feasible alignment")

    beta = np.full((T, S), NEG)
    beta[T - 1, S - 1] = lp[T - 1, ext[S - 1]]
    if S > 1:
        beta[T - 1, S - 2] = lp[T - 1, ext[S - 2]]
    for t in range(T - 2, -1, -1):
        stay = beta[t + 1]
        step = np.full(S, NEG)
        step[:-1] = beta[t + 1, 1:]
        skip = np.full(S, NEG)
        skip[:-2] = np.where(can_skip[2:], beta[t + 1, 2:], NEG)
        beta[t] = np.logaddexp(np.logaddexp(stay, step), skip) + lp[t, ext]

    # occupancy of lattice state s at frame t, in log space
    occ = alpha + beta - lp[np.arange(T)[:, None], ext[None, :]] - log_p
    grad = np.zeros_like(lp)
    with np.errstate(under="ignore"):
        occ_p = np.exp(occ)
    for s in range(S):
        grad[:, ext[s]] -= occ_p[:, s]
    return float(-log_p), grad


def ctc_loss(log_probs, labels) -> Tensor:
    """Negative log-probability of all alignments collapsing to ``labels``,
    differentiable w.r.t. the per-frame log-distributions."""
    lp_t = _tensorize(log_probs)
    lp = np.asarray(lp_t.data, dtype=np.float64)
    _check_log_probs(lp)
    loss, grad = ctc_forward(lp, labels)

    def bwd(g):
        return (np.asarray(g) * grad.astype(lp_t.dtype),)

    return record_op(np.asarray(loss, dtype=lp_t.dtype), (lp_t,), bwd)


def ctc_greedy_frames(log_probs) -> np.ndarray:
    """Per-frame argmax ids, blanks retained; ties go to the lowest id.

    This length-T sequence is the conditioning signal for recognition mode.
    """
    lp = np.asarray(log_probs.data if isinstance(log_probs, Tensor) else log_probs)
    _check_log_probs(lp)
    return np.argmax(lp, axis=1).astype(np.int64)


def collapse_ctc(frames) -> list:
    """Merge adjacent repeats, then drop blanks."""
    out = []
    prev = None
    for f in np.asarray(frames, dtype=np.int64):
        f = int(f)
        if f != prev:
            if f != BLANK_ID:
                out.append(f)
            prev = f
    return out


def token_error_rate(hyp, ref) -> float:
    """Edit distance normalized by the reference length (floored at 1)."""
    hyp = [int(x) for x in hyp]
    ref = [int(x) for x in ref]
    m, n = len(hyp), len(ref)
    dist = np.arange(n + 1, dtype=np.int64)
    for i in range(1, m + 1):
        prev_diag = dist[0]
        dist[0] = i
        for j in range(1, n + 1):
            cur = dist[j]
            sub = prev_diag + (hyp[i - 1] != ref[j - 1])
            dist[j] = min(dist[j] + 1, dist[j - 1] + 1, sub)
            prev_diag = cur
    return float(dist[n]) / max(1, n)


def frame_energy(wave, frame_len: int) -> np.ndarray:
    """Mean-square energy over non-overlapping frames; the trailing partial
    frame is averaged over its own length."""
    w = _as_wave(wave)
    if w.size == 0:
        raise ShapeError("frame_energy needs a nonempty wave")
    if frame_len < 1:
        raise ShapeError("frame_len must be >= 1")
    full = w.size // frame_len
    sq = w * w
    out = []
    if full:
        out.append(sq[: full * frame_len].reshape(full, frame_len).mean(axis=1))
    rem = w.size - full * frame_len
    if rem:
        out.append(np.array([sq[full * frame_len :].mean()]))
    return np.concatenate(out) if len(out) > 1 else out[0]
