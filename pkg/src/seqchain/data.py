"""Synthetic corpus: harmonic tone "speakers" with a pitch-interval token code.

Each token is rendered as two equal halves: the first at the speaker's base
pitch, the second shifted by the token's semitone jump.  Token identity is
the interval, not the absolute pitch, so the code transfers to held-out
speakers.  Sources are mixed at controlled SNR offsets relative to source 1
and peak-normalized together with their references, which keeps the
per-frame energy threshold meaningful.

Waveforms are header-less little-endian float32 files next to a JSON
manifest; everything is deterministic given the config seed.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .constants import NUM_TOKENS, SAMPLE_RATE, TOKEN_SECONDS
from .errors import ConfigError, DataError

MANIFEST_VERSION = 1

# token id -> pitch jump (semitones) between the two halves
TOKEN_JUMPS = {1: 2, 2: -2, 3: 4, 4: -4, 5: 6, 6: -6, 7: 8, 8: -8}


@dataclass(frozen=True)
class SpeakerProfile:
    seed: int
    base_f0: float
    harmonic_weights: tuple
    jitter_semitones: float


@dataclass
class SampleRecord:
    id: str
    mixture: str
    sources: list
    tokens: list
    snr_offsets: list
    count: int
    split: str
    profiles: list

    def to_json(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_json(d: dict) -> "SampleRecord":
        return SampleRecord(**d)


@dataclass
class DataConfig:
    out_dir: str = "data"
    kind: str = "mix"  # "mix" or "denoise"
    seed: int = 0
    sample_rate: int = SAMPLE_RATE
    token_seconds: float = TOKEN_SECONDS
    vocab: int = NUM_TOKENS + 1  # ids 1..NUM_TOKENS; 0 is the blank
    train_items: int = 200
    valid_items: int = 40
    test_items: int = 40
    count_weights: dict = field(default_factory=lambda: {2: 1.0})
    min_tokens: int = 2
    max_tokens: int = 4
    snr_low: float = 0.0
    snr_high: float = 10.0
    profiles_per_split: int = 8
    min_gap_semitones: float = 4.0
    harmonics: int = 4
    f0_low: float = 160.0
    f0_high: float = 420.0
    noise_snr_low: float = 5.0
    noise_snr_high: float = 15.0

    def __post_init__(self):
        if self.kind not in ("mix", "denoise"):
            raise ConfigError(f"unknown dataset kind {self.kind!r}")
        if not 1 <= self.min_tokens <= self.max_tokens:
            raise ConfigError("need 1 <= min_tokens <= max_tokens")
        if self.vocab < 2 or self.vocab > NUM_TOKENS + 1:
            raise ConfigError(f"vocab must be in [2, {NUM_TOKENS + 1}]")
        if not self.count_weights:
            raise ConfigError("count_weights must not be empty")
        for c, w in self.count_weights.items():
            if int(c) < 1 or w < 0:
                raise ConfigError("speaker counts must be >= 1 with weights >= 0")
        if sum(self.count_weights.values()) <= 0:
            raise ConfigError("count_weights must have positive mass")
        if self.snr_high < self.snr_low:
            raise ConfigError("snr_high must be >= snr_low")

    @property
    def token_samples(self) -> int:
        return int(round(self.token_seconds * self.sample_rate))


def profile_from_seed(seed: int, cfg: DataConfig) -> SpeakerProfile:
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    base = float(rng.uniform(cfg.f0_low, cfg.f0_high))
    weights = rng.uniform(0.3, 1.0, size=cfg.harmonics) / (1.0 + np.arange(cfg.harmonics))
    jitter = float(rng.uniform(0.05, 0.15))
    return SpeakerProfile(
        seed=int(seed),
        base_f0=base,
        harmonic_weights=tuple(float(w) for w in weights),
        jitter_semitones=jitter,
    )


def _semitones(ratio: float) -> float:
    return 12.0 * np.log2(ratio)


def synth_utterance(profile: SpeakerProfile, tokens: Sequence[int], cfg: DataConfig) -> np.ndarray:
    """Render tokens as harmonic two-half segments; peak-normalized float32.

    Deterministic given (profile, tokens, cfg).  Empty token lists yield one
    token-length of silence so downstream shape rules keep working.
    """
    if cfg.vocab < 2:
        raise ConfigError("vocabulary must contain at least one non-blank token")
    n = cfg.token_samples
    if not tokens:
        return np.zeros(n, dtype=np.float32)
    for t in tokens:
        if int(t) not in TOKEN_JUMPS or int(t) >= cfg.vocab:
            raise DataError(f"token {t} outside vocabulary")
    rng = np.random.default_rng(np.random.SeedSequence((profile.seed, *[int(t) for t in tokens])))
    sr = cfg.sample_rate
    half = n // 2
    weights = np.asarray(profile.harmonic_weights)
    out = np.empty(len(tokens) * n, dtype=np.float64)
    phases = rng.uniform(0.0, 2 * np.pi, size=weights.size)
    ramp = min(int(0.005 * sr), half // 2)
    env = np.ones(half)
    if ramp > 0:
        edge = 0.5 - 0.5 * np.cos(np.linspace(0.0, np.pi, ramp))
        env[:ramp] = edge
        env[-ramp:] = edge[::-1]
    phase_acc = phases.copy()
    pos = 0
    for tok in tokens:
        jump = TOKEN_JUMPS[int(tok)]
        jit = rng.uniform(-profile.jitter_semitones, profile.jitter_semitones)
        f_first = profile.base_f0 * 2.0 ** (jit / 12.0)
        f_second = f_first * 2.0 ** (jump / 12.0)
        amp = rng.uniform(0.7, 1.0)
        for f in (f_first, f_second):
            seg = np.zeros(half)
            for k, w in enumerate(weights):
                fk = f * (k + 1)
                if fk >= sr / 2:
                    continue
                t_idx = np.arange(1, half + 1)
                seg += w * np.sin(phase_acc[k] + 2 * np.pi * fk / sr * t_idx)
                phase_acc[k] = (phase_acc[k] + 2 * np.pi * fk / sr * half) % (2 * np.pi)
            out[pos : pos + half] = amp * env * seg
            pos += half
        if n % 2:  # odd token length: keep the grid exact with one pad sample
            out[pos] = 0.0
            pos += 1
    peak = np.max(np.abs(out))
    if peak > 0:
        out = out / peak
    return out.astype(np.float32)


def mix_at_snr(sources: Sequence[np.ndarray], snr_offsets_db: Sequence[float]):
    """Scale sources so 10*log10(P1/Pk) hits each requested offset, sum, and
    peak-normalize mixture and references with one shared scalar."""
    if len(sources) < 1:
        raise DataError("mix_at_snr needs at least one source")
    if len(sources) != len(snr_offsets_db):
        raise DataError("one SNR offset per source required")
    longest = max(len(s) for s in sources)
    padded = []
    for s in sources:
        s = np.asarray(s, dtype=np.float64)
        if np.max(np.abs(s)) == 0.0:
            raise DataError("all-zero source cannot be mixed at a target SNR")
        padded.append(np.pad(s, (0, longest - len(s))))
    p1 = float(np.mean(padded[0] ** 2))
    scaled = []
    for s, off in zip(padded, snr_offsets_db):
        pk = float(np.mean(s**2))
        a = np.sqrt(p1 / pk) * 10.0 ** (-float(off) / 20.0)
        scaled.append(a * s)
    mixture = np.sum(scaled, axis=0)
    peak = float(np.max(np.abs(mixture)))
    if peak > 0:
        norm = 1.0 / peak
        mixture = mixture * norm
        scaled = [s * norm for s in scaled]
    return mixture.astype(np.float32), [s.astype(np.float32) for s in scaled]


# ---------------------------------------------------------------------------
# dataset building

_SPLITS = ("train", "valid", "test")


def _profile_seeds(cfg: DataConfig, split_idx: int) -> list:
    base = cfg.seed * 97_003 + (split_idx + 1) * 1_000_003
    return [base + i for i in range(cfg.profiles_per_split)]


def _pick_profiles(rng, profiles: list, n: int, min_gap: float) -> list:
    """Draw n profiles with pairwise base-pitch gaps >= min_gap semitones;
    falls back to the most spread subset if rejection keeps failing."""
    if n > len(profiles):
        raise ConfigError(f"need {n} profiles but only {len(profiles)} per split")

    def ok(subset):
        for i in range(len(subset)):
            for j in range(i + 1, len(subset)):
                gap = abs(_semitones(subset[i].base_f0 / subset[j].base_f0))
                if gap < min_gap:
                    return False
        return True

    for _ in range(200):
        idx = rng.choice(len(profiles), size=n, replace=False)
        subset = [profiles[i] for i in idx]
        if ok(subset):
            return subset
    # farthest-point fallback: start from the extremes of the pitch range
    order = sorted(profiles, key=lambda p: p.base_f0)
    chosen = [order[0], order[-1]][:n]
    pool = [p for p in order if p not in chosen]
    while len(chosen) < n:
        best = max(
            pool,
            key=lambda p: min(abs(_semitones(p.base_f0 / c.base_f0)) for c in chosen),
        )
        chosen.append(best)
        pool.remove(best)
    return chosen


def _write_wave(path: str, wave: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(np.asarray(wave, dtype="<f4").tobytes())


def load_wave(path: str) -> np.ndarray:
    if not os.path.exists(path):
        raise DataError(f"missing waveform file {path}")
    return np.fromfile(path, dtype="<f4").astype(np.float32)


def _sample_count(rng, cfg: DataConfig) -> int:
    counts = sorted(int(c) for c in cfg.count_weights)
    weights = np.array([cfg.count_weights[c] for c in counts], dtype=np.float64)
    weights = weights / weights.sum()
    return int(rng.choice(counts, p=weights))


def build_dataset(cfg: DataConfig) -> str:
    """Write waveforms plus manifest.json under cfg.out_dir; returns the
    manifest path.  Splits use disjoint profile seeds, so test "speakers"
    are never seen in training."""
    if cfg.kind == "denoise":
        return add_noise_corpus(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    records = []
    sizes = {"train": cfg.train_items, "valid": cfg.valid_items, "test": cfg.test_items}
    for split_idx, split in enumerate(_SPLITS):
        os.makedirs(os.path.join(cfg.out_dir, split), exist_ok=True)
        profiles = [profile_from_seed(s, cfg) for s in _profile_seeds(cfg, split_idx)]
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, split_idx, 77)))
        for i in range(sizes[split]):
            n = _sample_count(rng, cfg)
            chosen = _pick_profiles(rng, profiles, n, cfg.min_gap_semitones)
            tokens = [
                list(
                    rng.integers(1, cfg.vocab, size=int(rng.integers(cfg.min_tokens, cfg.max_tokens + 1)))
                )
                for _ in range(n)
            ]
            offsets = [0.0] + [float(rng.uniform(cfg.snr_low, cfg.snr_high)) for _ in range(n - 1)]
            waves = [synth_utterance(p, t, cfg) for p, t in zip(chosen, tokens)]
            mixture, refs = mix_at_snr(waves, offsets)
            rec_id = f"{split}/{i:05d}"
            mix_rel = f"{split}/{i:05d}_mix.f32"
            src_rel = [f"{split}/{i:05d}_s{k}.f32" for k in range(n)]
            _write_wave(os.path.join(cfg.out_dir, mix_rel), mixture)
            for rel, ref in zip(src_rel, refs):
                _write_wave(os.path.join(cfg.out_dir, rel), ref)
            records.append(
                SampleRecord(
                    id=rec_id,
                    mixture=mix_rel,
                    sources=src_rel,
                    tokens=[[int(t) for t in seq] for seq in tokens],
                    snr_offsets=offsets,
                    count=n,
                    split=split,
                    profiles=[p.seed for p in chosen],
                )
            )
    return _write_manifest(cfg, records, kind="mix")


def add_noise_corpus(cfg: DataConfig) -> str:
    """Denoising pairs: clean harmonic utterance + AR(1)-filtered noise at a
    requested SNR, normalized jointly."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    records = []
    sizes = {"train": cfg.train_items, "valid": cfg.valid_items, "test": cfg.test_items}
    for split_idx, split in enumerate(_SPLITS):
        os.makedirs(os.path.join(cfg.out_dir, split), exist_ok=True)
        profiles = [profile_from_seed(s, cfg) for s in _profile_seeds(cfg, split_idx)]
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, split_idx, 78)))
        for i in range(sizes[split]):
            profile = profiles[int(rng.integers(0, len(profiles)))]
            tokens = list(
                rng.integers(1, cfg.vocab, size=int(rng.integers(cfg.min_tokens, cfg.max_tokens + 1)))
            )
            clean = synth_utterance(profile, tokens, cfg).astype(np.float64)
            snr = float(rng.uniform(cfg.noise_snr_low, cfg.noise_snr_high))
            white = rng.normal(size=clean.size)
            a = float(rng.uniform(0.4, 0.9))
            noise = np.empty_like(white)
            acc = 0.0
            for t in range(white.size):
                acc = a * acc + white[t]
                noise[t] = acc
            # hard limiter bounds the crest factor near 1.4 so a +60 dB pair
            # keeps every sample within 1e-3 of the clean peak
            rms = float(np.sqrt(np.mean(noise**2)))
            noise = np.clip(noise, -rms, rms)
            p_clean = float(np.mean(clean**2))
            p_noise = float(np.mean(noise**2))
            noise *= np.sqrt(p_clean / p_noise) * 10.0 ** (-snr / 20.0)
            noisy = clean + noise
            peak = float(np.max(np.abs(noisy)))
            if peak > 0:
                noisy /= peak
                clean = clean / peak
            rec_id = f"{split}/{i:05d}"
            noisy_rel = f"{split}/{i:05d}_noisy.f32"
            clean_rel = f"{split}/{i:05d}_clean.f32"
            _write_wave(os.path.join(cfg.out_dir, noisy_rel), noisy)
            _write_wave(os.path.join(cfg.out_dir, clean_rel), clean)
            records.append(
                SampleRecord(
                    id=rec_id,
                    mixture=noisy_rel,
                    sources=[clean_rel],
                    tokens=[[int(t) for t in tokens]],
                    snr_offsets=[snr],
                    count=1,
                    split=split,
                    profiles=[profile.seed],
                )
            )
    return _write_manifest(cfg, records, kind="denoise")


def _write_manifest(cfg: DataConfig, records: list, kind: str) -> str:
    manifest = {
        "version": MANIFEST_VERSION,
        "kind": kind,
        "sample_rate": cfg.sample_rate,
        "token_seconds": cfg.token_seconds,
        "vocab": cfg.vocab,
        "records": [r.to_json() for r in records],
    }
    path = os.path.join(cfg.out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path


def load_manifest(path: str) -> dict:
    if not os.path.exists(path):
        raise DataError(f"missing manifest {path}")
    try:
        with open(path) as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as e:
        raise DataError(f"malformed manifest {path}: {e}") from e
    if manifest.get("version") != MANIFEST_VERSION:
        raise DataError(f"unsupported manifest version in {path}")
    manifest["records"] = [SampleRecord.from_json(r) for r in manifest["records"]]
    manifest["root"] = os.path.dirname(os.path.abspath(path))
    return manifest


def record_waves(manifest: dict, rec: SampleRecord):
    root = manifest["root"]
    mixture = load_wave(os.path.join(root, rec.mixture))
    sources = [load_wave(os.path.join(root, rel)) for rel in rec.sources]
    return mixture, sources


def dataset_digest(manifest_path: str) -> str:
    """sha256 over the manifest and every referenced waveform, in manifest
    order; regeneration with the same config must reproduce it."""
    manifest = load_manifest(manifest_path)
    h = hashlib.sha256()
    with open(manifest_path, "rb") as fh:
        h.update(fh.read())
    root = manifest["root"]
    for rec in manifest["records"]:
        for rel in [rec.mixture] + list(rec.sources):
            with open(os.path.join(root, rel), "rb") as fh:
                h.update(fh.read())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# task well-posedness: the trivial interval decoder


def _autocorr_f0(segment: np.ndarray, sr: int, f_lo=90.0, f_hi=700.0) -> float:
    """Fundamental estimate by normalized autocorrelation peak with parabolic
    refinement, over the middle 80% of the segment."""
    n = segment.size
    trim = n // 10
    x = segment[trim : n - trim].astype(np.float64)
    x = x - x.mean()
    if np.max(np.abs(x)) == 0:
        return 0.0
    lo = max(2, int(sr / f_hi))
    hi = min(x.size - 2, int(sr / f_lo))
    full = np.correlate(x, x, mode="full")[x.size - 1 :]
    if full[0] <= 0 or hi <= lo:
        return 0.0
    ac = full / full[0]
    window = ac[lo : hi + 1]
    best = float(window.max())
    # period multiples all peak near the max; take the shortest strong local
    # peak so subharmonics cannot steal the estimate
    lag = lo + int(np.argmax(window))
    for cand in range(lo, hi + 1):
        if ac[cand] >= 0.85 * best and ac[cand] >= ac[cand - 1] and ac[cand] >= ac[cand + 1]:
            lag = cand
            break
    y0, y1, y2 = ac[lag - 1], ac[lag], ac[lag + 1]
    denom = y0 - 2 * y1 + y2
    shift = 0.0 if denom == 0 else 0.5 * (y0 - y2) / denom
    return sr / (lag + float(np.clip(shift, -0.5, 0.5)))


def pitch_template_decode(wave: np.ndarray, cfg: DataConfig) -> list:
    """Decode tokens from a single-source utterance by measuring the pitch
    interval between each token's two halves and snapping to the code."""
    n = cfg.token_samples
    half = n // 2
    wave = np.asarray(wave, dtype=np.float64)
    num_tokens = wave.size // n
    out = []
    jumps = sorted(TOKEN_JUMPS.items())
    for i in range(num_tokens):
        seg = wave[i * n : (i + 1) * n]
        f1 = _autocorr_f0(seg[:half], cfg.sample_rate)
        f2 = _autocorr_f0(seg[half : 2 * half], cfg.sample_rate)
        if f1 <= 0 or f2 <= 0:
            continue
        interval = _semitones(f2 / f1)
        tok = min(jumps, key=lambda kv: abs(kv[1] - interval))[0]
        out.append(tok)
    return out
