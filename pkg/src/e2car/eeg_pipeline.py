"""Single-channel EEG preparation: resample, detrend, band-pass, trim, segment, normalize.

The driver :func:`preprocess_pair` applies the steps in a fixed order::

    resample -> detrend -> band-pass (clean only) -> trim -> segment -> normalize

:func:`synthesize` stands in for recorded corpora: band-limited pink-noise
EEG with an alpha rhythm, plus one of three synthetic artifact families mixed
in at a requested signal-to-artifact ratio.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import signal

log = logging.getLogger(__name__)

TARGET_FS = 200.0
SEGMENT_LEN = 800
SEGMENT_HOP = 400
DEFAULT_TRIM_S = 3.0
BANDPASS_TAPS = 401
BANDPASS_EDGES = (1.0, 50.0)
MAX_RATIO_TERM = 1000

ARTIFACT_KINDS = ("eog", "emg", "motion", "none")

DATASET_MAGIC = b"E2CD"
DATASET_VERSION = 1


class PipelineError(ValueError):
    """Bad input to a pipeline stage (rate, length, ordering)."""


class DatasetFormatError(ValueError):
    """A dataset or CSV file could not be parsed."""


@dataclass(frozen=True)
class Recording:
    id: str
    fs: float
    samples: np.ndarray
    kind: str = "clean"
    source: str = "synthetic"

    def __post_init__(self):
        s = np.ascontiguousarray(self.samples, dtype=np.float32)
        object.__setattr__(self, "samples", s)
        if s.ndim != 1 or s.size == 0:
            raise PipelineError(f"recording {self.id!r} needs a non-empty 1-D sample array")
        if not self.fs > 0:
            raise PipelineError(f"recording {self.id!r}: fs must be positive, got {self.fs}")
        if not np.all(np.isfinite(s)):
            raise PipelineError(f"recording {self.id!r} contains non-finite samples")
        if self.kind not in ("clean", "contaminated"):
            raise PipelineError(f"unknown recording kind {self.kind!r}")
        if self.source not in ("synthetic", "imported"):
            raise PipelineError(f"unknown recording source {self.source!r}")

    def __len__(self):
        return self.samples.size

    def with_samples(self, samples, fs: float | None = None) -> "Recording":
        return replace(self, samples=samples, fs=self.fs if fs is None else fs)


@dataclass(frozen=True)
class SegmentPair:
    contaminated: np.ndarray
    clean: np.ndarray
    norm_min: float
    norm_max: float
    origin_id: str = ""
    start: int = 0
    degenerate: bool = False

    def __post_init__(self):
        for name in ("contaminated", "clean"):
            a = np.ascontiguousarray(getattr(self, name), dtype=np.float32)
            if a.shape != (SEGMENT_LEN,):
                raise PipelineError(f"{name} segment must have {SEGMENT_LEN} samples, got {a.shape}")
            object.__setattr__(self, name, a)
        if self.norm_max < self.norm_min:
            raise PipelineError("norm_max must be >= norm_min")


# --- resampling ---------------------------------------------------------------


def _rational_ratio(fs: float, target_fs: float) -> tuple[int, int]:
    exact = target_fs / fs
    ratio = Fraction(exact).limit_denominator(MAX_RATIO_TERM)
    p, q = ratio.numerator, ratio.denominator
    if p > MAX_RATIO_TERM or q > MAX_RATIO_TERM or abs(p / q - exact) > 1e-9 * exact:
        raise PipelineError(
            f"cannot resample {fs} Hz -> {target_fs} Hz: ratio is not p/q with p, q <= {MAX_RATIO_TERM}"
        )
    return p, q


def resample_filter(p: int, q: int, fs: float, target_fs: float) -> np.ndarray:
    """Hamming-windowed sinc low-pass at the upsampled rate, gain ``p``."""
    cutoff = min(fs, target_fs) / 2 * 0.9
    taps = 10 * max(p, q) + 1
    return signal.firwin(taps, cutoff, window="hamming", fs=fs * p) * p


def resample(rec: Recording, target_fs: float = TARGET_FS) -> Recording:
    """Polyphase rational resampling with delay compensation."""
    p, q = _rational_ratio(rec.fs, target_fs)
    if p == q == 1:
        return rec.with_samples(rec.samples.copy(), float(target_fs))
    h = resample_filter(p, q, rec.fs, target_fs)
    delay = (h.size - 1) // 2
    # prepend zeros so the filter delay lands on the decimation grid
    lead = (-delay) % q
    h = np.concatenate([np.zeros(lead), h])
    first = (delay + lead) // q
    n_out = -(-rec.samples.size * p // q)
    y = signal.upfirdn(h, rec.samples.astype(np.float64), p, q)[first : first + n_out]
    return rec.with_samples(y.astype(np.float32), float(target_fs))


# --- detrend / filter / trim ----------------------------------------------------


def detrend(rec: Recording) -> Recording:
    """Subtract the least-squares straight line fitted to the whole recording."""
    if rec.samples.size < 2:
        raise PipelineError("detrend needs at least 2 samples")
    y = signal.detrend(rec.samples.astype(np.float64), type="linear")
    return rec.with_samples(y.astype(np.float32))


def bandpass_taps(fs: float = TARGET_FS) -> np.ndarray:
    h = signal.firwin(BANDPASS_TAPS, BANDPASS_EDGES, pass_zero=False, window="hamming", fs=fs)
    return (h + h[::-1]) / 2  # exact symmetry, not just to rounding


def bandpass(rec: Recording) -> Recording:
    """Zero-phase 1-50 Hz FIR band-pass (401 taps, output re-centred by 200 samples)."""
    if rec.fs != TARGET_FS:
        raise PipelineError(f"bandpass expects fs={TARGET_FS:g} Hz, got {rec.fs:g}")
    y = np.convolve(rec.samples.astype(np.float64), bandpass_taps(rec.fs), mode="same")
    return rec.with_samples(y.astype(np.float32))


def trim_edges(rec: Recording, seconds: float = DEFAULT_TRIM_S) -> Recording:
    n = int(round(seconds * rec.fs))
    if seconds < 0:
        raise PipelineError("trim seconds must be >= 0")
    if rec.samples.size <= 2 * n:
        raise PipelineError(
            f"recording {rec.id!r} has {rec.samples.size} samples; cannot trim {n} from each end"
        )
    return rec.with_samples(rec.samples[n : rec.samples.size - n].copy())


# --- segmentation / normalization -------------------------------------------------


def segment_starts(n: int, window: int = SEGMENT_LEN, hop: int = SEGMENT_HOP) -> range:
    if n < window:
        raise PipelineError(f"need at least {window} samples for one segment, got {n}")
    return range(0, (n - window) // hop * hop + 1, hop)


def normalize(contaminated_window, clean_window, origin_id: str = "", start: int = 0) -> SegmentPair:
    """Min-max scale both windows with the contaminated window's range.

    A flat contaminated window maps both members to 0.5 and sets ``degenerate``.
    """
    c = np.asarray(contaminated_window, dtype=np.float64)
    k = np.asarray(clean_window, dtype=np.float64)
    lo, hi = float(np.float32(c.min())), float(np.float32(c.max()))
    if hi <= lo:
        half = np.full(SEGMENT_LEN, 0.5, np.float32)
        return SegmentPair(half, half.copy(), lo, lo, origin_id, start, degenerate=True)
    span = hi - lo
    cn = np.clip((c - lo) / span, 0.0, 1.0)
    return SegmentPair(cn, (k - lo) / span, lo, hi, origin_id, start)


def denormalize(values, norm_min: float, norm_max: float) -> np.ndarray:
    return np.asarray(values, dtype=np.float64) * (norm_max - norm_min) + norm_min


def segment(clean: Recording, contaminated: Recording) -> list[SegmentPair]:
    """4 s windows with 50% overlap, each pair normalized by its contaminated range."""
    for r in (clean, contaminated):
        if r.fs != TARGET_FS:
            raise PipelineError(f"segment expects {TARGET_FS:g} Hz recordings, {r.id!r} is {r.fs:g} Hz")
    if clean.samples.size != contaminated.samples.size:
        raise PipelineError(
            f"clean/contaminated length mismatch: {clean.samples.size} vs {contaminated.samples.size}"
        )
    pairs = []
    for s in segment_starts(clean.samples.size):
        pairs.append(
            normalize(
                contaminated.samples[s : s + SEGMENT_LEN],
                clean.samples[s : s + SEGMENT_LEN],
                contaminated.id,
                s,
            )
        )
    n_bad = sum(p.degenerate for p in pairs)
    if n_bad:
        log.warning("%s: %d degenerate segment(s) flagged", contaminated.id, n_bad)
    return pairs


def preprocess_pair(clean: Recording, contaminated: Recording, trim_s: float = DEFAULT_TRIM_S,
                    clean_task: bool = False):
    """Full preparation of one aligned clean/contaminated recording pair.

    Only the clean member is band-passed. For the clean reconstruction task
    (``clean_task``) the filtered clean signal is both input and target.
    """
    clean = bandpass(detrend(resample(clean)))
    if clean_task:
        contaminated = replace(clean, kind="contaminated")
    else:
        contaminated = detrend(resample(contaminated))
    return segment(trim_edges(clean, trim_s), trim_edges(contaminated, trim_s))


# --- synthetic recordings ---------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    duration_s: float = 60.0
    artifact: str = "eog"
    snr_db: float = 0.0
    native_fs: float = 256.0

    def __post_init__(self):
        if self.artifact not in ARTIFACT_KINDS:
            raise PipelineError(f"unknown artifact kind {self.artifact!r}; expected one of {ARTIFACT_KINDS}")
        if not self.duration_s >= 14:
            raise PipelineError(f"duration_s must be >= 14 s, got {self.duration_s}")
        if self.artifact == "none":
            object.__setattr__(self, "snr_db", math.inf)
        elif not math.isfinite(self.snr_db):
            raise PipelineError("snr_db must be finite when an artifact is requested")
        if not self.native_fs > 0:
            raise PipelineError("native_fs must be positive")


def _band_limit(x: np.ndarray, fs: float, lo: float, hi: float, pink: bool = False) -> np.ndarray:
    spec = np.fft.rfft(x)
    f = np.fft.rfftfreq(x.size, 1.0 / fs)
    gain = ((f >= lo) & (f <= hi)).astype(np.float64)
    if pink:
        gain[1:] /= np.sqrt(f[1:])
    return np.fft.irfft(spec * gain, x.size)


def _rms(x) -> float:
    return float(np.sqrt(np.mean(np.square(x, dtype=np.float64))))


def _clean_eeg(rng, n: int, fs: float) -> np.ndarray:
    pink = _band_limit(rng.standard_normal(n), fs, 1.0, 50.0, pink=True)
    pink /= _rms(pink)
    t = np.arange(n) / fs
    alpha = rng.uniform(0.5, 1.5) * np.sin(2 * np.pi * rng.uniform(8.0, 13.0) * t + rng.uniform(0, 2 * np.pi))
    return 15.0 * (pink + alpha)  # microvolts


def _event_times(rng, rate: float, duration: float) -> np.ndarray:
    count = max(1, rng.poisson(rate * duration))
    return np.sort(rng.uniform(0.0, duration, count))


def _eog(rng, n: int, fs: float) -> np.ndarray:
    t = np.arange(n) / fs
    out = np.zeros(n)
    for t0 in _event_times(rng, 0.25, n / fs):
        sigma = rng.uniform(0.3, 1.0) / 2.355  # width taken as FWHM
        out += rng.uniform(0.5, 1.0) * np.exp(-0.5 * ((t - t0) / sigma) ** 2)
    return _band_limit(out, fs, 0.0, 5.0)


def _emg(rng, n: int, fs: float) -> np.ndarray:
    noise = _band_limit(rng.standard_normal(n), fs, 20.0, min(95.0, 0.45 * fs))
    out = np.zeros(n)
    for t0 in _event_times(rng, 0.5, n / fs):
        length = max(2, int(round(rng.uniform(0.2, 0.8) * fs)))
        s = int(t0 * fs)
        e = min(n, s + length)
        env = signal.windows.tukey(length, alpha=0.5)[: e - s]
        out[s:e] += rng.uniform(0.5, 1.0) * env * noise[s:e]
    return out


def _motion(rng, n: int, fs: float) -> np.ndarray:
    walk = np.cumsum(rng.standard_normal(n))
    return _band_limit(walk, fs, 0.5, 30.0)


_ARTIFACTS = {"eog": _eog, "emg": _emg, "motion": _motion}


def synthesize(config: SynthConfig) -> tuple[Recording, Recording]:
    """Deterministic (clean, contaminated) pair at ``config.native_fs``.

    ``contaminated = clean + scale * artifact`` with ``scale`` chosen so that
    ``20*log10(rms(clean) / rms(scale * artifact)) == snr_db``.
    """
    rng = np.random.default_rng(config.seed)
    fs = config.native_fs
    n = int(round(config.duration_s * fs))
    clean = _clean_eeg(rng, n, fs).astype(np.float32)
    rid = f"synth-{config.artifact}-seed{config.seed}"
    if config.artifact == "none":
        contaminated = clean.copy()
    else:
        art = _ARTIFACTS[config.artifact](rng, n, fs)
        scale = _rms(clean) / (_rms(art) * 10 ** (config.snr_db / 20))
        contaminated = (clean + scale * art).astype(np.float32)
    return (
        Recording(rid, fs, clean, "clean", "synthetic"),
        Recording(rid, fs, contaminated, "contaminated", "synthetic"),
    )


def measured_snr_db(clean: Recording, contaminated: Recording) -> float:
    noise = contaminated.samples.astype(np.float64) - clean.samples.astype(np.float64)
    if _rms(noise) == 0:
        return math.inf
    return 20 * math.log10(_rms(clean.samples) / _rms(noise))


def synthesize_dataset(
    artifact: str,
    n_pairs: int,
    snr_db: float = 0.0,
    seed: int = 0,
    duration_s: float = 60.0,
    native_fs: float = 256.0,
    trim_s: float = DEFAULT_TRIM_S,
) -> list[SegmentPair]:
    """Concatenate preprocessed segments from recordings seeded ``seed, seed+1, ...``."""
    pairs: list[SegmentPair] = []
    k = 0
    while len(pairs) < n_pairs:
        cfg = SynthConfig(seed + k, duration_s, artifact, snr_db, native_fs)
        recs = synthesize(cfg)
        pairs.extend(p for p in preprocess_pair(*recs, trim_s, artifact == "none") if not p.degenerate)
        k += 1
    return pairs[:n_pairs]


# --- file formats -----------------------------------------------------------------


def import_csv(path, fs: float | None = None, kind: str = "contaminated") -> Recording:
    """One decimal sample per line; an optional first line ``# fs=<Hz>`` sets the rate."""
    path = Path(path)
    header_fs = None
    values = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text:
                continue
            if text.startswith("#"):
                key, _, val = text[1:].strip().partition("=")
                if key.strip() == "fs" and lineno == 1:
                    try:
                        header_fs = float(val)
                    except ValueError:
                        raise DatasetFormatError(f"{path}:{lineno}: bad fs header {text!r}") from None
                    continue
                raise DatasetFormatError(f"{path}:{lineno}: unexpected comment {text!r}")
            try:
                values.append(float(text))
            except ValueError:
                raise DatasetFormatError(f"{path}:{lineno}: cannot parse {text!r} as a number") from None
    rate = fs if fs is not None else header_fs
    if rate is None:
        raise DatasetFormatError(f"{path}: no sampling rate given and no '# fs=<Hz>' header")
    if not values:
        raise DatasetFormatError(f"{path}: no samples")
    return Recording(path.stem, float(rate), np.array(values), kind, "imported")


def export_csv(rec: Recording, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"# fs={rec.fs:g}\n")
        fh.writelines(f"{float(v)!r}\n" for v in rec.samples)



def dataset_to_bytes(pairs: Sequence[SegmentPair]) -> bytes:
    out = bytearray(DATASET_MAGIC)
    out += struct.pack("<HI", DATASET_VERSION, len(pairs))
    for p in pairs:
        rid = p.origin_id.encode("utf-8")
        out += struct.pack("<H", len(rid)) + rid
        out += struct.pack("<IffB", p.start, p.norm_min, p.norm_max, int(p.degenerate))
        out += np.asarray(p.contaminated, "<f4").tobytes()
        out += np.asarray(p.clean, "<f4").tobytes()
    return bytes(out)


def dataset_from_bytes(data: bytes) -> list[SegmentPair]:
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise DatasetFormatError(f"truncated dataset: need {n} bytes for {what} at offset {pos}")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    if take(4, "magic") != DATASET_MAGIC:
        raise DatasetFormatError(f"bad magic, expected {DATASET_MAGIC!r}")
    version, count = struct.unpack("<HI", take(6, "header"))
    if version != DATASET_VERSION:
        raise DatasetFormatError(f"unsupported dataset version {version}")
    pairs = []
    nbytes = 4 * SEGMENT_LEN
    for i in range(count):
        (idlen,) = struct.unpack("<H", take(2, f"pair {i} id length"))
        rid = take(idlen, f"pair {i} id").decode("utf-8")
        start, lo, hi, flag = struct.unpack("<IffB", take(13, f"pair {i} fields"))
        cont = np.frombuffer(take(nbytes, f"pair {i} contaminated"), "<f4")
        clean = np.frombuffer(take(nbytes, f"pair {i} clean"), "<f4")
        pairs.append(SegmentPair(cont, clean, lo, hi, rid, start, bool(flag)))
    if pos != len(data):
        raise DatasetFormatError(f"{len(data) - pos} trailing bytes after {count} pairs")
    return pairs


def write_dataset(path, pairs: Sequence[SegmentPair]) -> None:
    Path(path).write_bytes(dataset_to_bytes(pairs))


def read_dataset(path) -> list[SegmentPair]:
    return dataset_from_bytes(Path(path).read_bytes())


def stack_pairs(pairs: Iterable[SegmentPair]) -> tuple[np.ndarray, np.ndarray]:
    """``(contaminated, clean)`` as ``[N, 800]`` float32 arrays."""
    pairs = list(pairs)
    return (
        np.stack([p.contaminated for p in pairs]),
        np.stack([p.clean for p in pairs]),
    )
