"""Synthetic score-ordered datasets, grade splits, scaling and CSV I/O.

The generator draws a latent quality z ~ U[0, 1], sets the score to 100 z,
and maps z through a fixed random sinusoid mixture into input space. Each
grade band applies its own small affine change to the inputs, so the input
distribution drifts from session to session while the score scale stays
global. The split sorts by score and cuts T contiguous equal-count grade
bands; each band contributes a few-shot training split, the remainder is
held out, and the first band's held-out pool doubles as base-session
fine-tuning data.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .models import make_rng

STREAM_SYNTH = 1
STREAM_SPLIT = 2
STREAM_NOISE = 3

_MIX_COMPONENTS = 6


class CsvFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Sample:
    sample_id: str
    x: np.ndarray
    score: float
    grade: int = 0


@dataclass(frozen=True)
class Dataset:
    samples: tuple[Sample, ...]
    input_width: int
    score_range: tuple[float, float]
    feature_mode: bool = False


@dataclass(frozen=True)
class DataConfig:
    n: int = 500
    d_x: int = 32
    T: int = 5
    shots: int = 10
    noise_x: float = 0.05
    drift: float = 0.3
    label_noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.T < 2:
            raise ValueError(f"need at least 2 sessions, got T={self.T}")
        if self.n < self.T:
            raise ValueError(f"n={self.n} smaller than T={self.T}")
        if self.shots < 1:
            raise ValueError(f"shots must be >= 1, got {self.shots}")
        if self.d_x < 1:
            raise ValueError(f"d_x must be >= 1, got {self.d_x}")
        if self.noise_x < 0 or self.drift < 0 or self.label_noise < 0:
            raise ValueError("noise_x, drift and label_noise must be >= 0")


def generate_synthetic(cfg: DataConfig) -> Dataset:
    """Seed-deterministic synthetic dataset with per-grade input drift."""
    rng = make_rng(cfg.seed, STREAM_SYNTH)
    z = rng.uniform(0.0, 1.0, size=cfg.n)
    freqs = rng.uniform(0.5, 8.0, size=_MIX_COMPONENTS)
    amps = rng.normal(0.0, 1.0, size=(cfg.d_x, _MIX_COMPONENTS)) / np.sqrt(_MIX_COMPONENTS)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(cfg.d_x, _MIX_COMPONENTS))
    shift = rng.normal(0.0, 1.0, size=(cfg.T, cfg.d_x))
    gain = rng.uniform(-0.5, 0.5, size=(cfg.T, cfg.d_x))
    noise = rng.normal(0.0, 1.0, size=(cfg.n, cfg.d_x))
    samples = []
    for i in range(cfg.n):
        base = (amps * np.sin(freqs[None, :] * z[i] + phases)).sum(axis=1)
        g = min(int(z[i] * cfg.T), cfg.T - 1)
        x = base * (1.0 + cfg.drift * gain[g]) + cfg.drift * shift[g] \
            + cfg.noise_x * noise[i]
        samples.append(Sample(sample_id=f"s{i:05d}", x=x, score=100.0 * z[i]))
    return Dataset(samples=tuple(samples), input_width=cfg.d_x,
                   score_range=(0.0, 100.0))


@dataclass(frozen=True)
class SessionSplit:
    session: int
    train: tuple[Sample, ...]
    held_out: tuple[Sample, ...]


@dataclass(frozen=True)
class SessionPlan:
    sessions: tuple[SessionSplit, ...]
    shots: int
    input_width: int
    score_range: tuple[float, float]
    feature_mode: bool = False

    @property
    def n_sessions(self) -> int:
        return len(self.sessions)

    @property
    def fine_tune_pool(self) -> tuple[Sample, ...]:
        """Base-session fine-tuning data: the first session's held-out pool."""
        return self.sessions[0].held_out

    def test_samples(self, t: int, held_out_only: bool = False) -> tuple[Sample, ...]:
        s = self.sessions[t - 1]
        if held_out_only:
            return s.held_out
        return s.train + s.held_out


def grade_split(dataset: Dataset, T: int, shots: int, seed: int) -> SessionPlan:
    """Sort by score, cut T contiguous grade bands, draw few-shot splits."""
    n = len(dataset.samples)
    if T < 2:
        raise ValueError(f"need at least 2 sessions, got T={T}")
    if n < T:
        raise ValueError(f"{n} samples cannot fill {T} sessions")
    rng = make_rng(seed, STREAM_SPLIT)
    order = sorted(dataset.samples, key=lambda s: (s.score, s.sample_id))
    base, rem = divmod(n, T)
    sessions = []
    start = 0
    for t in range(1, T + 1):
        size = base + (1 if t <= rem else 0)
        if size < shots:
            raise ValueError(f"grade {t} has {size} samples, fewer than "
                             f"shots={shots}")
        band = [replace(s, grade=t) for s in order[start:start + size]]
        start += size
        picked = sorted(rng.choice(size, size=shots, replace=False).tolist())
        picked_set = set(picked)
        train = tuple(band[i] for i in picked)
        held = tuple(band[i] for i in range(size) if i not in picked_set)
        sessions.append(SessionSplit(session=t, train=train, held_out=held))
    return SessionPlan(sessions=tuple(sessions), shots=shots,
                       input_width=dataset.input_width,
                       score_range=dataset.score_range,
                       feature_mode=dataset.feature_mode)


@dataclass(frozen=True)
class ScoreScaler:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError(f"degenerate score range [{self.lo}, {self.hi}]")

    def normalize(self, y):
        return (np.asarray(y, dtype=np.float64) - self.lo) / (self.hi - self.lo)

    def denormalize(self, y):
        return np.asarray(y, dtype=np.float64) * (self.hi - self.lo) + self.lo


def _map_plan_scores(plan: SessionPlan, fn) -> SessionPlan:
    sessions = []
    for s in plan.sessions:
        sessions.append(SessionSplit(
            session=s.session,
            train=tuple(replace(x, score=fn(x, True)) for x in s.train),
            held_out=tuple(replace(x, score=fn(x, False)) for x in s.held_out),
        ))
    return replace(plan, sessions=tuple(sessions))


def normalize_scores(plan: SessionPlan) -> tuple[SessionPlan, ScoreScaler]:
    """Map every score to [0, 1] with a scaler fitted on base-session data.

    The fit covers the first session's training and fine-tune scores,
    extended by the dataset's declared score range so later (higher) grades
    stay inside [0, 1].
    """
    basis = [s.score for s in plan.sessions[0].train]
    basis += [s.score for s in plan.fine_tune_pool]
    basis += [plan.score_range[0], plan.score_range[1]]
    lo, hi = min(basis), max(basis)
    if hi - lo < 1e-12:
        raise ValueError(f"degenerate score range [{lo}, {hi}] in base session")
    scaler = ScoreScaler(lo=lo, hi=hi)
    out = _map_plan_scores(plan, lambda s, _: float(scaler.normalize(s.score)))
    return replace(out, score_range=(0.0, 1.0)), scaler


def apply_scaler(plan: SessionPlan, scaler: ScoreScaler) -> SessionPlan:
    """Normalize a plan's scores with an existing scaler (no refit)."""
    out = _map_plan_scores(plan, lambda s, _: float(scaler.normalize(s.score)))
    lo, hi = plan.score_range
    return replace(out, score_range=(float(scaler.normalize(lo)),
                                     float(scaler.normalize(hi))))


def inject_label_noise(plan: SessionPlan, intensity: float, seed: int) -> SessionPlan:
    """Add gaussian noise to training-split scores only, in original units,
    clamped to the declared score range. Held-out scores are untouched."""
    if intensity < 0:
        raise ValueError(f"noise intensity must be >= 0, got {intensity}")
    rng = make_rng(seed, STREAM_NOISE)
    lo, hi = plan.score_range

    def noisy(sample: Sample, is_train: bool) -> float:
        if not is_train:
            return sample.score
        return float(np.clip(sample.score + intensity * rng.normal(), lo, hi))

    return _map_plan_scores(plan, noisy)


# ------------------------------------------------------------------- csv io


def save_csv(dataset: Dataset, path) -> None:
    prefix = "f" if dataset.feature_mode else "x"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "score"] + [f"{prefix}{j}" for j in range(dataset.input_width)])
        for s in dataset.samples:
            w.writerow([s.sample_id, repr(float(s.score))] + [repr(float(v)) for v in s.x])


def load_csv(path) -> Dataset:
    """Read a dataset; the header decides raw (x0..) vs feature (f0..) mode."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CsvFormatError(f"{path}: empty file")
    header = rows[0]
    if len(header) < 3 or header[0] != "id" or header[1] != "score":
        raise CsvFormatError(f"{path}: header must start with id,score; got {header[:3]}")
    prefix = header[2][:1]
    if prefix not in ("x", "f"):
        raise CsvFormatError(f"{path}: third column must be x0 or f0, got {header[2]!r}")
    width = len(header) - 2
    expected = [f"{prefix}{j}" for j in range(width)]
    if header[2:] != expected:
        raise CsvFormatError(f"{path}: malformed value columns {header[2:]}")
    samples = []
    seen: set[str] = set()
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != width + 2:
            raise CsvFormatError(f"{path}: line {lineno}: expected {width + 2} "
                                 f"fields, got {len(row)}")
        sid = row[0]
        if sid in seen:
            raise CsvFormatError(f"{path}: line {lineno}: duplicate id {sid!r}")
        seen.add(sid)
        try:
            score = float(row[1])
            x = np.array([float(v) for v in row[2:]], dtype=np.float64)
        except ValueError as e:
            raise CsvFormatError(f"{path}: line {lineno}: {e}") from None
        if not np.isfinite(score) or not np.isfinite(x).all():
            raise CsvFormatError(f"{path}: line {lineno}: non-finite value")
        samples.append(Sample(sample_id=sid, x=x, score=score))
    if not samples:
        raise CsvFormatError(f"{path}: no data rows")
    scores = [s.score for s in samples]
    return Dataset(samples=tuple(samples), input_width=width,
                   score_range=(min(scores), max(scores)),
                   feature_mode=(prefix == "f"))
