"""Datasets, training loop, metrics and leave-one-speaker-out evaluation."""

from __future__ import annotations

import copy
import json
import logging
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from .autodiff import Tensor, no_grad
from .errors import ConfigError, DataError, NumericalError
from .features import (
    LABELS,
    ManifestEntry,
    read_feature_file,
    resolve_path,
    save_manifest,
    write_feature_file,
)
from .frontend import (
    AudioSegment,
    FeatureStats,
    FrontendConfig,
    load_wav,
    log_spectrogram,
    segment,
    write_wav,
)
from .mf_grf import RATIO_GRID
from .model import ABLATION_ROWS, MfhcaModel, ModelConfig, Variant, count_params
from .ops import cross_entropy
from .optim import Adam

logger = logging.getLogger(__name__)

# Fold k trains with seed + FOLD_SEED_STRIDE * (k + 1).
FOLD_SEED_STRIDE = 1000

CHANNEL_GRID: tuple[tuple[int, ...], ...] = (
    (16, 32),
    (16, 32, 48),
    (16, 32, 64),
    (16, 32, 48, 64),
    (16, 32, 64, 128),
)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-5
    batch_size: int = 32
    patience: int = 10
    max_epochs: int = 100
    seed: int = 0
    workers: int = 1

    def __post_init__(self) -> None:
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.batch_size < 1 or self.max_epochs < 1 or self.workers < 1:
            raise ConfigError("batch, max_epochs and workers must be >= 1")


# -- metrics -----------------------------------------------------------------


@dataclass
class ConfusionMatrix:
    """Counts with rows = true class and columns = predicted class."""

    counts: np.ndarray

    @classmethod
    def zeros(cls, num_classes: int = len(LABELS)) -> ConfusionMatrix:
        return cls(np.zeros((num_classes, num_classes), dtype=np.int64))

    @classmethod
    def from_predictions(
        cls, truth: Sequence[int], predicted: Sequence[int], num_classes: int = len(LABELS)
    ) -> ConfusionMatrix:
        cm = cls.zeros(num_classes)
        np.add.at(cm.counts, (np.asarray(truth), np.asarray(predicted)), 1)
        return cm

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_list(self) -> list[list[int]]:
        return self.counts.tolist()


def wa_ua(cm: ConfusionMatrix, skip_empty: bool = False) -> tuple[float, float]:
    """Weighted accuracy (overall) and unweighted accuracy (mean per-class recall).

    An empty class row makes UA undefined and raises, unless ``skip_empty``
    averages over the classes that are present.
    """
    counts = np.asarray(cm.counts)
    total = counts.sum()
    if total == 0:
        raise DataError("confusion matrix is empty")
    support = counts.sum(axis=1)
    empty = [LABELS[i] if i < len(LABELS) else str(i) for i in np.flatnonzero(support == 0)]
    if empty and not skip_empty:
        raise DataError(f"UA undefined: no samples of class {', '.join(empty)}")
    present = support > 0
    recall = np.diag(counts)[present] / support[present]
    return float(np.trace(counts) / total), float(recall.mean())


# -- datasets ----------------------------------------------------------------


@dataclass
class Utterance:
    utterance_id: str
    speaker_id: str
    label: int
    spectrograms: list[np.ndarray] | None
    features: list[np.ndarray] | None

    @property
    def num_segments(self) -> int:
        parts = self.spectrograms if self.spectrograms is not None else self.features
        assert parts is not None
        return len(parts)


@dataclass
class Batch:
    spec: Tensor | None
    features: Tensor | None
    labels: np.ndarray
    owners: np.ndarray  # utterance index of each row


def split_features(
    seq: np.ndarray, num_segments: int, stride: int, frames: int
) -> list[np.ndarray]:
    """Slice a T×D feature sequence into per-segment windows aligned with the audio segments.

    Segment i covers frames [i*stride, i*stride + frames); missing frames are zeros.
    """
    out = []
    for i in range(num_segments):
        window = np.zeros((frames, seq.shape[1]), dtype=np.float32)
        chunk = seq[i * stride : i * stride + frames]
        window[: len(chunk)] = chunk
        out.append(window)
    return out


class Corpus:
    """Segmented utterances ready for batching."""

    def __init__(self, utterances: list[Utterance]) -> None:
        self.utterances = utterances
        self.index = [
            (u, s) for u, utt in enumerate(utterances) for s in range(utt.num_segments)
        ]

    def __len__(self) -> int:
        return len(self.utterances)

    @property
    def num_segments(self) -> int:
        return len(self.index)

    @property
    def ids(self) -> list[str]:
        return [u.utterance_id for u in self.utterances]

    @property
    def labels(self) -> np.ndarray:
        return np.array([u.label for u in self.utterances], dtype=np.int64)

    @classmethod
    def build(
        cls,
        entries: Sequence[ManifestEntry],
        load_audio: Callable[[ManifestEntry], AudioSegment] | None,
        load_features: Callable[[ManifestEntry], np.ndarray] | None,
        frontend: FrontendConfig,
        feature_frames: int,
    ) -> Corpus:
        """Segment each entry's audio and slice its feature sequence to match.

        Either loader may be None when the model variant does not read that input.
        """
        if load_audio is None and load_features is None:
            raise ConfigError("a corpus needs audio, features or both")
        utterances = []
        for entry in entries:
            specs = None
            if load_audio is not None:
                segments = segment(load_audio(entry), frontend.segment_seconds)
                specs = [log_spectrogram(s, frontend).frames for s in segments]
            feats = None
            if load_features is not None:
                seq = load_features(entry)
                stride = frontend.feature_stride
                count = len(specs) if specs is not None else max(1, -(-len(seq) // stride))
                feats = split_features(seq, count, stride, feature_frames)
            utterances.append(
                Utterance(entry.utterance_id, entry.speaker_id, entry.label_index, specs, feats)
            )
        logger.debug("built corpus of %d utterances", len(utterances))
        return cls(utterances)

    @classmethod
    def from_manifest(
        cls,
        entries: Sequence[ManifestEntry],
        base_dir: str | Path,
        frontend: FrontendConfig,
        variant: Variant,
        feature_frames: int = 149,
    ) -> Corpus:
        def audio(entry: ManifestEntry) -> AudioSegment:
            return load_wav(resolve_path(entry.wav_path, base_dir), frontend.sample_rate)

        def features(entry: ManifestEntry) -> np.ndarray:
            return read_feature_file(resolve_path(entry.feature_path, base_dir))

        return cls.build(
            entries,
            audio if variant.spec else None,
            features if variant.features else None,
            frontend,
            feature_frames,
        )

    def subset(self, ids: Iterable[str]) -> Corpus:
        wanted = set(ids)
        return Corpus([u for u in self.utterances if u.utterance_id in wanted])

    def fit_stats(self) -> FeatureStats:
        """Spectrogram mean/std over every segment of this corpus."""
        return FeatureStats.fit(
            s for u in self.utterances if u.spectrograms is not None for s in u.spectrograms
        )

    def batch(self, rows: Sequence[int], stats: FeatureStats | None) -> Batch:
        picked = [self.index[r] for r in rows]
        spec = feats = None
        utts = [self.utterances[u] for u, _ in picked]
        if utts[0].spectrograms is not None:
            frames = np.stack([u.spectrograms[s] for u, (_, s) in zip(utts, picked)])  # type: ignore[index]
            if stats is not None:
                frames = (frames - stats.mean) / stats.std
            spec = Tensor(frames[:, None].astype(np.float32))
        if utts[0].features is not None:
            feats = Tensor(np.stack([u.features[s] for u, (_, s) in zip(utts, picked)]))  # type: ignore[index]
        labels = np.array([u.label for u in utts], dtype=np.int64)
        owners = np.array([u for u, _ in picked], dtype=np.int64)
        return Batch(spec, feats, labels, owners)


# -- training ----------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_accuracy: float
    val_ua: float


@dataclass
class TrainResult:
    model: MfhcaModel
    history: list[EpochRecord]
    best_epoch: int
    best_ua: float

    @property
    def epochs(self) -> int:
        return len(self.history)


@dataclass
class Evaluation:
    confusion: ConfusionMatrix
    logits: np.ndarray  # utterances × classes, mean over segments
    wa: float
    ua: float


def model_stats(model: MfhcaModel) -> FeatureStats | None:
    if not model.config.variant.spec:
        return None
    mean, std = model.buffer("input_stats")
    return FeatureStats(float(mean), float(std))


def utterance_logits(
    model: MfhcaModel,
    corpus: Corpus,
    batch_size: int = 32,
    embed: bool = False,
) -> np.ndarray:
    """Segment outputs averaged per utterance (logits, or pooled embeddings)."""
    model.eval()
    stats = model_stats(model)
    sums: np.ndarray | None = None
    counts = np.zeros(len(corpus), dtype=np.int64)
    with no_grad():
        for start in range(0, corpus.num_segments, batch_size):
            rows = range(start, min(start + batch_size, corpus.num_segments))
            batch = corpus.batch(rows, stats)
            forward = model.embed if embed else model
            out = forward(batch.spec, batch.features).numpy().astype(np.float64)
            if sums is None:
                sums = np.zeros((len(corpus), out.shape[1]))
            np.add.at(sums, batch.owners, out)
            np.add.at(counts, batch.owners, 1)
    if sums is None:
        raise DataError("cannot evaluate an empty corpus")
    return sums / counts[:, None]


def evaluate(model: MfhcaModel, corpus: Corpus, batch_size: int = 32) -> Evaluation:
    """Utterance-level confusion matrix from mean segment logits."""
    logits = utterance_logits(model, corpus, batch_size)
    cm = ConfusionMatrix.from_predictions(
        corpus.labels, logits.argmax(axis=1), model.config.hca.num_classes
    )
    wa, ua = wa_ua(cm, skip_empty=True)
    return Evaluation(cm, logits, wa, ua)


def _parameter_norms(model: MfhcaModel) -> str:
    return ", ".join(
        f"{name}={np.linalg.norm(p.data):.3g}" for name, p in model.named_parameters()
    )


def train_fold(
    train: Corpus,
    val: Corpus,
    model_config: ModelConfig,
    config: TrainConfig,
    evaluate_fn: Callable[[MfhcaModel, int], float] | None = None,
) -> TrainResult:
    """Mini-batch Adam on cross-entropy with early stopping on validation UA.

    Training stops once validation UA has not improved for ``patience``
    epochs; the returned model carries the parameters of the best epoch.
    ``evaluate_fn(model, epoch)`` replaces the validation pass when given.
    """
    if train.num_segments == 0:
        raise DataError("training set is empty")
    missing = sorted(set(range(model_config.hca.num_classes)) - set(train.labels.tolist()))
    if missing:
        logger.warning("training set lacks class(es) %s", ", ".join(LABELS[i] for i in missing))

    model = MfhcaModel(replace(model_config, seed=config.seed))
    stats = train.fit_stats() if model_config.variant.spec else None
    if stats is not None:
        model.buffer("input_stats")[...] = (stats.mean, stats.std)
    optimizer = Adam(model.parameters(), lr=config.lr)
    rng = np.random.default_rng(config.seed)

    history: list[EpochRecord] = []
    best_ua, best_epoch, stale = -1.0, 0, 0
    best_state = copy.deepcopy(model.state_dict())
    for epoch in range(1, config.max_epochs + 1):
        model.train()
        order = rng.permutation(train.num_segments)
        loss_sum, correct = 0.0, 0
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            batch = train.batch(order[start : start + config.batch_size], stats)
            optimizer.zero_grad()
            logits = model(batch.spec, batch.features)
            loss = cross_entropy(logits, batch.labels)
            value = loss.item()
            if not np.isfinite(value):
                logger.error(
                    "non-finite loss at epoch %d batch %d; parameter norms: %s",
                    epoch,
                    b,
                    _parameter_norms(model),
                )
                raise NumericalError(f"loss became {value} at epoch {epoch}, batch {b}")
            loss.backward()
            try:
                optimizer.step()
            except NumericalError as e:
                logger.error("epoch %d batch %d: %s", epoch, b, e)
                raise
            loss_sum += value * len(batch.labels)
            correct += int((logits.numpy().argmax(axis=1) == batch.labels).sum())

        if evaluate_fn is not None:
            val_ua = evaluate_fn(model, epoch)
        else:
            val_ua = evaluate(model, val, config.batch_size).ua
        record = EpochRecord(
            epoch, loss_sum / train.num_segments, correct / train.num_segments, val_ua
        )
        history.append(record)
        logger.info(
            "epoch %d loss %.4f train acc %.3f val UA %.3f",
            epoch,
            record.loss,
            record.train_accuracy,
            val_ua,
        )
        if val_ua > best_ua:
            best_ua, best_epoch, stale = val_ua, epoch, 0
            best_state = copy.deepcopy(model.state_dict())
        else:
            stale += 1
            if stale >= config.patience:
                logger.info("early stop at epoch %d (best %d)", epoch, best_epoch)
                break

    model.load_state_dict(best_state)
    model.eval()
    return TrainResult(model, history, best_epoch, best_ua)


# -- leave-one-speaker-out ---------------------------------------------------


@dataclass(frozen=True)
class Fold:
    fold_id: int
    test_speaker: str
    val_speaker: str | None
    train_ids: tuple[str, ...]
    val_ids: tuple[str, ...]
    test_ids: tuple[str, ...]


@dataclass
class FoldResult:
    fold_id: int
    test_speaker: str
    val_speaker: str | None
    wa: float
    ua: float
    epochs: int
    best_epoch: int
    confusion: ConfusionMatrix

    def to_dict(self) -> dict[str, Any]:
        return {
            "fold": self.fold_id,
            "test_speaker": self.test_speaker,
            "val_speaker": self.val_speaker,
            "wa": self.wa,
            "ua": self.ua,
            "epochs": self.epochs,
            "best_epoch": self.best_epoch,
            "confusion": self.confusion.to_list(),
        }


@dataclass
class CvReport:
    folds: list[FoldResult]
    label: str = ""
    params: int = 0
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def wa(self) -> float:
        return float(np.mean([f.wa for f in self.folds]))

    @property
    def ua(self) -> float:
        return float(np.mean([f.ua for f in self.folds]))

    def summary(self) -> dict[str, Any]:
        return {
            "aggregate": True,
            "label": self.label,
            "params": self.params,
            "folds": len(self.folds),
            "wa": self.wa,
            "ua": self.ua,
            **self.extra,
        }


def loso_splits(entries: Sequence[ManifestEntry], seed: int) -> list[Fold]:
    """One fold per speaker; validation is a seeded draw from the remaining speakers.

    With only one remaining speaker there is no separate validation speaker
    and the training utterances double as the validation set.
    """
    by_speaker: dict[str, list[str]] = {}
    for e in entries:
        by_speaker.setdefault(e.speaker_id, []).append(e.utterance_id)
    order = sorted(by_speaker)
    if len(order) < 2:
        raise DataError(f"leave-one-speaker-out needs >= 2 speakers, got {len(order)}")

    rng = np.random.default_rng(seed)
    folds = []
    for k, test in enumerate(order):
        rest = [s for s in order if s != test]
        val = str(rng.choice(rest)) if len(rest) > 1 else None
        train = [s for s in rest if s != val]
        folds.append(
            Fold(
                fold_id=k,
                test_speaker=test,
                val_speaker=val,
                train_ids=tuple(i for s in train for i in by_speaker[s]),
                val_ids=tuple(by_speaker[val]) if val is not None else (),
                test_ids=tuple(by_speaker[test]),
            )
        )
    return folds


def validation_split(entries: Sequence[ManifestEntry], seed: int) -> Fold:
    """Train on every speaker but one seeded validation speaker (no test set)."""
    speakers = sorted({e.speaker_id for e in entries})
    if not speakers:
        raise DataError("manifest is empty")
    all_ids = tuple(e.utterance_id for e in entries)
    if len(speakers) == 1:
        return Fold(0, "", None, all_ids, (), ())
    val = str(np.random.default_rng(seed).choice(speakers))
    return Fold(
        fold_id=0,
        test_speaker="",
        val_speaker=val,
        train_ids=tuple(e.utterance_id for e in entries if e.speaker_id != val),
        val_ids=tuple(e.utterance_id for e in entries if e.speaker_id == val),
        test_ids=(),
    )


def fold_seed(seed: int, fold_id: int) -> int:
    return seed + FOLD_SEED_STRIDE * (fold_id + 1)


def run_fold(
    corpus: Corpus, fold: Fold, model_config: ModelConfig, config: TrainConfig
) -> FoldResult:
    train = corpus.subset(fold.train_ids)
    val = corpus.subset(fold.val_ids) if fold.val_ids else train
    logger.info(
        "fold %d: test %s, val %s, %d train utterances",
        fold.fold_id,
        fold.test_speaker,
        fold.val_speaker,
        len(train),
    )
    result = train_fold(
        train, val, model_config, replace(config, seed=fold_seed(config.seed, fold.fold_id))
    )
    scored = evaluate(result.model, corpus.subset(fold.test_ids), config.batch_size)
    return FoldResult(
        fold.fold_id,
        fold.test_speaker,
        fold.val_speaker,
        scored.wa,
        scored.ua,
        result.epochs,
        result.best_epoch,
        scored.confusion,
    )


def loso_cv(
    corpus: Corpus,
    entries: Sequence[ManifestEntry],
    model_config: ModelConfig,
    config: TrainConfig,
) -> CvReport:
    """Train and score one model per held-out speaker; aggregates are fold means."""
    folds = loso_splits(entries, config.seed)
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(
                pool.map(lambda f: run_fold(corpus, f, model_config, config), folds)
            )
    else:
        results = [run_fold(corpus, f, model_config, config) for f in folds]
    results.sort(key=lambda r: r.fold_id)
    report = CvReport(
        results, model_config.variant.label, count_params(MfhcaModel(model_config))
    )
    logger.info(
        "%s: WA %.4f UA %.4f over %d folds", report.label, report.wa, report.ua, len(results)
    )
    return report


def ablation_run(
    corpus: Corpus,
    entries: Sequence[ManifestEntry],
    model_config: ModelConfig,
    config: TrainConfig,
    rows: Sequence[Variant] = ABLATION_ROWS,
) -> list[CvReport]:
    """Cross-validate every ablation row on the same folds and seeds."""
    return [loso_cv(corpus, entries, model_config.with_variant(v), config) for v in rows]


def _dashed(channels: tuple[int, ...]) -> str:
    return "-".join(str(c) for c in channels)


def sweep(
    corpus: Corpus,
    entries: Sequence[ManifestEntry],
    model_config: ModelConfig,
    config: TrainConfig,
    grid: str,
) -> list[CvReport]:
    """Cross-validate the encoder-width grid (``channels``) or the pooling ratios (``ratios``)."""
    if grid == "channels":
        configs = [
            (replace(model_config, mf=replace(model_config.mf, grf_channels=c)), _dashed(c))
            for c in CHANNEL_GRID
        ]
    elif grid == "ratios":
        configs = [
            (replace(model_config, mf=replace(model_config.mf, ratio=r)), f"1/{r}")
            for r in RATIO_GRID
        ]
    else:
        raise ConfigError(f"unknown sweep grid {grid!r} (expected channels or ratios)")
    reports = []
    for cfg, setting in configs:
        report = loso_cv(corpus, entries, cfg, config)
        report.extra["setting"] = setting
        reports.append(report)
    return reports


def write_results_jsonl(path: str | Path, reports: Sequence[CvReport]) -> None:
    """Per-fold lines followed by one aggregate line per report."""
    with open(path, "w", encoding="utf-8") as f:
        for report in reports:
            for fold in report.folds:
                line = {"label": report.label, **report.extra, **fold.to_dict()}
                f.write(json.dumps(line) + "\n")
            f.write(json.dumps(report.summary()) + "\n")


# -- synthetic data ----------------------------------------------------------


SYNTHETIC_SPEAKERS = 8


@dataclass
class SyntheticDataset:
    entries: list[ManifestEntry]
    audio: dict[str, AudioSegment]
    features: dict[str, np.ndarray]

    def corpus(
        self, frontend: FrontendConfig, variant: Variant = Variant(), feature_frames: int = 149
    ) -> Corpus:
        return Corpus.build(
            self.entries,
            (lambda e: self.audio[e.utterance_id]) if variant.spec else None,
            (lambda e: self.features[e.utterance_id]) if variant.features else None,
            frontend,
            feature_frames,
        )

    def write(self, out_dir: str | Path) -> Path:
        """Write wavs, MFH1 feature files and ``manifest.jsonl``; returns the manifest path."""
        out = Path(out_dir)
        (out / "wav").mkdir(parents=True, exist_ok=True)
        (out / "features").mkdir(parents=True, exist_ok=True)
        for entry in self.entries:
            write_wav(out / entry.wav_path, self.audio[entry.utterance_id])
            write_feature_file(out / entry.feature_path, self.features[entry.utterance_id])
        manifest = out / "manifest.jsonl"
        save_manifest(manifest, self.entries)
        return manifest


def make_synthetic(
    seed: int,
    n_per_class: int,
    hubert_dim: int = 768,
    frontend: FrontendConfig | None = None,
    feature_frames: int = 149,
    noise: float = 0.05,
) -> SyntheticDataset:
    """Four tone classes (class k is a sine at 300·(k+1) Hz) with class-mean fake features.

    Utterance j of class k belongs to speaker (j + k) mod 8. The result is a
    pure function of the arguments.
    """
    frontend = frontend or FrontendConfig()
    rng = np.random.default_rng(seed)
    n = frontend.segment_samples
    t = np.arange(n) / frontend.sample_rate
    means = rng.standard_normal((len(LABELS), hubert_dim)).astype(np.float32)
    entries, audio, features = [], {}, {}
    for k, label in enumerate(LABELS):
        tone = 0.5 * np.sin(2 * np.pi * 300.0 * (k + 1) * t)
        for j in range(n_per_class):
            uid = f"syn_{label}_{j:03d}"
            speaker = (j + k) % SYNTHETIC_SPEAKERS
            samples = tone + noise * rng.standard_normal(n)
            audio[uid] = AudioSegment(samples.astype(np.float64), frontend.sample_rate)
            features[uid] = (
                means[k] + 0.1 * rng.standard_normal((feature_frames, hubert_dim))
            ).astype(np.float32)
            entries.append(
                ManifestEntry(
                    utterance_id=uid,
                    speaker_id=f"spk{speaker}",
                    session=f"Ses{speaker // 2 + 1:02d}",
                    label=label,
                    wav_path=f"wav/{uid}.wav",
                    feature_path=f"features/{uid}.mfh",
                )
            )
    return SyntheticDataset(entries, audio, features)
