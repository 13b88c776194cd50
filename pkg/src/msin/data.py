"""Corpus and series ingestion, vocabulary, windowing, synthetic generator.

The synthetic generator plants signal tokens into otherwise random documents
and drives an AR(1) series off the daily plant counts, so relevance recovery
can be measured against known ground truth. Relevance flags ride along in the
corpus but are never consumed by training code, only by evaluation.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import re
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .rng import substream

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

_TOKEN_RE = re.compile(r"[^\W_]+")


class DatasetError(Exception):
    """Raised for malformed input files or degenerate sample sets."""


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class Document:
    text: str
    relevant: bool | None = None


@dataclass(frozen=True)
class Day:
    date: dt.date
    docs: tuple[Document, ...]


@dataclass(frozen=True)
class Corpus:
    days: tuple[Day, ...]

    def __post_init__(self):
        for prev, cur in zip(self.days, self.days[1:]):
            if cur.date <= prev.date:
                raise DatasetError("corpus dates not strictly increasing at %s"
                                   % cur.date)

    @property
    def n_days(self) -> int:
        return len(self.days)


@dataclass(frozen=True)
class Series:
    """Aligned (date, value-row) observations, dates strictly increasing."""

    dates: tuple[dt.date, ...]
    values: np.ndarray  # [T, D] float64

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[0] != len(self.dates):
            raise DatasetError("series values must be [n_dates, D]")
        if not np.isfinite(vals).all():
            raise DatasetError("series contains non-finite values")
        object.__setattr__(self, "values", vals)
        for prev, cur in zip(self.dates, self.dates[1:]):
            if cur <= prev:
                raise DatasetError("series dates not strictly increasing at %s"
                                   % cur)


@dataclass(frozen=True)
class Vocabulary:
    """Token ids in frequency order; id 0 is padding, id 1 unknown."""

    tokens: tuple[str, ...]

    def __post_init__(self):
        if self.tokens[:2] != (PAD_TOKEN, UNK_TOKEN):
            raise DatasetError("vocabulary must start with pad and unk")
        object.__setattr__(self, "_ids", {t: i for i, t in enumerate(self.tokens)})

    @property
    def size(self) -> int:
        return len(self.tokens)

    def lookup(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)


@dataclass(frozen=True)
class DocumentBatch:
    """One day's documents as padded id rows plus per-doc metadata."""

    token_ids: np.ndarray          # [n, K] int64, 0-padded
    lengths: np.ndarray            # [n] int64, all >= 1
    relevance: tuple[bool | None, ...]
    source_idx: np.ndarray         # [n] position within the day before drops

    @property
    def n(self) -> int:
        return self.token_ids.shape[0]


@dataclass(frozen=True)
class SeriesWindow:
    values: np.ndarray  # [m, D] float64, raw scale
    target: float
    prev: float
    date: dt.date


@dataclass(frozen=True)
class Sample:
    window: SeriesWindow
    docs: DocumentBatch
    values_n: np.ndarray  # [m, D] float32, normalized
    target_n: float


@dataclass(frozen=True)
class SeriesStats:
    mean: float
    std: float

    def normalize(self, values: np.ndarray) -> np.ndarray:
        return ((np.asarray(values, dtype=np.float64) - self.mean)
                / self.std).astype(np.float32)


@dataclass(frozen=True)
class SplitSpec:
    """Date-range split (train_until/valid_until) or ordered fractions."""

    train_until: dt.date | None = None
    valid_until: dt.date | None = None
    fracs: tuple[float, float, float] | None = None

    def __post_init__(self):
        by_date = self.train_until is not None and self.valid_until is not None
        by_frac = self.fracs is not None
        if by_date == by_frac:
            raise DatasetError("give either both split dates or fractions")
        if by_date and self.valid_until <= self.train_until:
            raise DatasetError("valid_until must come after train_until")
        if by_frac:
            f = self.fracs
            if len(f) != 3 or any(x < 0 for x in f) or abs(sum(f) - 1.0) > 1e-9:
                raise DatasetError("split fractions must be 3 non-negatives summing to 1")


@dataclass(frozen=True)
class SampleSet:
    train: tuple[Sample, ...]
    valid: tuple[Sample, ...]
    test: tuple[Sample, ...]
    stats: SeriesStats
    skipped_no_docs: int
    skipped_no_series: int
    skipped_short_history: int

    @property
    def counts(self) -> dict[str, int]:
        return {"train": len(self.train), "valid": len(self.valid),
                "test": len(self.test)}


# ---------------------------------------------------------------------------
# tokenization and vocabulary


def tokenize(text: str, max_tokens: int | None = None) -> list[str]:
    """Lowercase, split on non-alphanumeric runs, truncate to max_tokens."""
    toks = _TOKEN_RE.findall(text.lower())
    return toks[:max_tokens] if max_tokens is not None else toks


def build_vocab(corpus: Corpus, max_size: int = 5000,
                allowed: set[str] | None = None) -> Vocabulary:
    """Most frequent tokens, ties broken lexicographically, capped at max_size.

    `allowed` restricts candidates to a given token set (used when an external
    embedding file defines which words exist); counting still sees every token.
    """
    if not corpus.days:
        raise DatasetError("cannot build a vocabulary from an empty corpus")
    if max_size < 2:
        raise DatasetError("max_size must leave room for pad and unk")
    counts = Counter()
    for day in corpus.days:
        for doc in day.docs:
            counts.update(tokenize(doc.text))
    items = [(t, c) for t, c in counts.items()
             if allowed is None or t in allowed]
    items.sort(key=lambda tc: (-tc[1], tc[0]))
    kept = [t for t, _ in items[:max_size - 2]]
    return Vocabulary(tokens=(PAD_TOKEN, UNK_TOKEN, *kept))


def cap_daily_docs(docs: tuple[Document, ...], cap: int = 25) -> tuple[Document, ...]:
    """Keep the last `cap` documents of a day (latest by release order)."""
    if cap < 1:
        raise DatasetError("cap must be at least 1")
    return docs if len(docs) <= cap else docs[-cap:]


def encode_day(docs: tuple[Document, ...], vocab: Vocabulary,
               max_tokens: int) -> DocumentBatch:
    """Tokenize one day into padded id rows; drops docs with no usable tokens."""
    rows, lengths, flags, src = [], [], [], []
    for i, doc in enumerate(docs):
        toks = tokenize(doc.text, max_tokens)
        if not toks:
            continue
        ids = [vocab.lookup(t) for t in toks]
        rows.append(ids + [PAD_ID] * (max_tokens - len(ids)))
        lengths.append(len(ids))
        flags.append(doc.relevant)
        src.append(i)
    n = len(rows)
    shape = (n, max_tokens)
    return DocumentBatch(
        token_ids=np.asarray(rows, dtype=np.int64).reshape(shape),
        lengths=np.asarray(lengths, dtype=np.int64),
        relevance=tuple(flags),
        source_idx=np.asarray(src, dtype=np.int64))


# ---------------------------------------------------------------------------
# sample construction


def make_samples(corpus: Corpus, series: Series, vocab: Vocabulary,
                 config, split: SplitSpec,
                 stats: SeriesStats | None = None) -> SampleSet:
    """Pair each documented day with its m-day window and assign splits.

    A day yields a sample when the series holds m observations before it and
    at least one of its documents survives tokenization. Everything else is
    skipped and counted. Normalization stats come from the train split alone,
    unless ``stats`` carries the values a trained model was fitted with, in
    which case those are reused and the train split may be empty.
    """
    if config.m < 1:
        raise DatasetError("window length m must be >= 1")
    if series.values.shape[1] != config.series_dim:
        raise DatasetError("series has %d columns, config expects %d"
                           % (series.values.shape[1], config.series_dim))
    row_of = {d: i for i, d in enumerate(series.dates)}

    raw = []
    skipped_no_docs = skipped_no_series = skipped_short = 0
    for day in corpus.days:
        batch = encode_day(cap_daily_docs(day.docs, config.daily_doc_cap),
                           vocab, config.max_tokens)
        if batch.n == 0:
            skipped_no_docs += 1
            continue
        i = row_of.get(day.date)
        if i is None:
            skipped_no_series += 1
            continue
        if i < config.m:
            skipped_short += 1
            continue
        window = SeriesWindow(values=series.values[i - config.m:i].copy(),
                              target=float(series.values[i, 0]),
                              prev=float(series.values[i - 1, 0]),
                              date=day.date)
        raw.append((window, batch))
    if not raw:
        raise DatasetError("no eligible samples (skipped: %d no-docs, "
                           "%d no-series, %d short-history)"
                           % (skipped_no_docs, skipped_no_series, skipped_short))

    if split.fracs is not None:
        n = len(raw)
        n_train = int(n * split.fracs[0])
        n_valid = int(n * (split.fracs[0] + split.fracs[1])) - n_train
        bounds = [("train", raw[:n_train]),
                  ("valid", raw[n_train:n_train + n_valid]),
                  ("test", raw[n_train + n_valid:])]
    else:
        groups = {"train": [], "valid": [], "test": []}
        for w, b in raw:
            if w.date <= split.train_until:
                groups["train"].append((w, b))
            elif w.date <= split.valid_until:
                groups["valid"].append((w, b))
            else:
                groups["test"].append((w, b))
        bounds = list(groups.items())

    if stats is None:
        train_raw = dict(bounds)["train"]
        if not train_raw:
            raise DatasetError("split produced no training samples")
        pool = np.concatenate([w.values.reshape(-1) for w, _ in train_raw]
                              + [np.asarray([w.target]) for w, _ in train_raw])
        std = float(pool.std())
        stats = SeriesStats(mean=float(pool.mean()), std=std if std > 0 else 1.0)

    out = {}
    for name, items in bounds:
        out[name] = tuple(
            Sample(window=w, docs=b, values_n=stats.normalize(w.values),
                   target_n=float(stats.normalize(np.asarray([[w.target]]))[0, 0]))
            for w, b in items)
    return SampleSet(train=out["train"], valid=out["valid"], test=out["test"],
                     stats=stats, skipped_no_docs=skipped_no_docs,
                     skipped_no_series=skipped_no_series,
                     skipped_short_history=skipped_short)


# ---------------------------------------------------------------------------
# synthetic generator


@dataclass(frozen=True)
class SynthSpec:
    """Planted-association generator settings.

    Each document is doc_len background tokens; a planted document carries one
    signal token and a ground-truth flag. The series follows
    x_t = phi*x_{t-1} + alpha*z_t + noise, x_0 = 0, with z_t the count of
    positive plants minus negative plants on day t.
    """

    n_days: int = 100
    n_docs: tuple[int, int] = (2, 5)
    doc_len: tuple[int, int] = (4, 8)
    vocab_size: int = 50
    s_plus: tuple[str, ...] = ("surge", "gain", "rally")
    s_minus: tuple[str, ...] = ("slump", "drop", "tumble")
    phi: float = 0.5
    alpha: float = 1.0
    sigma: float = 0.1
    plant_prob: float = 0.3
    plant_per_day: bool = False  # exactly one planted doc per day instead
    seed: int = 0
    start: dt.date = dt.date(2000, 1, 1)

    def __post_init__(self):
        if set(self.s_plus) & set(self.s_minus):
            raise DatasetError("signal lexicons must be disjoint")
        if not self.s_plus or not self.s_minus:
            raise DatasetError("signal lexicons must be non-empty")
        if not 0.0 <= self.phi < 1.0:
            raise DatasetError("phi must lie in [0, 1)")
        if self.sigma < 0:
            raise DatasetError("sigma must be non-negative")
        if not 0.0 <= self.plant_prob <= 1.0:
            raise DatasetError("plant_prob must lie in [0, 1]")
        if self.n_days < 1 or self.vocab_size < 1:
            raise DatasetError("n_days and vocab_size must be positive")
        for lo, hi in (self.n_docs, self.doc_len):
            if not 1 <= lo <= hi:
                raise DatasetError("ranges must satisfy 1 <= lo <= hi")


def synth_generate(spec: SynthSpec) -> tuple[Corpus, Series]:
    """Deterministic corpus and AR(1) series driven by planted signal counts."""
    rng = substream(spec.seed, "synth")
    background = ["w%04d" % i for i in range(spec.vocab_size)]
    days, dates, values = [], [], []
    x = 0.0
    for t in range(spec.n_days):
        n_docs = int(rng.integers(spec.n_docs[0], spec.n_docs[1] + 1))
        planted_at = int(rng.integers(n_docs)) if spec.plant_per_day else -1
        docs, z = [], 0
        for j in range(n_docs):
            length = int(rng.integers(spec.doc_len[0], spec.doc_len[1] + 1))
            toks = [background[k] for k in rng.integers(spec.vocab_size,
                                                        size=length)]
            plant = (j == planted_at) if spec.plant_per_day \
                else (rng.random() < spec.plant_prob)
            if plant:
                positive = rng.random() < 0.5
                lex = spec.s_plus if positive else spec.s_minus
                toks[int(rng.integers(length))] = lex[int(rng.integers(len(lex)))]
                z += 1 if positive else -1
            docs.append(Document(text=" ".join(toks), relevant=plant))
        x = spec.phi * x + spec.alpha * z
        if spec.sigma > 0:
            x += spec.sigma * float(rng.standard_normal())
        days.append(Day(date=spec.start + dt.timedelta(days=t),
                        docs=tuple(docs)))
        dates.append(days[-1].date)
        values.append([x])
    return (Corpus(days=tuple(days)),
            Series(dates=tuple(dates), values=np.asarray(values)))


# ---------------------------------------------------------------------------
# file formats


def save_corpus(corpus: Corpus, path: str) -> None:
    """One JSON line per day: {"date": ..., "headlines": [{text, relevant}]}."""
    with open(path, "w", encoding="utf-8") as fh:
        for day in corpus.days:
            rec = {"date": day.date.isoformat(),
                   "headlines": [{"text": d.text, "relevant": d.relevant}
                                 for d in day.docs]}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def load_corpus(path: str) -> Corpus:
    days = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                date = dt.date.fromisoformat(rec["date"])
                docs = tuple(Document(text=h["text"],
                                      relevant=h.get("relevant"))
                             for h in rec["headlines"])
            except (KeyError, TypeError, ValueError) as exc:
                raise DatasetError("%s line %d: %s" % (path, lineno, exc)) from exc
            days.append(Day(date=date, docs=docs))
    if not days:
        raise DatasetError("%s holds no days" % path)
    return Corpus(days=tuple(days))


def save_series(series: Series, path: str) -> None:
    """CSV with header date,value (or date,v1..vD for wider series)."""
    d = series.values.shape[1]
    header = ["date", "value"] if d == 1 else \
        ["date"] + ["v%d" % (i + 1) for i in range(d)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for date, row in zip(series.dates, series.values):
            w.writerow([date.isoformat()] + ["%.17g" % v for v in row])


def load_series(path: str) -> Series:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError("%s is empty" % path) from None
        if not header or header[0] != "date" or len(header) < 2:
            raise DatasetError("%s: header must be date,value[,...]" % path)
        dates, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DatasetError("%s line %d: expected %d fields, got %d"
                                   % (path, lineno, len(header), len(row)))
            try:
                dates.append(dt.date.fromisoformat(row[0]))
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise DatasetError("%s line %d: %s" % (path, lineno, exc)) from exc
    if not rows:
        raise DatasetError("%s holds no observations" % path)
    return Series(dates=tuple(dates), values=np.asarray(rows))
