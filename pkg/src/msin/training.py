"""Training loop, random hyperparameter search, and checkpoint files.

Batches are formed from a seeded shuffle each epoch. Every sample in a batch
gets its own graph; gradients are averaged in sorted-sample order so a
threaded fan-out could never change the result bitwise. Adam moment buffers
are float64 and the update itself is computed in float64, then stored back to
the float32 parameters.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import model as M
from . import tensor as T
from .rng import substream

# appendix search grids: layer widths, penalty strengths, dropout, window
SIZE_GRID = (16, 32, 64, 128)
REG_GRID = (0.1, 0.05, 0.01, 0.005, 0.001)
DROPOUT_GRID = (0.0, 0.1, 0.2, 0.4)
WINDOW_GRID = (3, 5, 7, 10)

MAGIC = b"MSN1"
FORMAT_VERSION = 1


class TrainingError(Exception):
    """Raised for unusable training inputs."""


class TrainingAbort(Exception):
    """Raised when a loss turns non-finite; carries the offending batch."""

    def __init__(self, step: int, sample_ids, losses):
        self.step = step
        self.sample_ids = list(sample_ids)
        self.losses = [float(v) for v in losses]
        super().__init__(
            "non-finite loss at step %d (samples %s, losses %s)"
            % (step, self.sample_ids, self.losses))


class CheckpointError(Exception):
    """Raised for malformed checkpoint files, naming the offender."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 8
    max_steps: int = 200
    clip_norm: float = 5.0
    early_stop_patience: int = 10
    eval_every: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("betas must lie in [0, 1)")
        if self.eps <= 0 or self.clip_norm <= 0:
            raise ValueError("eps and clip_norm must be positive")
        if self.batch_size < 1 or self.eval_every < 1:
            raise ValueError("batch_size and eval_every must be positive")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be at least 1")
        if self.max_steps < 0:
            raise ValueError("max_steps must be non-negative")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError("unknown TrainConfig keys: %s" % sorted(extra))
        return cls(**d)


@dataclass(frozen=True)
class HistoryRow:
    step: int
    train_loss: float
    valid_loss: float | None


@dataclass(frozen=True)
class TrainResult:
    params: M.ModelParams
    history: tuple[HistoryRow, ...]
    best_step: int
    best_valid: float
    steps_run: int


def eval_loss(samples, params: M.ModelParams, config: M.ModelConfig) -> float:
    """Mean prediction loss (no penalties, no dropout) over a sample list."""
    if not samples:
        raise TrainingError("cannot evaluate on an empty sample list")
    total = 0.0
    for s in samples:
        pred = M.forward(None, s, params, config)
        total += float(M.data_loss(None, pred, s, config).data[0])
    return total / len(samples)


def _global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))


def train(samples, params: M.ModelParams, config: M.ModelConfig,
          tcfg: TrainConfig) -> TrainResult:
    """Run Adam with clipping and early stopping; return best-validation params.

    `samples` needs .train and .valid sequences. The returned params object is
    the one passed in, with the best-validation snapshot written back into it.
    """
    train_set, valid_set = tuple(samples.train), tuple(samples.valid)
    if not train_set or not valid_set:
        raise TrainingError("need non-empty train and validation splits")

    rows = M.named_tensors(params)
    adam_m = {n: np.zeros(t.shape, dtype=np.float64) for n, t, _ in rows}
    adam_v = {n: np.zeros(t.shape, dtype=np.float64) for n, t, _ in rows}
    history: list[HistoryRow] = []
    best_valid = np.inf
    best_step = 0
    best_data: dict[str, np.ndarray] = {}
    evals_since_best = 0

    def evaluate(step: int) -> float:
        nonlocal best_valid, best_step, best_data, evals_since_best
        vl = eval_loss(valid_set, params, config)
        if vl < best_valid:
            best_valid, best_step = vl, step
            best_data = {n: t.data.copy() for n, t, _ in rows}
            evals_since_best = 0
        else:
            evals_since_best += 1
        return vl

    step = 0
    epoch = 0
    cursor = 0
    order = substream(tcfg.seed, "shuffle", epoch).permutation(len(train_set))
    last_evaluated = -1
    while step < tcfg.max_steps:
        if cursor >= len(order):
            epoch += 1
            cursor = 0
            order = substream(tcfg.seed, "shuffle", epoch).permutation(len(train_set))
        batch_ids = sorted(int(i) for i in order[cursor:cursor + tcfg.batch_size])
        cursor += tcfg.batch_size
        step += 1

        grads = {n: np.zeros(t.shape, dtype=np.float64) for n, t, _ in rows}
        losses = []
        for pos, idx in enumerate(batch_ids):
            tape = T.Tape()
            rng = substream(tcfg.seed, "dropout", step, idx)
            pred = M.forward(tape, train_set[idx], params, config,
                             train_mode=True, rng=rng)
            sample_loss = M.loss(tape, pred, train_set[idx], params, config)
            losses.append(float(sample_loss.data[0]))
            if not np.isfinite(losses[-1]):
                # gather the rest of the batch for the report, then bail
                for idx2 in batch_ids[pos + 1:]:
                    p2 = M.forward(None, train_set[idx2], params, config)
                    losses.append(float(
                        M.loss(None, p2, train_set[idx2], params, config).data[0]))
                raise TrainingAbort(step, batch_ids, losses)
            tape.backward(sample_loss)
            for n, t, _ in rows:
                if t.grad is not None:
                    grads[n] += t.grad
                    t.grad = None
        inv_b = 1.0 / len(batch_ids)
        for g in grads.values():
            g *= inv_b
        train_loss = float(np.sum(losses, dtype=np.float64) * inv_b)

        norm = _global_norm(grads)
        if norm > tcfg.clip_norm:
            shrink = tcfg.clip_norm / norm
            for g in grads.values():
                g *= shrink

        bc1 = 1.0 - tcfg.beta1 ** step
        bc2 = 1.0 - tcfg.beta2 ** step
        for n, t, _ in rows:
            g = grads[n]
            adam_m[n] = tcfg.beta1 * adam_m[n] + (1.0 - tcfg.beta1) * g
            adam_v[n] = tcfg.beta2 * adam_v[n] + (1.0 - tcfg.beta2) * g * g
            update = (tcfg.learning_rate * (adam_m[n] / bc1)
                      / (np.sqrt(adam_v[n] / bc2) + tcfg.eps))
            t.data[...] = (t.data.astype(np.float64) - update).astype(np.float32)

        valid_loss = None
        if step % tcfg.eval_every == 0:
            valid_loss = evaluate(step)
            last_evaluated = step
        history.append(HistoryRow(step, train_loss, valid_loss))
        if valid_loss is not None and evals_since_best >= tcfg.early_stop_patience:
            break

    if step > 0 and last_evaluated != step:
        vl = evaluate(step)
        history[-1] = HistoryRow(step, history[-1].train_loss, vl)

    if best_data:
        for n, t, _ in rows:
            t.data[...] = best_data[n]
    return TrainResult(params=params, history=tuple(history),
                       best_step=best_step,
                       best_valid=float(best_valid) if best_data else np.nan,
                       steps_run=step)


# ---------------------------------------------------------------------------
# random search


@dataclass(frozen=True)
class Trial:
    settings: dict
    valid_loss: float


@dataclass(frozen=True)
class SearchResult:
    best_config: M.ModelConfig
    best_settings: dict
    trials: tuple[Trial, ...]  # sorted, best first


def draw_settings(seed: int, trial: int) -> dict:
    """One uniform draw from the search grids, in a fixed field order."""
    rng = substream(seed, "search", trial)
    pick = lambda grid: grid[int(rng.integers(len(grid)))]
    return {"d_s": pick(SIZE_GRID), "d_h": pick(SIZE_GRID),
            "l1": pick(REG_GRID), "l2": pick(REG_GRID),
            "dropout_rate": pick(DROPOUT_GRID), "m": pick(WINDOW_GRID)}


def random_search(corpus, series, vocab, split, base_config: M.ModelConfig,
                  base_train: TrainConfig, budget: int, seed: int) -> SearchResult:
    """Train one model per drawn setting and rank by validation loss.

    Samples are rebuilt per trial because the window length m is part of the
    space. Each trial reuses base_train.seed, so identical draws land on
    identical losses.
    """
    from .data import make_samples  # local import keeps module layers acyclic

    if budget < 1:
        raise TrainingError("search budget must be at least 1")
    trials = []
    for i in range(budget):
        settings = draw_settings(seed, i)
        cfg = dataclasses.replace(base_config, **settings)
        sample_set = make_samples(corpus, series, vocab, cfg, split)
        params = M.init_model(cfg, seed=base_train.seed)
        result = train(sample_set, params, cfg, base_train)
        trials.append((Trial(settings=settings, valid_loss=result.best_valid), cfg))
    trials.sort(key=lambda tc: tc[0].valid_loss)
    return SearchResult(best_config=trials[0][1],
                        best_settings=dict(trials[0][0].settings),
                        trials=tuple(t for t, _ in trials))


# ---------------------------------------------------------------------------
# checkpoint format


def checkpoint_save(params: M.ModelParams, config: M.ModelConfig,
                    tcfg: TrainConfig, metadata: dict, path: str) -> None:
    """Write magic, version, config JSON, then raw named tensors."""
    rows = M.named_tensors(params)
    blob = json.dumps({"model": config.to_dict(), "train": tcfg.to_dict(),
                       "metadata": metadata},
                      sort_keys=True, separators=(",", ":")).encode("utf-8")
    out = [MAGIC, struct.pack("<I", FORMAT_VERSION),
           struct.pack("<I", len(blob)), blob,
           struct.pack("<I", len(rows))]
    for name, t, _ in rows:
        enc = name.encode("utf-8")
        out.append(struct.pack("<H", len(enc)))
        out.append(enc)
        out.append(struct.pack("<B", t.ndim))
        out.append(struct.pack("<%dI" % t.ndim, *t.shape))
        out.append(t.data.astype("<f4", copy=False).tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(out))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("truncated while reading %s" % what)
        piece = self.buf[self.pos:self.pos + n]
        self.pos += n
        return piece

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def checkpoint_load(path: str, expected: M.ModelConfig | None = None):
    """Read a checkpoint; returns (params, ModelConfig, TrainConfig, metadata)."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError("bad magic, not a checkpoint file")
    version = r.u32("version")
    if version != FORMAT_VERSION:
        raise CheckpointError("unsupported format version %d" % version)
    blob = r.take(r.u32("config length"), "config JSON")
    try:
        meta = json.loads(blob.decode("utf-8"))
        config = M.ModelConfig.from_dict(meta["model"])
        tcfg = TrainConfig.from_dict(meta["train"])
        metadata = meta["metadata"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError("bad config JSON: %s" % exc) from exc
    if expected is not None and config != expected:
        raise CheckpointError("checkpoint config does not match the expected one")

    params = M.init_model(config, seed=0)
    wanted = {n: t for n, t, _ in M.named_tensors(params)}
    seen = set()
    for _ in range(r.u32("tensor count")):
        name = r.take(struct.unpack("<H", r.take(2, "name length"))[0],
                      "tensor name").decode("utf-8")
        if name not in wanted:
            raise CheckpointError("unknown tensor '%s'" % name)
        if name in seen:
            raise CheckpointError("duplicate tensor '%s'" % name)
        seen.add(name)
        rank = struct.unpack("<B", r.take(1, "rank of '%s'" % name))[0]
        shape = struct.unpack("<%dI" % rank,
                              r.take(4 * rank, "dims of '%s'" % name))
        if shape != wanted[name].shape:
            raise CheckpointError("tensor '%s' has shape %r, expected %r"
                                  % (name, shape, wanted[name].shape))
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        raw = r.take(4 * count, "data of '%s'" % name)
        wanted[name].data[...] = np.frombuffer(raw, dtype="<f4").reshape(shape)
    missing = set(wanted) - seen
    if missing:
        raise CheckpointError("missing tensors: %s" % sorted(missing))
    if r.pos != len(r.buf):
        raise CheckpointError("%d trailing bytes after tensor data"
                              % (len(r.buf) - r.pos))
    return params, config, tcfg, metadata
