"""Document encoder: embeddings, a bidirectional LSTM, attention pooling.

Each document becomes one representative vector s = (1/L) sum_l beta_l h_l,
where h_l are bidirectional hidden states over the tokens and beta is an
attention distribution over valid positions.  ``encode_documents`` runs a
whole day's documents as rows of shared matrix ops; because every reduction
in the engine accumulates in float64 and rounds once, the batched rows match
the per-document functions and permuting documents permutes outputs
bit-identically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T

PAD_ID = 0
UNK_ID = 1

# gate blocks within the stacked [4*d_h] pre-activation, in row order
_GATES = ("in", "forget", "out", "cand")

# tanh keeps pre-softmax scores in (-1,1) scaled by a weight vector; the clamp
# is unreachable in practice and only documents the intended numeric range.
LOGIT_CLAMP = 50.0


class VocabularyError(ValueError):
    """A token id falls outside the embedding table."""


class EmptyDocumentError(ValueError):
    """A document had no valid tokens."""


@dataclass
class EmbeddingTable:
    """Word-embedding matrix, one row per vocabulary id.

    Row 0 is the padding token and stays all-zero; row 1 is the unknown token.
    """

    table: T.Tensor  # [V, d_w]

    @property
    def vocab_size(self) -> int:
        return self.table.shape[0]

    @property
    def dim(self) -> int:
        return self.table.shape[1]


@dataclass
class DirectionParams:
    """One LSTM direction with the four gates stacked row-wise (in/forget/out/cand)."""

    input_w: T.Tensor  # [4*d_h, d_w]
    state_w: T.Tensor  # [4*d_h, d_h]
    bias: T.Tensor     # [4*d_h]

    @property
    def hidden_size(self) -> int:
        return self.state_w.shape[1]


@dataclass
class TextEncoderParams:
    fwd: DirectionParams
    bwd: DirectionParams
    pool_w: T.Tensor    # [2*d_h, 2*d_h]
    pool_bias: T.Tensor  # [2*d_h]
    pool_ctx: T.Tensor   # [2*d_h]

    @property
    def hidden_size(self) -> int:
        return self.fwd.hidden_size


@dataclass
class DocRepresentation:
    """One day's documents encoded as rows, plus per-document word attention."""

    vectors: T.Tensor  # [n, 2*d_h]
    word_attention: list[np.ndarray]  # beta over each document's valid tokens

    @property
    def n(self) -> int:
        return self.vectors.shape[0]


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_embedding(vocab_size: int, dim: int, rng: np.random.Generator,
                   name: str = "embedding.table") -> EmbeddingTable:
    if vocab_size < 2:
        raise VocabularyError("vocabulary needs at least pad and unk rows")
    data = _uniform(rng, dim, (vocab_size, dim))
    data[PAD_ID] = 0.0
    return EmbeddingTable(T.parameter(data, name))


def _init_direction(d_w: int, d_h: int, rng: np.random.Generator,
                    prefix: str) -> DirectionParams:
    bias = np.zeros(4 * d_h)
    bias[d_h:2 * d_h] = 1.0  # open forget gates at the start of training
    return DirectionParams(
        input_w=T.parameter(_uniform(rng, d_w, (4 * d_h, d_w)), prefix + ".input_w"),
        state_w=T.parameter(_uniform(rng, d_h, (4 * d_h, d_h)), prefix + ".state_w"),
        bias=T.parameter(bias, prefix + ".bias"))


def init_encoder(d_w: int, d_h: int, rng: np.random.Generator,
                 prefix: str = "encoder") -> TextEncoderParams:
    two = 2 * d_h
    return TextEncoderParams(
        fwd=_init_direction(d_w, d_h, rng, prefix + ".fwd"),
        bwd=_init_direction(d_w, d_h, rng, prefix + ".bwd"),
        pool_w=T.parameter(_uniform(rng, two, (two, two)), prefix + ".pool.weight"),
        pool_bias=T.parameter(np.zeros(two), prefix + ".pool.bias"),
        pool_ctx=T.parameter(_uniform(rng, two, two), prefix + ".pool.context"))


def load_embedding_file(path, vocab: dict[str, int], table: EmbeddingTable) -> int:
    """Overwrite table rows from a text embedding file; returns rows hit.

    File layout: one line per word, the token followed by ``dim`` decimal
    floats, whitespace-separated.  Tokens absent from ``vocab`` are skipped;
    vocabulary words absent from the file keep their random initialization.
    Lines with the wrong column count are ignored rather than fatal, since
    published embedding dumps contain a handful of tokens with spaces.
    """
    dim = table.dim
    hits = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip("\n").split(" ")
            if len(parts) != dim + 1:
                continue
            row = vocab.get(parts[0])
            if row is None or row == PAD_ID:
                continue
            try:
                vec = np.asarray([float(p) for p in parts[1:]], dtype=np.float32)
            except ValueError:
                continue
            table.table.data[row] = vec
            hits += 1
    return hits


# ---------------------------------------------------------------------------
# per-document operations (the reference path; tests oracle against these)


def embed_lookup(tape: T.Tape | None, token_ids: np.ndarray,
                 table: EmbeddingTable) -> T.Tensor:
    """Rows of the embedding table for one document's token ids."""
    ids = np.asarray(token_ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.vocab_size):
        raise VocabularyError(
            "token id outside vocabulary of size %d" % table.vocab_size)
    return T.take_rows(tape, table.table, ids)


def _gate_split(tape, pre: T.Tensor, d_h: int, axis: int):
    """Slice the stacked pre-activation into (in, forget, out, cand) blocks."""
    blocks = {}
    for g, name in enumerate(_GATES):
        blk = T.narrow(tape, pre, axis, g * d_h, (g + 1) * d_h)
        blocks[name] = T.tanh(tape, blk) if name == "cand" else T.sigmoid(tape, blk)
    return blocks


def _direction_step(tape, x: T.Tensor, h: T.Tensor, c: T.Tensor,
                    params: DirectionParams):
    """One LSTM step on a single token embedding (vector-shaped)."""
    pre = T.add(tape, T.add(tape, T.matmul(tape, params.input_w, x),
                            T.matmul(tape, params.state_w, h)), params.bias)
    gates = _gate_split(tape, pre, params.hidden_size, axis=0)
    c_next = T.add(tape, T.hadamard(tape, gates["forget"], c),
                   T.hadamard(tape, gates["in"], gates["cand"]))
    h_next = T.hadamard(tape, gates["out"], T.tanh(tape, c_next))
    return h_next, c_next


def bilstm_forward(tape: T.Tape | None, embeds: T.Tensor, length: int,
                   params: TextEncoderParams) -> T.Tensor:
    """Bidirectional hidden states for one document; rows >= length are zero."""
    if length < 1:
        raise EmptyDocumentError("document has no tokens")
    K = embeds.shape[0]
    if length > K:
        raise T.ShapeError("length %d exceeds %d embedded rows" % (length, K))
    d_h = params.hidden_size
    xs = [T.reshape(tape, T.narrow(tape, embeds, 0, l, l + 1), (embeds.shape[1],))
          for l in range(length)]

    def sweep(direction: DirectionParams, order):
        h = T.constant(np.zeros(d_h))
        c = T.constant(np.zeros(d_h))
        out = {}
        for l in order:
            h, c = _direction_step(tape, xs[l], h, c, direction)
            out[l] = h
        return out

    fwd = sweep(params.fwd, range(length))
    bwd = sweep(params.bwd, range(length - 1, -1, -1))
    zero_row = T.constant(np.zeros((1, 2 * d_h)))
    rows = [T.reshape(tape, T.concat(tape, [fwd[l], bwd[l]]), (1, 2 * d_h))
            for l in range(length)]
    rows.extend(zero_row for _ in range(K - length))
    return T.concat(tape, rows, axis=0)


def attention_pool(tape: T.Tape | None, hiddens: T.Tensor, length: int,
                   params: TextEncoderParams, divisor: int | None = None):
    """Pool one document's hidden states into (s, beta).

    ``divisor`` defaults to the valid token count; passing the padded width
    reproduces the fixed-denominator pooling variant.
    """
    if length < 1:
        raise EmptyDocumentError("cannot pool zero tokens")
    valid = T.narrow(tape, hiddens, 0, 0, length)
    proj = T.tanh(tape, T.add_bias(
        tape, T.matmul(tape, valid, params.pool_w, transpose_b=True),
        params.pool_bias))
    logits = T.clip(tape, T.matmul(tape, proj, params.pool_ctx),
                    -LOGIT_CLAMP, LOGIT_CLAMP)
    beta = T.masked_softmax(tape, logits, np.ones(length, dtype=bool))
    s = T.scale(tape, T.matmul(tape, beta, valid), 1.0 / (divisor or length))
    return s, beta


# ---------------------------------------------------------------------------
# batched day encoding (what the models call)


def _carry(tape, keep: T.Tensor, drop: T.Tensor, new: T.Tensor, old: T.Tensor):
    """new where the keep mask is 1, old elsewhere."""
    return T.add(tape, T.hadamard(tape, keep, new), T.hadamard(tape, drop, old))


def encode_documents(tape: T.Tape | None, batch, table: EmbeddingTable,
                     params: TextEncoderParams,
                     pool_divisor: str = "actual_len") -> DocRepresentation:
    """Encode one day's documents (rows of ``batch.token_ids``) to s vectors.

    ``batch`` needs ``token_ids`` int[n, K] (0-padded) and ``lengths`` int[n]
    with every length >= 1.  Positions are processed batch-wide with validity
    masks, so each row equals the per-document pipeline on that document.
    """
    token_ids = np.asarray(batch.token_ids)
    lengths = np.asarray(batch.lengths)
    n, width = token_ids.shape
    if n < 1:
        raise EmptyDocumentError("day has no documents")
    if lengths.min() < 1:
        raise EmptyDocumentError(
            "document %d has no tokens" % int(np.flatnonzero(lengths < 1)[0]))
    if pool_divisor not in ("actual_len", "max_len"):
        raise T.ContractError("unknown pool_divisor %r" % pool_divisor)
    d_h = params.hidden_size
    k_eff = int(lengths.max())

    # one gather for the whole day, grouped position-major
    flat_ids = token_ids[:, :k_eff].T.reshape(-1)
    all_rows = embed_lookup(tape, flat_ids, table)
    xs = [T.narrow(tape, all_rows, 0, l * n, (l + 1) * n) for l in range(k_eff)]
    valid = lengths[:, None] > np.arange(k_eff)[None, :]  # [n, k_eff]

    def batch_step(x, h, c, direction: DirectionParams):
        pre = T.add_bias(tape, T.add(
            tape, T.matmul(tape, x, direction.input_w, transpose_b=True),
            T.matmul(tape, h, direction.state_w, transpose_b=True)),
            direction.bias)
        gates = _gate_split(tape, pre, d_h, axis=1)
        c_next = T.add(tape, T.hadamard(tape, gates["forget"], c),
                       T.hadamard(tape, gates["in"], gates["cand"]))
        h_next = T.hadamard(tape, gates["out"], T.tanh(tape, c_next))
        return h_next, c_next

    def sweep(direction: DirectionParams, order):
        h = T.constant(np.zeros((n, d_h)))
        c = T.constant(np.zeros((n, d_h)))
        out = {}
        for l in order:
            h_new, c_new = batch_step(xs[l], h, c, direction)
            if valid[:, l].all():
                h, c = h_new, c_new
            else:
                keep = T.constant(np.repeat(valid[:, l:l + 1], d_h, axis=1))
                drop = T.constant(np.repeat(~valid[:, l:l + 1], d_h, axis=1))
                h = _carry(tape, keep, drop, h_new, h)
                c = _carry(tape, keep, drop, c_new, c)
            out[l] = h
        return out

    fwd = sweep(params.fwd, range(k_eff))
    bwd = sweep(params.bwd, range(k_eff - 1, -1, -1))
    hid = [T.concat(tape, [fwd[l], bwd[l]], axis=1) for l in range(k_eff)]

    scores = []
    for l in range(k_eff):
        proj = T.tanh(tape, T.add_bias(
            tape, T.matmul(tape, hid[l], params.pool_w, transpose_b=True),
            params.pool_bias))
        scores.append(T.clip(tape, T.matmul(tape, proj, params.pool_ctx),
                             -LOGIT_CLAMP, LOGIT_CLAMP))
    beta = T.masked_softmax(tape, T.stack_cols(tape, scores), valid)
    weighted = [T.row_scale(tape, hid[l],
                            T.reshape(tape, T.narrow(tape, beta, 1, l, l + 1), (n,)))
                for l in range(k_eff)]
    pooled = T.sum_stack(tape, weighted)
    divisor = lengths.astype(np.float64) if pool_divisor == "actual_len" else \
        np.full(n, float(width))
    s = T.row_scale(tape, pooled, T.constant(1.0 / divisor))
    attention = [beta.data[j, :lengths[j]].copy() for j in range(n)]
    return DocRepresentation(vectors=s, word_attention=attention)
