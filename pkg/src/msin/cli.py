"""Command line front end: synth, train, eval, rank, and gradcheck.

Every option can also be given in a flat key=value config file (``#`` starts
a comment); command line flags win over file values, file values over
defaults. Exit codes: 0 success, 1 usage or configuration mistake, 2 broken
input data or checkpoint, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as dt
import hashlib
import os
import sys

import numpy as np

from . import data as D
from . import evaluation as E
from . import model as M
from . import tensor as T
from . import training as TR
from .rng import substream
from .text_encoder import load_embedding_file

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

GRADCHECK_TOL = 1e-4
# Fixed widths for the gradient check harness; small enough that central
# differences over every parameter of all three variants stay under half a
# minute, large enough that every code path (masking, attention, context
# injection) is exercised.
GRADCHECK_WIDTHS = dict(d_s=4, d_h=3, d_a=4, d_w=5, vocab_size=20,
                        m=3, max_tokens=4, daily_doc_cap=3)
# Default seed picked by scanning for comfortably sized gradients everywhere.
# Near-zero gradients (often the pooling bias at unlucky seeds) sit below the
# cancellation noise of central differences and would fail spuriously.
GRADCHECK_SEED = 1

THREADS_VAR = "MSIN_THREADS"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; our contract reserves 2 for data."""

    def error(self, message):
        raise _UsageError(message)


# ---------------------------------------------------------------------------
# option plumbing: one table per subcommand, shared between flags and file


def _c_int(key: str, s: str) -> int:
    try:
        return int(s)
    except ValueError:
        raise _UsageError("%s expects an integer, got %r" % (key, s)) from None


def _c_float(key: str, s: str) -> float:
    try:
        return float(s)
    except ValueError:
        raise _UsageError("%s expects a number, got %r" % (key, s)) from None


def _c_bool(key: str, s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise _UsageError("%s expects true or false, got %r" % (key, s))


def _c_str(key: str, s: str) -> str:
    return s


def _c_date(key: str, s: str):
    try:
        return dt.date.fromisoformat(s)
    except ValueError:
        raise _UsageError("%s expects YYYY-MM-DD, got %r" % (key, s)) from None


def _c_fracs(key: str, s: str) -> tuple[float, ...]:
    try:
        parts = tuple(float(p) for p in s.split(","))
    except ValueError:
        raise _UsageError("%s expects comma-separated numbers, got %r"
                          % (key, s)) from None
    if len(parts) != 3:
        raise _UsageError("%s expects three fractions, got %d" % (key, len(parts)))
    return parts


def read_config_file(path: str) -> dict[str, str]:
    """Flat key=value lines; blank lines and # comments are ignored."""
    out: dict[str, str] = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as e:
        raise _UsageError("cannot read config file: %s" % e) from None
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise _UsageError("%s:%d: expected key=value, got %r"
                              % (path, lineno, raw.strip()))
        if key in out:
            raise _UsageError("%s:%d: duplicate key %r" % (path, lineno, key))
        out[key] = value
    return out


def _add_table(parser: argparse.ArgumentParser, table: dict) -> None:
    parser.add_argument("--config", default=None, metavar="FILE",
                        help="key=value config file")
    for key, (_conv, default, help_text) in table.items():
        parser.add_argument("--" + key.replace("_", "-"), dest=key,
                            default=None, metavar="V",
                            help="%s (default %s)" % (help_text, default))


def _merge(args, table: dict) -> dict:
    """Resolve each option: flag, else config file, else default."""
    file_cfg = read_config_file(args.config) if args.config else {}
    unknown = set(file_cfg) - set(table)
    if unknown:
        raise _UsageError("unknown config keys: %s" % ", ".join(sorted(unknown)))
    merged = {}
    for key, (conv, default, _help) in table.items():
        raw = getattr(args, key)
        if raw is None:
            raw = file_cfg.get(key)
        merged[key] = default if raw is None else conv(key, raw)
    return merged


def _require(merged: dict, *keys: str) -> None:
    missing = [k for k in keys if merged[k] is None]
    if missing:
        raise _UsageError("missing required option(s): %s"
                          % ", ".join("--" + k.replace("_", "-") for k in missing))


def thread_count() -> int:
    """Worker cap from the environment; 1 keeps runs fully deterministic."""
    raw = os.environ.get(THREADS_VAR, "1")
    try:
        n = int(raw)
    except ValueError:
        raise _UsageError("%s must be an integer, got %r"
                          % (THREADS_VAR, raw)) from None
    if n < 1:
        raise _UsageError("%s must be at least 1" % THREADS_VAR)
    return n


# ---------------------------------------------------------------------------
# per-command option tables


def _synth_table() -> dict:
    s = D.SynthSpec()
    return {
        "out_dir": (_c_str, ".", "directory for corpus.jsonl and series.csv"),
        "days": (_c_int, s.n_days, "number of generated days"),
        "docs_min": (_c_int, s.n_docs[0], "fewest documents per day"),
        "docs_max": (_c_int, s.n_docs[1], "most documents per day"),
        "len_min": (_c_int, s.doc_len[0], "shortest document in tokens"),
        "len_max": (_c_int, s.doc_len[1], "longest document in tokens"),
        "vocab_size": (_c_int, s.vocab_size, "background vocabulary size"),
        "phi": (_c_float, s.phi, "autoregressive coefficient"),
        "alpha": (_c_float, s.alpha, "signal coefficient"),
        "sigma": (_c_float, s.sigma, "observation noise scale"),
        "plant_prob": (_c_float, s.plant_prob,
                       "per-document probability of carrying signal"),
        "plant_per_day": (_c_bool, s.plant_per_day,
                          "plant exactly one signal document per day"),
        "seed": (_c_int, s.seed, "generator seed"),
        "start": (_c_date, s.start, "date of the first day"),
    }


def _model_entries() -> dict:
    c = M.ModelConfig()
    return {
        "variant": (_c_str, c.variant, "msin, lstm_wo, or lstm_par"),
        "d_s": (_c_int, c.d_s, "series cell width"),
        "d_h": (_c_int, c.d_h, "encoder width per direction"),
        "d_a": (_c_int, c.d_a, "attention width, 0 means d_s"),
        "d_w": (_c_int, c.d_w, "word embedding width"),
        "vocab_size": (_c_int, c.vocab_size, "vocabulary cap"),
        "m": (_c_int, c.m, "look-back window length"),
        "series_dim": (_c_int, c.series_dim, "series columns"),
        "max_tokens": (_c_int, c.max_tokens, "tokens kept per document"),
        "daily_doc_cap": (_c_int, c.daily_doc_cap, "documents kept per day"),
        "dropout_rate": (_c_float, c.dropout_rate, "feature dropout rate"),
        "l1": (_c_float, c.l1, "L1 penalty weight"),
        "l2": (_c_float, c.l2, "L2 penalty weight"),
        "objective": (_c_str, c.objective, "next_value or movement"),
        "pool_divisor": (_c_str, c.pool_divisor,
                         "document pooling divisor: actual_len or max_len"),
    }


def _train_table() -> dict:
    t = TR.TrainConfig()
    table = {
        "corpus": (_c_str, None, "corpus JSONL path"),
        "series": (_c_str, None, "series CSV path"),
        "embeddings": (_c_str, None, "optional pretrained embedding file"),
        "out_dir": (_c_str, ".", "directory for checkpoint and history"),
    }
    table.update(_model_entries())
    table.update({
        "learning_rate": (_c_float, t.learning_rate, "Adam step size"),
        "batch_size": (_c_int, t.batch_size, "samples per update"),
        "max_steps": (_c_int, t.max_steps, "update budget"),
        "clip_norm": (_c_float, t.clip_norm, "global gradient norm cap"),
        "early_stop_patience": (_c_int, t.early_stop_patience,
                                "evaluations without improvement before stopping"),
        "eval_every": (_c_int, t.eval_every, "steps between validations"),
        "seed": (_c_int, t.seed, "run seed: init, shuffling, and dropout"),
        "train_until": (_c_date, None, "last training date (inclusive)"),
        "valid_until": (_c_date, None, "last validation date (inclusive)"),
        "split_fracs": (_c_fracs, None,
                        "train,valid,test fractions; default 0.8,0.1,0.1"),
    })
    return table


def _eval_table() -> dict:
    return {
        "checkpoint": (_c_str, None, "trained checkpoint path"),
        "corpus": (_c_str, None, "corpus JSONL path"),
        "series": (_c_str, None, "series CSV path"),
        "out_dir": (_c_str, ".", "directory for report files"),
        "split": (_c_str, "test", "train, valid, test, or all"),
        "k_max": (_c_int, 5, "largest ranking depth reported"),
        "train_until": (_c_date, None, "override stored split: last train date"),
        "valid_until": (_c_date, None, "override stored split: last valid date"),
        "split_fracs": (_c_fracs, None, "override stored split fractions"),
    }


def _rank_table() -> dict:
    return {
        "checkpoint": (_c_str, None, "trained checkpoint path"),
        "corpus": (_c_str, None, "corpus JSONL path"),
        "series": (_c_str, None, "series CSV path"),
        "date": (_c_date, None, "day to rank; default latest eligible"),
        "debug_masses": (_c_str, None,
                         "comma-separated masses to rank instead of a model"),
        "train_until": (_c_date, None, "override stored split: last train date"),
        "valid_until": (_c_date, None, "override stored split: last valid date"),
        "split_fracs": (_c_fracs, None, "override stored split fractions"),
    }


def _gradcheck_table() -> dict:
    return {
        "variant": (_c_str, "all", "msin, lstm_wo, lstm_par, or all"),
        "seed": (_c_int, GRADCHECK_SEED, "seed for the probe model and sample"),
        "dropout_rate": (_c_float, 0.0, "must stay 0; checks need determinism"),
    }


# ---------------------------------------------------------------------------
# shared pieces


def _split_spec(merged: dict, stored: dict | None = None) -> D.SplitSpec:
    """Build a split from options, falling back to a checkpoint's record."""
    dates = (merged["train_until"], merged["valid_until"])
    fracs = merged["split_fracs"]
    if any(d is not None for d in dates) and fracs is not None:
        raise _UsageError("give split dates or fractions, not both")
    if any(d is not None for d in dates):
        if None in dates:
            raise _UsageError("date splits need both train-until and valid-until")
        return D.SplitSpec(train_until=dates[0], valid_until=dates[1])
    if fracs is not None:
        return D.SplitSpec(fracs=fracs)
    if stored is not None:
        if stored.get("fracs") is not None:
            return D.SplitSpec(fracs=tuple(stored["fracs"]))
        return D.SplitSpec(
            train_until=dt.date.fromisoformat(stored["train_until"]),
            valid_until=dt.date.fromisoformat(stored["valid_until"]))
    return D.SplitSpec(fracs=(0.8, 0.1, 0.1))


def _model_config(merged: dict) -> M.ModelConfig:
    keys = _model_entries().keys()
    try:
        return M.ModelConfig(**{k: merged[k] for k in keys})
    except ValueError as e:
        raise _UsageError(str(e)) from None


def _train_config(merged: dict) -> TR.TrainConfig:
    try:
        return TR.TrainConfig(
            learning_rate=merged["learning_rate"],
            batch_size=merged["batch_size"],
            max_steps=merged["max_steps"],
            clip_norm=merged["clip_norm"],
            early_stop_patience=merged["early_stop_patience"],
            eval_every=merged["eval_every"],
            seed=merged["seed"])
    except ValueError as e:
        raise _UsageError(str(e)) from None


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _embedding_tokens(path: str) -> set[str]:
    toks = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            head = line.split(" ", 1)[0]
            if head:
                toks.add(head)
    return toks


def write_history(history, path: str) -> None:
    """step,train_loss,valid_loss rows; validation blank off-schedule."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("step,train_loss,valid_loss\n")
        for row in history:
            vl = "" if row.valid_loss is None else "%.17g" % row.valid_loss
            fh.write("%d,%.17g,%s\n" % (row.step, row.train_loss, vl))


def _load_samples_for_checkpoint(merged: dict):
    """Rebuild samples the way the checkpointed run saw them."""
    params, config, tcfg, meta = TR.checkpoint_load(merged["checkpoint"])
    corpus = D.load_corpus(merged["corpus"])
    series = D.load_series(merged["series"])
    vocab = D.Vocabulary(tokens=tuple(meta["vocab"]))
    stats = D.SeriesStats(mean=meta["series_mean"], std=meta["series_std"])
    split = _split_spec(merged, stored=meta.get("split"))
    sset = D.make_samples(corpus, series, vocab, config, split, stats=stats)
    return params, config, tcfg, meta, corpus, sset


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    merged = _merge(args, _synth_table())
    try:
        spec = D.SynthSpec(
            n_days=merged["days"],
            n_docs=(merged["docs_min"], merged["docs_max"]),
            doc_len=(merged["len_min"], merged["len_max"]),
            vocab_size=merged["vocab_size"],
            phi=merged["phi"], alpha=merged["alpha"], sigma=merged["sigma"],
            plant_prob=merged["plant_prob"],
            plant_per_day=merged["plant_per_day"],
            seed=merged["seed"], start=merged["start"])
    except D.DatasetError as e:
        raise _UsageError(str(e)) from None
    corpus, series = D.synth_generate(spec)
    os.makedirs(merged["out_dir"], exist_ok=True)
    corpus_path = os.path.join(merged["out_dir"], "corpus.jsonl")
    series_path = os.path.join(merged["out_dir"], "series.csv")
    D.save_corpus(corpus, corpus_path)
    D.save_series(series, series_path)
    print("synth days=%d docs=%d..%d len=%d..%d vocab=%d phi=%g alpha=%g "
          "sigma=%g plant_prob=%g plant_per_day=%s seed=%d start=%s"
          % (spec.n_days, spec.n_docs[0], spec.n_docs[1],
             spec.doc_len[0], spec.doc_len[1], spec.vocab_size, spec.phi,
             spec.alpha, spec.sigma, spec.plant_prob, spec.plant_per_day,
             spec.seed, spec.start.isoformat()))
    for path in (corpus_path, series_path):
        print("wrote %s sha256=%s" % (path, _sha256(path)))
    return EXIT_OK


def cmd_train(args) -> int:
    merged = _merge(args, _train_table())
    _require(merged, "corpus", "series")
    config = _model_config(merged)
    tcfg = _train_config(merged)
    split = _split_spec(merged)

    corpus = D.load_corpus(merged["corpus"])
    series = D.load_series(merged["series"])
    allowed = None
    if merged["embeddings"] is not None:
        try:
            allowed = _embedding_tokens(merged["embeddings"])
        except OSError as e:
            raise D.DatasetError("cannot read embeddings: %s" % e) from None
    vocab = D.build_vocab(corpus, max_size=config.vocab_size, allowed=allowed)
    sset = D.make_samples(corpus, series, vocab, config, split)
    print("samples train=%d valid=%d test=%d (skipped %d no-docs, "
          "%d no-series, %d short-history)"
          % (len(sset.train), len(sset.valid), len(sset.test),
             sset.skipped_no_docs, sset.skipped_no_series,
             sset.skipped_short_history))

    params = M.init_model(config, seed=tcfg.seed)
    if merged["embeddings"] is not None:
        lookup = {tok: i for i, tok in enumerate(vocab.tokens)}
        hits = load_embedding_file(merged["embeddings"], lookup,
                                   params.embedding)
        print("embeddings hit %d of %d vocabulary rows" % (hits, vocab.size))

    result = TR.train(sset, params, config, tcfg)

    os.makedirs(merged["out_dir"], exist_ok=True)
    history_path = os.path.join(merged["out_dir"], "history.csv")
    ckpt_path = os.path.join(merged["out_dir"], "checkpoint.msn")
    write_history(result.history, history_path)
    best_valid = result.best_valid if np.isfinite(result.best_valid) else None
    stored_split = {"train_until": split.train_until.isoformat()
                    if split.train_until else None,
                    "valid_until": split.valid_until.isoformat()
                    if split.valid_until else None,
                    "fracs": list(split.fracs) if split.fracs else None}
    metadata = {"step": result.best_step, "seed": tcfg.seed,
                "valid_loss": best_valid,
                "vocab": list(vocab.tokens),
                "series_mean": sset.stats.mean,
                "series_std": sset.stats.std,
                "split": stored_split}
    TR.checkpoint_save(result.params, config, tcfg, metadata, ckpt_path)
    print("ran %d steps; best validation %.6g at step %d"
          % (result.steps_run, result.best_valid, result.best_step))
    for path in (history_path, ckpt_path):
        print("wrote %s sha256=%s" % (path, _sha256(path)))
    return EXIT_OK


def _pick_split(sset: D.SampleSet, which: str):
    groups = {"train": sset.train, "valid": sset.valid, "test": sset.test,
              "all": sset.train + sset.valid + sset.test}
    if which not in groups:
        raise _UsageError("split must be train, valid, test, or all")
    return groups[which]


def cmd_eval(args) -> int:
    merged = _merge(args, _eval_table())
    _require(merged, "checkpoint", "corpus", "series")
    if merged["k_max"] < 1:
        raise _UsageError("k_max must be at least 1")
    params, config, _tcfg, _meta, _corpus, sset = \
        _load_samples_for_checkpoint(merged)
    samples = _pick_split(sset, merged["split"])
    if not samples:
        raise D.DatasetError("split %r holds no samples" % merged["split"])
    result = E.rank_report(params, config, samples, k_max=merged["k_max"])

    os.makedirs(merged["out_dir"], exist_ok=True)
    report_path = os.path.join(merged["out_dir"], "report.json")
    days_path = os.path.join(merged["out_dir"], "days.jsonl")
    curve_path = os.path.join(merged["out_dir"], "curve.csv")
    E.write_report(result, config, report_path)
    E.write_day_dump(result, days_path)
    E.write_curve_csv(result, curve_path)

    r = result.report
    print("eval split=%s days=%d gtd=%d" % (merged["split"], r.days, r.gtd))
    if r.per_k:
        for p in r.per_k:
            print("k=%d precision=%.4f recall=%.4f" % (p.k, p.precision, p.recall))
    else:
        print("ranking metrics unavailable (no relevance mass or no "
              "ground truth)")
    print("movement accuracy=%.4f over %d days"
          % (r.movement.accuracy, r.movement.n))
    for path in (report_path, days_path, curve_path):
        print("wrote %s sha256=%s" % (path, _sha256(path)))
    return EXIT_OK


def _print_ranking(date_label: str, mass: np.ndarray,
                   texts: list[str] | None) -> None:
    """Mass-sorted rows, a cut marker, and a selected summary line.

    Documents are numbered 1-based in day order so the printout matches how
    people refer to them; machine outputs elsewhere stay 0-based.
    """
    order = E.rank_order(mass)
    chosen = set(E.select_relevant(mass))
    print("ranking for %s (%d documents)" % (date_label, len(mass)))
    shown = 0
    for rank, idx in enumerate(order, 1):
        tail = ""
        if texts is not None:
            text = texts[idx]
            tail = "  " + (text if len(text) <= 60 else text[:57] + "...")
        print("rank %2d  doc %02d  mass %.4f%s" % (rank, idx + 1, mass[idx], tail))
        shown += 1
        if shown == len(chosen):
            print("---- cumulative mass %.4f reached %.2f ----"
                  % (float(np.sort(mass)[::-1][:shown].sum()),
                     E.SELECT_THRESHOLD))
    print("selected: %s" % ", ".join("doc %02d" % (i + 1)
                                     for i in sorted(chosen)))


def cmd_rank(args) -> int:
    merged = _merge(args, _rank_table())
    if merged["debug_masses"] is not None:
        try:
            mass = np.asarray([float(p) for p in
                               merged["debug_masses"].split(",")],
                              dtype=np.float64)
        except ValueError:
            raise _UsageError("debug-masses expects comma-separated numbers") \
                from None
        if mass.size == 0 or (mass < 0).any() or not np.isfinite(mass).all():
            raise _UsageError("debug-masses must be non-negative and finite")
        _print_ranking("debug input", mass, texts=None)
        return EXIT_OK

    _require(merged, "checkpoint", "corpus", "series")
    params, config, _tcfg, _meta, corpus, sset = \
        _load_samples_for_checkpoint(merged)
    samples = sset.train + sset.valid + sset.test
    if merged["date"] is not None:
        samples = [s for s in samples if s.window.date == merged["date"]]
        if not samples:
            raise D.DatasetError("no eligible sample on %s"
                                 % merged["date"].isoformat())
    sample = max(samples, key=lambda s: s.window.date)
    pred = M.forward(None, sample, params, config)
    if pred.relevance is None:
        raise D.DatasetError("variant %r assigns no relevance mass"
                             % config.variant)

    day_docs = {day.date: day.docs for day in corpus.days}[sample.window.date]
    capped = D.cap_daily_docs(day_docs, config.daily_doc_cap)
    texts = [capped[i].text for i in sample.docs.source_idx]
    _print_ranking(sample.window.date.isoformat(),
                   pred.relevance.data.astype(np.float64), texts)
    return EXIT_OK


def _gradcheck_sample(config: M.ModelConfig, rng) -> D.Sample:
    """Three documents of staggered length plus a random window."""
    vocab = D.Vocabulary(tokens=(D.PAD_TOKEN, D.UNK_TOKEN)
                         + tuple("w%02d" % i
                                 for i in range(config.vocab_size - 2)))
    words = vocab.tokens[2:]
    docs = []
    for length in (4, 3, 2):
        toks = [words[int(k)] for k in rng.integers(len(words), size=length)]
        docs.append(D.Document(text=" ".join(toks)))
    batch = D.encode_day(tuple(docs), vocab, config.max_tokens)
    values = rng.standard_normal((config.m, config.series_dim))
    target = float(rng.standard_normal())
    window = D.SeriesWindow(values=values, target=target,
                            prev=float(values[-1, 0]),
                            date=dt.date(2000, 1, 1))
    return D.Sample(window=window, docs=batch,
                    values_n=values.astype(np.float32), target_n=target)


def cmd_gradcheck(args) -> int:
    merged = _merge(args, _gradcheck_table())
    if merged["dropout_rate"] != 0.0:
        raise T.DeterminismError(
            "gradient checks need a deterministic forward pass; "
            "dropout_rate must be 0")
    variants = M.VARIANTS if merged["variant"] == "all" else (merged["variant"],)
    for v in variants:
        if v not in M.VARIANTS:
            raise _UsageError("variant must be one of %s or all"
                              % ", ".join(M.VARIANTS))

    worst_overall = 0.0
    for variant in variants:
        config = M.ModelConfig(variant=variant, **GRADCHECK_WIDTHS)
        params = M.init_model(config, seed=merged["seed"])
        sample = _gradcheck_sample(config, substream(merged["seed"], "probe"))
        rows = M.named_tensors(params)
        leaves = [t for _n, t, _d in rows]

        def build(tape, new_leaves):
            bound = M.bind_tensors(params, new_leaves)
            pred = M.forward(tape, sample, bound, config)
            return M.loss(tape, pred, sample, bound, config)

        table = T.grad_check_table(build, leaves)
        print("variant %s" % variant)
        for name, _t, _d in rows:
            err = table[name]
            flag = "ok" if err < GRADCHECK_TOL else "FAIL"
            print("  %-28s %10.3e  %s" % (name, err, flag))
        worst = max(table.values())
        worst_overall = max(worst_overall, worst)
        print("  worst %.3e (%s)" % (worst, "pass" if worst < GRADCHECK_TOL
                                     else "fail"))
    if worst_overall < GRADCHECK_TOL:
        print("gradcheck pass: worst relative error %.3e < %g"
              % (worst_overall, GRADCHECK_TOL))
        return EXIT_OK
    print("gradcheck FAIL: worst relative error %.3e >= %g"
          % (worst_overall, GRADCHECK_TOL))
    return EXIT_NUMERIC


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> _Parser:
    parser = _Parser(prog="msin", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    specs = [
        ("synth", cmd_synth, _synth_table, "generate a synthetic dataset"),
        ("train", cmd_train, _train_table, "fit a model and write a checkpoint"),
        ("eval", cmd_eval, _eval_table, "score a checkpoint and emit reports"),
        ("rank", cmd_rank, _rank_table, "print one day's document ranking"),
        ("gradcheck", cmd_gradcheck, _gradcheck_table,
         "compare tape gradients against finite differences"),
    ]
    for name, func, table, help_text in specs:
        p = sub.add_parser(name, help=help_text)
        _add_table(p, table())
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    try:
        # The engine runs batches sequentially regardless of the worker cap,
        # so any validated value keeps runs bitwise reproducible.
        thread_count()
        args = build_parser().parse_args(argv)
        if not hasattr(args, "func"):
            raise _UsageError("a subcommand is required (see --help)")
        return args.func(args)
    except SystemExit as e:  # argparse --help
        code = e.code if e.code is not None else 0
        return code if isinstance(code, int) else EXIT_USAGE
    except _UsageError as e:
        print("usage error: %s" % e, file=sys.stderr)
        return EXIT_USAGE
    except (TR.TrainingAbort, T.EngineError) as e:
        print("numeric failure: %s" % e, file=sys.stderr)
        return EXIT_NUMERIC
    except (D.DatasetError, TR.CheckpointError, TR.TrainingError, OSError) as e:
        print("data error: %s" % e, file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
