"""``mergelabel`` command line: train, eval, predict, explore, gen-synthetic, verify.

Settings come from a ``key=value`` file (``--config``, or the file named by
``$MERGELABEL_CONFIG``) and are overridden by command-line flags. Every error
exits non-zero with a single ``error: ...`` line on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import explore as ex
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig
from .data import (
    Corpus,
    CorpusError,
    LabelSet,
    Sentence,
    Span,
    copy_labels_up,
    copy_spans_up,
    format_corpus,
    labels_from_spans,
    load_embeddings,
    make_batches,
    read_contextual,
    read_corpus,
)
from .evaluate import EntitySpan, cutoff_search, decode_all, gold_spans, predict, score
from .explore import QueryError
from .model import MergeLabelModel
from .synthetic import SYNTHETIC_MODEL, format_vectors, generate
from .train import TrainingDiverged, train
from .verify import SUITES, run_suites

CONFIG_ENV = "MERGELABEL_CONFIG"
logger = logging.getLogger("mergelabel")

# flag name -> config key; store_true flags set the key to "true"
_PATH_FLAGS = {
    "train": "train",
    "dev": "dev",
    "test": "test",
    "vectors": "vectors",
    "contextual": "contextual",
    "checkpoint": "checkpoint",
    "output_dir": "output_dir",
    "seed": "seed",
    "epochs": "epochs",
    "max_tokens": "max_tokens",
}
_SWITCH_FLAGS = {
    "flat_eval": "flat_eval",
    "unnormalized_embed_update": "unnormalized_embed_update",
    "sentence_boundary_clipping": "sentence_clipping",
    "no_static_layer": "no_static_layer",
    "no_article_theme": "no_article_theme",
    "linear_combination": "linear_combination",
}


class CommandError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the config file, then command-line flags."""
    path = args.config or os.environ.get(CONFIG_ENV)
    cfg = RunConfig.load(path) if path else RunConfig()
    for flag, key in _PATH_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            cfg.set(key, str(value))
    for flag, key in _SWITCH_FLAGS.items():
        if getattr(args, flag, False):
            cfg.set(key, "true")
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        cfg.set(key, value)
    return cfg


def echo_config(cfg: RunConfig) -> None:
    if cfg.output_dir:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        cfg.dump(out / "config.txt")


def _need(value, what: str, flag: str):
    if not value:
        raise CommandError(f"no {what} given (set {flag} or the matching config key)")
    return value


def _read(path: str, labeled: bool = True) -> Corpus:
    if not Path(path).is_file():
        raise CommandError(f"no such file: {path}")
    return read_corpus(path, labeled=labeled)


def _contextual(cfg: RunConfig):
    return read_contextual(cfg.contextual) if cfg.contextual else None


def _fit_levels(corpus: Corpus, L: int, path: str) -> Corpus:
    if corpus.n_levels > L:
        raise CommandError(f"{path} has {corpus.n_levels} label levels but the model has L={L}")
    return Corpus([copy_labels_up(a, L) for a in corpus.articles])


def _load_model(cfg: RunConfig) -> Checkpoint:
    path = _need(cfg.checkpoint, "checkpoint", "--checkpoint")
    if not Path(path).is_file():
        raise CommandError(f"no such file: {path}")
    ckpt = load_checkpoint(path)
    stored = ckpt.config.to_dict()
    differ = [f"{k}={v!r}" for k, v in cfg.model_values.items() if k in stored and stored[k] != v]
    if differ:
        logger.warning("checkpoint config overrides run config for %s", ", ".join(sorted(differ)))
    return ckpt


def _check_labels(corpus: Corpus, labels: LabelSet, path: str) -> None:
    unknown = sorted(set(corpus.entity_types()) - set(labels.names))
    if unknown:
        raise CommandError(f"{path} has labels {unknown} unknown to the checkpoint (knows {labels.names[1:]})")


# ---------------------------------------------------------------------------
# output formats
# ---------------------------------------------------------------------------


def format_span_records(spans, n_sentences: int) -> str:
    """``#sentence <id>`` then one ``sentence_id start end level label`` line per span."""
    by_sentence: dict[int, list[EntitySpan]] = {}
    for sp in spans:
        by_sentence.setdefault(sp.sentence, []).append(sp)
    out = []
    for sid in range(n_sentences):
        out.append(f"#sentence {sid}\n")
        for sp in sorted(by_sentence.get(sid, []), key=lambda sp: (sp.start, -sp.end, sp.level, sp.label)):
            out.append(f"{sp.sentence} {sp.start} {sp.end} {sp.level} {sp.label}\n")
        out.append("\n")
    return "".join(out)


def parse_span_records(text: str, source: str = "<predictions>") -> list[EntitySpan]:
    spans = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 5:
            raise CorpusError(f"{source}:{lineno}: expected 'sentence_id start end level label'")
        try:
            sid, start, end, level = (int(p) for p in parts[:4])
        except ValueError:
            raise CorpusError(f"{source}:{lineno}: non-integer field") from None
        spans.append(EntitySpan(sid, start, end, level, parts[4]))
    return spans


def column_dump(corpus: Corpus, spans, L: int) -> str:
    """The corpus with predicted IOB2 columns (entities copied up to every level that contains them)."""
    by_sentence: dict[int, list] = {}
    for sp in spans:
        by_sentence.setdefault(sp.sentence, []).append(sp)
    out = Corpus()
    sid = 0
    for art in corpus.articles:
        new = type(art)(art.doc_id)
        for sent in art.sentences:
            mine = [Span(sp.start, sp.end, sp.level, sp.label) for sp in by_sentence.get(sid, [])]
            new.sentences.append(Sentence(list(sent.tokens), labels_from_spans(copy_spans_up(mine, L), len(sent), L)))
            sid += 1
        out.articles.append(new)
    return format_corpus(out)


def format_report(metrics: dict, cutoff: float | None, mode: str) -> str:
    lines = []
    if cutoff is not None:
        lines.append(f"cutoff {cutoff:.2f}")
    lines.append(f"mode {mode}")
    lines.append("precision recall f1")
    lines.append(f"{metrics['precision']:.4f} {metrics['recall']:.4f} {metrics['f1']:.4f}")
    lines.append(f"predicted {metrics['n_pred']} gold {metrics['n_gold']}")
    for lab, v in metrics["per_label"].items():
        lines.append(f"{lab} {v['precision']:.4f} {v['recall']:.4f} {v['f1']:.4f}")
    return "\n".join(lines) + "\n"


def _write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_train(cfg: RunConfig, args) -> int:
    train_path = _need(cfg.train, "training corpus", "--train")
    vec_path = _need(cfg.vectors, "word vectors", "--vectors")
    out_dir = Path(_need(cfg.output_dir, "output directory", "--output-dir"))
    for p in (train_path, vec_path, cfg.dev):
        if p and not Path(p).is_file():
            raise CommandError(f"no such file: {p}")
    tr = read_corpus(train_path)
    dv = read_corpus(cfg.dev) if cfg.dev else None
    labels = LabelSet.from_corpus(tr)
    cfg.model_values["n_classes"] = len(labels)
    model_cfg = cfg.model
    tr = _fit_levels(tr, model_cfg.L, train_path)
    words = {t for c in (tr, dv) if c is not None for s in c.sentences() for t in s.tokens}
    vocab = load_embeddings(vec_path, words, cap_dim=model_cfg.cap_dim, seed=cfg.seed)
    if vocab.word_dim != model_cfg.word_dim:
        raise CommandError(f"{vec_path} has {vocab.word_dim}-dim vectors but word_dim={model_cfg.word_dim}")
    echo_config(cfg)
    ctx = _contextual(cfg)
    batches = make_batches(tr, vocab, labels, model_cfg.L, cfg.max_tokens, ctx)
    dev_batches = dev_gold = None
    if dv is not None:
        _check_labels(dv, labels, cfg.dev)
        dv = _fit_levels(dv, model_cfg.L, cfg.dev)
        dev_batches = make_batches(dv, vocab, None, None, cfg.max_tokens)
        dev_gold = gold_spans(dv)
    model = MergeLabelModel(model_cfg, seed=cfg.seed)
    ckpt_path = out_dir / "model.ckpt"
    log_path = out_dir / "metrics.log"
    log = open(log_path, "w", encoding="utf-8")

    def on_epoch(rec):
        log.write(rec.line() + "\n")
        log.flush()
        print(rec.line(), flush=True)

    def on_diverge(m):
        save_checkpoint(Checkpoint(m, vocab, labels), ckpt_path)

    try:
        result = train(
            model, batches, cfg.epochs, cfg.seed, dev_batches, dev_gold, labels.names,
            flat=cfg.flat_eval, on_epoch=on_epoch, on_diverge=on_diverge,
        )
    except TrainingDiverged as exc:
        raise CommandError(f"{exc}; last finite state saved to {ckpt_path}") from None
    finally:
        log.close()
    save_checkpoint(Checkpoint(model, vocab, labels), ckpt_path)
    summary = {
        "epochs": cfg.epochs,
        "best_epoch": result.best_epoch,
        "best_dev_f1": None if np.isnan(result.best_f1) else result.best_f1,
        "final_loss": result.history[-1].loss if result.history else None,
        "checkpoint": str(ckpt_path),
    }
    _write_json(out_dir / "train.json", summary)
    print(f"saved {ckpt_path}")
    return 0


def _eval_batches(cfg: RunConfig, ckpt: Checkpoint, path: str, labeled: bool = True):
    corpus = _read(path, labeled)
    if labeled:
        _check_labels(corpus, ckpt.labels, path)
        corpus = _fit_levels(corpus, ckpt.config.L, path)
    batches = make_batches(corpus, ckpt.vocab, None, None, cfg.max_tokens, _contextual(cfg))
    if batches and batches[0].features.shape[-1] != ckpt.config.e:
        raise CommandError(f"features of width {batches[0].features.shape[-1]} do not match the checkpoint's e={ckpt.config.e}")
    return corpus, batches


def cmd_eval(cfg: RunConfig, args) -> int:
    path = _need(args.input or cfg.test, "evaluation corpus", "--test")
    mode = "flat" if cfg.flat_eval else "nested"
    cutoff = None
    extra = {}
    if args.pass_through:
        gold = pred = gold_spans(_read(path))
    elif args.predictions:
        gold = gold_spans(_read(path))
        if not Path(args.predictions).is_file():
            raise CommandError(f"no such file: {args.predictions}")
        pred = parse_span_records(Path(args.predictions).read_text(encoding="utf-8"), args.predictions)
    else:
        ckpt = _load_model(cfg)
        corpus, batches = _eval_batches(cfg, ckpt, path)
        gold = gold_spans(corpus)
        cutoff = ckpt.config.cutoff if args.cutoff is None else args.cutoff
        if args.cutoff_search:
            dev_path = _need(cfg.dev, "dev corpus for the cutoff search", "--dev")
            dev, dev_batches = _eval_batches(cfg, ckpt, dev_path)
            if not dev_batches:
                raise CommandError(f"{dev_path} is empty; the cutoff search needs a dev set")
            cutoff, grid = cutoff_search(ckpt.model, dev_batches, gold_spans(dev), ckpt.labels.names, flat=cfg.flat_eval)
            print("cutoff-search " + " ".join(f"{c:.2f}:{f:.4f}" for c, f in grid.items()))
            extra["cutoff_search"] = {f"{c:.2f}": f for c, f in grid.items()}
        pred = decode_all(predict(ckpt.model, batches), batches, ckpt.labels.names, cutoff)
    metrics = score(pred, gold, cfg.flat_eval, cfg.np_label)
    sys.stdout.write(format_report(metrics, cutoff, mode))
    payload = {**metrics, "cutoff": cutoff, "mode": mode, **extra}
    json_path = args.json or (Path(cfg.output_dir) / "metrics.json" if cfg.output_dir else None)
    if json_path:
        echo_config(cfg)
        _write_json(json_path, payload)
    return 0


def cmd_predict(cfg: RunConfig, args) -> int:
    path = _need(args.input or cfg.test, "input corpus", "--input")
    ckpt = _load_model(cfg)
    corpus, batches = _eval_batches(cfg, ckpt, path, labeled=False)
    cutoff = ckpt.config.cutoff if args.cutoff is None else args.cutoff
    model = ckpt.model
    model.n_forward = 0
    start = time.perf_counter()
    outputs = predict(model, batches)
    elapsed = time.perf_counter() - start
    spans = decode_all(outputs, batches, ckpt.labels.names, cutoff)
    n_words = sum(b.n_tokens for b in batches)
    records = format_span_records(spans, len(corpus.sentences()))
    if args.out:
        Path(args.out).write_text(records, encoding="utf-8")
    else:
        sys.stdout.write(records)
    if args.columns:
        Path(args.columns).write_text(column_dump(corpus, spans, ckpt.config.L), encoding="utf-8")
    rate = n_words / elapsed if elapsed > 0 else float("inf")
    print(
        f"predicted {len(spans)} spans in {len(corpus.sentences())} sentences; "
        f"{n_words} words in {elapsed:.3f}s ({rate:.0f} words/s); "
        f"forward passes {model.n_forward} for {len(batches)} batches",
        file=sys.stderr,
    )
    if model.n_forward != len(batches):
        raise CommandError(f"{model.n_forward} forward passes for {len(batches)} batches")
    return 0


def cmd_explore(cfg: RunConfig, args) -> int:
    path = _need(args.input or cfg.test or cfg.dev or cfg.train, "corpus to explore", "--input")
    ckpt = _load_model(cfg)
    _, batches = _eval_batches(cfg, ckpt, path, labeled=False)
    outputs = predict(ckpt.model, batches)
    entities = ex.export_entities(outputs, batches, ckpt.labels.names, ckpt.config.cutoff)
    if args.kind == "entity":
        if len(args.query) != 1:
            raise QueryError("usage: explore entity PHRASE")
        q = ex.find_entity(entities, args.query[0])
        found = ex.entity_neighbors(entities, q, args.n)
        title = f"nearest entities to {args.query[0]!r}"
    else:
        if len(args.query) != 2:
            raise QueryError("usage: explore direction SOURCE TARGET")
        directions = ex.export_directions(outputs, batches, entities)
        q = ex.find_direction(directions, entities, *args.query)
        found = ex.direction_neighbors(directions, q, args.n)
        title = f"nearest directions to {args.query[0]!r} -> {args.query[1]!r}"
    sys.stdout.write(ex.format_neighbors(title, found))
    return 0


def cmd_gen_synthetic(cfg: RunConfig, args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tr, dv, te, vecs = generate(cfg.seed, args.size, SYNTHETIC_MODEL["word_dim"])
    for name, corpus in (("train", tr), ("dev", dv), ("test", te)):
        (out / f"{name}.txt").write_text(format_corpus(corpus), encoding="utf-8")
    (out / "vectors.txt").write_text(format_vectors(vecs), encoding="utf-8")
    run = RunConfig()
    for key, value in SYNTHETIC_MODEL.items():
        run.set(key, ",".join(map(str, value)) if isinstance(value, tuple) else str(value))
    for name in ("train", "dev", "test"):
        run.set(name, str(out / f"{name}.txt"))
    run.set("vectors", str(out / "vectors.txt"))
    run.set("output_dir", str(out / "run"))
    run.set("seed", str(cfg.seed))
    run.dump(out / "synthetic.cfg")
    print(f"wrote {out}/{{train,dev,test,vectors}}.txt and {out}/synthetic.cfg")
    return 0


def cmd_verify(cfg: RunConfig, args) -> int:
    results = run_suites(args.suite or None, seed=cfg.seed)
    for r in results:
        print(r.line(), flush=True)
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise CommandError(f"verification failed: {', '.join(failed)}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("configuration")
    g.add_argument("--config", help=f"key=value config file (default: ${CONFIG_ENV})")
    g.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key (repeatable)")
    g.add_argument("--train", help="training corpus")
    g.add_argument("--dev", help="dev corpus")
    g.add_argument("--test", help="test corpus")
    g.add_argument("--vectors", help="word vector file")
    g.add_argument("--contextual", help="precomputed contextual vectors laid out like the corpus")
    g.add_argument("--checkpoint", help="model checkpoint")
    g.add_argument("--output-dir", help="where checkpoints, logs and the effective config go")
    g.add_argument("--seed", type=int)
    g.add_argument("--epochs", type=int)
    g.add_argument("--max-tokens", type=int, help="tokens per batch (one article chunk)")
    g.add_argument("-v", "--verbose", action="store_true")
    a = common.add_argument_group("modes and ablation switches")
    a.add_argument("--flat-eval", action="store_true", help="score outermost named entities only")
    a.add_argument("--unnormalized-embed-update", action="store_true")
    a.add_argument("--sentence-boundary-clipping", action="store_true")
    a.add_argument("--no-static-layer", action="store_true")
    a.add_argument("--no-article-theme", action="store_true")
    a.add_argument("--linear-combination", action="store_true")

    p = argparse.ArgumentParser(prog="mergelabel", description="Merge-and-Label nested named-entity recognition.")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("train", parents=[common], help="train a model and save the best checkpoint")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", parents=[common], help="strict precision/recall/F1 on a labelled corpus")
    sp.add_argument("--input", help="labelled corpus (defaults to the test corpus)")
    sp.add_argument("--cutoff", type=float, help="merge cutoff (default: the checkpoint's, 0.75)")
    sp.add_argument("--cutoff-search", action="store_true", help="pick the cutoff by grid search on --dev")
    sp.add_argument("--pass-through", action="store_true", help="score the gold spans against themselves")
    sp.add_argument("--predictions", help="score a span-record file from predict instead of running the model")
    sp.add_argument("--flat", dest="flat_eval", action="store_true", help="alias of --flat-eval")
    sp.add_argument("--json", help="machine-readable report path (default: OUTPUT_DIR/metrics.json)")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("predict", parents=[common], help="decode spans with a single forward pass per batch")
    sp.add_argument("--input", help="corpus to label; label columns are ignored")
    sp.add_argument("--out", help="span records (default: stdout)")
    sp.add_argument("--columns", help="also write the corpus with predicted IOB2 columns")
    sp.add_argument("--cutoff", type=float)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("explore", parents=[common], help="nearest-neighbour entities or directions")
    sp.add_argument("kind", choices=["entity", "direction"])
    sp.add_argument("query", nargs="+", help="PHRASE, or SOURCE TARGET for a direction")
    sp.add_argument("--input", help="corpus whose decoded entities are searched")
    sp.add_argument("-n", type=int, default=10, help="number of neighbours")
    sp.set_defaults(func=cmd_explore)

    sp = sub.add_parser("gen-synthetic", parents=[common], help="write a seeded synthetic nested corpus")
    sp.add_argument("--size", type=int, default=200, help="training sentences (dev/test get a quarter each)")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_gen_synthetic)

    sp = sub.add_parser("verify", parents=[common], help="run the gradient and oracle suites")
    sp.add_argument("--suite", action="append", choices=list(SUITES), help="run only these suites")
    sp.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s", stream=sys.stderr
    )
    try:
        cfg = resolve_config(args)
        return args.func(cfg, args)
    except FileNotFoundError as exc:
        print(f"error: no such file: {exc.filename}", file=sys.stderr)
    except (CommandError, ConfigError, CorpusError, CheckpointError, QueryError) as exc:
        print(f"error: {str(exc).splitlines()[0] if str(exc) else type(exc).__name__}", file=sys.stderr)
    except (OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
