"""``jointre`` command line: generate, train, evaluate, predict, inspect."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections import Counter
from dataclasses import replace

from . import i2b2
from .config import PRESETS, load_config
from .errors import (AnnotationError, CheckpointError, ConfigError, NumericError, ParseError,
                     SequenceLengthError, ValidationError)
from .i2b2 import GrammarConfig, StandoffDocument, document_to_sentences, generate_synthetic_corpus
from .model import ModelBundle, evaluate, predict
from .relation import generate_candidate_pairs
from .schema import DEFAULT_SCHEMA, RelationSchema
from .text import make_sentence
from .trainer import fit, prepare_data, write_history

log = logging.getLogger("jointre")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

CHECKPOINT_NAME = "model.npz"


def _dump_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_corpus(data_dir, schema):
    if not data_dir or not os.path.isdir(data_dir):
        raise ConfigError(f"data directory not found: {data_dir}")
    docs = i2b2.read_corpus(data_dir, schema)
    if not docs:
        raise ValidationError(f"no .txt documents in {data_dir}")
    return docs


# ------------------------------------------------------------------ commands

def cmd_generate(args):
    seed = 0 if args.seed is None else args.seed
    docs = generate_synthetic_corpus(seed, args.n, GrammarConfig())
    os.makedirs(args.out, exist_ok=True)
    for d in docs:
        i2b2.write_document(d, args.out)
    _dump_json(os.path.join(args.out, "manifest.json"), {
        "generator": "jointre.synthetic",
        "seed": seed,
        "n_documents": len(docs),
        "documents": [d.doc_id for d in docs],
        "relation_counts": dict(sorted(Counter(r.label for d in docs for r in d.relations).items())),
    })
    print(f"wrote {len(docs)} documents to {args.out}")
    return EXIT_OK


def _effective_config(args):
    cfg = load_config(args.config)
    if args.data:
        cfg = replace(cfg, data_dir=args.data)
    if args.out:
        cfg = replace(cfg, output_dir=args.out)
    if args.seed is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    if args.checkpoint:
        cfg = replace(cfg, checkpoint=args.checkpoint)
    return cfg.validate()


def cmd_train(args):
    cfg = _effective_config(args)
    bundle = None
    if cfg.checkpoint:
        bundle = ModelBundle.load(cfg.checkpoint)
        cfg = replace(bundle.config, data_dir=cfg.data_dir, output_dir=cfg.output_dir,
                      checkpoint=cfg.checkpoint)
        bundle.config = cfg
    docs = _read_corpus(cfg.data_dir, bundle.schema if bundle else RelationSchema.from_dict(cfg.schema))
    # surface annotation problems before any training starts
    data = prepare_data(docs, cfg, bundle.vocab if bundle else None)
    os.makedirs(cfg.output_dir, exist_ok=True)
    with open(os.path.join(cfg.output_dir, "config.json"), "w", encoding="utf-8") as fh:
        fh.write(cfg.to_json())
    if bundle is not None:
        score = evaluate(bundle, data.val).score
        print(f"resumed {cfg.checkpoint} at epoch {bundle.epoch}: "
              f"validation score {score:.6f} (recorded {bundle.best_score})")

    ckpt = os.path.join(cfg.output_dir, CHECKPOINT_NAME)

    def on_epoch(b, rec, improved):
        print(f"epoch {rec.epoch:3d}  ner_loss {rec.ner_loss:.4f}  re_loss {rec.re_loss:.4f}  "
              f"val ner {rec.val_ner_f1:.4f}  re_gold {rec.val_re_f1_gold:.4f}  "
              f"re_e2e {rec.val_re_f1_end2end:.4f}{'  *' if improved else ''}", flush=True)
        if improved:
            b.save(ckpt)

    result = fit(docs, cfg, bundle=bundle, on_epoch=on_epoch)
    result.bundle.save(ckpt)
    write_history(os.path.join(cfg.output_dir, "history.csv"), result.history)
    print(f"best validation end-to-end RE F1 {result.bundle.best_score:.4f} at epoch {result.bundle.epoch}; "
          f"checkpoint {ckpt}")
    return EXIT_OK


def build_report(bundle, docs, condition="all", checkpoint=None, data_dir=None):
    sentences = [s for d in docs for s in document_to_sentences(d, bundle.vocab,
                                                                bundle.config.encoder.max_sequence_length,
                                                                bundle.schema)]
    res = evaluate(bundle, sentences)
    report = {
        "checkpoint": checkpoint,
        "data_dir": data_dir,
        "n_documents": len(docs),
        "n_sentences": len(sentences),
        "ner": res.ner.to_dict(),
    }
    headline = {"ner_f1": res.ner.f1}
    if condition in ("all", "gold"):
        report["re_gold_entities"] = dict(res.re_gold.to_dict(),
                                          by_label={k: v.to_dict() for k, v in res.re_gold_by_label.items()})
        headline["re_f1_gold_entities"] = res.re_gold.f1
    if condition in ("all", "end2end"):
        report["re_end_to_end"] = dict(res.re_end2end.to_dict(),
                                       by_label={k: v.to_dict() for k, v in res.re_end2end_by_label.items()})
        headline["re_f1_end_to_end"] = res.re_end2end.f1
    report["headline"] = headline
    return report, res


def cmd_evaluate(args):
    if not args.checkpoint:
        raise ConfigError("evaluate needs --checkpoint")
    bundle = ModelBundle.load(args.checkpoint)
    docs = _read_corpus(args.data, bundle.schema)
    report, _ = build_report(bundle, docs, args.condition, args.checkpoint, args.data)
    out_dir = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "evaluation_report.json")
    _dump_json(path, report)
    for key, value in report["headline"].items():
        print(f"{key:22s} {value:.4f}")
    print(f"report written to {path}")
    return EXIT_OK


def predict_file(bundle, txt_path):
    """Predicted StandoffDocument for a newline-delimited text file."""
    with open(txt_path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    max_len = bundle.config.encoder.max_sequence_length
    sentences, line_nos, too_long = [], [], []
    for n, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            sentences.append(make_sentence(line, bundle.vocab, sent_id=str(n), max_length=max_len))
        except SequenceLengthError:
            too_long.append(n)
            continue
        line_nos.append(n)
    if too_long:
        raise SequenceLengthError(
            f"{txt_path}: lines longer than {max_len} tokens: {', '.join(map(str, too_long))}")
    concepts, relations = [], []
    for n, pred in zip(line_nos, predict(bundle, sentences)):
        c, r = i2b2.sentence_predictions_to_annotations(n, lines[n - 1], pred.entities, pred.relations,
                                                        bundle.schema)
        concepts.extend(c)
        relations.extend(r)
    stem = os.path.splitext(os.path.basename(txt_path))[0]
    return StandoffDocument(stem, tuple(lines), tuple(concepts), tuple(relations))


def cmd_predict(args):
    if not args.checkpoint:
        raise ConfigError("predict needs --checkpoint")
    if not os.path.isfile(args.txt_file):
        raise ConfigError(f"input file not found: {args.txt_file}")
    bundle = ModelBundle.load(args.checkpoint)
    doc = predict_file(bundle, args.txt_file)
    _, con, rel = i2b2.serialize(doc, bundle.schema)
    out_dir = args.out or os.path.dirname(os.path.abspath(args.txt_file))
    os.makedirs(out_dir, exist_ok=True)
    for ext, body in (("con", con), ("rel", rel)):
        with open(os.path.join(out_dir, f"{doc.doc_id}.{ext}"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(body)
    print(f"{len(doc.concepts)} concepts, {len(doc.relations)} relations written to {out_dir}")
    return EXIT_OK


def corpus_stats(docs, schema):
    sents = [s for d in docs for s in document_to_sentences(d, schema=schema)]
    fam = Counter(c.family for s in sents for c in generate_candidate_pairs(s.gold_entities or (), schema))
    return {
        "documents": len(docs),
        "sentences": len(sents),
        "tokens": sum(len(s) for s in sents),
        "max_sentence_length": max((len(s) for s in sents), default=0),
        "entities": dict(sorted(Counter(c.entity_type for d in docs for c in d.concepts).items())),
        "relations": dict(sorted(Counter(r.label for d in docs for r in d.relations).items())),
        "candidate_pairs": dict(sorted(fam.items())),
    }


def cmd_inspect(args):
    out = {}
    if args.checkpoint:
        b = ModelBundle.load(args.checkpoint)
        params = b.parameters()
        out["checkpoint"] = {
            "path": args.checkpoint,
            "epoch": b.epoch,
            "best_score": b.best_score,
            "optimizer_steps": b.adam.step_count,
            "vocabulary_size": len(b.vocab),
            "parameters": sum(p.data.size for p in params.values()),
            "config": b.config.to_dict(),
        }
    if args.data:
        schema = RelationSchema.from_dict(load_config(args.config).schema) if args.config \
            else DEFAULT_SCHEMA
        out["corpus"] = corpus_stats(_read_corpus(args.data, schema), schema)
    if not out:
        raise ConfigError("inspect needs --data and/or --checkpoint")
    print(json.dumps(out, indent=2, sort_keys=True))
    return EXIT_OK


# ------------------------------------------------------------------ plumbing

def build_parser():
    p = argparse.ArgumentParser(prog="jointre", description="Joint clinical NER and relation extraction.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", default="paper-faithful",
                            help=f"JSON config file or preset ({', '.join(PRESETS)})")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--data")
        sp.add_argument("--out")
        sp.add_argument("--checkpoint")

    g = sub.add_parser("generate", help="write a synthetic i2b2-format corpus")
    common(g, config=False)
    g.add_argument("-n", "--n", type=int, default=100)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train and keep the best checkpoint")
    common(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="micro-F1 report for NER and RE")
    common(e, config=False)
    e.add_argument("--condition", choices=("gold", "end2end", "all"), default="all")
    e.set_defaults(func=cmd_evaluate)

    pr = sub.add_parser("predict", help="write .con/.rel predictions for a text file")
    common(pr, config=False)
    pr.add_argument("txt_file")
    pr.set_defaults(func=cmd_predict)

    i = sub.add_parser("inspect", help="corpus statistics and checkpoint summary")
    common(i)
    i.set_defaults(func=cmd_inspect, config=None)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "generate" and args.out is None:
        print("error: generate needs --out", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, CheckpointError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, ValidationError, AnnotationError, SequenceLengthError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
