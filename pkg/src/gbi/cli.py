"""Command-line harness: corpus generation, training, constrained inference,
and report formatting.

Exit codes: 0 success, 1 usage, 2 data/schema error, 3 numerical abort.
"""

import argparse
import csv
import json
import sys
from pathlib import Path

from . import data as D
from .checkpoint import load_checkpoint, save_checkpoint
from .constraint import (
    ShiftReduceConstraint,
    SpanAgreementConstraint,
    TransductionConstraint,
    repair_commands,
)
from .decode import BioSchema
from .infer import GbiConfig, gbi_eval
from .model import ModelConfig, TrainConfig, init_weights, train


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _gen_corpora(task, seed, params=None):
    if task == "transduction":
        return D.gen_transduction(seed)
    if task == "parsing":
        return D.gen_toy_treebank(seed, params)
    if task == "tagging":
        return D.gen_tagging(seed, params)
    raise UsageError(f"unknown task: {task}")


def cmd_gen(args):
    train_c, test_c = _gen_corpora(args.task, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    D.save_corpus(train_c, out / "train.jsonl", force=args.force)
    D.save_corpus(test_c, out / "test.jsonl", force=args.force)
    print(f"wrote {len(train_c)} train / {len(test_c)} test examples to {out}")


def task_vocabs(task):
    if task == "transduction":
        src, tgt = D.transduction_vocabs()
        return src, tgt, None
    if task == "parsing":
        src, tgt = D.treebank_vocabs()
        return src, tgt, None
    if task == "tagging":
        return D.tagging_vocabs()
    raise UsageError(f"unknown task: {task}")


def build_constraint(task, tgt_vocab, schema=None):
    if task == "transduction":
        return TransductionConstraint(tgt_vocab)
    if task == "parsing":
        return ShiftReduceConstraint(tgt_vocab)
    if task == "tagging":
        if schema is None:
            roles = sorted({t[2:] for t in (tgt_vocab.token(i) for i in range(3, len(tgt_vocab))) if t.startswith("B-")})
            schema = BioSchema(roles)
        return SpanAgreementConstraint(schema)
    raise UsageError(f"unknown task: {task}")


PRESETS = {
    # 32-hidden single-layer attention-less LSTM for the transduction study
    "transduction-base": dict(emb_dim=16, hidden_dim=32, layers=1, attention=False, mode="seq2seq"),
    "parsing-toy": dict(emb_dim=16, hidden_dim=32, layers=1, attention=True, mode="seq2seq"),
    "tagging-toy": dict(emb_dim=12, hidden_dim=24, layers=1, attention=False, mode="tagger"),
}


def model_config_for(task, src_vocab, tgt_vocab, preset=None, **overrides):
    preset = preset or {"transduction": "transduction-base", "parsing": "parsing-toy", "tagging": "tagging-toy"}[task]
    kw = dict(PRESETS[preset])
    kw.update({k: v for k, v in overrides.items() if v is not None})
    kw.setdefault("max_decode", 120)
    return ModelConfig(src_vocab=len(src_vocab), tgt_vocab=len(tgt_vocab), **kw)


def cmd_train(args):
    data_dir = Path(args.data)
    train_c = D.load_corpus(data_dir / "train.jsonl")
    task = train_c.meta.get("task") or args.task
    if task is None:
        raise ValueError("corpus metadata lacks a task; pass --task")
    src_vocab, tgt_vocab, _schema = task_vocabs(task)
    config = model_config_for(
        task,
        src_vocab,
        tgt_vocab,
        preset=args.preset,
        hidden_dim=args.hidden,
        emb_dim=args.emb,
        layers=args.layers,
    )
    weights = init_weights(config, args.seed)
    pairs = [(src_vocab.encode(ex.src), tgt_vocab.encode(ex.tgt)) for ex in train_c]
    hyper = TrainConfig(
        epochs=args.epochs, batch_size=args.batch, lr=args.lr, optimizer=args.optimizer, seed=args.seed
    )
    weights, trace = train(weights, config, pairs, hyper)
    save_checkpoint(args.out, config, weights, args.seed, extra={"task": task})
    trace_path = Path(args.out).with_suffix(".loss.csv")
    with open(trace_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "loss"])
        for i, loss in enumerate(trace):
            w.writerow([i, f"{loss:.6f}"])
    print(f"trained {hyper.epochs} epochs; final loss {trace[-1]:.4f}; checkpoint at {args.out}")


def _parse_decode(name):
    if name == "greedy":
        return "greedy", 1
    if name == "viterbi":
        return "viterbi", 1
    if name.startswith("beam:"):
        width = int(name.split(":", 1)[1])
        if width == 1:
            return "greedy", 1
        return "beam", width
    raise UsageError(f"unknown decode strategy: {name}")


def cmd_infer(args):
    config, weights, _seed, extra = load_checkpoint(args.checkpoint)
    corpus = D.load_corpus(args.corpus)
    task = corpus.meta.get("task") or extra.get("task")
    if task is None:
        raise ValueError("cannot determine task from corpus or checkpoint")
    src_vocab, tgt_vocab, schema = task_vocabs(task)
    constraint = build_constraint(task, tgt_vocab, schema)
    decode, width = _parse_decode(args.decode)
    if task == "tagging" and decode == "greedy":
        decode = "viterbi"
    if args.noise_rho > 0:
        if task != "tagging":
            raise UsageError("--noise-rho applies to the tagging task only")
        for k, ex in enumerate(corpus.examples):
            ex.payload = dict(ex.payload)
            ex.payload["spans"] = [
                list(s) for s in D.corrupt_spans(ex.payload["spans"], args.noise_rho, args.noise_seed + k, len(ex.src))
            ]
    cfg = GbiConfig(
        alpha=args.alpha,
        eta=args.eta,
        max_iters=args.max_iters if args.gbi else 0,
        optimizer=args.optimizer,
        decode=decode,
        beam_width=width,
        return_policy={"best": "best", "last": "last"}[args.ret],
        schema=schema,
        task=task,
    )
    if not args.gbi:
        cfg.max_iters = 0
    report, _ = gbi_eval(
        weights, config, corpus, constraint, cfg, src_vocab, tgt_vocab, task=task, jobs=args.jobs
    )
    with open(args.out, "w") as f:
        json.dump(report.to_dict(), f, sort_keys=True, indent=2)
        f.write("\n")
    print(
        f"task={task} n={report.n_instances} failure_rate={report.failure_rate:.4f} "
        f"conversion={'n/a' if report.conversion_rate is None else f'{report.conversion_rate:.4f}'}"
    )


def _fmt(v):
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def cmd_report(args):
    reports = []
    for path in args.reports:
        with open(path) as f:
            d = json.load(f)
        if "failure_rate" not in d or "whole_test" not in d:
            raise ValueError(f"{path}: not an evaluation report")
        reports.append((Path(path).stem, d))
    rows = [("metric",) + tuple(name for name, _ in reports)]
    metric_keys = ["failure_rate", "conversion_rate"]
    for key in metric_keys:
        rows.append((key,) + tuple(_fmt(d.get(key)) for _, d in reports))
    for scope in ("failure_set", "whole_test"):
        for stage in ("before", "after"):
            sample = reports[0][1].get(scope, {}).get(stage, {}) or {}
            for mkey in sorted(sample):
                rows.append(
                    (f"{scope}.{stage}.{mkey}",)
                    + tuple(_fmt((d.get(scope, {}).get(stage) or {}).get(mkey)) for _, d in reports)
                )
    for q in ("25%", "50%", "80%", "95%"):
        rows.append(
            (f"iters_to_convert_{q}",)
            + tuple(_fmt((d.get("iteration_quantiles") or {}).get(q)) for _, d in reports)
        )
    widths = [max(len(str(r[c])) for r in rows) for c in range(len(rows[0]))]
    for r in rows:
        print("  ".join(str(v).ljust(w) for v, w in zip(r, widths)))
    if args.csv:
        with open(args.csv, "w", newline="") as f:
            csv.writer(f).writerows(rows)


def build_parser():
    p = _Parser(prog="gbi", description="Constraint-enforcing inference experiments")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic corpus")
    g.add_argument("task", choices=["transduction", "parsing", "tagging"])
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--out", default="data")
    g.add_argument("--force", action="store_true")
    g.set_defaults(fn=cmd_gen)

    t = sub.add_parser("train", help="train a model on a generated corpus")
    t.add_argument("--data", required=True)
    t.add_argument("--task", default=None)
    t.add_argument("--preset", choices=sorted(PRESETS), default=None)
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int, default=60)
    t.add_argument("--batch", type=int, default=32)
    t.add_argument("--lr", type=float, default=0.003)
    t.add_argument("--optimizer", choices=["sgd", "adam"], default="adam")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--hidden", type=int, default=None)
    t.add_argument("--emb", type=int, default=None)
    t.add_argument("--layers", type=int, default=None)
    t.set_defaults(fn=cmd_train)

    i = sub.add_parser("infer", help="decode a corpus, optionally with constraint enforcement")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--corpus", required=True)
    i.add_argument("--decode", default="greedy", help="greedy | beam:K | viterbi")
    i.add_argument("--gbi", action="store_true")
    i.add_argument("--alpha", type=float, default=0.0)
    i.add_argument("--eta", type=float, default=0.05)
    i.add_argument("--max-iters", type=int, default=100)
    i.add_argument("--return", dest="ret", choices=["best", "last"], default="best")
    i.add_argument("--optimizer", choices=["sgd", "adam"], default="sgd")
    i.add_argument("--noise-rho", type=float, default=0.0)
    i.add_argument("--noise-seed", type=int, default=0)
    i.add_argument("--jobs", type=int, default=1)
    i.add_argument("--out", required=True)
    i.set_defaults(fn=cmd_infer)

    r = sub.add_parser("report", help="format evaluation reports side by side")
    r.add_argument("reports", nargs="+")
    r.add_argument("--csv", default=None)
    r.set_defaults(fn=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.fn(args)
        return 0
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (FileNotFoundError, FileExistsError, ValueError, KeyError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FloatingPointError as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
