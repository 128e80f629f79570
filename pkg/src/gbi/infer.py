"""Per-instance constrained inference by gradient descent on a clone of the
trained weights, plus the corpus-level evaluation harness.

The regularizer pulls the instance weights back toward the trained weights
(the direction that keeps them close); its contribution is zero at zero
distance, where the unit vector is undefined.
"""

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics as M
from . import tensor as T
from .constraint import assemble_objective, commands_to_tree, repair_commands
from .decode import beam_decode, greedy_decode, viterbi_bio
from .model import Tape, tagger_logprobs


@dataclass
class GbiConfig:
    alpha: float = 0.0
    eta: float = 0.05
    max_iters: int = 100
    optimizer: str = "sgd"
    decode: str = "greedy"  # greedy | beam | viterbi
    beam_width: int = 1
    return_policy: str = "best"  # best | last
    max_len: int | None = None
    schema: object = None  # BioSchema, viterbi decode only
    task: str = ""  # sets the default decode length cap

    def __post_init__(self):
        if self.alpha < 0 or self.eta <= 0 or self.max_iters < 0:
            raise ValueError("need alpha >= 0, eta > 0, max_iters >= 0")
        if self.return_policy not in ("best", "last"):
            raise ValueError(f"unknown return policy: {self.return_policy}")


@dataclass
class GbiOutcome:
    output: list
    converged: bool
    iterations: int
    trace: list  # per decode: {"g", "psi", "dist"}
    provenance: int  # iteration index of the returned candidate
    baseline: list
    g_before: float
    g_after: float
    aborted: bool = False


def _max_len(cfg, mconfig, x_ids):
    if cfg.max_len is not None:
        return cfg.max_len
    if cfg.task == "transduction":
        return min(3 * len(x_ids) + 8, mconfig.max_decode)
    if cfg.task == "parsing":
        return min(4 * len(x_ids) + 8, mconfig.max_decode)
    return mconfig.max_decode


def _decode_once(weights, mconfig, x_ids, cfg):
    """Inner unconstrained decode; returns (tokens, compatibility score)."""
    cap = _max_len(cfg, mconfig, x_ids)
    if cfg.decode == "greedy":
        r = greedy_decode(weights, mconfig, x_ids, max_len=cap)
        return r.tokens, r.score
    if cfg.decode == "beam":
        best, _ = beam_decode(weights, mconfig, x_ids, cfg.beam_width, max_len=cap)
        return best.tokens, best.score
    if cfg.decode == "viterbi":
        lp = tagger_logprobs(weights, mconfig, x_ids)
        tags = viterbi_bio(lp.data, cfg.schema)
        psi = float(sum(lp.data[i, t] for i, t in enumerate(tags)))
        return tags, psi
    raise ValueError(f"unknown decode strategy: {cfg.decode}")


def gbi_infer(weights, mconfig, example, x_ids, constraint, cfg):
    """Run the gradient-based constraint-enforcement loop for one instance.

    The given weights are never mutated; all updates go to a private clone.
    """
    w_inst = weights.clone()
    opt = T.make_optimizer(cfg.optimizer, cfg.eta)
    trace = []
    candidates = []  # (g, -psi, iteration, tokens)
    iterations = 0
    converged = False
    aborted = False
    while True:
        y, psi = _decode_once(w_inst, mconfig, x_ids, cfg)
        res = constraint.evaluate(example, y)
        g = res.total
        trace.append({"g": g, "psi": psi, "dist": T.l2_distance(weights, w_inst)})
        candidates.append((g, -psi, iterations, list(y)))
        if g == 0.0:
            converged = True
            break
        if iterations >= cfg.max_iters:
            break
        # An empty infeasible decode has no tokens to push down; lower the
        # immediate end-of-sequence decision instead.
        y_obj = y if y else [2]
        with Tape() as tape:
            obj = assemble_objective(w_inst, mconfig, x_ids, y_obj, res)
        grads = T.backward(obj, tape, w_inst)
        if any(not np.all(np.isfinite(gr)) for gr in grads.values()):
            aborted = True
            break
        if cfg.alpha > 0.0:
            dist = T.l2_distance(weights, w_inst)
            if dist > 0.0:
                for name, p in w_inst.items():
                    grads[name] = grads[name] + cfg.alpha * (p.data - weights[name].data) / dist
        opt.step(w_inst, grads)
        iterations += 1
    baseline = candidates[0][3]
    if aborted:
        output, provenance = baseline, 0
    elif cfg.return_policy == "last" and not converged:
        output, provenance = candidates[-1][3], candidates[-1][2]
    else:
        best = min(candidates, key=lambda c: (c[0], c[1]))
        output, provenance = best[3], best[2]
    g_after = constraint.evaluate(example, output).total
    return GbiOutcome(
        output=output,
        converged=converged,
        iterations=iterations,
        trace=trace,
        provenance=provenance,
        baseline=baseline,
        g_before=candidates[0][0],
        g_after=g_after,
        aborted=aborted,
    )


# ---------------------------------------------------------------------------
# corpus-level evaluation

def _run_instance(args):
    weights, mconfig, example, x_ids, constraint, cfg = args
    return gbi_infer(weights, mconfig, example, x_ids, constraint, cfg)


def _parse_spans(commands, m_x):
    tree = commands_to_tree(repair_commands(commands, m_x), m_x)
    out = []

    def walk(t):
        if t.is_leaf:
            return
        out.append((t.span(), t.label))
        for c in t.children:
            walk(c)

    walk(tree)
    return out


def _instance_metrics(task, example, out_tokens, constraint, tgt_vocab):
    """Per-instance quality numbers for one predicted token sequence."""
    gold_ids = tgt_vocab.encode(example.tgt)
    m = {
        "token_accuracy": M.token_accuracy(out_tokens, gold_ids),
        "exact_match": M.exact_match(out_tokens, gold_ids),
    }
    if task == "parsing":
        pred = _parse_spans(constraint.commands(out_tokens), len(example.src))
        gold = _parse_spans(list(example.tgt), len(example.src))
        m["f1"] = M.span_f1(pred, gold)["f1"]
    elif task == "tagging":
        from .constraint import bio_to_spans

        tags = constraint.tags(out_tokens)
        pred_spans = bio_to_spans(tags)
        gold_spans = bio_to_spans(list(example.tgt))
        m["f1"] = M.span_f1(pred_spans, gold_spans)["f1"]
        parse = set(tuple(s) for s in example.payload["spans"])
        if pred_spans:
            m["disagreement"] = sum(1 for (sp, _r) in pred_spans if sp not in parse) / len(pred_spans)
        else:
            m["disagreement"] = 0.0
    return m


def _aggregate(rows):
    if not rows:
        return {}
    keys = rows[0].keys()
    return {k: M.mean(r[k] for r in rows) for k in keys}


def gbi_eval(weights, mconfig, corpus, constraint, cfg, src_vocab, tgt_vocab, task=None, jobs=1):
    """Baseline decode everywhere, gradient-based inference on the failure
    set only, aggregate before/after metrics."""
    task = task or corpus.meta.get("task", "unknown")
    t0 = time.perf_counter()
    baselines = []
    for ex in corpus:
        x_ids = src_vocab.encode(ex.src)
        y, _psi = _decode_once(weights, mconfig, x_ids, cfg)
        g = constraint.evaluate(ex, y).total
        baselines.append((ex, x_ids, y, g))
    fail = [b for b in baselines if b[3] > 0]
    fr = M.failure_rate([b[3] for b in baselines])
    work = [(weights, mconfig, ex, x_ids, constraint, cfg) for ex, x_ids, _y, _g in fail]
    if jobs > 1 and work:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_instance, work))
    else:
        outcomes = [_run_instance(w) for w in work]
    conv = M.conversion_rate(outcomes)

    instances = []
    fail_before, fail_after = [], []
    whole_before, whole_after = [], []
    oi = 0
    for ex, x_ids, y, g in baselines:
        before = _instance_metrics(task, ex, y, constraint, tgt_vocab) if ex.tgt else None
        if g > 0:
            out = outcomes[oi]
            oi += 1
            final = out.output
            after = _instance_metrics(task, ex, final, constraint, tgt_vocab) if ex.tgt else None
            rec = {
                "src": ex.src,
                "baseline": tgt_vocab.decode(y),
                "final": tgt_vocab.decode(final),
                "g_before": g,
                "g_after": out.g_after,
                "iterations": out.iterations,
                "converged": out.converged and out.g_after == 0.0,
            }
            if before:
                fail_before.append(before)
                fail_after.append(after)
        else:
            final, after = y, before
            rec = {
                "src": ex.src,
                "baseline": tgt_vocab.decode(y),
                "final": tgt_vocab.decode(y),
                "g_before": g,
                "g_after": g,
                "iterations": 0,
                "converged": True,
            }
        if before:
            whole_before.append(before)
            whole_after.append(after)
        instances.append(rec)

    report = M.EvalReport(
        format_version=1,
        task=task,
        n_instances=len(baselines),
        failure_rate=fr,
        conversion_rate=conv,
        failure_set={"size": len(fail), "before": _aggregate(fail_before), "after": _aggregate(fail_after)},
        whole_test={"before": _aggregate(whole_before), "after": _aggregate(whole_after)},
        iteration_quantiles=M.iteration_quantiles(outcomes, len(fail)) if fail else {},
        timing={"seconds": time.perf_counter() - t0},
        instances=instances,
    )
    return report, outcomes
