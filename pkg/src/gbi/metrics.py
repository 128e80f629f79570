"""Evaluation quantities: failure/conversion rates, exact match, token
accuracy, labeled span F1, before/after aggregation, iteration quantiles."""

from dataclasses import asdict, dataclass, field

QUANTILES = (0.25, 0.50, 0.80, 0.95)


def failure_rate(losses):
    """Fraction of instances whose baseline output violates constraints."""
    losses = list(losses)
    if not losses:
        raise ValueError("empty evaluation set")
    return sum(1 for g in losses if g > 0) / len(losses)


def conversion_rate(outcomes):
    """Converged fraction of the failure set; None when the set is empty."""
    outcomes = list(outcomes)
    if not outcomes:
        return None
    return sum(1 for o in outcomes if o.converged) / len(outcomes)


def exact_match(pred, gold):
    return 1.0 if list(pred) == list(gold) else 0.0


def token_accuracy(pred, gold):
    """Positionwise matches over the aligned prefix; the denominator is the
    longer length, so truncation and over-generation both count as errors."""
    n = max(len(pred), len(gold))
    if n == 0:
        return 1.0
    hits = sum(1 for a, b in zip(pred, gold) if a == b)
    return hits / n


def span_f1(pred_spans, gold_spans):
    """Labeled span P/R/F1 with multiset matching; empty vs empty is perfect."""
    pred = list(pred_spans)
    gold = list(gold_spans)
    if not pred and not gold:
        return {"precision": 1.0, "recall": 1.0, "f1": 1.0}
    remaining = list(gold)
    matches = 0
    for s in pred:
        if s in remaining:
            remaining.remove(s)
            matches += 1
    p = matches / len(pred) if pred else 0.0
    r = matches / len(gold) if gold else 0.0
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return {"precision": p, "recall": r, "f1": f1}


def mean(values):
    values = list(values)
    return sum(values) / len(values) if values else None


def iteration_quantiles(outcomes, failure_size):
    """Iterations needed to convert each QUANTILES share of the failure set;
    None where that share is never reached."""
    iters = sorted(o.iterations for o in outcomes if o.converged)
    out = {}
    for q in QUANTILES:
        need = q * failure_size
        key = f"{int(q * 100)}%"
        reached = None
        for k, it in enumerate(iters, start=1):
            if k >= need:
                reached = it
                break
        out[key] = reached
    return out


@dataclass
class EvalReport:
    format_version: int
    task: str
    n_instances: int
    failure_rate: float
    conversion_rate: float | None
    failure_set: dict = field(default_factory=dict)  # before/after metrics
    whole_test: dict = field(default_factory=dict)
    iteration_quantiles: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)
    instances: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)

    def stripped(self):
        """Copy without timing, for determinism comparisons."""
        d = self.to_dict()
        d.pop("timing", None)
        return d
