"""Hard-constraint losses, the shift-reduce simulator, and tree/command/span
conversions.

Command sequences are lists of command strings: "s", "r", and "!" (a typed
stop-reduce is "!" followed by its label, e.g. "!NP"). A plain python string
like "ssrr!" is accepted anywhere untyped commands suffice.

The under-reduction term of the shift-reduce loss counts only reduces whose
run was closed by a later "!": items popped by an unterminated trailing run
return to the stack, which is exactly what makes loss == 0 coincide with
full validity (see the exhaustive equivalence test).
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .model import sequence_logprob, tagger_logprobs


def _is_bang(c):
    return c.startswith("!")


def normalize_commands(commands):
    if isinstance(commands, str):
        return list(commands)
    return list(commands)


# ---------------------------------------------------------------------------
# trees

@dataclass(frozen=True)
class Tree:
    children: tuple = ()
    leaf: int = -1  # >= 0 for leaves
    label: str = ""

    @property
    def is_leaf(self):
        return self.leaf >= 0

    def leaves(self):
        if self.is_leaf:
            return [self.leaf]
        out = []
        for c in self.children:
            out.extend(c.leaves())
        return out

    def span(self):
        lv = self.leaves()
        return (min(lv), max(lv) + 1)


def leaf(i):
    return Tree(leaf=i)


def node(children, label=""):
    if not children:
        raise ValueError("internal node needs at least one child")
    return Tree(children=tuple(children), label=label)


@dataclass(frozen=True)
class SpanSet:
    spans: frozenset  # of (i, j)
    length: int

    def __contains__(self, span):
        return tuple(span) in self.spans


def tree_spans(tree):
    """Spans [i, j) covered by every internal node."""
    spans = set()

    def walk(t):
        if t.is_leaf:
            return
        spans.add(t.span())
        for c in t.children:
            walk(c)

    walk(tree)
    return SpanSet(frozenset(spans), tree.span()[1] if tree.leaves() else 0)


def tree_to_commands(tree):
    """Linearize a tree as shift / reduce / stop-reduce commands."""
    out = []

    def walk(t):
        if t.is_leaf:
            out.append("s")
            return
        for c in t.children:
            walk(c)
        out.extend("r" * len(t.children))
        out.append("!" + t.label)

    walk(tree)
    return out


# ---------------------------------------------------------------------------
# shift-reduce simulation

@dataclass
class ValidityReport:
    shift_count: int
    underflow_events: int
    empty_bang_events: int
    final_stack_size: int
    tree: Tree | None  # present iff fully valid

    @property
    def valid(self):
        return self.tree is not None


def sr_simulate(commands, m_x):
    """Total-function shift-reduce execution with clamped error recovery."""
    commands = normalize_commands(commands)
    stack = []
    run = []
    shifts = underflow = empty_bang = 0
    for c in commands:
        if c == "s":
            stack.append(leaf(shifts))  # indices >= m_x act as sentinels
            shifts += 1
        elif c == "r":
            if stack:
                run.append(stack.pop())
            else:
                underflow += 1
        elif _is_bang(c):
            if run:
                stack.append(node(tuple(reversed(run)), c[1:]))
                run = []
            else:
                empty_bang += 1
        # other symbols are no-ops
    stack.extend(reversed(run))  # unterminated run returns to the stack
    final = len(stack)
    valid = shifts == m_x and underflow == 0 and empty_bang == 0 and final == 1
    return ValidityReport(shifts, underflow, empty_bang, final, stack[0] if valid else None)


def commands_to_tree(commands, m_x):
    """Strict inverse of tree_to_commands; raises on any invalid sequence."""
    commands = normalize_commands(commands)
    rep = sr_simulate(commands, m_x)
    if not rep.valid:
        raise ValueError("command sequence does not encode a valid tree")
    return rep.tree


def sr_loss(commands, m_x):
    """Length-normalized count of shift-reduce validity violations."""
    commands = normalize_commands(commands)
    n = len(commands)
    if m_x + n == 0:
        return 0.0
    ct_s = sum(1 for c in commands if c == "s")
    ct_bang = sum(1 for c in commands if _is_bang(c))
    excess_sum = 0  # sum over prefixes of max(0, reduces - pushes)
    pushes = pops = 0
    run_r = 0
    completed_r = 0
    for c in commands:
        if c == "s":
            pushes += 1
        elif c == "r":
            pops += 1
            run_r += 1
        elif _is_bang(c):
            pushes += 1
            completed_r += run_r
            run_r = 0
        excess_sum += max(0, pops - pushes)
    surplus = max(0, ct_s + ct_bang - completed_r - 1)
    return (abs(m_x - ct_s) + excess_sum + surplus) / (m_x + n)


def repair_commands(commands, m_x):
    """Deterministic completion of a command sequence into a valid tree.

    Drops infeasible commands (underflowing reduces, empty stop-reduces,
    surplus shifts), appends missing shifts, closes any open run, and wraps
    leftovers into a single root. Feasible inputs come back unchanged.
    """
    commands = normalize_commands(commands)
    if sr_loss(commands, m_x) == 0.0:
        return commands
    out = []
    shifts = stack = run = 0
    for c in commands:
        if c == "s":
            if shifts >= m_x:
                continue
            shifts += 1
            stack += 1
        elif c == "r":
            if stack == 0:
                continue
            stack -= 1
            run += 1
        elif _is_bang(c):
            if run == 0:
                continue
            stack += 1
            run = 0
        else:
            continue
        out.append(c)
    while shifts < m_x:
        out.append("s")
        shifts += 1
        stack += 1
    if run > 0:
        out.append("!")
        stack += 1
    if stack > 1:
        out.extend("r" * stack)
        out.append("!")
    return out


# ---------------------------------------------------------------------------
# task losses

@dataclass
class LossResult:
    total: float
    # list of (scope, weight); scope is a (i, j) span or None for the whole
    # sequence. Weights sum to total.
    parts: list | None = None

    @property
    def feasible(self):
        return self.total == 0.0


def transduction_loss(x, y):
    """Quadratic count constraint: output 'a's must be 3x the input 'a's."""
    m, n = len(x), len(y)
    if m + n == 0:
        return 0.0
    xa = sum(1 for t in x if t == "a")
    ya = sum(1 for t in y if t == "a")
    return (3 * xa - ya) ** 2 / (m + n)


def bio_to_spans(tags):
    """Maximal B-X (I-X)* runs as (span, role); orphan I-X starts a span."""
    spans = []
    start = None
    role = None
    for i, t in enumerate(tags):
        if t.startswith("B-"):
            if start is not None:
                spans.append(((start, i), role))
            start, role = i, t[2:]
        elif t.startswith("I-"):
            if start is None or t[2:] != role:
                if start is not None:
                    spans.append(((start, i), role))
                start, role = i, t[2:]
        else:
            if start is not None:
                spans.append(((start, i), role))
                start = role = None
    if start is not None:
        spans.append(((start, len(tags)), role))
    return spans


def span_agreement_loss(tags, parse):
    """Per-span agreement with the parse: 0 if the exact interval is a parse
    node, else 1/len(span)."""
    parts = []
    total = 0.0
    for (i, j), _role in bio_to_spans(tags):
        g = 0.0 if (i, j) in parse else 1.0 / (j - i)
        parts.append(((i, j), g))
        total += g
    return LossResult(total, parts)


# ---------------------------------------------------------------------------
# constraint-loss evaluators over token sequences

class TransductionConstraint:
    """Token-count realization of the transduction loss; needs the target
    vocab to know which output tokens spell 'a'."""

    def __init__(self, tgt_vocab):
        self.tgt_vocab = tgt_vocab

    def evaluate(self, example, y_tokens):
        x = example.src
        y = [self.tgt_vocab.token(t) for t in y_tokens]
        return LossResult(transduction_loss(x, y))


class ShiftReduceConstraint:
    def __init__(self, tgt_vocab):
        self.tgt_vocab = tgt_vocab

    def commands(self, y_tokens):
        return [self.tgt_vocab.token(t) for t in y_tokens]

    def evaluate(self, example, y_tokens):
        return LossResult(sr_loss(self.commands(y_tokens), len(example.src)))


class SpanAgreementConstraint:
    def __init__(self, schema):
        self.schema = schema

    def tags(self, y_tokens):
        return [self.schema.labels.get(t, "O") for t in y_tokens]

    def evaluate(self, example, y_tokens):
        parse = SpanSet(frozenset(tuple(s) for s in example.payload["spans"]), len(example.src))
        return span_agreement_loss(self.tags(y_tokens), parse)


# ---------------------------------------------------------------------------
# objective assembly

def assemble_objective(weights, config, x, y_tokens, loss_result):
    """Differentiable constraint-weighted compatibility score.

    y and the loss weights are constants; gradients flow only through the
    model score. Returns a scalar tensor.
    """
    parts = loss_result.parts
    if parts is None:
        parts = [(None, loss_result.total)]
    whole_weight = sum(w for scope, w in parts if scope is None)
    span_parts = [(scope, w) for scope, w in parts if scope is not None and w != 0.0]
    for (i, j), _w in span_parts:
        if not (0 <= i < j <= len(x)):
            raise ValueError(f"part scope ({i}, {j}) out of range")
    terms = []
    if whole_weight != 0.0:
        terms.append(T.scale(sequence_logprob(weights, config, x, y_tokens), whole_weight))
    if span_parts:
        lp = tagger_logprobs(weights, config, x)
        picked = T.pick(lp, y_tokens)
        pos_w = np.zeros(len(x))
        for (i, j), w in span_parts:
            pos_w[i:j] += w
        terms.append(T.ssum(T.cmul(picked, pos_w)))
    if not terms:
        return T.constant(0.0)
    total = terms[0]
    for t in terms[1:]:
        total = T.add(total, t)
    return total
