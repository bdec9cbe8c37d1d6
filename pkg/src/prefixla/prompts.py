"""Input-side transforms: context repetition.

Pure token-id operations; no tokenizer is bundled.  Text front-ends map to
ids upstream, keeping these functions deterministic and corpus-free.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class PromptPair:
    """A context/question pair with a total token budget.

    The question is never truncated; `answer_span` is an optional (start, end)
    index range into the context that must survive truncation.
    """

    context: tuple
    question: tuple
    budget: int
    answer_span: tuple | None = None

    def __init__(self, context: Sequence[int], question: Sequence[int],
                 budget: int, answer_span: tuple | None = None):
        object.__setattr__(self, "context", tuple(context))
        object.__setattr__(self, "question", tuple(question))
        object.__setattr__(self, "budget", int(budget))
        object.__setattr__(self, "answer_span", answer_span)
        if self.budget < len(self.question):
            raise ValueError("budget smaller than the question")


def jrt_transform(pair: PromptPair) -> list[int]:
    """Repeat the (possibly truncated) context and question: C', Q, C', Q.

    The context is truncated from the right so the doubled prompt fits the
    budget; both copies are identical.  With an answer span declared, the
    truncation must keep it or a ValueError is raised.
    """
    c, q = list(pair.context), list(pair.question)
    if c and pair.budget < 2 * len(q) + 2:
        raise ValueError("budget too small to repeat any context")
    if not c and pair.budget < 2 * len(q):
        raise ValueError("budget too small to repeat the question")
    keep = min(len(c), (pair.budget - 2 * len(q)) // 2)
    if pair.answer_span is not None:
        start, end = pair.answer_span
        if not (0 <= start <= end <= len(c)):
            raise ValueError("answer span out of context bounds")
        if end > keep:
            raise ValueError("answer span would be truncated at this budget")
    c = c[:keep]
    return c + q + c + q


def truncated_prompt(pair: PromptPair) -> list[int]:
    """The single-pass prompt C', Q at the pair's budget (no repetition)."""
    keep = min(len(pair.context), pair.budget - len(pair.question))
    return list(pair.context[:keep]) + list(pair.question)


def jrp_repeat(tokens, repeats: int):
    """Repeat the whole input end to end: out[i] = tokens[i mod N].

    Works on token lists and on row matrices (repeated along axis 0).
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    import numpy as np

    if isinstance(tokens, np.ndarray):
        return np.concatenate([tokens] * repeats, axis=0)
    return list(tokens) * repeats
