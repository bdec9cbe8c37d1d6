"""The set-disjointness synthetic task and its exactly-verifiable solvers.

Three views of the same problem live here:

* a token-sequence generator for training (two sets drawn from disjoint
  vocabulary halves with exactly one planted intersection token),
* a streaming solver over the bit-row encoding of a twice-repeated input,
  which detects which set is smaller from the position of the first
  separator and buffers only that set (state never exceeds
  min(|A|,|B|) rows),
* a single linear-attention layer plus a ReLU shift that flags, for each
  element of B, whether it appears in A, given a feature map whose
  cross-roster inner products are within 1/(3|A|).

The general-recall reductions at the bottom convert between key/value
recall and set disjointness in both directions: recall splits into one
disjointness call per value bit, and disjointness is recall with self-keyed
pairs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Optional, Sequence

import numpy as np

from prefixla.featmaps import cross_roster_epsilon
from prefixla.prompts import jrp_repeat
from prefixla.tensor import IGNORE_LABEL

PREFIX_ID = 0
MASK_ID = 1
SEP_SETS_ID = 2
SEP_ANSWER_ID = 3
N_SPECIALS = 4
SPECIALS = (PREFIX_ID, MASK_ID, SEP_SETS_ID, SEP_ANSWER_ID)

DESK_VOCAB = 256
DESK_MAX_SET = 64
PAPER_VOCAB = 2048

# (|A|, |B|) mixtures; evaluation tuples require length extrapolation
PAPER_TRAIN_TUPLES = [
    (4, 16), (16, 4), (8, 32), (32, 8), (64, 16), (16, 64),
    (4, 128), (128, 4), (16, 256), (256, 16), (4, 256), (256, 4),
]
PAPER_EVAL_TUPLES = [
    (1, 32), (32, 1), (4, 32), (32, 4), (4, 128), (128, 4),
    (16, 256), (256, 16), (4, 256), (256, 4), (16, 512), (512, 16),
    (4, 512), (512, 4), (8, 768), (768, 8), (16, 768), (768, 16),
    (4, 768), (768, 4),
]
TRAIN_COUNT_PER_TUPLE = 20000
EVAL_COUNT_PER_TUPLE = 1000


@dataclass
class SDInstance:
    """One prompt: [prefix] A [sep] B [sep_answer] [mask], answer at the end."""

    input_ids: list
    labels: list
    len_a: int
    len_b: int
    vocab: int
    intersection: int
    specials: tuple = SPECIALS

    def set_a(self) -> list:
        return self.input_ids[1 : 1 + self.len_a]

    def set_b(self) -> list:
        return self.input_ids[2 + self.len_a : 2 + self.len_a + self.len_b]

    def to_json(self) -> str:
        return json.dumps({
            "input_ids": self.input_ids,
            "labels": self.labels,
            "len_a": self.len_a,
            "len_b": self.len_b,
            "vocab": self.vocab,
        })

    @classmethod
    def from_json(cls, line: str) -> "SDInstance":
        d = json.loads(line)
        return cls(d["input_ids"], d["labels"], d["len_a"], d["len_b"],
                   d["vocab"], d["labels"][-1])


def gen_sd_instance(len_a: int, len_b: int, vocab: int, seed) -> SDInstance:
    """Draw sets from the two vocabulary halves and plant one intersection.

    A comes from the first half of the non-special ids, B from the second
    half; one randomly chosen element of A replaces a random position of B,
    so |A & B| == 1 by construction.  Labels are the ignore marker everywhere
    except the final (masked) position, which carries the planted token.
    """
    if len_a < 1 or len_b < 1:
        raise ValueError("set sizes must be >= 1")
    half = (vocab - N_SPECIALS) // 2
    if len_a > half or len_b > half:
        raise ValueError(f"set size exceeds half-vocabulary ({half})")
    rng = np.random.default_rng(seed)
    lo_a, lo_b = N_SPECIALS, N_SPECIALS + half
    a = rng.choice(half, size=len_a, replace=False) + lo_a
    b = rng.choice(half, size=len_b, replace=False) + lo_b
    t = int(a[rng.integers(len_a)])
    b[rng.integers(len_b)] = t
    input_ids = ([PREFIX_ID] + a.tolist() + [SEP_SETS_ID] + b.tolist()
                 + [SEP_ANSWER_ID, MASK_ID])
    labels = [IGNORE_LABEL] * (len(input_ids) - 1) + [t]
    return SDInstance(input_ids, labels, len_a, len_b, vocab, t)


def mixture_spec(split: str, scale: float, profile: str = "desk"
                 ) -> tuple[list[tuple[int, int, int]], int]:
    """The (|A|, |B|, count) table and vocabulary for a split.

    The desk profile clamps set sizes to 64 and uses a 256 vocabulary so the
    grid trains on CPU; the paper profile keeps the full tuples and V=2048.
    """
    if split not in ("train", "eval"):
        raise ValueError("split must be 'train' or 'eval'")
    if not 0.0 < scale <= 1.0:
        raise ValueError("scale must be in (0, 1]")
    tuples = PAPER_TRAIN_TUPLES if split == "train" else PAPER_EVAL_TUPLES
    base = TRAIN_COUNT_PER_TUPLE if split == "train" else EVAL_COUNT_PER_TUPLE
    if profile == "desk":
        vocab = DESK_VOCAB
        tuples = [(min(a, DESK_MAX_SET), min(b, DESK_MAX_SET)) for a, b in tuples]
    elif profile == "paper":
        vocab = PAPER_VOCAB
    else:
        raise ValueError(f"unknown profile {profile!r}")
    count = max(1, round(base * scale))
    return [(a, b, count) for a, b in tuples], vocab


def gen_mixture(split: str, scale: float, profile: str = "desk",
                seed: int = 0, vocab: Optional[int] = None) -> Iterator[SDInstance]:
    """Stream the mixture for a split; deterministic given the seed."""
    table, default_vocab = mixture_spec(split, scale, profile)
    v = default_vocab if vocab is None else vocab
    idx = 0
    for len_a, len_b, count in table:
        for _ in range(count):
            yield gen_sd_instance(len_a, len_b, v, seed=[seed, idx])
            idx += 1


def write_jsonl(instances: Iterable[SDInstance], path: str) -> int:
    n = 0
    with open(path, "w") as fh:
        for inst in instances:
            fh.write(inst.to_json() + "\n")
            n += 1
    return n


def read_jsonl(path: str) -> list[SDInstance]:
    with open(path) as fh:
        return [SDInstance.from_json(line) for line in fh if line.strip()]


# --- streaming solver over the bit-row encoding ---

def default_bit_width(elems: Iterable[int]) -> int:
    m = max(elems, default=0)
    return max(1, int(m).bit_length())


def encode_rows(set_a: Sequence[int], set_b: Sequence[int], n: int) -> np.ndarray:
    """Rows of n-bit element encodings with a separator-flag column.

    Layout: A's rows, one separator row [0^n :: 1], B's rows.  Elements must
    fit in n bits; set elements must be distinct within each set.
    """
    for s in (set_a, set_b):
        if len(set(s)) != len(list(s)):
            raise ValueError("set elements must be distinct")
        for e in s:
            if e < 0 or e >= (1 << n):
                raise ValueError(f"element {e} does not fit in {n} bits")
    rows = np.zeros((len(set_a) + len(set_b) + 1, n + 1), dtype=np.uint8)
    shifts = np.arange(n - 1, -1, -1)
    if len(set_a):
        rows[: len(set_a), :n] = (np.asarray(list(set_a))[:, None] >> shifts) & 1
    rows[len(set_a), n] = 1
    if len(set_b):
        rows[len(set_a) + 1 :, :n] = (np.asarray(list(set_b))[:, None] >> shifts) & 1
    return rows


def _decode_row(row: np.ndarray, n: int) -> int:
    val = 0
    for bit in row[:n]:
        val = (val << 1) | int(bit)
    return val


def streaming_sd_solve(u_jrt: np.ndarray, n: int) -> tuple[set, int]:
    """One left-to-right pass over a twice-repeated row input.

    The first separator's position against half the copy length reveals which
    set is smaller; only that set is buffered, and the other set's second
    appearance is compared against the buffer, flagging matched rows.
    Returns the decoded intersection and the peak buffer size, which never
    exceeds min(|A|, |B|).
    """
    rows = np.asarray(u_jrt)
    if rows.ndim != 2 or rows.shape[1] != n + 1:
        raise ValueError(f"expected rows of width {n + 1}")
    total = rows.shape[0]
    if total % 2:
        raise ValueError("repeated input must have even length")
    half = total // 2
    seps = np.flatnonzero(rows[:, n] == 1)
    if len(seps) != 2 or seps[1] - seps[0] != half:
        raise ValueError("malformed separators: expected exactly one per copy")

    first_sep = False
    second_sep = False
    small_first = False
    buffer: list[np.ndarray] = []
    max_rows = 0
    for i in range(total):
        if rows[i, n] == 1:
            if not first_sep:
                first_sep = True
                # strict inequality keeps the buffered set at min(|A|,|B|)
                # rows even when the set sizes differ by exactly one
                small_first = 2 * i < half
            else:
                second_sep = True
            continue
        if not first_sep:
            continue
        if small_first:
            if not second_sep:
                if i >= half:
                    buffer.append(rows[i].copy())
            else:
                for brow in buffer:
                    if np.array_equal(brow, rows[i]):
                        brow[n] = 1
                        break
        else:
            if not second_sep:
                if i < half:
                    buffer.append(rows[i].copy())
                else:
                    for brow in buffer:
                        if np.array_equal(brow, rows[i]):
                            brow[n] = 1
                            break
        max_rows = max(max_rows, len(buffer))
    flagged = {_decode_row(brow, n) for brow in buffer if brow[n] == 1}
    return flagged, max_rows


def streaming_solve_sets(set_a: Sequence[int], set_b: Sequence[int],
                         n: Optional[int] = None) -> tuple[set, int]:
    """Encode two integer sets, repeat twice, and run the streaming solver."""
    if n is None:
        n = default_bit_width(list(set_a) + list(set_b))
    rows = encode_rows(list(set_a), list(set_b), n)
    return streaming_sd_solve(jrp_repeat(rows, 2), n)


def brute_force_intersection(set_a: Iterable[int], set_b: Iterable[int]) -> set:
    """Exact set intersection; the verification oracle for the solvers."""
    return set(set_a) & set(set_b)


# --- linear attention + MLP construction ---

class KernelToleranceError(ValueError):
    """The feature map's cross-roster epsilon exceeds 1/(3|A|)."""


@dataclass
class LinAttSDResult:
    flags: np.ndarray          # per element of B: appears in A?
    outputs: np.ndarray        # post-ReLU rows, (|A|+|B|, out_dim)
    epsilon: float
    tolerance: float

    @property
    def within_tolerance(self) -> bool:
        return self.epsilon <= self.tolerance


def linatt_sd_solve(set_a: Sequence[int], set_b: Sequence[int], fmap,
                    out_dim: int = 4, strict: bool = False) -> LinAttSDResult:
    """Flag B's members of A with one linear-attention layer plus a ReLU shift.

    Queries and keys are the featurized elements (A first); values are 1 on
    A's rows and 0 elsewhere, so row i of (Q K^T) V sums the inner products
    of element i against all of A.  Subtracting 1/3 and clamping at zero
    leaves matched rows with every entry in [1/3, 1] and unmatched rows at
    exactly 0, provided the cross-roster epsilon is within 1/(3|A|).

    A kernel outside that tolerance loses the worst-case guarantee but not
    necessarily correctness (the per-row sums concentrate much harder than
    the single worst pair); the result reports the measured epsilon rather
    than failing silently.  Pass strict=True to raise instead.
    """
    set_a, set_b = list(set_a), list(set_b)
    if not set_a:
        raise ValueError("A must be nonempty")
    eps = cross_roster_epsilon(fmap, set_a, set_b)
    tol = 1.0 / (3.0 * len(set_a))
    if strict and eps > tol:
        raise KernelToleranceError(
            f"epsilon {eps:.3g} exceeds 1/(3|A|) = {tol:.3g}")
    elems = np.asarray(set_a + set_b)
    phi = fmap(elems)
    values = np.zeros((len(elems), out_dim))
    values[: len(set_a)] = 1.0
    scores = (phi @ phi.T) @ values
    outputs = np.maximum(scores - 1.0 / 3.0, 0.0)
    flags = outputs[len(set_a) :].min(axis=1) > 0.0
    return LinAttSDResult(flags, outputs, eps, tol)


# --- general associative recall <-> set disjointness ---

@dataclass
class GARInstance:
    """Key-value pairs then queries; values are d-bit-encodable positives.

    Values live in [1, vocab] so the all-zero bit pattern is reserved for
    Null; d = ceil(log2(vocab + 1)) bits suffice.  At most one matching key
    per query (duplicate keys must agree on their value).
    """

    pairs: list
    queries: list
    vocab: int

    def __post_init__(self):
        seen: dict = {}
        deduped = []
        for k, v in self.pairs:
            if not 1 <= v <= self.vocab:
                raise ValueError(f"value {v} outside [1, {self.vocab}]")
            if k in seen:
                if seen[k] != v:
                    raise ValueError(f"duplicate key {k} with conflicting values")
                continue
            seen[k] = v
            deduped.append((k, v))
        self.pairs = deduped

    @property
    def value_bits(self) -> int:
        return math.ceil(math.log2(self.vocab + 1))


SDSolver = Callable[[Sequence[int], Sequence[int]], set]


def gar_solve_via_sd(inst: GARInstance, sd_solver: SDSolver) -> list:
    """Recall through d disjointness calls, one per value bit.

    Call l intersects the queries with the keys whose value has bit l set;
    a query's value is assembled from the bits of the calls that matched it.
    Queries matching no call return None.
    """
    assembled: dict = {q: 0 for q in inst.queries}
    for bit in range(inst.value_bits):
        keys_l = [k for k, v in inst.pairs if (v >> bit) & 1]
        matched = sd_solver(sorted(set(inst.queries)), keys_l)
        for q in matched:
            if q in assembled:
                assembled[q] |= 1 << bit
    return [assembled[q] or None for q in inst.queries]


GARSolver = Callable[[GARInstance], list]


def sd_solve_via_gar(set_a: Sequence[int], set_b: Sequence[int],
                     gar_solver: GARSolver) -> bool:
    """Disjointness as recall with self-keyed pairs: disjoint iff all Null.

    Values are the elements shifted by one so that no value collides with the
    reserved all-zero Null pattern.
    """
    set_a, set_b = list(set_a), list(set_b)
    if not set_b:
        return True
    vocab = max(set_a + set_b) + 1
    inst = GARInstance([(a, a + 1) for a in set_a], set_b, vocab)
    return all(r is None for r in gar_solver(inst))


def dict_gar_solve(inst: GARInstance) -> list:
    """Direct dictionary-lookup recall; the oracle for the reduction."""
    lookup = dict(inst.pairs)
    return [lookup.get(q) for q in inst.queries]
