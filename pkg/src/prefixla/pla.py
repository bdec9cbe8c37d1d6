"""Prefix linear attention: non-causal encoder + causal decoder in one mixer.

The first M positions are read non-causally through separate encoder
projections (k_e, v_e); every position i additionally attends causally over
the decoder projections (k_d, v_d) up to itself:

    y_i = phi(q_i) (S_dec_i + S_enc) / phi(q_i) (Z_dec_i + Z_enc)

Masked encoder positions (padding) contribute exactly zero to the encoder
sums; decoder contributions are never masked, so with an all-masked or empty
encoder every operation here reduces to plain causal linear attention.

Decoding past the prefix needs no new machinery: ``pla_init_state`` builds
the standard (s, z) recurrent state from both projection sets over the first
M positions, after which ``linatt.la_decode_step`` applies unchanged, with
the same state footprint as causal linear attention.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from prefixla.linatt import LAState, FlopParams, _resolve_eps, _check_denominator, _CHUNK

LEFT_PAD = "left_pad"
READ_TWICE = "read_twice"
ITERATIVE = "iterative"
PAD_STRATEGIES = (LEFT_PAD, READ_TWICE, ITERATIVE)


@dataclass
class PLAConfig:
    """Prefix-region geometry plus the inference padding strategy."""

    encoder_len: int
    head_dim: int
    fmap: object = None
    pad_token: int = 0
    pad_strategy: str = LEFT_PAD

    def __post_init__(self):
        if self.encoder_len < 0:
            raise ValueError("encoder_len must be >= 0")
        if self.pad_strategy not in PAD_STRATEGIES:
            raise ValueError(f"unknown pad strategy {self.pad_strategy!r}")


@dataclass
class PLAInputs:
    """Per-head inputs: decoder q/k/v over N positions, encoder k/v over M.

    pad_mask is True at real encoder tokens; False rows are excluded from the
    encoder sums exactly (they contribute nothing, as if the rows were absent).
    """

    q_dec: np.ndarray
    k_dec: np.ndarray
    v_dec: np.ndarray
    k_enc: np.ndarray
    v_enc: np.ndarray
    pad_mask: np.ndarray | None = None

    def __post_init__(self):
        n, m = self.q_dec.shape[0], self.k_enc.shape[0]
        if self.k_dec.shape[0] != n or self.v_dec.shape[0] != n:
            raise ValueError("decoder tensors must share sequence length")
        if self.v_enc.shape[0] != m:
            raise ValueError("encoder tensors must share sequence length")
        if self.pad_mask is None:
            self.pad_mask = np.ones(m, dtype=bool)
        self.pad_mask = np.asarray(self.pad_mask, dtype=bool)
        if self.pad_mask.shape != (m,):
            raise ValueError("pad_mask must have one entry per encoder position")

    @property
    def n(self) -> int:
        return self.q_dec.shape[0]

    @property
    def m(self) -> int:
        return self.k_enc.shape[0]


def _encoder_sums(inputs: PLAInputs, fmap) -> tuple[np.ndarray, np.ndarray]:
    """Masked encoder KV/K sums (the pass-1 accumulation: no queries involved)."""
    dv = inputs.v_dec.shape[1]
    if inputs.m == 0:
        return np.zeros((fmap.feature_dim, dv)), np.zeros(fmap.feature_dim)
    phi_ke = fmap(inputs.k_enc) * inputs.pad_mask[:, None]
    ve = inputs.v_enc * inputs.pad_mask[:, None]
    return phi_ke.T @ ve, phi_ke.sum(axis=0)


def pla_parallel(inputs: PLAInputs, fmap,
                 denom_eps: float | None = None) -> np.ndarray:
    """Direct evaluation of the prefix formula via materialized running sums.

    With an empty or fully-masked encoder the formula is exactly causal
    linear attention, and the computation routes through it bit-identically.
    """
    from prefixla.linatt import la_parallel

    if inputs.m == 0 or not inputs.pad_mask.any():
        return la_parallel(inputs.q_dec, inputs.k_dec, inputs.v_dec, fmap,
                           causal=True, denom_eps=denom_eps)
    eps = _resolve_eps(fmap, denom_eps)
    s_enc, z_enc = _encoder_sums(inputs, fmap)
    phi_q = fmap(inputs.q_dec)
    phi_kd = fmap(inputs.k_dec)
    s = np.cumsum(phi_kd[:, :, None] * inputs.v_dec[:, None, :], axis=0) + s_enc
    z = np.cumsum(phi_kd, axis=0) + z_enc
    num = np.einsum("nD,nDh->nh", phi_q, s)
    den = _check_denominator(np.einsum("nD,nD->n", phi_q, z), eps)
    return num / den[:, None]


def pla_init_state(inputs: PLAInputs, fmap) -> LAState:
    """Recurrent state after the prefix: both projection sets summed over j <= M.

    Only the first M decoder positions contribute; masked encoder rows are
    excluded.  Decoding for i > M proceeds with la_decode_step unchanged.
    """
    s_enc, z_enc = _encoder_sums(inputs, fmap)
    m = inputs.m
    if m > inputs.n:
        raise ValueError("init state needs decoder projections covering the prefix")
    if m:
        phi_kd = fmap(inputs.k_dec[:m])
        s_enc = s_enc + phi_kd.T @ inputs.v_dec[:m]
        z_enc = z_enc + phi_kd.sum(axis=0)
    return LAState(s_enc, z_enc, m)


def two_pass_prefill(inputs: PLAInputs, fmap,
                     denom_eps: float | None = None) -> tuple[np.ndarray, LAState]:
    """Prefill as two linear passes.

    Pass 1 accumulates the encoder KV/K sums only (no query multiplication);
    pass 2 runs the causal decoder computation in chunks seeded by that
    state.  Returns outputs for all N positions plus the final recurrent
    state for subsequent decode steps.
    """
    eps = _resolve_eps(fmap, denom_eps)
    s, z = _encoder_sums(inputs, fmap)
    n, dv = inputs.n, inputs.v_dec.shape[1]
    phi_q = fmap(inputs.q_dec) if n else np.zeros((0, fmap.feature_dim))
    phi_kd = fmap(inputs.k_dec) if n else np.zeros((0, fmap.feature_dim))
    out = np.empty((n, dv))
    for lo in range(0, n, _CHUNK):
        hi = min(lo + _CHUNK, n)
        pq, pk, pv = phi_q[lo:hi], phi_kd[lo:hi], inputs.v_dec[lo:hi]
        att = np.tril(pq @ pk.T)
        num = pq @ s + att @ pv
        den = _check_denominator(pq @ z + att.sum(axis=1), eps)
        out[lo:hi] = num / den[:, None]
        s = s + pk.T @ pv
        z = z + pk.sum(axis=0)
    return out, LAState(s, z, n)


def prepare_prompt(tokens: Sequence[int], cfg: PLAConfig) -> tuple[list[int], np.ndarray]:
    """Pad a prompt shorter than the encoder region per the configured strategy.

    left_pad prepends pad_token up to length M with mask False on pads;
    read_twice "pads" by prepending the prompt itself (most recent tokens
    kept when truncation is needed) with mask True everywhere.  Prompts of
    length >= M pass through unchanged.
    """
    tokens = list(tokens)
    m = cfg.encoder_len
    if len(tokens) >= m:
        return tokens, np.ones(len(tokens), dtype=bool)
    deficit = m - len(tokens)
    if cfg.pad_strategy == READ_TWICE:
        # repeat the prompt as many times as the deficit requires, then keep
        # the most recent `deficit` tokens of that prefix
        if not tokens:
            raise ValueError("cannot read-twice pad an empty prompt")
        reps = -(-deficit // len(tokens))
        prefix = (tokens * reps)[-deficit:]
        return prefix + tokens, np.ones(m, dtype=bool)
    padded = [cfg.pad_token] * deficit + tokens
    mask = np.concatenate([np.zeros(deficit, dtype=bool), np.ones(len(tokens), dtype=bool)])
    return padded, mask


def iterative_decode(forward_fn: Callable[[list[int]], np.ndarray],
                     prefill_tokens: Sequence[int], n_tokens: int) -> list[int]:
    """Greedy decoding where every step re-runs the parallel view.

    The model sees its previously generated tokens non-causally: token t is
    the argmax of the last-position logits from a full parallel pass over the
    prefill plus everything generated so far.  Costs sum_t (P + t) token
    evaluations for n_tokens outputs over a length-P prefill.
    """
    if n_tokens < 1:
        raise ValueError("n_tokens must be >= 1")
    tokens = list(prefill_tokens)
    generated = []
    for _ in range(n_tokens):
        logits = forward_fn(tokens)
        nxt = int(np.argmax(logits[-1]))
        generated.append(nxt)
        tokens.append(nxt)
    return generated


def iterative_decode_cost(prefill_len: int, n_tokens: int) -> int:
    """Token evaluations consumed by iterative_decode: sum_t (P + t)."""
    return sum(prefill_len + t for t in range(n_tokens))


def flops_pla(p: FlopParams) -> tuple[int, int]:
    """Extra FLOPs over causal linear attention: (BMHD, 3BMHdD).

    BMHD featurizes k_e; 3BMHdD covers the k_e·v_e dot product, the
    feature-dim reduction, and summing the encoder state into the decoder
    KV-state.
    """
    return p.B * p.M * p.H * p.D, 3 * p.B * p.M * p.H * p.d * p.D


def flops_pla_total(p: FlopParams) -> tuple[int, int]:
    """Causal FLOPs plus the prefix delta."""
    from prefixla.linatt import flops_causal_la

    base = flops_causal_la(p)
    delta = flops_pla(p)
    return base[0] + delta[0], base[1] + delta[1]
