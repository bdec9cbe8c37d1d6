"""Four-layer gated-conv / linear-attention toy model and the data-order sweep.

The architecture alternates gated short convolutions and two-head linear
attention (second-order Taylor features), each sublayer followed by a GeLU
MLP, with residual connections throughout; token embeddings carry all
positional information.  A `causal` flag routes both mixers: causal
convolution + lower-triangular attention, or circular convolution + full-sum
attention for the non-causal variant.

Training minimizes cross-entropy at the single answer position of
set-disjointness sequences with AdamW.  The sweep driver trains a grid over
(model width, feature dim, causality, learning rate, seed), scores each grid
point by the max over the lr x seed cells, and emits per-point sliced
accuracies against the recurrent state size in bytes.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from prefixla.setdisj import DESK_VOCAB, PAPER_VOCAB, SDInstance, gen_mixture
from prefixla.tensor import IGNORE_LABEL, Tape


@dataclass(frozen=True)
class ToyConfig:
    d_model: int
    feature_dim: int
    causal: bool
    vocab: int
    n_layers: int = 4
    n_heads: int = 2
    conv_filter: int = 3
    mlp_expand: int = 2
    precision: str = "f64"

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.n_layers % 2:
            raise ValueError("layers alternate conv/attention in pairs")
        if self.precision not in ("f64", "f32"):
            raise ValueError("precision must be 'f64' or 'f32'")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def taylor_dim(self) -> int:
        return 1 + self.feature_dim + self.feature_dim**2

    @property
    def dtype(self):
        return np.float64 if self.precision == "f64" else np.float32


def _uniform(rng, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(cfg: ToyConfig, seed: int) -> dict:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization for every tensor."""
    rng = np.random.default_rng([seed, 0])
    d, e = cfg.d_model, cfg.mlp_expand * cfg.d_model
    p: dict[str, np.ndarray] = {"embed": _uniform(rng, d, (cfg.vocab, d))}
    for i in range(cfg.n_layers):
        if i % 2 == 0:
            p[f"conv{i}.W"] = _uniform(rng, d, (d, d))
            p[f"conv{i}.bB"] = _uniform(rng, d, (d,))
            p[f"conv{i}.K"] = _uniform(rng, cfg.conv_filter, (cfg.conv_filter, d))
            p[f"conv{i}.bK"] = _uniform(rng, cfg.conv_filter, (d,))
        else:
            for h in range(cfg.n_heads):
                p[f"attn{i}.Wq{h}"] = _uniform(rng, d, (d, cfg.feature_dim))
                p[f"attn{i}.Wk{h}"] = _uniform(rng, d, (d, cfg.feature_dim))
                p[f"attn{i}.Wv{h}"] = _uniform(rng, d, (d, cfg.head_dim))
            p[f"attn{i}.Wo"] = _uniform(rng, d, (d, d))
        p[f"mlp{i}.W1"] = _uniform(rng, d, (d, e))
        p[f"mlp{i}.b1"] = _uniform(rng, d, (e,))
        p[f"mlp{i}.W2"] = _uniform(rng, e, (e, d))
        p[f"mlp{i}.b2"] = _uniform(rng, e, (d,))
    p["unembed"] = _uniform(rng, d, (d, cfg.vocab))
    return {k: v.astype(cfg.dtype) for k, v in p.items()}


def _attention(tape: Tape, cfg: ToyConfig, nodes: dict, i: int, x, n: int):
    heads = []
    for h in range(cfg.n_heads):
        phi_q = tape.taylor2(tape.matmul(x, nodes[f"attn{i}.Wq{h}"]))
        phi_k = tape.taylor2(tape.matmul(x, nodes[f"attn{i}.Wk{h}"]))
        v = tape.matmul(x, nodes[f"attn{i}.Wv{h}"])
        heads.append(tape.attention_norm(phi_q, phi_k, v, causal=cfg.causal))
    return tape.matmul(tape.concat_last(heads), nodes[f"attn{i}.Wo"])


def _gated_conv(tape: Tape, cfg: ToyConfig, nodes: dict, i: int, x):
    gate = tape.add(tape.matmul(x, nodes[f"conv{i}.W"]), nodes[f"conv{i}.bB"])
    conv = tape.add(
        tape.conv1d(x, nodes[f"conv{i}.K"], circular=not cfg.causal),
        nodes[f"conv{i}.bK"],
    )
    return tape.mul(gate, conv)


def _mlp(tape: Tape, nodes: dict, i: int, x):
    h = tape.gelu(tape.add(tape.matmul(x, nodes[f"mlp{i}.W1"]), nodes[f"mlp{i}.b1"]))
    return tape.add(tape.matmul(h, nodes[f"mlp{i}.W2"]), nodes[f"mlp{i}.b2"])


def forward_hidden(tape: Tape, cfg: ToyConfig, nodes: dict, tokens: np.ndarray):
    """Final hidden states for a [batch, n] (or [n]) id array."""
    tokens = np.atleast_2d(np.asarray(tokens))
    if tokens.max() >= cfg.vocab:
        raise ValueError("token id out of range")
    n = tokens.shape[1]
    x = tape.embedding(nodes["embed"], tokens)
    for i in range(cfg.n_layers):
        if i % 2 == 0:
            x = tape.add(x, _gated_conv(tape, cfg, nodes, i, x))
        else:
            x = tape.add(x, _attention(tape, cfg, nodes, i, x, n))
        x = tape.add(x, _mlp(tape, nodes, i, x))
    return x


def forward(tape: Tape, cfg: ToyConfig, nodes: dict, tokens: np.ndarray):
    """Logits over the vocabulary for a [batch, n] (or [n]) id array."""
    return tape.matmul(forward_hidden(tape, cfg, nodes, tokens), nodes["unembed"])


def make_nodes(tape: Tape, params: dict) -> dict:
    return {k: tape.param(v) for k, v in params.items()}


def logits_of(cfg: ToyConfig, params: dict, tokens: np.ndarray) -> np.ndarray:
    """Inference forward pass (no gradients kept)."""
    tape = Tape(dtype=cfg.dtype, strict=False)
    return forward(tape, cfg, make_nodes(tape, params), tokens).data


def predict_answer(cfg: ToyConfig, params: dict, tokens: np.ndarray) -> np.ndarray:
    """Argmax token at the final position for each sequence in the batch."""
    tape = Tape(dtype=cfg.dtype, strict=False)
    nodes = make_nodes(tape, params)
    hidden = forward_hidden(tape, cfg, nodes, tokens)
    n = hidden.data.shape[-2]
    last = tape.slice_rows(hidden, n - 1, n)
    logits = tape.matmul(last, nodes["unembed"])
    return logits.data[:, 0, :].argmax(axis=-1)


def loss_of(cfg: ToyConfig, params: dict, tokens: np.ndarray,
            labels: np.ndarray, dtype=None) -> tuple:
    """(loss node, param nodes, tape) for one batch; callers drive backward.

    When only the final position carries a label (the answer-token setup),
    the unembedding and cross-entropy run on that single row.
    """
    tape = Tape(dtype=dtype or cfg.dtype, strict=False)
    nodes = make_nodes(tape, params)
    labels = np.atleast_2d(labels)
    hidden = forward_hidden(tape, cfg, nodes, tokens)
    if labels.shape[1] > 1 and not np.any(labels[:, :-1] != IGNORE_LABEL):
        hidden = tape.slice_rows(hidden, labels.shape[1] - 1, labels.shape[1])
        labels = labels[:, -1:]
    logits = tape.matmul(hidden, nodes["unembed"])
    loss = tape.softmax_cross_entropy(logits, labels)
    return loss, nodes, tape


class AdamW:
    """Decoupled weight decay Adam; state keyed like the parameter dict."""

    def __init__(self, params: dict, lr: float, betas=(0.9, 0.95),
                 eps: float = 1e-8, weight_decay: float = 0.1):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.wd = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, p in params.items():
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            update += self.wd * p
            update *= self.lr
            p -= update.astype(p.dtype, copy=False)


@dataclass
class TrainRun:
    config: ToyConfig
    lr: float
    seed: int
    epochs: int
    batch_size: int = 64
    betas: tuple = (0.9, 0.95)
    adam_eps: float = 1e-8
    weight_decay: float = 0.1


@dataclass
class TrainResult:
    params: Optional[dict]
    failed: bool
    final_loss: float
    accuracy: Optional[tuple] = None   # (overall, a_smaller, b_smaller)


def _group_by_shape(data: Sequence[SDInstance]) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Bucket instances by (|A|, |B|) so batches need no padding.

    Returns (ids, labels, lens) arrays per bucket; lens holds (len_a, len_b).
    """
    buckets: dict = {}
    for inst in data:
        buckets.setdefault((inst.len_a, inst.len_b), []).append(inst)
    out = []
    for (la, lb), insts in sorted(buckets.items()):
        ids = np.asarray([i.input_ids for i in insts], dtype=np.int64)
        labels = np.asarray([i.labels for i in insts], dtype=np.int64)
        lens = np.tile([la, lb], (len(insts), 1))
        out.append((ids, labels, lens))
    return out


def train(run: TrainRun, train_data: Sequence[SDInstance],
          eval_data: Optional[Sequence[SDInstance]] = None,
          target_accuracy: Optional[float] = None) -> TrainResult:
    """AdamW on the answer-position cross-entropy; deterministic per seed.

    A run that produces a non-finite loss is marked failed (its score is
    excluded from any max).  With target_accuracy set, training stops early
    once the training-set argmax accuracy reaches the target.
    """
    if not train_data:
        raise ValueError("empty training set")
    cfg = run.config
    params = init_params(cfg, run.seed)
    opt = AdamW(params, run.lr, run.betas, run.adam_eps, run.weight_decay)
    shuffle_rng = np.random.default_rng([run.seed, 1])
    groups = _group_by_shape(train_data)
    batches = []
    for gi, (ids, labels, _lens) in enumerate(groups):
        for lo in range(0, ids.shape[0], run.batch_size):
            batches.append((gi, lo, min(lo + run.batch_size, ids.shape[0])))
    final_loss = math.inf
    for _epoch in range(run.epochs):
        order = shuffle_rng.permutation(len(batches))
        for bi in order:
            gi, lo, hi = batches[bi]
            ids, labels, _ = groups[gi]
            loss, nodes, tape = loss_of(cfg, params, ids[lo:hi], labels[lo:hi])
            final_loss = float(loss.data)
            if not np.isfinite(final_loss):
                return TrainResult(None, True, final_loss)
            tape.backward(loss)
            grads = {k: nodes[k].grad for k in params}
            opt.step(params, grads)
        if target_accuracy is not None:
            acc, _, _ = _accuracy(cfg, params, groups, run.batch_size)
            if acc >= target_accuracy:
                break
    accuracy = None
    if eval_data is not None:
        accuracy = eval_sliced(cfg, params, eval_data, run.batch_size)
    return TrainResult(params, False, final_loss, accuracy)


def _accuracy(cfg: ToyConfig, params: dict, groups, batch_size: int):
    hits = np.zeros(3)
    counts = np.zeros(3)
    for ids, labels, lens in groups:
        for lo in range(0, ids.shape[0], batch_size):
            hi = min(lo + batch_size, ids.shape[0])
            pred = predict_answer(cfg, params, ids[lo:hi])
            ok = pred == labels[lo:hi, -1]
            la, lb = lens[lo, 0], lens[lo, 1]
            hits[0] += ok.sum()
            counts[0] += ok.size
            if la < lb:
                hits[1] += ok.sum()
                counts[1] += ok.size
            elif lb < la:
                hits[2] += ok.sum()
                counts[2] += ok.size
    return tuple(h / c if c else math.nan for h, c in zip(hits, counts))


def eval_sliced(cfg: ToyConfig, params: dict, data: Sequence[SDInstance],
                batch_size: int = 256) -> tuple:
    """(overall, |A|<|B| slice, |B|<|A| slice) answer-token accuracy."""
    groups = _group_by_shape(data)
    overall, a_smaller, b_smaller = _accuracy(cfg, params, groups, batch_size)
    if math.isnan(a_smaller) or math.isnan(b_smaller):
        raise ValueError("eval set must contain both orderings")
    return overall, a_smaller, b_smaller


def state_size_bytes(cfg: ToyConfig) -> int:
    """Recurrent state carried during decoding, in bytes.

    Attention layers hold the (D x head_dim) KV-state plus the D-vector
    K-state per head; convolution layers hold a (filter-1) x d_model tail.
    """
    bytes_per = 8 if cfg.precision == "f64" else 4
    n_attn = cfg.n_layers // 2
    n_conv = cfg.n_layers - n_attn
    attn = n_attn * cfg.n_heads * (cfg.taylor_dim * cfg.head_dim + cfg.taylor_dim)
    conv = n_conv * (cfg.conv_filter - 1) * cfg.d_model
    return (attn + conv) * bytes_per


# --- the data-order sweep ---

@dataclass(frozen=True)
class SweepProfile:
    name: str
    dims: tuple
    feature_dims: tuple
    lrs: tuple = (1e-4, 5e-4, 8e-4)
    seeds: tuple = (0, 1)
    train_scale: float = 1.0
    eval_scale: float = 1.0
    epochs: int = 48
    batch_size: int = 64
    precision: str = "f32"
    data_seed: int = 1234


DESK_PROFILE = SweepProfile(
    name="desk",
    dims=(16, 24, 32),
    feature_dims=(4, 8),
    train_scale=0.01,
    eval_scale=0.1,
    epochs=50,
    batch_size=16,
)

PAPER_PROFILE = SweepProfile(
    name="paper",
    dims=(36, 48, 64, 96, 128),
    feature_dims=(4, 8, 16, 24),
    train_scale=1.0,
    eval_scale=1.0,
    epochs=48,
)


def get_profile(name: str) -> SweepProfile:
    if name == "desk":
        return DESK_PROFILE
    if name == "paper":
        return PAPER_PROFILE
    raise ValueError(f"unknown profile {name!r}")


def sweep_cells(profile: SweepProfile, causal_modes=(True, False)) -> list[dict]:
    """Every (d_model, feature_dim, causal, lr, seed) cell of the grid."""
    cells = []
    for dim in profile.dims:
        for fd in profile.feature_dims:
            for causal in causal_modes:
                for lr in profile.lrs:
                    for seed in profile.seeds:
                        cells.append({
                            "d_model": dim, "feature_dim": fd,
                            "causal": causal, "lr": lr, "seed": seed,
                        })
    return cells


def sweep_datasets(profile: SweepProfile) -> tuple[list, list]:
    train_data = list(gen_mixture("train", profile.train_scale, profile.name,
                                  seed=profile.data_seed))
    eval_data = list(gen_mixture("eval", profile.eval_scale, profile.name,
                                 seed=profile.data_seed + 1))
    return train_data, eval_data


_WORKER_STATE: dict = {}


def _sweep_init(profile: SweepProfile, train_data, eval_data):
    _WORKER_STATE["profile"] = profile
    _WORKER_STATE["train"] = train_data
    _WORKER_STATE["eval"] = eval_data
    try:
        from threadpoolctl import threadpool_limits
        _WORKER_STATE["limiter"] = threadpool_limits(limits=1)
    except Exception:
        pass


def _sweep_run(cell: dict) -> dict:
    profile: SweepProfile = _WORKER_STATE["profile"]
    vocab = _WORKER_STATE["train"][0].vocab
    cfg = ToyConfig(cell["d_model"], cell["feature_dim"], cell["causal"],
                    vocab, precision=profile.precision)
    run = TrainRun(cfg, cell["lr"], cell["seed"], profile.epochs,
                   profile.batch_size)
    result = train(run, _WORKER_STATE["train"], _WORKER_STATE["eval"])
    out = dict(cell)
    out["failed"] = result.failed
    out["accuracy"] = result.accuracy
    return out


def data_order_sweep(profile: SweepProfile, out_csv: str,
               causal_modes=(True, False), workers: Optional[int] = None,
               verbose: bool = False) -> list[dict]:
    """Train the grid and emit one aggregated row per (dim, fd, causal) point.

    Each point's slice accuracies are the max over its lr x seed cells
    (failed runs excluded).  Rows: d_model, feature_dim, causal, state_bytes,
    acc_overall, acc_a_smaller, acc_b_smaller, n_runs, n_failed.
    """
    train_data, eval_data = sweep_datasets(profile)
    cells = sweep_cells(profile, causal_modes)
    if workers is None:
        workers = min(os.cpu_count() or 1, len(cells))
    results = []
    if workers > 1:
        import multiprocessing as mp

        ctx = mp.get_context("fork")
        with ctx.Pool(workers, initializer=_sweep_init,
                      initargs=(profile, train_data, eval_data)) as pool:
            for res in pool.imap_unordered(_sweep_run, cells):
                results.append(res)
                if verbose:
                    print(f"  cell {len(results)}/{len(cells)}: {res['d_model']}x"
                          f"{res['feature_dim']} causal={res['causal']} "
                          f"lr={res['lr']} seed={res['seed']} -> {res['accuracy']}",
                          flush=True)
    else:
        _sweep_init(profile, train_data, eval_data)
        for cell in cells:
            results.append(_sweep_run(cell))
            if verbose:
                print(f"  cell {len(results)}/{len(cells)} done", flush=True)
    rows = aggregate_sweep(profile, results, causal_modes)
    write_sweep_csv(rows, out_csv)
    return rows


def aggregate_sweep(profile: SweepProfile, results: list[dict],
                    causal_modes=(True, False)) -> list[dict]:
    rows = []
    for dim in profile.dims:
        for fd in profile.feature_dims:
            for causal in causal_modes:
                cell_res = [r for r in results
                            if r["d_model"] == dim and r["feature_dim"] == fd
                            and r["causal"] == causal]
                ok = [r["accuracy"] for r in cell_res if not r["failed"]]
                cfg = ToyConfig(dim, fd, causal, DESK_VOCAB if profile.name == "desk"
                                else PAPER_VOCAB, precision=profile.precision)
                row = {
                    "d_model": dim, "feature_dim": fd, "causal": causal,
                    "state_bytes": state_size_bytes(cfg),
                    "acc_overall": max((a[0] for a in ok), default=math.nan),
                    "acc_a_smaller": max((a[1] for a in ok), default=math.nan),
                    "acc_b_smaller": max((a[2] for a in ok), default=math.nan),
                    "n_runs": len(cell_res),
                    "n_failed": len(cell_res) - len(ok),
                }
                rows.append(row)
    return rows


SWEEP_COLUMNS = ["d_model", "feature_dim", "causal", "state_bytes",
                 "acc_overall", "acc_a_smaller", "acc_b_smaller",
                 "n_runs", "n_failed"]


def write_sweep_csv(rows: list[dict], path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def read_sweep_csv(path: str) -> list[dict]:
    with open(path, newline="") as fh:
        rows = []
        for raw in csv.DictReader(fh):
            rows.append({
                "d_model": int(raw["d_model"]),
                "feature_dim": int(raw["feature_dim"]),
                "causal": raw["causal"] in ("True", "true", "1"),
                "state_bytes": int(raw["state_bytes"]),
                "acc_overall": float(raw["acc_overall"]),
                "acc_a_smaller": float(raw["acc_a_smaller"]),
                "acc_b_smaller": float(raw["acc_b_smaller"]),
                "n_runs": int(raw["n_runs"]),
                "n_failed": int(raw["n_failed"]),
            })
        return rows


def order_gap(row: dict) -> float:
    """acc(|A|<|B|) - acc(|B|<|A|): positive when the easy order is first."""
    return row["acc_a_smaller"] - row["acc_b_smaller"]


# --- checkpoints: JSON header line + raw little-endian tensor bytes ---

def save_checkpoint(path: str, cfg: ToyConfig, params: dict) -> None:
    names = sorted(params)
    header = {
        "config": {
            "d_model": cfg.d_model, "feature_dim": cfg.feature_dim,
            "causal": cfg.causal, "vocab": cfg.vocab,
            "n_layers": cfg.n_layers, "n_heads": cfg.n_heads,
            "conv_filter": cfg.conv_filter, "mlp_expand": cfg.mlp_expand,
            "precision": cfg.precision,
        },
        "tensors": [{"name": n, "shape": list(params[n].shape)} for n in names],
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode())
        for n in names:
            fh.write(np.ascontiguousarray(params[n], dtype=cfg.dtype).tobytes())


def load_checkpoint(path: str) -> tuple[ToyConfig, dict]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        cfg = ToyConfig(**header["config"])
        params = {}
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape))
            buf = fh.read(count * cfg.dtype().itemsize)
            params[spec["name"]] = np.frombuffer(buf, dtype=cfg.dtype).reshape(shape).copy()
    return cfg, params
