"""Command-line front end.

Subcommands: sdgen (synthetic datasets), train (the data-order sweep),
equiv-check (parallel/recurrent equivalence battery), bench (latency
scaling), prompt (context-repetition transform), report (plot-data files).
Exit codes: 0 success, 1 validation error, 2 equivalence-check failure.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np


def _cmd_sdgen(args) -> int:
    from prefixla.setdisj import gen_mixture, write_jsonl

    instances = gen_mixture(args.split, args.scale, args.profile,
                            seed=args.seed, vocab=args.vocab)
    n = write_jsonl(instances, args.out)
    print(f"wrote {n} instances to {args.out}")
    return 0


def _cmd_train(args) -> int:
    from prefixla.toy import data_order_sweep, get_profile

    profile = get_profile(args.profile)
    modes = {"true": (True,), "false": (False,), "both": (True, False)}[args.causal]
    rows = data_order_sweep(profile, args.out, causal_modes=modes,
                      workers=args.workers, verbose=args.verbose)
    print(f"wrote {len(rows)} grid points to {args.out}")
    return 0


def _cmd_equiv_check(args) -> int:
    from prefixla.featmaps import Taylor2Map
    from prefixla.linatt import la_parallel, la_recurrent
    from prefixla.pla import PLAInputs, pla_init_state, pla_parallel, two_pass_prefill
    from prefixla.linatt import la_decode_step

    rng = np.random.default_rng(args.seed)
    failures = 0

    def report(name: str, worst: float, tol: float) -> None:
        nonlocal failures
        ok = worst <= tol
        failures += 0 if ok else 1
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: max rel err {worst:.3e} "
              f"(tolerance {tol:.0e})")

    worst_par_rec = 0.0
    worst_pla = 0.0
    worst_m0 = 0.0
    for _ in range(args.instances):
        n = int(rng.integers(2, 65))
        m = int(rng.integers(0, n + 1))
        d = int(rng.integers(2, 9))
        fmap = Taylor2Map(d)
        q, k, v = (rng.standard_normal((n, d)) / np.sqrt(d) for _ in range(3))
        par = la_parallel(q, k, v, fmap)
        rec = la_recurrent(q, k, v, fmap)
        scale = np.abs(par).max()
        worst_par_rec = max(worst_par_rec, float(np.abs(par - rec).max() / scale))

        ke, ve = rng.standard_normal((m, d)) / np.sqrt(d), rng.standard_normal((m, d))
        mask = rng.random(m) < 0.8
        inputs = PLAInputs(q, k, v, ke, ve, mask)
        y_par = pla_parallel(inputs, fmap)
        y_two, _ = two_pass_prefill(inputs, fmap)
        state = pla_init_state(inputs, fmap)
        y_dec = np.empty_like(y_par)
        for i in range(m, n):
            y_dec[i], state = la_decode_step(state, q[i], k[i], v[i], fmap)
        scale = np.abs(y_par).max()
        worst_pla = max(worst_pla, float(np.abs(y_par - y_two).max() / scale))
        if m < n:
            worst_pla = max(worst_pla, float(
                np.abs(y_par[m:] - y_dec[m:]).max() / scale))

        empty = PLAInputs(q, k, v, np.zeros((0, d)), np.zeros((0, d)))
        worst_m0 = max(worst_m0, float(
            np.abs(pla_parallel(empty, fmap) - par).max()))

    report("parallel vs recurrent", worst_par_rec, 1e-10)
    report("prefix three-way equivalence", worst_pla, 1e-10)
    report("M=0 reduction to causal", worst_m0, 0.0)
    return 2 if failures else 0


def _cmd_bench(args) -> int:
    from prefixla.bench import bench_prefill, write_bench_csv

    impls = args.impls.split(",")
    n_list = [int(x) for x in args.n.split(",") if x]
    records = bench_prefill(impls, n_list, args.batch, args.d, args.trials)
    write_bench_csv(records, args.out)
    for r in records:
        print(f"{r.impl:>22} N={r.N:<6} {r.latency_ms:9.3f} ms")
    print(f"wrote {len(records)} records to {args.out}")
    return 0


def _cmd_prompt(args) -> int:
    from prefixla.prompts import PromptPair, jrt_transform

    text = sys.stdin.read()
    context: list[int] = []
    question: list[int] = []
    target = context
    for line in text.splitlines():
        if line.strip() == "|":
            target = question
            continue
        target.extend(int(tok) for tok in line.split())
    out = jrt_transform(PromptPair(context, question, args.budget))
    print(" ".join(str(t) for t in out))
    return 0


def _cmd_report(args) -> int:
    from prefixla.bench import report_data_order

    paths = report_data_order(args.runs, args.out_dir)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prefixla")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sdgen", help="generate a set-disjointness dataset (JSONL)")
    p.add_argument("--split", choices=["train", "eval"], required=True)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--vocab", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--profile", choices=["desk", "paper"], default="desk")
    p.set_defaults(fn=_cmd_sdgen)

    p = sub.add_parser("train", help="run the data-order training sweep")
    p.add_argument("--profile", choices=["desk", "paper"], default="desk")
    p.add_argument("--causal", choices=["true", "false", "both"], default="both")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("equiv-check", help="parallel/recurrent equivalence battery")
    p.add_argument("--instances", type=int, default=25)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_equiv_check)

    p = sub.add_parser("bench", help="prefill latency scaling")
    p.add_argument("--impls", default="la_parallel,la_recurrent,pla_two_pass,"
                                      "naive_softmax_oracle")
    p.add_argument("--n", default="1024,2048,4096")
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_bench)

    p = sub.add_parser("prompt", help="prompt transforms over stdin token ids")
    p.add_argument("kind", choices=["jrt"])
    p.add_argument("--budget", type=int, required=True)
    p.set_defaults(fn=_cmd_prompt)

    p = sub.add_parser("report", help="emit plot-data files from a sweep CSV")
    p.add_argument("kind", choices=["data-order"])
    p.add_argument("--runs", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
