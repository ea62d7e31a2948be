"""Command-line entry point: ``rkmips {gen,preprocess,query,bench,score-dist}``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time

from .baseline import brute_force_topn
from .preprocess import IndexConfig, build_index, configure_threads, load_index, save_index
from .query import TopNResult, top_n_query
from .synthetic import gen_synthetic
from .vector_store import ConfigurationError, USER, load_vectors, write_binary, write_text

log = logging.getLogger("rkmips")


def score_dist(index, k: int, limit: int) -> list[tuple[int, int]]:
    """``(rank, score)`` rows for the ``limit`` highest-scoring items."""
    if not 1 <= limit <= index.m:
        raise ConfigurationError(f"limit must lie in [1, {index.m}], got {limit}")
    result = top_n_query(index, k, limit)
    return [(r, s) for r, s in enumerate(result.scores, start=1)]


def _print_result(result: TopNResult, out, stats: bool) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["rank", "item_id", "score"])
    for rank, (item, score) in enumerate(result.entries, start=1):
        w.writerow([rank, item, score])
    if stats:
        s = result.stats
        for key in ("items_scored", "ip_count", "users_resolved"):
            print(f"# {key}: {getattr(s, key)}", file=out)
        print(f"# elapsed: {s.elapsed:.6f}", file=out)


def _config(args) -> IndexConfig:
    return IndexConfig(k_max=args.kmax, split_dim=args.dprime, c1=args.c1, c2=args.c2,
                       alpha=args.alpha, gamma=args.gamma, rotate=not args.no_rotate)


def cmd_gen(args) -> None:
    users, items = gen_synthetic(args.n, args.m, args.d, args.rank, args.seed)
    write = write_binary if args.format == "binary" else write_text
    write(users, args.users_out)
    write(items, args.items_out)
    print(f"wrote {users.count} users to {args.users_out} and {items.count} items to {args.items_out}")


def cmd_preprocess(args) -> None:
    users = load_vectors(args.users, role=USER)
    items = load_vectors(args.items)
    t0 = time.perf_counter()
    index = build_index(users, items, args.kmax, _config(args))
    elapsed = time.perf_counter() - t0
    save_index(index, args.out)
    s = index.stats
    print(f"index written to {args.out} in {elapsed:.3f}s "
          f"(inner products {s.ip_total}, uncertified {s.uncertified_after_dynamic}/{index.n})")


def cmd_query(args) -> None:
    index = load_index(args.index)
    _print_result(top_n_query(index, args.k, args.n), sys.stdout, args.stats)


def cmd_bench(args) -> None:
    users = load_vectors(args.users, role=USER)
    items = load_vectors(args.items)
    if args.method == "brute":
        result = brute_force_topn(users, items, args.k, args.n)
        _print_result(result, sys.stdout, False)
        print(f"# method: brute\n# query_seconds: {result.stats.elapsed:.6f}")
        return
    t0 = time.perf_counter()
    index = build_index(users, items, args.kmax, _config(args))
    build_s = time.perf_counter() - t0
    result = top_n_query(index, args.k, args.n)
    _print_result(result, sys.stdout, True)
    print(f"# method: ours\n# preprocess_seconds: {build_s:.6f}\n"
          f"# query_seconds: {result.stats.elapsed:.6f}")


def cmd_score_dist(args) -> None:
    index = load_index(args.index)
    rows = score_dist(index, args.k, args.limit)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["rank", "score"])
        w.writerows(rows)
    finally:
        if args.out:
            out.close()


def _index_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--kmax", type=int, default=25, help="largest k the index supports (default 25)")
    p.add_argument("--dprime", type=int, default=10,
                   help="split dimension for the head/tail bound, 1 <= dprime <= d (default 10)")
    p.add_argument("--c1", type=int, default=4, help="uniform budget: c1*kmax items per user (default 4)")
    p.add_argument("--c2", type=int, default=4, help="dynamic budget: c2*kmax*n in total (default 4)")
    p.add_argument("--alpha", type=float, default=1.0, help="budget curve scale (default 1)")
    p.add_argument("--gamma", type=float, default=None,
                   help="budget curve offset (default: smallest deficit)")
    p.add_argument("--no-rotate", action="store_true", help="skip the SVD rotation")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rkmips",
        description="Exact top-N items by reverse k-MIPS result size. "
                    "Set RKM_THREADS to cap parallelism.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate seeded synthetic user/item embeddings")
    p.add_argument("--n", type=int, default=1000, help="number of users")
    p.add_argument("--m", type=int, default=500, help="number of items")
    p.add_argument("--d", type=int, default=64, help="dimensionality")
    p.add_argument("--rank", type=int, default=16, help="latent rank, at most d")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--users-out", required=True, help="output path for user vectors")
    p.add_argument("--items-out", required=True, help="output path for item vectors")
    p.add_argument("--format", choices=("text", "binary"), default="binary", help="file format")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("preprocess", help="build an index file")
    p.add_argument("--users", required=True, help="user vector file (text or RKMV1)")
    p.add_argument("--items", required=True, help="item vector file (text or RKMV1)")
    p.add_argument("--out", required=True, help="index output path")
    _index_flags(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("query", help="top-N query against an index")
    p.add_argument("--index", required=True, help="index file")
    p.add_argument("--k", type=int, default=10, help="k of the k-MIPS results (default 10)")
    p.add_argument("--n", type=int, default=20, help="result size N (default 20)")
    p.add_argument("--stats", action="store_true", help="append a stats block")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("bench", help="time one method end to end")
    p.add_argument("--users", required=True, help="user vector file")
    p.add_argument("--items", required=True, help="item vector file")
    p.add_argument("--k", type=int, default=10, help="k (default 10)")
    p.add_argument("--n", type=int, default=20, help="N (default 20)")
    p.add_argument("--method", choices=("ours", "brute"), default="ours", help="method to run")
    _index_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("score-dist", help="rank,score CSV of the top items")
    p.add_argument("--index", required=True, help="index file")
    p.add_argument("--k", type=int, default=10, help="k (default 10)")
    p.add_argument("--limit", type=int, default=200, help="number of ranks (default 200)")
    p.add_argument("--out", default=None, help="CSV path (default stdout)")
    p.set_defaults(func=cmd_score_dist)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    configure_threads()
    try:
        args.func(args)
    except (ConfigurationError, OSError) as exc:
        print(f"rkmips: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
