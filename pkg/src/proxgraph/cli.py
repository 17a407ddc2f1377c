"""Command-line interface: gen | gt | build | search | bench | stats.

Every flag can also be supplied through a key=value config file passed with
--config; explicit command-line flags win. Exit codes: 0 ok, 2 parameter
error, 3 I/O error, 4 data error.
"""

from __future__ import annotations

import argparse
import os
import resource
import sys
import time

import numpy as np

from .bench import run_workload, write_records
from .build import (BUILDERS, BuildParams, BuildStats, GraphIndex, NPParams,
                    build_dc, build_ii, build_meta, build_vamana2r,
                    load_partitioned_index, nndescent, save_partitioned_index)
from .data import (FORMATS, Dataset, QuerySet, SyntheticSpec, gen_powerlaw,
                   load_vectors, make_noise_queries, read_ivecs, sample_subset,
                   save_vectors, write_ivecs)
from .diversify import NDStrategy
from .errors import ParameterError, ProxgraphError
from .graph import _MAGIC as _INDEX_MAGIC
from .metrics import DistanceCounter, dataset_complexity
from .oracle import ground_truth, load_ground_truth, save_ground_truth
from .search import beam_search, search_partitioned
from .seeds import SeedStrategy, build_seed_index, default_want, select_seeds

BUILD_CSV_FIELDS = ("builder", "n", "d", "R", "Lbuild", "nd", "ss", "dist_calcs",
                    "wall_ms", "peak_mem_bytes")


def _peak_mem_bytes() -> int:
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024


def _load_dataset(args) -> Dataset:
    return load_vectors(args.data, args.data_format, d=args.raw_d, n=args.raw_n)


def _load_queries(args) -> QuerySet:
    qs = load_vectors(args.queries, args.queries_format)
    return QuerySet(qs.values)


def _load_any_index(path: str, ds):
    with open(path, "rb") as f:
        magic = f.read(4)
    if magic == _INDEX_MAGIC:
        return GraphIndex.load(path, ds), None
    pi, meta = load_partitioned_index(path, ds)
    return pi, meta


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--data-format", default="fvecs", choices=FORMATS)
    p.add_argument("--raw-d", type=int, default=None, help="dimension for raw-f32 input")
    p.add_argument("--raw-n", type=int, default=None, help="row count for raw-f32 input")


def cmd_gen(args) -> int:
    if args.mode in ("noise", "subset") and not args.data:
        raise ParameterError(f"gen --mode {args.mode} needs --data")
    if args.mode == "powerlaw":
        spec = SyntheticSpec(args.n, args.d, args.exponent, args.seed)
        save_vectors(gen_powerlaw(spec), args.out, args.out_format)
    elif args.mode == "noise":
        base = _load_dataset(args)
        qs = make_noise_queries(base, args.m, args.sigma2, args.seed)
        save_vectors(qs.values, args.out, args.out_format)
        if args.out_ids:
            write_ivecs(args.out_ids, qs.provenance.row_ids.reshape(-1, 1))
    elif args.mode == "subset":
        base = _load_dataset(args)
        save_vectors(sample_subset(base, args.m, args.seed), args.out, args.out_format)
    else:
        raise ParameterError(f"unknown gen mode {args.mode!r}")
    return 0


def cmd_gt(args) -> int:
    ds = _load_dataset(args)
    qs = _load_queries(args)
    exclude = None
    if args.exclude_ids:
        exclude = read_ivecs(args.exclude_ids).ravel()
    gt = ground_truth(ds, qs, args.k, exclude_ids=exclude)
    save_ground_truth(gt, args.out_ids, args.out_dists)
    return 0


def cmd_build(args) -> int:
    ds = _load_dataset(args)
    nd = NDStrategy.parse(args.nd)
    ss = SeedStrategy.parse(args.ss)
    params = BuildParams(max_degree=args.R, beam_width=args.Lbuild, nd=nd, ss=ss,
                         seed=args.seed, insert_order=args.insert_order)
    meta = build_meta(args.builder, params, ds.n, ds.d,
                      args.partitions if args.builder == "dc" else None)
    if args.builder == "ii":
        g, si, stats = build_ii(ds, params)
        GraphIndex(g, si, meta).save(args.out, ds.d)
    elif args.builder == "vamana2r":
        g, si, stats = build_vamana2r(ds, params)
        GraphIndex(g, si, meta).save(args.out, ds.d)
    elif args.builder == "np":
        counter = DistanceCounter()
        start = time.perf_counter_ns()
        g = nndescent(ds, NPParams(k=args.np_k, iters=args.np_iters, seed=args.seed),
                      counter=counter)
        si = build_seed_index(ds, g, ss, args.seed)
        stats = BuildStats(dist_calcs=counter.calls,
                           wall_ns=time.perf_counter_ns() - start)
        meta["params"]["np_k"] = args.np_k
        meta["params"]["np_iters"] = args.np_iters
        GraphIndex(g, si, meta).save(args.out, ds.d)
    elif args.builder == "dc":
        pi = build_dc(ds, args.partitions, params)
        stats = pi.build_stats
        save_partitioned_index(pi, args.out, ds.d, meta)
    else:
        raise ParameterError(f"unknown builder {args.builder!r}")

    degree = args.np_k if args.builder == "np" else args.R
    row = [args.builder, str(ds.n), str(ds.d), str(degree), str(args.Lbuild),
           nd.spec(), ss.spec(), str(stats.dist_calcs),
           f"{stats.wall_ns / 1e6:.3f}", str(_peak_mem_bytes())]
    print(",".join(BUILD_CSV_FIELDS))
    print(",".join(row))
    return 0


def cmd_search(args) -> int:
    ds = _load_dataset(args)
    qs = _load_queries(args)
    index, _ = _load_any_index(args.index, ds)
    gt = None
    if args.gt_ids and args.gt_dists:
        gt = load_ground_truth(args.gt_ids, args.gt_dists)
    from .bench import recall as _recall

    print("query,k,L,nprobe,recall,dist_calcs,hops,wall_ms,seeds_used")
    for qi in range(qs.m):
        q = qs.values[qi]
        rng = np.random.default_rng((args.seed, qi))
        if isinstance(index, GraphIndex):
            counter = DistanceCounter()
            seeds = select_seeds(index.seed_index, q,
                                 want=default_want(index.seed_index.strategy, args.k),
                                 counter=counter, rng=rng)
            result, stats = beam_search(index.graph, ds, seeds, q, args.k, args.L)
            stats.dist_calcs += counter.calls
            nprobe = 1
        else:
            nprobe = args.nprobe
            result, stats = search_partitioned(index, ds, q, args.k, args.L,
                                               nprobe, index.seed_indexes,
                                               seed_rng=rng)
        rec = "" if gt is None else repr(_recall(result, gt.ids[qi], gt.dists[qi], args.k))
        print(f"{qi},{args.k},{args.L},{nprobe},{rec},{stats.dist_calcs},"
              f"{stats.hops},{stats.wall_ns / 1e6:.3f},{stats.seeds_used}")
    return 0


def cmd_bench(args) -> int:
    ds = _load_dataset(args)
    qs = _load_queries(args)
    index, meta = _load_any_index(args.index, ds)
    gt = load_ground_truth(args.gt_ids, args.gt_dists)
    beam_grid = [int(x) for x in args.L_grid.split(",") if x]
    nprobe_grid = [int(x) for x in args.nprobe_grid.split(",")] if args.nprobe_grid else None
    records = run_workload(index, ds, qs, gt, args.k, beam_grid, nprobe_grid,
                           repeats=args.repeats, trim=args.trim,
                           dataset_tag=args.tag or os.path.basename(args.data),
                           base_seed=args.seed, meta=meta,
                           distance_tolerance=args.distance_tolerance)
    if args.out:
        with open(args.out, "w") as f:
            write_records(records, f)
    else:
        write_records(records, sys.stdout)
    if args.gnuplot:
        if not args.out:
            raise ParameterError("--gnuplot needs --out so the script has a CSV to plot")
        from .bench import gnuplot_script
        with open(args.gnuplot, "w") as f:
            f.write(gnuplot_script(args.out))
    return 0


def cmd_stats(args) -> int:
    ds = _load_dataset(args)
    qs = _load_queries(args)
    exclude = read_ivecs(args.exclude_ids).ravel() if args.exclude_ids else None
    report = dataset_complexity(ds, qs, args.k, exclude_ids=exclude)
    tag = args.tag or os.path.basename(args.data)
    print("dataset,k,mean_lid,mean_lrc,excluded")
    print(f"{tag},{args.k},{report.mean_lid:.6f},{report.mean_lrc:.6f},{report.excluded}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="proxgraph",
                                     description="proximity-graph vector search toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="synthesize datasets and query workloads")
    p.add_argument("--config", default=None)
    p.add_argument("--mode", default="powerlaw", choices=("powerlaw", "noise", "subset"))
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--d", type=int, default=32)
    p.add_argument("--exponent", type=float, default=0.0, help="power-law exponent (a)")
    p.add_argument("--m", type=int, default=100, help="rows to draw (noise/subset)")
    p.add_argument("--sigma2", type=float, default=0.01, help="noise variance")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data", default=None, help="base dataset (noise/subset)")
    p.add_argument("--data-format", default="fvecs", choices=FORMATS)
    p.add_argument("--raw-d", type=int, default=None)
    p.add_argument("--raw-n", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--out-format", default="fvecs", choices=FORMATS)
    p.add_argument("--out-ids", default=None,
                   help="also record chosen row ids (ivecs; noise mode)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("gt", help="exact ground truth (ids as ivecs, dists as fvecs)")
    p.add_argument("--config", default=None)
    _add_data_flags(p)
    p.add_argument("--queries", required=True)
    p.add_argument("--queries-format", default="fvecs", choices=FORMATS)
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--exclude-ids", default=None, help="per-query self-match ids (ivecs)")
    p.add_argument("--out-ids", required=True)
    p.add_argument("--out-dists", required=True)
    p.set_defaults(func=cmd_gt)

    p = sub.add_parser("build", help="construct a graph index")
    p.add_argument("--config", default=None)
    _add_data_flags(p)
    p.add_argument("--builder", default="ii", choices=BUILDERS)
    p.add_argument("--R", type=int, default=32, help="max out-degree")
    p.add_argument("--Lbuild", type=int, default=128, help="construction beam width")
    p.add_argument("--nd", default="rnd",
                   help="nond | rnd | rrnd:alpha=1.3 | mond:theta=60")
    p.add_argument("--ss", default="ks:k=32",
                   help="sf | md | ks:k=32 | kd:trees=1,visits=512 | sn:M=32")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--insert-order", default="shuffled", choices=("shuffled", "dataset"))
    p.add_argument("--partitions", type=int, default=2, help="dc builder only")
    p.add_argument("--np-k", type=int, default=10, help="np builder: neighbors per node")
    p.add_argument("--np-iters", type=int, default=10, help="np builder: max sweeps")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("search", help="answer queries against a built index")
    p.add_argument("--config", default=None)
    _add_data_flags(p)
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--queries-format", default="fvecs", choices=FORMATS)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--L", type=int, default=100, help="beam width")
    p.add_argument("--nprobe", type=int, default=1)
    p.add_argument("--gt-ids", default=None)
    p.add_argument("--gt-dists", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("bench", help="grid benchmark emitting one CSV row per point")
    p.add_argument("--config", default=None)
    _add_data_flags(p)
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--queries-format", default="fvecs", choices=FORMATS)
    p.add_argument("--gt-ids", required=True)
    p.add_argument("--gt-dists", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--L-grid", default="100", help="comma-separated beam widths")
    p.add_argument("--nprobe-grid", default=None, help="comma-separated probe counts")
    p.add_argument("--repeats", type=int, default=6)
    p.add_argument("--trim", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tag", default=None)
    p.add_argument("--distance-tolerance", action="store_true",
                   help="count answers within the true k-th distance as correct")
    p.add_argument("--out", default=None, help="CSV path (default: stdout)")
    p.add_argument("--gnuplot", default=None,
                   help="also write a gnuplot script plotting the CSV")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("stats", help="dataset hardness (mean LID / LRC) as CSV")
    p.add_argument("--config", default=None)
    _add_data_flags(p)
    p.add_argument("--queries", required=True)
    p.add_argument("--queries-format", default="fvecs", choices=FORMATS)
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--exclude-ids", default=None)
    p.add_argument("--tag", default=None)
    p.set_defaults(func=cmd_stats)
    return parser


def _expand_config(argv: list[str]) -> list[str]:
    """Splice config-file entries in as flags ahead of the explicit ones."""
    path = None
    for i, token in enumerate(argv):
        if token == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
            break
        if token.startswith("--config="):
            path = token.split("=", 1)[1]
            break
    if path is None or not argv:
        return argv
    try:
        with open(path) as f:
            lines = f.readlines()
    except OSError as exc:
        raise ParameterError(f"cannot read config {path}: {exc}") from exc
    extra: list[str] = []
    for raw in lines:
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"config line is not key=value: {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        extra.extend([f"--{key.replace('_', '-')}", value])
    return [argv[0]] + extra + argv[1:]


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = _expand_config(argv)
        try:
            args = build_parser().parse_args(argv)
        except SystemExit as exc:  # argparse exits with 2 on bad flags
            return int(exc.code or 0)
        return args.func(args) or 0
    except ProxgraphError as exc:
        print(f"proxgraph: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"proxgraph: i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
