"""Command line entry point: ``bnbpfa {fit,eval,simulate,report}``.

Exit codes: 0 success, 2 usage or configuration, 3 data, 4 numeric.
Failures print one JSON object to stderr.
"""

import argparse
import csv
import io
import json
import logging
import math
import os
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .bnb_process import BnbHyper, simulate_msibp
from .config import load_config, parse_config
from .corpus import ingest_bow
from .errors import ConfigError, DataError, DomainError, ModelDegeneracyError, NumericError
from .evaluation import (
    FACTOR_COLUMNS,
    PredictiveAccumulator,
    factor_report,
    split_counts,
    synthetic_corpus,
    uniform_perplexity,
)
from .pfa_model import _atomic_write_bytes, save_state
from .samplers import TRACE_COLUMNS, VARIANTS, expected_factor_counts, run_chain
from .special_math import RngStream

log = logging.getLogger("bnbpfa")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
FIXED_K_VARIANTS = ("DIR", "GAMMA_GIBBS", "GAMMA_EM")
EVAL_COLUMNS = ("variant", "a_phi", "K_or_Kmax", "split_id", "perplexity")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# output helpers

def version_string():
    """``git describe`` of the source tree when available, else the package version."""
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
            capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return value


def write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    _atomic_write_bytes(path, buf.getvalue().encode("utf-8"))


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_json(path, obj):
    _atomic_write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8"))


def write_run_metadata(out_dir, cfg, command, extra=None):
    _atomic_write_bytes(os.path.join(out_dir, "config.txt"), cfg.to_text().encode("utf-8"))
    meta = {"command": command, "seed": cfg.seed, "version": version_string()}
    meta.update(extra or {})
    write_json(os.path.join(out_dir, "meta.json"), meta)


# ---------------------------------------------------------------------------
# corpus

def load_corpus(cfg):
    if cfg.synthetic:
        syn = synthetic_corpus(
            RngStream(cfg.seed).substream("corpus"), P=cfg.synthetic_P, N=cfg.synthetic_N,
            K=cfg.synthetic_K, tokens_per_doc=cfg.synthetic_tokens, a_phi=cfg.synthetic_a_phi,
        )
        return syn.X, [f"t{j + 1}" for j in range(syn.X.P)]
    X, vocab = ingest_bow(cfg.docword, cfg.vocab, min_doc_freq=cfg.min_doc_freq, header=cfg.header)
    if X.nnz == 0:
        raise DataError("corpus is empty after vocabulary pruning")
    return X, vocab


def factor_counts(X, result):
    """Per-factor assigned counts; EM has no allocation, so use rounded expectations."""
    if result.allocation is not None:
        return result.allocation.x_k
    return np.rint(expected_factor_counts(X, result.state)).astype(np.int64)


# ---------------------------------------------------------------------------
# fit

def cmd_fit(cfg):
    cfg.validate()
    out = cfg.output_dir
    os.makedirs(os.path.join(out, "snapshots"), exist_ok=True)
    X, vocab = load_corpus(cfg)
    h = cfg.hyper()
    chain = cfg.chain()
    hyper_meta = {"variant": cfg.variant, **{k: getattr(h, k) for k in ("K", "c", "c0", "r0", "a_phi", "b_phi", "g")},
                  "eps": h.eps_value, "a_theta": h.a_theta_for(cfg.variant)}
    collected = [0]

    def on_sample(S):
        collected[0] += 1
        if collected[0] % cfg.snapshot_every == 0:
            it = chain.burn_in + collected[0] * chain.thin
            save_state(os.path.join(out, "snapshots", f"sample_{it:06d}.npz"), S, it, hyper_meta)

    result = run_chain(X, h, chain, RngStream(cfg.seed).substream("fit"), keep_samples=False, on_sample=on_sample)
    save_state(os.path.join(out, "snapshots", "final.npz"), result.state, chain.n_iterations, hyper_meta)
    trace = result.trace
    write_csv(os.path.join(out, "trace.csv"), TRACE_COLUMNS, zip(*(trace[c] for c in TRACE_COLUMNS)))
    report = factor_report(result.state, factor_counts(X, result), M=cfg.top_terms)
    write_csv(os.path.join(out, "factor_report.csv"), FACTOR_COLUMNS, report.rows(vocab))
    rates = result.diagnostics.acceptance_rates()
    write_run_metadata(out, cfg, "fit", {
        "variant": cfg.variant,
        "corpus": {"P": X.P, "N": X.N, "nnz": X.nnz, "total": X.total, "sha256": X.digest()},
        "n_collected": result.n_collected,
        "n_active_factors": report.n_active,
        "mh_fallbacks": result.diagnostics.fallbacks,
        "mh_acceptance": [None if not math.isfinite(a) else float(a) for a in rates],
    })
    print(f"fit {cfg.variant}: {report.n_active} active factors, output in {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval

def eval_tasks(cfg):
    """(variant, K, a_phi) combinations in output order."""
    tasks = []
    for variant in cfg.variants or [cfg.variant]:
        ks = cfg.k_grid if (variant in FIXED_K_VARIANTS and cfg.k_grid) else [cfg.K]
        for K in ks:
            for a_phi in cfg.a_phi_grid or [None]:
                tasks.append((variant, int(K), a_phi))
    return tasks


def fit_perplexity(cfg, variant, K, a_phi, split_id, split):
    h = cfg.hyper(variant, K=K, a_phi=a_phi)
    rng = RngStream(cfg.seed).substream("fit", split_id).substream(variant).substream(f"K={K}").substream(
        f"a_phi={h.a_phi!r}")
    acc = PredictiveAccumulator(split.test)
    run_chain(split.train, h, cfg.chain(variant), rng, keep_samples=False, on_sample=acc.add)
    return h.a_phi, acc.perplexity()


def _fit_job(args):
    return fit_perplexity(*args)


def cmd_eval(cfg):
    cfg.validate()
    os.makedirs(cfg.output_dir, exist_ok=True)
    X, _ = load_corpus(cfg)
    root = RngStream(cfg.seed)
    splits = [split_counts(X, cfg.ratio, root.substream("split", j)) for j in range(cfg.replicates)]
    tasks = eval_tasks(cfg)
    jobs = [(cfg, v, K, a, j, splits[j]) for (v, K, a) in tasks for j in range(cfg.replicates)]
    if cfg.threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(_fit_job, jobs))
    else:
        results = [_fit_job(job) for job in jobs]
    rows = []
    for t, (variant, K, _) in enumerate(tasks):
        block = results[t * cfg.replicates:(t + 1) * cfg.replicates]
        a_phi = block[0][0]
        values = [pp for _, pp in block]
        rows += [(variant, a_phi, K, j, v) for j, v in enumerate(values)]
        rows.append((variant, a_phi, K, "mean", float(np.mean(values))))
    if cfg.baseline:
        values = [uniform_perplexity(s.test) for s in splits]
        rows += [("UNIFORM", "", X.P, j, v) for j, v in enumerate(values)]
        rows.append(("UNIFORM", "", X.P, "mean", float(np.mean(values))))
    path = os.path.join(cfg.output_dir, "perplexity.csv")
    write_csv(path, EVAL_COLUMNS, rows)
    write_run_metadata(cfg.output_dir, cfg, "eval", {
        "corpus": {"P": X.P, "N": X.N, "nnz": X.nnz, "total": X.total, "sha256": X.digest()},
        "splits": [{"split_id": j, "train_tokens": s.train.total, "test_tokens": s.test.total}
                   for j, s in enumerate(splits)],
    })
    for row in rows:
        if row[3] == "mean":
            print(f"{row[0]:>12s}  a_phi={row[1]!s:<6} K={row[2]:<5} perplexity={row[4]:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate

def _simulate_chunk(args):
    cfg, start, stop = args
    h = simulation_hyper(cfg)
    root = RngStream(cfg.seed).substream("msibp")
    draws = []
    for rep in range(start, stop):
        d = simulate_msibp(cfg.n_customers, h, root.substream("replicate", rep), fixed_k=cfg.fixed_k)
        draws.append((rep, d.new_dishes, d.customer, d.atom, d.count))
    return draws


def simulation_hyper(cfg):
    try:
        return BnbHyper(
            c=cfg.c, alpha=cfg.alpha, gamma_mass=cfg.gamma_mass, eps=cfg.sim_eps,
            r_base_shape=cfg.c0 * cfg.r0, r_base_scale=1.0 / cfg.c0, mark=cfg.mark,
        )
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_simulate(cfg):
    cfg.validate(need_corpus=False)
    simulation_hyper(cfg)
    os.makedirs(cfg.output_dir, exist_ok=True)
    n_rep = cfg.sim_replicates
    n_chunks = max(1, min(cfg.threads * 4, n_rep))
    bounds = np.linspace(0, n_rep, n_chunks + 1).astype(int)
    chunks = [(cfg, int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]
    if cfg.threads > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            parts = list(pool.map(_simulate_chunk, chunks))
    else:
        parts = [_simulate_chunk(c) for c in chunks]
    draws = [d for part in parts for d in part]

    def dish_rows():
        for rep, new, _, _, _ in draws:
            total = np.cumsum(new)
            for i in range(cfg.n_customers):
                yield rep, i + 1, int(new[i]), int(total[i])

    write_csv(os.path.join(cfg.output_dir, "msibp.csv"), ("replicate", "customer", "new_dishes", "total_dishes"),
              dish_rows())
    if cfg.write_counts:
        def count_rows():
            for rep, _, cust, atom, count in draws:
                for c, a, k in zip(cust, atom, count):
                    yield rep, int(c) + 1, int(a) + 1, int(k)

        write_csv(os.path.join(cfg.output_dir, "msibp_counts.csv"),
                  ("replicate", "customer_index", "atom_index", "count"), count_rows())
    write_run_metadata(cfg.output_dir, cfg, "simulate")
    if cfg.n_customers:
        first = np.mean([new[0] for _, new, *_ in draws])
        print(f"simulated {n_rep} replicates of {cfg.n_customers} customers; customer 1 mean new dishes {first:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# report

def cmd_report(run_dir=None, eval_csv=None, out_dir=None, plots=True):
    if run_dir is None and eval_csv is None:
        raise UsageError("report needs --run DIR and/or --eval CSV")
    out_dir = out_dir or run_dir or os.path.dirname(os.path.abspath(eval_csv))
    os.makedirs(out_dir, exist_ok=True)
    plotting = None
    if plots:
        try:
            from . import plotting
        except ImportError:
            log.warning("matplotlib is not installed; writing CSV output only")
    written = []
    if run_dir is not None:
        path = os.path.join(run_dir, "factor_report.csv")
        if not os.path.exists(path):
            raise DataError(f"no factor_report.csv in {run_dir}")
        rows = read_csv(path)
        stats = []
        for r in rows:
            if int(r["count"]) <= 0:
                continue
            mean, vmr = float(r["mean"]), float(r["vmr"])
            p = 1.0 - 1.0 / vmr if math.isfinite(vmr) else float("nan")
            rk = mean * (1.0 - p) / p if p > 0 else float("nan")
            stats.append((int(r["factor_rank"]), int(r["factor_id"]), int(r["count"]), rk, p, mean, vmr))
        out_csv = os.path.join(out_dir, "factor_stats.csv")
        write_csv(out_csv, ("factor_rank", "factor_id", "count", "r", "p", "mean", "vmr"), stats)
        written.append(out_csv)
        if plotting is not None:
            written.append(plotting.factor_stats_figure(rows, os.path.join(out_dir, "factor_stats.png")))
    if eval_csv is not None:
        if not os.path.exists(eval_csv):
            raise DataError(f"file not found: {eval_csv}")
        rows = read_csv(eval_csv)
        groups = {}
        for r in rows:
            if r["split_id"] == "mean":
                continue
            groups.setdefault((r["variant"], r["a_phi"], r["K_or_Kmax"]), []).append(float(r["perplexity"]))
        summary = [(v, a, k, float(np.mean(x)), float(np.std(x, ddof=1)) if len(x) > 1 else 0.0, len(x))
                   for (v, a, k), x in groups.items()]
        out_csv = os.path.join(out_dir, "perplexity_summary.csv")
        write_csv(out_csv, ("variant", "a_phi", "K_or_Kmax", "mean", "sd", "n_splits"), summary)
        written.append(out_csv)
        if plotting is not None:
            written.append(plotting.perplexity_vs_k_figure(rows, os.path.join(out_dir, "perplexity_vs_k.png")))
            written.append(plotting.perplexity_vs_aphi_figure(rows, os.path.join(out_dir, "perplexity_vs_aphi.png")))
    for path in written:
        print(path)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument handling

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="bnbpfa", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        p.add_argument("--threads", type=int, help="worker processes; 1 is the determinism reference")
        p.add_argument("--variant", choices=VARIANTS, help="override the configured variant")
        p.add_argument("-o", "--output-dir", dest="output_dir", help="output directory")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key (repeatable)")

    common(sub.add_parser("fit", help="run one chain and write trace, snapshots and factor report"))
    common(sub.add_parser("eval", help="held-out perplexity over random splits"))
    common(sub.add_parser("simulate", help="simulate the multi-scoop IBP"))
    rep = sub.add_parser("report", help="summary CSVs and figures from fit/eval output")
    rep.add_argument("--run", dest="run_dir", help="fit output directory")
    rep.add_argument("--eval", dest="eval_csv", help="perplexity CSV from eval")
    rep.add_argument("-o", "--output-dir", dest="output_dir")
    rep.add_argument("--no-plots", action="store_true", help="write CSV summaries only")
    return parser


def config_from_args(args):
    overrides = {}
    for item in args.set:
        overrides.update(parse_config(item))
    for key in ("seed", "threads", "variant", "output_dir"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    return load_config(args.config, **overrides)


def _fail(exc, code):
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)
    return code


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        if args.command == "report":
            return cmd_report(args.run_dir, args.eval_csv, args.output_dir, plots=not args.no_plots)
        cfg = config_from_args(args)
        return {"fit": cmd_fit, "eval": cmd_eval, "simulate": cmd_simulate}[args.command](cfg)
    except (UsageError, ConfigError) as exc:
        return _fail(exc, EXIT_USAGE)
    except DataError as exc:
        return _fail(exc, EXIT_DATA)
    except (NumericError, ModelDegeneracyError, DomainError, FloatingPointError) as exc:
        return _fail(exc, EXIT_NUMERIC)


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
