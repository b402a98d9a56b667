"""Command-line entry point: ``cellfree-ra run`` and ``cellfree-ra compare``.

Output files written by ``run`` (all CSV with a header row):

slot_metrics.csv  realization, slot, scheme, leakage, sum_se
user_se.csv       realization, user, scheme, leakage, se (mean over all slots)
trace.csv         realization, slot, scheme, leakage, node, iteration, f2
counters.csv      realization, scheme, leakage, E_avg, U_q, U_ng, csi_vectors,
                  scheduling_decisions, beamformers, complexity, complexity_centralized
flags.csv         realization, slot, scheme, leakage, flag
summary.csv       scheme, leakage, mean_sum_se, std_sum_se, ratio_to_du
config.resolved.toml
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from itertools import permutations
from pathlib import Path

import numpy as np

from .config import dump_resolved, parse_config
from .evaluation import run_schemes

COUNTER_FIELDS = ["E_avg", "U_q", "U_ng", "csi_vectors", "scheduling_decisions", "beamformers",
                  "complexity", "complexity_centralized"]


def _fmt(x) -> str:
    return repr(float(x))


def _write(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_results(out: Path, spec, results) -> list:
    """Write every output file; returns the summary rows."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.toml").write_text(dump_resolved(spec))
    slot_rows, user_rows, trace_rows, counter_rows, flag_rows = [], [], [], [], []
    for res in results:
        tag = (res.scheme, res.leakage)
        for i, se in enumerate(res.slot_se):
            for t, total in enumerate(se.sum(axis=1)):
                slot_rows.append([i, t, *tag, _fmt(total)])
            for u, v in enumerate(res.user_se(i)):
                user_rows.append([i, u, *tag, _fmt(v)])
            c = res.counters[i]
            counter_rows.append([i, *tag, *[_fmt(c[k]) for k in COUNTER_FIELDS]])
        for i, t, node, it, val in res.traces:
            trace_rows.append([i, t, *tag, node, it, _fmt(val)])
        for i, t, f in res.flags:
            flag_rows.append([i, t, *tag, f])
    _write(out / "slot_metrics.csv", ["realization", "slot", "scheme", "leakage", "sum_se"], slot_rows)
    _write(out / "user_se.csv", ["realization", "user", "scheme", "leakage", "se"], user_rows)
    _write(out / "trace.csv", ["realization", "slot", "scheme", "leakage", "node", "iteration", "f2"],
           trace_rows)
    _write(out / "counters.csv", ["realization", "scheme", "leakage", *COUNTER_FIELDS], counter_rows)
    _write(out / "flags.csv", ["realization", "slot", "scheme", "leakage", "flag"], flag_rows)

    du_mean = {r.leakage: r.mean_sum_se for r in results if r.scheme == "du"}
    summary = []
    for res in results:
        ref = du_mean.get(res.leakage) if res.leakage != "none" else None
        if ref is None and du_mean:
            ref = next(iter(du_mean.values()))
        ratio = res.mean_sum_se / ref if ref else float("nan")
        summary.append([res.scheme, res.leakage, res.mean_sum_se,
                        float(np.std(res.long_term_sum_se)), ratio])
    _write(out / "summary.csv", ["scheme", "leakage", "mean_sum_se", "std_sum_se", "ratio_to_du"],
           [[s, l, _fmt(m), _fmt(sd), _fmt(r)] for s, l, m, sd, r in summary])
    return summary


def cmd_run(args) -> int:
    spec = parse_config(args.config)
    if args.convergence:
        spec = dataclasses.replace(spec, run=dataclasses.replace(spec.run, trace=True))
    out = Path(args.out)
    results = run_schemes(spec.network, spec.runs(), spec.run)
    summary = write_results(out, spec, results)
    print(f"{'scheme':<10} {'leakage':<12} {'mean sum SE':>12} {'vs DU':>8}")
    for s, l, m, _, r in summary:
        print(f"{s:<10} {l:<12} {m:>12.3f} {r:>8.3f}")
    for leak in sorted({l for s, l, *_ in summary if s == "cu"}):
        cu = next(m for s, l, m, *_ in summary if s == "cu" and l == leak)
        du = next((m for s, l, m, *_ in summary if s == "du" and l == leak), None)
        if du:
            print(f"CU/DU ratio ({leak}): {cu / du:.3f}")
    n_flags = sum(len(r.flags) for r in results)
    if n_flags:
        print(f"{n_flags} solver flags recorded in {out / 'flags.csv'}")
    return 0


def _read_seed(d: Path):
    cfg = d / "config.resolved.toml"
    if not cfg.is_file():
        raise FileNotFoundError(f"no config.resolved.toml in {d}")
    for line in cfg.read_text().splitlines():
        if line.startswith("seed ="):
            return int(line.split("=", 1)[1])
    raise ValueError(f"{cfg} has no seed entry")


def load_result_dir(d: Path) -> dict:
    """(scheme, leakage) -> per-realization long-term sum SE, from slot_metrics.csv."""
    path = d / "slot_metrics.csv"
    if not path.is_file():
        raise FileNotFoundError(f"no slot_metrics.csv in {d}")
    avg_last = None
    for line in (d / "config.resolved.toml").read_text().splitlines():
        if line.startswith("average_last ="):
            avg_last = int(line.split("=", 1)[1])
    table: dict = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["scheme"], row["leakage"])
            table.setdefault(key, {}).setdefault(int(row["realization"]), []).append(
                (int(row["slot"]), float(row["sum_se"])))
    out = {}
    for key, per in table.items():
        vals = []
        for i in sorted(per):
            seq = [v for _, v in sorted(per[i])]
            k = min(avg_last or len(seq), len(seq))
            vals.append(float(np.mean(seq[-k:])))
        out[key] = np.array(vals)
    return out


def cmd_compare(args) -> int:
    dirs = [Path(d) for d in args.dirs]
    for d in dirs:
        if not d.is_dir():
            raise FileNotFoundError(f"result directory not found: {d}")
    seeds = {str(d): _read_seed(d) for d in dirs}
    if len(set(seeds.values())) > 1:
        raise ValueError(f"seed mismatch across result sets: {seeds}")
    entries = []
    for d in dirs:
        for (scheme, leak), vals in load_result_dir(d).items():
            entries.append((str(d), scheme, leak, vals))
    if len(entries) < 2:
        raise ValueError("compare needs at least two result sets")
    rows = [["kind", "dir_a", "scheme_a", "leakage_a", "dir_b", "scheme_b", "leakage_b", "value"]]
    for d, s, l, v in entries:
        rows.append(["mean", d, s, l, "", "", "", _fmt(v.mean())])
    for a, b in permutations(entries, 2):
        if len(a[3]) != len(b[3]):
            raise ValueError(f"realization counts differ between {a[:3]} and {b[:3]}")
        rows.append(["ratio", *a[:3], *b[:3], _fmt(a[3].mean() / b[3].mean())])
    out = Path(args.out)
    _write(out, rows[0], rows[1:])
    for r in rows[1:]:
        if r[0] == "ratio":
            print(f"{r[2]}/{r[3]} ({r[1]}) vs {r[5]}/{r[6]} ({r[4]}): {float(r[7]):.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cellfree-ra",
                                 description="Distributed resource allocation for cell-free MIMO downlinks")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the Monte Carlo experiment described by a config file")
    run.add_argument("config", help="TOML file with flat dotted keys")
    run.add_argument("--out", default="results", help="output directory (default: results)")
    run.add_argument("--convergence", action="store_true", help="record per-iteration objective traces")
    run.set_defaults(func=cmd_run)
    cmp_ = sub.add_parser("compare", help="compare result directories sharing a seed")
    cmp_.add_argument("dirs", nargs="+", help="result directories written by 'run'")
    cmp_.add_argument("--out", default="comparison.csv", help="summary CSV path (default: comparison.csv)")
    cmp_.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, OSError) as exc:
        print(f"cellfree-ra: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # solver failure
        print(f"cellfree-ra: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
