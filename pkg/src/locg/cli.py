"""``locg`` command line: run | sigma-table | plot | verify.

Outputs per (problem, triple, seed) under ``--out``:

    <stem>.csv           iter, rho_j, resnorm_j, err_rel_j, sigma, ratio_two_step, ratio_vs_bound
    <stem>_timing.csv    iter, wall_time, cumulative_time
    <stem>_rates.csv     rate report over the last half of the iterations
    <stem>.json          {problem, nb, me, mh, seed, outcome, iters, final_err_rel[, breakdown_iter]}

Floats are written with 17 significant digits, so traces round-trip exactly and
reruns of the same manifest give byte-identical files (timing lives apart).
"""

import argparse
import csv
import io
import json
import math
import os
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import svgplot
from .errors import LocgError
from .linesearch import verify_trace
from .problems import ProblemSpec, load_matrix_market, start_block
from .rates import bound_C, per_step_bound, rate_report
from .solver import SolverConfig, locg_solve

STANDARD_TRIPLES = ([(1, me, mh) for me in (1, 2, 3) for mh in (0, 1, 2)]
                 + [(nb, 1, mh) for nb in (2, 3) for mh in (0, 1)])
DEFAULT_MAX_ITER = {"laplacian2d": 3000, "cluster_outlier": 3000, "outlier_cluster": 500,
                    "matrix-file": 3000}
VERIFY_MAX_N = 2000
VERIFY_TOL = 1e-8
MONOTONE_SLACK = 1e-13
GALERKIN_TOL = 1e-10

STEM_RE = re.compile(r"^(?P<problem>.+)__nb(?P<nb>\d+)_me(?P<me>\d+)_mh(?P<mh>\d+)__seed(?P<seed>-?\d+)$")


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    problem: ProblemSpec
    triples: list
    trials: int = 1
    seeds: list = field(default_factory=list)
    max_iter: int = 0
    stop_rel: float = 1e-15
    precond: object = None
    out: str = "locg_out"
    inject_fault: int = -1

    def __post_init__(self):
        if not self.triples:
            raise UsageError("no triples given")
        if self.trials < 1:
            raise UsageError("trials must be at least 1")
        for t in self.triples:
            if len(t) != 3 or t[0] < 1 or t[1] < 1 or t[2] < 0:
                raise UsageError(f"bad triple {t}")
        if not self.seeds:
            self.seeds = list(range(self.trials))
        if not self.max_iter:
            self.max_iter = DEFAULT_MAX_ITER[self.problem.kind]


def fmt(x):
    if x is None:
        return "nan"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def stem(label, triple, seed):
    nb, me, mh = triple
    return f"{label}__nb{nb}_me{me}_mh{mh}__seed{seed}"


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------

def parse_triples(text):
    text = (text or "").strip()
    if text == "standard":
        return list(STANDARD_TRIPLES)
    out = []
    for part in re.split(r"[;\s]+", text):
        if not part:
            continue
        try:
            t = tuple(int(v) for v in part.strip("()").split(","))
        except ValueError as exc:
            raise UsageError(f"cannot parse triple {part!r}") from exc
        if len(t) != 3:
            raise UsageError(f"triple {part!r} needs three integers")
        out.append(t)
    return out


def read_config(path):
    """Flat ``key = value`` file; keys mirror long flags (``max-iter`` or ``max_iter``)."""
    cfg = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected key = value")
            k, v = (s.strip() for s in line.split("=", 1))
            cfg[k.replace("-", "_")] = v
    return cfg


_FLAGS = {
    "problem": str, "N": int, "n": int, "problem_seed": int, "matrix": str,
    "nb": int, "me": int, "mh": int, "triples": str, "trials": int, "seed": int,
    "max_iter": int, "stop_rel": float, "precond": str, "precond_matrix": str, "out": str,
    "inject_fault": int,
}
_DEFAULTS = {"problem": "outlier_cluster", "N": 50, "n": 1000, "problem_seed": 0, "nb": 1,
             "me": 1, "mh": 1, "trials": 1, "seed": 0, "stop_rel": 1e-15,
             "precond": "identity", "out": "locg_out", "inject_fault": -1}


def _add_common(p):
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--problem", choices=["laplacian2d", "cluster_outlier", "outlier_cluster",
                                         "matrix-file"])
    p.add_argument("--N", type=int, help="grid size for laplacian2d (default 50)")
    p.add_argument("--n", type=int, help="dimension of the synthetic problems (default 1000)")
    p.add_argument("--problem-seed", type=int, help="seed of the random orthogonal factor")
    p.add_argument("--matrix", help="Matrix Market file (implies --problem matrix-file)")
    p.add_argument("--nb", type=int)
    p.add_argument("--me", type=int)
    p.add_argument("--mh", type=int)
    p.add_argument("--triples", help="'nb,me,mh;nb,me,mh...' or 'standard' for the 13 standard ones")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int, help="first start seed; trial t uses seed + t")
    p.add_argument("--max-iter", type=int)
    p.add_argument("--stop-rel", type=float)
    p.add_argument("--precond", choices=["identity", "jacobi", "file"])
    p.add_argument("--precond-matrix", help="Matrix Market file for --precond file")
    p.add_argument("--out", help="output directory")


def build_parser():
    ap = argparse.ArgumentParser(prog="locg", description="LOCG eigensolver benchmarks")
    sub = ap.add_subparsers(dest="cmd", required=True)
    p = sub.add_parser("run", help="solve and write traces")
    _add_common(p)
    p = sub.add_parser("verify", help="check line-search identities every iteration")
    _add_common(p)
    p.add_argument("--inject-fault", type=int,
                   help="corrupt the recorded iterate of this iteration (self-test)")
    p = sub.add_parser("sigma-table", help="min/mean/max of sigma - 1 over the last half")
    _add_common(p)
    p.add_argument("traces", nargs="*", help="trace CSVs (default: solve in-line)")
    p = sub.add_parser("plot", help="three-panel SVG per trace")
    p.add_argument("traces", nargs="+")
    p.add_argument("--out", help="output directory (default: next to each trace)")
    return ap


def manifest_from_args(args):
    merged = dict(_DEFAULTS)
    if getattr(args, "config", None):
        for k, v in read_config(args.config).items():
            if k not in _FLAGS:
                raise UsageError(f"unknown config key {k!r}")
            try:
                merged[k] = _FLAGS[k](v)
            except ValueError as exc:
                raise UsageError(f"bad value for {k}: {v!r}") from exc
    for k in _FLAGS:
        v = getattr(args, k, None)
        if v is not None:
            merged[k] = v
    if merged.get("matrix"):
        merged["problem"] = "matrix-file"
    kind = merged["problem"]
    if kind == "laplacian2d":
        params = {"N": merged["N"]}
    elif kind == "matrix-file":
        if not merged.get("matrix"):
            raise UsageError("matrix-file problems need --matrix")
        params = {"path": merged["matrix"]}
    else:
        params = {"n": merged["n"], "seed": merged["problem_seed"]}
    try:
        spec = ProblemSpec(kind, params)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if "triples" in merged and merged["triples"] is not None:
        triples = parse_triples(merged["triples"])
    else:
        triples = [(merged["nb"], merged["me"], merged["mh"])]
    precond = merged["precond"]
    if precond == "file":
        if not merged.get("precond_matrix"):
            raise UsageError("--precond file needs --precond-matrix")
        precond = load_matrix_market(merged["precond_matrix"])
    elif precond == "identity":
        precond = None
    trials = merged["trials"]
    return RunManifest(spec, triples, trials, [merged["seed"] + t for t in range(trials)],
                       merged.get("max_iter") or 0, merged["stop_rel"], precond,
                       merged["out"], merged.get("inject_fault", -1))


# ---------------------------------------------------------------------------
# trace serialization
# ---------------------------------------------------------------------------

def trace_columns(nb):
    return (["iter"] + [f"rho_{j}" for j in range(1, nb + 1)]
            + [f"resnorm_{j}" for j in range(1, nb + 1)]
            + [f"err_rel_{j}" for j in range(1, nb + 1)]
            + ["sigma", "ratio_two_step", "ratio_vs_bound"])


def trace_rows(trace, summary, cfg):
    """Rows of the trace CSV (all values already formatted)."""
    recs = trace.all_records()
    nb = cfg.n_b
    eps = np.array([r.errors_abs[0] if r.errors_abs is not None else np.nan for r in recs])
    C = bound_C(summary, cfg.m_e) if summary is not None else float("nan")
    rows = []
    for k, r in enumerate(recs):
        two = vs = float("nan")
        if k >= 2 and eps[k - 2] > 0:
            two = eps[k] / eps[k - 2]
        if k >= 1 and eps[k - 1] > 0 and summary is not None:
            s = r.sigma if cfg.m_h > 0 and r.sigma >= 1 else (1.0 if cfg.m_h else 0.0)
            b = per_step_bound(s, C, cfg.m_h)
            vs = (eps[k] / eps[k - 1]) / b if b > 0 else float("nan")
        err = r.errors_rel if r.errors_rel is not None else [float("nan")] * nb
        rows.append([fmt(k)] + [fmt(v) for v in r.ritz_values] + [fmt(v) for v in r.residual_norms]
                    + [fmt(v) for v in err] + [fmt(r.sigma), fmt(two), fmt(vs)])
    return rows


def _write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    Path(path).write_text(buf.getvalue())


def read_trace(path):
    """Parse a trace CSV into ``(header, dict of float arrays)``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["iter", "rho_1"] or "sigma" not in rows[0]:
        raise ValueError(f"{path}: not a trace file")
    header = rows[0]
    data = np.array([[float(v) for v in row] for row in rows[1:]], dtype=float)
    if data.ndim != 2 or data.shape[1] != len(header) or data.shape[0] == 0:
        raise ValueError(f"{path}: malformed rows")
    return header, {h: data[:, i] for i, h in enumerate(header)}


# ---------------------------------------------------------------------------
# solving
# ---------------------------------------------------------------------------

@dataclass
class TrialResult:
    triple: tuple
    seed: int
    trace: object
    outcome: str
    stem: str
    summary: dict


def _threads():
    try:
        return max(1, int(os.environ.get("LOCG_THREADS", "1")))
    except ValueError:
        return 1


def solve_trial(A, summary, man, triple, seed, keep_steps=False):
    nb, me, mh = triple
    cfg = SolverConfig(nb, me, mh, max_iter=man.max_iter, stop_rel=man.stop_rel, seed=seed,
                       keep_steps=keep_steps)
    X0 = start_block(A.n, nb, seed)
    _, trace, outcome = locg_solve(A, man.precond, X0, cfg, reference=summary)
    last = trace.all_records()[-1]
    info = {"problem": man.problem.label(), "nb": nb, "me": me, "mh": mh, "seed": seed,
            "outcome": outcome, "iters": trace.iterations,
            "final_err_rel": float(last.errors_rel[0]) if last.errors_rel is not None else None}
    if outcome == "breakdown":
        info["breakdown_iter"] = trace.breakdown_iter
    return TrialResult(triple, seed, trace, outcome, stem(man.problem.label(), triple, seed), info)


def _jobs(man):
    return [(t, s) for t in man.triples for s in man.seeds]


def _map(fn, jobs):
    n = min(_threads(), len(jobs))
    if n <= 1:
        return [fn(*j) for j in jobs]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(lambda j: fn(*j), jobs))


def write_trial(res, summary, out):
    cfg = res.trace.config
    _write_csv(out / f"{res.stem}.csv", trace_columns(cfg.n_b), trace_rows(res.trace, summary, cfg))
    cum = 0.0
    timing = [[fmt(0), fmt(0.0), fmt(0.0)]]
    for r in res.trace.records:
        cum += r.wall_time
        timing.append([fmt(r.iter), fmt(r.wall_time), fmt(cum)])
    _write_csv(out / f"{res.stem}_timing.csv", ["iter", "wall_time", "cumulative_time"], timing)
    rate_rows = []
    if summary is not None:
        for r in rate_report(res.trace.errors(), res.trace.sigmas(), summary, cfg.m_e, cfg.m_h):
            rate_rows.append([fmt(r.iter), fmt(r.err), fmt(r.ratio), fmt(r.sigma), fmt(r.bound),
                              fmt(r.ratio_vs_bound), fmt(r.two_step), fmt(r.multi_ratio),
                              fmt(r.multi_bound)])
    _write_csv(out / f"{res.stem}_rates.csv",
               ["iter", "err", "ratio", "sigma", "bound", "ratio_vs_bound", "two_step",
                "multi_ratio", "multi_bound"], rate_rows)
    (out / f"{res.stem}.json").write_text(json.dumps(res.summary, sort_keys=True) + "\n")


def _prepare_out(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    probe = out / ".locg_write_test"
    probe.write_text("")
    probe.unlink()
    return out


def cmd_run(man, stream=None):
    stream = stream or sys.stdout
    out = _prepare_out(man.out)
    A, summary = man.problem.build()
    results = _map(lambda t, s: solve_trial(A, summary, man, t, s), _jobs(man))
    for res in results:
        write_trial(res, summary, out)
        fe = res.summary["final_err_rel"]
        print(f"{res.stem}: {res.outcome} after {res.trace.iterations} iterations"
              + (f", rel. error {fe:.3e}" if fe is not None else ""), file=stream)
    return 0 if all(r.outcome != "breakdown" for r in results) else 1


# ---------------------------------------------------------------------------
# sigma table
# ---------------------------------------------------------------------------

def sigma_stats(sigmas, tail=0.5):
    """min/mean/max of sigma - 1 over the last ``tail`` of iterations 1..K, or None.

    K is the last iteration with a defined sigma: sigma tracks the first
    column, and once that column locks the remaining iterations say nothing
    about it.
    """
    s = np.asarray(sigmas, dtype=float)
    fin = np.flatnonzero(np.isfinite(s[1:]))
    K = int(fin[-1]) + 1 if fin.size else s.size - 1
    if K < 4:
        return None
    start = max(1, K - int(math.floor(K * tail)) + 1)
    v = s[start:] - 1.0
    v = v[np.isfinite(v)]
    if v.size == 0:
        return (float("nan"),) * 3
    return float(v.min()), float(v.mean()), float(v.max())


def render_sigma(x):
    if not np.isfinite(x):
        return "n/a"
    if x < 1e-8:
        return "0"
    s = f"{x:.1e}"
    return s + "*" if x > 1 else s


def sigma_table_rows(entries):
    """``entries``: iterable of (problem, triple, seed, sigmas, m_h)."""
    rows = []
    for problem, triple, seed, sig, mh in entries:
        if mh == 0:
            rows.append([problem, "(%d,%d,%d)" % triple, str(seed), "-", "-", "-", "sigma = 0 by convention"])
            continue
        st = sigma_stats(sig)
        if st is None:
            rows.append([problem, "(%d,%d,%d)" % triple, str(seed), "", "", "", "insufficient"])
        else:
            rows.append([problem, "(%d,%d,%d)" % triple, str(seed)] + [render_sigma(x) for x in st] + [""])
    return rows


def cmd_sigma_table(man, traces=(), stream=None, write_csv=False):
    stream = stream or sys.stdout
    entries = []
    if traces:
        for path in traces:
            m = STEM_RE.match(Path(path).stem)
            if not m:
                print(f"warning: cannot infer triple from {path}; skipped", file=sys.stderr)
                continue
            try:
                _, cols = read_trace(path)
            except (OSError, ValueError) as exc:
                print(f"warning: {exc}; skipped", file=sys.stderr)
                continue
            t = (int(m["nb"]), int(m["me"]), int(m["mh"]))
            entries.append((m["problem"], t, int(m["seed"]), cols["sigma"], t[2]))
    else:
        A, summary = man.problem.build()
        results = _map(lambda t, s: solve_trial(A, summary, man, t, s), _jobs(man))
        for r in results:
            entries.append((man.problem.label(), r.triple, r.seed, r.trace.sigmas(), r.triple[2]))
    header = ["problem", "triple", "seed", "min", "mean", "max", "note"]
    rows = sigma_table_rows(entries)
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(header)]
    print("  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip(), file=stream)
    for r in rows:
        print("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip(), file=stream)
    print("sigma - 1 over the last 50% of iterations before the first column locks; < 1e-8 shown as 0, * marks values > 1",
          file=stream)
    if write_csv and man is not None:
        out = _prepare_out(man.out)
        _write_csv(out / "sigma_table.csv", header, rows)
    return 0


# ---------------------------------------------------------------------------
# plots
# ---------------------------------------------------------------------------

def cmd_plot(traces, out=None, stream=None):
    stream = stream or sys.stdout
    written = 0
    for path in traces:
        path = Path(path)
        try:
            header, cols = read_trace(path)
        except (OSError, ValueError) as exc:
            print(f"warning: {exc}; skipped", file=sys.stderr)
            continue
        base = path.with_suffix("")
        timing = None
        tpath = Path(f"{base}_timing.csv")
        if tpath.exists():
            try:
                with open(tpath, newline="") as fh:
                    t = list(csv.reader(fh))[1:]
                timing = np.array([float(r[2]) for r in t])
            except (ValueError, IndexError):
                timing = None
        breakdown = None
        jpath = Path(f"{base}.json")
        if jpath.exists():
            try:
                breakdown = json.loads(jpath.read_text()).get("breakdown_iter")
            except ValueError:
                pass
        svg = svgplot.three_panel(cols, timing, breakdown, title=path.stem)
        dest = (Path(out) if out else path.parent) / f"{path.stem}.svg"
        dest.parent.mkdir(parents=True, exist_ok=True)
        dest.write_text(svg)
        written += 1
        print(f"wrote {dest}", file=stream)
    return 0 if written else 1


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------

def _corrupt(trace, it, seed=12345):
    """Perturb the recorded iterate number ``it`` inside its search space."""
    for info in trace.steps:
        if info.iter + 1 == it:
            rng = np.random.default_rng(seed)
            info.Y = info.Y + 1e-3 * rng.standard_normal(info.Y.shape)
            info.X_new = info.basis.Z @ info.Y
            return True
    return False


def verify_trial(A, summary, man, triple, seed, stream=None):
    stream = stream or sys.stdout
    res = solve_trial(A, summary, man, triple, seed, keep_steps=True)
    trace = res.trace
    if man.inject_fault >= 0 and not _corrupt(trace, man.inject_fault):
        print(f"warning: no step {man.inject_fault} to corrupt", file=stream)
    ok = res.outcome != "breakdown"
    if not ok:
        print(f"{res.stem}: breakdown at iteration {trace.breakdown_iter}: {trace.message}", file=stream)
    reports = {} if man.precond is not None else {r.iter: r for r in verify_trace(A, trace, VERIFY_TOL)}
    scale = A.scale or 1.0
    recs = trace.all_records()
    n_fail = 0
    for k in range(1, len(recs)):
        prev, cur = recs[k - 1], recs[k]
        mono = bool(np.all(cur.ritz_values <= prev.ritz_values + MONOTONE_SLACK * np.abs(prev.ritz_values)))
        gal = cur.galerkin <= GALERKIN_TOL * scale
        rep = reports.get(k - 1)
        ident = "skipped" if rep is None else ("PASS" if rep.passed else "FAIL")
        worst = "" if rep is None else f" (worst {rep.worst:.2e})"
        line_ok = mono and gal and ident != "FAIL"
        if not line_ok:
            n_fail += 1
            ok = False
        print(f"{res.stem} iter {k}: identities {ident}{worst}, galerkin {'PASS' if gal else 'FAIL'}"
              f" ({cur.galerkin:.1e}), monotone {'PASS' if mono else 'FAIL'}", file=stream)
        if rep is not None and not rep.passed:
            bad = ", ".join(f"{n}={v:.2e}" for n, v in rep.residuals.items() if v is not None and not v <= rep.tol)
            print(f"  failing identities at iteration {k}: {bad}", file=stream)
    print(f"{res.stem}: {'PASS' if ok else 'FAIL'} ({n_fail} failing iterations)", file=stream)
    return ok


def cmd_verify(man, stream=None):
    stream = stream or sys.stdout
    A, summary = man.problem.build()
    if A.n > VERIFY_MAX_N:
        raise UsageError(f"verify is limited to n <= {VERIFY_MAX_N}")
    ok = True
    for triple, seed in _jobs(man):
        ok &= verify_trial(A, summary, man, triple, seed, stream)
    return 0 if ok else 1


# ---------------------------------------------------------------------------

def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        if args.cmd == "plot":
            return cmd_plot(args.traces, args.out)
        man = manifest_from_args(args)
        if args.cmd == "run":
            return cmd_run(man)
        if args.cmd == "verify":
            return cmd_verify(man)
        return cmd_sigma_table(man, args.traces, write_csv=args.out is not None)
    except UsageError as exc:
        print(f"locg: usage error: {exc}", file=sys.stderr)
        return 2
    except (OSError, LocgError, ValueError) as exc:
        print(f"locg: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
