"""Command-line front end: ``solve``, ``evaluate`` and ``compare``.

Exit codes: 0 success, 1 unreadable or invalid input (including a case/result
hash mismatch), 2 infeasible model, 3 solver or cutting-plane non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .convexcore import InfeasibleError, SolveError
from .evaluate import evaluate
from .formulations import ClearingResult, ModelKind, clear
from .model import CaseError, ModelOptions, SystemCase, bundled_case_path, case_hash, load_case
from .network import NetworkClearingResult, clear_network
from .pricing import PriceSet, PricingError, extract_prices, settle

MODELS = [k.value for k in ModelKind]

EXIT_INPUT = 1
EXIT_INFEASIBLE = 2
EXIT_NO_CONVERGENCE = 3


def _resolve_case(arg: str) -> Path:
    path = Path(arg)
    if path.exists():
        return path
    try:
        return bundled_case_path(path.stem)
    except FileNotFoundError:
        raise CaseError("case", f"no such file: {arg}") from None


def _load(arg: str, min_side: bool = False) -> tuple[Path, SystemCase, str]:
    """Case path, the case with any command-line overrides, and the file's hash."""
    path = _resolve_case(arg)
    case = load_case(path)
    digest = case_hash(case)
    if min_side:
        case = case.with_options(enforce_min_side=True)
    return path, case, digest


def _clear(case: SystemCase, model: str, network: bool) -> ClearingResult:
    if network:
        return clear_network(case, model)
    return clear(case, model)


def _fmt(v: Optional[float]) -> str:
    return "--" if v is None else f"{v:.2f}"


def dispatch_table(results: Sequence[ClearingResult]) -> str:
    """Per-unit ``p``, ``alpha`` and ``beta`` side by side, two decimals."""
    gids = list(results[0].p)
    head = ["unit"]
    for r in results:
        head += [f"{r.model.value}:p", f"{r.model.value}:alpha", f"{r.model.value}:beta"]
    rows = [head]
    for g in gids:
        row = [g]
        for r in results:
            row += [_fmt(r.p[g]), _fmt(r.alpha[g]), _fmt(r.beta[g] if r.beta is not None else None)]
        rows.append(row)
    return _render(rows)


def price_table(results: Sequence[ClearingResult], prices: Sequence[PriceSet]) -> str:
    """Energy price, reserve prices and scheduled cost per model."""
    rows = [["model", "pi", "rho", "chi", "cost"]]
    for r, pr in zip(results, prices):
        pi = "nodal" if isinstance(pr.pi, dict) else _fmt(pr.pi)
        rho = "nodal" if isinstance(pr.rho, dict) else _fmt(pr.rho)
        chi = "nodal" if isinstance(pr.chi, dict) else _fmt(pr.chi)
        rows.append([r.model.value, pi, rho, chi, _fmt(r.scheduled_cost)])
    return _render(rows)


def lmp_table(results: Sequence[ClearingResult], prices: Sequence[PriceSet]) -> str:
    nodal = [(r, pr) for r, pr in zip(results, prices) if isinstance(pr.pi, dict)]
    if not nodal:
        return ""
    nodes = list(nodal[0][1].pi)
    rows = [["node"] + [r.model.value for r, _ in nodal]]
    for n in nodes:
        rows.append([n] + [_fmt(pr.pi[n]) for _, pr in nodal])
    return _render(rows)


def _render(rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    out = []
    for k, r in enumerate(rows):
        out.append("  ".join(c.rjust(w) if k and i else c.ljust(w) for i, (c, w) in enumerate(zip(r, widths))))
    return "\n".join(out)


def _manifest(case_path: Path, case: SystemCase, model: str, outputs: list[str]) -> dict:
    return {
        "case_path": str(case_path),
        "model": model,
        "options": case.options.model_dump(mode="json"),
        "tool_version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "outputs": outputs,
    }


def cmd_solve(args: argparse.Namespace) -> int:
    path, case, digest = _load(args.case, args.min_side)
    result = _clear(case, args.model, args.network)
    prices = extract_prices(result)
    settlement = settle(result, prices, case)
    doc = result.to_dict()
    doc["case_hash"] = digest
    doc["network_result"] = isinstance(result, NetworkClearingResult)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = ["result.json", "prices.json", "settlement.csv", "manifest.json"]
    doc["manifest"] = _manifest(path, case, result.model.value, [str(out / f) for f in files])
    (out / "result.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
    (out / "prices.json").write_text(
        json.dumps({**prices.to_dict(), "settlement": settlement.to_dict()}, indent=2, sort_keys=True)
    )
    settlement.to_csv(out / "settlement.csv")
    (out / "manifest.json").write_text(json.dumps(doc["manifest"], indent=2, sort_keys=True))
    if args.json:
        print(json.dumps(doc, indent=2, sort_keys=True))
    if args.table:
        print(dispatch_table([result]))
        print()
        print(price_table([result], [prices]))
        lmps = lmp_table([result], [prices])
        if lmps:
            print()
            print(lmps)
    return 0


def _load_result(path: Path) -> tuple[ClearingResult, dict]:
    try:
        doc = json.loads(path.read_text())
        return ClearingResult.from_dict(doc), doc
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CaseError("result", f"cannot read {path}: {exc}") from exc


def cmd_evaluate(args: argparse.Namespace) -> int:
    _, case, digest = _load(args.case)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summaries = []
    loaded = []
    for rp in args.results:
        result, doc = _load_result(Path(rp))
        if doc.get("case_hash") != digest:
            raise CaseError("result", f"{rp} was produced for a different case (hash mismatch)")
        opts = doc.get("manifest", {}).get("options")
        case_for_run = case
        if opts is not None:
            case_for_run = case.model_copy(update={"options": ModelOptions.model_validate(opts)})
        loaded.append((result, case_for_run))
    for result, case_for_run in loaded:
        report = evaluate(result, case_for_run, args.scenarios, args.seed)
        stem = f"scenarios_{result.model.value}"
        (out / f"{stem}.json").write_text(report.to_json())
        report.to_csv(out / f"{stem}.csv")
        summaries.append(report.summary())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "scenarios", "seed", "mean_cost", "std_cost"])
    for s in summaries:
        w.writerow([s["model"], s["scenarios"], s["seed"], repr(s["mean_cost"]), repr(s["std_cost"])])
    (out / "summary.csv").write_text(buf.getvalue())
    if args.summary:
        rows = [["model", "scenarios", "mean", "std"]]
        for s in summaries:
            rows.append([s["model"], str(s["scenarios"]), _fmt(s["mean_cost"]) if s["scenarios"] else "--",
                         _fmt(s["std_cost"]) if s["scenarios"] else "--"])
        print(_render(rows))
    if args.json:
        print(json.dumps(summaries, indent=2, sort_keys=True))
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    _, case, _ = _load(args.case, args.min_side)
    results = [_clear(case, m, args.network) for m in args.models]
    prices = [extract_prices(r) for r in results]
    text = [dispatch_table(results), "", price_table(results, prices)]
    lmps = lmp_table(results, prices)
    if lmps:
        text += ["", lmps]
    print("\n".join(text))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "unit", "p", "alpha", "beta"])
        for r in results:
            for g in r.p:
                w.writerow([r.model.value, g, repr(r.p[g]), repr(r.alpha[g]),
                            "" if r.beta is None else repr(r.beta[g])])
        (out / "dispatch.csv").write_text(buf.getvalue())
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "node", "pi", "rho", "chi", "cost"])
        for r, pr in zip(results, prices):
            pis = pr.pi if isinstance(pr.pi, dict) else {"system": pr.pi}
            for node, pi in pis.items():
                w.writerow([r.model.value, node, repr(pi), repr(pr.rho), "" if pr.chi is None else repr(pr.chi),
                            repr(r.scheduled_cost)])
        (out / "prices.csv").write_text(buf.getvalue())
    if args.json:
        print(json.dumps([r.to_dict() for r in results], indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ldtmarket", description="Reserve-aware market clearing under wind uncertainty.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="clear one model and write result, prices and settlement")
    p.add_argument("case", help="case file, or the name of a bundled case")
    p.add_argument("--model", choices=MODELS, required=True)
    p.add_argument("--network", action="store_true", help="use nodal balances and line limits")
    p.add_argument("--min-side", action="store_true", help="also enforce the lower output limits")
    p.add_argument("--table", action="store_true", help="print dispatch and price tables")
    p.add_argument("--json", action="store_true", help="print the result as sorted JSON")
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(func=cmd_solve)

    e = sub.add_parser("evaluate", help="Monte Carlo evaluation of solved results")
    e.add_argument("case")
    e.add_argument("results", nargs="+", help="result.json files written by solve")
    e.add_argument("--scenarios", type=int, default=3000)
    e.add_argument("--seed", type=int, default=7)
    e.add_argument("--summary", action="store_true", help="print mean and std per model")
    e.add_argument("--json", action="store_true")
    e.add_argument("--out", default=".")
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("compare", help="clear several models and print them side by side")
    c.add_argument("case")
    c.add_argument("--models", nargs="+", choices=MODELS, default=MODELS)
    c.add_argument("--network", action="store_true")
    c.add_argument("--min-side", action="store_true")
    c.add_argument("--json", action="store_true")
    c.add_argument("--out", default=None)
    c.set_defaults(func=cmd_compare)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "scenarios", 0) < 0:
        print("error: --scenarios must be >= 0", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except CaseError as exc:
        print(f"error: invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InfeasibleError as exc:
        print(f"error: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (SolveError, PricingError) as exc:
        print(f"error: no convergence: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
