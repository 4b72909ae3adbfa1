"""Command line: ``run`` a scenario, ``audit`` a dumped ledger."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .audit import audit_ledger, load_address_book
from .core_types import TradingError
from .sim import ConfigError, load_config, run


def cmd_run(args: argparse.Namespace) -> int:
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    result = run(config)
    paths = result.write(args.out)
    r = result.report
    print(
        f"trades={r.local_trade_count} matched={r.locally_matched_energy} "
        f"residual={r.residual_energy_from_dso} efficiency={r.market_efficiency:.4f}"
    )
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


def cmd_audit(args: argparse.Namespace) -> int:
    book = load_address_book(args.book) if args.book else None
    report = json.loads(Path(args.report).read_text()) if args.report else None
    try:
        result = audit_ledger(Path(args.ledger).read_text(), book, report)
    except TradingError as exc:
        print(f"FAIL replay: {exc}")
        return 1
    print(f"blocks={result.blocks} state_hash={result.state_hash}")
    print(f"{'PASS' if not result.privacy_hits else 'FAIL'} privacy scan "
          f"({len(result.privacy_hits)} identity tokens)")
    # the ledger only shows fiat flows, not starting balances
    for token, totals in result.totals.items():
        shown = {k: v for k, v in totals.items() if k not in ("initial_fiat", "final_fiat")}
        print(f"{token}: " + " ".join(f"{k}={v}" for k, v in sorted(shown.items())))
    for problem in result.problems:
        print(f"FAIL {problem}")
    return 0 if result.ok else 1


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="energy-trading", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate a scenario")
    p_run.add_argument("--config", required=True, type=Path)
    p_run.add_argument("--out", required=True, type=Path)
    p_run.set_defaults(func=cmd_run)

    p_audit = sub.add_parser("audit", help="replay and privacy-scan a ledger dump")
    p_audit.add_argument("--ledger", required=True, type=Path)
    p_audit.add_argument("--book", type=Path, help="DSO address book (address_book.json)")
    p_audit.add_argument("--report", type=Path, help="report.json to cross-check")
    p_audit.set_defaults(func=cmd_audit)

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
