"""Run acceptance criteria outside pytest and print one verdict line each, plus sub-check values.

Usage: python3 scripts/run_acceptance.py            # all twelve
       python3 scripts/run_acceptance.py 2 9 12     # a subset
"""
import argparse
import json
import sys
import warnings

from fraclyap.harness import acceptance as acc


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("numbers", type=int, nargs="*", help="criterion numbers (default: all)")
    ap.add_argument("--json", help="also write the results to this file")
    args = ap.parse_args()
    numbers = args.numbers or sorted(acc.CRITERIA)
    results = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for k in numbers:
            res = acc.run_criterion(k)
            results.append(res)
            print(res.line(), flush=True)
            for c in res.checks:
                print(f"     {c.name}: {'ok' if c.passed else 'FAIL'} value={c.value} threshold={c.threshold} {c.detail}")
    if args.json:
        body = [{"number": r.number, "title": r.title, "passed": r.passed, "runtime": r.runtime,
                 "checks": [c.__dict__ for c in r.checks]} for r in results]
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(body, fh, indent=2)
    return 0 if all(r.passed for r in results) else 1


if __name__ == "__main__":
    sys.exit(main())
