"""Serve a named objective over stdin/stdout for the external-object protocol.

Usage:
    python -m gpbo.serve_objective ackley3 --noise-var 25.0
    python -m gpbo.serve_objective forrester

Plugging a real simulator in means speaking the same protocol: read one JSON
request line {"x": [...], "stream": n}, write one JSON number line back.
"""

import argparse
import sys

from .objectives import make_objective, serve_objective


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("name", help="objective name (ackley3, ackley, forrester, synthetic_ttk)")
    parser.add_argument("--noise-var", type=float, default=0.0)
    parser.add_argument("--dims", type=int, default=None)
    args = parser.parse_args(argv)
    objective = make_objective(args.name, noise_var=args.noise_var, dims=args.dims)
    serve_objective(objective, sys.stdin, sys.stdout)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
