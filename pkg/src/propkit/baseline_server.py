"""Serve a saved baseline model over the line-delimited adapter protocol.

    python -m propkit.baseline_server model.json
"""

import sys

from .detect import BaselineModel, serve_stdio


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        print("usage: python -m propkit.baseline_server MODEL_JSON", file=sys.stderr)
        return 2
    serve_stdio(BaselineModel.load(argv[0]))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
