"""Run the acceptance suite and print one PASS/FAIL line per criterion.

    python3 scripts/acceptance.py            # all criteria
    python3 scripts/acceptance.py -k "not slow"
"""

import sys
from pathlib import Path

import pytest

if __name__ == "__main__":
    root = Path(__file__).resolve().parents[1]
    args = [str(root / "tests" / "test_acceptance.py"), "-q", "-p", "no:cacheprovider"]
    if len(sys.argv) > 2 and sys.argv[1] == "-k":
        args += ["-m", sys.argv[2]] if sys.argv[2] in ("slow", "not slow") else ["-k", sys.argv[2]]
    raise SystemExit(pytest.main(args))
