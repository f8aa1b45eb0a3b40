"""Entry point for python -m molview."""

import sys

from molview.cli import main

if __name__ == "__main__":
    sys.exit(main())
