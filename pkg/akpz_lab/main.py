"""Entry point wrapper for akpz-lab."""

import sys

from akpz_lab.cli import main as cli_main


def main() -> None:
    """Run the CLI and propagate its exit status."""
    sys.exit(cli_main())


if __name__ == "__main__":  # pragma: no cover
    main()
