"""Run akpz-lab as a module."""

from akpz_lab.main import main

if __name__ == "__main__":  # pragma: no cover
    main()
