"""Entry point for python -m bioconvect."""

from .cli import main

if __name__ == "__main__":
    main()
