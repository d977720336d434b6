import sys

from src.kerrloop.cli.cli import main

if __name__ == "__main__":
    sys.exit(main())
