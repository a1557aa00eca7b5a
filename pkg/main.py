import sys

from phonovoc.handlers.cli_handler import main

if __name__ == "__main__":
    sys.exit(main())
