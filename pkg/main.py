"""APDI Detect - Main Entry Point."""
import sys

from views.command_line import main

if __name__ == "__main__":
    sys.exit(main())
