"""Command-line entry: python app.py --config run.json --experiment NAME --out DIR"""
import sys

from modules.circulator.cli import main


if __name__ == "__main__":
    sys.exit(main())
