"""Outlier-count grid with one surplus member; metrics skip the outlier pixels.

Thin wrapper over ``scaunmix sweep --kind outliers``; pass --quick for a short smoke run.
"""
import sys

from scaunmix.cli import main

if __name__ == "__main__":
    quick = ["--epochs", "1", "--steps", "200", "--counts", "5", "20"] if "--quick" in sys.argv else []
    rest = [a for a in sys.argv[1:] if a != "--quick"]
    sys.exit(main(["sweep", "--kind", "outliers", *quick, *rest]))
