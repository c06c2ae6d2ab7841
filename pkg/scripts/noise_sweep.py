"""SNR x lambda grid: SAD and RMSE(A) of the fitted model at each cell.

Thin wrapper over ``scaunmix sweep --kind noise``; pass --quick for a short smoke run.
"""
import sys

from scaunmix.cli import main

if __name__ == "__main__":
    quick = ["--epochs", "1", "--steps", "200", "--snr", "40", "20", "--lambdas", "0.1", "1.0"] if "--quick" in sys.argv else []
    rest = [a for a in sys.argv[1:] if a != "--quick"]
    sys.exit(main(["sweep", "--kind", "noise", *quick, *rest]))
