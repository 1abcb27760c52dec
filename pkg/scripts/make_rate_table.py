"""Regenerate the bundled synthetic rate table and default fleet file."""

import argparse
from pathlib import Path

from ecoroute.emissions import synthetic_rate_table
from ecoroute.engine import DEFAULT_FLEET, save_fleet

DATA = Path(__file__).resolve().parents[1] / "src" / "ecoroute" / "data"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=DATA)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    synthetic_rate_table().save(args.out / "rates_synthetic.csv")
    save_fleet(DEFAULT_FLEET, args.out / "fleet_default.csv")
    print(f"wrote tables to {args.out}")


if __name__ == "__main__":
    main()
