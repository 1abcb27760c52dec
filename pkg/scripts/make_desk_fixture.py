"""Write the congested bottleneck grid (network, nodes, demand) as CSV inputs for the CLI."""

import argparse
from dataclasses import replace
from pathlib import Path

from ecoroute.engine import DESK_COLS, DESK_GRID, DESK_ROWS, generate_grid_network, save_demand
from ecoroute.network import save_network, save_nodes


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("desk"))
    ap.add_argument("--rows", type=int, default=DESK_ROWS)
    ap.add_argument("--cols", type=int, default=DESK_COLS)
    ap.add_argument("--demand-total", type=float, default=DESK_GRID.demand_total,
                    help="vehicles expected in the 15 min measurement window")
    args = ap.parse_args()
    spec = replace(DESK_GRID, demand_total=args.demand_total)
    net, demand = generate_grid_network(args.rows, args.cols, spec)
    args.out.mkdir(parents=True, exist_ok=True)
    save_network(net, args.out / "network.csv")
    save_nodes(net, args.out / "nodes.csv")
    save_demand(demand, args.out / "demand.csv")
    (args.out / "config.json").write_text('{"empty_section_policy": "skip"}\n')
    print(f"{len(net.intersections)} intersections, {len(net.links)} links, "
          f"{demand.expected_total:.0f} expected vehicles -> {args.out}")


if __name__ == "__main__":
    main()
