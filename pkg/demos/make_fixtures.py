"""Regenerate the fixture CSVs shipped in src/gfref/data.

Each fixture is a seeded Gaussian random field realization on one of the
designs used in the simulation study. Run from the repository root.
"""

from pathlib import Path

import numpy as np

from gfref.covmodel import MaternParams
from gfref.designs import SpatialDesign, regular_grid_design
from gfref.io import write_dataset
from gfref.simstudy import simulate_grf

OUT = Path(__file__).resolve().parents[1] / "src" / "gfref" / "data"


def incomplete_grid(rng, k=14, keep=100):
    g = np.linspace(0.0, 1.0, k)
    pts = np.array([(a, b) for a in g for b in g])
    return pts[np.sort(rng.choice(len(pts), keep, replace=False))]


def main():
    rng = np.random.default_rng(2024)
    designs = {
        "grid10": (regular_grid_design(10), MaternParams(1.0, 0.2, 0.5), [1.0]),
        "uniform100": (SpatialDesign.from_trend(rng.uniform(size=(100, 2))), MaternParams(1.0, 0.2, 0.5), [1.0]),
        "incomplete14": (SpatialDesign.from_trend(incomplete_grid(rng)), MaternParams(1.0, 0.2, 0.5), [1.0]),
        "uniform600_nu15": (SpatialDesign.from_trend(rng.uniform(size=(600, 2))), MaternParams(1.0, 0.3, 1.5), [0.0]),
    }
    for i, (name, (design, params, beta)) in enumerate(designs.items()):
        data = simulate_grf(design, params, seed=11, index=i, beta=beta)
        write_dataset(OUT / f"{name}.csv", data)
        print(f"{name}: n={design.n}")


if __name__ == "__main__":
    main()
