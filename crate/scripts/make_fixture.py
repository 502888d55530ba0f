#!/usr/bin/env python3
"""Write the 200-row synthetic housing fixture used by tests and --fixture runs.

Columns follow the canonical schema. Values are drawn from rough marginals of
the real data and the target is a noisy nonlinear function of them, clipped
to the census cap.
"""
import math
import random
import sys

N = 200
SEED = 20240611
COLUMNS = ["MedInc", "HouseAge", "AveRooms", "AveBedrms", "Population",
           "AveOccup", "Latitude", "Longitude", "MedHouseVal"]


def row(rng):
    inc = min(15.0, max(0.5, rng.lognormvariate(1.25, 0.45)))
    age = float(rng.randint(1, 52))
    rooms = max(1.5, rng.gauss(5.3, 1.2))
    beds = max(0.6, rng.gauss(1.07, 0.08))
    pop = float(max(20, int(rng.lognormvariate(7.0, 0.7))))
    occ = max(1.2, rng.gauss(2.9, 0.6))
    lat = rng.uniform(32.6, 41.9)
    lon = -124.3 + (41.9 - lat) * 0.9 + rng.gauss(0.0, 0.8)
    coast = abs(lat - 34.05)
    val = (0.45 * inc + 0.9 * math.exp(-coast / 2.0) - 0.12 * occ
           + 0.004 * age + 0.03 * rooms + rng.gauss(0.0, 0.35))
    val = min(5.00001, max(0.14999, val))
    return [round(inc, 4), age, round(rooms, 5), round(beds, 5), pop,
            round(occ, 5), round(lat, 2), round(lon, 2), round(val, 5)]


def main(path):
    rng = random.Random(SEED)
    with open(path, "w", newline="\n") as f:
        f.write(",".join(COLUMNS) + "\n")
        for _ in range(N):
            f.write(",".join(repr(v) for v in row(rng)) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "crates/core/fixtures/synthetic_housing.csv")
