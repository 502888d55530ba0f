#!/usr/bin/env python3
"""Download the California housing table and write it as a CSV.

Uses scikit-learn's fetcher, which caches the StatLib archive locally.
Usage: fetch_california_housing.py [OUTPUT]  (default data/california_housing.csv)
"""
import pathlib
import sys

from sklearn.datasets import fetch_california_housing


def main():
    out = pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else "data/california_housing.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    frame = fetch_california_housing(as_frame=True).frame
    frame.to_csv(out, index=False)
    print(f"wrote {len(frame)} rows to {out}")


if __name__ == "__main__":
    main()
