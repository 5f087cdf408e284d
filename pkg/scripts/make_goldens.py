"""Regenerate src/signorini_lab/data/normalizers.json on high-resolution grids.

    python3 scripts/make_goldens.py
"""
import json
import pathlib

from signorini_lab.exact import h2m_normalizer_grid, normalize_profile
from signorini_lab.grid import make_grid

REFERENCE = {2: (6.0, 0.0125), 3: (5.0, 0.05)}
H2M_ORDERS = {2: (1, 2, 3), 3: (1, 2)}

OUT = pathlib.Path(__file__).resolve().parents[1] / "src" / "signorini_lab" / "data" / "normalizers.json"


def main():
    entries = []
    for n, (R, h) in REFERENCE.items():
        grid = make_grid(n, R, h)
        entries.append({"name": "c_n", "n": n, "m": 0, "R": R, "h": h,
                        "value": normalize_profile(n, grid)})
        for m in H2M_ORDERS[n]:
            entries.append({"name": "C_mn", "n": n, "m": m, "R": R, "h": h,
                            "value": h2m_normalizer_grid(m, grid)})
        print(n, "done")
    OUT.write_text(json.dumps({"version": 1, "entries": entries}, indent=2) + "\n")


if __name__ == "__main__":
    main()
