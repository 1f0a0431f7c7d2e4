"""Generate the golden cell-stream fixtures shared by the Python client and
the browser UI tests.

    python3 tools/make_fixtures.py [outdir]

Writes binary streams plus goldens.json with byte digests of the decoded
(uncompressed) record bodies, so any decoder can be checked for exactness by
re-serialising what it decoded.
"""

from __future__ import annotations

import hashlib
import json
import sys
import zlib
from pathlib import Path

import numpy as np

from slwn.exchange import TopologyIndex, run_exchange_cycle
from slwn.geometry import Box
from slwn.hiergrid import Forest
from slwn.steerd import protocol as proto
from slwn.window import WindowQuery, extract, select

DOMAIN = Box((0.0, 0.0, 0.0), (1.0, 1.0, 0.1))


def build_forest() -> Forest:
    forest = Forest(DOMAIN, (1, 1, 1), (10, 10, 1), [(2, 2, 1)], max_depth=3)
    forest.refine_uniformly(3)
    for g in forest.grids.values():
        h = g.spacings()
        coords = [
            g.bbox.lo[a] + (np.arange(-1, g.cells[a] + 1) + 0.5) * h[a]
            for a in range(3)
        ]
        gx, gy, _ = np.meshgrid(*coords, indexing="ij")
        g.fields["u"][...] = np.sin(np.pi * gx) * np.cos(np.pi * gy)
        g.fields["v"][...] = -np.cos(np.pi * gx) * np.sin(np.pi * gy)
        g.fields["w"][...] = 0.0
        g.fields["p"][...] = np.cos(np.pi * gx) * np.cos(np.pi * gy)
    topo = TopologyIndex.from_forest(forest)
    run_exchange_cycle(forest, topo)
    return forest


FIXTURES = [
    # name, window, budget, quantity
    ("full400_pressure", DOMAIN, 400, "pressure"),
    ("full400_velocity", DOMAIN, 400, "velocity"),
    ("quadrant400_pressure", Box((0, 0.5, 0), (0.5, 1, 0.1)), 400, "pressure"),
    ("mixed700_pressure", DOMAIN, 700, "pressure"),
    ("full6400_velocity", DOMAIN, 6400, "velocity"),  # compressed body
    ("empty_pressure", Box((5, 5, 0), (6, 6, 0.1)), 100, "pressure"),
]


def main(outdir: str) -> None:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    forest = build_forest()
    topo = TopologyIndex.from_forest(forest)
    goldens = {"handshake": proto.handshake_bytes().hex(), "streams": []}
    (out / "handshake.bin").write_bytes(proto.handshake_bytes())
    for name, window, budget, quantity in FIXTURES:
        batch = extract(forest, select(topo, WindowQuery(window, budget, quantity)),
                        time=0.125)
        payload = proto.encode_cellstream(batch)
        (out / f"{name}.bin").write_bytes(payload)
        flags = payload[1]
        body = payload[22:]
        if flags & 1:
            body = zlib.decompress(body)
        sample = []
        for row in (0, batch.count // 2, batch.count - 1) if batch.count else ():
            sample.append({
                "row": int(row),
                "center": batch.centers[row].tolist(),
                "width": batch.widths[row].tolist(),
                "level": int(batch.levels[row]),
                "values": batch.values[row].tolist(),
            })
        goldens["streams"].append({
            "file": f"{name}.bin",
            "quantity": quantity,
            "budget": budget,
            "count": batch.count,
            "version": batch.version,
            "time": batch.time,
            "compressed": bool(flags & 1),
            "levels": sorted(int(l) for l in set(batch.levels.tolist())),
            "body_sha256": hashlib.sha256(body).hexdigest(),
            "samples": sample,
        })
    (out / "goldens.json").write_text(json.dumps(goldens, indent=1, sort_keys=True))
    print(f"wrote {len(FIXTURES)} fixtures to {out}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "frontend/fixtures")
