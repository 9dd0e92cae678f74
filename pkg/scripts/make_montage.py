"""Regenerate resources/montage.json from the 9x9 scalp grid layout.

Edges join electrodes within Euclidean radius 0.22 in [0, 1]^2 head
coordinates (orthogonal and diagonal grid neighbours).
"""
import itertools
import json
import sys
from pathlib import Path

GRID = [
    [None, None, None, "FP1", "FPZ", "FP2", None, None, None],
    [None, None, None, "AF3", None, "AF4", None, None, None],
    ["F7", "F5", "F3", "F1", "FZ", "F2", "F4", "F6", "F8"],
    ["FT7", "FC5", "FC3", "FC1", "FCZ", "FC2", "FC4", "FC6", "FT8"],
    ["T7", "C5", "C3", "C1", "CZ", "C2", "C4", "C6", "T8"],
    ["TP7", "CP5", "CP3", "CP1", "CPZ", "CP2", "CP4", "CP6", "TP8"],
    ["P7", "P5", "P3", "P1", "PZ", "P2", "P4", "P6", "P8"],
    [None, "PO7", "PO5", "PO3", "POZ", "PO4", "PO6", "PO8", None],
    [None, None, "CB1", "O1", "OZ", "O2", "CB2", None, None],
]
# channel order of the 62-channel ESI NeuroScan recordings
ORDER = [
    "FP1", "FPZ", "FP2", "AF3", "AF4", "F7", "F5", "F3", "F1", "FZ", "F2", "F4", "F6", "F8",
    "FT7", "FC5", "FC3", "FC1", "FCZ", "FC2", "FC4", "FC6", "FT8", "T7", "C5", "C3", "C1",
    "CZ", "C2", "C4", "C6", "T8", "TP7", "CP5", "CP3", "CP1", "CPZ", "CP2", "CP4", "CP6",
    "TP8", "P7", "P5", "P3", "P1", "PZ", "P2", "P4", "P6", "P8", "PO7", "PO5", "PO3", "POZ",
    "PO4", "PO6", "PO8", "CB1", "O1", "OZ", "O2", "CB2",
]
RADIUS = 0.22


def main(out):
    pos = {}
    for r, row in enumerate(GRID):
        for c, name in enumerate(row):
            if name:
                pos[name] = (c / 8, r / 8)
    assert sorted(pos) == sorted(ORDER) and len(ORDER) == 62
    electrodes = [{"name": n, "x": pos[n][0], "y": pos[n][1]} for n in ORDER]
    edges = []
    for i, j in itertools.combinations(range(62), 2):
        (xi, yi), (xj, yj) = pos[ORDER[i]], pos[ORDER[j]]
        if (xi - xj) ** 2 + (yi - yj) ** 2 <= RADIUS ** 2:
            edges.append([i, j])
    doc = {"name": "esi-62-grid", "radius": RADIUS, "electrodes": electrodes, "edges": edges}
    Path(out).write_text(json.dumps(doc, indent=1) + "\n")
    print(f"{len(electrodes)} electrodes, {len(edges)} edges -> {out}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "src/gmss/resources/montage.json")
