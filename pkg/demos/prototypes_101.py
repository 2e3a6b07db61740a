"""
Prototype trajectories from a synthetic corpus
==============================================

Generate a small highway corpus, label its lane changes, and cluster the
lateral tracks into prototypes.  Run from the repository root:

    python demos/prototypes_101.py
"""

from pathlib import Path

import numpy as np

from laneproto import svgplot
from laneproto.cluster import build_library
from laneproto.labeling import label_dataset
from laneproto.synthgen import generate_corpus

# a corpus with 40 lane changes per direction and 40 lane-keeping vehicles
corpus = generate_corpus({"lcl": 40, "lcr": 40, "lk": 40}, seed=3)
labeled = label_dataset(corpus.dataset)
print({k.value: n for k, n in labeled.maneuver_counts().items()})

# agglomerative clustering, one library per lane-change direction
library = build_library(labeled)
for p in library.lcl + library.lcr:
    print(f"{p.kind.value}: {p.n_members:3d} members, {p.duration:.2f} s, "
          f"peak sigma {p.sigma_d.max():.3f} m")

# the mean courses of the left lane-change prototypes, side by side
n = max(p.mu_d.size for p in library.lcl)
t = np.round(np.arange(n) * library.dt, 2)
series = {f"LCL {i} (n={p.n_members})": [float(p.mu_d[k]) if k < p.mu_d.size else None for k in range(n)]
          for i, p in enumerate(library.lcl)}
step = max(1, n // 25)
out = Path("demo_output")
out.mkdir(exist_ok=True)
svg = svgplot.line_chart("LCL prototype means", list(t[::step]),
                         {k: v[::step] for k, v in series.items()}, "time [s]", "d [m]")
(out / "lcl_prototypes.svg").write_text(svg)
print("figure written to", out / "lcl_prototypes.svg")
