"""Regenerate the bundled synthetic 66 x 5 reference matrix.

Each cell type owns a block of 13 marker genes with high mean expression
and low background elsewhere; the last gene is housekeeping.  Columns are
rescaled so a single cell yields roughly 150 counts over the 66 genes.
"""

import numpy as np

G, K, BLOCK = 66, 5, 13


def make_reference(seed=20240607):
    rng = np.random.default_rng(seed)
    B = rng.gamma(0.6, 0.35, size=(G, K)) + 0.02
    for k in range(K):
        rows = slice(k * BLOCK, (k + 1) * BLOCK)
        B[rows, k] = rng.gamma(2.0, 4.0, size=BLOCK) + 1.0
    B[-1, :] = rng.uniform(2.5, 3.5, size=K)
    target = rng.uniform(130, 170, size=K)
    B *= target / B.sum(axis=0)
    return np.round(B, 4)


if __name__ == "__main__":
    import sys

    B = make_reference()
    out = sys.argv[1] if len(sys.argv) > 1 else "src/duet/data/reference_66x5.csv"
    types = ["type%d" % (k + 1) for k in range(K)]
    with open(out, "w") as fh:
        fh.write("gene," + ",".join(types) + "\n")
        for g in range(G):
            fh.write("gene%02d," % (g + 1) + ",".join("%.4f" % v for v in B[g]) + "\n")
