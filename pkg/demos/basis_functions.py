"""Plot the multi-resolution basis columns level by level.

Each column of the factor B is a basis function over the grid; coarse
levels are smooth and global, fine levels are local corrections.  Saves
one panel per resolution to demos/output/basis.png.
"""

import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from mrfilter import (MaternKernel, KernelOracle, PartitionConfig,
                      build_partition, mrd)


def main():
    n = 80
    grid = ((np.arange(n) + 0.5) / n).reshape(-1, 1)
    tree = build_partition(grid, PartitionConfig(M=3, J=3, r=2))
    kernel = MaternKernel(nu=1.5, length_scale=0.15)
    factor = mrd(KernelOracle(kernel, grid), tree)

    dense_internal = factor.to_csr().toarray()
    dense = np.empty_like(dense_internal)
    dense[tree.perm] = dense_internal

    levels = sorted({reg.level for reg in tree.regions.values()})
    fig, axes = plt.subplots(len(levels), 1, figsize=(7, 8), sharex=True)
    for reg in tree.regions.values():
        ax = axes[reg.level]
        for col in range(reg.col_start, reg.col_stop):
            ax.plot(grid[:, 0], dense[:, col], lw=0.8)
    for level, ax in zip(levels, axes):
        ax.set_ylabel(f"level {level}")
    axes[-1].set_xlabel("location")
    fig.suptitle("multi-resolution basis functions")

    out = os.path.join(os.path.dirname(__file__), "output")
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "basis.png")
    fig.savefig(path, dpi=120)
    print(f"wrote {path}")
    print(f"{dense.shape[1]} basis columns across {len(levels)} levels")


if __name__ == "__main__":
    main()
