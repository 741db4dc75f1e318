"""quartetlearn: learning phylogenetic trees from noisy quartet samples.

Library layout
--------------
trees          unrooted/rooted binary trees, LCA, quartet topology, skeletons
newick         Newick I/O and the label table
sampling       quartet noise models (per-draw and Poisson) and quartet files
leafgraph      quartet-derived random leaf graphs and edge-probability bounds
sdp            the cluster-recovery semidefinite program, solvers, rounding
clustering     the iterative per-side cluster extraction loop
reconstruct    skeleton enumeration and cluster attachment
verification   empirical risk, the acceptance rule, the full pipeline driver
metrics        quartet distances, interval embedding, sign oracle, shattering
oracle         interactive quartet oracle and adaptive exact reconstruction
cli            command-line front end (gen / sample / reconstruct / dist / ...)
"""
from .trees import (
    PhyloTree,
    RootedTree,
    Split,
    SkeletonTree,
    TreeError,
    balanced_root,
    balanced_tree,
    caterpillar_tree,
    join_trees,
    phi_map,
    phi_partition,
    random_tree,
    skeleton,
)
from .newick import (
    MultifurcationError,
    NewickError,
    parse_newick,
    read_label_table,
    serialize_newick,
    write_label_table,
)

__version__ = "0.1.0"

__all__ = [
    "PhyloTree",
    "RootedTree",
    "Split",
    "SkeletonTree",
    "TreeError",
    "balanced_root",
    "balanced_tree",
    "caterpillar_tree",
    "join_trees",
    "phi_map",
    "phi_partition",
    "random_tree",
    "skeleton",
    "MultifurcationError",
    "NewickError",
    "parse_newick",
    "serialize_newick",
    "read_label_table",
    "write_label_table",
    "__version__",
]
