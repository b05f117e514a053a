"""Multiple-kernel dictionary learning for multivariate time series.

Learns non-negative, dimension-weighted dictionary atoms in kernel feature
space from labeled (seen) classes, then sparsely encodes sequences from
novel (unseen) classes, scores how well each of their dimensions is
reconstructed, and clusters the encodings incrementally into a dendrogram.
"""

__version__ = "0.1.0"

FORMAT_VERSION = 1
