"""Zone-segmentation word recognition for headline scripts.

Words are split into upper, middle and lower zones; the middle zone is
decoded with lexicon-constrained GMM-HMMs over sliding-window features,
zone modifiers are classified by RBF SVMs, and the pieces are fused by
forced alignment, flexible association and edit-distance matching.
"""

__version__ = "0.1.0"
