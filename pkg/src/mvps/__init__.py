"""Surface reconstruction from multi-view photometric stereo.

A signed-distance network is trained by volume rendering while per-pixel
depth and normal priors, gated by their uncertainty, decide where geometric
supervision replaces photometric supervision.  A simulator produces complete
synthetic datasets with ground truth.
"""

__version__ = "0.1.0"
