"""Harmonic-state topological features and a kernel LS-SVM classifier for point clouds.

Submodules are imported on demand; in particular the persistent-homology oracle
(:mod:`harmonicpd.oracle`) is never pulled in by the prediction path.
"""

__version__ = "0.1.0"
