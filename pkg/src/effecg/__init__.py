"""ECG classification toolkit.

Signal preprocessing and fiducial detection, a 1D MBConv network with
optional demographic cross-attention fusion, training machinery, and the
full evaluation metric suite, all on a self-contained float64 autodiff
engine.
"""

__version__ = "0.1.0"
