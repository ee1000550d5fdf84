"""
Last-Layer Uncertainty - two-stage representation learning and posterior ensembling
"""

__version__ = "1.0.0"
