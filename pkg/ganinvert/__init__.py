"""
ganinvert
Data-free GAN inversion, projection defenses and their evaluation.
"""

__version__ = "0.1.0"
