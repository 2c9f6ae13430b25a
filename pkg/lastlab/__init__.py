"""
lastlab - latent spatio-temporal reasoning planner on a 2D driving micro-world.
"""

__version__ = "0.1.0"
