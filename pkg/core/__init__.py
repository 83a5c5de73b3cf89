"""
sosreach core package:
- sparse polynomials and boxes
- SOS program compilation and the conic solver
- the backward reach-avoid dynamic program
- solution directory persistence
"""

__version__ = "0.1.0"
