"""Classically simulated complex-valued optical/quantum-optical neural networks.

Subpackages cover complex linear algebra through the real block embedding,
MNIST fold-encoded data handling, layer semantics with hand-written
backpropagation, a small training engine, classification metrics, and
quantum-vs-classical resource arithmetic.
"""

__version__ = "0.1.0"
