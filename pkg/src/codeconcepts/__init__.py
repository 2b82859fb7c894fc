"""Concept-supervised multi-task learning for C code reasoning.

Rule-based statement concept extraction, abstract-value labelling of
execution traces, dataset construction with label-preserving perturbations,
a small numpy encoder trained on concept + task losses, and linear probes.
"""

__version__ = "0.1.0"
