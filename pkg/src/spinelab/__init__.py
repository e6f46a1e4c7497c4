"""Unsupervised dendritic-spine shape analysis.

Feature families (HOG, disjunctive normal shape model, morphology, neck
intensity profile), feature selection, x-means clustering and comparison of
clusters with expert labels.
"""

__version__ = "0.1.0"
