"""Multi-label indexing of short biomedical texts.

Three label predictors (one-vs-rest linear SVM, BM25 nearest neighbours and a
sequential label decoder) combined by a pairwise ranking SVM.
"""

__version__ = "0.1.0"
