"""Topic modeling toolkit for multilingual short text.

Pipeline stages: corpus ingestion and cleaning, document embedding,
dimensionality reduction, density clustering, class-based TF-IDF topic
representation, outlier reassignment, language-model labeling, and
macro-theme reporting.
"""

__version__ = "0.1.0"
