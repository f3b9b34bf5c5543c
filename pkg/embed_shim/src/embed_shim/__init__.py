"""HTTP microservice serving multilingual sentence embeddings."""

__version__ = "0.1.0"
