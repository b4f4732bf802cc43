"""matpub: publication heuristics for structured-data annotation of
multi-dimensional dynamic products, with a simulated booking resolver, a
crawler client, and a benchmark harness."""

__version__ = "0.1.0"
