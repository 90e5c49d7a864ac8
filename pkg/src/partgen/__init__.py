"""Part-aware generative modeling and interactive editing of implicit shapes."""

__version__ = "0.1.0"
