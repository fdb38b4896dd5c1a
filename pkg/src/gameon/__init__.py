"""Graph-attention multimodal fusion for real/fake news classification.

Submodules are imported explicitly (``from gameon import model, train``)
so the CLI can cap BLAS threads before numpy loads.
"""

__version__ = "0.1.0"
