"""Graph-to-graph learning: adjacency-vector sequences, recurrent encoder/decoder, dual attention."""

__version__ = '0.1.0'
