"""monoidagg: learnable commutative-monoid aggregators with exact oracles."""

__version__ = "0.1.0"
