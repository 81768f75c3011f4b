"""Structure-preserving surrogate learning and ensemble data assimilation for 1D conservation laws."""

__version__ = "0.1.0"
