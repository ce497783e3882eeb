"""HDF5 to MMT1 conversion."""

from .convert import DEFAULT_MAPPING, EXPECTED_DIMS, ConversionError, convert

__all__ = ["DEFAULT_MAPPING", "EXPECTED_DIMS", "ConversionError", "convert"]
