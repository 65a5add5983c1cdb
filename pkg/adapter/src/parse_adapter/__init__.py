"""Parser-output adapter for the docresearch ingestion format."""

__version__ = "0.1.0"

from .convert import AdapterError, AdapterJob, ConvertResult, convert

__all__ = ["AdapterError", "AdapterJob", "ConvertResult", "convert"]
