# Infrastructure Module
from .workers import map_ordered

__all__ = ["map_ordered"]
