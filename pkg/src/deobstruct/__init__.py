# deobstruct: instruction-driven obstruction removal.
# Copyright 2026 Leon Priest (7h3v01d). PETL v1.0.
__version__ = "0.3.0"
