# python -m deobstruct
# Copyright 2026 Leon Priest (7h3v01d). PETL v1.0.
from .app import main

if __name__ == "__main__":
    raise SystemExit(main())
