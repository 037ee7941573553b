#!/usr/bin/env python
"""Convenience script to run the planning scenarios."""

import sys
from src.main import main

if __name__ == "__main__":
    sys.exit(main())
