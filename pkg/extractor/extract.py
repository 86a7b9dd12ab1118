#!/usr/bin/env python3
"""Entry point for running the extractor without installing the console script."""

import sys

from uvse_extract.extract import main

if __name__ == "__main__":
    sys.exit(main())
