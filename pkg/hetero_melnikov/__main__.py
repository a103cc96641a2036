"""Run the command line interface with ``python -m hetero_melnikov``."""
import sys

from hetero_melnikov.cli import main

sys.exit(main())
