from hetero_melnikov.__version__ import __version__
