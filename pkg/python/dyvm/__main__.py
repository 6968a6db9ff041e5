import sys  # noqa: D100

from .cli import main

sys.exit(main())
