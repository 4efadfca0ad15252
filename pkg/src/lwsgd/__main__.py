import sys

from lwsgd.cli import main

sys.exit(main())
