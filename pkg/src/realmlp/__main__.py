import sys

from realmlp.cli import main

sys.exit(main())
