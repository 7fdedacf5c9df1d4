import sys

from engn.cli import main

sys.exit(main())
