import sys

from lexsparse.cli import main

sys.exit(main())
