import sys

from sgot.cli import main

sys.exit(main())
