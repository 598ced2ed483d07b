import sys

from drivefp.cli import main

sys.exit(main())
