import sys

from dvl.cli import main

sys.exit(main())
