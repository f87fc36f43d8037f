import sys

from slotsync.cli import main

sys.exit(main())
