import sys

from bcdiff.cli import main

sys.exit(main())
