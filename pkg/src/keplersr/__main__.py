import sys

from keplersr.cli import main

sys.exit(main())
