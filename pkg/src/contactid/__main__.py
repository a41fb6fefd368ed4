import sys

from contactid.cli import main

sys.exit(main())
