import sys

from openpub.cli import main

sys.exit(main())
