import sys

from samcheck.cli import main

sys.exit(main())
