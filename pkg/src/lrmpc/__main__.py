import sys

from lrmpc.cli import main

sys.exit(main())
