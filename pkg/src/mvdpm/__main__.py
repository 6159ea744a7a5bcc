import sys

from mvdpm.cli import main

sys.exit(main())
