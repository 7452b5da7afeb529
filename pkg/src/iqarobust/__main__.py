import sys

from iqarobust.cli import main

sys.exit(main())
