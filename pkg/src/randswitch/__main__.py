import sys

from randswitch.cli import main

sys.exit(main())
