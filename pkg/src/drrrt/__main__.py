import sys

from drrrt.cli import main

sys.exit(main())
