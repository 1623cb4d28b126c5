import sys

from dfcembed.cli import main

sys.exit(main())
