import sys

from ppacdc.cli import main

sys.exit(main())
