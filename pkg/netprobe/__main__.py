import sys

from netprobe.cli import main


sys.exit(main())
