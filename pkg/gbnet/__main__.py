import sys

from gbnet.cli import main

sys.exit(main())
