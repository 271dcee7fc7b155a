# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0
# For details: see NOTICE.txt at the top of the source tree.

"""Comfetch's main entry point."""

import sys
from comfetch.cmdline import main
sys.exit(main())
