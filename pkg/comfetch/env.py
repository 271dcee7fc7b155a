# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0
# For details: see NOTICE.txt at the top of the source tree.

"""Determine facts about the environment."""

import os
import sys

# Operating systems.
WINDOWS = sys.platform == "win32"

# Are we running our test suite?
# Even when running tests, you can use COMFETCH_TESTING=0 to disable the
# test-only consistency checks.
TESTING = os.getenv('COMFETCH_TESTING') == 'True'
