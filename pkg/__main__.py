# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0
# For details: see NOTICE.txt at the top of the source tree.

"""Be able to execute comfetch by pointing Python at a working tree."""

import runpy

PKG = 'comfetch'

runpy.run_module(PKG, run_name='__main__', alter_sys=True)
