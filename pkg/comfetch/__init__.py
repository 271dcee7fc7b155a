# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0
# For details: see NOTICE.txt at the top of the source tree.

"""Federated training with Count-Sketch compressed weights, simulated.

Clients hold only sketched weights HW, compute gradients by them, and a
server aggregates the uploads with error feedback, momentum, and Top-k.

"""

from comfetch.version import __version__, __url__, version_info

from comfetch.config import ExperimentConfig, load_config
from comfetch.control import Experiment, run_experiment
from comfetch.exceptions import ComfetchException, ComfetchWarning
