# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0
# For details: see NOTICE.txt at the top of the source tree.

"""Json summary reporting for comfetch"""

import datetime
import json
import sys

from comfetch.exceptions import ComfetchException
from comfetch.misc import Hasher, ensure_dir_for_file, file_be_gone
from comfetch.version import __version__


# Bump this when the summary's keys change meaning.
SUMMARY_SCHEMA = 1


def render_report(output_path, reporter, result):
    """Run a report generator, managing the output file.

    The output directory is made if needed, and a half-written file is
    removed if the reporter fails.

    """
    file_to_close = None
    delete_file = False

    if output_path == "-":
        outfile = sys.stdout
    else:
        ensure_dir_for_file(output_path)
        outfile = open(output_path, "w", encoding="utf-8")
        file_to_close = outfile

    try:
        return reporter.report(result, outfile=outfile)
    except ComfetchException:
        delete_file = True
        raise
    finally:
        if file_to_close:
            file_to_close.close()
            if delete_file:
                file_be_gone(output_path)


def config_fingerprint(config):
    """A short hash of every configurable setting."""
    hasher = Hasher()
    hasher.update(config.items())
    return hasher.hexdigest()


class JsonReporter:
    """A reporter for writing the JSON summary of a run."""

    def __init__(self, experiment):
        self.experiment = experiment
        self.config = experiment.config
        self.report_data = {}

    def report(self, result, outfile=None):
        """Write the summary of `result` to `outfile` as JSON.

        Returns the final training loss.

        """
        outfile = outfile or sys.stdout
        experiment = self.experiment
        self.report_data["meta"] = {
            "version": __version__,
            "schema": SUMMARY_SCHEMA,
            "timestamp": datetime.datetime.now().isoformat(),
            "config_hash": config_fingerprint(self.config),
            "mode": self.config.mode,
            "seed": self.config.seed,
            "network": repr(experiment.spec),
        }
        self.report_data["final_acc"] = result.final_acc
        self.report_data["final_loss"] = result.final_loss
        self.report_data["comp_ratio_down"] = result.comp_ratio_down
        self.report_data["comp_ratio_up"] = result.comp_ratio_up
        self.report_data["ledger"] = result.ledger.as_dict()
        self.report_data["bound_report"] = (
            result.bound_report.as_dict() if result.bound_report is not None else None
        )
        self.report_data["convergence_slope"] = result.convergence.slope
        self.report_data["convergence"] = result.convergence.as_dict()
        self.report_data["theoretical_lr"] = experiment.theoretical_step_size()
        self.report_data["monitors"] = self.report_monitors(result)

        json.dump(self.report_data, outfile, indent=4)
        return result.final_loss

    def report_monitors(self, result):
        """The largest values the monitored quantities reached."""
        mon = self.experiment.server.monitors
        history = result.history
        return {
            "max_grad_norm_sq": mon.max_grad_norm_sq,
            "max_weight_norm": mon.max_weight_norm,
            "max_momentum_sq": mon.max_momentum_sq,
            "max_error_sq": mon.max_error_sq,
            "max_hh_ratio": mon.max_hh_ratio,
            "max_virtual_drift": self.experiment.server.virtual.max_drift,
            "max_selection_disagreement": max(r.selection_disagreement for r in history),
        }
