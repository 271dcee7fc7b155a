# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0
# For details: see NOTICE.txt at the top of the source tree.

"""Core control stuff for comfetch: running an experiment end to end."""

import math
import os
import os.path
import platform
import sys
import time

import numpy as np

from comfetch import env
from comfetch.analysis import (
    convergence_report, prediction_error_bound, theoretical_step_size,
)
from comfetch.config import read_experiment_config
from comfetch.data import load_dataset, partition, train_test_split
from comfetch.debug import DebugControl, debug_control, write_formatted_info
from comfetch.exceptions import ConfigError, NumericFailure
from comfetch.fed import evaluate, make_server, run_round
from comfetch.jsonreport import JsonReporter, render_report
from comfetch.ledger import DOWN, UP
from comfetch.metrics import MetricRow, MetricsWriter
from comfetch.nn import CONV_RESNET, FC, Loss, NetworkSpec, init_network, sketch_network


METRICS_FILE = "metrics.csv"
SUMMARY_FILE = "summary.json"


class ExperimentResult:
    """What a finished run leaves behind."""

    def __init__(self, experiment, history, rows, final_acc, final_loss, bound_report):
        self.experiment = experiment
        self.history = history
        self.rows = rows
        self.final_acc = final_acc
        self.final_loss = final_loss
        self.bound_report = bound_report
        self.convergence = convergence_report(history)

    def __repr__(self):
        return f"<ExperimentResult rounds={len(self.history)} final_loss={self.final_loss!r}>"

    @property
    def ledger(self):
        return self.experiment.server.ledger

    @property
    def comp_ratio_down(self):
        return self.ledger.compression_ratio(DOWN)

    @property
    def comp_ratio_up(self):
        return self.ledger.compression_ratio(UP)


class Experiment:
    """One simulated federated training run.

    To use::

        from comfetch.control import Experiment

        exp = Experiment(config_file="comfetch.ini", seed=3)
        result = exp.run()

    """

    def __init__(self, config=None, config_file=True, **kwargs):
        """
        `config` is a ready `ExperimentConfig`.  Without one, the
        configuration is read as `read_experiment_config` does, from
        `config_file` and then the environment, with `kwargs` overriding
        individual settings.

        """
        if config is None:
            config = read_experiment_config(config_file=config_file, validate=False, **kwargs)
        else:
            config.post_process()
        self.config = config

        # This is injectable by tests.
        self._debug_file = None

        self._inited = False
        self._debug = None
        self.data = self.train = self.test = None
        self.clients = None
        self.spec = None
        self.loss = None
        self.server = None

    def __repr__(self):
        return f"<Experiment mode={self.config.mode} source={self.config.data_source!r}>"

    @property
    def metrics_path(self):
        return os.path.join(self.config.output, METRICS_FILE)

    @property
    def summary_path(self):
        return os.path.join(self.config.output, SUMMARY_FILE)

    def _init(self):
        """Load the data and build the network and server, once."""
        if self._inited:
            return
        self._inited = True

        config = self.config
        config.validate()
        if self._debug_file is not None:
            self._debug = DebugControl(config.debug, self._debug_file)
        else:
            self._debug = debug_control(config.debug)
        if self._debug.should("config"):
            config_info = sorted(config.__dict__.items())
            config_info = [(k, v) for k, v in config_info if not k.startswith('_')]
            write_formatted_info(self._debug, "config", config_info)

        self.data = load_dataset(
            config.data_source, config.data_labels, config.data_limit,
            classes=(config.loss == "cross-entropy"),
        )
        self.train, self.test = train_test_split(self.data, config.test_fraction, config.seed)
        self.clients = partition(self.train, config.clients, config.partition, config.seed)
        self.spec = self._network_spec()
        self.loss = Loss(config.loss)
        state = init_network(self.spec, config.init_seed)
        self.server = make_server(
            state, self.loss,
            lr=config.lr,
            momentum=config.momentum,
            topk=config.topk,
            mode=config.mode,
            ratio=config.sketch_ratio,
            sketch_count=config.sketch_count,
            identity_hash=config.identity_hash,
            seed=config.seed,
            output_lr=config.output_lr,
            train_output=config.train_output,
            weighted=config.weighted,
            workers=config.workers,
            debug=self._debug,
        )

    def load(self):
        """Load the data and build the network and server without running."""
        self._init()

    def _outputs(self):
        outputs = self.config.outputs
        if self.config.loss == "cross-entropy":
            if not self.data.is_classification:
                raise ConfigError(
                    "Invalid [network] loss='cross-entropy': the labels aren't classes"
                )
            outputs = max(outputs, self.data.classes)
        return outputs

    def _network_spec(self):
        """The network shape from the configuration and the data."""
        config = self.config
        features = self.data.features.shape[1]
        if config.network_kind == FC:
            return NetworkSpec.fc(features, config.hidden, outputs=self._outputs())
        assert config.network_kind == CONV_RESNET
        height, width = config.image_height, config.image_width
        if not height and not width:
            side = math.isqrt(features // config.input_channels)
            height = width = side
        if config.input_channels * height * width != features:
            raise ConfigError(
                f"Invalid [network] image_height={height}, image_width={width}: "
                f"{config.input_channels} channels of {height}x{width} isn't "
                f"{features} features"
            )
        return NetworkSpec.conv_resnet(
            config.input_channels, height, width, config.channels, config.depth,
            patch=config.patch, c_sigma=config.c_sigma, c_res=config.c_res,
            outputs=self._outputs(),
        )

    def _evaluation_data(self):
        return self.test if self.test is not None else self.train

    def _bound_report(self):
        """The prediction-error bound for the final weights, on one example."""
        if self.spec.kind != FC:
            return None
        server = self.server
        sketches = server.operators(server.round_index)
        sknet = sketch_network(server.state, sketches, server.round_index, server.multi_sketch)
        x = self._evaluation_data().features[0]
        return prediction_error_bound(server.state, sknet, x)

    def theoretical_step_size(self):
        """The step size the convergence rate assumes, for the widest layer."""
        shapes = self.spec.layer_shapes()
        widest = max(range(len(shapes)), key=lambda i: shapes[i][0])
        d = shapes[widest][0]
        c = self.server.sketch_lengths()[widest]
        return theoretical_step_size(
            c, d, self.config.momentum, self.spec.depth, self.config.rounds,
        )

    def run(self, write_summary=True):
        """Run every round, writing the metrics CSV as we go.

        Returns an `ExperimentResult`.  If a round fails with non-finite
        values, the rows for the rounds before it are already on disk when
        the `NumericFailure` propagates.

        """
        self._init()
        config = self.config
        server = self.server
        history = []
        last_acc = None
        down = up = 0
        min_grad = math.inf
        eval_data = self._evaluation_data()

        with MetricsWriter(self.metrics_path) as writer:
            for t in range(1, config.rounds + 1):
                start = time.perf_counter()
                report = run_round(server, self.clients, config.clients_per_round)
                if not math.isfinite(report.loss):
                    raise NumericFailure(f"Training loss is {report.loss} in round {t}")
                history.append(report)
                acc = None
                if t % config.eval_every == 0 or t == config.rounds:
                    _, acc = evaluate(server.state, eval_data, self.loss)
                    last_acc = acc
                down += report.down_values
                up += report.up_values
                min_grad = min(min_grad, report.true_grad_norm_sq)
                writer.write(MetricRow(
                    round=t,
                    loss=float(report.loss),
                    acc=acc,
                    min_grad_norm=float(min_grad),
                    hh_ratio=float(report.hh_ratio),
                    down_vals=int(down),
                    up_vals=int(up),
                    wall_ms=(time.perf_counter() - start) * 1000.0,
                ))
            rows = list(writer.rows)

        if env.TESTING:
            # The cumulative columns must agree with the ledger.
            assert down == server.ledger.total(DOWN).values
            assert up == server.ledger.total(UP).values

        final_loss, _ = evaluate(server.state, self.train, self.loss)
        result = ExperimentResult(
            self, history, rows, last_acc, float(final_loss), self._bound_report(),
        )
        if write_summary:
            render_report(self.summary_path, JsonReporter(self), result)
        return result

    def sys_info(self):
        """Return a list of (key, value) pairs showing internal information."""
        import comfetch as cfmod

        config = self.config
        info = [
            ('comfetch_version', cfmod.__version__),
            ('comfetch_module', cfmod.__file__),
            ('numpy_version', np.__version__),
            ('configs_attempted', config.attempted_config_files),
            ('configs_read', config.config_files_read),
            ('config_file', config.config_file),
            ('config_contents',
                repr(config._config_contents)
                if config._config_contents
                else '-none-'
            ),
            ('metrics_file', self.metrics_path),
            ('python', sys.version.replace('\n', '')),
            ('platform', platform.platform()),
            ('implementation', platform.python_implementation()),
            ('executable', sys.executable),
            ('pid', os.getpid()),
            ('cwd', os.getcwd()),
            ('environment', sorted(
                f"{k} = {v}"
                for k, v in os.environ.items()
                if k.startswith("COMFETCH_")
            )),
            ('command_line', " ".join(getattr(sys, 'argv', ['-none-']))),
        ]
        return info


def run_experiment(config):
    """Run the experiment `config` describes.  Returns an `ExperimentResult`.

    The metrics CSV and the JSON summary are written to the configured
    output directory.

    """
    return Experiment(config).run()
