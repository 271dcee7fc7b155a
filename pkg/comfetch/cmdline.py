# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0
# For details: see NOTICE.txt at the top of the source tree.

"""Command-line support for comfetch."""

import optparse     # pylint: disable=deprecated-module
import os.path
import sys
import textwrap
import time

import numpy as np

import comfetch
from comfetch import env
from comfetch.analysis import hcs_recovery_check
from comfetch.config import read_experiment_config
from comfetch.control import Experiment
from comfetch.debug import info_formatter, info_header
from comfetch.exceptions import (
    BaseComfetchException, ConfigError, DataError, NumericFailure,
)
from comfetch.numerics import rng_for
from comfetch.plotting import emit_plots
from comfetch.sketch import new_operator, sketch_length, sketch_matrix, unsketch_matrix
from comfetch.verify import CHECKS, run_checks, write_results


class Opts:
    """A namespace class for individual options we'll build parsers from."""

    check = optparse.make_option(
        '', '--check', action='store', metavar="NAME1,NAME2,...",
        help="Only run these checks.",
    )
    clients = optparse.make_option(
        '', '--clients', action='store', metavar="C", type="int",
        help="Partition among C clients instead of the configured number.",
    )
    config = optparse.make_option(
        '', '--config', action='store', metavar="FILE",
        help="Read experiment settings from FILE. [env: COMFETCH_CONFIG]",
    )
    count = optparse.make_option(
        '-k', '--count', action='store', metavar="K1,K2,...",
        help="Sketch counts to try. Defaults to 1,3,5,9.",
    )
    debug = optparse.make_option(
        '', '--debug', action='store', metavar="OPTS",
        help="Debug options, separated by commas. [env: COMFETCH_DEBUG]",
    )
    dim = optparse.make_option(
        '', '--dim', action='store', metavar="D", type="int",
        help="Rows of the sketched matrix. Defaults to 256.",
    )
    eps = optparse.make_option(
        '', '--eps', action='store', metavar="EPS", type="float",
        help="Recovery accuracy to count failures against. Defaults to 0.1.",
    )
    full = optparse.make_option(
        '', '--full', action='store_true',
        help="Run the checks at full size. Slower.",
    )
    help = optparse.make_option(
        '-h', '--help', action='store_true',
        help="Get help on this command.",
    )
    MODE_CHOICES = ["comfetch", "baseline"]
    mode = optparse.make_option(
        '', '--mode', action='store', metavar="MODE",
        choices=MODE_CHOICES,
        help=(
            "Train with sketched weights, or uncompressed for comparison. "
            "Valid values are: {}."
        ).format(", ".join(MODE_CHOICES)),
    )
    out = optparse.make_option(
        '-o', '--out', action='store', metavar="DIR",
        help="Write the output files to DIR.",
    )
    partition = optparse.make_option(
        '', '--partition', action='store', metavar="STRATEGY",
        help="Partition with STRATEGY instead of the configured one.",
    )
    ratio = optparse.make_option(
        '', '--ratio', action='store', metavar="C/D", type="float",
        help="Sketch length as a fraction of D. Defaults to 0.5.",
    )
    seed = optparse.make_option(
        '', '--seed', action='store', metavar="N", type="int",
        help="The root seed for everything random. [env: COMFETCH_SEED]",
    )
    trials = optparse.make_option(
        '', '--trials', action='store', metavar="N", type="int",
        help="Number of random matrices to sketch. Defaults to 100.",
    )
    version = optparse.make_option(
        '', '--version', action='store_true',
        help="Display version information and exit.",
    )


class ComfetchOptionParser(optparse.OptionParser):
    """Base OptionParser for comfetch.

    Problems don't exit the program.
    Defaults are initialized for all options.

    """

    def __init__(self, *args, **kwargs):
        super().__init__(
            add_help_option=False, *args, **kwargs
            )
        self.set_defaults(
            action=None,
            check=None,
            clients=None,
            config=True,
            count=None,
            debug=None,
            dim=256,
            eps=0.1,
            full=None,
            help=None,
            mode=None,
            out=None,
            partition=None,
            ratio=0.5,
            seed=None,
            trials=100,
            version=None,
            )

        self.disable_interspersed_args()

    class OptionParserError(Exception):
        """Used to stop the optparse error handler ending the process."""
        pass

    def parse_args_ok(self, args=None, options=None):
        """Call optparse.parse_args, but return a triple:

        (ok, options, args)

        """
        try:
            options, args = super().parse_args(args, options)
        except self.OptionParserError:
            return False, None, None
        return True, options, args

    def error(self, msg):
        """Override optparse.error so sys.exit doesn't get called."""
        show_help(msg)
        raise self.OptionParserError


class GlobalOptionParser(ComfetchOptionParser):
    """Command-line parser for comfetch global option arguments."""

    def __init__(self):
        super().__init__()

        self.add_options([
            Opts.help,
            Opts.version,
        ])


class CmdOptionParser(ComfetchOptionParser):
    """Parse one of the commands for comfetch."""

    def __init__(self, action, options, defaults=None, usage=None, description=None):
        """Create an OptionParser for a comfetch command.

        `action` is the slug to put into `options.action`.
        `options` is a list of Option's for the command.
        `defaults` is a dict of default value for options.
        `usage` is the usage string to display in help.
        `description` is the description of the command, for the help text.

        """
        if usage:
            usage = "%prog " + usage
        super().__init__(
            usage=usage,
            description=description,
        )
        self.set_defaults(action=action, **(defaults or {}))
        self.add_options(options)
        self.cmd = action

    def __eq__(self, other):
        # A convenience equality, so that I can put strings in unit test
        # results, and they will compare equal to objects.
        return (other == f"<CmdOptionParser:{self.cmd}>")

    __hash__ = None     # This object doesn't need to be hashed.

    def get_prog_name(self):
        """Override of an undocumented function in optparse.OptionParser."""
        program_name = super().get_prog_name()

        # Include the sub-command for this parser as part of the command.
        return f"{program_name} {self.cmd}"


GLOBAL_ARGS = [
    Opts.debug,
    Opts.help,
    Opts.config,
    ]

CMDS = {
    'bench-sketch': CmdOptionParser(
        "bench-sketch",
        [
            Opts.count,
            Opts.dim,
            Opts.eps,
            Opts.ratio,
            Opts.seed,
            Opts.trials,
            ] + GLOBAL_ARGS,
        usage="[options]",
        description=(
            "Measure how often sketch recovery misses by more than EPS, "
            "and how long sketching takes."
        ),
    ),

    'debug': CmdOptionParser(
        "debug", GLOBAL_ARGS,
        usage="<topic>",
        description=(
            "Display information about the internals of comfetch. "
            "Topics are: " +
                "'config' to show the effective configuration; " +
                "'sys' to show installation information."
        ),
    ),

    'help': CmdOptionParser(
        "help", GLOBAL_ARGS,
        usage="[command]",
        description="Describe how to use comfetch, in general or a command.",
    ),

    'partition-preview': CmdOptionParser(
        "partition-preview",
        [
            Opts.clients,
            Opts.partition,
            Opts.seed,
            ] + GLOBAL_ARGS,
        usage="[options]",
        description="Show how the configured data would be divided among clients.",
    ),

    'plot': CmdOptionParser(
        "plot",
        [
            Opts.out,
            ] + GLOBAL_ARGS,
        usage="[options] <metrics.csv> [more.csv ...]",
        description=(
            "Draw SVG charts of metrics files.  With more than one file, "
            "each chart overlays the runs."
        ),
    ),

    'run': CmdOptionParser(
        "run",
        [
            Opts.mode,
            Opts.out,
            Opts.seed,
            ] + GLOBAL_ARGS,
        usage="[options]",
        description="Run a simulated federated training experiment.",
    ),

    'verify': CmdOptionParser(
        "verify",
        [
            Opts.check,
            Opts.full,
            Opts.seed,
            ] + GLOBAL_ARGS,
        usage="[options]",
        description="Run the invariant and oracle checks.",
    ),
}


def show_help(error=None, topic=None, parser=None):
    """Display an error message, or the named topic."""
    assert error or topic or parser

    program_path = sys.argv[0]
    if program_path.endswith(os.path.sep + '__main__.py'):
        # The path is the main module of a package; get that path instead.
        program_path = os.path.dirname(program_path)
    program_name = os.path.basename(program_path)

    help_params = dict(comfetch.__dict__)
    help_params['program_name'] = program_name

    if error:
        print(error, file=sys.stderr)
        print(f"Use '{program_name} help' for help.", file=sys.stderr)
    elif parser:
        print(parser.format_help().strip())
        print()
    else:
        help_msg = textwrap.dedent(HELP_TOPICS.get(topic, '')).strip()
        if help_msg:
            print(help_msg.format(**help_params))
        else:
            print(f"Don't know topic {topic!r}")
    print("Full documentation is at {__url__}".format(**help_params))


OK, ERR, CONFIG_ERROR, NUMERIC_FAILURE, IO_ERROR = 0, 1, 2, 3, 4


class ComfetchScript:
    """The command-line interface to comfetch."""

    def __init__(self):
        self.global_option = False
        self.experiment = None

    def command_line(self, argv):
        """The bulk of the command line interface to comfetch.

        `argv` is the argument list to process.

        Returns 0 if all is well, 1 if something went wrong.

        """
        # Collect the command-line options.
        if not argv:
            show_help(topic='minimum_help')
            return OK

        # The command syntax we parse depends on the first argument.  Global
        # switch syntax always starts with an option.
        self.global_option = argv[0].startswith('-')
        if self.global_option:
            parser = GlobalOptionParser()
        else:
            parser = CMDS.get(argv[0])
            if not parser:
                show_help(f"Unknown command: {argv[0]!r}")
                return ERR
            argv = argv[1:]

        ok, options, args = parser.parse_args_ok(argv)
        if not ok:
            return ERR

        # Handle help and version.
        if self.do_help(options, args, parser):
            return OK

        debug = unshell_list(options.debug)

        if options.action == "debug":
            return self.do_debug(options, args, debug)

        elif options.action == "plot":
            return self.do_plot(options, args)

        elif options.action == "bench-sketch":
            return self.do_bench_sketch(options)

        elif options.action == "verify":
            return self.do_verify(options)

        self.experiment = Experiment(
            config_file=options.config,
            seed=options.seed,
            output=options.out,
            mode=options.mode,
            debug=debug,
            clients=options.clients,
            partition=options.partition,
            )

        if options.action == "run":
            return self.do_run()

        elif options.action == "partition-preview":
            return self.do_partition_preview()

        return OK

    def do_help(self, options, args, parser):
        """Deal with help requests.

        Return True if it handled the request, False if not.

        """
        # Handle help.
        if options.help:
            if self.global_option:
                show_help(topic='help')
            else:
                show_help(parser=parser)
            return True

        if options.action == "help":
            if args:
                for a in args:
                    parser = CMDS.get(a)
                    if parser:
                        show_help(parser=parser)
                    else:
                        show_help(topic=a)
            else:
                show_help(topic='help')
            return True

        # Handle version.
        if options.version:
            show_help(topic='version')
            return True

        return False

    def do_run(self):
        """Implementation of 'comfetch run'."""
        result = self.experiment.run()
        info = [
            ("rounds", len(result.history)),
            ("final_loss", f"{result.final_loss:.6g}"),
            ("final_acc", "-" if result.final_acc is None else f"{result.final_acc:.4f}"),
            ("comp_ratio_down", f"{result.comp_ratio_down:.4f}"),
            ("comp_ratio_up", f"{result.comp_ratio_up:.4f}"),
            ("convergence_slope", f"{result.convergence.slope:.4f}"),
            ("metrics", self.experiment.metrics_path),
            ("summary", self.experiment.summary_path),
        ]
        print(info_header("run"))
        for line in info_formatter(info):
            print(f" {line}")
        return OK

    def do_partition_preview(self):
        """Implementation of 'comfetch partition-preview'."""
        exp = self.experiment
        exp.load()
        config = exp.config
        print(info_header(f"{config.partition} partition of {exp.train.tag}"))
        info = []
        for i, client in enumerate(exp.clients):
            entry = f"{len(client)} examples"
            if client.is_classification:
                labels, counts = np.unique(client.labels, return_counts=True)
                entry += ": " + " ".join(f"{lab}x{n}" for lab, n in zip(labels, counts))
            info.append((f"client {i}", entry))
        for line in info_formatter(info):
            print(f" {line}")
        return OK

    def do_plot(self, options, args):
        """Implementation of 'comfetch plot'."""
        if not args:
            show_help("Need at least one metrics file to plot.")
            return ERR
        out_dir = options.out or os.path.dirname(os.path.abspath(args[0]))
        for path in emit_plots(args, out_dir):
            print(f"Wrote {path}")
        return OK

    def do_bench_sketch(self, options):
        """Implementation of 'comfetch bench-sketch'."""
        counts = [int(k) for k in unshell_list(options.count) or ["1", "3", "5", "9"]]
        seed = options.seed or 0
        d = options.dim
        c = sketch_length(d, options.ratio)
        w = rng_for(seed, 30).standard_normal((d, 16))
        op = new_operator(d, c, seed)
        start = time.perf_counter()
        for _ in range(10):
            unsketch_matrix(op, sketch_matrix(op, w))
        per_pass = (time.perf_counter() - start) * 100.0

        info = [
            ("dim", d),
            ("sketch_length", c),
            ("eps", options.eps),
            ("trials", options.trials),
            ("sketch+recover d x 16", f"{per_pass:.3f} ms"),
        ]
        for k in counts:
            rate = hcs_recovery_check(d, c, k, options.trials, options.eps, seed=seed)
            info.append((f"failure rate k={k}", f"{rate:.5f}"))
        print(info_header("bench-sketch"))
        for line in info_formatter(info):
            print(f" {line}")
        return OK

    def do_verify(self, options):
        """Implementation of 'comfetch verify'."""
        only = unshell_list(options.check)
        if only:
            known = {name for name, _ in CHECKS}
            for name in only:
                if name not in known:
                    show_help(f"Unknown check: {name!r}")
                    return ERR
        results = run_checks(seed=options.seed or 0, full=bool(options.full), only=only)
        write_results(StdoutWriter(), results)
        failed = [r.name for r in results if not r.passed]
        if failed:
            print(f"Failed: {', '.join(failed)}")
            return ERR
        return OK

    def do_debug(self, options, args, debug):
        """Implementation of 'comfetch debug'."""

        if not args:
            show_help("What information would you like: config, sys?")
            return ERR

        config = read_experiment_config(
            config_file=options.config, validate=False, debug=debug,
        )
        for info in args:
            if info == 'sys':
                sys_info = Experiment(config).sys_info()
                print(info_header("sys"))
                for line in info_formatter(sys_info):
                    print(f" {line}")
            elif info == 'config':
                print(info_header("config"))
                config_info = [
                    (k, v) for k, v in sorted(config.__dict__.items()) if not k.startswith('_')
                ]
                for line in info_formatter(config_info):
                    print(f" {line}")
            else:
                show_help(f"Don't know what you mean by {info!r}")
                return ERR

        return OK


class StdoutWriter:
    """The `write` interface of a debug object, on stdout."""

    def write(self, msg):
        print(msg)


def unshell_list(s):
    """Turn a command-line argument into a list."""
    if not s:
        return None
    if env.WINDOWS:
        # Single-quoted arguments keep their quotes on Windows.
        s = s.strip("'")
    return [part.strip() for part in s.split(',') if part.strip()]


HELP_TOPICS = {
    'help': """\
        Comfetch, version {__version__}
        Simulate federated training with Count-Sketch compressed weights.

        usage: {program_name} <command> [options] [args]

        Commands:
            bench-sketch        Measure sketch recovery accuracy and speed.
            debug               Display information about the internals of comfetch.
            help                Get help on using comfetch.
            partition-preview   Show how the data would be divided among clients.
            plot                Draw charts of metrics files.
            run                 Run a training experiment.
            verify              Run the invariant and oracle checks.

        Use "{program_name} help <command>" for detailed help on any command.
    """,

    'minimum_help': """\
        Comfetch federated sketch training, version {__version__}.  Use '{program_name} help' for help.
    """,

    'version': """\
        Comfetch, version {__version__}
    """,
}


def main(argv=None):
    """The main entry point to comfetch.

    This is installed as the script entry point.  Returns the exit status:
    0 for success, 1 for usage errors and failed checks, 2 for bad
    configuration or data, 3 for a numeric failure, 4 for I/O errors.

    """
    if argv is None:
        argv = sys.argv[1:]
    try:
        status = ComfetchScript().command_line(argv)
    except (ConfigError, DataError) as err:
        print(err.args[0], file=sys.stderr)
        status = CONFIG_ERROR
    except NumericFailure as err:
        print(err.args[0], file=sys.stderr)
        status = NUMERIC_FAILURE
    except BaseComfetchException as err:
        # A controlled error inside comfetch: print the message to the user.
        print(err.args[0], file=sys.stderr)
        status = ERR
    except OSError as err:
        print(err, file=sys.stderr)
        status = IO_ERROR
    except SystemExit as err:
        # The user called `sys.exit()`.  Exit with their argument, if any.
        if err.args:
            status = err.args[0]
        else:
            status = None
    return status
