# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0
# For details: see NOTICE.txt at the top of the source tree.

"""Config file for comfetch"""

import collections
import configparser
import copy
import os
import os.path

from comfetch.exceptions import ConfigError
from comfetch.misc import substitute_variables
from comfetch.sketch import sketch_length
from comfetch.tomlconfig import TomlConfigParser, TomlDecodeError


class HandyConfigParser(configparser.RawConfigParser):
    """Our specialization of ConfigParser."""

    def __init__(self, our_file):
        """Create the HandyConfigParser.

        `our_file` is True if this config file is specifically for comfetch,
        False if we are examining another config file (tox.ini, setup.cfg)
        for possible settings.
        """

        configparser.RawConfigParser.__init__(self)
        self.our_file = our_file
        self.section_prefixes = ["comfetch:"]
        if our_file:
            self.section_prefixes.append("")

    def read(self, filenames, encoding_unused=None):
        """Read a file name as UTF-8 configuration data."""
        return configparser.RawConfigParser.read(self, filenames, encoding="utf-8")

    def section_names(self):
        """The sections that might be meant for us, without prefixes."""
        names = []
        for section in self.sections():
            if section.startswith("comfetch:"):
                names.append(section[len("comfetch:"):])
            elif self.our_file:
                names.append(section)
        return names

    def has_option(self, section, option):
        for section_prefix in self.section_prefixes:
            real_section = section_prefix + section
            has = configparser.RawConfigParser.has_option(self, real_section, option)
            if has:
                return has
        return False

    def has_section(self, section):
        for section_prefix in self.section_prefixes:
            real_section = section_prefix + section
            has = configparser.RawConfigParser.has_section(self, real_section)
            if has:
                return real_section
        return False

    def options(self, section):
        for section_prefix in self.section_prefixes:
            real_section = section_prefix + section
            if configparser.RawConfigParser.has_section(self, real_section):
                return configparser.RawConfigParser.options(self, real_section)
        raise configparser.NoSectionError(section)

    def get(self, section, option, *args, **kwargs):
        """Get a value, replacing environment variables also.

        The arguments are the same as `RawConfigParser.get`, but in the found
        value, ``$WORD`` or ``${WORD}`` are replaced by the value of the
        environment variable ``WORD``.

        Returns the finished value.

        """
        for section_prefix in self.section_prefixes:
            real_section = section_prefix + section
            if configparser.RawConfigParser.has_option(self, real_section, option):
                break
        else:
            raise configparser.NoOptionError(option, section)

        v = configparser.RawConfigParser.get(self, real_section, option, *args, **kwargs)
        v = substitute_variables(v, os.environ)
        return v

    def getlist(self, section, option):
        """Read a list of strings.

        The value of `section` and `option` is treated as a comma- and newline-
        separated list of strings.  Each value is stripped of whitespace.

        Returns the list of strings.

        """
        value_list = self.get(section, option)
        values = []
        for value_line in value_list.split('\n'):
            for value in value_line.split(','):
                value = value.strip()
                if value:
                    values.append(value)
        return values

    def getintlist(self, section, option):
        """Read a list of integers, separated like `getlist`."""
        values = []
        for value in self.getlist(section, option):
            try:
                values.append(int(value))
            except ValueError:
                raise ValueError(f"Option [{section}] {option}= needs integers, got {value!r}")
        return values


# Values accepted for the enumerated options.
NETWORK_KINDS = ("fc", "conv-resnet")
LOSSES = ("squared", "cross-entropy")
PARTITIONS = ("iid", "label-shard", "single-point")
RUN_MODES = ("comfetch", "baseline")


class ExperimentConfig:
    """Comfetch experiment configuration.

    The attributes of this class are the settings that control one
    simulated federated training run.

    """
    # pylint: disable=too-many-instance-attributes

    def __init__(self):
        """Initialize the configuration attributes to their defaults."""
        # Metadata about the config.
        self.attempted_config_files = []
        self.config_files_read = []
        self.config_file = None
        self._config_contents = None

        # Defaults for [network]
        self.network_kind = "fc"
        self.hidden = [64]
        self.outputs = 1
        self.loss = "squared"
        self.train_output = True
        self.init_seed = None
        self.input_channels = 1
        self.image_height = 0
        self.image_width = 0
        self.channels = 4
        self.patch = 9
        self.c_sigma = 2.0
        self.c_res = 0.5
        self.depth = 1

        # Defaults for [data]
        self.data_source = None
        self.data_labels = None
        self.data_limit = None
        self.test_fraction = 0.2
        self.partition = "iid"
        self.clients = 10

        # Defaults for [federation]
        self.rounds = 100
        self.clients_per_round = 5
        self.weighted = False
        self.workers = 1

        # Defaults for [optimizer]
        self.lr = 0.001
        self.momentum = 0.9
        self.topk = 0.10
        self.output_lr = None

        # Defaults for [sketch]
        self.sketch_ratio = 0.5
        self.sketch_count = 1
        self.identity_hash = False

        # Defaults for [run]
        self.seed = 0
        self.mode = "comfetch"
        self.output = "comfetch_out"
        self.debug = []
        self.eval_every = 1

    MUST_BE_LIST = ["debug", "hidden"]

    def from_args(self, **kwargs):
        """Read config values from `kwargs`."""
        for k, v in kwargs.items():
            if v is not None:
                if k in self.MUST_BE_LIST and not isinstance(v, (list, tuple)):
                    v = [v]
                if not hasattr(self, k):
                    raise ConfigError(f"No such setting: {k!r}")
                setattr(self, k, v)

    def from_file(self, filename, our_file):
        """Read configuration from a .ini or .toml file.

        `filename` is a file name to read.

        `our_file` is True if this config file is specifically for comfetch,
        False if we are examining another config file (tox.ini, setup.cfg)
        for possible settings.

        Returns True or False, whether the file could be read, and it had some
        comfetch settings in it.

        """
        _, ext = os.path.splitext(filename)
        if ext == '.toml':
            cp = TomlConfigParser(our_file)
        else:
            cp = HandyConfigParser(our_file)

        self.attempted_config_files.append(filename)

        try:
            files_read = cp.read(filename)
        except (configparser.Error, TomlDecodeError) as err:
            raise ConfigError(f"Couldn't read config file {filename}: {err}")
        if not files_read:
            return False

        self.config_files_read.extend(map(os.path.abspath, files_read))

        any_set = False
        try:
            for option_spec in self.CONFIG_FILE_OPTIONS:
                was_set = self._set_attr_from_config_option(cp, *option_spec)
                if was_set:
                    any_set = True
        except ValueError as err:
            raise ConfigError(f"Couldn't read config file {filename}: {err}")

        # Check that there are no unrecognized sections or options.
        all_options = collections.defaultdict(set)
        for option_spec in self.CONFIG_FILE_OPTIONS:
            section, option = option_spec[1].split(":")
            all_options[section].add(option)

        for section in cp.section_names():
            if section not in all_options:
                raise ConfigError(
                    f"Unrecognized section '[{section}]' in config file {filename}"
                )
        for section, options in all_options.items():
            real_section = cp.has_section(section)
            if real_section:
                for unknown in set(cp.options(section)) - options:
                    raise ConfigError(
                        "Unrecognized option '[{}] {}=' in config file {}".format(
                            real_section, unknown, filename
                        )
                    )

        # Was this file used as a config file? If it's specifically our file,
        # then it was used.  If we're piggybacking on someone else's file,
        # then it was only used if we found some settings in it.
        if our_file:
            used = True
        else:
            used = any_set

        if used:
            self.config_file = os.path.abspath(filename)
            with open(filename, "rb") as f:
                self._config_contents = f.read()

        return used

    def copy(self):
        """Return a copy of the configuration."""
        return copy.deepcopy(self)

    CONFIG_FILE_OPTIONS = [
        # These are *args for _set_attr_from_config_option:
        #   (attr, where, type_="")
        #
        #   attr is the attribute to set on the ExperimentConfig object.
        #   where is the section:name to read from the configuration file.
        #   type_ is the optional type to apply, by using .getTYPE to read the
        #       configuration value from the file.

        # [network]
        ('network_kind', 'network:kind'),
        ('hidden', 'network:hidden', 'intlist'),
        ('outputs', 'network:outputs', 'int'),
        ('loss', 'network:loss'),
        ('train_output', 'network:train_output', 'boolean'),
        ('init_seed', 'network:init_seed', 'int'),
        ('input_channels', 'network:input_channels', 'int'),
        ('image_height', 'network:image_height', 'int'),
        ('image_width', 'network:image_width', 'int'),
        ('channels', 'network:channels', 'int'),
        ('patch', 'network:patch', 'int'),
        ('c_sigma', 'network:c_sigma', 'float'),
        ('c_res', 'network:c_res', 'float'),
        ('depth', 'network:depth', 'int'),

        # [data]
        ('data_source', 'data:source'),
        ('data_labels', 'data:labels'),
        ('data_limit', 'data:limit', 'int'),
        ('test_fraction', 'data:test_fraction', 'float'),
        ('partition', 'data:partition'),
        ('clients', 'data:clients', 'int'),

        # [federation]
        ('rounds', 'federation:rounds', 'int'),
        ('clients_per_round', 'federation:clients_per_round', 'int'),
        ('weighted', 'federation:weighted', 'boolean'),
        ('workers', 'federation:workers', 'int'),

        # [optimizer]
        ('lr', 'optimizer:lr', 'float'),
        ('momentum', 'optimizer:momentum', 'float'),
        ('topk', 'optimizer:topk', 'float'),
        ('output_lr', 'optimizer:output_lr', 'float'),

        # [sketch]
        ('sketch_ratio', 'sketch:ratio', 'float'),
        ('sketch_count', 'sketch:count', 'int'),
        ('identity_hash', 'sketch:identity_hash', 'boolean'),

        # [run]
        ('seed', 'run:seed', 'int'),
        ('mode', 'run:mode'),
        ('output', 'run:output'),
        ('debug', 'run:debug', 'list'),
        ('eval_every', 'run:eval_every', 'int'),
    ]

    def _set_attr_from_config_option(self, cp, attr, where, type_=''):
        """Set an attribute on self if it exists in the ConfigParser.

        Returns True if the attribute was set.

        """
        section, option = where.split(":")
        if cp.has_option(section, option):
            method = getattr(cp, 'get' + type_)
            setattr(self, attr, method(section, option))
            return True
        return False

    def _option_spec(self, option_name):
        for option_spec in self.CONFIG_FILE_OPTIONS:
            if option_spec[1] == option_name:
                return option_spec
        raise ConfigError(f"No such option: {option_name!r}")

    def set_option(self, option_name, value):
        """Set an option in the configuration.

        `option_name` is a colon-separated string indicating the section and
        option name.  For example, the ``ratio`` option in the ``[sketch]``
        section of the config file would be indicated with `"sketch:ratio"`.

        `value` is the new value for the option.

        """
        setattr(self, self._option_spec(option_name)[0], value)

    def get_option(self, option_name):
        """Get an option from the configuration.

        `option_name` is a colon-separated string indicating the section and
        option name.  For example, the ``ratio`` option in the ``[sketch]``
        section of the config file would be indicated with `"sketch:ratio"`.

        Returns the value of the option.

        """
        return getattr(self, self._option_spec(option_name)[0])

    def items(self):
        """(section:option, value) pairs for every option, in table order."""
        return [(spec[1], getattr(self, spec[0])) for spec in self.CONFIG_FILE_OPTIONS]

    def post_process_file(self, path):
        """Make final adjustments to a file path to make it usable."""
        return os.path.expanduser(path)

    def post_process(self):
        """Make final adjustments to settings to make them usable."""
        self.output = self.post_process_file(self.output)
        if self.data_source and not self.data_source.startswith("teacher-fc"):
            self.data_source = self.post_process_file(self.data_source)
        if self.data_labels:
            self.data_labels = self.post_process_file(self.data_labels)
        if self.init_seed is None:
            self.init_seed = self.seed
        if self.output_lr is None:
            self.output_lr = self.lr

    def _fail(self, option_name, problem):
        value = self.get_option(option_name)
        section, option = option_name.split(":")
        raise ConfigError(f"Invalid [{section}] {option}={value!r}: {problem}")

    def validate(self, need_data=True):
        """Check the settings against each other.  Raises ConfigError."""
        if need_data and not self.data_source:
            raise ConfigError("No data source: set [data] source=")
        choices = [
            ("network:kind", NETWORK_KINDS),
            ("network:loss", LOSSES),
            ("data:partition", PARTITIONS),
            ("run:mode", RUN_MODES),
        ]
        for name, allowed in choices:
            if self.get_option(name) not in allowed:
                self._fail(name, f"must be one of {', '.join(allowed)}")
        positive = [
            "network:outputs", "network:channels", "network:depth", "network:patch",
            "network:input_channels", "data:clients", "federation:rounds",
            "federation:clients_per_round", "federation:workers", "sketch:count",
            "run:eval_every",
        ]
        for name in positive:
            if self.get_option(name) < 1:
                self._fail(name, "must be at least 1")
        if not self.hidden or min(self.hidden) < 1:
            self._fail("network:hidden", "needs positive layer widths")
        if self.data_limit is not None and self.data_limit < 1:
            self._fail("data:limit", "must be at least 1")
        if not 0 < self.sketch_ratio <= 1:
            self._fail("sketch:ratio", "must be in (0, 1]")
        if not 0 <= self.momentum < 1:
            self._fail("optimizer:momentum", "must be in [0, 1)")
        if not 0 < self.topk <= 1:
            self._fail("optimizer:topk", "must be in (0, 1]")
        if self.lr <= 0:
            self._fail("optimizer:lr", "must be positive")
        if self.output_lr is not None and self.output_lr < 0:
            self._fail("optimizer:output_lr", "must not be negative")
        if not 0 <= self.test_fraction < 1:
            self._fail("data:test_fraction", "must be in [0, 1)")
        if self.clients_per_round > self.clients:
            self._fail("federation:clients_per_round", f"can't exceed {self.clients} clients")
        if self.network_kind == "conv-resnet" and not 0 < self.c_res < 1:
            self._fail("network:c_res", "must be in (0, 1)")
        if self.identity_hash and self.sketch_ratio != 1:
            self._fail("sketch:identity_hash", "needs [sketch] ratio=1")

    def sketch_length(self, d):
        """The sketch length for a layer with `d` rows."""
        return sketch_length(d, self.sketch_ratio)


# The config file read when none is named.
DEFAULT_CONFIG_FILE = "comfetch.ini"


def config_files_to_try(config_file):
    """What config files should we try to read?

    Returns a list of tuples:
        (filename, is_our_file, was_file_specified)
    """
    specified_file = (config_file is not True)
    if not specified_file:
        # No file was specified. Check COMFETCH_CONFIG.
        config_file = os.environ.get('COMFETCH_CONFIG')
        if config_file:
            specified_file = True
    if not specified_file:
        config_file = DEFAULT_CONFIG_FILE
    files_to_try = [
        (config_file, True, specified_file),
        ("setup.cfg", False, False),
        ("tox.ini", False, False),
        ("pyproject.toml", False, False),
    ]
    return files_to_try


def read_experiment_config(config_file=True, validate=True, **kwargs):
    """Read the comfetch configuration.

    Arguments:
        config_file: a file name to read, True to search for one, or False
            to use only defaults, environment, and `kwargs`.
        validate: check the finished settings, and require a data source.
        all others: keyword arguments setting configuration attributes.

    Returns:
        an ExperimentConfig.

    """
    # Build the configuration from a number of sources:
    # 1) defaults:
    config = ExperimentConfig()

    # 2) from a file:
    if config_file:
        files_to_try = config_files_to_try(config_file)

        for fname, our_file, specified_file in files_to_try:
            config_read = config.from_file(fname, our_file=our_file)
            if config_read:
                break
            if specified_file:
                raise ConfigError(f"Couldn't read {fname!r} as a config file")

    # 3) from environment variables:
    env_seed = os.environ.get('COMFETCH_SEED')
    if env_seed:
        try:
            config.seed = int(env_seed)
        except ValueError:
            raise ConfigError(f"COMFETCH_SEED must be an integer, got {env_seed!r}")
    debugs = os.environ.get('COMFETCH_DEBUG')
    if debugs:
        config.debug.extend(d.strip() for d in debugs.split(","))

    # 4) from arguments:
    config.from_args(**kwargs)

    config.post_process()
    if validate:
        config.validate()

    return config


def load_config(path):
    """Read the experiment configuration in `path`, validated, defaults filled."""
    return read_experiment_config(path)
