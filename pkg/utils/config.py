"""
Centralized configuration for the FedCPU simulator.

Environment-level settings (output location, logging, pool width, dataset
directory) come from a .env file or the process environment. Experiment
settings come from TOML files layered over a named preset.
"""
import math
import os
import re
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, dataclass, field, fields, replace

from dotenv import load_dotenv

from simulation.errors import ConfigError
from simulation.federated import SCHEMES

# Load environment variables from .env file
load_dotenv()

# Output and logging
OUTPUT_DIRECTORY = os.getenv('FEDCPU_OUTPUT_DIR', 'output')
LOG_LEVEL = os.getenv('FEDCPU_LOG_LEVEL', 'INFO').upper()
LOG_TO_FILE = os.getenv('FEDCPU_LOG_TO_FILE', 'true').strip().lower() in ('1', 'true', 'yes', 'on')

# Processing
MAX_WORKERS = int(os.getenv('FEDCPU_MAX_WORKERS', '4'))

# Data
DATASET_PATH = os.getenv('FEDCPU_DATASET_PATH') or None

# Bundled experiment configs
CONFIG_DIRECTORY = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'configs')
DESK_CONFIG_PATH = os.path.join(CONFIG_DIRECTORY, 'desk.toml')

# Ensure output directory exists
os.makedirs(OUTPUT_DIRECTORY, exist_ok=True)


@dataclass
class LatticeSettings:
    """Lattice codec: 2x2 block generator (row-major), scale rho, sigma_q^2 estimator."""
    generator: tuple = (0.25, 0.0, 0.125, 0.25)
    rho: float = 1.0
    second_moment_samples: int = 1_000_000
    seed: int = 0

    @property
    def block_generator(self):
        g = self.generator
        return ((g[0], g[1]), (g[2], g[3]))


@dataclass
class ChannelSettings:
    """Fading law, SNR and power budget, or a fixed channel loaded from CSV."""
    fading_rate: float = 5.0
    snr: float = 10.0
    power: float = 1.0
    fixed_channel_csv: str = None


@dataclass
class TrainingSettings:
    """Local SGD and the non-i.i.d. partition."""
    tau: int = 3
    mu: float = 0.01
    batch: int = 100
    hidden: int = 32
    dirichlet_alpha: float = 1.0
    classes_per_device: int = 2


@dataclass
class ExperimentConfig:
    """
    Everything needed to re-run an experiment. Defaults are the full-scale
    parameters (K = 30, M = 30, SNR = 10, tau = 3, mu = 0.01, B = 100).

    Attributes:
        preset: Name of the preset the file was layered over
        devices: K
        antennas: M
        rounds: T
        schemes: Aggregation schemes to run
        seeds: Master seeds
        dataset_path: MNIST IDX directory (synthetic data when absent)
        output_dir: Where CSVs, manifests and logs go
        train_samples: Training subset size
        test_samples: Held-out subset size
        record_wall_time: Add a wall_time column to the CSV
    """
    preset: str = 'full'
    devices: int = 30
    antennas: int = 30
    rounds: int = 100
    schemes: tuple = SCHEMES
    seeds: tuple = tuple(range(20))
    dataset_path: str = None
    output_dir: str = OUTPUT_DIRECTORY
    train_samples: int = 60000
    test_samples: int = 10000
    record_wall_time: bool = False
    lattice: LatticeSettings = field(default_factory=LatticeSettings)
    channel: ChannelSettings = field(default_factory=ChannelSettings)
    training: TrainingSettings = field(default_factory=TrainingSettings)
    source_path: str = field(default=None, repr=False, compare=False)
    source_text: str = field(default=None, repr=False, compare=False)

    def to_dict(self):
        """JSON-safe echo of the settings (no source bookkeeping)."""
        data = asdict(self)
        data.pop('source_path')
        data.pop('source_text')
        data['schemes'] = list(self.schemes)
        data['seeds'] = list(self.seeds)
        data['lattice']['generator'] = list(self.lattice.generator)
        return data

    def to_toml(self):
        """Render the settings back to TOML so a manifest can be re-run as a config."""
        lines = ['[experiment]']
        top = {f.name: getattr(self, f.name) for f in fields(self)
               if f.name not in ('lattice', 'channel', 'training', 'source_path', 'source_text')}
        lines += [f'{key} = {_toml_value(value)}' for key, value in top.items() if value is not None]
        for table in ('lattice', 'channel', 'training'):
            lines.append(f'\n[{table}]')
            settings = getattr(self, table)
            lines += [f'{f.name} = {_toml_value(getattr(settings, f.name))}'
                      for f in fields(settings) if getattr(settings, f.name) is not None]
        return '\n'.join(lines) + '\n'

    def validate(self):
        """
        Check every setting.

        Raises:
            ConfigError: with the line of the offending key when the config came from a file
        """
        def fail(table, key, message):
            raise ConfigError(message, line=_locate(self.source_text, table, key), path=self.source_path)

        def positive_int(table, key, value):
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                fail(table, key, f"{key} must be a positive integer, got {value!r}")

        def positive_float(table, key, value, allow_zero=False):
            if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
                fail(table, key, f"{key} must be a finite number, got {value!r}")
            if value < 0 or (value == 0 and not allow_zero):
                bound = 'non-negative' if allow_zero else 'positive'
                fail(table, key, f"{key} must be {bound}, got {value!r}")

        for key in ('devices', 'antennas', 'rounds', 'train_samples', 'test_samples'):
            positive_int('experiment', key, getattr(self, key))
        if not self.schemes:
            fail('experiment', 'schemes', "schemes must not be empty")
        unknown = [s for s in self.schemes if s not in SCHEMES]
        if unknown:
            fail('experiment', 'schemes', f"unknown scheme(s) {unknown}; expected a subset of {list(SCHEMES)}")
        if not self.seeds:
            fail('experiment', 'seeds', "seeds must not be empty")
        if any(isinstance(s, bool) or not isinstance(s, int) or s < 0 for s in self.seeds):
            fail('experiment', 'seeds', f"seeds must be non-negative integers, got {list(self.seeds)}")
        if len(set(self.seeds)) != len(self.seeds):
            fail('experiment', 'seeds', "seeds must be unique")
        if not isinstance(self.record_wall_time, bool):
            fail('experiment', 'record_wall_time', "record_wall_time must be true or false")
        if self.dataset_path is not None and not isinstance(self.dataset_path, str):
            fail('experiment', 'dataset_path', "dataset_path must be a string")

        generator = self.lattice.generator
        if len(generator) != 4 or any(isinstance(g, bool) or not isinstance(g, (int, float)) for g in generator):
            fail('lattice', 'generator', f"generator must hold 4 numbers (row-major 2x2), got {list(generator)}")
        if abs(generator[0] * generator[3] - generator[1] * generator[2]) <= 1e-12:
            fail('lattice', 'generator', "generator must be non-singular")
        positive_float('lattice', 'rho', self.lattice.rho)
        positive_int('lattice', 'second_moment_samples', self.lattice.second_moment_samples)
        if isinstance(self.lattice.seed, bool) or not isinstance(self.lattice.seed, int) or self.lattice.seed < 0:
            fail('lattice', 'seed', f"seed must be a non-negative integer, got {self.lattice.seed!r}")

        for key in ('fading_rate', 'snr', 'power'):
            positive_float('channel', key, getattr(self.channel, key))
        csv_path = self.channel.fixed_channel_csv
        if csv_path is not None and not os.path.exists(csv_path):
            fail('channel', 'fixed_channel_csv', f"fixed channel file {csv_path} does not exist")

        for key in ('tau', 'batch', 'hidden', 'classes_per_device'):
            positive_int('training', key, getattr(self.training, key))
        positive_float('training', 'mu', self.training.mu, allow_zero=True)
        positive_float('training', 'dirichlet_alpha', self.training.dirichlet_alpha)
        return self


def _toml_value(value):
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, str):
        return '"' + value.replace('\\', '\\\\').replace('"', '\\"') + '"'
    if isinstance(value, (list, tuple)):
        return '[' + ', '.join(_toml_value(v) for v in value) + ']'
    return repr(value)


def preset(name):
    """
    Named baseline configuration.

    Args:
        name: 'full' for the full-scale parameters (the dataclass defaults) or
            'desk' for the reduced run (K = 10, M = 10, T = 30, same mu)

    Returns:
        ExperimentConfig
    """
    if name == 'full':
        return ExperimentConfig()
    if name == 'desk':
        return ExperimentConfig(
            preset='desk',
            devices=10,
            antennas=10,
            rounds=30,
            seeds=tuple(range(10)),
            train_samples=6000,
            test_samples=1000,
            lattice=LatticeSettings(second_moment_samples=200_000),
        )
    raise ConfigError(f"unknown preset {name!r}; expected 'desk' or 'full'")


_TABLES = ('lattice', 'channel', 'training')


def _locate(text, table, key):
    """1-based line of `key = ...` inside `[table]`, or None."""
    if not text or key is None:
        return None
    current = None
    pattern = re.compile(rf'^\s*{re.escape(key)}\s*=')
    for number, line in enumerate(text.splitlines(), start=1):
        header = re.match(r'^\s*\[([^\]]+)\]', line)
        if header:
            current = header.group(1).strip()
            continue
        if current == table and pattern.match(line):
            return number
    return None


def _overlay(settings, values, table, path, text):
    known = {f.name for f in fields(settings)}
    for key in values:
        if key not in known or key in ('lattice', 'channel', 'training', 'source_path', 'source_text'):
            raise ConfigError(f"unknown key {key!r} in [{table}]", line=_locate(text, table, key), path=path)
    converted = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
    return replace(settings, **converted)


def apply_overrides(cfg, overrides):
    """
    Apply dotted overrides such as {'antennas': 5, 'lattice.rho': 0.5}.

    Returns:
        New ExperimentConfig (not validated)
    """
    for dotted, value in (overrides or {}).items():
        if isinstance(value, list):
            value = tuple(value)
        if '.' in dotted:
            table, key = dotted.split('.', 1)
            if table not in _TABLES or not hasattr(getattr(cfg, table), key):
                raise ConfigError(f"unknown override {dotted!r}")
            cfg = replace(cfg, **{table: replace(getattr(cfg, table), **{key: value})})
        else:
            if dotted in _TABLES or not hasattr(cfg, dotted):
                raise ConfigError(f"unknown override {dotted!r}")
            cfg = replace(cfg, **{dotted: value})
    return cfg


def load_experiment_config(path, overrides=None):
    """
    Load an experiment config from TOML.

    The [experiment] table may name a preset; file values are layered over
    it, then overrides, then the environment (output directory and dataset
    path), and the result is validated.

    Args:
        path: TOML file path
        overrides: Optional dict of dotted keys to values

    Returns:
        Validated ExperimentConfig

    Raises:
        ConfigError: unreadable file, TOML syntax error, unknown keys or invalid values
    """
    try:
        with open(path, 'rb') as f:
            raw = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}", path=path)
    text = raw.decode('utf-8', errors='replace')

    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        match = re.search(r'line (\d+)', str(e))
        raise ConfigError(f"TOML syntax error: {e}", line=int(match.group(1)) if match else None, path=path)

    for table in data:
        if table != 'experiment' and table not in _TABLES:
            raise ConfigError(f"unknown table [{table}]", line=_locate_table(text, table), path=path)

    experiment = dict(data.get('experiment', {}))
    cfg = preset(experiment.get('preset', 'full'))
    cfg = _overlay(cfg, experiment, 'experiment', path, text)
    for table in _TABLES:
        cfg = replace(cfg, **{table: _overlay(getattr(cfg, table), data.get(table, {}), table, path, text)})
    cfg = apply_overrides(cfg, overrides)

    if os.getenv('FEDCPU_OUTPUT_DIR'):
        cfg = replace(cfg, output_dir=os.getenv('FEDCPU_OUTPUT_DIR'))
    if cfg.dataset_path is None and DATASET_PATH:
        cfg = replace(cfg, dataset_path=DATASET_PATH)
    if cfg.channel.fixed_channel_csv and not os.path.isabs(cfg.channel.fixed_channel_csv):
        resolved = os.path.join(os.path.dirname(os.path.abspath(path)), cfg.channel.fixed_channel_csv)
        cfg = replace(cfg, channel=replace(cfg.channel, fixed_channel_csv=resolved))

    cfg = replace(cfg, source_path=str(path), source_text=text)
    return cfg.validate()


def _locate_table(text, table):
    for number, line in enumerate(text.splitlines(), start=1):
        if re.match(rf'^\s*\[{re.escape(table)}\]', line):
            return number
    return None


def get_config():
    """
    Returns the environment configuration as a dictionary
    """
    return {
        'OUTPUT_DIRECTORY': OUTPUT_DIRECTORY,
        'LOG_LEVEL': LOG_LEVEL,
        'LOG_TO_FILE': LOG_TO_FILE,
        'MAX_WORKERS': MAX_WORKERS,
        'DATASET_PATH': DATASET_PATH,
    }
