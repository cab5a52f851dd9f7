import copy
import logging
import os
import tomllib

from auxtabl import reports
from auxtabl.errors import ConfigException

logger = logging.getLogger(__name__)

SEED_ENV = 'TABL_SEED'
EFFECTIVE_CONFIG = 'effective_config.toml'

DEFAULTS = {
    'seed': 0,
    'runs': 5,
    'jobs': 1,
    'architecture': 'tabl',
    'topology': 'auto',
    'strategy': 'is2',
    'rank': None,
    'rank_min': 1,
    'rank_max': 20,
    'rank_select': 'train',
    'unfreeze_lambda': False,
    'joint': True,
    'compound_returns': True,
    'data': {
        'window': 10,
        'horizon': 10,
        'theta': 0.002,
        'train_days': None,
        'paths': [],
        'synthetic': {
            'n_stocks': 5,
            'days': 10,
            'events_per_day': 200,
        },
        'fi2010_layout': None,
    },
    'training': {
        'batch_size': 256,
        'epochs': 200,
        'lr': 0.01,
        'patience': 5,
        'factor': 0.5,
        'min_lr': 1e-7,
        'plateau_delta': 1e-4,
        'early_stop_patience': 20,
        'stop_lr': 1e-6,
        'beta': 1e6,
    },
    'cnn': {
        'layers': [[32, 3], [32, 3], [32, 3], [16, 3], [16, 3], [16, 3], [16, 3]],
        'padding': 'same',
        'stride': 1,
    },
    'setup2': {
        'old_stocks': [1, 2, 3],
        'new_stocks': [4, 5],
    },
    'online': {
        'base_days': 5,
        'adapt_days': 2,
    },
}

# Tables whose keys are free-form and passed through unchecked.
OPEN_TABLES = ('data.synthetic', 'data.fi2010_layout')


def merge(base, update, path=''):
    '''
    Deep-merges `update` into a copy of `base`. Unknown keys are errors
    except inside the open tables.
    '''
    merged = copy.deepcopy(base)
    for key, value in update.items():
        name = path + key
        if path[:-1] in OPEN_TABLES:
            merged[key] = copy.deepcopy(value)
        elif key not in merged:
            raise ConfigException('Unknown config key "{}"'.format(name))
        elif isinstance(merged[key], dict) and isinstance(value, dict):
            merged[key] = merge(merged[key], value, name + '.')
        elif isinstance(merged[key], dict) and name not in OPEN_TABLES:
            raise ConfigException('Config key "{}" must be a table'.format(name))
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def read_config_file(filename):
    try:
        with open(filename, 'rb') as f:
            return tomllib.load(f)
    except FileNotFoundError:
        raise ConfigException('Config file {} does not exist'.format(filename))
    except tomllib.TOMLDecodeError as e:
        raise ConfigException('Cannot read config file {}: {}'.format(filename, e))


def load_config(filename=None, overrides=None, environ=None):
    '''
    Defaults, then the file, then the TABL_SEED environment variable, then
    explicit overrides (nested dicts, None values ignored).
    '''
    environ = os.environ if environ is None else environ
    cfg = copy.deepcopy(DEFAULTS)
    if filename is not None:
        cfg = merge(cfg, read_config_file(filename))
    if environ.get(SEED_ENV):
        try:
            cfg['seed'] = int(environ[SEED_ENV])
        except ValueError:
            raise ConfigException('{} must be an integer, got "{}"'.format(SEED_ENV, environ[SEED_ENV]))
    if overrides:
        cfg = merge(cfg, drop_none(overrides))
    check_config(cfg)
    return cfg


def drop_none(d):
    result = {}
    for key, value in d.items():
        if isinstance(value, dict):
            value = drop_none(value)
            if value:
                result[key] = value
        elif value is not None:
            result[key] = value
    return result


def check_config(cfg):
    for key in ('seed', 'runs', 'jobs', 'rank_min', 'rank_max'):
        if not isinstance(cfg[key], int) or isinstance(cfg[key], bool):
            raise ConfigException('Config key "{}" must be an integer, got {!r}'.format(key, cfg[key]))
    if cfg['runs'] < 1:
        raise ConfigException('Config key "runs" must be at least 1')
    if cfg['jobs'] < 1:
        raise ConfigException('Config key "jobs" must be at least 1')
    if cfg['rank'] is not None and (not isinstance(cfg['rank'], int) or cfg['rank'] < 1):
        raise ConfigException('Config key "rank" must be a positive integer, got {!r}'.format(cfg['rank']))
    if cfg['data']['window'] < 1 or cfg['data']['horizon'] < 1:
        raise ConfigException('Window and horizon must be positive')
    if cfg['data']['theta'] < 0:
        raise ConfigException('theta must be non-negative')
    return cfg


def render_effective_config(cfg):
    return reports.render_config(cfg)


def write_effective_config(cfg, directory):
    '''
    Writes the configuration a command ran with into its output directory.
    '''
    path = os.path.join(directory, EFFECTIVE_CONFIG)
    reports.write_text(path, render_effective_config(cfg))
    return path


def setup_logging(level):
    '''
    Utility function for setting up logging.
    '''
    ch = logging.StreamHandler()
    ch.setLevel(logging.DEBUG)
    formatter = logging.Formatter(
        "%(asctime)s - %(name)s - %(levelname)s - %(message)s")
    ch.setFormatter(formatter)
    # Which packages do we want to log from.
    packages = ('__main__', 'auxtabl')
    for package in packages:
        logger = logging.getLogger(package)
        logger.handlers = [h for h in logger.handlers if not getattr(h, 'auxtabl_handler', False)]
        ch.auxtabl_handler = True
        logger.addHandler(ch)
        logger.setLevel(level)
    logger.debug('Setup logging at level {}.'.format(level))
