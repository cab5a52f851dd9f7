'''
Artifact writing: atomic CSV files and text tables rendered from the jinja2
templates shipped with the package.
'''

import contextlib
import logging
import os
import tempfile

import jinja2
import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

basedir = os.path.abspath(os.path.dirname(__file__))
templatesdir = os.path.join(basedir, 'templates')

_environment = jinja2.Environment(
    loader=jinja2.FileSystemLoader(templatesdir),
    keep_trailing_newline=True,
    trim_blocks=True,
    lstrip_blocks=True,
    undefined=jinja2.StrictUndefined,
)


@contextlib.contextmanager
def atomic_open(path, mode='w'):
    '''
    Opens a temporary file beside `path` and moves it into place only when
    the block finishes without error.
    '''
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    handle, temp_path = tempfile.mkstemp(dir=directory, prefix='.' + os.path.basename(path) + '.')
    try:
        newline = '' if 'b' not in mode else None
        with os.fdopen(handle, mode, newline=newline) as f:
            yield f
        os.replace(temp_path, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.remove(temp_path)
        raise


def write_csv(path, header, rows):
    frame = pd.DataFrame(list(rows), columns=header)
    with atomic_open(path) as f:
        frame.to_csv(f, index=False, lineterminator='\n')
    logger.debug('Wrote %d rows to %s.', len(frame), path)
    return path


def read_csv(path):
    return pd.read_csv(path, float_precision='round_trip')


def write_text(path, content):
    with atomic_open(path) as f:
        f.write(content)
    return path


def render(template_name, **context):
    return _environment.get_template(template_name).render(**context)


def mean_std(values):
    '''
    (mean, std) of per-run values. The std is the sample deviation and is
    None with fewer than two runs.
    '''
    values = [v for v in values if v is not None]
    if not values:
        return None, None
    mean = float(np.mean(values))
    std = float(np.std(values, ddof=1)) if len(values) >= 2 else None
    return mean, std


def format_mean_std(mean, std, scale=1.0, digits=2):
    if mean is None:
        return '-'
    text = '{:.{}f}'.format(mean * scale, digits)
    if std is not None:
        text += ' ± {:.{}f}'.format(std * scale, digits)
    return text


def render_distribution(rows, title='Class distribution'):
    '''
    `rows` are data.DistributionRow tuples; counts per class for the
    training and test parts.
    '''
    return render('class_distribution.txt.j2', title=title, rows=rows)


def render_report(report):
    return render('report.txt.j2', report=report, format_mean_std=format_mean_std)


def render_config(config):
    return render('effective_config.toml.j2', sections=toml_sections(config))


def number_text(value):
    '''
    Shortest round-tripping text of a number; empty for None.
    '''
    return '' if value is None else repr(float(value))


def toml_value(value):
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, str):
        return '"{}"'.format(value.replace('\\', '\\\\').replace('"', '\\"'))
    if isinstance(value, (list, tuple)):
        return '[{}]'.format(', '.join(toml_value(v) for v in value))
    if isinstance(value, dict):
        return '{{{}}}'.format(', '.join('{} = {}'.format(k, toml_value(v))
                                         for k, v in value.items() if v is not None))
    raise TypeError('Cannot write {!r} as a TOML value'.format(value))


def toml_sections(config, prefix=''):
    '''
    Flattens a nested config into [(table name, [(key, TOML value)])], the
    top-level table first. None values are left out.
    '''
    scalars = []
    tables = []
    for key, value in config.items():
        if value is None:
            continue
        if isinstance(value, dict):
            tables.extend(toml_sections(value, prefix + key + '.'))
        else:
            scalars.append((key, toml_value(value)))
    return [(prefix[:-1], scalars)] + tables
