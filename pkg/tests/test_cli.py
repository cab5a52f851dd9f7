import os
import tomllib

import pandas as pd
import pytest

from auxtabl import cli, codec, models

SMALL_DATA = '''
[data.synthetic]
n_stocks = 2
days = 3
events_per_day = 40
'''


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / 'small.toml'
    path.write_text(SMALL_DATA)
    return path


def test_audit_flops_of_one_layer(tmp_path):
    assert run('audit-flops', '--dims', '1,40,60,10,10', '--rank', '3', '--strategy', 'is2',
               '--out', tmp_path) == 0
    flops = pd.read_csv(tmp_path / 'flops.csv').set_index('tag')
    assert flops.loc['feature_transform', 'closed_form'] == 27000
    assert flops.loc['feature_transform', 'instrumented'] == 27000
    assert flops.loc['total', 'closed_form'] == flops.loc['total', 'instrumented']
    assert run('audit-flops', '--dims', '2,6,4,5,3', '--layer', 'bl', '--out', tmp_path / 'bl') == 0


def test_errors_map_to_exit_codes(tmp_path, capsys, monkeypatch):
    assert run('audit-flops', '--dims', '1,2', '--out', tmp_path) == 4
    assert 'error[config]: ' in capsys.readouterr().err
    assert run('audit-flops', '--dims', '1,40,60,10,10', '--rank', '30', '--out', tmp_path) == 4
    garbage = tmp_path / 'garbage.tablmodel'
    garbage.write_bytes(b'not a model at all')
    assert run('fold', '--model', garbage, '--out', tmp_path) == 7
    assert 'error[integrity]' in capsys.readouterr().err
    assert run('gen-synthetic', '--config', tmp_path / 'missing.toml', '--out', tmp_path) == 4
    monkeypatch.setenv('TABL_SEED', 'abc')
    assert run('gen-synthetic', '--out', tmp_path) == 4


def test_gen_synthetic_writes_native_files(tmp_path, small_config, monkeypatch):
    monkeypatch.setenv('TABL_SEED', '3')
    out = tmp_path / 'data'
    assert run('gen-synthetic', '--config', small_config, '--seed', 7, '--out', out) == 0
    assert sorted(os.listdir(out)) == ['class_distribution.txt', 'effective_config.toml',
                                       'stock_1.csv', 'stock_2.csv']
    with open(out / 'effective_config.toml', 'rb') as f:
        effective = tomllib.load(f)
    assert effective['seed'] == 7
    assert effective['data']['synthetic']['n_stocks'] == 2


def test_train_adapt_fold_evaluate(tmp_path, small_config):
    data_dir = tmp_path / 'data'
    assert run('gen-synthetic', '--config', small_config, '--out', data_dir) == 0
    common = ['--config', small_config, '--data', data_dir, '--epochs', 1, '--batch-size', 64]
    assert run('train-base', *common, '--out', tmp_path / 'base') == 0
    base_path = tmp_path / 'base' / 'model.tablmodel'
    for name in ('model.tablmodel', 'training_curve.csv', 'metrics.csv', 'confusion_matrix.csv'):
        assert (tmp_path / 'base' / name).exists()
    assert run('adapt', *common, '--model', base_path, '--stocks', 2, '--rank', 2,
               '--out', tmp_path / 'adapted') == 0
    aux_path = tmp_path / 'adapted' / 'aux.tablaux'
    assert run('fold', '--model', base_path, '--aux', aux_path, '--out', tmp_path / 'folded') == 0
    base = codec.load(base_path)
    folded = codec.load(tmp_path / 'folded' / 'model.tablmodel')
    assert models.count_params(folded).total == models.count_params(base).total
    assert folded.provenance['kind'] == 'folded'
    folded_path = tmp_path / 'folded' / 'model.tablmodel'
    assert run('eval', '--config', small_config, '--data', data_dir, '--stocks', 2,
               '--model', folded_path, '--out', tmp_path / 'eval') == 0
    metrics = pd.read_csv(tmp_path / 'eval' / 'metrics.csv')
    assert 0 <= metrics['f1'][0] <= 1
    assert run('backtest', '--config', small_config, '--data', data_dir, '--stocks', 2,
               '--model', folded_path, '--simple-returns', '--out', tmp_path / 'trading') == 0
    assert (tmp_path / 'trading' / 'cumulative_returns.csv').exists()
    assert run('finetune', *common, '--model', base_path, '--stocks', 2,
               '--out', tmp_path / 'tuned') == 0


def test_gradcheck_command(tmp_path):
    assert run('gradcheck', '--samples', 2, '--out', tmp_path / 'plain') == 0
    assert run('gradcheck', '--samples', 2, '--rank', 2, '--unfreeze-lambda',
               '--out', tmp_path / 'adapted') == 0
    rows = pd.read_csv(tmp_path / 'adapted' / 'gradcheck.csv')
    assert 'layer0.L1' in set(rows['parameter'])


def test_run_setup1_command(tmp_path):
    config_path = tmp_path / 'setup1.toml'
    config_path.write_text('runs = 1\nrank = 1\ntopology = [[8, 6], [3, 1]]\njoint = false\n'
                           '[training]\nepochs = 1\n' + SMALL_DATA)
    assert run('run-setup1', '--config', config_path, '--targets', 1, '--out', tmp_path / 'setup1') == 0
    for name in ('report.txt', 'report.csv', 'runs.csv', 'confusion_matrix.csv', 'rank_sweep.csv',
                 'class_distribution.txt'):
        assert (tmp_path / 'setup1' / name).exists()
    summary = pd.read_csv(tmp_path / 'setup1' / 'report.csv')
    assert list(summary['arm']) == ['TABL-base', 'TABL-fine-tune', 'aTABL-IS1', 'aTABL-IS2']


def test_adapt_without_a_rank_sweeps_and_selects(tmp_path, small_config, capsys):
    data_dir = tmp_path / 'data'
    assert run('gen-synthetic', '--config', small_config, '--out', data_dir) == 0
    common = ['--config', small_config, '--data', data_dir, '--epochs', 1, '--batch-size', 64]
    assert run('train-base', *common, '--out', tmp_path / 'base') == 0
    capsys.readouterr()
    assert run('adapt', *common, '--model', tmp_path / 'base' / 'model.tablmodel', '--stocks', 2,
               '--rank-min', 1, '--rank-max', 2, '--out', tmp_path / 'adapted') == 0
    sweep = pd.read_csv(tmp_path / 'adapted' / 'rank_sweep.csv')
    assert list(sweep['rank']) == [1, 2]
    best = int(sweep.loc[sweep['train_f1'].idxmax(), 'rank'])
    assert 'selected rank {}'.format(best) in capsys.readouterr().out
    adapted = codec.load(tmp_path / 'adapted' / 'model.tablmodel')
    assert adapted.provenance['rank'] == best


def test_same_seed_gives_identical_files(tmp_path):
    config_path = tmp_path / 'setup1.toml'
    config_path.write_text('runs = 1\nrank = 1\ntopology = [[8, 6], [3, 1]]\njoint = false\n'
                           '[training]\nepochs = 1\n' + SMALL_DATA)
    outputs = []
    for name in ('first', 'second'):
        out = tmp_path / name
        assert run('run-setup1', '--config', config_path, '--seed', 11, '--targets', 2, '--out', out) == 0
        outputs.append({f: (out / f).read_bytes() for f in sorted(os.listdir(out)) if f.endswith('.csv')})
    assert 'report.csv' in outputs[0]
    assert outputs[0] == outputs[1]
