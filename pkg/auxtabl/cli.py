'''
Command line: data generation and ingestion, training, adaptation,
folding, evaluation, backtests, rank sweeps, gradient checks, operation
audits and the experimental setups.

Every command writes its artifacts and `effective_config.toml` under
`--out`. Library errors exit with a code per category (see
`auxtabl.errors.EXIT_CODES`).
'''

import argparse
import glob
import logging
import os
import sys

import numpy as np

from auxtabl import (adapters, codec, config, data, experiments, handlers, layers, linalg,
                     metrics, models, reports, synthetic, trading, training)
from auxtabl.errors import AuxTablException, ConfigException, DomainException, EXIT_CODES

logger = logging.getLogger(__name__)

LOG_LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR')


def int_list(text):
    try:
        return [int(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError('Expected comma separated integers, got "{}"'.format(text))


def common_parser():
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument('--config', help='TOML experiment configuration')
    parser.add_argument('--out', required=True, help='Output directory')
    parser.add_argument('--seed', type=int, help='Master seed (overrides TABL_SEED and the config)')
    parser.add_argument('--log-level', default='INFO', choices=LOG_LEVELS)
    parser.add_argument('--jobs', type=int, help='Worker processes for experiment runs')
    return parser


def training_parser():
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument('--batch-size', type=int)
    parser.add_argument('--epochs', type=int)
    parser.add_argument('--lr', type=float)
    return parser


def data_parser():
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument('--data', nargs='+',
                        help='Native CSV files, or directories of stock_<id>.csv files')
    parser.add_argument('--stocks', type=int_list, help='Comma separated stock ids to use')
    parser.add_argument('--horizon', type=int)
    parser.add_argument('--theta', type=float)
    return parser


def model_parser():
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument('--model', required=True, help='A .tablmodel file')
    parser.add_argument('--aux', help='A .tablaux file to attach to the model')
    return parser


def adapt_parser():
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument('--strategy', choices=adapters.STRATEGIES)
    parser.add_argument('--rank', type=int)
    parser.add_argument('--unfreeze-lambda', action='store_true', default=None,
                        help='Train the blend scalars of TABL layers with the factors')
    return parser


def make_parser():
    parser = argparse.ArgumentParser(
        prog='auxtabl', description='Low-rank auxiliary adaptation of TABL networks for limit order books.')
    commands = parser.add_subparsers(dest='command', required=True)
    common = common_parser()
    train_opts = training_parser()
    data_opts = data_parser()
    model_opts = model_parser()
    adapt_opts = adapt_parser()

    def add(name, help_text, parents, function):
        sub = commands.add_parser(name, help=help_text, description=help_text, parents=parents)
        sub.set_defaults(function=function)
        return sub

    add('gen-synthetic', 'Generate a synthetic five-stock order book dataset.', [common],
        cmd_gen_synthetic)
    sub = add('ingest-fi2010', 'Convert an FI-2010 style file to the native CSV format.', [common],
              cmd_ingest_fi2010)
    sub.add_argument('--in', dest='input', required=True, help='FI-2010 style text file')
    sub.add_argument('--layout', help='TOML file with the layout keys (else data.fi2010_layout)')
    sub = add('train-base', 'Train a network from scratch.', [common, data_opts, train_opts],
              cmd_train_base)
    sub.add_argument('--topology', help='Registry name of the topology')
    sub.add_argument('--architecture', choices=models.ARCHITECTURES)
    add('finetune', 'Train a copy of a model further on new data.',
        [common, data_opts, train_opts, model_opts], cmd_finetune)
    sub = add('adapt', 'Train auxiliary factors for a frozen base model.',
              [common, data_opts, train_opts, model_opts, adapt_opts], cmd_adapt)
    sub.add_argument('--rank-min', type=int, help='Lowest rank tried when --rank is not given')
    sub.add_argument('--rank-max', type=int, help='Highest rank tried when --rank is not given')
    add('fold', 'Fold the auxiliary factors of an adapted model into its weights.', [common, model_opts],
        cmd_fold)
    add('eval', 'Evaluate a model on the test days.', [common, data_opts, model_opts], cmd_eval)
    sub = add('backtest', 'Simulate long-only trading on the test days.', [common, data_opts, model_opts],
              cmd_backtest)
    sub.add_argument('--simple-returns', action='store_true',
                     help='Sum trade returns instead of compounding them')
    sub = add('rank-sweep', 'Adapt a base model over a range of ranks.',
              [common, data_opts, train_opts, model_opts, adapt_opts], cmd_rank_sweep)
    sub.add_argument('--rank-min', type=int)
    sub.add_argument('--rank-max', type=int)
    sub = add('gradcheck', 'Compare analytic gradients with finite differences.', [common, adapt_opts],
              cmd_gradcheck)
    sub.add_argument('--topology', default='joint_all', help='Registry name of the topology')
    sub.add_argument('--samples', type=int, default=4)
    sub.add_argument('--tolerance', type=float, default=1e-6)
    sub = add('audit-flops', 'Count multiply-accumulate operations.', [common, adapt_opts], cmd_audit_flops)
    group = sub.add_mutually_exclusive_group(required=True)
    group.add_argument('--dims', type=int_list, help="N,D,D',T,T' of a single layer")
    group.add_argument('--model', help='A .tablmodel file')
    sub.add_argument('--layer', choices=('tabl', 'bl'), default='tabl')
    sub.add_argument('--batch', type=int, default=1)
    for name, function, help_text in (
            ('run-setup1', cmd_run_setup1, 'Leave-one-stock-out adaptation experiment.'),
            ('run-setup2', cmd_run_setup2, 'Three old stocks, two new stocks, with storage costs.'),
            ('run-online', cmd_run_online, 'Adaptation to later days of the same stocks.')):
        sub = add(name, help_text, [common, data_opts, train_opts], function)
        sub.add_argument('--architecture', choices=models.ARCHITECTURES)
        sub.add_argument('--runs', type=int)
        sub.add_argument('--rank', type=int)
        if name == 'run-setup1':
            sub.add_argument('--targets', type=int_list)
    sub = add('ablate', 'Compare the candidate base topologies for one target stock.',
              [common, data_opts, train_opts], cmd_ablate)
    sub.add_argument('--target', type=int, required=True)
    sub.add_argument('--runs', type=int)
    return parser


def overrides(args):
    '''
    Nested config overrides from the flags that were given.
    '''
    get = lambda name: getattr(args, name, None)
    return {
        'seed': get('seed'),
        'jobs': get('jobs'),
        'runs': get('runs'),
        'architecture': get('architecture'),
        'topology': get('topology') if args.command == 'train-base' else None,
        'strategy': get('strategy'),
        'rank': get('rank'),
        'rank_min': get('rank_min'),
        'rank_max': get('rank_max'),
        'unfreeze_lambda': get('unfreeze_lambda'),
        'compound_returns': False if get('simple_returns') else None,
        'data': {'horizon': get('horizon'), 'theta': get('theta')},
        'training': {'batch_size': get('batch_size'), 'epochs': get('epochs'), 'lr': get('lr')},
    }


def out_path(args, name):
    return os.path.join(args.out, name)


def data_files(paths):
    files = []
    for path in paths:
        if os.path.isdir(path):
            found = sorted(glob.glob(os.path.join(path, 'stock_*.csv')))
            if not found:
                raise ConfigException('No stock_*.csv files in {}'.format(path))
            files += found
        else:
            files.append(path)
    return files


def load_streams(args, cfg):
    '''
    Streams from --data (or the config's data paths), or a synthetic dataset
    generated from the config when neither is given.
    '''
    paths = getattr(args, 'data', None) or cfg['data']['paths']
    if paths:
        streams = []
        for filename in data_files(paths):
            streams += data.read_native(filename)
    else:
        logger.info('No data given; generating the synthetic dataset.')
        streams = synthetic.generate_synthetic(synthetic_config(cfg))
    stocks = getattr(args, 'stocks', None)
    if stocks:
        streams = data.select(streams, stocks)
    if not streams:
        raise DomainException('No events to work with')
    return streams


def synthetic_config(cfg):
    return synthetic.SyntheticLobConfig.from_dict(cfg['data']['synthetic'], seed=cfg['seed'])


def split_options(cfg):
    d = cfg['data']
    return data.SplitOptions(d['window'], d['horizon'], d['theta'], d['train_days'])


def model_split(streams, cfg, stats=None):
    '''
    Training and test days of `streams`, normalized with `stats` (fitted on
    the training days when None).
    '''
    options = split_options(cfg)
    train_days, test_days = data.train_test_days(streams, options)
    return data.build_split(data.select(streams, None, train_days), data.select(streams, None, test_days),
                            options, stats)


def model_stats(model):
    stats = model.provenance.get('normalization')
    return None if stats is None else data.ZScoreStats.from_dict(stats)


def load_model(args):
    model = codec.load(args.model)
    if getattr(args, 'aux', None):
        model = codec.load_aux(model, args.aux)
    return model


def print_distribution(args, rows, title):
    text = reports.render_distribution(rows, title)
    reports.write_text(out_path(args, 'class_distribution.txt'), text)
    print(text, end='')


def write_evaluation(args, model, samples):
    _, cm = training.evaluate(model, samples)
    m = metrics.metrics(cm)
    win = metrics.win_rate(cm)
    reports.write_csv(out_path(args, 'metrics.csv'), ['accuracy', 'precision', 'recall', 'f1', 'win_rate'],
                      [[m.accuracy, m.precision, m.recall, m.f1, win]])
    reports.write_csv(out_path(args, 'confusion_matrix.csv'),
                      ['true_class', 'pred_stationary', 'pred_up', 'pred_down'], cm.rows())
    print('accuracy {:.4f} precision {:.4f} recall {:.4f} f1 {:.4f} win rate {}'.format(
        m.accuracy, m.precision, m.recall, m.f1, '-' if win is None else '{:.2f}%'.format(win)))
    return m


def write_curve(args, report):
    reports.write_csv(out_path(args, 'training_curve.csv'), training.TrainingReport.HEADER, report.rows())


def training_config(cfg):
    return training.TrainingConfig.from_dict(cfg['training'], cfg['seed'])


def cmd_gen_synthetic(args, cfg):
    synthetic_cfg = synthetic_config(cfg)
    streams = synthetic.generate_synthetic(synthetic_cfg)
    for stock in data.stocks(streams):
        data.write_native(out_path(args, 'stock_{}.csv'.format(stock)), data.select(streams, [stock]))
    print_distribution(args, data.class_distribution(streams, split_options(cfg)),
                       'Synthetic data, {} stocks x {} days'.format(synthetic_cfg.n_stocks, synthetic_cfg.days))


def cmd_ingest_fi2010(args, cfg):
    layout = config.read_config_file(args.layout) if args.layout else cfg['data']['fi2010_layout']
    if layout is None:
        raise ConfigException('Give --layout or set data.fi2010_layout in the config')
    streams = data.load_fi2010(args.input, layout)
    for stock in data.stocks(streams):
        data.write_native(out_path(args, 'stock_{}.csv'.format(stock)), data.select(streams, [stock]))
    print_distribution(args, data.class_distribution(streams, split_options(cfg)),
                       'Class distribution of {}'.format(os.path.basename(args.input)))


def cmd_train_base(args, cfg):
    streams = load_streams(args, cfg)
    split = model_split(streams, cfg)
    if cfg['architecture'] == models.CNN_ARCH:
        topology = models.Topology.from_cnn(experiments.ExperimentSettings.from_config(cfg).cnn)
    else:
        topology = models.resolve_topology('joint_all' if cfg['topology'] == experiments.AUTO
                                           else cfg['topology'])
    model = models.build(topology, cfg['seed'])
    model.provenance['normalization'] = split.stats.to_dict()
    write_curve(args, training.train(model, split, training_config(cfg)))
    codec.save(model, out_path(args, 'model' + codec.MODEL_SUFFIX))
    write_evaluation(args, model, split.test)


def cmd_finetune(args, cfg):
    base = load_model(args)
    split = model_split(load_streams(args, cfg), cfg, model_stats(base))
    model = base.copy()
    model.provenance.update(kind='finetune', base_hash=base.base_hash())
    write_curve(args, training.train(model, split, training_config(cfg)))
    codec.save(model, out_path(args, 'model' + codec.MODEL_SUFFIX))
    write_evaluation(args, model, split.test)


def select_adapt_rank(args, cfg, base, split):
    '''
    Sweeps rank_min..rank_max and returns the rank with the best F1 on the
    split chosen by rank_select. The sweep is written to rank_sweep.csv.
    '''
    settings = experiments.ExperimentSettings.from_config(cfg)
    rows, _ = experiments.sweep_ranks(base, split, settings.ranks(), cfg['strategy'], settings,
                                      cfg['seed'])
    rank = experiments.select_rank(rows, settings.rank_select)
    reports.write_csv(out_path(args, 'rank_sweep.csv'), ['rank', 'train_f1', 'val_f1', 'test_f1'],
                      [[row.rank] + [reports.number_text(v) for v in row[1:]] for row in rows])
    logger.info('Selected rank %d of %s by %s F1.', rank, settings.ranks(), settings.rank_select)
    print('selected rank {}'.format(rank))
    return rank


def cmd_adapt(args, cfg):
    base = load_model(args)
    split = model_split(load_streams(args, cfg), cfg, model_stats(base))
    rank = cfg['rank']
    if rank is None:
        rank = select_adapt_rank(args, cfg, base, split)
    logger.info('Adapting at rank %d with %s.', rank, cfg['strategy'])
    model = models.augment(base, rank, cfg['strategy'], seed=cfg['seed'],
                           train_lambda=cfg['unfreeze_lambda'])
    write_curve(args, training.train(model, split, training_config(cfg)))
    codec.save(model, out_path(args, 'model' + codec.MODEL_SUFFIX))
    codec.save_aux(model, out_path(args, 'aux' + codec.AUX_SUFFIX))
    write_evaluation(args, model, split.test)


def cmd_fold(args, cfg):
    model = load_model(args)
    folded = models.fold_model(model)
    codec.save(folded, out_path(args, 'model' + codec.MODEL_SUFFIX))
    before, after = models.count_params(model), models.count_params(folded)
    print('parameters: adapted {} (base {} + aux {}), folded {}'.format(
        before.total, before.base, before.aux, after.total))


def cmd_eval(args, cfg):
    model = load_model(args)
    split = model_split(load_streams(args, cfg), cfg, model_stats(model))
    write_evaluation(args, model, split.test)


def cmd_backtest(args, cfg):
    model = load_model(args)
    split = model_split(load_streams(args, cfg), cfg, model_stats(model))
    trades, curves = [], []
    for stock in np.unique(split.test.stock):
        log, curve = experiments.backtest(model, split.test.for_stock(stock), cfg['compound_returns'])
        trades += [[int(stock)] + row for row in log.rows()]
        curves += [[int(stock), i, reports.number_text(v)] for i, v in enumerate(curve)]
        print('stock {}: {} trades, cumulative return {:.4f}%'.format(
            stock, len(log), 100 * (float(curve[-1]) if len(curve) else 0.0)))
    reports.write_csv(out_path(args, 'trades.csv'), ['stock'] + list(trading.TradeLog.HEADER), trades)
    reports.write_csv(out_path(args, 'cumulative_returns.csv'), ['stock', 'index', 'cumulative_return'],
                      curves)


def cmd_rank_sweep(args, cfg):
    base = load_model(args)
    split = model_split(load_streams(args, cfg), cfg, model_stats(base))
    settings = experiments.ExperimentSettings.from_config(cfg)
    if args.strategy:
        strategies = (args.strategy,)
    else:
        strategies = settings.strategies
    report, chosen = experiments.rank_sweep(base, split, settings, handlers.make_handler(cfg['jobs']),
                                            strategies)
    header, rows = report.csv_tables()['rank_sweep.csv']
    reports.write_csv(out_path(args, 'rank_sweep.csv'), header, rows)
    for strategy, rank in chosen.items():
        print('{}: selected rank {}'.format(strategy, rank))


def cmd_gradcheck(args, cfg):
    model = models.build(models.resolve_topology(args.topology), cfg['seed'])
    if args.rank:
        model = models.augment(model, args.rank, cfg['strategy'], seed=cfg['seed'],
                               train_lambda=cfg['unfreeze_lambda'])
        # Non-zero factors so that every factor receives a gradient.
        rng = np.random.default_rng(cfg['seed'])
        for a in model.aux_arrays().values():
            a[...] = rng.uniform(-0.1, 0.1, size=a.shape)
    rng = np.random.default_rng(cfg['seed'])
    X = rng.standard_normal((args.samples,) + model.topology.input_shape)
    y = rng.integers(0, 3, size=args.samples)
    report = training.gradient_check(model, X, y, tolerance=args.tolerance, seed=cfg['seed'])
    reports.write_csv(out_path(args, 'gradcheck.csv'), training.GradientCheckReport.HEADER,
                      report.csv_rows())
    print('max relative error {:.3e}'.format(report.max_rel_error))
    if not report.passed:
        raise DomainException('Gradient check failed: max relative error {:.3e} >= {:.1e}'.format(
            report.max_rel_error, args.tolerance))


def audit_layer(args, cfg):
    '''
    Closed-form and instrumented counts of one layer's forward pass.
    '''
    if len(args.dims) != 5:
        raise ConfigException("--dims takes N,D,D',T,T'")
    N, D, d_out, T, t_out = args.dims
    rng = np.random.default_rng(cfg['seed'])
    attention = args.layer == 'tabl'
    cls = layers.TablLayerParams if attention else layers.BlLayerParams
    layer = cls.initialize((D, T), (d_out, t_out), rng)
    if cfg['rank'] is not None:
        aux = adapters.AuxFactors.initialize(layer, cfg['rank'], rng)
        layer = adapters.AugmentedTablLayer(layer, aux, cfg['strategy'])
    model_layer_macs = models.layer_macs(layer, N)
    counter = linalg.OpCounter()
    layer.forward(rng.standard_normal((N, D, T)), layers.INFER, counter)
    return model_layer_macs, counter


def cmd_audit_flops(args, cfg):
    if args.dims:
        closed, counter = audit_layer(args, cfg)
    else:
        model = codec.load(args.model)
        closed = models.count_macs(model, args.batch).by_tag()
        counter = linalg.OpCounter()
        rng = np.random.default_rng(cfg['seed'])
        model.forward(rng.standard_normal((args.batch,) + model.topology.input_shape), layers.INFER, counter)
    rows = []
    for tag, count in closed.items():
        rows.append([tag, count, counter.by_tag.get(tag, 0)])
        print('{:<22} {:>14}'.format(tag, count))
    total = sum(closed.values())
    rows.append(['total', total, counter.mac_count])
    print('{:<22} {:>14}'.format('total', total))
    reports.write_csv(out_path(args, 'flops.csv'), ['tag', 'closed_form', 'instrumented'], rows)
    if total != counter.mac_count:
        raise DomainException('Instrumented count {} differs from the closed form {}'.format(
            counter.mac_count, total))


def write_report(args, report):
    for filename, (header, rows) in report.csv_tables().items():
        reports.write_csv(out_path(args, filename), header, rows)
    text = reports.render_report(report)
    reports.write_text(out_path(args, 'report.txt'), text)
    print(text, end='')


def run_experiment(args, cfg, run):
    streams = load_streams(args, cfg)
    settings = experiments.ExperimentSettings.from_config(cfg)
    print_distribution(args, data.class_distribution(streams, settings.split_options), 'Class distribution')
    report = run(streams, settings, handlers.make_handler(cfg['jobs']))
    write_report(args, report)


def cmd_run_setup1(args, cfg):
    run_experiment(args, cfg, lambda streams, settings, handler: experiments.run_setup1(
        streams, settings, handler, args.targets))


def cmd_run_setup2(args, cfg):
    run_experiment(args, cfg, experiments.run_setup2)


def cmd_run_online(args, cfg):
    run_experiment(args, cfg, experiments.run_online)


def cmd_ablate(args, cfg):
    run_experiment(args, cfg, lambda streams, settings, handler: experiments.run_ablation(
        streams, settings, handler, args.target))


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    config.setup_logging(getattr(logging, args.log_level))
    try:
        cfg = config.load_config(args.config, overrides(args))
        os.makedirs(args.out, exist_ok=True)
        config.write_effective_config(cfg, args.out)
        args.function(args, cfg)
    except AuxTablException as e:
        print('error[{}]: {}'.format(e.category, e), file=sys.stderr)
        return EXIT_CODES.get(e.category, 1)
    return 0


if __name__ == '__main__':
    sys.exit(main())
