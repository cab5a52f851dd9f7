'''
Experiment orchestration.

Every setup is broken into jobs, one per (target, run) or run, each with its
own seed derived from the master seed. A job returns a `RunResult`; the
results are aggregated serially into an `ExperimentReport` with
mean ± std over runs.

Arms, named as in the result tables:

    <A>-base        trained on the old data, evaluated as is
    <A>-fine-tune   a copy of the base trained further on the new data
    a<A>-IS1/IS2    the base with auxiliary factors trained on the new data
                    (aCNN for the convolutional network)
    <A>             trained from scratch on old and new data together

where <A> is TABL or CNN.
'''

import logging
import time
from collections import OrderedDict, namedtuple

import numpy as np

from auxtabl import adapters, conv, data, jobs, metrics, models, reports, trading, training
from auxtabl.errors import ConfigException

logger = logging.getLogger(__name__)

AUTO = 'auto'
RANK_SELECTIONS = ('train', 'val')
ALL_STOCKS = 'All stocks'


class ExperimentSettings:
    '''
    Everything an experiment job needs besides its data. Built from the
    merged configuration with `from_config`.
    '''

    def __init__(self, architecture=models.TABL_ARCH, topology=AUTO, cnn=conv.DEFAULT_CNN,
                 strategy=adapters.IS2, rank=None, rank_min=1, rank_max=20, rank_select='train',
                 unfreeze_lambda=False, joint=True, runs=5, seed=0, compound_returns=True,
                 training_config=None, split_options=None, old_stocks=(1, 2, 3), new_stocks=(4, 5),
                 base_days=5, adapt_days=2):
        if architecture not in models.ARCHITECTURES:
            raise ConfigException('Unknown architecture "{}". Expected one of {}'.format(
                architecture, models.ARCHITECTURES))
        adapters.check_strategy(strategy)
        if rank_select not in RANK_SELECTIONS:
            raise ConfigException('rank_select must be one of {}, got "{}"'.format(
                RANK_SELECTIONS, rank_select))
        if rank is not None and rank < 1:
            raise ConfigException('Rank must be at least 1, got {}'.format(rank))
        if rank_min < 1 or rank_max < rank_min:
            raise ConfigException('Invalid rank range [{}, {}]'.format(rank_min, rank_max))
        if runs < 1:
            raise ConfigException('Need at least one run, got {}'.format(runs))
        self.architecture = architecture
        self.topology = topology
        self.cnn = cnn
        self.strategy = strategy
        self.rank = rank
        self.rank_min = rank_min
        self.rank_max = rank_max
        self.rank_select = rank_select
        self.unfreeze_lambda = unfreeze_lambda
        self.joint = joint
        self.runs = runs
        self.seed = seed
        self.compound_returns = compound_returns
        self.training_config = training_config or training.TrainingConfig(seed=seed)
        self.split_options = split_options or data.SplitOptions()
        self.old_stocks = tuple(old_stocks)
        self.new_stocks = tuple(new_stocks)
        self.base_days = base_days
        self.adapt_days = adapt_days

    @classmethod
    def from_config(cls, cfg):
        d = cfg['data']
        cnn_cfg = cfg['cnn']
        return cls(
            architecture=cfg['architecture'],
            topology=cfg['topology'],
            cnn=conv.CnnArchSpec(cnn_cfg['layers'], padding=cnn_cfg['padding'],
                                 stride=cnn_cfg['stride']),
            strategy=cfg['strategy'],
            rank=cfg.get('rank'),
            rank_min=cfg['rank_min'],
            rank_max=cfg['rank_max'],
            rank_select=cfg['rank_select'],
            unfreeze_lambda=cfg['unfreeze_lambda'],
            joint=cfg['joint'],
            runs=cfg['runs'],
            seed=cfg['seed'],
            compound_returns=cfg['compound_returns'],
            training_config=training.TrainingConfig.from_dict(cfg['training'], cfg['seed']),
            split_options=data.SplitOptions(d['window'], d['horizon'], d['theta'],
                                            d.get('train_days')),
            old_stocks=cfg['setup2']['old_stocks'],
            new_stocks=cfg['setup2']['new_stocks'],
            base_days=cfg['online']['base_days'],
            adapt_days=cfg['online']['adapt_days'],
        )

    @property
    def prefix(self):
        return 'CNN' if self.architecture == models.CNN_ARCH else 'TABL'

    @property
    def strategies(self):
        '''
        Both strategies for TABL networks; the configured one (IS2 by
        default) for the CNN.
        '''
        if self.architecture == models.CNN_ARCH:
            return (self.strategy,)
        return adapters.STRATEGIES

    def ranks(self):
        if self.rank is not None:
            return [self.rank]
        return list(range(self.rank_min, self.rank_max + 1))

    def base_arm(self):
        return '{}-base'.format(self.prefix)

    def finetune_arm(self):
        return '{}-fine-tune'.format(self.prefix)

    def adapted_arm(self, strategy):
        if self.architecture == models.CNN_ARCH:
            return 'aCNN'
        return 'a{}-{}'.format(self.prefix, strategy.upper())

    def joint_arm(self):
        return self.prefix

    def base_topology(self, target=None):
        '''
        The configured topology, or with 'auto' the registry's best base
        network for the target stock (the all-stocks network without one).
        '''
        if self.architecture == models.CNN_ARCH:
            return models.Topology.from_cnn(self.cnn)
        if self.topology != AUTO:
            return models.resolve_topology(self.topology)
        name = 'base_stock{}'.format(target)
        if target is None or name not in models.registry():
            name = 'joint_all'
        return models.lookup(name)

    def joint_topology(self):
        if self.architecture == models.CNN_ARCH or self.topology != AUTO:
            return self.base_topology()
        return models.lookup('joint_all')


ArmResult = namedtuple('ArmResult', ['metrics', 'win_rate', 'confusion', 'rank'])
SweepRow = namedtuple('SweepRow', ['rank', 'train_f1', 'val_f1', 'test_f1'])


class RunResult:
    '''
    Outcome of one run: per section, per arm results; the rank sweeps behind
    each adapted arm; trading backtests; and model costs.
    '''

    def __init__(self):
        self.sections = OrderedDict()
        self.sweeps = OrderedDict()
        self.backtests = OrderedDict()
        self.params = OrderedDict()
        self.macs = OrderedDict()
        self.storage = []
        self.runtime = 0.0

    def add(self, section, arm, result):
        self.sections.setdefault(section, OrderedDict())[arm] = result


def arm_from_confusion(cm, rank=None):
    return ArmResult(metrics.metrics(cm), metrics.win_rate(cm), cm, rank)


def confusion_of(model, samples):
    _, cm = training.evaluate(model, samples)
    return cm


def evaluate_arm(model, samples, rank=None):
    return arm_from_confusion(confusion_of(model, samples), rank)


def f1_on(model, samples):
    if len(samples) == 0:
        return None
    return metrics.metrics(confusion_of(model, samples)).f1


def train_base(topology, split, settings, seed):
    '''
    A network trained from scratch on `split`, carrying the normalization
    statistics it was trained with.
    '''
    model = models.build(topology, jobs.derive_seed(seed, 'init'))
    model.provenance['normalization'] = split.stats.to_dict()
    training.train(model, split, settings.training_config.replace(seed=jobs.derive_seed(seed, 'train')))
    return model


def finetune(base, split, settings, seed):
    model = base.copy()
    model.provenance.update(kind='finetune', base_hash=base.base_hash())
    training.train(model, split, settings.training_config.replace(seed=jobs.derive_seed(seed, 'train')))
    return model


def adapt(base, split, rank, strategy, settings, seed):
    '''
    Augments `base` with rank-`rank` auxiliary factors and trains them.
    The factors start from the same values for either strategy.
    '''
    model = models.augment(base, rank, strategy, seed=jobs.derive_seed(seed, 'aux', rank),
                           train_lambda=settings.unfreeze_lambda)
    training.train(model, split,
                   settings.training_config.replace(seed=jobs.derive_seed(seed, 'train', rank)))
    return model


def sweep_ranks(base, split, ranks, strategy, settings, seed):
    '''
    Adapts once per rank. Returns (SweepRows, adapted models by rank).
    '''
    rows = []
    adapted = OrderedDict()
    for rank in sorted(ranks):
        model = adapt(base, split, rank, strategy, settings, seed)
        rows.append(SweepRow(rank, f1_on(model, split.train), f1_on(model, split.val),
                             f1_on(model, split.test)))
        adapted[rank] = model
        logger.debug('rank %d (%s): train F1 %s test F1 %s', rank, strategy, rows[-1].train_f1,
                     rows[-1].test_f1)
    return rows, adapted


def select_rank(rows, by='train'):
    '''
    The rank with the best training (or validation) F1; ties go to the
    smallest rank.
    '''
    if not rows:
        raise ConfigException('No ranks to choose from')
    field = '{}_f1'.format(by)
    best = None
    for row in sorted(rows, key=lambda r: r.rank):
        value = getattr(row, field)
        if value is None:
            continue
        if best is None or value > getattr(best, field):
            best = row
    if best is None:
        return min(r.rank for r in rows)
    return best.rank


def adapt_best(base, split, settings, strategy, seed):
    rows, adapted = sweep_ranks(base, split, settings.ranks(), strategy, settings, seed)
    rank = select_rank(rows, settings.rank_select)
    return adapted[rank], rank, rows


def backtest(model, samples, compound=True):
    '''
    Trades one stock's test samples in temporal order.
    '''
    order = np.lexsort((samples.index, samples.day))
    ordered = samples.subset(order)
    predictions = training.predict_in_batches(model, ordered.X).argmax(axis=1)
    return trading.simulate_trading(predictions, ordered.ask, ordered.bid, compound)


def record_costs(result, named_models):
    for name, model in named_models.items():
        ledger = models.count_params(model)
        result.params['{} base'.format(name)] = ledger.base
        if ledger.aux:
            result.params['{} aux'.format(name)] = ledger.aux
        result.macs[name] = models.count_macs(model, 1).total
        if model.is_augmented:
            result.macs['{} folded'.format(name)] = models.count_macs(models.fold_model(model), 1).total


def _adapt_arms(result, section, base, split, settings, seed, test=None):
    '''
    Adds one adapted arm per strategy. Returns the adapted models by arm.
    '''
    test = split.test if test is None else test
    adapted = OrderedDict()
    for strategy in settings.strategies:
        model, rank, rows = adapt_best(base, split, settings, strategy, jobs.derive_seed(seed, 'adapt'))
        arm = settings.adapted_arm(strategy)
        result.add(section, arm, evaluate_arm(model, test, rank))
        result.sweeps[(section, arm)] = rows
        adapted[arm] = model
    return adapted


def _best_arm(result, section, arms):
    return max(arms, key=lambda arm: result.sections[section][arm].metrics.f1)


def setup1_run(split, settings, seed):
    '''
    One run for one target stock: base on the other stocks, evaluated on the
    target as is, fine-tuned, and adapted; optionally a network trained on
    all stocks.
    '''
    start = time.perf_counter()
    result = RunResult()
    section = 'Stock {}'.format(split.target)
    base = train_base(settings.base_topology(split.target), split.old, settings,
                      jobs.derive_seed(seed, 'base'))
    test = split.new.test
    result.add(section, settings.base_arm(), evaluate_arm(base, test))
    tuned = finetune(base, split.new, settings, jobs.derive_seed(seed, 'finetune'))
    result.add(section, settings.finetune_arm(), evaluate_arm(tuned, test))
    adapted = _adapt_arms(result, section, base, split.new, settings, seed)
    if settings.joint:
        joint = train_base(settings.joint_topology(), split.joint, settings,
                           jobs.derive_seed(seed, 'joint'))
        result.add(section, settings.joint_arm(), evaluate_arm(joint, split.joint.test.for_stock(split.target)))
    best = _best_arm(result, section, list(adapted))
    for arm, model in ((settings.base_arm(), base), (best, adapted[best])):
        result.backtests[(section, arm)] = backtest(model, test, settings.compound_returns)
    record_costs(result, OrderedDict([(settings.base_arm(), base)] + list(adapted.items())))
    result.runtime = time.perf_counter() - start
    return result


def storage_rows(base, adapted, tuned):
    rows = []
    for counted in (True, False):
        convention = 'diagonal counted' if counted else 'diagonal not counted'
        for plan, count in models.storage_plan(base, adapted, tuned, counted).items():
            rows.append((plan, convention, count))
    return rows


def setup2_run(split, settings, seed):
    '''
    One run: a single base on the old stocks; per new stock a fine-tuned
    copy and adapted factors. Metrics over all stocks pool the old stocks'
    predictions from the base with each arm's predictions on the new stocks.
    '''
    start = time.perf_counter()
    result = RunResult()
    base = train_base(settings.base_topology(), split.old, settings, jobs.derive_seed(seed, 'base'))
    old_cm = confusion_of(base, split.old.test)
    totals = OrderedDict([(settings.base_arm(), old_cm), (settings.finetune_arm(), old_cm)])
    ranks = OrderedDict()
    tuned_models = []
    adapted_models = OrderedDict()
    for stock in split.new_stocks:
        section = 'Stock {}'.format(stock)
        new = split.new[stock]
        stock_seed = jobs.derive_seed(seed, 'stock', stock)
        base_cm = confusion_of(base, new.test)
        result.add(section, settings.base_arm(), arm_from_confusion(base_cm))
        totals[settings.base_arm()] = totals[settings.base_arm()] + base_cm
        tuned = finetune(base, new, settings, jobs.derive_seed(stock_seed, 'finetune'))
        tuned_models.append(tuned)
        tuned_cm = confusion_of(tuned, new.test)
        result.add(section, settings.finetune_arm(), arm_from_confusion(tuned_cm))
        totals[settings.finetune_arm()] = totals[settings.finetune_arm()] + tuned_cm
        adapted = _adapt_arms(result, section, base, new, settings, stock_seed)
        for arm, model in adapted.items():
            adapted_models.setdefault(arm, []).append(model)
            cm = result.sections[section][arm].confusion
            totals[arm] = totals.get(arm, old_cm) + cm
            ranks.setdefault(arm, []).append(result.sections[section][arm].rank)
        best = _best_arm(result, section, list(adapted))
        for arm, model in ((settings.base_arm(), base), (best, adapted[best])):
            result.backtests[(section, arm)] = backtest(model, new.test, settings.compound_returns)
    for arm, cm in totals.items():
        rank = max(ranks[arm]) if arm in ranks else None
        result.add(ALL_STOCKS, arm, arm_from_confusion(cm, rank))
    # Reorder so that the pooled section comes first.
    result.sections.move_to_end(ALL_STOCKS, last=False)
    first_arm = next(iter(adapted_models))
    result.storage = storage_rows(base, adapted_models[first_arm], tuned_models)
    record_costs(result, OrderedDict([(settings.base_arm(), base)] +
                                     [(arm, ms[0]) for arm, ms in adapted_models.items()]))
    result.runtime = time.perf_counter() - start
    return result


def online_run(split, settings, seed):
    '''
    One run: base on the first days of all stocks; fine-tuned and adapted on
    the following days; every arm tested on the final days.
    '''
    start = time.perf_counter()
    result = RunResult()
    base = train_base(settings.base_topology(), split.base, settings, jobs.derive_seed(seed, 'base'))
    test = split.adapt.test
    result.add(ALL_STOCKS, settings.base_arm(), evaluate_arm(base, test))
    tuned = finetune(base, split.adapt, settings, jobs.derive_seed(seed, 'finetune'))
    result.add(ALL_STOCKS, settings.finetune_arm(), evaluate_arm(tuned, test))
    adapted = _adapt_arms(result, ALL_STOCKS, base, split.adapt, settings, seed)
    record_costs(result, OrderedDict([(settings.base_arm(), base)] + list(adapted.items())))
    result.runtime = time.perf_counter() - start
    return result


AblationRow = namedtuple('AblationRow', ['name', 'topology', 'val_f1', 'test_f1'])


def ablation_run(split, name, topology, settings, seed):
    '''
    Trains one candidate base network on the old stocks of a Setup 1 split.
    '''
    model = train_base(topology, split.old, settings, seed)
    return AblationRow(name, topology.dims(), f1_on(model, split.old.val), f1_on(model, split.old.test))


def rank_sweep_run(base, split, settings, strategy, seed):
    rows, _ = sweep_ranks(base, split, settings.ranks(), strategy, settings, seed)
    return rows


class ArmSummary:

    def __init__(self, name):
        self.name = name
        self.results = []

    def values(self, field):
        if field == 'win_rate':
            return [r.win_rate for r in self.results]
        return [getattr(r.metrics, field) for r in self.results]

    def stat(self, field):
        return reports.mean_std(self.values(field))

    @property
    def confusion(self):
        cms = [r.confusion for r in self.results]
        total = cms[0]
        for cm in cms[1:]:
            total = total + cm
        return total

    def rank_text(self):
        ranks = [r.rank for r in self.results if r.rank is not None]
        if not ranks:
            return '-'
        return str(max(ranks))


class Section:

    def __init__(self, name):
        self.name = name
        self.arms = OrderedDict()

    def arm(self, name):
        if name not in self.arms:
            self.arms[name] = ArmSummary(name)
        return self.arms[name]


SUMMARY_FIELDS = ('accuracy', 'precision', 'recall', 'f1', 'win_rate')


class ExperimentReport:
    '''
    Per section and arm: metrics as mean ± std over runs (std absent for a
    single run), the summed confusion matrix and the largest chosen rank.
    The per-run values behind every mean are kept in `runs`.
    '''

    def __init__(self, title, architecture, n_runs, description=''):
        self.title = title
        self.description = description
        self.architecture = architecture
        self.runs = n_runs
        self.runtime = 0.0
        self._sections = OrderedDict()
        self.run_rows = []
        self.sweep_rows = []
        self.backtests = []
        self.params = OrderedDict()
        self.macs = OrderedDict()
        self.storage = []
        self.ablation = []

    @property
    def sections(self):
        return list(self._sections.values())

    def section(self, name):
        if name not in self._sections:
            self._sections[name] = Section(name)
        return self._sections[name]

    def add_run(self, run, result):
        for section_name, arms in result.sections.items():
            section = self.section(section_name)
            for arm_name, arm in arms.items():
                section.arm(arm_name).results.append(arm)
                self.run_rows.append([section_name, arm_name, run] + [
                    value for value in (arm.metrics.accuracy, arm.metrics.precision,
                                        arm.metrics.recall, arm.metrics.f1, arm.win_rate)
                ] + [arm.rank])
        for (section_name, arm_name), rows in result.sweeps.items():
            for row in rows:
                self.sweep_rows.append((section_name, arm_name, run) + tuple(row))
        if run == 0:
            for (section_name, arm_name), (log, curve) in result.backtests.items():
                self.backtests.append((section_name, arm_name, log, curve))
            prefix = ''
            if len(result.sections) == 1 and ALL_STOCKS not in result.sections:
                prefix = '{}: '.format(next(iter(result.sections)))
            for name, count in result.params.items():
                self.params[prefix + name] = count
            for name, count in result.macs.items():
                self.macs[prefix + name] = count
            self.storage += result.storage
        self.runtime += result.runtime

    def summary_rows(self):
        rows = []
        for section in self.sections:
            for arm in section.arms.values():
                row = [section.name, arm.name]
                for field in SUMMARY_FIELDS:
                    row += list(arm.stat(field))
                row.append(arm.rank_text())
                rows.append(row)
        return rows

    def sweep_summary(self):
        '''
        Per section, arm and rank: mean and std over runs of the train,
        validation and test F1.
        '''
        grouped = OrderedDict()
        for section, arm, _, rank, train_f1, val_f1, test_f1 in self.sweep_rows:
            grouped.setdefault((section, arm, rank), []).append((train_f1, val_f1, test_f1))
        rows = []
        for (section, arm, rank), values in grouped.items():
            row = [section, arm, rank]
            for i in range(3):
                row += list(reports.mean_std([v[i] for v in values]))
            rows.append(row)
        return rows

    def csv_tables(self):
        '''
        Artifact file name -> (header, rows).
        '''
        stats_header = []
        for field in SUMMARY_FIELDS:
            stats_header += ['{}_mean'.format(field), '{}_std'.format(field)]
        tables = OrderedDict()
        tables['report.csv'] = (['section', 'arm'] + stats_header + ['max_rank'], self.summary_rows())
        tables['runs.csv'] = (['section', 'arm', 'run', 'accuracy', 'precision', 'recall', 'f1',
                               'win_rate', 'rank'], self.run_rows)
        cm_rows = []
        for section in self.sections:
            for arm in section.arms.values():
                cm_rows += [[section.name, arm.name] + row for row in arm.confusion.rows()]
        tables['confusion_matrix.csv'] = (['section', 'arm', 'true_class', 'pred_stationary',
                                           'pred_up', 'pred_down'], cm_rows)
        if self.sweep_rows:
            tables['rank_sweep.csv'] = (
                ['section', 'arm', 'rank', 'train_f1_mean', 'train_f1_std', 'val_f1_mean',
                 'val_f1_std', 'test_f1_mean', 'test_f1_std'], self.sweep_summary())
        if self.backtests:
            trades, curves = [], []
            for section, arm, log, curve in self.backtests:
                trades += [[section, arm] + row for row in log.rows()]
                curves += [[section, arm, i, reports.number_text(v)] for i, v in enumerate(curve)]
            tables['trades.csv'] = (['section', 'arm'] + trading.TradeLog.HEADER, trades)
            tables['cumulative_returns.csv'] = (['section', 'arm', 'index', 'cumulative_return'], curves)
        if self.storage:
            tables['storage.csv'] = (['plan', 'convention', 'params'], [list(r) for r in self.storage])
        if self.ablation:
            tables['ablation.csv'] = (['name', 'topology', 'val_f1_mean', 'val_f1_std',
                                       'test_f1_mean', 'test_f1_std'], self.ablation)
        return tables

    def trading_summary(self):
        return [(section, arm, len(log), trading.total_return(log), float(curve[-1]) if len(curve) else 0.0)
                for section, arm, log, curve in self.backtests]


def _collect(report, handler, job_list):
    handler.flush()
    for run, job in job_list:
        report.add_run(run, job.future.result())
    return report


def run_setup1(streams, settings, handler, targets=None):
    '''
    Leave-one-stock-out: one report section per target stock.
    '''
    targets = list(targets) if targets else data.stocks(streams)
    report = ExperimentReport('Setup 1: one stock new, the others old', settings.architecture,
                              settings.runs)
    job_list = []
    for target in targets:
        split = data.split_setup1(streams, target, settings.split_options)
        for run in range(settings.runs):
            job = jobs.Job('setup 1 target {} run {}'.format(target, run), setup1_run, split=split,
                           settings=settings, seed=jobs.derive_seed(settings.seed, 'setup1', target, run))
            handler.send(job)
            job_list.append((run, job))
    return _collect(report, handler, job_list)


def run_setup2(streams, settings, handler):
    '''
    One base for the old stocks and per new stock either a fine-tuned model
    or auxiliary factors, with the storage each plan needs.
    '''
    split = data.split_setup2(streams, settings.old_stocks, settings.new_stocks, settings.split_options)
    report = ExperimentReport('Setup 2: stocks {} old, {} new'.format(
        list(settings.old_stocks), list(settings.new_stocks)), settings.architecture, settings.runs)
    job_list = []
    for run in range(settings.runs):
        job = jobs.Job('setup 2 run {}'.format(run), setup2_run, split=split, settings=settings,
                       seed=jobs.derive_seed(settings.seed, 'setup2', run))
        handler.send(job)
        job_list.append((run, job))
    return _collect(report, handler, job_list)


def run_online(streams, settings, handler):
    split = data.split_online(streams, settings.base_days, settings.adapt_days, settings.split_options)
    base_ids, adapt_ids, test_ids = split.day_groups
    report = ExperimentReport('Online: base on days {}, adapted on days {}, tested on days {}'.format(
        base_ids, adapt_ids, test_ids), settings.architecture, settings.runs)
    job_list = []
    for run in range(settings.runs):
        job = jobs.Job('online run {}'.format(run), online_run, split=split, settings=settings,
                       seed=jobs.derive_seed(settings.seed, 'online', run))
        handler.send(job)
        job_list.append((run, job))
    return _collect(report, handler, job_list)


def rank_sweep(base, split, settings, handler, strategies=None):
    '''
    Adapts `base` at every rank of the configured range, once per run.
    Returns (report, chosen rank per strategy).
    '''
    strategies = strategies or settings.strategies
    report = ExperimentReport('Rank sweep over {}'.format(settings.ranks()), settings.architecture,
                              settings.runs)
    pending = []
    for strategy in strategies:
        for run in range(settings.runs):
            job = jobs.Job('rank sweep {} run {}'.format(strategy, run), rank_sweep_run, base=base,
                           split=split, settings=settings, strategy=strategy,
                           seed=jobs.derive_seed(settings.seed, 'sweep', run))
            handler.send(job)
            pending.append((strategy, run, job))
    handler.flush()
    chosen = OrderedDict()
    for strategy, run, job in pending:
        rows = job.future.result()
        arm = settings.adapted_arm(strategy)
        report.sweep_rows += [('sweep', arm, run) + tuple(row) for row in rows]
    for strategy in strategies:
        arm = settings.adapted_arm(strategy)
        means = [SweepRow(row[2], row[3], row[5], row[7])
                 for row in report.sweep_summary() if row[1] == arm]
        chosen[strategy] = select_rank(means, settings.rank_select)
    return report, chosen


def run_ablation(streams, settings, handler, target):
    '''
    Trains every candidate base topology on the old stocks of `target` and
    ranks them by validation F1.
    '''
    split = data.split_setup1(streams, target, settings.split_options)
    report = ExperimentReport('Base topology ablation for target stock {}'.format(target),
                              settings.architecture, settings.runs)
    pending = []
    for name, topology in models.ablation_candidates().items():
        for run in range(settings.runs):
            job = jobs.Job('ablation {} run {}'.format(name, run), ablation_run, split=split, name=name,
                           topology=topology, settings=settings,
                           seed=jobs.derive_seed(settings.seed, 'ablation', target, run))
            handler.send(job)
            pending.append((name, job))
    handler.flush()
    grouped = OrderedDict()
    for name, job in pending:
        grouped.setdefault(name, []).append(job.future.result())
    rows = []
    for name, results in grouped.items():
        val = reports.mean_std([r.val_f1 for r in results])
        test = reports.mean_std([r.test_f1 for r in results])
        rows.append([name, str(results[0].topology), val[0], val[1], test[0], test[1]])
    rows.sort(key=lambda row: -1.0 if row[2] is None else row[2], reverse=True)
    report.ablation = rows
    return report
