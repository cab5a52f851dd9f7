'''
Adaptation to a stock whose order flow acts the other way round.

Two synthetic stocks share their book layout, but the order imbalance of
the second one pushes the price in the opposite direction. A base network
trained on the first stock is adapted to the second with auxiliary factors
of a few ranks. Every rank is one job, so the test can run through any
handler.
'''

import logging

import numpy as np

from auxtabl import adapters, data, experiments, jobs, models, synthetic, training

logger = logging.getLogger(__name__)


def shifted_streams(days=4, events_per_day=80, seed=0):
    regimes = [
        synthetic.StockRegime(price=20.0, volatility=0.0012, coupling=0.6),
        synthetic.StockRegime(price=20.0, volatility=0.0012, coupling=-0.6),
    ]
    cfg = synthetic.SyntheticLobConfig(n_stocks=2, days=days, events_per_day=events_per_day,
                                       seed=seed, regimes=regimes)
    return synthetic.generate_synthetic(cfg)


def adapt_to_shifted(split, settings, rank, seed):
    '''
    Trains a base on the old stock and adapts it to the new one with both
    strategies. Returns what the check needs.
    '''
    base = experiments.train_base(models.lookup('joint_all'), split.old, settings, seed)
    base_hash = base.base_hash()
    outcome = {'base_hash': base_hash, 'rank': rank, 'strategies': {}}
    for strategy in adapters.STRATEGIES:
        adapted = experiments.adapt(base, split.new, rank, strategy, settings, seed)
        folded = models.fold_model(adapted)
        X = split.new.test.X
        outcome['strategies'][strategy] = {
            'adapted_base_hash': adapted.base_hash(),
            'adapted_probs': training.predict_in_batches(adapted, X),
            'folded_probs': training.predict_in_batches(folded, X),
            'folded_params': models.count_params(folded).total,
            'test_f1': experiments.f1_on(adapted, split.new.test),
        }
    outcome['base_after'] = base.base_hash()
    outcome['base_params'] = models.count_params(base).total
    return outcome


class ShiftedStocksTest:
    '''
    All jobs are sent in `prepare` and their results inspected in `check`,
    after the handler has been flushed.
    '''

    def __init__(self, ranks=(1, 2), epochs=2, seed=0):
        self.ranks = ranks
        self.seed = seed
        self.settings = experiments.ExperimentSettings(
            runs=1, seed=seed,
            training_config=training.TrainingConfig(batch_size=32, epochs=epochs, seed=seed),
            split_options=data.SplitOptions(train_days=3))
        self.futures = []

    def prepare(self, handler):
        split = data.split_setup1(shifted_streams(seed=self.seed), target=2,
                                  options=self.settings.split_options)
        for rank in self.ranks:
            job = jobs.Job('shifted stocks rank {}'.format(rank), adapt_to_shifted, split=split,
                           settings=self.settings, rank=rank,
                           seed=jobs.derive_seed(self.seed, 'shifted', rank))
            handler.send(job)
            self.futures.append(job.future)

    def check(self):
        '''
        The base stays untouched, both strategies adapt the same frozen
        weights, and folding changes neither the predictions nor the size.
        '''
        for future in self.futures:
            outcome = future.result()
            assert outcome['base_after'] == outcome['base_hash']
            for strategy, result in outcome['strategies'].items():
                assert result['adapted_base_hash'] == outcome['base_hash']
                assert np.allclose(result['adapted_probs'], result['folded_probs'], atol=1e-9)
                assert result['folded_params'] == outcome['base_params']
                assert 0.0 <= result['test_f1'] <= 1.0
                logger.info('rank %d %s: test F1 %.3f', outcome['rank'], strategy, result['test_f1'])
