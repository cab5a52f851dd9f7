'''
Units of experiment work.

A `Job` wraps a module-level function and its keyword arguments together
with a `Future` for its result. Handlers (see `auxtabl.handlers`) take the
jobs apart into the leaf jobs they contain, execute them, and hand the
outcomes back in submission order so that every future resolves
deterministically.
'''

import hashlib
import logging
import struct
import time

import numpy as np

from auxtabl.errors import StateException

logger = logging.getLogger(__name__)

SEED_BITS = 63


def _key(k):
    if isinstance(k, np.integer):
        return int(k)
    return k


def derive_seed(master_seed, *keys):
    '''
    A seed for the piece of work named by `keys`, independent of how many
    workers run it or in which order.
    '''
    h = hashlib.sha256()
    h.update(repr((int(master_seed),) + tuple(_key(k) for k in keys)).encode('utf-8'))
    (value,) = struct.unpack('<Q', h.digest()[:8])
    return value & ((1 << SEED_BITS) - 1)


class Future:

    UNRESOLVED = 'unresolved'
    OKAY = 'okay'
    ERROR = 'error'

    def __init__(self):
        self.result_value = None
        self.exception_value = None
        self.state = self.UNRESOLVED

    def set_result(self, result):
        if self.state != self.UNRESOLVED:
            raise StateException('Future is already resolved')
        self.result_value = result
        self.state = self.OKAY

    def set_exception(self, exception):
        if self.state != self.UNRESOLVED:
            raise StateException('Future is already resolved')
        self.exception_value = exception
        self.state = self.ERROR

    def done(self):
        return self.state != self.UNRESOLVED

    def result(self):
        if self.state == self.ERROR:
            raise self.exception_value
        elif self.state == self.UNRESOLVED:
            raise StateException('Future is unresolved')
        else:
            return self.result_value


def execute(function, kwargs):
    '''
    Runs one leaf job. Returns (exception, result) so that failures travel
    back from worker processes like results do.
    '''
    start = time.perf_counter()
    try:
        result = function(**kwargs)
    except Exception as e:
        logger.debug('%s failed after %.1f s: %s', function.__name__, time.perf_counter() - start, e)
        return e, None
    logger.debug('%s finished in %.1f s.', function.__name__, time.perf_counter() - start)
    return None, result


class Job:

    def __init__(self, description, function, **kwargs):
        '''
        `description`: Shown in the log when the job runs.
        `function`: A module-level function, so that worker processes can
            import it.
        `kwargs`: The keyword arguments it is called with.
        '''
        if not description:
            raise StateException('A job needs a description')
        self.description = description
        self.function = function
        self.kwargs = kwargs
        self.future = Future()

    def get_jobs(self):
        return [self]

    def resolve_future(self, e, result):
        if e is not None:
            self.future.set_exception(e)
        else:
            self.future.set_result(result)

    def process_outcomes(self, outcomes, resolve_future=True):
        '''
        `outcomes`: A deque of (exception, result) pairs beginning with the
            outcome of this job, which is removed.
        '''
        if not outcomes:
            raise StateException('Ran out of outcomes while processing "{}"'.format(self.description))
        e, result = outcomes.popleft()
        if resolve_future:
            self.resolve_future(e, result)
        return e, result


class CombinedJob(Job):
    '''
    A group of jobs resolving to the list of their results. The first
    failure among them becomes the failure of the group.
    '''

    def __init__(self, jobs, description):
        self.jobs = list(jobs)
        super().__init__(description, None)

    def get_jobs(self):
        leaves = []
        for job in self.jobs:
            leaves += job.get_jobs()
        return leaves

    def process_outcomes(self, outcomes, resolve_future=True):
        first_e = None
        results = []
        for job in self.jobs:
            e, result = job.process_outcomes(outcomes)
            if (e is not None) and (first_e is None):
                first_e = e
            results.append(result)
        if resolve_future:
            self.resolve_future(first_e, results)
        return first_e, results
