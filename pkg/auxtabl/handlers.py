'''
Handlers receive `Job` objects and execute them.
'''

import collections
import concurrent.futures
import logging

from auxtabl import jobs
from auxtabl.errors import ConfigException

logger = logging.getLogger(__name__)


class SerialHandler:
    '''
    Runs each job in this process as soon as it is sent.
    '''

    def send(self, job):
        outcomes = collections.deque()
        for leaf in job.get_jobs():
            logger.info('Running %s.', leaf.description)
            outcomes.append(jobs.execute(leaf.function, leaf.kwargs))
        job.process_outcomes(outcomes)

    def flush(self):
        pass


class PoolHandler:
    '''
    Stores the jobs it receives. When `flush` is called they run on a pool
    of worker processes and their futures resolve in the order the jobs
    were sent.
    '''

    def __init__(self, n_jobs):
        '''
        `n_jobs`: The number of worker processes.
        '''
        if n_jobs < 1:
            raise ConfigException('A pool needs at least one worker, got {}'.format(n_jobs))
        self.n_jobs = n_jobs
        self.unsent_jobs = []

    def send(self, job):
        self.unsent_jobs.append(job)

    def flush(self):
        sent, self.unsent_jobs = self.unsent_jobs, []
        leaves = []
        for job in sent:
            leaves += job.get_jobs()
        if not leaves:
            return
        for leaf in leaves:
            logger.info('Queued %s.', leaf.description)
        with concurrent.futures.ProcessPoolExecutor(max_workers=self.n_jobs) as pool:
            outcomes = collections.deque(pool.map(
                jobs.execute, [leaf.function for leaf in leaves], [leaf.kwargs for leaf in leaves]))
        for job in sent:
            job.process_outcomes(outcomes)


def make_handler(n_jobs=1):
    if n_jobs is None or n_jobs <= 1:
        return SerialHandler()
    return PoolHandler(n_jobs)
