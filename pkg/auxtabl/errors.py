'''
Exceptions raised by auxtabl.

Each exception carries a `category` so the command line can report it with a
distinct exit code.
'''


class AuxTablException(Exception):

    category = 'error'


class ShapeException(AuxTablException):

    category = 'shape'


class ConfigException(AuxTablException):

    category = 'config'


class ParseException(AuxTablException):

    category = 'parse'

    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = 'line {}: {}'.format(line_number, message)
        super().__init__(message)
        self.line_number = line_number


class StateException(AuxTablException):

    category = 'state'


class IntegrityException(AuxTablException):

    category = 'integrity'


class DomainException(AuxTablException):

    category = 'domain'


class NumericException(DomainException):
    pass


# Exit codes used by the command line.
EXIT_CODES = {
    'shape': 3,
    'config': 4,
    'parse': 5,
    'state': 6,
    'integrity': 7,
    'domain': 8,
}
