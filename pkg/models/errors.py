"""
Error types raised by the augbank modules.

Every error carries an HTTP-style ``status`` and a human readable ``detail`` so
the API problem handler and the CLI can render them the same way.
"""


class AugbankError(Exception):
    status = 500

    def __init__(self, detail, status=None):
        super().__init__(detail)
        self.detail = detail
        if status is not None:
            self.status = status

    def json(self):
        return {'status': 'fail', 'message': self.detail}


class FormatError(AugbankError):
    """A vector, model or synthetic-data file could not be decoded."""
    status = 400


class ConfigError(AugbankError):
    status = 400


class EmbeddingError(AugbankError):
    status = 422


class RetrievalError(AugbankError):
    status = 400


class ShortfallError(AugbankError):
    status = 422

    def __init__(self, deficits):
        self.deficits = dict(deficits)
        classes = ', '.join(f'{c} (missing {n})' for c, n in sorted(self.deficits.items()))
        super().__init__(f'Not enough candidates for classes: {classes}')


class CapacityError(AugbankError):
    status = 400


class TrainingError(AugbankError):
    status = 422


class LeakageError(AugbankError):
    status = 500


class BankBuildError(AugbankError):
    status = 500
