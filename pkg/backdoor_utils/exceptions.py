# -*- coding: utf-8 -*-
""" Package level exceptions."""


class UndefinedMetric(Exception):
    """ Raised when a metric has an empty denominator or single-class
    labels. """


class ManifestError(Exception):
    """ Raised when a stored dataset or poison manifest is malformed. """


class CheckpointError(Exception):
    """ Raised when a checkpoint file is corrupt, truncated or of another
    format version. """


class ArchMismatch(CheckpointError):
    """ Raised when a checkpoint holds another architecture than expected. """


class PlacementOutOfBounds(ValueError):
    """ Raised when a trigger rectangle does not fit inside the image. """


class ContaminatedTestSet(Exception):
    """ Raised when infected samples are found where clean ones are
    required. """


class PairingMismatch(Exception):
    """ Raised when clean and infected sets are not paired by id. """


class MissingForwardPass(Exception):
    """ Raised at backward passes without cached forward activations. """


class TrainingDiverged(Exception):
    """ Raised when the training loss turns non-finite. """


class ExperimentFailed(Exception):
    """ Raised by the harness when a run fails, with run context. """
