# -*- coding: utf-8 -*-
""" Experiment options as enums. """
import enum


class Placement(enum.Enum):
    """ Where the trigger goes on an infected image. """
    Center = 'center'
    Fixed = 'fixed'
    Random = 'random'


class Layer(enum.Enum):
    """ Convolution taps available for Grad-CAM. """
    Final = 'final'
    Middle = 'middle'


class SweepAxis(enum.Enum):
    """ Experiment variable swept by the harness. """
    TriggerSize = 'trigger_size'
    Location = 'location'
    TargetClass = 'target_class'
    PoisonFraction = 'poison_fraction'
    InferenceMix = 'inference_mix'
