"""Event-camera egocentric gesture recognition at desk scale.

Modules: ``events`` (I/O, slicing), ``lnes`` (surfaces), ``tensor`` (layer
kernels), ``btsm`` (bins-temporal shift), ``ssm`` (selective state-space
block), ``model`` (assembly, training, evaluation), ``synth`` (synthetic
streams), ``stats`` (event-rate analytics), ``cli``.
"""

__version__ = "0.1.0"
