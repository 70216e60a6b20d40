"""imupose: posture recognition from wearable IMU streams.

Synthetic stream generation, the motion-image pipeline, a conv-LSTM
classifier with incremental adaptation, channel-group importance, and
MHT/OWAS ergonomics risk assessment.
"""

__version__ = "0.1.0"

from . import ergo, incremental, metrics, nn, pipeline, postures, synth, training

__all__ = ["ergo", "incremental", "metrics", "nn", "pipeline", "postures",
           "synth", "training", "__version__"]
