"""Face-related action recognition from face-object interactions.

Submodules
----------
imaging      pixel primitives: gradients, dense descriptors, block histograms, crops, masks
star_vote    exemplar star model: weighted patch sampling and nearest-neighbor offset voting
landmarks    seven-point facial landmarks from a face corpus (coarse KDE + refined voting)
regions      candidate object regions and their object features
interaction  features relating a region to the face
learning     region labels, linear SVMs, standardization, object-center priors
pipeline     training and classification of whole images
evaluation   average precision, landmark-error curves, score files
dataset      annotation manifests
synth        synthetic annotated images
overlay      PNG rendering of explanations and heat maps
"""

from .errors import (EmptySampleError, FaceActionError, InvalidInputError, PluginError, SchemaError,
                     TrainingError)
from .evaluation import average_precision
from .learning import TrainingConfig
from .pipeline import PipelineBundle, classify, classify_batch, explain, train_pipeline

__version__ = "0.1.0"

__all__ = [
    "EmptySampleError", "FaceActionError", "InvalidInputError", "PluginError", "SchemaError", "TrainingError",
    "average_precision", "TrainingConfig", "PipelineBundle", "classify", "classify_batch", "explain",
    "train_pipeline", "__version__",
]
