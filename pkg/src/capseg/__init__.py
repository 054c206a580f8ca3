"""Caption-guided open-vocabulary segmentation toolkit.

The pipeline clusters visual patch embeddings across several (resolution, k)
settings, fuses the runs into a per-patch label distribution, denoises it,
captions each surviving cluster, distils captions into dictionary nouns, and
feeds those nouns back into a text-promptable segmentor.  Evaluation covers
class-agnostic segment quality and, after LLM-assisted vocabulary mapping,
standard per-class IoU.
"""

from capseg.backend import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
