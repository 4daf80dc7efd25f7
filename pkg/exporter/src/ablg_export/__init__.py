"""PyTorch-to-ABLG checkpoint exporter with probe-logit cross-validation."""

__version__ = "0.1.0"

from .arch import ArchDescriptor, ExportError, LayerDesc, load_descriptor
from .export import PROBE_BATCH, PROBE_SEED, ExportResult, export, probe_batch
from .writer import write_weights
