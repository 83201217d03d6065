"""Static figures for storage-control solver artifacts.

Reads the CSV artifacts a solver run leaves behind and renders the
parameter study's figure set: value surfaces, policy region maps, and
value-vs-belief comparisons, each with a sidecar CSV of the plotted
arrays.  The package never imports the solver — the CSV files are the
whole interface.
"""

from .figures import PRESETS, FigureSpec, render, render_preset
from .tables import (
    ArtifactError,
    CurveFamily,
    EmptyArtifactError,
    PlaneSlice,
    SliceError,
    ValuePolicyTable,
    load_value_policy,
)

__version__ = "0.1.0"

__all__ = [
    "FigureSpec",
    "render",
    "render_preset",
    "PRESETS",
    "ValuePolicyTable",
    "PlaneSlice",
    "CurveFamily",
    "load_value_policy",
    "ArtifactError",
    "EmptyArtifactError",
    "SliceError",
    "__version__",
]
