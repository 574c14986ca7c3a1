"""
cdpreid trains and evaluates RGB-infrared cross-modality person
re-identification models with cross-spectrum dual-subspace pairing and
dynamic hard spectrum mining, on numpy alone.

Every configuration object is a ``configclass`` that can be filled from json
or toml files, environment variables and command line flags.

:license: MIT or Apache 2.0, see LICENSE-MIT and LICENSE-APACHE for more details.
"""

__version__ = "0.1.0"


from . import conversions, enums, sources
from .configclass import as_dict, configclass, field
