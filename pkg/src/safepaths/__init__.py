"""Privacy-first contact tracing reference system.

Carriers' redacted location trails are published centrally; users download
them and compute exposure locally. Nothing about a user ever flows upstream.
"""

__version__ = "0.1.0"

from .trail import (  # noqa: F401
    GeoCell,
    GeoPoint,
    LocationTrail,
    RetentionPolicy,
    TimeBucket,
    TrailPoint,
    coarsen,
    haversine_distance,
    purge_older_than,
    quantize,
)
