"""Self-aligned concave curve (SACC) illumination enhancement.

Lookup curves that are monotone and concave by construction, trained
without labels through an asymmetric rotated-jigsaw pretext loop so a
frozen normal-light backbone performs better on enhanced low-light input.

Submodules are imported explicitly (``sacc.curves``, ``sacc.training``,
...). Nothing heavy is imported at package level so the CLI can configure
thread limits before numpy loads.
"""

__version__ = "0.1.0"
